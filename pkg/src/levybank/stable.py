"""Sampling of the strictly alpha-stable subordinator and its validation.

The subordinator L has Laplace transform

    E[exp(-lam * L_t)] = exp(-t * gamma_bar^alpha * lam^alpha / cos(pi*alpha/2)),

for alpha in (0, 1).  Increments are drawn with the Kanter construction for
one-sided stable laws: with U ~ Uniform(0, pi) and E ~ Exp(1),

    S = (A(U)/E)^{(1-alpha)/alpha},
    A(u) = sin(alpha*u)^{alpha/(1-alpha)} * sin((1-alpha)*u) / sin(u)^{1/(1-alpha)},

has E[exp(-lam*S)] = exp(-lam^alpha).  Matching the transform above forces the
increment over a step dt to be

    dL = gamma_bar * dt^{1/alpha} * cos(pi*alpha/2)^{-1/alpha} * S.

The exponent on the cosine is negative; this is pinned by the Monte Carlo
Laplace oracle in the test suite (check alpha=1/2: the multiplier becomes
2*gamma_bar*dt^2, the classical Levy-distribution scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ProblemSpec, TimeGrid

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class SubordinatorPath:
    """One realization of L on a fine uniform grid.

    values[i] is L at grid point i; values[0] = 0 and the path is strictly
    increasing.  seed identifies the stream the path was drawn from.
    """

    grid: TimeGrid
    values: np.ndarray
    seed: int

    def increments(self) -> np.ndarray:
        """Per-bin increments dL_i, all positive, length grid.n_steps."""
        return np.diff(self.values)


def _validate_stable_params(alpha: float, gamma_bar: float, dt: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if gamma_bar <= 0.0:
        raise ValueError(f"gamma_bar must be positive, got {gamma_bar}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")


def _standard_one_sided(alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Kanter draws with E[exp(-lam*S)] = exp(-lam^alpha), as an array."""
    u = rng.uniform(0.0, math.pi, size)
    e = rng.standard_exponential(size)
    # Guard the measure-zero edges u=0 (log sin -> -inf twice, NaN) and e=0.
    np.clip(u, _TINY, math.pi * (1.0 - 2.0 ** -48), out=u)
    np.clip(e, _TINY, None, out=e)
    one_m = 1.0 - alpha
    log_a = (alpha / one_m) * np.log(np.sin(alpha * u)) \
        + np.log(np.sin(one_m * u)) \
        - (1.0 / one_m) * np.log(np.sin(u))
    return np.exp((one_m / alpha) * (log_a - np.log(e)))


def increment_scale(alpha: float, gamma_bar: float, dt: float) -> float:
    """Multiplier turning a standard Kanter draw into an increment over dt."""
    return gamma_bar * dt ** (1.0 / alpha) * math.cos(math.pi * alpha / 2.0) ** (-1.0 / alpha)


def sample_stable_increment(alpha: float, gamma_bar: float, dt: float,
                            rng: np.random.Generator, size: int | None = None):
    """Draw L_{t+dt} - L_t (one scalar, or an array when size is given).

    Increments underflowing to 0 are clamped to the smallest positive normal
    so paths stay strictly increasing.
    """
    _validate_stable_params(alpha, gamma_bar, dt)
    n = 1 if size is None else int(size)
    draws = increment_scale(alpha, gamma_bar, dt) * _standard_one_sided(alpha, rng, n)
    np.maximum(draws, _TINY, out=draws)
    return float(draws[0]) if size is None else draws


def _path_from_rng(spec: ProblemSpec, grid: TimeGrid, rng: np.random.Generator,
                   seed_key: int) -> SubordinatorPath:
    incr = sample_stable_increment(spec.alpha, spec.gamma_bar, grid.step, rng,
                                   size=grid.n_steps)
    values = np.empty(grid.n_steps + 1)
    values[0] = 0.0
    np.cumsum(incr, out=values[1:])
    return SubordinatorPath(grid=grid, values=values, seed=seed_key)


def sample_subordinator_path(spec: ProblemSpec, grid: TimeGrid, seed: int) -> SubordinatorPath:
    """Cumulative sums of independent stable increments over the grid.

    Deterministic in (spec, grid, seed).  The grid must start at 0 and cover
    the spec horizon.
    """
    if grid.start != 0.0 or grid.end < spec.horizon - 1e-9:
        raise ValueError("grid must cover [0, horizon]")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return _path_from_rng(spec, grid, rng, seed_key=int(seed))


def laplace_exponent(alpha: float, gamma_bar: float, lam: float) -> float:
    """eta(lam) with E[exp(-lam*L_t)] = exp(-t*eta(lam))."""
    if lam < 0.0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    if lam == 0.0:
        return 0.0
    return gamma_bar ** alpha * lam ** alpha / math.cos(math.pi * alpha / 2.0)


@dataclass(frozen=True)
class ValidationRow:
    """One Laplace-transform comparison at a given lam."""

    lam: float
    empirical: float
    analytic: float
    std_error: float
    flagged: bool


def validate_sampler(alpha: float, gamma_bar: float, n_samples: int,
                     lam_list, seed: int = 0,
                     analytic_fn=None) -> list[ValidationRow]:
    """Compare empirical E[exp(-lam*L_1)] with the analytic transform.

    Draws n_samples copies of L_1 (single increments with dt=1) once and
    evaluates every lam on the same draws.  A row is flagged when |empirical -
    analytic| > 3 standard errors.  `analytic_fn(lam) -> float` overrides the
    analytic value (negative-control hook for the test suite).
    """
    if n_samples < 1000:
        raise ValueError(f"need n_samples >= 1000, got {n_samples}")
    from .streams import DOMAIN_VALIDATE, make_rng

    rng = make_rng(seed, DOMAIN_VALIDATE, 0)
    draws = sample_stable_increment(alpha, gamma_bar, 1.0, rng, size=n_samples)
    rows = []
    for lam in lam_list:
        if analytic_fn is None:
            analytic = math.exp(-laplace_exponent(alpha, gamma_bar, lam))
        else:
            analytic = float(analytic_fn(lam))
        vals = np.exp(-lam * draws)
        empirical = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(n_samples))
        flagged = abs(empirical - analytic) > 3.0 * se
        rows.append(ValidationRow(lam=float(lam), empirical=empirical,
                                  analytic=analytic, std_error=se, flagged=flagged))
    return rows
