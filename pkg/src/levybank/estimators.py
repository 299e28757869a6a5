"""Probabilistic estimators: benchmark, iterates v0/v1/vn, gradient, bookkeeping.

Everything except the Euler-Maruyama benchmark reuses a SimulationBank; the
benchmark always draws fresh randomness so it can referee the others.

Conventions shared by the iterate estimators:

* The time integrals use left Riemann sums on the mesh grid tau_j = s + j*h,
  j = 0..J-1 (right endpoints excluded: the (I^L)^{-1/2} factors blow up as an
  interval shrinks, an integrable singularity the left rule never samples).
* Each Monte Carlo sample pairs one convolution record (supplying every OU
  value, noise increment and record-side covariance) with `order` independent
  subordinator-only paths (the independent covariance draws).  Pairing is
  diagonal: sample l of n uses record perm_r[l] and sub paths perm_s[l + j*n],
  j = 0..order-1; the permutations are the identity when seed is None, else
  derived from the seed, identically in v1_estimate and vn_estimate so the two
  agree at order 1 on equal seeds.
* Simplex interval i = [s_i, s_{i+1}] (s_{m+1} = t) takes its independent
  covariance from sub-path family order-i, so the interval touching t uses
  family 0; at order 1 this is exactly the first-iterate formula.
* Covariance entries are floored at 1e-300 before inversion or square root;
  they are a.s. positive but can underflow for lambda = 1e4 when the clock
  puts almost no mass near the interval's right end.
* All covariances and increments come from the unit-noise bank and are scaled
  by sigma at read time; no sampler ever runs inside an iterate estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .bank import SimulationBank
from .core import GRID_RTOL, ProblemSpec, phi1
from .fields import VectorFieldSpec, eval_field
from .flow import TimeShift, forcing_convolution
from .stable import sample_stable_increment
from .streams import DOMAIN_BENCHMARK, DOMAIN_SELECTION, make_rng

COV_FLOOR = 1e-300
BENCHMARK_METHODS = ("exp", "euler")


@dataclass(frozen=True)
class QueryParams:
    """One probability query P(|X_t^{s,x}| > radius)."""

    s: float
    t: float
    x: np.ndarray
    sigma_scale: float
    radius: float
    field: VectorFieldSpec
    use_shift: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x", np.ascontiguousarray(self.x, dtype=float))
        if not 0.0 <= self.s < self.t:
            raise ValueError(f"need 0 <= s < t, got s={self.s}, t={self.t}")
        if self.sigma_scale <= 0.0:
            raise ValueError(f"sigma_scale must be positive, got {self.sigma_scale}")
        if self.radius <= 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class IterateEstimate:
    """Monte Carlo value with its standard error and provenance.

    order: -1 for the benchmark, n >= 0 for iterate v^n.
    std_error is the sample standard deviation over samples divided by
    sqrt(n_samples).
    """

    value: float
    std_error: float
    n_samples: int
    order: int
    meta: dict = dc_field(default_factory=dict)


def _x_descriptor(x: np.ndarray) -> str:
    if not x.size or np.all(x == 0.0):
        return "zeros"
    if np.all(x == x.flat[0]):
        return f"const{x.flat[0]:g}"
    import hashlib
    return "sha1:" + hashlib.sha1(np.ascontiguousarray(x, "<f8").tobytes()).hexdigest()[:12]


def _meta(q: QueryParams) -> dict:
    return {"s": q.s, "t": q.t, "x": _x_descriptor(q.x), "sigma": q.sigma_scale,
            "field": q.field.kind, "shift": bool(q.use_shift)}


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    n = samples.size
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(samples.mean()), se


def _effective_shift(shift: Optional[TimeShift], q: QueryParams) -> Optional[TimeShift]:
    if not q.use_shift:
        return None
    if shift is None:
        raise ValueError("query has use_shift=True but no shift was supplied")
    return shift


def _check_bank(bank: SimulationBank, spec: ProblemSpec) -> None:
    if bank.header.spec_hash != spec.content_hash():
        raise ValueError("bank was generated under a different problem spec")


def _selection(seed: Optional[int], m_avail: int, n_take: int,
               which: int) -> np.ndarray:
    """Deterministic index selection; identity when seed is None.

    which = 0 selects records, 1 selects subordinator paths (independent
    permutations from the same seed).
    """
    if seed is None:
        return np.arange(n_take)
    rng = make_rng(seed, DOMAIN_SELECTION, which)
    return rng.permutation(m_avail)[:n_take]


# ---------------------------------------------------------------------------
# Euler-Maruyama benchmark


def em_benchmark_series(spec: ProblemSpec, q: QueryParams, t_list, n_paths: int,
                        delta_em: float, seed: int, method: str = "exp") -> list[IterateEstimate]:
    """Benchmark probabilities at several times from one batch of paths.

    Paths are simulated from (s, x) with fresh subordinator and Gaussian draws
    (never the bank); the path value at each requested t is the scheme's
    approximation at t.  The drift is B0 alone: the benchmark targets the
    semilinear equation itself and ignores the time shift.

    method "exp" propagates the linear part exactly over each step and uses
    the conditional noise variance dL*(1-e^{-2 lambda d})/(2 lambda d); it is
    stable for any lambda*delta.  method "euler" is the plain explicit scheme
    X += (AX + B0) d + sigma sqrt(dL) xi, for replicating runs with
    lambda*delta <= 1; it diverges when lambda*delta > 2.
    """
    if method not in BENCHMARK_METHODS:
        raise ValueError(f"unknown benchmark method {method!r}")
    if n_paths < 2:
        raise ValueError("need at least 2 benchmark paths")
    t_list = [float(t) for t in t_list]
    if not t_list or any(t <= q.s or t > spec.horizon * (1 + GRID_RTOL) for t in t_list):
        raise ValueError("benchmark times must lie in (s, horizon]")
    steps = {}
    for t in t_list:
        ratio = (t - q.s) / delta_em
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > GRID_RTOL * max(1.0, ratio):
            raise ValueError(f"t={t} is not on the benchmark step grid")
        steps[k] = t
    n_steps = max(steps)
    lam, d = spec.lambdas, delta_em
    diag = q.sigma_scale * spec.sigmas
    if method == "exp":
        e1 = np.exp(-lam * d)
        drift_w = d * phi1(lam * d)
        noise_w = diag * np.sqrt(phi1(2.0 * lam * d))
    rng = make_rng(seed, DOMAIN_BENCHMARK, 0)
    x_state = np.broadcast_to(q.x, (n_paths, spec.dim)).copy()
    out = {}
    for i in range(n_steps):
        t_i = q.s + i * d
        dl = sample_stable_increment(spec.alpha, spec.gamma_bar, d, rng, size=n_paths)
        xi = rng.standard_normal((n_paths, spec.dim))
        drift = eval_field(q.field, t_i, x_state)
        if method == "exp":
            x_state = e1 * x_state + drift_w * drift \
                + noise_w * np.sqrt(dl)[:, None] * xi
        else:
            x_state = x_state + d * (-lam * x_state + drift) \
                + diag * np.sqrt(dl)[:, None] * xi
        if (i + 1) in steps:
            ind = (np.linalg.norm(x_state, axis=1) > q.radius).astype(float)
            out[steps[i + 1]] = ind
    results = []
    for t in t_list:
        value, se = _mean_se(out[t])
        meta = _meta(q)
        meta.update(t=t, method=method, delta_em=delta_em)
        results.append(IterateEstimate(value=value, std_error=se, n_samples=n_paths,
                                       order=-1, meta=meta))
    return results


def em_benchmark(spec: ProblemSpec, q: QueryParams, n_paths: int, delta_em: float,
                 seed: int, method: str = "exp") -> IterateEstimate:
    """Reference probability for the semilinear equation at q.t."""
    return em_benchmark_series(spec, q, [q.t], n_paths, delta_em, seed, method)[0]


# ---------------------------------------------------------------------------
# Shared mesh-frame precomputation for the bank-based estimators


class _MeshFrame:
    """Grid bookkeeping and lookup tables for one (bank, query, mesh) triple.

    Provides, for mesh nodes tau_j = s + j*h (tau_J = t):
      prop[m]   e^{-lambda m h}                                  (J+1, N)
      prop2[m]  e^{-2 lambda m h}                                (J+1, N)
      F[a, b]   forcing convolution F_{tau_a, tau_b}             (J+1, J+1, N)
      chk(j)    record checkpoints at tau_j                      (n_rec, N)
    and per-family covariance machinery over the fine clock paths.
    """

    def __init__(self, bank: SimulationBank, spec: ProblemSpec,
                 shift: Optional[TimeShift], q: QueryParams, mesh: float):
        _check_bank(bank, spec)
        self.bank, self.spec, self.q = bank, spec, q
        coarse = bank.coarse_grid
        i_s, i_t = coarse.index_of(q.s), coarse.index_of(q.t)
        stride_r = mesh / coarse.step
        self.chk_stride = int(round(stride_r))
        if self.chk_stride < 1 or abs(stride_r - self.chk_stride) > GRID_RTOL * stride_r:
            raise ValueError(f"mesh {mesh} must be a multiple of the checkpoint step")
        if (i_t - i_s) % self.chk_stride:
            raise ValueError(f"mesh {mesh} must divide [s, t] = [{q.s}, {q.t}]")
        self.h = mesh
        self.J = (i_t - i_s) // self.chk_stride
        if self.J < 1:
            raise ValueError("need t - s >= mesh")
        self.i_s_coarse = i_s
        self.taus = q.s + mesh * np.arange(self.J + 1)
        fine = bank.fine_grid
        self.k_fine = self.chk_stride * int(round(coarse.step / fine.step))
        self.fine_lo = fine.index_of(q.s)
        self.diag = q.sigma_scale * spec.sigmas
        lam = spec.lambdas
        steps = np.arange(self.J + 1) * mesh
        self.prop = np.exp(-np.outer(steps, lam))
        self.prop2 = np.exp(-2.0 * np.outer(steps, lam))
        # within-mesh-bin quadrature weights, anchored at the bin's right edge
        d = fine.step
        ages = np.arange(self.k_fine - 1, -1, -1.0)
        self.w2 = np.exp(-2.0 * np.outer(ages, lam) * d) * phi1(2.0 * lam * d)  # (k, N)
        self.shift = shift
        self.F = np.zeros((self.J + 1, self.J + 1, spec.dim))
        if shift is not None:
            e1 = self.prop[1]
            fbin = np.stack([forcing_convolution(spec, shift, self.taus[j], self.taus[j + 1])
                             for j in range(self.J)])
            for a in range(self.J):
                acc = np.zeros(spec.dim)
                for b in range(a + 1, self.J + 1):
                    acc = e1 * acc + fbin[b - 1]
                    self.F[a, b] = acc

    def checkpoints(self, indices: np.ndarray) -> np.ndarray:
        """Record checkpoints for the mesh nodes, shape (n, J+1, N)."""
        sl = self.bank.record_checkpoints[
            indices, self.i_s_coarse::self.chk_stride, :]
        return np.asarray(sl[:, : self.J + 1, :], dtype=float)

    def block_increments(self, clock_values: np.ndarray, indices: np.ndarray) -> np.ndarray:
        """Fine clock increments grouped by mesh bin, shape (n, J, k_fine)."""
        lo = self.fine_lo
        hi = lo + self.J * self.k_fine
        dl = np.diff(clock_values[indices, lo:hi + 1], axis=1)
        return dl.reshape(indices.size, self.J, self.k_fine)

    def bin_partial(self, dl_blocks: np.ndarray, j: int) -> np.ndarray:
        """Covariance contribution of mesh bin j alone, shape (n, N).

        Anchored at the bin's right edge tau_{j+1}; whole-interval covariances
        follow by the prefix/suffix recurrences.
        """
        return np.einsum("mi,ik->mk", dl_blocks[:, j], self.w2)

    def bin_partials(self, clock_values: np.ndarray, indices: np.ndarray) -> np.ndarray:
        """All per-mesh-bin unit covariance partials at once, shape (n, J, N)."""
        return np.einsum("mji,ik->mjk",
                         self.block_increments(clock_values, indices), self.w2)

    def suffix_covariances(self, partials: np.ndarray) -> np.ndarray:
        """Unit covariances over [tau_j, t] for every j, shape (n, J+1, N)."""
        n = partials.shape[0]
        suf = np.zeros((n, self.J + 1, self.spec.dim))
        for j in range(self.J - 1, -1, -1):
            suf[:, j] = suf[:, j + 1] + self.prop2[self.J - (j + 1)] * partials[:, j]
        return suf


def _record_ou_values(frame: _MeshFrame, rec_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(checkpoints, OU values) of the selected records at all mesh nodes.

    OU value at tau_j is Z_{tau_j} = e^{-(tau_j - s)A} x + F_{s, tau_j} +
    sigma sqrt(Q) (chk_j - e^{-(tau_j - s)A} chk_0); shapes (n, J+1, N).
    """
    chk = frame.checkpoints(rec_idx)
    q = frame.q
    z = frame.prop[None, :, :] * q.x + frame.F[0][None, :, :] \
        + frame.diag * (chk - frame.prop[None, :, :] * chk[:, :1, :])
    return chk, z


# ---------------------------------------------------------------------------
# Iterates


def v0_estimate(bank: SimulationBank, spec: ProblemSpec, shift: Optional[TimeShift],
                q: QueryParams) -> IterateEstimate:
    """v^0 = mean of the indicator at the OU endpoint, over all bank records."""
    _check_bank(bank, spec)
    sh = _effective_shift(shift, q)
    js, jt = bank.checkpoint_index(q.s), bank.checkpoint_index(q.t)
    if bank.m_ou < 2:
        raise ValueError("bank holds too few records for v0")
    chk = bank.record_checkpoints
    prop = np.exp(-spec.lambdas * (q.t - q.s))
    f_st = forcing_convolution(spec, sh, q.s, q.t) if sh is not None else 0.0
    endpoint = prop * q.x + f_st \
        + q.sigma_scale * spec.sigmas * (np.asarray(chk[:, jt, :], dtype=float)
                                         - prop * np.asarray(chk[:, js, :], dtype=float))
    ind = (np.linalg.norm(endpoint, axis=1) > q.radius).astype(float)
    value, se = _mean_se(ind)
    return IterateEstimate(value=value, std_error=se, n_samples=bank.m_ou,
                           order=0, meta=_meta(q))


def v1_estimate(bank: SimulationBank, spec: ProblemSpec, shift: Optional[TimeShift],
                q: QueryParams, mesh: float, n_pairs: int,
                seed: Optional[int] = None) -> IterateEstimate:
    """First iterate v^1, streaming over mesh nodes.

    For each node u and pair (record omega1, sub path omega0):

        u0( sqrt(I0/I1) dZ + F_{u,t} + e^{(t-u)A} Z_u )
        * < I0^{-1/2} e^{(t-u)A} B(u, Z_u), I1^{-1/2} dZ >

    with dZ = Z_t - e^{(t-u)A} Z_u - F_{u,t} (the record's noise segment), I1
    the record covariance and I0 the independent-path covariance over [u, t];
    the node sum is a left Riemann rule with weight mesh.

    Streams one mesh bin at a time so the resident footprint stays at a few
    (n_pairs, dim) panels even for 1e4 pairs in dimension 100.
    """
    if n_pairs > min(bank.m_ou, bank.m_sub):
        raise ValueError(f"bank too small for n_pairs={n_pairs} "
                         f"(m_ou={bank.m_ou}, m_sub={bank.m_sub})")
    if n_pairs < 2:
        raise ValueError("need at least 2 pairs")
    sh = _effective_shift(shift, q)
    frame = _MeshFrame(bank, spec, sh, q, mesh)
    rec_idx = _selection(seed, bank.m_ou, n_pairs, which=0)
    sub_idx = _selection(seed, bank.m_sub, n_pairs, which=1)
    dl_rec = frame.block_increments(bank.record_clock_values, rec_idx)
    dl_sub = frame.block_increments(bank.sub_values, sub_idx)
    J, diag = frame.J, frame.diag
    pos0 = frame.i_s_coarse
    stride = frame.chk_stride
    q_x = np.asarray(q.x, dtype=float)
    chk0 = np.asarray(bank.record_checkpoints[rec_idx, pos0, :], dtype=float)
    chk_end = np.asarray(bank.record_checkpoints[rec_idx, pos0 + J * stride, :],
                         dtype=float)
    acc = np.zeros(n_pairs)
    u1 = np.zeros((n_pairs, spec.dim))  # record covariance over [tau_j, t]
    u0 = np.zeros((n_pairs, spec.dim))  # independent covariance over [tau_j, t]
    for j in range(J - 1, -1, -1):
        decay_new = frame.prop2[J - (j + 1)]
        u1 = u1 + decay_new * frame.bin_partial(dl_rec, j)
        u0 = u0 + decay_new * frame.bin_partial(dl_sub, j)
        i1 = np.maximum(diag ** 2 * u1, COV_FLOOR)
        i0 = np.maximum(diag ** 2 * u0, COV_FLOOR)
        prop_ut = frame.prop[J - j]
        chk_j = np.asarray(bank.record_checkpoints[rec_idx, pos0 + j * stride, :],
                           dtype=float)
        dz = diag * (chk_end - prop_ut * chk_j)
        z_u = frame.prop[j] * q_x + frame.F[0, j] + diag * (chk_j - frame.prop[j] * chk0)
        b_u = eval_field(q.field, frame.taus[j], z_u)
        if sh is not None:
            b_u = b_u - sh.value_at(frame.taus[j])
        y_end = np.sqrt(i0 / i1) * dz + frame.F[j, J] + prop_ut * z_u
        ind = (np.linalg.norm(y_end, axis=1) > q.radius).astype(float)
        inner = np.einsum("mk,mk->m", prop_ut * b_u / np.sqrt(i0), dz / np.sqrt(i1))
        acc += ind * inner
    samples = frame.h * acc
    value, se = _mean_se(samples)
    return IterateEstimate(value=value, std_error=se, n_samples=n_pairs,
                           order=1, meta=_meta(q))


def vn_estimate(bank: SimulationBank, spec: ProblemSpec, shift: Optional[TimeShift],
                q: QueryParams, order: int, mesh: float, n_tuples: int,
                seed: Optional[int] = None) -> IterateEstimate:
    """Iterate v^order for any order >= 1 (exercised to order 2).

    Left-Riemann sum over the ordered simplex s <= s_1 < ... < s_m < t on the
    restricted product grid (m = order), depth-first over simplex tuples with
    running per-interval covariances, vectorized over Monte Carlo tuples.
    Each tuple uses one record plus m independent sub paths; see the module
    docstring for the pairing and the interval-to-family map.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if n_tuples < 2:
        raise ValueError("need at least 2 tuples")
    if n_tuples > bank.m_ou or order * n_tuples > bank.m_sub:
        raise ValueError(
            f"bank too small for order={order}, n_tuples={n_tuples} "
            f"(m_ou={bank.m_ou}, m_sub={bank.m_sub})")
    sh = _effective_shift(shift, q)
    frame = _MeshFrame(bank, spec, sh, q, mesh)
    J, diag, dim = frame.J, frame.diag, spec.dim
    if J < order:
        raise ValueError(f"mesh too coarse: {J} nodes cannot host order {order}")
    rec_idx = _selection(seed, bank.m_ou, n_tuples, which=0)
    sub_all = _selection(seed, bank.m_sub, order * n_tuples, which=1)
    fam_idx = [sub_all[j * n_tuples:(j + 1) * n_tuples] for j in range(order)]

    chk, z_rec = _record_ou_values(frame, rec_idx)
    p_rec = frame.bin_partials(bank.record_clock_values, rec_idx)
    suf_rec = frame.suffix_covariances(p_rec)
    suf_om0 = frame.suffix_covariances(
        frame.bin_partials(bank.sub_values, fam_idx[0]))
    # families 1..order-1 are marched as interval prefixes, never as suffixes
    p_fam = {j: frame.bin_partials(bank.sub_values, fam_idx[j])
             for j in range(1, order)}

    e2h = frame.prop2[1]
    acc = np.zeros(n_tuples)

    def close_tuple(j_m: int, y_m: np.ndarray, prod: np.ndarray) -> None:
        """Final interval [tau_{j_m}, t] with family 0, then accumulate."""
        nonlocal acc
        i_rec = np.maximum(diag ** 2 * suf_rec[:, j_m], COV_FLOOR)
        i_om = np.maximum(diag ** 2 * suf_om0[:, j_m], COV_FLOOR)
        prop_ut = frame.prop[J - j_m]
        dz = diag * (chk[:, J] - prop_ut * chk[:, j_m])
        b_m = eval_field(q.field, frame.taus[j_m], y_m)
        if sh is not None:
            b_m = b_m - sh.value_at(frame.taus[j_m])
        y_end = np.sqrt(i_om / i_rec) * dz + frame.F[j_m, J] + prop_ut * y_m
        ind = (np.linalg.norm(y_end, axis=1) > q.radius).astype(float)
        inner = np.einsum("mk,mk->m", prop_ut * b_m / np.sqrt(i_om), dz / np.sqrt(i_rec))
        acc += ind * inner * prod

    def descend(depth: int, j_prev: int, y_prev: np.ndarray, prod: np.ndarray) -> None:
        """Extend the simplex from s_depth at node j_prev to s_{depth+1}.

        Marches the next node b upward, maintaining the running interval
        covariances over [tau_{j_prev}, tau_b] for the record and for
        sub-path family order-depth.
        """
        fam = p_fam[order - depth]
        b_prev = eval_field(q.field, frame.taus[j_prev], y_prev)
        if sh is not None:
            b_prev = b_prev - sh.value_at(frame.taus[j_prev])
        run_rec = np.zeros((n_tuples, dim))
        run_om = np.zeros((n_tuples, dim))
        for b in range(j_prev + 1, J - (order - depth) + 1):
            run_rec = e2h * run_rec + p_rec[:, b - 1]
            run_om = e2h * run_om + fam[:, b - 1]
            i_rec = np.maximum(diag ** 2 * run_rec, COV_FLOOR)
            i_om = np.maximum(diag ** 2 * run_om, COV_FLOOR)
            prop_ab = frame.prop[b - j_prev]
            dz = diag * (chk[:, b] - prop_ab * chk[:, j_prev])
            y_b = np.sqrt(i_om / i_rec) * dz + frame.F[j_prev, b] + prop_ab * y_prev
            inner = np.einsum("mk,mk->m", prop_ab * b_prev / np.sqrt(i_om),
                              dz / np.sqrt(i_rec))
            prod_b = prod * inner
            if depth + 1 < order:
                descend(depth + 1, b, y_b, prod_b)
            else:
                close_tuple(b, y_b, prod_b)

    ones = np.ones(n_tuples)
    if order == 1:
        for j1 in range(J):
            close_tuple(j1, z_rec[:, j1], ones)
    else:
        for j1 in range(J - (order - 1)):
            descend(1, j1, z_rec[:, j1], ones)

    samples = frame.h ** order * acc
    value, se = _mean_se(samples)
    return IterateEstimate(value=value, std_error=se, n_samples=n_tuples,
                           order=order, meta=_meta(q))


# ---------------------------------------------------------------------------
# Gradient diagnostic and error bookkeeping


def ou_gradient(bank: SimulationBank, spec: ProblemSpec, shift: Optional[TimeShift],
                q: QueryParams, direction: np.ndarray) -> IterateEstimate:
    """Directional derivative of v^0 at x in the given direction.

    Monte Carlo mean over records of u0(Z_t) * <I^{-1} e^{(t-s)A} h, Z_t -
    e^{(t-s)A} x - F_{s,t}>, with I the record covariance over [s, t].  Pure
    diagnostic: validates the covariance and segment plumbing against finite
    differences.
    """
    _check_bank(bank, spec)
    sh = _effective_shift(shift, q)
    direction = np.ascontiguousarray(direction, dtype=float)
    js, jt = bank.checkpoint_index(q.s), bank.checkpoint_index(q.t)
    chk = bank.record_checkpoints
    prop = np.exp(-spec.lambdas * (q.t - q.s))
    diag = q.sigma_scale * spec.sigmas
    unit_seg = np.asarray(chk[:, jt, :], dtype=float) \
        - prop * np.asarray(chk[:, js, :], dtype=float)
    f_st = forcing_convolution(spec, sh, q.s, q.t) if sh is not None else 0.0
    endpoint = prop * q.x + f_st + diag * unit_seg
    ind = (np.linalg.norm(endpoint, axis=1) > q.radius).astype(float)
    # unit covariance over [s, t] per record, from the fine clock
    fine = bank.fine_grid
    lo, hi = fine.index_of(q.s), fine.index_of(q.t)
    d = fine.step
    lam = spec.lambdas
    ages = np.arange(hi - 1 - lo, -1, -1.0)
    w = np.exp(-2.0 * np.outer(ages, lam) * d) * phi1(2.0 * lam * d)
    unit_cov = np.einsum("mb,bk->mk", np.diff(bank.record_clock_values[:, lo:hi + 1], axis=1), w)
    cov = np.maximum(diag ** 2 * unit_cov, COV_FLOOR)
    weight = np.einsum("mk,mk->m", (prop * direction) / cov, diag * unit_seg)
    value, se = _mean_se(ind * weight)
    meta = _meta(q)
    meta["direction"] = _x_descriptor(direction)
    return IterateEstimate(value=value, std_error=se, n_samples=bank.m_ou,
                           order=0, meta=meta)


@dataclass(frozen=True)
class PartialSumRow:
    """Partial sum up to a given order with its relative-error bookkeeping."""

    order: int
    partial_sum: float
    partial_sum_se: float
    eps_rel: float
    eps_rel_se: float


def partial_sums(estimates: list[IterateEstimate],
                 benchmark: IterateEstimate) -> list[PartialSumRow]:
    """Per-order partial sums and relative errors against the benchmark.

    eps^n = (P - sum_{i<=n} v^i) / P.  Partial-sum standard errors combine in
    quadrature (independent estimates); the eps standard error follows by the
    delta method for the ratio.  The iterate list must be consecutive orders
    starting at 0.
    """
    if not estimates:
        raise ValueError("no iterate estimates given")
    orders = [e.order for e in estimates]
    if orders != list(range(len(estimates))):
        raise ValueError(f"iterates must be consecutive orders 0..n, got {orders}")
    p = benchmark.value
    if p == 0.0:
        raise ValueError("benchmark probability is zero; relative errors undefined")
    rows = []
    total, var = 0.0, 0.0
    for est in estimates:
        total += est.value
        var += est.std_error ** 2
        eps = (p - total) / p
        eps_var = (total / p ** 2) ** 2 * benchmark.std_error ** 2 + var / p ** 2
        rows.append(PartialSumRow(order=est.order, partial_sum=total,
                                  partial_sum_se=math.sqrt(var), eps_rel=eps,
                                  eps_rel_se=math.sqrt(eps_var)))
    return rows
