"""Tests for the simulation bank: generation, queries, file format."""

from __future__ import annotations

import math
import struct

import numpy as np
import pytest
from scipy.stats import kstest

import levybank.stable
from levybank.bank import (FORMAT_VERSION, MAGIC, ConvolutionRecord, SimulationBank,
                           convolution_segment, covariance_integral, generate_bank,
                           load_bank, load_call_count, ou_endpoint,
                           reset_load_call_count, save_bank)
from levybank.core import ProblemSpec, TimeGrid, phi1
from levybank.flow import forcing_convolution, solve_flow
from levybank.stable import SubordinatorPath

HEADER_FMT = "<4sI32sdddIQQQB7x"


def closed_form_covariance(lam, sigma, tau):
    if lam == 0.0:
        return sigma * sigma * tau
    return sigma * sigma * (1.0 - math.exp(-2.0 * lam * tau)) / (2.0 * lam)


@pytest.fixture(scope="module")
def spec2():
    return ProblemSpec(alpha=0.75, gamma_bar=1.0, dim=2,
                       lambdas=np.array([1.0, 4.0]), sigmas=np.ones(2), horizon=1.0)


@pytest.fixture(scope="module")
def det_bank_stiff():
    spec = ProblemSpec(alpha=0.75, gamma_bar=1.0, dim=3,
                       lambdas=np.array([1.0, 100.0, 1.0e4]), sigmas=np.ones(3),
                       horizon=1.0)
    return spec, generate_bank(spec, 1e-3, 1e-2, 0, 2, 0, deterministic_clock=True)


def test_generation_deterministic(spec3):
    a = generate_bank(spec3, 1e-3, 1e-2, 30, 30, 5)
    b = generate_bank(spec3, 1e-3, 1e-2, 30, 30, 5)
    assert np.array_equal(a.sub_values, b.sub_values)
    assert np.array_equal(a.record_clock_values, b.record_clock_values)
    assert np.array_equal(a.record_checkpoints, b.record_checkpoints)


def test_seed_changes_bank(spec3):
    a = generate_bank(spec3, 1e-3, 1e-2, 10, 10, 5)
    b = generate_bank(spec3, 1e-3, 1e-2, 10, 10, 6)
    assert not np.array_equal(a.sub_values, b.sub_values)
    assert not np.array_equal(a.record_checkpoints, b.record_checkpoints)


def test_bank_shapes_and_readonly(bank3):
    assert bank3.sub_values.shape == (400, 1001)
    assert bank3.record_clock_values.shape == (400, 1001)
    assert bank3.record_checkpoints.shape == (400, 101, 3)
    with pytest.raises(ValueError):
        bank3.sub_values[0, 0] = 1.0


def test_clock_paths_start_at_zero_and_increase(bank3):
    assert np.all(bank3.sub_values[:, 0] == 0.0)
    assert np.all(bank3.record_clock_values[:, 0] == 0.0)
    assert np.all(np.diff(bank3.sub_values, axis=1) > 0.0)
    assert np.all(bank3.record_checkpoints[:, 0, :] == 0.0)


def test_deterministic_clock_matches_closed_form(det_bank_stiff):
    # With dL_r = dr the covariance integral is sigma^2 (1-e^{-2 lam tau})/(2 lam),
    # including the stiff lam = 1e4 mode; the per-bin exponential weights make
    # the quadrature exact, not just accurate.
    spec, bank = det_bank_stiff
    for (u, t) in ((0.0, 1.0), (0.13, 0.77)):
        got = covariance_integral(bank.record(0), spec, 1.0, u, t)
        want = np.array([closed_form_covariance(lam, 1.0, t - u) for lam in spec.lambdas])
        assert np.max(np.abs(got / want - 1.0)) < 1e-12


def test_covariance_splitting_identity(spec3, bank3):
    rec = bank3.record(7)
    s, u, t = 0.0, 0.41, 0.9
    full = covariance_integral(rec, spec3, 1.0, s, t)
    left = covariance_integral(rec, spec3, 1.0, s, u)
    right = covariance_integral(rec, spec3, 1.0, u, t)
    glued = np.exp(-2.0 * spec3.lambdas * (t - u)) * left + right
    assert np.max(np.abs(full / glued - 1.0)) < 1e-12


def test_unit_jump_covariance(spec1):
    # A clock that jumps by 1 in the first fine bin and then stays flat:
    # the integral reduces to the single-bin weight e^{-2 lam (t - d)} phi1(2 lam d).
    grid = TimeGrid(0.0, 1.0, 1e-3)
    values = np.concatenate([[0.0], np.ones(1000)])
    path = SubordinatorPath(grid=grid, values=values, seed=0)
    got = covariance_integral(path, spec1, 1.0, 0.0, 1.0)
    assert got[0] == pytest.approx(0.1354707087885013, rel=1e-12)


def test_covariance_window_snaps_inward(spec2):
    bank = generate_bank(spec2, 1e-3, 1e-2, 0, 1, 8)
    rec = bank.record(0)
    loose = covariance_integral(rec, spec2, 1.0, 0.13049, 0.77)
    snapped = covariance_integral(rec, spec2, 1.0, 0.131, 0.77)
    assert np.array_equal(loose, snapped)


def test_covariance_rejects_bad_window(spec3, bank3):
    rec = bank3.record(0)
    with pytest.raises(ValueError):
        covariance_integral(rec, spec3, 1.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        covariance_integral(rec, spec3, 1.0, 0.6, 0.4)
    with pytest.raises(ValueError):
        covariance_integral(rec, spec3, 0.0, 0.0, 1.0)


def test_segment_telescoping(spec3, bank3):
    rec = bank3.record(3)
    s, u, t = 0.1, 0.47, 0.9
    full = convolution_segment(rec, spec3, 1.0, s, t)
    glued = np.exp(-spec3.lambdas * (t - u)) * convolution_segment(rec, spec3, 1.0, s, u) \
        + convolution_segment(rec, spec3, 1.0, u, t)
    assert np.max(np.abs(full - glued)) < 1e-12
    assert np.all(convolution_segment(rec, spec3, 1.0, 0.3, 0.3) == 0.0)


def test_segment_requires_checkpoints(spec3, bank3):
    rec = bank3.record(0)
    with pytest.raises(ValueError):
        convolution_segment(rec, spec3, 1.0, 0.0, 0.505)
    with pytest.raises(ValueError):
        convolution_segment(rec, spec3, 1.0, 0.5, 0.4)


def test_checkpoint_law_is_gaussian(spec2):
    # Conditionally on the clock, checkpoint k over [0, t] is centered Gaussian
    # with variance covariance_integral(...); standardized values must pass a KS
    # test against N(0, 1) at both an interior and the final checkpoint.
    bank = generate_bank(spec2, 1e-3, 1e-2, 0, 1500, 314)
    for t_query, j in ((0.37, 37), (1.0, 100)):
        unit = np.stack([covariance_integral(bank.record(i), spec2, 1.0, 0.0, t_query)
                         for i in range(bank.m_ou)])
        z = np.asarray(bank.record_checkpoints[:, j, :]) / np.sqrt(unit)
        for k in range(spec2.dim):
            assert kstest(z[:, k], "norm").pvalue > 0.01


def test_sigma_rescaling_is_exact(spec3, bank3):
    rec = bank3.record(5)
    cov1 = covariance_integral(rec, spec3, 1.0, 0.0, 1.0)
    cov2 = covariance_integral(rec, spec3, 2.0, 0.0, 1.0)
    assert np.array_equal(cov2, 4.0 * cov1)
    seg1 = convolution_segment(rec, spec3, 1.0, 0.0, 1.0)
    seg2 = convolution_segment(rec, spec3, 2.0, 0.0, 1.0)
    assert np.array_equal(seg2, 2.0 * seg1)


def test_queries_never_invoke_sampler(spec3, bank3, monkeypatch):
    # Re-querying an existing bank at a new sigma must be pure arithmetic.
    def boom(*args, **kwargs):
        raise AssertionError("stable sampler invoked during a bank query")

    monkeypatch.setattr(levybank.stable, "_standard_one_sided", boom)
    rec = bank3.record(0)
    covariance_integral(rec, spec3, 0.7, 0.0, 1.0)
    convolution_segment(rec, spec3, 0.7, 0.0, 1.0)
    ou_endpoint(rec, spec3, 0.7, None, 0.0, np.zeros(3), 1.0)


def test_ou_endpoint_decomposition(spec3, bank3):
    from levybank.fields import sine_field

    shift = solve_flow(spec3, sine_field(), 0.0, np.full(3, 0.3), TimeGrid(0.0, 1.0, 1e-3))
    rec = bank3.record(9)
    s, t, x = 0.2, 0.9, np.array([0.1, -0.4, 0.7])
    got = ou_endpoint(rec, spec3, 0.8, shift, s, x, t)
    want = np.exp(-spec3.lambdas * (t - s)) * x \
        + forcing_convolution(spec3, shift, s, t) \
        + convolution_segment(rec, spec3, 0.8, s, t)
    assert np.array_equal(got, want)


def test_checkpoint_index(bank3):
    assert bank3.checkpoint_index(0.0) == 0
    assert bank3.checkpoint_index(0.37) == 37
    assert bank3.checkpoint_index(1.0) == 100
    with pytest.raises(ValueError):
        bank3.checkpoint_index(0.375)


def test_sub_path_and_record_views(bank3):
    p = bank3.sub_path(4)
    assert np.shares_memory(p.values, bank3.sub_values)
    rec = bank3.record(4)
    assert np.shares_memory(rec.sub.values, bank3.record_clock_values)
    assert np.shares_memory(rec.conv_checkpoints, bank3.record_checkpoints)


def test_grid_divisibility_enforced(spec3):
    with pytest.raises(ValueError):
        generate_bank(spec3, 3e-3, 1e-2, 2, 2, 0)


def test_sub_only_bank(spec3):
    bank = generate_bank(spec3, 1e-3, 1e-2, 5, 0, 1)
    assert bank.m_ou == 0
    assert bank.record_checkpoints.shape == (0, 101, 3)
    full = generate_bank(spec3, 1e-3, 1e-2, 5, 3, 1)
    assert np.array_equal(bank.sub_values, full.sub_values)


def test_save_load_roundtrip(tmp_path, spec3, bank3):
    path = tmp_path / "bank.lvib"
    save_bank(bank3, path)
    reset_load_call_count()
    loaded = load_bank(path, expected_spec=spec3)
    assert load_call_count() == 1
    assert loaded.header == bank3.header
    assert np.array_equal(loaded.sub_values, bank3.sub_values)
    assert np.array_equal(loaded.record_clock_values, bank3.record_clock_values)
    assert np.array_equal(loaded.record_checkpoints, bank3.record_checkpoints)
    load_bank(path)
    assert load_call_count() == 2


def test_half_precision_roundtrip(tmp_path, spec3):
    bank = generate_bank(spec3, 1e-3, 1e-2, 2, 20, 7, precision=4)
    p8 = tmp_path / "full.lvib"
    p4 = tmp_path / "half.lvib"
    save_bank(generate_bank(spec3, 1e-3, 1e-2, 2, 20, 7), p8)
    save_bank(bank, p4)
    assert p4.stat().st_size < p8.stat().st_size
    loaded = load_bank(p4, expected_spec=spec3)
    assert loaded.header.precision == 4
    assert np.array_equal(loaded.record_checkpoints, bank.record_checkpoints)
    # Checkpoints survive the float32 round trip; clocks stay full precision.
    assert np.array_equal(loaded.record_clock_values, bank.record_clock_values)


def test_load_rejects_garbage(tmp_path, spec3, bank3):
    path = tmp_path / "bank.lvib"
    save_bank(bank3, path)
    raw = path.read_bytes()

    truncated = tmp_path / "short.lvib"
    truncated.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(ValueError):
        load_bank(truncated)

    padded = tmp_path / "long.lvib"
    padded.write_bytes(raw + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_bank(padded)

    bad_magic = tmp_path / "magic.lvib"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        load_bank(bad_magic)


def test_load_rejects_wrong_spec(tmp_path, spec3, bank3):
    path = tmp_path / "bank.lvib"
    save_bank(bank3, path)
    other = ProblemSpec(alpha=0.65, gamma_bar=1.0, dim=3,
                        lambdas=np.array([1.0, 4.0, 9.0]), sigmas=np.ones(3),
                        horizon=1.0)
    with pytest.raises(ValueError, match="spec"):
        load_bank(path, expected_spec=other)


def test_file_layout_golden(tmp_path, spec3, bank3):
    # Parse the file with struct/frombuffer only, no bank code, to pin the
    # on-disk layout: header then three contiguous little-endian sections.
    path = tmp_path / "bank.lvib"
    save_bank(bank3, path)
    raw = path.read_bytes()
    head = struct.calcsize(HEADER_FMT)
    assert head == 100
    (magic, version, spec_hash, d_fine, d_coarse, horizon,
     dim, m_sub, m_ou, seed, precision) = struct.unpack(HEADER_FMT, raw[:head])
    assert magic == MAGIC == b"LVIB"
    assert version == FORMAT_VERSION == 1
    assert spec_hash == spec3.content_hash()
    assert (d_fine, d_coarse, horizon) == (1e-3, 1e-2, 1.0)
    assert (dim, m_sub, m_ou, seed, precision) == (3, 400, 400, 99, 8)

    n_fine, n_chk = 1001, 101
    sizes = [m_sub * n_fine * 8, m_ou * n_fine * 8, m_ou * n_chk * dim * 8]
    assert len(raw) == head + sum(sizes)
    off = head
    sub = np.frombuffer(raw, dtype="<f8", count=m_sub * n_fine, offset=off)
    off += sizes[0]
    clocks = np.frombuffer(raw, dtype="<f8", count=m_ou * n_fine, offset=off)
    off += sizes[1]
    chk = np.frombuffer(raw, dtype="<f8", count=m_ou * n_chk * dim, offset=off)
    assert np.array_equal(sub.reshape(m_sub, n_fine), bank3.sub_values)
    assert np.array_equal(clocks.reshape(m_ou, n_fine), bank3.record_clock_values)
    assert np.array_equal(chk.reshape(m_ou, n_chk, dim), bank3.record_checkpoints)
