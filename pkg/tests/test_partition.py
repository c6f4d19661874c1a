import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_mask, random_maps
from motiondc.acquisition import analog_scan_order, build_scan_order, coil_project, column_ranks
from motiondc.motion import MotionConfig, MotionTrace, pose_intervals, sample_motion_trace, synth_phantom
from motiondc.numerics import RigidTransform
from motiondc.partition import data_consistency, dc_linear, select_dp, split, zero_filled_recon


def inner(a, b):
    return np.vdot(b, a)  # <a, b> = sum a * conj(b)


def trace_at(*ts):
    return MotionTrace(ts, tuple(RigidTransform(0.01 * (i + 1)) for i in range(len(ts))))


def test_dp_is_initial_pose_for_late_motion():
    order = build_scan_order("FS260")
    sel = select_dp(order, trace_at(87))
    assert sel.pose_index == 0
    assert sel.center_coverage == 32
    assert sel.mask.sum() == 87


def test_dp_switches_for_very_early_motion():
    order = build_scan_order("FS260")
    ranks = column_ranks(260)
    pose1_band = int(np.count_nonzero(ranks[order.columns[1:]] < 32))
    assert pose1_band == 31
    sel = select_dp(order, trace_at(1))
    assert sel.pose_index == 1 and sel.center_coverage == 31


def test_no_motion_selects_everything_sampled():
    order = build_scan_order("US260")
    sel = select_dp(order, MotionTrace())
    assert sel.pose_index == 0
    assert np.array_equal(sel.mask, order.sampled())


def test_ties_go_to_larger_then_earlier_pose():
    order = analog_scan_order("FS", 32)
    # band 2: ranks 0 and 1 split between pose 0 and pose 1
    sel = select_dp(order, trace_at(1), band=2)
    assert sel.pose_index == 1  # more columns overall
    sel = select_dp(order, trace_at(1, 2), band=2)
    assert sel.pose_index == 0  # poses 0 and 1 tie on band and size, earlier wins
    sel = select_dp(order, trace_at(1, 31), band=2)
    assert sel.pose_index == 1


def test_dp_ignores_transforms():
    order = build_scan_order("FS256")
    a = MotionTrace((50, 100), (RigidTransform(0.1), RigidTransform(-0.1, 2, 3)))
    b = MotionTrace((50, 100), (RigidTransform(), RigidTransform(0.0, -4, 1)))
    assert np.array_equal(select_dp(order, a).mask, select_dp(order, b).mask)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["FS256", "FS260", "US260"]))
def test_mask_equals_dp_pose_interval(seed, kind):
    order = build_scan_order(kind)
    trace = sample_motion_trace(np.random.default_rng(seed), order)
    sel = select_dp(order, trace)
    cols = dict(pose_intervals(order, trace))[sel.pose_index]
    assert set(np.flatnonzero(sel.mask).tolist()) == set(cols.tolist())
    assert np.all(sel.mask <= order.sampled())


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_split_is_exact_partition(seed):
    rng = np.random.default_rng(seed)
    k = rng.standard_normal((3, 8, 12)) + 1j * rng.standard_normal((3, 8, 12))
    m = random_mask(rng, 12)
    k_dp, k_rp = split(k, m)
    assert np.array_equal(k_dp + k_rp, k)
    assert not np.any(k_dp[..., m == 0]) and not np.any(k_rp[..., m == 1])


def test_split_extremes_and_errors(rng):
    k = rng.standard_normal((2, 4, 6)) + 0j
    assert not np.any(split(k, np.ones(6))[1])
    assert not np.any(split(k, np.zeros(6))[0])
    with pytest.raises(ValueError):
        split(k, np.ones(5))
    with pytest.raises(ValueError):
        split(k, np.full(6, 0.5))


def test_zero_filled_full_mask_recovers_source(rng):
    x = synth_phantom(2, 32, 32).image
    maps = random_maps(rng, 4, (32, 32))
    out = zero_filled_recon(coil_project(x, maps), maps)
    assert np.linalg.norm(out - x) / np.linalg.norm(x) <= 1e-10
    assert not np.any(zero_filled_recon(np.zeros((4, 32, 32)), maps))


def test_zero_filled_half_mask_point_spread():
    h, w = 8, 10
    x = np.zeros((h, w), complex)
    x[3, 6] = 1.0
    maps = np.ones((1, h, w), complex)
    m = np.array([1, 0] * 5, dtype=float)
    k_dp, _ = split(coil_project(x, maps), m)
    out = zero_filled_recon(k_dp, maps)
    # direct inverse DFT of the masked spectrum of an impulse
    kx = np.arange(w) - w // 2
    expected = np.zeros((h, w), complex)
    for c in range(w):
        expected[3, c] = sum(m[j] * np.exp(2j * np.pi * kx[j] * (c - 6) / w) for j in range(w)) / w
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_dc_zero_mask_is_identity(rng):
    x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    maps = random_maps(rng, 3, (16, 16))
    out = data_consistency(x, np.zeros(16), np.zeros((3, 16, 16)), maps)
    assert np.linalg.norm(out - x) / np.linalg.norm(x) <= 1e-10


def test_dc_full_mask_ignores_estimate(rng):
    maps = random_maps(rng, 3, (16, 16))
    k = rng.standard_normal((3, 16, 16)) + 1j * rng.standard_normal((3, 16, 16))
    x = rng.standard_normal((16, 16)) + 0j
    out = data_consistency(x, np.ones(16), k, maps)
    np.testing.assert_allclose(out, zero_filled_recon(k, maps), atol=1e-12)


def test_dc_fixed_point(rng):
    order = analog_scan_order("FS", 32)
    x = synth_phantom(4, 32, 32).image
    maps = random_maps(rng, 4, (32, 32))
    m = random_mask(rng, 32)
    k_dp, _ = split(coil_project(x, maps, order), m)
    out = data_consistency(x, m, k_dp, maps)
    assert np.linalg.norm(out - x) / np.linalg.norm(x) <= 1e-10


def test_dc_affine_superposition(rng):
    maps = random_maps(rng, 3, (16, 16))
    m = random_mask(rng, 16)
    k_dp, _ = split(rng.standard_normal((3, 16, 16)) + 0j, m)
    u, v = (rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16)) for _ in range(2))
    a, b = 0.7 - 0.2j, -1.3 + 0.5j
    base = data_consistency(np.zeros((16, 16)), m, k_dp, maps)
    lhs = data_consistency(a * u + b * v, m, k_dp, maps) - base
    rhs = a * dc_linear(u, m, maps) + b * dc_linear(v, m, maps)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_dc_linear_part_is_self_adjoint(rng):
    maps = random_maps(rng, 3, (16, 12))
    m = random_mask(rng, 12)
    u, v = (rng.standard_normal((16, 12)) + 1j * rng.standard_normal((16, 12)) for _ in range(2))
    lhs = inner(dc_linear(u, m, maps), v)
    rhs = inner(u, dc_linear(v, m, maps))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_dc_rejects_data_off_mask(rng):
    maps = random_maps(rng, 2, (8, 8))
    m = np.zeros(8)
    m[:4] = 1
    with pytest.raises(ValueError, match="outside the mask"):
        data_consistency(np.zeros((8, 8)), m, np.ones((2, 8, 8)), maps)
    with pytest.raises(ValueError):
        data_consistency(np.zeros((8, 6)), m, np.zeros((2, 8, 8)), maps)


def test_motion_sample_dp_mask_uses_timings_only():
    order = analog_scan_order("FS", 64)
    rng = np.random.default_rng(5)
    for _ in range(50):
        tr = sample_motion_trace(rng, order, MotionConfig(max_shift=1.25))
        sel = select_dp(order, tr, band=8)
        assert sel.pose_index == 0  # t1 >= t_min = 8 keeps the 8-column band in pose 0
