import numpy as np
import pytest

from motiondc.acquisition import (ScanOrder, analog_scan_order, biot_savart_maps, build_scan_order,
                                  center_rank_columns, check_maps, coil_combine, coil_project,
                                  format_scan_order, load_scan_order, parse_scan_order,
                                  save_scan_order)
from motiondc.numerics import fft2_centered, ifft2_centered


def random_maps(rng, n_coils, shape):
    raw = rng.standard_normal((n_coils, *shape)) + 1j * rng.standard_normal((n_coils, *shape))
    return raw / np.sqrt(np.sum(np.abs(raw) ** 2, axis=0))


def test_fs256_starts_at_zero_frequency():
    order = build_scan_order("FS256")
    assert order.columns[0] == 128
    assert order.t_center == 0


def test_fs260_covers_every_column_once():
    order = build_scan_order("FS260")
    assert sorted(order.columns.tolist()) == list(range(260))
    assert order.columns[0] == 130
    assert order.t_center == 0


def test_us260_has_133_distinct_columns():
    order = build_scan_order("US260")
    assert len(order) == 133
    assert len(set(order.columns.tolist())) == 133
    assert order.columns[order.t_center] == 130
    # dense center: the 64 most central columns are all present
    assert set(center_rank_columns(260)[:64]) <= set(order.columns.tolist())


def test_center_out_alternates_positive_side_first():
    assert center_rank_columns(8).tolist() == [4, 5, 3, 6, 2, 7, 1, 0]


@pytest.mark.parametrize("kind", ["FS256", "FS260", "US260"])
def test_builtin_orders_are_valid_injections(kind):
    order = build_scan_order(kind)
    again = ScanOrder(order.kind, order.n_columns, order.columns.copy())
    assert again == order
    assert [t for t, _ in order.timings] == list(range(len(order)))


def test_unsupported_width_rejected():
    with pytest.raises(ValueError):
        build_scan_order("FS256", 260)
    with pytest.raises(ValueError):
        build_scan_order("Custom", 64)


def test_analog_orders_keep_fractions():
    fs = analog_scan_order("FS", 64)
    assert len(fs) == 64 and fs.t_center == 0
    us = analog_scan_order("US", 64)
    assert len(us) == 16 + 17
    assert us.t_center == 0


def test_round_trip_through_file(tmp_path):
    order = build_scan_order("FS256")
    path = tmp_path / "fs256.txt"
    save_scan_order(order, path)
    loaded = load_scan_order(path)
    assert loaded.timings == order.timings
    assert format_scan_order(loaded) == path.read_text()


def test_t_center_is_looked_up():
    cols = list(range(256))
    cols[5], cols[128] = 128, 5
    text = "scanorder v1 kind=FS256 width=256\n" + "".join(f"{t},{c}\n" for t, c in enumerate(cols))
    assert parse_scan_order(text).t_center == 5


def test_duplicate_column_rejected():
    text = "scanorder v1 kind=Custom width=16\n0,8\n1,7\n2,7\n"
    with pytest.raises(ValueError, match="more than once"):
        parse_scan_order(text)


def test_missing_center_in_fs_kind_rejected():
    text = "scanorder v1 kind=FS256 width=4\n0,0\n1,1\n2,3\n3,3\n"
    with pytest.raises(ValueError):
        parse_scan_order(text)
    partial = "scanorder v1 kind=Custom width=4\n0,0\n1,1\n"
    assert parse_scan_order(partial).t_center is None


def test_bad_header_rejected():
    with pytest.raises(ValueError):
        parse_scan_order("order v2\n0,1\n")


@pytest.mark.parametrize("n_coils", [1, 3, 8])
def test_maps_are_normalized(n_coils):
    maps = biot_savart_maps(32, 40, n_coils)
    assert maps.shape == (n_coils, 32, 40)
    np.testing.assert_allclose(np.sum(np.abs(maps) ** 2, axis=0), 1.0, atol=1e-6)
    check_maps(maps)


def test_single_coil_has_unit_magnitude():
    np.testing.assert_allclose(np.abs(biot_savart_maps(24, 24, 1)), 1.0, atol=1e-12)


def test_opposite_coils_are_related_by_half_turn():
    maps = biot_savart_maps(64, 64, 8)
    for i in range(4):
        np.testing.assert_allclose(maps[i], np.rot90(maps[i + 4], 2), atol=1e-6)


def test_maps_are_deterministic():
    assert np.array_equal(biot_savart_maps(32, 32, 4), biot_savart_maps(32, 32, 4))


def test_map_arguments_validated():
    with pytest.raises(ValueError):
        biot_savart_maps(0, 8, 2)
    with pytest.raises(ValueError):
        biot_savart_maps(8, 8, 0)


def test_single_unit_coil_projection_is_plain_fft():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    ones = np.ones((1, 16, 16), complex)
    k = coil_project(x, ones, analog_scan_order("FS", 16))
    np.testing.assert_allclose(k[0], fft2_centered(x), atol=1e-13)
    np.testing.assert_allclose(coil_combine(k, ones), ifft2_centered(k[0]), atol=1e-13)


def test_us260_projection_zeroes_unsampled_columns():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((16, 260)) + 0j
    maps = random_maps(rng, 2, (16, 260))
    k = coil_project(x, maps, build_scan_order("US260"))
    zero_cols = np.all(k == 0, axis=(0, 1))
    assert zero_cols.sum() == 127


def test_zero_inputs():
    maps = biot_savart_maps(16, 16, 2)
    assert not np.any(coil_project(np.zeros((16, 16)), maps))
    assert not np.any(coil_combine(np.zeros((2, 16, 16)), maps))


@pytest.mark.parametrize("seed", range(5))
def test_combine_is_left_inverse_of_project(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((24, 20)) + 1j * rng.standard_normal((24, 20))
    maps = random_maps(rng, 5, (24, 20))
    back = coil_combine(coil_project(x, maps, analog_scan_order("FS", 20)), maps)
    assert np.linalg.norm(back - x) / np.linalg.norm(x) <= 1e-10


def test_shape_and_coil_mismatch():
    maps = biot_savart_maps(16, 16, 2)
    with pytest.raises(ValueError):
        coil_project(np.zeros((16, 8)), maps)
    with pytest.raises(ValueError):
        coil_combine(np.zeros((3, 16, 16)), maps)
