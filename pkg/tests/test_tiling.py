import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshseg.engine import FeatureMap, argmax_labels, run_model, unlimited_budget
from meshseg.errors import BadCubeSize, GapDetected, OverlapDetected
from meshseg.model import exact_halo, receptive_field
from meshseg.tiling import divide, infer_tiled, merge_labels

from test_model import gwm_model, toy_model


def test_divide_exact():
    grid = divide((256, 256, 256), 64, 0)
    assert len(grid.tiles) == 64
    assert all(t.core_extents == (64, 64, 64) for t in grid.tiles)
    assert all(t.padded_extents == t.core_extents for t in grid.tiles)


def test_divide_halo_clamping():
    grid = divide((256, 256, 256), 64, 46)
    assert len(grid.tiles) == 64
    interior = [t for t in grid.tiles
                if all(0 < o and o + c < 256 for o, c in zip(t.core_origin, t.core_extents))]
    corner = grid.tiles[0]
    assert interior and all(t.padded_extents == (156, 156, 156) for t in interior)
    assert corner.padded_extents == (110, 110, 110)


def test_divide_ragged_boundary():
    grid = divide((100, 100, 100), 64, 0)
    assert len(grid.tiles) == 8
    sizes = sorted({t.core_extents for t in grid.tiles})
    assert sizes == [(36, 36, 36), (36, 36, 64), (36, 64, 36), (36, 64, 64),
                     (64, 36, 36), (64, 36, 64), (64, 64, 36), (64, 64, 64)]


def test_divide_bad_cube():
    with pytest.raises(BadCubeSize):
        divide((10, 10, 10), 0, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 90), st.integers(1, 90), st.integers(1, 90), st.integers(1, 40),
       st.integers(0, 10))
def test_cores_partition_exactly(nx, ny, nz, cube, halo):
    grid = divide((nx, ny, nz), cube, halo)
    cover = np.zeros((nx, ny, nz), np.int32)
    for t in grid.tiles:
        sl = tuple(slice(o, o + c) for o, c in zip(t.core_origin, t.core_extents))
        cover[sl] += 1
        # padded region contains the core and stays inside the volume
        assert all(p <= o for p, o in zip(t.padded_origin, t.core_origin))
        assert all(po + pe <= n for po, pe, n in
                   zip(t.padded_origin, t.padded_extents, (nx, ny, nz)))
        assert all(po + pe >= o + c for po, pe, o, c in
                   zip(t.padded_origin, t.padded_extents, t.core_origin, t.core_extents))
    assert cover.min() == 1 and cover.max() == 1


def test_tiled_exact_with_sufficient_halo(rng):
    m = toy_model(dilations=(1, 2, 1), channels=2)  # receptive field 9
    assert receptive_field(m) == (9, 9, 9)
    x = rng.random((1, 24, 24, 24)).astype(np.float32)
    full = run_model(m, FeatureMap(x.copy()), unlimited_budget())
    grid = divide((24, 24, 24), 12, exact_halo(m))
    tiled = infer_tiled(m, FeatureMap(x.copy()), grid, unlimited_budget())
    assert tiled.data.tobytes() == full.data.tobytes()


def test_tiled_halo_zero_interior_matches(rng):
    m = toy_model(dilations=(1, 2, 1), channels=2)
    r = exact_halo(m)  # 4
    x = rng.random((1, 24, 24, 24)).astype(np.float32)
    full = run_model(m, FeatureMap(x.copy()), unlimited_budget())
    grid = divide((24, 24, 24), 12, 0)
    tiled = infer_tiled(m, FeatureMap(x.copy()), grid, unlimited_budget())
    full_lab = argmax_labels(full).data
    tile_lab = argmax_labels(tiled).data
    interior = np.zeros((24, 24, 24), bool)
    for t in grid.tiles:
        sl = tuple(slice(o + r, o + c - r) for o, c in zip(t.core_origin, t.core_extents))
        interior[sl] = True
    assert np.array_equal(full_lab[interior], tile_lab[interior])
    # the halo-0 failsafe sees zeros instead of context at core faces, so the
    # raw scores there disagree with the full-volume run
    assert not np.array_equal(full.data, tiled.data)
    boundary_scores_equal = np.isclose(full.data[:, ~interior.T], tiled.data[:, ~interior.T])
    assert not boundary_scores_equal.all()


def test_single_tile_degenerates_to_run_model(rng):
    m = toy_model()
    x = rng.random((1, 10, 10, 10)).astype(np.float32)
    grid = divide((10, 10, 10), 10, 0)
    assert len(grid.tiles) == 1
    tiled = infer_tiled(m, FeatureMap(x.copy()), grid, unlimited_budget())
    full = run_model(m, FeatureMap(x.copy()), unlimited_budget())
    assert tiled.data.tobytes() == full.data.tobytes()


def test_tiled_peak_memory_is_per_tile(rng):
    m = gwm_model()
    x = rng.random((1, 32, 32, 32)).astype(np.float32)
    b_full = unlimited_budget()
    run_model(m, FeatureMap(x.copy()), b_full)
    b_tiled = unlimited_budget()
    infer_tiled(m, FeatureMap(x.copy()), divide((32, 32, 32), 16, 0), b_tiled)
    assert b_tiled.high_water < b_full.high_water
    pad_act = 5 * 16 ** 3 * 4
    assert b_tiled.high_water <= m.weights.nbytes + 2 * pad_act


def test_merge_labels_blockwise():
    tiles = []
    k = 0
    for ox in (0, 2):
        for oy in (0, 2):
            for oz in (0, 2):
                tiles.append((((ox, oy, oz), (2, 2, 2)), np.full((2, 2, 2), k, np.int32)))
                k += 1
    vol = merge_labels(tiles, (4, 4, 4))
    assert vol.data[0, 0, 0] == 0
    assert vol.data[3, 3, 3] == 7
    assert vol.data[3, 0, 0] == 4


def test_merge_labels_gap_and_overlap():
    full = (((0, 0, 0), (2, 2, 2)), np.zeros((2, 2, 2), np.int32))
    with pytest.raises(GapDetected):
        merge_labels([full], (4, 2, 2))
    with pytest.raises(OverlapDetected):
        merge_labels([full, full], (2, 2, 2))
