from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cqitestbed.cqimap import (
    DEFAULT_TABLE,
    DEFAULT_THRESHOLDS,
    CqiTable,
    cqi_to_efficiency,
    load_table,
    map_grid,
    parse_table,
    sinr_to_cqi,
    sinr_to_cqi_array,
)
from cqitestbed.gridio import CqiGrid

from conftest import make_grid


@pytest.mark.parametrize("sinr,cqi", [(-10.0, 0), (0.2, 4), (23.0, 15), (-6.7, 1), (22.7, 15), (5.0, 6)])
def test_examples(sinr, cqi):
    assert sinr_to_cqi(sinr) == cqi


@pytest.mark.parametrize("i", range(1, 16))
def test_threshold_boundaries(i):
    t = DEFAULT_THRESHOLDS[i - 1]
    assert sinr_to_cqi(t) == i
    assert sinr_to_cqi(t - 1e-9) == i - 1


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ValueError):
        sinr_to_cqi(bad)
    with pytest.raises(ValueError):
        sinr_to_cqi_array([1.0, bad])


@settings(max_examples=500, deadline=None)
@given(st.floats(-60, 60), st.floats(-60, 60))
def test_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert sinr_to_cqi(lo) <= sinr_to_cqi(hi)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-60, 60), min_size=1, max_size=50))
def test_array_matches_scalar(xs):
    assert sinr_to_cqi_array(xs).tolist() == [sinr_to_cqi(x) for x in xs]


def test_efficiency():
    assert cqi_to_efficiency(0) == 0.0
    effs = [cqi_to_efficiency(i) for i in range(16)]
    assert all(a <= b for a, b in zip(effs, effs[1:]))
    assert cqi_to_efficiency(15) == pytest.approx(5.5547)
    for bad in (16, -1, 2.5):
        with pytest.raises(ValueError):
            cqi_to_efficiency(bad)


def test_map_grid_examples():
    out = map_grid(make_grid([[-10, 0.2], [23, 5.0]]))
    assert isinstance(out, CqiGrid)
    assert out.as_int().tolist() == [[0, 4], [15, 6]]
    assert np.all(map_grid(make_grid(np.full((3, 4), 100.0))).data == 15)
    assert np.all(map_grid(make_grid(np.full((3, 4), -100.0))).data == 0)


def test_map_grid_preserves_shape_and_meta():
    g = make_grid(np.random.default_rng(0).uniform(-20, 40, (1000, 50)), name="m", dt_ms=0.5)
    out = map_grid(g)
    assert out.data.shape == (1000, 50)
    assert out.meta == g.meta and out.dt_ms == 0.5


def test_map_grid_commutes_with_transpose():
    data = np.random.default_rng(1).uniform(-20, 40, (7, 5))
    a = map_grid(make_grid(data)).as_int().T
    b = map_grid(make_grid(data.T)).as_int()
    assert np.array_equal(a, b)


@pytest.mark.parametrize(
    "th,eff",
    [
        (DEFAULT_THRESHOLDS[:-1], DEFAULT_TABLE.efficiencies),
        (DEFAULT_THRESHOLDS[::-1], DEFAULT_TABLE.efficiencies),
        (DEFAULT_THRESHOLDS, (0.1,) + DEFAULT_TABLE.efficiencies[1:]),
        (DEFAULT_THRESHOLDS, DEFAULT_TABLE.efficiencies[::-1]),
    ],
)
def test_table_validation(th, eff):
    with pytest.raises(ValueError):
        CqiTable(thresholds=th, efficiencies=eff)


def test_table_ini_roundtrip(tmp_path):
    shifted = CqiTable(thresholds=tuple(t + 1 for t in DEFAULT_THRESHOLDS))
    p = tmp_path / "t.ini"
    p.write_text(shifted.to_ini())
    assert load_table(p) == shifted
    assert sinr_to_cqi(0.2, shifted) == 3


def test_bundled_table_matches_default():
    text = resources.files("cqitestbed.presets").joinpath("cqi_table.ini").read_text()
    assert parse_table(text) == DEFAULT_TABLE
