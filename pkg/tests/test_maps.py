import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rigidlab import geometry as geo
from rigidlab import maps
from rigidlab.algebra import dist_to_so, random_rotation
from rigidlab.errors import ConfigError, DimensionError, OutOfChartError
from rigidlab.geometry import ChartGrid
from rigidlab.maps import DiscreteMap

UNIT = ChartGrid.box(9)


def test_map_construction_and_masks():
    f = DiscreteMap.identity(UNIT)
    assert f.values.shape == (9, 9, 2)
    assert f.boundary_mask.sum() == 32
    assert f.free_mask().sum() == 49
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0  # immutable
    with pytest.raises(DimensionError):
        DiscreteMap(UNIT, np.zeros((3, 3, 2)))
    bad = np.zeros((9, 9, 2))
    bad[1, 1, 0] = np.nan
    with pytest.raises(ConfigError):
        DiscreteMap(UNIT, bad)


def test_json_round_trip(rng):
    f = DiscreteMap(UNIT, rng.standard_normal((9, 9, 2)) * 1e3, rng.random((9, 9)) < 0.3)
    g = DiscreteMap.from_json(f.to_json())
    assert g.source == f.source
    assert np.all(np.abs(g.values - f.values) <= 1e-15 * np.abs(f.values))
    assert np.array_equal(g.boundary_mask, f.boundary_mask)
    with pytest.raises(ConfigError):
        DiscreteMap.from_dict({**f.to_dict(), "format": "other/2"})


# --- differential_at -----------------------------------------------------------------

def test_differential_identity_exact():
    f = DiscreteMap.identity(UNIT)
    for cell in [(0, 0), (3, 5), (7, 7)]:
        assert np.array_equal(maps.differential_at(f, cell, (0.21, 0.79)), np.eye(2))


@given(arrays(np.float64, (2, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, 2, elements=st.floats(-3, 3)),
       st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_differential_affine_exact(A, b, loc):
    f = DiscreteMap.from_function(UNIT, lambda x: x @ A.T + b)
    D = maps.differential_at(f, (2, 6), loc)
    assert np.allclose(D, A, atol=1e-13)


def test_differential_affine_3d(rng):
    grid = ChartGrid.box(5, dim=3)
    A, b = rng.standard_normal((3, 3)), rng.standard_normal(3)
    f = DiscreteMap.from_function(grid, lambda x: x @ A.T + b)
    assert np.allclose(maps.differential_at(f, (1, 2, 3), (0.3, 0.6, 0.1)), A, atol=1e-13)


def test_differential_smooth_oracle():
    # h = 1/64 with (0.5, 0.5) at the centre of cell (32, 32)
    grid = ChartGrid.box(66, 0.5 - 32.5 / 64, 0.5 + 32.5 / 64)
    f = DiscreteMap.from_function(grid, lambda x: np.stack([x[:, 0] ** 2, x[:, 1]], axis=-1))
    x, _ = maps.point_at(f, (32, 32), (0.5, 0.5))
    assert np.allclose(x, 0.5, atol=1e-15)
    D = maps.differential_at(f, (32, 32), (0.5, 0.5))
    assert np.allclose(D, [[1.0, 0.0], [0.0, 1.0]], atol=5e-4)


def test_differential_second_order_at_centres():
    fn = lambda x: np.stack([np.sin(x[:, 0] + 2 * x[:, 1]), x[:, 0] * np.exp(x[:, 1])], -1)  # noqa: E731

    def exact(x):
        c = np.cos(x[0] + 2 * x[1])
        return np.array([[c, 2 * c], [np.exp(x[1]), x[0] * np.exp(x[1])]])

    errs = []
    for n in (9, 17, 33, 65):
        grid = ChartGrid.box(n)
        f = DiscreteMap.from_function(grid, fn)
        cell = ((n - 1) // 4, (n - 1) // 2)
        x, _ = maps.point_at(f, cell, (0.5, 0.5))
        errs.append(np.abs(maps.differential_at(f, cell, (0.5, 0.5)) - exact(x)).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_differential_bad_cell():
    f = DiscreteMap.identity(UNIT)
    with pytest.raises(DimensionError):
        maps.differential_at(f, (8, 0), (0.5, 0.5))
    with pytest.raises(DimensionError):
        maps.differential_at(f, (0, 0), (1.5, 0.5))


def test_quadrature_differentials_match_pointwise(rng):
    f = DiscreteMap(UNIT, UNIT.node_coords() + 0.05 * rng.standard_normal((9, 9, 2)))
    q = geo.build_quadrature(UNIT, 2)
    _, Df = maps.evaluate(f, q)
    for k in rng.integers(0, q.size, 10):
        cell = np.unravel_index(q.cell[k], UNIT.cells)
        assert np.allclose(Df[k], maps.differential_at(f, cell, q.local[k]), atol=1e-13)


# --- pullback metric ----------------------------------------------------------------------

def test_pullback_examples():
    eu = geo.euclidean(ChartGrid.box(3, -1.0, 3.0))
    f = DiscreteMap.identity(UNIT)
    assert np.allclose(maps.pullback_metric_at(f, eu, (1, 1), (0.5, 0.5)), np.eye(2))
    f2 = DiscreteMap.from_function(UNIT, lambda x: 2 * x)
    assert np.allclose(maps.pullback_metric_at(f2, eu, (3, 3), (0.2, 0.2)), 4 * np.eye(2))
    striped = geo.striped(ChartGrid.box(11), 10, 0.1, 0.0)
    f = DiscreteMap.identity(ChartGrid.box(11))
    # cell 1 spans [0.1, 0.2]; local 0 lies on the stripe around 0.1
    assert np.allclose(maps.pullback_metric_at(f, striped, (1, 5), (0.02, 0.0)), 0.1 * np.eye(2))


def test_pullback_identity_is_metric(rng):
    grid = ChartGrid.box(9, -0.8, 0.8)
    sph = geo.sphere_conformal(grid)
    f = DiscreteMap.identity(grid)
    for _ in range(10):
        cell = tuple(rng.integers(0, 8, 2))
        loc = rng.random(2)
        x, _ = maps.point_at(f, cell, loc)
        assert np.allclose(maps.pullback_metric_at(f, sph, cell, loc), geo.metric_at(sph, x), rtol=1e-12)


def test_pullback_psd_and_out_of_chart(rng):
    eu = geo.euclidean(ChartGrid.box(3, -5.0, 5.0))
    f = DiscreteMap(UNIT, rng.standard_normal((9, 9, 2)))
    M = maps.pullback_metric_at(f, eu, (4, 4), (0.3, 0.3))
    assert np.allclose(M, M.T) and np.all(np.linalg.eigvalsh(M) >= -1e-12)
    far = DiscreteMap.from_function(UNIT, lambda x: x + 10.0)
    with pytest.raises(OutOfChartError):
        maps.pullback_metric_at(far, eu, (0, 0), (0.5, 0.5))


# --- pointwise distortion ------------------------------------------------------------------

def test_distortion_examples():
    unit11 = ChartGrid.box(11)
    f = DiscreteMap.identity(unit11)
    eu = geo.euclidean(unit11)
    assert maps.pointwise_distortion(maps.jet_at(f, eu, eu, (2, 3), (0.5, 0.5))) < 1e-14
    striped = geo.striped(unit11, 10, 0.1, 0.0)
    jet = maps.jet_at(f, eu, striped, (1, 5), (0.01, 0.5))
    assert maps.pointwise_distortion(jet) == pytest.approx(np.sqrt(2) * (1 - np.sqrt(0.1)), rel=1e-12)
    assert jet.weight > 0
    jet = maps.QuadPointJet(np.zeros(2), 1.0, np.eye(2), np.eye(2), np.diag([2.0, 1.0]))
    assert maps.pointwise_distortion(jet) == pytest.approx(1.0)


def test_distortion_invariant_under_target_rotation(rng):
    grid = ChartGrid.box(9, -0.5, 0.5)
    target_chart = ChartGrid.box(3, -2.0, 2.0)
    R = random_rotation(rng, 2)

    def metric(pts):
        x, y = pts[:, 0], pts[:, 1]
        a = 1.0 + 0.3 * x * x
        return np.stack([np.stack([a, 0.2 * y], -1), np.stack([0.2 * y, 1.5 + 0 * x], -1)], -2)

    h = geo.MetricField(target_chart, metric, label="h")
    # the same metric, seen through rotated target coordinates z = R y
    h_rot = geo.MetricField(target_chart, lambda z: R @ metric(z @ R) @ R.T, label="h_rot")
    vals = grid.node_coords() + 0.1 * np.sin(3 * grid.node_coords()[..., ::-1])
    f = DiscreteMap(grid, vals)
    f_rot = DiscreteMap(grid, vals @ R.T)
    g = geo.sphere_conformal(grid)
    for cell in [(0, 0), (3, 4), (7, 2)]:
        a = maps.pointwise_distortion(maps.jet_at(f, g, h, cell, (0.3, 0.7)))
        b = maps.pointwise_distortion(maps.jet_at(f_rot, g, h_rot, cell, (0.3, 0.7)))
        assert a == pytest.approx(b, abs=1e-10)


def test_batched_jets_agree(rng):
    grid = ChartGrid.box(5, -0.5, 0.5)
    g = geo.sphere_conformal(grid)
    h = geo.euclidean(ChartGrid.box(3, -2.0, 2.0))
    f = DiscreteMap(grid, grid.node_coords() * 1.3)
    q = geo.build_quadrature(grid, 2)
    jets, clamped = maps.jets(f, g, h, q)
    assert clamped == 0
    d = maps.pointwise_distortion(jets)
    ref = dist_to_so(jets.Df, jets.G, jets.Hf)
    assert np.array_equal(d, ref)


def test_target_points_clamp():
    h = geo.euclidean(ChartGrid.box(3))
    y = np.array([[0.5, 0.5], [1.5, -0.5]])
    with pytest.raises(OutOfChartError):
        maps.target_points(y, h)
    yc, n = maps.target_points(y, h, clamp=True)
    assert n == 1 and yc[1].tolist() == [1.0, 0.0]


# --- refine ------------------------------------------------------------------------------------

def test_refine_affine_exact(rng):
    A, b = rng.standard_normal((2, 2)), rng.standard_normal(2)
    f = DiscreteMap.from_function(UNIT, lambda x: x @ A.T + b)
    r = maps.refine(f)
    assert r.source.nodes == (17, 17)
    ref = DiscreteMap.from_function(r.source, lambda x: x @ A.T + b)
    assert np.allclose(r.values, ref.values, atol=1e-14)
    assert np.array_equal(r.values[::2, ::2], f.values)
    assert np.array_equal(r.boundary_mask, r.source.boundary_mask())
    ident = maps.refine(DiscreteMap.identity(UNIT))
    assert np.allclose(ident.values, r.source.node_coords(), atol=1e-15)


def test_refine_custom_mask():
    mask = np.zeros((9, 9), bool)
    mask[0, :] = True
    r = maps.refine(DiscreteMap(UNIT, UNIT.node_coords(), mask))
    assert r.boundary_mask[0].all() and not r.boundary_mask[1:].any()


def test_refine_smooth_second_order():
    fn = lambda x: np.stack([np.sin(2 * x[:, 0]) * x[:, 1], np.exp(x[:, 0] * x[:, 1])], -1)  # noqa: E731
    errs = []
    for n in (5, 9, 17, 33):
        r = maps.refine(DiscreteMap.from_function(ChartGrid.box(n), fn))
        exact = fn(r.source.node_coords().reshape(-1, 2)).reshape(r.values.shape)
        errs.append(np.abs(r.values - exact).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)
