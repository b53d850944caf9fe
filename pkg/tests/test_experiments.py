import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rigidlab import experiments as ex
from rigidlab import geometry as geo
from rigidlab.errors import ConfigError, DimensionError, OutOfChartError
from rigidlab.geometry import ChartGrid
from rigidlab.maps import DiscreteMap


def test_loglog_slope():
    x = np.array([5, 10, 20, 40])
    assert ex.loglog_slope(x, 3 * x**-0.5) == pytest.approx(-0.5)
    assert np.isnan(ex.loglog_slope(x, [1.0, 0.0, 1.0, 1.0]))


# --- convergence reports ----------------------------------------------------------------------

def test_identity_sequence_all_zero():
    chart = ChartGrid.box(5)
    metrics = [geo.euclidean(chart) for _ in range(3)]
    maps = [DiscreteMap.identity(chart) for _ in range(3)]
    rep = ex.pq_convergence_report(metrics, maps, maps, 2, 2, ns=[1, 2, 4])
    assert len(rep.rows) == 3
    for row in rep.rows:
        assert row[1:] == (0.0, 0.0, 0.0, 0.0) or max(row[1:]) < 1e-15


def test_striped_report_values():
    ns = [5, 10, 20, 40]
    metrics, fwd, inv = ex.striped_sequence(ns, 0.1, sigma=0.0)
    rep = ex.pq_convergence_report(metrics, fwd, inv, 2, 2)
    r10 = rep.row_for(10)
    # hand formulas: stripe union of measure 2/n - 1/n^2
    m = 2 / 10 - 1 / 100
    assert r10["forward"] == pytest.approx(np.sqrt(2 * (1 - np.sqrt(0.1)) ** 2 * m), rel=1e-10)
    assert r10["det_forward"] == pytest.approx(np.sqrt(0.81 * m), rel=1e-10)
    # the inverse integrates over the striped metric's volume
    assert r10["inverse"] == pytest.approx(np.sqrt(2 * (1 - 1 / np.sqrt(0.1)) ** 2 * 0.1 * m), rel=1e-10)
    assert r10["det_inverse"] == pytest.approx(np.sqrt((1 / 0.1 - 1) ** 2 * 0.1 * m), rel=1e-10)
    assert -0.7 <= rep.slopes["forward"] <= -0.3
    assert np.all(np.diff(rep.column("forward")) < 0)
    assert set(rep.to_dict()) == {"p", "q", "rows", "slopes"}


def test_striped_default_sigma_close_to_sharp():
    metrics, fwd, inv = ex.striped_sequence([10, 20], 0.1)
    rep = ex.pq_convergence_report(metrics, fwd, inv, 2, 2)
    sharp = np.sqrt(2 * (1 - np.sqrt(0.1)) ** 2 * 0.19)
    assert rep.row_for(10)["forward"] == pytest.approx(sharp, rel=0.1)


def test_report_validation():
    chart = ChartGrid.box(5)
    e = geo.euclidean(chart)
    f = DiscreteMap.identity(chart)
    with pytest.raises(ConfigError):
        ex.pq_convergence_report([e], [f, f], [f])
    with pytest.raises(ConfigError):
        ex.pq_convergence_report([e], [f], [f])  # no n recorded
    other = DiscreteMap.identity(ChartGrid.box(5, 0.0, 2.0))
    with pytest.raises(DimensionError):
        ex.pq_convergence_report([e], [f], [other], ns=[1])
    with pytest.raises(KeyError):
        ex.pq_convergence_report([e], [f], [f], ns=[1]).row_for(7)


# --- graph geodesics ------------------------------------------------------------------------------

UNIT = geo.euclidean(ChartGrid.box(3))


def test_geodesic_euclidean():
    assert ex.graph_geodesic(UNIT, (0, 0), (1, 0), 64) == pytest.approx(1.0, abs=1e-12)
    assert ex.graph_geodesic(UNIT, (0, 0), (1, 1), 64) == pytest.approx(np.sqrt(2), abs=1e-12)
    assert ex.graph_geodesic(UNIT, (0.5, 0.5), (0.5, 0.5), 64) == 0.0


def test_geodesic_metrication_bound():
    # 8-neighbour paths overestimate off-axis distances by at most ~8 %
    d = ex.graph_geodesic(UNIT, (0, 0), (1, 0.5), 64)
    exact = np.hypot(1, 0.5)
    assert exact <= d <= 1.09 * exact


def test_geodesic_scaled_metric():
    f = geo.MetricField(ChartGrid.box(3), lambda p: np.broadcast_to(4 * np.eye(2), (len(p), 2, 2)),
                        constant=True)
    assert ex.graph_geodesic(f, (0, 0), (1, 1), 32) == pytest.approx(2 * np.sqrt(2), rel=1e-12)


def test_geodesic_sphere_great_circle():
    # through the pole along a chart axis: arc length 2 R atan(r / R) on each side
    R = 1.0
    sph = geo.sphere_conformal(ChartGrid.box(3, -1.0, 1.0), R)
    d = ex.graph_geodesic(sph, (-1, 0), (1, 0), 256)
    assert d == pytest.approx(4 * R * np.arctan(1.0), rel=1e-4)


def test_geodesic_errors():
    with pytest.raises(ConfigError):
        ex.graph_geodesic(UNIT, (0, 0), (1, 1), 8)
    with pytest.raises(OutOfChartError):
        ex.graph_geodesic(UNIT, (0, 0), (1.5, 1), 32)
    with pytest.raises(DimensionError):
        ex.graph_geodesic(geo.euclidean(ChartGrid.box(3, dim=3)), (0, 0), (1, 1), 32)


STRIPES = geo.striped(ChartGrid.box(3), 4, 0.1, 0.0)
pt = st.tuples(st.floats(0, 1), st.floats(0, 1))


@settings(max_examples=20)
@given(pt, pt)
def test_geodesic_symmetric(a, b):
    d1 = ex.graph_geodesic(STRIPES, a, b, 32)
    d2 = ex.graph_geodesic(STRIPES, b, a, 32)
    assert d1 == pytest.approx(d2, abs=1e-12)


@settings(max_examples=20)
@given(pt, pt, pt)
def test_geodesic_triangle_inequality(a, b, c):
    ab = ex.graph_geodesic(STRIPES, a, b, 32)
    bc = ex.graph_geodesic(STRIPES, b, c, 32)
    ac = ex.graph_geodesic(STRIPES, a, c, 32)
    assert ac <= ab + bc + 1e-12


def test_striped_geodesic_shorter_than_euclidean():
    d = ex.graph_geodesic(geo.striped(ChartGrid.box(3), 10, 0.1, 0.0), (0, 0), (1, 1), 200)
    # along the edge stripes the cost is sqrt(eps) per unit length; shortcuts
    # through stripe crossings make the finite-n distance a little smaller
    taxi = 2 * np.sqrt(0.1)
    assert 0.9 * taxi <= d <= 1.01 * taxi
    assert d < 0.5 * np.sqrt(2)


# --- rigidity helpers ---------------------------------------------------------------------------

def test_rigid_fit_recovers_motion(rng):
    ang = 0.7
    R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    X = rng.random((30, 2))
    Rf, c, res = ex.rigid_fit(X, X @ R.T + [0.3, -1.0])
    assert np.allclose(Rf, R) and np.allclose(c, [0.3, -1.0]) and res < 1e-12
    # a reflection is not a rigid motion
    _, _, res = ex.rigid_fit(X, X * [-1, 1])
    assert res > 0.1


def test_reflection_bound():
    b = ex.reflection_energy_bound()
    # any map with mean Jacobian -1 costs at least b; the reflection itself costs 4
    assert 0.1 < b <= 4.0
    assert ex.reflection_energy_bound(area=2.0) == pytest.approx(2 * b)
    # the pointwise minimum over det = -1 dominates its convex envelope
    m = np.min(ex._profile(-1.0, np.geomspace(1e-3, 1e3, 20001)))
    assert b <= m + 1e-9


def test_profile_is_distance():
    from rigidlab.algebra import so_distance
    for delta, b in [(-1.0, 1.0), (2.0, 0.5), (-3.0, 2.0)]:
        ref = so_distance(np.diag([b, delta / b])) ** 2
        assert ex._profile(np.array(delta), np.array(b)) == pytest.approx(ref)


def test_boundary_maps():
    x = np.array([[0.0, 0.0], [1.0, 0.5]])
    assert np.array_equal(ex.boundary_map("identity")(x), x)
    assert np.allclose(ex.boundary_map("rotated", 0.0)(x), x)
    assert np.allclose(ex.boundary_map("reflected")(x), [[1.0, 0.0], [0.0, 0.5]])
    with pytest.raises(ConfigError):
        ex.boundary_map("sheared")


def test_flat_runs_small():
    rep = ex.rigidity_flat_run({"nodes": [9], "seeds": [0, 1]})
    assert all(r["energy"] < 1e-10 and r["sup_to_boundary_map"] < 1e-5 for r in rep["runs"])
    rot = ex.rigidity_flat_run({"nodes": [9], "boundary": "rotated", "angle": 0.5})
    assert rot["runs"][0]["sup_to_boundary_map"] < 1e-5
    assert rot["runs"][0]["sup_to_rigid_motion"] < 1e-5
    ref = ex.rigidity_flat_run({"nodes": [9], "boundary": "reflected"})
    assert ref["runs"][0]["energy"] >= ref["energy_lower_bound"] > 0.1


def test_sphere_helpers_small():
    chart = ChartGrid.box(9, -0.4, 0.4)
    g = geo.sphere_conformal(chart)
    target = geo.euclidean(ChartGrid.box(3, -4.0, 4.0))
    s = ex.best_scaling(g, target)
    assert 1.5 < s < 2.0  # metric factor 4/(1+r^2)^2 gives lengths near 2 at the pole
    lv = ex.sphere_to_plane_energy(0.8, 9)
    assert 0 < lv["energy"] < lv["initial_energy"]
    with pytest.raises(ConfigError):
        ex.rigidity_sphere_run({"nodes": [5, 9]})
