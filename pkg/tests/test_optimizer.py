import numpy as np
import pytest

from rigidlab import geometry as geo
from rigidlab import parallel
from rigidlab.errors import ConfigError, DomainError
from rigidlab.experiments import rigid_fit
from rigidlab.functionals import distortion_field, elastic_energy
from rigidlab.geometry import ChartGrid
from rigidlab.maps import DiscreteMap
from rigidlab.optimizer import OptimizationTrace, OptimizerConfig, minimize

GRID = ChartGrid.box(9)
FLAT = geo.euclidean(GRID)
TARGET = geo.euclidean(ChartGrid.box(3, -1.0, 2.0))


def perturbed(f, amplitude, seed):
    rng = np.random.default_rng(seed)
    vals = np.array(f.values)
    free = f.free_mask()
    vals[free] += amplitude * rng.uniform(-1, 1, vals[free].shape)
    return f.with_values(vals)


def test_config_validation():
    assert OptimizerConfig.from_dict({"method": "gd"}).method == "gradient_descent"
    assert OptimizerConfig.from_dict(None) == OptimizerConfig()
    assert OptimizerConfig.from_dict(OptimizerConfig(memory=3).to_dict()).memory == 3
    for bad in ({"method": "newton"}, {"memory": 0}, {"grad_tol": 0.0}, {"shrink": 1.5},
                {"max_trials": 0}, {"learning_rate": 0.1}):
        with pytest.raises(ConfigError):
            OptimizerConfig.from_dict(bad)


def test_trace_records_and_exports():
    tr = OptimizationTrace()
    tr.record(2.0, 1.0, 0.0, 0)
    tr.record(1.0, 0.5, 0.25, 1)
    with pytest.raises(AssertionError):
        tr.record(1.5, 0.1, 0.1, 0)
    assert tr.iterations == 1 and tr.final_energy == 1.0 and tr.is_monotone()
    lines = tr.to_csv().split("\n")
    assert lines[0] == "iter,energy,gradnorm,step,clamped"
    assert lines[2] == "1,1.0,0.5,0.25,1"
    assert "\r" not in tr.to_csv()
    assert tr.to_dict()["iterations"] == 1


def test_identity_is_already_minimal():
    f, tr = minimize(DiscreteMap.identity(GRID), FLAT, TARGET)
    assert tr.iterations == 0 and tr.reason == "converged"
    assert np.array_equal(f.values, GRID.node_coords())


def test_pinned_identity_recovers_identity():
    f0 = perturbed(DiscreteMap.identity(GRID), 0.05, seed=3)
    f, tr = minimize(f0, FLAT, TARGET, 2.0, OptimizerConfig(max_iters=2000))
    assert tr.final_energy < 1e-10
    assert np.abs(f.values - GRID.node_coords()).max() < 1e-5
    assert tr.is_monotone()
    assert np.array_equal(f.values[f.boundary_mask], f0.values[f0.boundary_mask])


def test_gradient_descent_decreases():
    f0 = perturbed(DiscreteMap.identity(GRID), 0.05, seed=4)
    f, tr = minimize(f0, FLAT, TARGET, 2.0, OptimizerConfig(method="gradient_descent", max_iters=200))
    assert tr.is_monotone()
    assert tr.final_energy < 0.1 * tr.energy[0]
    assert tr.reason in ("converged", "energy_tol", "max_iters")


def test_p3_converges():
    f0 = perturbed(DiscreteMap.identity(GRID), 0.05, seed=5)
    _, tr = minimize(f0, FLAT, TARGET, 3.0, OptimizerConfig(max_iters=2000))
    assert tr.is_monotone() and tr.final_energy < 1e-9


def test_free_boundary_converges_to_rigid_motion():
    ang = 0.4
    R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    base = DiscreteMap.from_function(GRID, lambda x: (x - 0.5) @ R.T + 0.5)
    rng = np.random.default_rng(0)
    f0 = DiscreteMap(GRID, base.values + 0.02 * rng.uniform(-1, 1, base.values.shape),
                     np.zeros(GRID.nodes, bool))
    f, tr = minimize(f0, FLAT, TARGET, 2.0, OptimizerConfig(max_iters=3000, grad_tol=1e-10))
    dist, _ = distortion_field(f, FLAT, TARGET)
    assert dist.max() <= 1e-5
    _, _, res = rigid_fit(GRID.node_coords(), f.values)
    assert res < 1e-5


def test_max_iters_reason():
    f0 = perturbed(DiscreteMap.identity(GRID), 0.05, seed=6)
    _, tr = minimize(f0, FLAT, TARGET, 2.0, OptimizerConfig(max_iters=2))
    assert tr.reason == "max_iters" and tr.iterations == 2


def test_out_of_chart_trials_are_rejected():
    # target chart equal to the source box: large trial steps leave it and must be shrunk
    f0 = perturbed(DiscreteMap.identity(GRID), 0.05, seed=7)
    f, tr = minimize(f0, FLAT, FLAT, 2.0, OptimizerConfig(max_iters=500))
    assert tr.is_monotone() and tr.final_energy < 1e-8
    assert np.all(GRID.contains(f.values.reshape(-1, 2)))


def test_clamp_mode_reports_clamped_points():
    f0 = perturbed(DiscreteMap.identity(GRID), 0.05, seed=8)
    tight = geo.euclidean(ChartGrid.box(3, 0.0, 1.0))
    _, tr = minimize(f0, FLAT, tight, 2.0, OptimizerConfig(max_iters=50, clamp=True))
    assert tr.is_monotone()
    assert len(tr.clamped) == len(tr.energy)


def test_p_one_rejected():
    with pytest.raises(DomainError):
        minimize(DiscreteMap.identity(GRID), FLAT, TARGET, 1.0)


def test_deterministic_across_threads():
    f0 = perturbed(DiscreteMap.identity(GRID), 0.05, seed=9)
    cfg = OptimizerConfig(max_iters=40)
    out = []
    for threads in (1, 4, 1):
        parallel.set_threads(threads)
        try:
            f, tr = minimize(f0, FLAT, TARGET, 2.0, cfg)
        finally:
            parallel.set_threads(None)
        out.append((f.values.copy(), tr.to_dict()))
    for vals, tr in out[1:]:
        assert np.array_equal(vals, out[0][0])
        assert tr == out[0][1]


def test_curved_source_energy_decreases():
    chart = ChartGrid.box(9, -0.3, 0.3)
    g = geo.sphere_conformal(chart)
    f0 = DiscreteMap.from_function(chart, lambda x: 1.9 * x)
    e0 = elastic_energy(f0, g, TARGET).energy
    f, tr = minimize(f0, g, TARGET, 2.0, OptimizerConfig(max_iters=300))
    assert tr.final_energy < e0 and tr.final_energy > 0
