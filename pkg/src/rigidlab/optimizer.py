"""Minimization of the elastic energy over the free nodes of a discrete map.

Masked (boundary) nodes stay pinned at their initial values.  The search is
L-BFGS (or plain gradient descent, kept as a baseline) with a backtracking
Armijo line search.  The energy is nonconvex, so results are only ever the
best map found, never a certified minimizer.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, OutOfChartError
from .functionals import elastic_energy
from .geometry import MetricField
from .maps import DiscreteMap

METHODS = ("lbfgs", "gradient_descent")


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`minimize`.

    ``grad_tol`` applies to the max-norm of the nodal gradient and
    ``energy_tol`` to the relative energy decrease of one accepted step.
    """

    method: str = "lbfgs"
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-8
    energy_tol: float = 1e-12
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_trials: int = 40
    seed: int = 42
    quad_order: int = 2
    clamp: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.memory < 1:
            raise ConfigError("L-BFGS memory must be at least 1")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be non-negative")
        if not (self.grad_tol > 0 and self.energy_tol > 0):
            raise ConfigError("tolerances must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.shrink < 1) or self.max_trials < 1:
            raise ConfigError("invalid line-search parameters")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "OptimizerConfig":
        data = dict(data or {})
        if data.get("method") == "gd":
            data["method"] = "gradient_descent"
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown optimizer options: {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizationTrace:
    """Per-iteration record of accepted iterates (iteration 0 is the start)."""

    energy: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    clamped: list = field(default_factory=list)
    reason: str = ""

    def record(self, energy, grad_norm, step, clamped):
        if self.energy and energy > self.energy[-1]:
            raise AssertionError("accepted step increased the energy")
        self.energy.append(float(energy))
        self.grad_norm.append(float(grad_norm))
        self.step.append(float(step))
        self.clamped.append(int(clamped))

    @property
    def iterations(self) -> int:
        return max(0, len(self.energy) - 1)

    @property
    def final_energy(self) -> float:
        return self.energy[-1]

    def is_monotone(self) -> bool:
        e = np.asarray(self.energy)
        return bool(np.all(np.diff(e) <= 0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "energy", "gradnorm", "step", "clamped"])
        for k, row in enumerate(zip(self.energy, self.grad_norm, self.step, self.clamped)):
            w.writerow([k, repr(row[0]), repr(row[1]), repr(row[2]), row[3]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "reason": self.reason,
                "energy": self.energy, "grad_norm": self.grad_norm,
                "step": self.step, "clamped": self.clamped}


class _Objective:
    """Energy and gradient as functions of the free nodal values."""

    def __init__(self, f0: DiscreteMap, g, h, p, cfg: OptimizerConfig):
        self.f0, self.g, self.h, self.p, self.cfg = f0, g, h, p, cfg
        self.free = f0.free_mask()
        self.evals = 0

    def map_of(self, x) -> DiscreteMap:
        vals = np.array(self.f0.values)
        vals[self.free] = x.reshape(-1, self.f0.dim)
        return self.f0.with_values(vals)

    def __call__(self, x):
        self.evals += 1
        rep, grad = elastic_energy(self.map_of(x), self.g, self.h, self.p,
                                   quad_order=self.cfg.quad_order, clamp=self.cfg.clamp,
                                   gradient=True)
        return rep.energy, grad[self.free].ravel(), rep.clamped_points


def _two_loop(grad, mem):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if mem:
        s, y, _ = mem[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def minimize(f0: DiscreteMap, g: MetricField, h: MetricField, p=2.0,
             cfg: Optional[OptimizerConfig] = None):
    """Minimize ``elastic_energy(f, g, h, p)`` over the unmasked nodes of ``f0``.

    Returns
    -------
    f : DiscreteMap
        Best map found.
    trace : OptimizationTrace
        Termination reason is one of ``"converged"`` (gradient max-norm below
        ``grad_tol``), ``"energy_tol"``, ``"max_iters"`` or ``"stalled"``
        (no Armijo step within ``max_trials`` halvings).
    """
    cfg = cfg or OptimizerConfig()
    if float(p) <= 1:
        raise DomainError("minimization requires p > 1")
    obj = _Objective(f0, g, h, p, cfg)
    trace = OptimizationTrace()
    x = np.asarray(f0.values)[obj.free].ravel().copy()
    E, grad, clamped = obj(x)
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    trace.record(E, gnorm, 0.0, clamped)
    mem = []
    step_scale = 1.0

    for _ in range(cfg.max_iters):
        if gnorm <= cfg.grad_tol:
            trace.reason = "converged"
            break
        if cfg.method == "lbfgs" and mem:
            d = _two_loop(grad, mem)
            t = 1.0
        else:
            d = -grad
            t = step_scale / max(1.0, float(np.linalg.norm(grad)))
        slope = float(np.dot(grad, d))
        if slope >= 0:
            mem.clear()
            d = -grad
            slope = -float(np.dot(grad, grad))
        accepted = False
        for _trial in range(cfg.max_trials):
            xt = x + t * d
            try:
                Et, gt, ct = obj(xt)
            except OutOfChartError:
                t *= cfg.shrink
                continue
            if np.isfinite(Et) and Et <= E + cfg.armijo_c * t * slope:
                accepted = True
                break
            t *= cfg.shrink
        if not accepted:
            trace.reason = "stalled"
            break
        s, yv = xt - x, gt - grad
        sy = float(np.dot(s, yv))
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            mem.append((s, yv, 1.0 / sy))
            if len(mem) > cfg.memory:
                mem.pop(0)
        if cfg.method == "gradient_descent":
            step_scale = min(1e6, 2.0 * t * max(1.0, float(np.linalg.norm(grad))))
        decrease = E - Et
        x, E, grad = xt, Et, gt
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        trace.record(E, gnorm, t, ct)
        if gnorm <= cfg.grad_tol:
            trace.reason = "converged"
            break
        if decrease <= cfg.energy_tol * abs(E + decrease):
            trace.reason = "energy_tol"
            break
    else:
        trace.reason = "max_iters" if gnorm > cfg.grad_tol else "converged"
    if not trace.reason:
        trace.reason = "converged"
    return obj.map_of(x), trace
