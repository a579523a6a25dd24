"""Potential families: a single algebraic well plus the constant baseline.

The well V(x) = V_inf - B/(1 + |x-x0|^m / w^m) covers all of the standing
assumptions with tunable power m: bounded away from zero, bounded with
bounded virial x.grad V, and a clean |x-x0|^m expansion at the minimum with
coefficient A = B/w^m. Derivatives are analytic so the Pohozaev diagnostics
carry no differencing error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_model import ModelError, ProblemParams


@dataclass(frozen=True)
class PotentialWell:
    """V(x) = V_inf - B / (1 + |x - x0|^m / w^m)."""

    V_inf: float
    B: float
    m: float
    w: float
    x0: tuple = (0.0,)

    def __post_init__(self):
        if self.w <= 0:
            raise ModelError(f"well width must be positive, got {self.w}")
        if self.m <= 0:
            raise ModelError(f"well power must be positive, got {self.m}")
        if self.B <= 0:
            raise ModelError(f"well depth must be positive, got {self.B}")
        object.__setattr__(self, "x0", tuple(float(c) for c in np.atleast_1d(self.x0)))

    @property
    def V0(self) -> float:
        """inf V = V_inf - B, attained at x0."""
        return self.V_inf - self.B

    @property
    def A(self) -> float:
        """Leading expansion coefficient: V - V0 = A |x-x0|^m + O(|x-x0|^{2m})."""
        return self.B / self.w ** self.m


@dataclass(frozen=True)
class ConstantPotential:
    value: float

    def __post_init__(self):
        if self.value <= 0:
            raise ModelError(f"constant potential must be positive, got {self.value}")

    @property
    def V0(self) -> float:
        return self.value


def _radius(spec, x):
    """|x - x0| for scalar radii (radial mode) or stacked points (box mode)."""
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1 and len(spec.x0) == 1:
        return np.abs(x - spec.x0[0])
    x0 = np.asarray(spec.x0)
    return np.sqrt(np.sum((x - x0) ** 2, axis=-1))


def eval_V(spec, x):
    """Pointwise potential value; x is a radius array or an (..., d) point array."""
    if isinstance(spec, ConstantPotential):
        return np.broadcast_to(spec.value, np.shape(_radius_like(x))).copy()
    d = _radius(spec, x)
    z = (d / spec.w) ** spec.m
    return spec.V_inf - spec.B / (1.0 + z)


def _radius_like(x):
    x = np.asarray(x, dtype=float)
    return x if x.ndim <= 1 else x[..., 0]


def eval_gradV(spec, x):
    """Analytic gradient. Radial mode returns dV/dr; box mode the vector."""
    if isinstance(spec, ConstantPotential):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x)
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1 and len(spec.x0) == 1:
        d = np.abs(x - spec.x0[0])
        return _dV_dr(spec, d) * np.sign(x - spec.x0[0])
    x0 = np.asarray(spec.x0)
    diff = x - x0
    d = np.sqrt(np.sum(diff ** 2, axis=-1))
    mag = _dV_dr(spec, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(d[..., None] > 0, diff / np.maximum(d, 1e-300)[..., None], 0.0)
    return mag[..., None] * unit


def _dV_dr(spec, d):
    """dV/d|x-x0| = B m z / (d (1+z)^2), z = (d/w)^m; zero at d = 0 for m > 1."""
    d = np.asarray(d, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (d / spec.w) ** spec.m
        out = spec.B * spec.m * z / (np.maximum(d, 1e-300) * (1.0 + z) ** 2)
    return np.where(d > 0, out, 0.0)


def eval_x_dot_gradV(spec, x):
    """x . grad V; for the centered radial well this is r dV/dr."""
    if isinstance(spec, ConstantPotential):
        return np.zeros(np.shape(_radius_like(x)))
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1 and len(spec.x0) == 1:
        g = eval_gradV(spec, x)
        return x * g
    return np.sum(x * eval_gradV(spec, x), axis=-1)


def validate_assumptions(spec, params: ProblemParams) -> dict:
    """Report-style check of the standing assumptions on V.

    (V1) 0 < V0 <= V < V_inf; (V2) x.grad V bounded; (V3) the expansion
    V = V(x0) + A|x-x0|^m + ... with A > 0 and 1 < m < n - 4 s0.
    """
    report = {"ok": True, "checks": []}

    def add(name, ok, detail):
        report["checks"].append({"assumption": name, "ok": bool(ok), "detail": detail})
        if not ok:
            report["ok"] = False

    if isinstance(spec, ConstantPotential):
        add("V1", spec.value > 0, f"V0 = {spec.value}")
        add("V2", True, "x.grad V = 0")
        add("V3", False, "constant potential has no strict minimum (baseline mode)")
        return report

    add("V1", spec.V0 > 0, f"V0 = V_inf - B = {spec.V0}")
    # scan of |x.grad V| out to 1e3 w; the rule decays like |x|^{-m} so the
    # scan brackets the sup
    r = np.geomspace(1e-6 * spec.w, 1e3 * spec.w, 4096)
    xg = np.abs(eval_x_dot_gradV(spec, r + (spec.x0[0] if len(spec.x0) == 1 else 0.0))) \
        if len(spec.x0) == 1 else None
    if xg is None:
        pts = np.asarray(spec.x0)[None, :] + np.stack([r] + [np.zeros_like(r)] * (len(spec.x0) - 1), axis=-1)
        xg = np.abs(eval_x_dot_gradV(spec, pts))
    finite = bool(np.all(np.isfinite(xg)))
    add("V2", finite, f"sup |x.grad V| over scan = {float(np.max(xg)):.6g}")
    s0 = params.s0
    hi = params.n - 4.0 * s0
    ok3 = (1.0 < spec.m < hi) and (spec.A > 0)
    add("V3", ok3,
        f"m = {spec.m}, admissible range (1, {hi:.6g}), A = {spec.A:.6g}")
    return report
