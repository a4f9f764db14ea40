"""Lagrangians on a chart and the quantities derived from their jets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .algebroid import (AlgebroidChart, CotangentEPoint, TangentEDualPoint, _samples,
                        base_names, c_dual, epsilon_map, fiber_names, is_admissible)
from .errors import DimensionError, GridMismatch, InputError, NotAdmissible
from .expr import Expr, ExprArray, as_expr, jet_from_env, seed_env


def _check_vars(exprs, allowed, what):
    for e in exprs:
        extra = [v for v in e.free_vars if v not in allowed]
        if extra:
            raise InputError(f"{what} refers to unknown variables {extra}")


@dataclass(frozen=True)
class Lagrangian:
    """A scalar function of ``(x, y, t)`` plus named numeric parameters."""

    expr: Expr
    n: int
    m: int
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "expr", as_expr(self.expr))
        object.__setattr__(self, "params", {k: float(v) for k, v in dict(self.params).items()})
        allowed = set(base_names(self.n)) | set(fiber_names(self.m)) | {"t"} | set(self.params)
        _check_vars([self.expr], allowed, "Lagrangian")
        object.__setattr__(self, "_seeds", base_names(self.n) + fiber_names(self.m) + ("t",))

    def env(self, x, y, t):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != (self.n,) or y.shape != (self.m,):
            raise DimensionError("state does not match the Lagrangian's dimensions")
        env = dict(self.params)
        env.update(zip(self._seeds, x.tolist() + y.tolist() + [float(t)]))
        return env

    def value(self, x, y, t=0.0):
        return self.expr.evaluate(self.env(x, y, t))

    @property
    def depends_on_time(self):
        return "t" in self.expr.free_vars

    def to_dict(self):
        return {"expr": str(self.expr), "params": dict(self.params)}


@dataclass
class LegendreJet:
    """First and second derivatives of L at a point.

    ``lam = dL/dy``, ``dLdx = dL/dx``, ``W = d2L/dy dy``,
    ``Wxy[a, j] = d2L/dx_a dy_j`` and ``Wty = d2L/dt dy``.
    """
    lam: np.ndarray
    dLdx: np.ndarray
    W: np.ndarray
    Wxy: np.ndarray
    Wty: np.ndarray
    value: float


def legendre_jet(Lag: Lagrangian, x, y, t=0.0) -> LegendreJet:
    n, m = Lag.n, Lag.m
    k = n + m + 1
    env = seed_env(Lag.env(x, y, t), Lag._seeds)
    v, g, H = jet_from_env(Lag.expr, env, k)
    return LegendreJet(lam=g[n:n + m].copy(), dLdx=g[:n].copy(), W=H[n:n + m, n:n + m].copy(),
                       Wxy=H[:n, n:n + m].copy(), Wty=H[n + m, n:n + m].copy(), value=float(v))


@dataclass(frozen=True)
class ForceField:
    """External force: m expressions in ``(x, y, t)`` and parameters."""

    components: tuple
    n: int
    m: int
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        comps = tuple(as_expr(e) for e in self.components)
        if len(comps) != self.m:
            raise DimensionError(f"force needs {self.m} components, got {len(comps)}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "params", {k: float(v) for k, v in dict(self.params).items()})
        allowed = set(base_names(self.n)) | set(fiber_names(self.m)) | {"t"} | set(self.params)
        _check_vars(comps, allowed, "force")
        object.__setattr__(self, "_array", ExprArray.build(list(comps), (self.m,)))

    def value(self, x, y, t=0.0):
        env = dict(self.params)
        env.update(zip(base_names(self.n), np.asarray(x, float).tolist()))
        env.update(zip(fiber_names(self.m), np.asarray(y, float).tolist()))
        env["t"] = float(t)
        return self._array.value(env)


def tulczyjew_differential(A: AlgebroidChart, Lag: Lagrangian, x, y, t=0.0) -> TangentEDualPoint:
    """Image of dL under ``epsilon_map``: the phase-space velocity prescribed by L."""
    jet = legendre_jet(Lag, x, y, t)
    return epsilon_map(A, CotangentEPoint(x, y, jet.dLdx, jet.lam))


def free_terms(rho, sigma, c, jet: LegendreJet, y):
    """Part of the variational derivative that does not involve the acceleration.

    ``sigma^a_j L_xa + c^k_ij y^i L_yk - (rho y)^a L_xa,yj - L_t,yj``.  With
    this, ``delta_L = free_terms - W ydot``.
    """
    return sigma.T @ jet.dLdx + c_dual(c, y, jet.lam) - (rho @ y) @ jet.Wxy - jet.Wty


def delta_L(A: AlgebroidChart, Lag: Lagrangian, x, y, ydot, t=0.0) -> np.ndarray:
    """Variational derivative of L along an admissible curve.

    Expanded form using ``dx/dt = rho(x) y``::

        sigma^a_j L_xa + y^i c^k_ij L_yk - y^i rho^a_i L_xa,yj - ydot^k L_yk,yj - L_t,yj
    """
    rho, sigma, c = A.structure_at(x)
    jet = legendre_jet(Lag, x, y, t)
    return free_terms(rho, sigma, c, jet, np.asarray(y, float)) - jet.W @ np.asarray(ydot, float)


def delta_L_along(A: AlgebroidChart, Lag: Lagrangian, traj, ydot=None) -> np.ndarray:
    """``delta_L`` at every sample; ``ydot`` defaults to second-order differences."""
    t, x, y = _samples(A, traj)
    if ydot is None:
        ydot = np.gradient(y, t, axis=0, edge_order=2)
    return np.array([delta_L(A, Lag, x[k], y[k], ydot[k], t[k]) for k in range(len(t))])


def quadrature(values, t) -> float:
    """Composite Simpson on a uniform grid; trapezoid when the sample count is even."""
    values = np.asarray(values, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        return 0.0
    h = (t[-1] - t[0]) / (len(t) - 1)
    if len(t) % 2 == 1 and len(t) >= 3:
        return float(h / 3.0 * (values[0] + values[-1] + 4.0 * values[1:-1:2].sum()
                                + 2.0 * values[2:-1:2].sum()))
    return float(h * (0.5 * values[0] + 0.5 * values[-1] + values[1:-1].sum()))


def action(Lag: Lagrangian, traj) -> float:
    t = np.asarray(traj.t, dtype=float)
    if len(t) < 2:
        raise InputError("the action needs at least 2 samples")
    vals = [Lag.value(traj.x[k], traj.y[k], t[k]) for k in range(len(t))]
    return quadrature(vals, t)


class DWPairing(NamedTuple):
    boundary: float
    bulk: float
    total: float


def _variation_inputs(A, traj, gens, tol):
    t, x, y = _samples(A, traj)
    gens = [np.asarray(f, dtype=float) for f in gens]
    for f in gens:
        if f.shape != y.shape:
            raise GridMismatch(f"variation generator has shape {f.shape}, expected {y.shape}")
    if tol is not None:
        limit = tol * (1.0 + float(np.max(np.abs(y), initial=0.0)))
        ok, res = is_admissible(A, traj, limit)
        if not ok:
            raise NotAdmissible(f"curve is not admissible (residual {res:.3e} > {limit:.3e})")
    return t, x, y, gens


def time_derivative(values, t):
    """Fourth-order differences on a uniform grid, one-sided near the ends.

    Falls back to second-order differences below five samples.
    """
    values = np.asarray(values, dtype=float)
    if len(t) < 5:
        return np.gradient(values, t, axis=0, edge_order=min(2, len(t) - 1))
    f = values
    h = (t[-1] - t[0]) / (len(t) - 1)
    out = np.empty_like(f)
    out[2:-2] = f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]
    out[0] = -25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]
    out[1] = -3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]
    out[-1] = 25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]
    out[-2] = 3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]
    return out / (12 * h)


def first_variations(A: AlgebroidChart, Lag: Lagrangian, traj, gens, tol=1e-4):
    """``(dW_pairing, dW_direct)`` for each generator, sharing the per-sample work.

    Time derivatives of ``y`` and of the generators are fourth order, so the
    two routes agree to well below the quadrature's own error.
    """
    t, x, y, gens = _variation_inputs(A, traj, gens, tol)
    ydot = time_derivative(y, t)
    N, m = y.shape
    dL, sf, lam = np.empty((N, m)), np.empty((N, m)), np.empty((N, m))
    cy = np.empty((N, m, m))
    for k in range(N):
        rho, sigma, c = A.structure_at(x[k])
        jet = legendre_jet(Lag, x[k], y[k], t[k])
        dL[k] = free_terms(rho, sigma, c, jet, y[k]) - jet.W @ ydot[k]
        sf[k] = sigma.T @ jet.dLdx
        lam[k] = jet.lam
        cy[k] = np.einsum("kij,i->kj", c, y[k])
    out = []
    for f in gens:
        boundary = float(f[-1] @ lam[-1] - f[0] @ lam[0])
        bulk = quadrature(np.einsum("kj,kj->k", f, dL), t)
        fdot = time_derivative(f, t)
        vals = (np.einsum("kj,kj->k", f, sf) + np.einsum("kij,kj,ki->k", cy, f, lam)
                + np.einsum("kj,kj->k", fdot, lam))
        out.append((DWPairing(boundary, bulk, boundary + bulk), quadrature(vals, t)))
    return out


def dW_pairing(A: AlgebroidChart, Lag: Lagrangian, traj, f, tol=1e-4) -> DWPairing:
    """First variation of the action split into boundary and bulk parts.

    ``boundary = [f . dL/dy]`` between the endpoints and
    ``bulk = integral of f . delta_L``.
    """
    return first_variations(A, Lag, traj, [f], tol)[0][0]


def dW_direct(A: AlgebroidChart, Lag: Lagrangian, traj, f, tol=1e-4) -> float:
    """First variation as the integral of dL applied to the admissible variation.

    Integrand: ``f^k sigma^a_k L_xa + (y^i c^j_ik f^k + df^j/dt) L_yj``.
    No integration by parts is involved, so this is an independent route.
    """
    return first_variations(A, Lag, traj, [f], tol)[0][1]
