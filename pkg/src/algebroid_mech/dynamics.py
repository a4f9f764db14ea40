"""Euler-Lagrange flows on algebroid charts and a fixed-step RK4 driver."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .algebroid import AlgebroidChart, _samples, c_contract
from .errors import GridMismatch, InputError, NonFiniteState, NumericFailure, SingularLagrangian
from .lagrangian import ForceField, Lagrangian, delta_L_along, free_terms, legendre_jet


@dataclass
class SystemState:
    t: float
    x: np.ndarray
    y: np.ndarray
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.t = float(self.t)
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if not (np.isfinite(self.t) and all(np.all(np.isfinite(v)) for v in (self.x, self.y, self.mu))):
            raise InputError("state must be finite")


@dataclass
class IntegratorConfig:
    h: float
    scheme: str = "rk4"
    cond_max: float = 1e8
    drift_tol: float = 1e-6
    project_every: int = 0

    def __post_init__(self):
        if not (self.h > 0 and np.isfinite(self.h)):
            raise InputError(f"step size must be positive, got {self.h}")
        if self.scheme.lower() != "rk4":
            raise InputError(f"unsupported scheme {self.scheme!r}; only rk4 is available")
        if not self.cond_max > 1:
            raise InputError(f"cond_max must exceed 1, got {self.cond_max}")
        if not self.drift_tol > 0:
            raise InputError(f"drift_tol must be positive, got {self.drift_tol}")
        if self.project_every < 0:
            raise InputError("project_every must be >= 0")


@dataclass
class Trajectory:
    """Samples of a solution on a uniform grid plus per-sample diagnostics."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def h(self):
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def __len__(self):
        return len(self.t)

    def state(self, k):
        return SystemState(self.t[k], self.x[k], self.y[k], self.mu[k])

    def states(self):
        return [self.state(k) for k in range(len(self.t))]

    def header(self):
        cols = ["t"] + [f"x{a + 1}" for a in range(self.x.shape[1])]
        cols += [f"y{i + 1}" for i in range(self.y.shape[1])]
        cols += [f"mu{k + 1}" for k in range(self.mu.shape[1])]
        return cols

    def to_csv(self, path):
        rows = np.hstack([self.t[:, None], self.x, self.y, self.mu])
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header()) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(v) for v in row] for row in reader if row])
        data = data.reshape(-1, len(header))
        idx = {p: [i for i, name in enumerate(header) if name.startswith(p) and name[len(p):].isdigit()]
               for p in ("x", "y", "mu")}
        return cls(data[:, 0], data[:, idx["x"]], data[:, idx["y"]],
                   data[:, idx["mu"]] if idx["mu"] else np.zeros((len(data), 0)))


def solve_checked(M, b, cond_max, exc, what="matrix"):
    """LU solve that refuses ill-conditioned systems.

    The 1-norm condition number is estimated from the LU factors; when it
    exceeds ``cond_max`` the exception class ``exc`` is raised.  Returns the
    solution and the condition estimate.
    """
    M = np.asarray(M, dtype=float)
    lu, piv, info = lapack.dgetrf(M)
    if info > 0:
        raise exc(f"{what} is singular")
    rcond, _ = lapack.dgecon(lu, np.abs(M).sum(axis=0).max(), norm="1")
    cond = np.inf if rcond == 0.0 else 1.0 / rcond
    if not cond <= cond_max:
        raise exc(f"{what} condition estimate {cond:.3e} exceeds {cond_max:.3e}")
    sol, _ = lapack.dgetrs(lu, piv, np.asarray(b, dtype=float))
    return sol, cond


def _el_solve(A, Lag, x, y, t, force, cond_max):
    rho, sigma, c = A.structure_at(x)
    jet = legendre_jet(Lag, x, y, t)
    rhs = free_terms(rho, sigma, c, jet, y)
    if force is not None:
        rhs = rhs - force.value(x, y, t)
    ydot, cond = solve_checked(jet.W, rhs, cond_max, SingularLagrangian, "Hessian d2L/dy2")
    return rho @ y, ydot, cond


def el_rhs(A: AlgebroidChart, Lag: Lagrangian, s: SystemState, force: ForceField | None = None,
           cond_max=1e8):
    """Right-hand side of the (optionally forced) Euler-Lagrange equations.

    Solves ``delta_L = force`` for the acceleration:
    ``W ydot = sigma^T L_x + c(y, L_y) - (rho y) L_xy - L_ty - force``.
    Returns ``(xdot, ydot)``.
    """
    xdot, ydot, _ = _el_solve(A, Lag, s.x, s.y, s.t, force, cond_max)
    return xdot, ydot


# -------------------------------------------------------------------- flows

@dataclass
class FlowEval:
    xdot: np.ndarray
    ydot: np.ndarray
    mudot: np.ndarray
    cond: float
    mu: np.ndarray | None = None      # algebraic multipliers (nonholonomic)
    y: np.ndarray | None = None       # corrected velocity components (singular vakonomic)
    algebraic: np.ndarray | None = None  # residual of algebraic conditions, if any


class _FreeFlow:
    mode = "free"

    def __init__(self, A, Lag, force, cond_max):
        self.A, self.Lag, self.force, self.cond_max = A, Lag, force, cond_max
        self.K = 0

    def evaluate(self, t, x, y, mu):
        xdot, ydot, cond = _el_solve(self.A, self.Lag, x, y, t, self.force, self.cond_max)
        return FlowEval(xdot, ydot, np.zeros(0), cond)

    def constraint_values(self, x, y):
        return np.zeros(0)

    def diagnostics(self, traj, evals):
        dL = delta_L_along(self.A, self.Lag, traj)
        if self.force is not None:
            dL = dL - np.array([self.force.value(traj.x[k], traj.y[k], traj.t[k])
                                for k in range(len(traj.t))])
        return {"delta_L_residual": np.max(np.abs(dL), axis=1)}


def _make_flow(A, Lag, mode, force, constraint, cfg):
    if mode == "free":
        if constraint is not None:
            raise InputError("free mode does not take a constraint")
        return _FreeFlow(A, Lag, force, cfg.cond_max)
    from . import constraints as cons
    if mode == "nonholonomic":
        return cons.NonholonomicFlow(A, Lag, _as_geometric(constraint), force, cfg.cond_max)
    if mode == "vakonomic":
        if force is not None:
            raise InputError("vakonomic mode does not take a force")
        return cons.VakonomicFlow(A, Lag, _as_geometric(constraint), cfg.cond_max)
    if mode == "affine_reduced":
        if not isinstance(constraint, cons.AffineConstraint):
            raise InputError("affine_reduced mode needs an AffineConstraint")
        return cons.AffineReducedFlow(A, Lag, constraint, force, cfg.cond_max)
    raise InputError(f"unknown mode {mode!r}")


def _as_geometric(constraint):
    from . import constraints as cons
    if isinstance(constraint, cons.AffineConstraint):
        return constraint.to_geometric()
    if not isinstance(constraint, cons.GeometricConstraint):
        raise InputError("this mode needs a constraint")
    return constraint


def _grid(t0, t1, h):
    steps = (t1 - t0) / h
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-9 * max(1.0, steps):
        raise InputError(f"(t1 - t0)/h = {steps!r} is not a positive integer")
    return n


def integrate(A: AlgebroidChart, Lag: Lagrangian, s0: SystemState, cfg: IntegratorConfig, t1: float,
              mode: str = "free", force: ForceField | None = None, constraint=None) -> Trajectory:
    """Integrate a flow with classical RK4 on the grid ``t0 + k h``.

    ``mode`` is one of ``free`` (optionally forced), ``nonholonomic``,
    ``vakonomic`` or ``affine_reduced``.  In ``affine_reduced`` mode the
    fibre state is the vector of affine coordinates, not the full fibre.

    Raises ``SingularLagrangian``/``SingularSaddle``/``SingularReducedHessian``
    on ill-conditioned solves, ``ConstraintDrift`` when the constraint
    residual exceeds ``cfg.drift_tol`` and ``NonFiniteState`` on overflow.
    """
    flow = _make_flow(A, Lag, mode, force, constraint, cfg)
    nsteps = _grid(s0.t, t1, cfg.h)
    h = cfg.h
    n = A.n
    x, y, mu = s0.x.copy(), s0.y.copy(), s0.mu.copy()
    if x.shape != (n,):
        raise InputError(f"initial x must have length {n}")
    if hasattr(flow, "check_initial"):
        flow.check_initial(x, y, mu, cfg)
    if mode != "vakonomic" and mu.size:
        raise InputError("initial mu is only used in vakonomic mode")
    sizes = (n, len(y), len(mu))

    def split(z):
        return z[:n], z[n:n + sizes[1]], z[n + sizes[1]:]

    def deriv(t, z):
        try:
            ev = flow.evaluate(t, *split(z))
        except NumericFailure as exc:
            if getattr(exc, "t", None) is None:
                exc.t = t
                exc.args = (f"{exc.args[0]} at t={t:.6g}",) + exc.args[1:]
            raise
        dz = np.concatenate([ev.xdot, ev.ydot, ev.mudot])
        if not np.all(np.isfinite(dz)):
            raise NonFiniteState(f"non-finite derivative at t={t:.6g}")
        return dz, ev

    ts = s0.t + h * np.arange(nsteps + 1)
    z = np.concatenate([x, y, mu])
    dz, ev = deriv(ts[0], z)
    if ev.y is not None:
        z[n:n + sizes[1]] = ev.y
        dz, ev = deriv(ts[0], z)
    zs, evals = [z.copy()], [ev]
    # overflow is caught by the finiteness checks below
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(nsteps):
            t = ts[k]
            k1 = dz
            k2, _ = deriv(t + 0.5 * h, z + 0.5 * h * k1)
            k3, _ = deriv(t + 0.5 * h, z + 0.5 * h * k2)
            k4, _ = deriv(t + h, z + h * k3)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(z)):
                raise NonFiniteState(f"state became non-finite at t={ts[k + 1]:.6g}")
            if hasattr(flow, "after_step"):
                z = flow.after_step(k + 1, ts[k + 1], z, sizes, cfg)
            dz, ev = deriv(ts[k + 1], z)
            if ev.y is not None:
                z[n:n + sizes[1]] = ev.y
            zs.append(z.copy())
            evals.append(ev)

    Z = np.array(zs)
    X, Y, MU = Z[:, :n], Z[:, n:n + sizes[1]], Z[:, n + sizes[1]:]
    if mode == "nonholonomic":
        MU = np.array([ev.mu for ev in evals])
    traj = Trajectory(ts, X, Y, MU, meta={"mode": mode, "h": h, "scheme": "rk4"})
    diag = {"cond": np.array([ev.cond for ev in evals]),
            "constraint_residual": np.array([np.max(np.abs(flow.constraint_values(X[k], Y[k])), initial=0.0)
                                             for k in range(len(ts))])}
    diag.update(flow.diagnostics(traj, evals))
    traj.diagnostics = diag
    return traj


# ----------------------------------------------------------- tangency check

def tangency_defect(A: AlgebroidChart, traj, f) -> np.ndarray:
    """Per-sample failure of the admissible variation to preserve admissibility.

    For a variation with base part ``sigma f`` and fibre part
    ``df/dt + c(y, f)`` the linearised admissibility condition leaves::

        df^j/dt (sigma - rho)^b_j
          + f^j y^i (d_a sigma^b_j rho^a_i - d_a rho^b_i sigma^a_j - c^k_ij rho^b_k)

    which vanishes identically on Lie algebroids.  Rows are interior samples.
    """
    t, x, y = _samples(A, traj)
    f = np.asarray(f, dtype=float)
    if f.shape != y.shape:
        raise GridMismatch(f"variation generator has shape {f.shape}, expected {y.shape}")
    fdot = np.gradient(f, t, axis=0, edge_order=2)
    out = []
    for k in range(1, len(t) - 1):
        rho, sigma, c, drho, dsigma, _ = A.structure_gradient(x[k])
        r = (sigma - rho) @ fdot[k]
        r += np.einsum("bja,ai,j,i->b", dsigma, rho, f[k], y[k])
        r -= np.einsum("bia,aj,j,i->b", drho, sigma, f[k], y[k])
        r -= rho @ c_contract(c, y[k], f[k])
        out.append(r)
    return np.array(out)


def variation_tangency_residual(A: AlgebroidChart, traj, f) -> float:
    """Largest entry of :func:`tangency_defect` over interior samples."""
    return float(np.max(np.abs(tangency_defect(A, traj, f)), initial=0.0))
