"""Constrained dynamics: nonholonomic, vakonomic and affine-reduced flows.

Constraints are either a list of level functions ``phi(x, y) = 0`` or an
affine subbundle ``y = e0(x) + Y^a E_a(x)``.  Sign conventions for the
multipliers: in the nonholonomic equations ``delta_L + mu_k dphi^k/dy = 0``,
which makes ``mu`` the reaction force pushing the momenta, and the
vakonomic equations are ``delta(L - mu_k phi^k) = 0`` with ``mu`` time-dependent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .algebroid import (AlgebroidChart, CotangentEPoint, SectionExpr, _samples, base_names,
                        c_contract, c_dual, check_axioms, epsilon_map, fiber_names,
                        section_bracket)
from .dynamics import FlowEval, SystemState, solve_checked
from .errors import (ConstraintDrift, DimensionError, InputError, NoConvergence, NotQuasiLie,
                     RankDeficientConstraint, SingularReducedHessian, SingularSaddle)
from .expr import Expr, ExprArray, as_expr, jet_from_env, seed_env
from .lagrangian import ForceField, Lagrangian, delta_L_along, free_terms, legendre_jet


# ------------------------------------------------------------ constraints

@dataclass
class ConstraintJet:
    """Values and derivatives of the level functions at one point.

    Shapes: ``phi (K,)``, ``phi_x (K, n)``, ``phi_y (K, m)``,
    ``phi_xy (K, n, m)``, ``phi_yy (K, m, m)``.
    """
    phi: np.ndarray
    phi_x: np.ndarray
    phi_y: np.ndarray
    phi_xy: np.ndarray
    phi_yy: np.ndarray


@dataclass(frozen=True)
class GeometricConstraint:
    """Level functions ``phi^k(x, y) = 0``, ``k = 1..K`` with ``K <= m``."""

    phi: tuple
    n: int
    m: int
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        params = {k: float(v) for k, v in dict(self.params).items()}
        exprs = tuple(as_expr(e).substitute(params) for e in self.phi)
        if not 1 <= len(exprs) <= self.m:
            raise DimensionError(f"need 1 <= K <= m={self.m} level functions, got {len(exprs)}")
        allowed = set(base_names(self.n)) | set(fiber_names(self.m))
        for e in exprs:
            extra = [v for v in e.free_vars if v not in allowed]
            if extra:
                raise InputError(f"constraint refers to unknown variables {extra}")
        object.__setattr__(self, "phi", exprs)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_seeds", base_names(self.n) + fiber_names(self.m))
        object.__setattr__(self, "_array", ExprArray.build(list(exprs), (len(exprs),)))

    @property
    def K(self):
        return len(self.phi)

    def _env(self, x, y):
        return dict(zip(self._seeds, np.asarray(x, float).tolist() + np.asarray(y, float).tolist()))

    def values(self, x, y):
        return self._array.value(self._env(x, y))

    def jet(self, x, y) -> ConstraintJet:
        n, m = self.n, self.m
        env = seed_env(self._env(x, y), self._seeds)
        K = self.K
        phi = np.empty(K)
        g = np.empty((K, n + m))
        H = np.empty((K, n + m, n + m))
        for k, e in enumerate(self.phi):
            phi[k], g[k], H[k] = jet_from_env(e, env, n + m)
        return ConstraintJet(phi, g[:, :n], g[:, n:], H[:, :n, n:], H[:, n:, n:])

    def to_dict(self):
        return {"type": "nonlinear", "phi": [str(e) for e in self.phi]}


def _det(rows):
    """Symbolic determinant by cofactor expansion along the first row."""
    if len(rows) == 1:
        return rows[0][0]
    out = Expr.const(0.0)
    for j, a in enumerate(rows[0]):
        minor = [r[:j] + r[j + 1:] for r in rows[1:]]
        term = a * _det(minor)
        out = out + term if j % 2 == 0 else out - term
    return out


@dataclass(frozen=True)
class AffineConstraint:
    """Affine subbundle ``y = e0(x) + Y^a E_a(x)`` with ``1 <= r < m`` directions."""

    e0: tuple
    basis: tuple
    n: int
    m: int
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        params = {k: float(v) for k, v in dict(self.params).items()}
        e0 = tuple(as_expr(e).substitute(params) for e in self.e0)
        basis = tuple(tuple(as_expr(e).substitute(params) for e in row) for row in self.basis)
        if len(e0) != self.m or any(len(row) != self.m for row in basis):
            raise DimensionError(f"e0 and basis rows must have length m={self.m}")
        if not 1 <= len(basis) < self.m:
            raise DimensionError(f"need 1 <= r < m basis directions, got r={len(basis)}")
        allowed = set(base_names(self.n))
        for e in e0 + sum(basis, ()):
            extra = [v for v in e.free_vars if v not in allowed]
            if extra:
                raise InputError(f"affine constraint may only depend on x, found {extra}")
        object.__setattr__(self, "e0", e0)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_e0", ExprArray.build(list(e0), (self.m,)))
        object.__setattr__(self, "_E", ExprArray.build([list(r) for r in basis], (len(basis), self.m)))

    @property
    def r(self):
        return len(self.basis)

    @property
    def is_linear(self):
        return all(e.is_constant and e.evaluate({}) == 0.0 for e in self.e0)

    def _env(self, x):
        return dict(zip(base_names(self.n), np.asarray(x, float).tolist()))

    def frame(self, x):
        env = self._env(x)
        return self._e0.value(env), self._E.value(env)

    def frame_gradient(self, x):
        """``(e0, de0, E, dE)`` with the base derivative index last."""
        env = self._env(x)
        names = base_names(self.n)
        e0, de0 = self._e0.gradient(env, names)
        E, dE = self._E.gradient(env, names)
        return e0, de0, E, dE

    def embed(self, x, Y):
        e0, E = self.frame(x)
        return e0 + E.T @ np.asarray(Y, float)

    def coordinates(self, x, y):
        """Least-squares affine coordinates of ``y``."""
        e0, E = self.frame(x)
        return np.linalg.lstsq(E.T, np.asarray(y, float) - e0, rcond=None)[0]

    def to_geometric(self, x_ref=None) -> GeometricConstraint:
        """Level functions cutting out the subbundle, built from minors.

        Picks ``r`` pivot fibre directions where the basis block is best
        conditioned at ``x_ref``; for each remaining direction ``q`` the
        determinant of the basis rows stacked with ``y - e0`` (restricted to
        pivots plus ``q``) vanishes exactly on the subbundle.
        """
        x_ref = np.zeros(self.n) if x_ref is None else np.asarray(x_ref, float)
        _, E = self.frame(x_ref)
        r, m = self.r, self.m
        best = max(itertools.combinations(range(m), r),
                   key=lambda cols: abs(np.linalg.det(E[:, cols])))
        pivot_det = np.linalg.det(E[:, best])
        if abs(pivot_det) < 1e-12:
            raise RankDeficientConstraint("affine basis is rank deficient at the reference point")
        shifted = [as_expr(fiber_names(m)[i]) - self.e0[i] for i in range(m)]
        phis = []
        for q in range(m):
            if q in best:
                continue
            cols = list(best) + [q]
            rows = [[self.basis[a][j] for j in cols] for a in range(r)]
            rows.append([shifted[j] for j in cols])
            d = _det(rows)  # coefficient of y_q is the pivot block determinant
            phis.append(-d if pivot_det < 0 else d)
        return GeometricConstraint(tuple(phis), self.n, self.m)

    def _level(self):
        g = self.__dict__.get("_geometric")
        if g is None:
            g = self.to_geometric()
            object.__setattr__(self, "_geometric", g)
        return g

    # the level-set interface, so affine constraints work in every solver
    @property
    def K(self):
        return self.m - self.r

    def values(self, x, y):
        return self._level().values(x, y)

    def jet(self, x, y):
        return self._level().jet(x, y)

    def to_dict(self):
        return {"type": "affine", "e0": [str(e) for e in self.e0],
                "basis": [[str(e) for e in row] for row in self.basis]}


def consistency_project(C: GeometricConstraint, x, y_guess, tol=1e-12, max_iter=50):
    """Minimal-norm Gauss-Newton projection of ``y`` onto ``phi(x, .) = 0``."""
    y = np.asarray(y_guess, dtype=float).copy()
    for _ in range(max_iter + 1):
        cj = C.jet(x, y)
        if np.max(np.abs(cj.phi)) <= tol:
            return y
        s = np.linalg.svd(cj.phi_y, compute_uv=False)
        if s[-1] <= 1e-12 * max(1.0, s[0]):
            raise RankDeficientConstraint("dphi/dy does not have full row rank")
        y = y - np.linalg.lstsq(cj.phi_y, cj.phi, rcond=None)[0]
        if not np.all(np.isfinite(y)):
            break
    raise NoConvergence(f"projection did not reach |phi| <= {tol} in {max_iter} iterations")


# ------------------------------------------------------------- shared bits

def _phi_free_terms(rho, sigma, c, cj: ConstraintJet, y):
    """Row ``k``: ``sigma^T phi^k_x + c(y, phi^k_y) - (rho y) phi^k_xy``."""
    xdot = rho @ y
    return np.array([sigma.T @ cj.phi_x[k] + c_dual(c, y, cj.phi_y[k]) - xdot @ cj.phi_xy[k]
                     for k in range(len(cj.phi))])


class _ConstrainedFlow:
    def constraint_values(self, x, y):
        return self.C.values(x, y)

    def check_initial(self, x, y, mu, cfg):
        drift = np.max(np.abs(self.C.values(x, y)))
        if drift > cfg.drift_tol:
            raise InputError(f"initial state violates the constraint by {drift:.3e}")

    def after_step(self, step, t, z, sizes, cfg):
        n, m, _ = sizes
        x, y = z[:n], z[n:n + m]
        if cfg.project_every and step % cfg.project_every == 0:
            z = z.copy()
            z[n:n + m] = consistency_project(self.C, x, y)
            y = z[n:n + m]
        drift = np.max(np.abs(self.C.values(x, y)))
        if drift > cfg.drift_tol:
            raise ConstraintDrift(f"constraint residual {drift:.3e} exceeds {cfg.drift_tol:.3e} at t={t:.6g}")
        return z


# ------------------------------------------------------------ nonholonomic

def _nonholonomic_solve(A, Lag, C, t, x, y, force, cond_max):
    rho, sigma, c = A.structure_at(x)
    jet = legendre_jet(Lag, x, y, t)
    cj = C.jet(x, y)
    m, K = A.m, C.K
    base = free_terms(rho, sigma, c, jet, y)
    if force is not None:
        base = base - force.value(x, y, t)
    M = np.zeros((m + K, m + K))
    M[:m, :m] = jet.W
    M[:m, m:] = -cj.phi_y.T
    M[m:, :m] = cj.phi_y
    b = np.concatenate([base, -cj.phi_x @ (rho @ y)])
    sol, cond = solve_checked(M, b, cond_max, SingularSaddle, "nonholonomic saddle matrix")
    return rho @ y, sol[:m], sol[m:], cond


def nonholonomic_rhs(A: AlgebroidChart, Lag: Lagrangian, C: GeometricConstraint, s: SystemState,
                     force: ForceField | None = None, cond_max=1e8):
    """Accelerations and multipliers of the nonholonomic (Chetaev) equations.

    Solves ``[[W, -phi_y^T], [phi_y, 0]] [ydot; mu] = [free terms; -phi_x rho y]``.
    Returns ``(xdot, ydot, mu)``.
    """
    xdot, ydot, mu, _ = _nonholonomic_solve(A, Lag, C, s.t, s.x, s.y, force, cond_max)
    return xdot, ydot, mu


def chetaev_residual(A, Lag, C, s: SystemState, ydot, mu, force=None) -> float:
    """``|delta_L + phi_y^T mu - force|`` at one state."""
    from .lagrangian import delta_L
    r = delta_L(A, Lag, s.x, s.y, ydot, s.t) + C.jet(s.x, s.y).phi_y.T @ mu
    if force is not None:
        r = r - force.value(s.x, s.y, s.t)
    return float(np.max(np.abs(r)))


def _offspan(vec, rows):
    """Component of ``vec`` orthogonal to the span of ``rows``."""
    coef = np.linalg.lstsq(rows.T, vec, rcond=None)[0]
    return vec - rows.T @ coef


def dalembert_residual(A: AlgebroidChart, Lag: Lagrangian, C: GeometricConstraint, traj,
                       drift_tol=1e-6) -> float:
    """Largest part of ``delta_L`` (finite-difference accelerations) off ``span(dphi/dy)``.

    Raises ``ConstraintDrift`` when the curve leaves the constraint set by
    more than ``drift_tol``.
    """
    drift = max(float(np.max(np.abs(C.values(traj.x[k], traj.y[k])))) for k in range(len(traj.t)))
    if drift > drift_tol:
        raise ConstraintDrift(f"curve violates the constraint by {drift:.3e}")
    dL = delta_L_along(A, Lag, traj)
    return float(max(np.max(np.abs(_offspan(dL[k], C.jet(traj.x[k], traj.y[k]).phi_y)))
                     for k in range(len(traj.t))))


class NonholonomicFlow(_ConstrainedFlow):
    mode = "nonholonomic"

    def __init__(self, A, Lag, C, force, cond_max):
        self.A, self.Lag, self.C, self.force, self.cond_max = A, Lag, C, force, cond_max

    def check_initial(self, x, y, mu, cfg):
        if mu.size:
            raise InputError("nonholonomic mode computes mu; do not pass an initial value")
        super().check_initial(x, y, mu, cfg)

    def evaluate(self, t, x, y, mu):
        xdot, ydot, mu_alg, cond = _nonholonomic_solve(self.A, self.Lag, self.C, t, x, y,
                                                       self.force, self.cond_max)
        return FlowEval(xdot, ydot, np.zeros(0), cond, mu=mu_alg)

    def diagnostics(self, traj, evals):
        dL = delta_L_along(self.A, self.Lag, traj)
        if self.force is not None:
            dL = dL - np.array([self.force.value(traj.x[k], traj.y[k], traj.t[k])
                                for k in range(len(traj.t))])
        dal, chet = [], []
        for k, ev in enumerate(evals):
            phi_y = self.C.jet(traj.x[k], traj.y[k]).phi_y
            dal.append(np.max(np.abs(_offspan(dL[k], phi_y))))
            chet.append(chetaev_residual(self.A, self.Lag, self.C, traj.state(k), ev.ydot, ev.mu,
                                         self.force))
        return {"dalembert_residual": np.array(dal), "identity_residual": np.array(chet),
                "delta_L_residual": np.array(dal)}


# --------------------------------------------------------------- vakonomic

def _vakonomic_system(A, Lag, C, t, x, y, mu):
    rho, sigma, c = A.structure_at(x)
    jet = legendre_jet(Lag, x, y, t)
    cj = C.jet(x, y)
    m, K = A.m, C.K
    M = np.zeros((m + K, m + K))
    M[:m, :m] = jet.W - np.einsum("k,kij->ij", mu, cj.phi_yy)
    M[:m, m:] = -cj.phi_y.T
    M[m:, :m] = cj.phi_y
    base = free_terms(rho, sigma, c, jet, y) - mu @ _phi_free_terms(rho, sigma, c, cj, y)
    b = np.concatenate([base, -cj.phi_x @ (rho @ y)])
    return M, b, rho


def _structural_null(M, m, tol=1e-13):
    scale = max(1.0, np.max(np.abs(M)))
    zero_rows = [i for i in range(m) if np.max(np.abs(M[i])) <= tol * scale]
    zero_cols = [j for j in range(m) if np.max(np.abs(M[:, j])) <= tol * scale]
    return zero_rows, zero_cols


def _vakonomic_solve(A, Lag, C, t, x, y, mu, cond_max):
    """Solve the vakonomic saddle system.

    When some velocity directions are absent from both L and phi (control
    velocities in optimal-control problems) the saddle matrix has matching
    zero rows and columns.  The zero rows are then algebraic conditions
    ``g(x, y, mu) = 0``; those velocity components are recomputed at every
    evaluation so that ``dg/dt = 0``, and their own rate is set to zero.
    Derivatives of ``g`` come from central differences of the assembly.
    Returns ``(xdot, ydot, mudot, cond, y_effective, g)``.
    """
    m, K = A.m, C.K
    M, b, rho = _vakonomic_system(A, Lag, C, t, x, y, mu)
    rows, cols = _structural_null(M, m)
    if not rows and not cols:
        sol, cond = solve_checked(M, b, cond_max, SingularSaddle, "vakonomic saddle matrix")
        return rho @ y, sol[:m], sol[m:], cond, None, np.zeros(0)
    if len(rows) != len(cols):
        raise SingularSaddle("vakonomic saddle matrix is singular")
    J = cols
    keep_rows = [i for i in range(m + K) if i not in rows]
    keep_cols = [j for j in range(m + K) if j not in J]

    def assemble_b(xv, yv, muv):
        return _vakonomic_system(A, Lag, C, t, xv, yv, muv)[1]

    g0 = b[rows]
    # dependence of b on the algebraic velocities (affine by construction)
    dB_dyJ = np.empty((m + K, len(J)))
    for a, j in enumerate(J):
        yp = y.copy()
        yp[j] += 1.0
        dB_dyJ[:, a] = assemble_b(x, yp, mu) - b
    # gradient of g with respect to (x, y, mu)
    s = np.concatenate([x, y, mu])
    n = A.n
    grad = np.empty((len(rows), len(s)))
    for i in range(len(s)):
        step = 1e-6 * (1.0 + abs(s[i]))
        sp, sm = s.copy(), s.copy()
        sp[i] += step
        sm[i] -= step
        bp = assemble_b(sp[:n], sp[n:n + m], sp[n + m:])[rows]
        bm = assemble_b(sm[:n], sm[n:n + m], sm[n + m:])[rows]
        grad[:, i] = (bp - bm) / (2.0 * step)
    gx, gy, gmu = grad[:, :n], grad[:, n:n + m], grad[:, n + m:]
    if np.max(np.abs(gy[:, J]), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(grad))):
        raise SingularSaddle("algebraic conditions depend on the undetermined velocities")
    # unknowns: [z without J (ydot_notJ, mudot), y_J]
    N = m + K
    S = np.zeros((N, N))
    rhs = np.zeros(N)
    nk = len(keep_cols)
    S[:len(keep_rows), :nk] = M[np.ix_(keep_rows, keep_cols)]
    S[:len(keep_rows), nk:] = -dB_dyJ[keep_rows]
    rhs[:len(keep_rows)] = b[keep_rows] - dB_dyJ[keep_rows] @ y[J]
    notJ = [j for j in range(m) if j not in J]
    yfree = y.copy()
    yfree[J] = 0.0
    hid = slice(len(keep_rows), N)
    # gx (rho y) + gy ydot + gmu mudot = 0 with ydot_J irrelevant
    col_of = {j: i for i, j in enumerate(keep_cols)}
    for jj in notJ:
        S[hid, col_of[jj]] = gy[:, jj]
    for kk in range(K):
        S[hid, col_of[m + kk]] = gmu[:, kk]
    S[hid, nk:] = gx @ rho[:, J]
    rhs[hid] = -gx @ (rho @ yfree)
    sol, cond = solve_checked(S, rhs, cond_max, SingularSaddle, "reduced vakonomic system")
    z = np.zeros(N)
    z[keep_cols] = sol[:nk]
    y_eff = y.copy()
    y_eff[J] = sol[nk:]
    return rho @ y_eff, z[:m], z[m:], cond, y_eff, g0


def vakonomic_rhs(A: AlgebroidChart, Lag: Lagrangian, C: GeometricConstraint, s: SystemState,
                  cond_max=1e8):
    """Accelerations and multiplier rates of the vakonomic equations.

    These are the Euler-Lagrange equations of ``L - mu_k phi^k`` with
    time-dependent ``mu``, closed by the differentiated constraint.
    Returns ``(xdot, ydot, mudot)``.
    """
    xdot, ydot, mudot, *_ = _vakonomic_solve(A, Lag, C, s.t, s.x, s.y, s.mu, cond_max)
    return xdot, ydot, mudot


def vakonomic_identity_residual(A, Lag, C, s: SystemState, ydot, mudot) -> float:
    """Residual of the vakonomic equations written out term by term.

    ``d/dt L_y - c(y, L_y) - sigma^T L_x
      - mudot_k phi^k_y - mu_k (d/dt phi^k_y - c(y, phi^k_y) - sigma^T phi^k_x)``
    with the time derivatives expanded along ``xdot = rho y``.
    """
    x, y, mu, t = s.x, s.y, s.mu, s.t
    rho, sigma, c = A.structure_at(x)
    jet = legendre_jet(Lag, x, y, t)
    cj = C.jet(x, y)
    xdot = rho @ y
    dlam = jet.Wxy.T @ xdot + jet.W @ ydot + jet.Wty
    lhs = dlam - c_dual(c, y, jet.lam) - sigma.T @ jet.dLdx
    rhs = mudot @ cj.phi_y
    for k in range(C.K):
        dphi_y = cj.phi_xy[k].T @ xdot + cj.phi_yy[k] @ ydot
        rhs = rhs + mu[k] * (dphi_y - c_dual(c, y, cj.phi_y[k]) - sigma.T @ cj.phi_x[k])
    return float(np.max(np.abs(lhs - rhs)))


class VakonomicFlow(_ConstrainedFlow):
    mode = "vakonomic"

    def __init__(self, A, Lag, C, cond_max):
        self.A, self.Lag, self.C, self.cond_max = A, Lag, C, cond_max

    def check_initial(self, x, y, mu, cfg):
        if mu.shape != (self.C.K,):
            raise InputError(f"vakonomic mode needs {self.C.K} initial multipliers")
        super().check_initial(x, y, mu, cfg)

    def evaluate(self, t, x, y, mu):
        xdot, ydot, mudot, cond, y_eff, g = _vakonomic_solve(self.A, self.Lag, self.C, t, x, y, mu,
                                                             self.cond_max)
        return FlowEval(xdot, ydot, mudot, cond, y=y_eff, algebraic=g)

    def diagnostics(self, traj, evals):
        ident = np.array([vakonomic_identity_residual(self.A, self.Lag, self.C, traj.state(k),
                                                      ev.ydot, ev.mudot)
                          for k, ev in enumerate(evals)])
        ydot = np.gradient(traj.y, traj.t, axis=0, edge_order=2)
        mudot = np.gradient(traj.mu, traj.t, axis=0, edge_order=2)
        fd = np.array([vakonomic_identity_residual(self.A, self.Lag, self.C, traj.state(k),
                                                   ydot[k], mudot[k])
                       for k in range(len(traj.t))])
        alg = np.array([np.max(np.abs(ev.algebraic), initial=0.0) for ev in evals])
        return {"identity_residual": ident, "delta_L_residual": fd, "algebraic_residual": alg}


def lift_admissibility_residual(A: AlgebroidChart, Lag: Lagrangian, C: GeometricConstraint, traj) -> float:
    """Check that ``epsilon_map(dL - mu dphi)`` along a vakonomic solution is admissible.

    The covector ``dL - mu_k dphi^k`` is mapped to a vector tangent to the
    dual bundle at ``(x, xi)``; its components must match the finite-difference
    derivative of the curve ``(x(t), xi(t))``.  Returns the largest mismatch
    over interior samples, which is ``O(h^2)`` on a true solution.
    """
    t, x, y = _samples(A, traj)
    mu = np.asarray(traj.mu, dtype=float)
    N = len(t)
    xi = np.empty((N, A.m))
    img_x = np.empty((N, A.n))
    img_xi = np.empty((N, A.m))
    for k in range(N):
        jet = legendre_jet(Lag, x[k], y[k], t[k])
        cj = C.jet(x[k], y[k])
        p = jet.dLdx - mu[k] @ cj.phi_x
        xi[k] = jet.lam - mu[k] @ cj.phi_y
        img = epsilon_map(A, CotangentEPoint(x[k], y[k], p, xi[k]))
        img_x[k], img_xi[k] = img.xdot, img.xidot
    dt = (t[2:] - t[:-2])[:, None]
    rx = (x[2:] - x[:-2]) / dt - img_x[1:-1]
    rxi = (xi[2:] - xi[:-2]) / dt - img_xi[1:-1]
    return float(max(np.max(np.abs(rx)), np.max(np.abs(rxi))))


# ---------------------------------------------------------- affine reduced

def _affine_solve(A, Lag, Aff, t, x, Y, force, cond_max):
    e0, de0, E, dE = Aff.frame_gradient(x)
    Y = np.asarray(Y, dtype=float)
    S = e0 + E.T @ Y
    dS = de0 + np.einsum("b,bia->ia", Y, dE) if len(Y) else de0
    rho, sigma, c = A.structure_at(x)
    xdot = rho @ S
    jet = legendre_jet(Lag, x, S, t)
    lam = jet.lam
    ydot_known = dS @ xdot
    dLtilde_dx = jet.dLdx + dS.T @ lam
    r = Aff.r
    lhs_known = np.empty(r)
    rhs = np.empty(r)
    for b in range(r):
        Eb, dEb = E[b], dE[b]
        lhs_known[b] = (dEb @ xdot) @ lam + Eb @ (jet.Wxy.T @ xdot + jet.W @ ydot_known + jet.Wty)
        bracket = c_contract(c, S, Eb) + dEb @ (rho @ S) - dS @ (sigma @ Eb)
        rhs[b] = bracket @ lam + (sigma @ Eb) @ dLtilde_dx
    if force is not None:
        rhs = rhs - E @ force.value(x, S, t)
    Wr = E @ jet.W @ E.T
    Ydot, cond = solve_checked(Wr, rhs - lhs_known, cond_max, SingularReducedHessian,
                               "reduced Hessian")
    return xdot, Ydot, cond


def affine_reduced_rhs(A: AlgebroidChart, Lag: Lagrangian, Aff: AffineConstraint, s: SystemState,
                       force: ForceField | None = None, cond_max=1e8):
    """Reduced equations on an affine subbundle, in affine coordinates ``Y``.

    With ``S = e0 + Y^a E_a`` treated as a section (``Y`` frozen), each
    direction ``E_b`` gives::

        d/dt <E_b, L_y> = <[S, E_b], L_y> + <sigma E_b, d/dx L(x, S(x))>

    which is the Euler-Lagrange system written in a frame adapted to the
    subbundle; only the pairing of bracket components with the momenta is
    needed, so the frame never has to be completed.  Returns ``(xdot, Ydot)``.
    """
    xdot, Ydot, _ = _affine_solve(A, Lag, Aff, s.t, s.x, s.y, force, cond_max)
    return xdot, Ydot


class AffineReducedFlow:
    mode = "affine_reduced"

    def __init__(self, A, Lag, Aff, force, cond_max):
        self.A, self.Lag, self.Aff, self.force, self.cond_max = A, Lag, Aff, force, cond_max

    def check_initial(self, x, y, mu, cfg):
        if y.shape != (self.Aff.r,):
            raise InputError(f"affine_reduced mode takes {self.Aff.r} affine coordinates as y")

    def evaluate(self, t, x, Y, mu):
        xdot, Ydot, cond = _affine_solve(self.A, self.Lag, self.Aff, t, x, Y, self.force, self.cond_max)
        return FlowEval(xdot, Ydot, np.zeros(0), cond)

    def constraint_values(self, x, Y):
        return np.zeros(0)

    def embedded(self, traj):
        """Trajectory samples with the full fibre coordinates."""
        return np.array([self.Aff.embed(traj.x[k], traj.y[k]) for k in range(len(traj.t))])

    def diagnostics(self, traj, evals):
        from .dynamics import Trajectory
        full = Trajectory(traj.t, traj.x, self.embedded(traj), traj.mu)
        dL = delta_L_along(self.A, self.Lag, full)
        if self.force is not None:
            dL = dL - np.array([self.force.value(full.x[k], full.y[k], full.t[k])
                                for k in range(len(full.t))])
        red = np.array([np.max(np.abs(self.Aff.frame(traj.x[k])[1] @ dL[k])) for k in range(len(traj.t))])
        return {"delta_L_residual": red}


# ------------------------------------------------------------ holonomicity

@dataclass
class HolonomicityReport:
    is_holonomic: bool
    max_offspan_residual: float
    samples: int


def is_holonomic(A: AlgebroidChart, Aff: AffineConstraint, sample_points, tol=1e-9) -> HolonomicityReport:
    """Decide whether brackets of sections of the affine subbundle stay in its directions.

    Requires a quasi-Lie chart.  Brackets among the generators ``e0`` and
    ``E_a`` are computed at each sample point and their component off
    ``span(E)`` is measured.
    """
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    report = check_axioms(A, pts, probe_count=0)
    if not report.is_quasi_lie:
        raise NotQuasiLie("holonomicity test needs a quasi-Lie chart "
                          f"(skew {report.skew_residual:.2e}, rho-sigma {report.rho_sigma_residual:.2e})")
    gens = [SectionExpr(list(row), A.n) for row in Aff.basis]
    if not Aff.is_linear:
        gens = [SectionExpr(list(Aff.e0), A.n)] + gens
    worst = 0.0
    for x in pts:
        _, E = Aff.frame(x)
        for i in range(len(gens)):
            for j in range(i + 1, len(gens)):
                B = section_bracket(A, gens[i], gens[j], x)
                worst = max(worst, float(np.max(np.abs(_offspan(B, E)))))
    return HolonomicityReport(worst <= tol, worst, len(pts))
