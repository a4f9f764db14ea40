"""General algebroids in a single chart.

A chart is described by three arrays of expressions in the base
coordinates ``x1..xn``:

* ``rho[b][i]``: the anchor, sending fibre direction ``i`` to base direction ``b``;
* ``sigma[a][j]``: the second anchor, which appears in the costate equations;
* ``c[k][i][j]``: the structure functions of the bracket of basis sections.

For a Lie algebroid ``rho == sigma``, ``c`` is skew in ``(i, j)`` and the
associated bivector on the dual bundle satisfies the Jacobi identity.  The
general case drops all three requirements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, DimensionError, GridMismatch, InputError, NotAdmissible
from .expr import ExprArray, as_expr


def base_names(n):
    return tuple(f"x{a + 1}" for a in range(n))


def fiber_names(m):
    return tuple(f"y{i + 1}" for i in range(m))


@dataclass(frozen=True)
class AlgebroidChart:
    """Structure functions of a general algebroid on ``R^n x R^m``."""

    n: int
    m: int
    rho: tuple
    sigma: tuple
    c: tuple
    _arrays: dict = field(default=None, repr=False, compare=False)
    _frozen: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise DimensionError(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        arrays = {
            "rho": ExprArray.build(self.rho, (self.n, self.m)),
            "sigma": ExprArray.build(self.sigma, (self.n, self.m)),
            "c": ExprArray.build(self.c, (self.m, self.m, self.m)),
        }
        allowed = set(base_names(self.n))
        for name, arr in arrays.items():
            extra = [v for v in arr.free_vars() if v not in allowed]
            if extra:
                raise InputError(f"{name} may only depend on {sorted(allowed)}, found {extra}")
        for name, arr in arrays.items():
            object.__setattr__(self, name, tuple(np.array(arr.entries, dtype=object)
                                                 .reshape(arr.shape).tolist()))
        object.__setattr__(self, "_arrays", arrays)
        if all(arr.is_constant for arr in arrays.values()):
            frozen = tuple(arrays[k].value({}) for k in ("rho", "sigma", "c"))
            for arr in frozen:
                arr.setflags(write=False)
            object.__setattr__(self, "_frozen", frozen)

    # evaluation ----------------------------------------------------------

    @property
    def x_names(self):
        return base_names(self.n)

    def env(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionError(f"base point must have length {self.n}, got shape {x.shape}")
        return dict(zip(self.x_names, x.tolist()))

    def rho_at(self, x):
        return self._arrays["rho"].value(self.env(x))

    def sigma_at(self, x):
        return self._arrays["sigma"].value(self.env(x))

    def c_at(self, x):
        return self._arrays["c"].value(self.env(x))

    def structure_at(self, x):
        """``(rho, sigma, c)`` evaluated at ``x``; treat the arrays as read-only."""
        if self._frozen is not None:
            return self._frozen
        env = self.env(x)
        return (self._arrays["rho"].value(env), self._arrays["sigma"].value(env),
                self._arrays["c"].value(env))

    def structure_gradient(self, x):
        """Structure functions and their derivatives along the base.

        Each derivative array has the base index last, e.g. ``drho[b, i, a]``
        is the derivative of ``rho[b, i]`` with respect to ``x_a``.
        """
        env = self.env(x)
        names = self.x_names
        rho, drho = self._arrays["rho"].gradient(env, names)
        sigma, dsigma = self._arrays["sigma"].gradient(env, names)
        c, dc = self._arrays["c"].gradient(env, names)
        return rho, sigma, c, drho, dsigma, dc

    @property
    def is_constant(self):
        return all(a.is_constant for a in self._arrays.values())

    # serialization -------------------------------------------------------

    def to_dict(self):
        return {"n": self.n, "m": self.m,
                "rho": self._arrays["rho"].nested_strings(),
                "sigma": self._arrays["sigma"].nested_strings(),
                "c": self._arrays["c"].nested_strings()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(int(d["n"]), int(d["m"]), d["rho"], d["sigma"], d["c"])
        except KeyError as exc:
            raise InputError(f"algebroid is missing field {exc.args[0]!r}") from None


# ----------------------------------------------------------------- points

def _vec(v, size, what):
    arr = np.asarray(v, dtype=float)
    if arr.shape[-1:] != (size,):
        raise DimensionError(f"{what} must have trailing length {size}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{what} has non-finite entries")
    return arr


@dataclass
class CotangentEPoint:
    """A covector on E at (x, y) with base part p and fibre part xi."""
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "p", "xi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass
class TangentEDualPoint:
    """A tangent vector to the dual bundle at (x, xi)."""
    x: np.ndarray
    xi: np.ndarray
    xdot: np.ndarray
    xidot: np.ndarray

    def __post_init__(self):
        for name in ("x", "xi", "xdot", "xidot"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass
class TangentEPoint:
    """A tangent vector to E at (x, y); fields may carry a leading sample axis."""
    x: np.ndarray
    y: np.ndarray
    xdot: np.ndarray
    ydot: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "xdot", "ydot"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))


class SectionExpr:
    """A section of E given by m component expressions in the base coordinates."""

    def __init__(self, components, n):
        self.n = n
        self.array = ExprArray.build(list(components), (len(components),))
        self.components = self.array.entries

    @property
    def m(self):
        return len(self.components)

    def scaled(self, f) -> "SectionExpr":
        f = as_expr(f)
        return SectionExpr([f * e for e in self.components], self.n)

    def __add__(self, other):
        return SectionExpr([a + b for a, b in zip(self.components, other.components)], self.n)

    def value(self, x):
        return self.array.value(dict(zip(base_names(self.n), np.asarray(x, float).tolist())))

    def gradient(self, x):
        env = dict(zip(base_names(self.n), np.asarray(x, float).tolist()))
        return self.array.gradient(env, base_names(self.n))


def _check_base(A, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n,):
        raise DimensionError(f"base point must have length {A.n}")
    return x


# ------------------------------------------------------------- operations

def c_contract(c, y, z):
    """``out^k = c^k_ij y^i z^j``."""
    return (c @ z) @ y


def c_dual(c, y, xi):
    """``out_j = c^k_ij y^i xi_k``."""
    m = len(xi)
    return y @ (xi @ c.reshape(m, m * m)).reshape(m, m)


def epsilon_map(A: AlgebroidChart, w: CotangentEPoint) -> TangentEDualPoint:
    """Send a covector on E to a vector tangent to the dual bundle."""
    x = _check_base(A, w.x)
    y, p, xi = _vec(w.y, A.m, "y"), _vec(w.p, A.n, "p"), _vec(w.xi, A.m, "xi")
    rho, sigma, c = A.structure_at(x)
    return TangentEDualPoint(x, xi, rho @ y, c_dual(c, y, xi) + sigma.T @ p)


def kappa_apply(A: AlgebroidChart, v: TangentEPoint, e_fiber, tol=None) -> TangentEPoint:
    """Apply the relation dual to ``epsilon_map`` to a vector v over ``e_fiber``.

    ``v`` must be compatible with ``e_fiber``: ``v.xdot == rho(x) e_fiber``.
    The image sits over ``e_fiber`` and has base velocity ``sigma(x) v.y``.
    """
    x = _check_base(A, v.x)
    e = _vec(e_fiber, A.m, "e_fiber")
    Y, xdot, Ydot = _vec(v.y, A.m, "y"), _vec(v.xdot, A.n, "xdot"), _vec(v.ydot, A.m, "ydot")
    rho, sigma, c = A.structure_at(x)
    mismatch = np.max(np.abs(xdot - rho @ e), initial=0.0)
    limit = tol if tol is not None else 1e-8 * (1.0 + np.max(np.abs(xdot), initial=0.0))
    if mismatch > limit:
        raise CompatibilityError(f"xdot differs from rho(x) e by {mismatch:.3e}")
    return TangentEPoint(x, e, sigma @ Y, Ydot + c_contract(c, e, Y))


def tangent_pairing(v: TangentEPoint, w: TangentEDualPoint, tol=1e-8) -> float:
    """Pairing of a vector tangent to E with one tangent to the dual bundle.

    Both must lie over the same base vector; the value is
    ``<ydot, xi> + <y, xidot>``.
    """
    scale = 1.0 + np.max(np.abs(v.xdot), initial=0.0)
    if np.max(np.abs(np.asarray(v.x) - w.x), initial=0.0) > tol * scale or \
            np.max(np.abs(np.asarray(v.xdot) - w.xdot), initial=0.0) > tol * scale:
        raise CompatibilityError("vectors do not lie over the same base tangent vector")
    return float(np.dot(v.ydot, w.xi) + np.dot(v.y, w.xidot))


def kappa_duality_residual(A: AlgebroidChart, v: TangentEPoint, e_fiber, p, xi) -> float:
    """Difference between the two sides of the duality between kappa and epsilon.

    Left: ``v`` paired with ``epsilon_map`` of the covector ``(x, e, p, xi)``.
    Right: ``kappa_apply(v)`` paired with that covector as an element of T*E.
    """
    w = CotangentEPoint(v.x, e_fiber, p, xi)
    lhs = tangent_pairing(v, epsilon_map(A, w))
    kv = kappa_apply(A, v, e_fiber)
    rhs = float(np.dot(kv.xdot, w.p) + np.dot(kv.ydot, w.xi))
    return abs(lhs - rhs)


def holonomic_vector_residual(A: AlgebroidChart, v: TangentEPoint) -> float:
    """How far ``v`` is from satisfying ``xdot = rho(x) y``."""
    rho = A.rho_at(_check_base(A, v.x))
    return float(np.max(np.abs(np.asarray(v.xdot) - rho @ v.y), initial=0.0))


def _samples(A, traj):
    t = np.asarray(traj.t, dtype=float)
    x = np.asarray(traj.x, dtype=float).reshape(len(t), A.n)
    y = np.asarray(traj.y, dtype=float)
    if y.shape[0] != len(t):
        raise GridMismatch("trajectory arrays disagree on the number of samples")
    return t, x, y


def admissibility_defect(A: AlgebroidChart, traj) -> np.ndarray:
    """Per-sample ``dx/dt - rho(x) y`` with central differences (interior only)."""
    t, x, y = _samples(A, traj)
    if len(t) < 3:
        raise InputError("need at least 3 samples")
    dx = (x[2:] - x[:-2]) / (t[2:] - t[:-2])[:, None]
    out = np.empty_like(dx)
    for k in range(1, len(t) - 1):
        out[k - 1] = dx[k - 1] - A.rho_at(x[k]) @ y[k]
    return out


def is_admissible(A: AlgebroidChart, traj, tol=1e-6):
    """Check ``dx/dt = rho(x) y`` along a sampled curve; returns (ok, residual)."""
    res = float(np.max(np.abs(admissibility_defect(A, traj)), initial=0.0))
    return res <= tol, res


def admissible_variation(A: AlgebroidChart, traj, f, tol=None) -> TangentEPoint:
    """Variation of an admissible curve generated by a time-dependent section f.

    ``f`` holds samples ``f(t_k)`` (shape ``(N, m)``).  Returns a
    :class:`TangentEPoint` whose fields carry the sample axis first: base
    part ``sigma(x) f`` and fibre part ``df/dt + c(y, f)``.  ``df/dt`` uses
    second-order differences, one-sided at the endpoints.
    """
    t, x, y = _samples(A, traj)
    f = np.asarray(f, dtype=float)
    if f.shape != y.shape:
        raise GridMismatch(f"variation generator has shape {f.shape}, expected {y.shape}")
    if tol is not None:
        ok, res = is_admissible(A, traj, tol)
        if not ok:
            raise NotAdmissible(f"curve is not admissible (residual {res:.3e})")
    fdot = np.gradient(f, t, axis=0, edge_order=2)
    dx = np.empty_like(x)
    dy = np.empty_like(y)
    for k in range(len(t)):
        _, sigma, c = A.structure_at(x[k])
        dx[k] = sigma @ f[k]
        dy[k] = fdot[k] + c_contract(c, y[k], f[k])
    return TangentEPoint(x, y, dx, dy)


def section_bracket(A: AlgebroidChart, X: SectionExpr, Y: SectionExpr, x) -> np.ndarray:
    """Bracket of two sections at a base point.

    ``[X, Y]^k = c^k_ij X^i Y^j + rho^a_i X^i d_a Y^k - sigma^a_j Y^j d_a X^k``
    """
    x = _check_base(A, x)
    rho, sigma, c = A.structure_at(x)
    Xv, dX = X.gradient(x)
    Yv, dY = Y.gradient(x)
    return c_contract(c, Xv, Yv) + dY @ (rho @ Xv) - dX @ (sigma @ Yv)


def adjoint(A: AlgebroidChart) -> AlgebroidChart:
    """The chart of the transposed bivector on the dual bundle.

    Transposing swaps the two tensor slots, which turns ``c^k_ij`` into
    ``c^k_ji`` and exchanges the anchors with a sign: the new anchor is
    ``-sigma`` and the new second anchor is ``-rho``.
    """
    c = [[[A.c[k][j][i] for j in range(A.m)] for i in range(A.m)] for k in range(A.m)]
    rho = [[-e for e in row] for row in A.sigma]
    sigma = [[-e for e in row] for row in A.rho]
    return AlgebroidChart(A.n, A.m, rho, sigma, c)


def opposite(A: AlgebroidChart) -> AlgebroidChart:
    """The chart with every structure function negated."""
    neg = lambda nested: np.vectorize(lambda e: -e, otypes=[object])(np.array(nested, dtype=object)).tolist()
    return AlgebroidChart(A.n, A.m, neg(A.rho), neg(A.sigma), neg(A.c))


# ----------------------------------------------------------------- axioms

@dataclass
class AxiomReport:
    is_quasi_lie: bool
    is_lie: bool
    anchor_hom_residual: float
    jacobiator_residual: float
    skew_residual: float
    rho_sigma_residual: float
    samples_used: int

    def classification(self):
        if self.is_lie:
            return "lie"
        if self.is_quasi_lie:
            return "quasi_lie"
        return "general"

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v)
                for k, v in self.__dict__.items()}


def dual_bivector(A: AlgebroidChart, x, xi):
    """The bivector on the dual bundle and its derivatives at (x, xi).

    Coordinates are ordered ``(x1..xn, xi1..xim)``.  Returns ``(P, dP)`` with
    ``{f, g} = df . P . dg`` for functions on the dual bundle and
    ``dP[u, v, s]`` the derivative of ``P[u, v]`` along coordinate ``s``.
    """
    n, m = A.n, A.m
    rho, sigma, c, drho, dsigma, dc = A.structure_gradient(x)
    D = n + m
    P = np.zeros((D, D))
    P[n:, n:] = np.einsum("kij,k->ij", c, xi)
    P[n:, :n] = rho.T
    P[:n, n:] = -sigma
    dP = np.zeros((D, D, D))
    dP[n:, n:, :n] = np.einsum("kija,k->ija", dc, xi)
    dP[n:, n:, n:] = np.transpose(c, (1, 2, 0))
    dP[n:, :n, :n] = np.transpose(drho, (1, 0, 2))
    dP[:n, n:, :n] = -dsigma
    return P, dP


def jacobiator_tensor(A: AlgebroidChart, x, xi):
    """Cyclic sum ``{{f,g},h} + {{g,h},f} + {{h,f},g}`` on linear functions.

    Returned as a trilinear form ``J[u, v, t]`` on differentials, so the
    Jacobiator of linear functions with differentials a, b, c is
    ``J(a, b, c)``.
    """
    P, dP = dual_bivector(A, x, xi)
    T = np.einsum("uvs,st->uvt", dP, P)
    return T + np.transpose(T, (1, 2, 0)) + np.transpose(T, (2, 0, 1))


def anchor_hom_defect(A: AlgebroidChart, x):
    """``rho^b_k c^k_ij - (rho^a_i d_a rho^b_j - rho^a_j d_a rho^b_i)``."""
    rho, _, c, drho, _, _ = A.structure_gradient(x)
    lhs = np.einsum("bk,kij->bij", rho, c)
    t = np.einsum("ai,bja->bij", rho, drho)
    return lhs - (t - np.transpose(t, (0, 2, 1)))


def check_axioms(A: AlgebroidChart, sample_points, probe_count=3, tol=1e-9, seed=0) -> AxiomReport:
    """Numerically test the algebroid axioms at the given base points.

    The Jacobi identity of the dual bivector is probed on the coordinate
    functions and ``probe_count`` random linear functions, at a random
    costate for each sample point.  Derivatives of the structure functions
    come from jets, so the only error is floating-point rounding.
    """
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if pts.shape[1] != A.n:
        raise DimensionError(f"sample points must have {A.n} columns")
    rng = np.random.default_rng(seed)
    D = A.n + A.m
    probes = np.vstack([np.eye(D), rng.normal(size=(probe_count, D))]) if probe_count else np.eye(D)
    skew = rs = jac = hom = 0.0
    for x in pts:
        rho, sigma, c = A.structure_at(x)
        skew = max(skew, np.max(np.abs(c + np.transpose(c, (0, 2, 1))), initial=0.0))
        rs = max(rs, np.max(np.abs(rho - sigma), initial=0.0))
        hom = max(hom, np.max(np.abs(anchor_hom_defect(A, x)), initial=0.0))
        xi = rng.normal(size=A.m)
        J = jacobiator_tensor(A, x, xi)
        vals = np.einsum("uvt,au,bv,ct->abc", J, probes, probes, probes)
        jac = max(jac, np.max(np.abs(vals), initial=0.0))
    quasi = bool(skew <= tol and rs <= tol)
    lie = bool(quasi and jac <= tol and hom <= tol)
    return AxiomReport(quasi, lie, float(hom), float(jac), float(skew), float(rs), len(pts))
