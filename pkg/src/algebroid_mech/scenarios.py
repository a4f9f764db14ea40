"""Ready-made charts, Lagrangians and constraints for standard mechanical systems.

Each builder returns plain tuples ``(chart, lagrangian[, constraint])``.
``SCENARIOS`` maps scenario names to functions producing complete run
files (JSON-ready dictionaries) for the command line.
"""

from __future__ import annotations

import numpy as np

from .algebroid import AlgebroidChart, base_names, fiber_names
from .constraints import AffineConstraint, GeometricConstraint
from .errors import InputError
from .expr import Expr, as_expr, parse
from .lagrangian import Lagrangian


def _zeros(*shape):
    return np.zeros(shape, dtype=int).tolist()


def _positive(**values):
    for name, v in values.items():
        if not float(v) > 0:
            raise InputError(f"{name} must be positive, got {v}")


def so3_structure_constants():
    """``c[k][i][j] = epsilon_ijk``, i.e. ``[e1, e2] = e3`` and cyclic."""
    c = _zeros(3, 3, 3)
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        c[k][i][j] = 1
        c[k][j][i] = -1
    return c


def canonical_tm(V="0", n=None):
    """Tangent bundle of R^n with ``L = |y|^2 / 2 - V(x)``."""
    V = as_expr(V)
    if any(v.startswith("y") for v in V.free_vars):
        raise InputError("the potential may not depend on velocities")
    if n is None:
        idx = [int(v[1:]) for v in V.free_vars if v.startswith("x") and v[1:].isdigit()]
        n = max(idx, default=1)
    eye = np.eye(n, dtype=int).tolist()
    chart = AlgebroidChart(n, n, eye, eye, _zeros(n, n, n))
    kinetic = sum((Expr.var(y) ** 2 for y in fiber_names(n)), Expr.const(0.0)) * 0.5
    return chart, Lagrangian(kinetic - V, n, n)


def lie_algebra_so3(I=(1.0, 2.0, 3.0)):
    """so(3) over a one-point base with ``L = sum I_i y_i^2 / 2``.

    The base coordinate ``x1`` is a dummy: both anchors vanish.
    """
    _positive(I1=I[0], I2=I[1], I3=I[2])
    chart = AlgebroidChart(1, 3, _zeros(1, 3), _zeros(1, 3), so3_structure_constants())
    L = parse("0.5 * (I1 * y1^2 + I2 * y2^2 + I3 * y3^2)")
    return chart, Lagrangian(L, 1, 3, {"I1": I[0], "I2": I[1], "I3": I[2]})


def _sphere_chart():
    anchor = [[1, 0, 0, 0, 0], [0, 1, 0, 0, 0]]
    c = _zeros(5, 5, 5)
    so3 = so3_structure_constants()
    for k in range(3):
        for i in range(3):
            for j in range(3):
                c[k + 2][i + 2][j + 2] = so3[k][i][j]
    return AlgebroidChart(2, 5, anchor, anchor, c)


def free_sphere(mass=1.0, r=1.0, k2=2.0):
    """Homogeneous sphere on the plane: ``TR^2 x so(3)``, fibre ``(xdot, ydot, omega)``."""
    _positive(mass=mass, r=r, k2=k2)
    L = parse("0.5 * mass * (y1^2 + y2^2 + k2 * (y3^2 + y4^2 + y5^2))")
    return _sphere_chart(), Lagrangian(L, 2, 5, {"mass": mass, "k2": k2, "r": r})


def rolling_ball(mass=1.0, r=1.0, k2=2.0, Omega=3.0):
    """Ball rolling without slipping on a table spinning at rate ``Omega``.

    Contact constraints: ``xdot - r omega2 + Omega y = 0`` and
    ``ydot + r omega1 - Omega x = 0`` with ``(x, y) = (x1, x2)``.
    """
    chart, L = free_sphere(mass, r, k2)
    C = GeometricConstraint(("y1 - r * y4 + Omega * x2", "y2 + r * y3 - Omega * x1"), 2, 5,
                            {"r": r, "Omega": Omega})
    return chart, L, C


def rolling_ball_rate(r=1.0, k2=2.0, Omega=3.0):
    """Rotation rate of the planar velocity of the rolling ball."""
    return k2 * Omega / (r * r + k2)


def sigma_ne_rho_chart():
    """One-dimensional chart whose two anchors differ away from ``x1 = 0``."""
    return AlgebroidChart(1, 1, [[1]], [["1 + x1"]], [[[0]]])


def perturbed_so3_chart(delta=0.1):
    """so(3) with ``c^3_12`` shifted by ``delta``; breaks both skew symmetry and Jacobi."""
    c = so3_structure_constants()
    c[2][0][1] = 1 + delta
    return AlgebroidChart(1, 3, _zeros(1, 3), _zeros(1, 3), c)


def twisted_tm_chart():
    """TR^2 in the frame ``e1 = d/dx1``, ``e2 = d/dx2 + x1 d/dx1``.

    A Lie algebroid with a non-constant anchor; ``[e1, e2] = e1``.
    """
    rho = [[1, "x1"], [0, 1]]
    c = _zeros(2, 2, 2)
    c[0][0][1] = 1
    c[0][1][0] = -1
    return AlgebroidChart(2, 2, rho, rho, c)


# ------------------------------------------------------------ projection

def orthonormal_frame(metric, subbundle):
    """Gram-Schmidt on the rows of ``subbundle`` with respect to ``metric``.

    Both are nested lists of expressions in the base coordinates; the result
    is a list of rows (expressions) spanning the same subbundle.
    """
    g = [[as_expr(e) for e in row] for row in metric]
    m = len(g)

    def inner(u, v):
        return sum((u[i] * g[i][j] * v[j] for i in range(m) for j in range(m)), Expr.const(0.0))

    frame = []
    for row in subbundle:
        v = [as_expr(e) for e in row]
        if len(v) != m:
            raise InputError("subbundle rows must match the metric size")
        for u in frame:
            proj = inner(v, u)
            v = [v[i] - proj * u[i] for i in range(m)]
        norm = inner(v, v) ** 0.5
        frame.append([vi / norm for vi in v])
    return frame


def projected_algebroid(A: AlgebroidChart, metric, subbundle, sample_points=None) -> AlgebroidChart:
    """Structure induced on a subbundle by orthogonal projection of the bracket.

    Works in an orthonormal frame ``u_alpha`` of the subbundle: the anchors
    are restricted to it and ``c^gamma_alpha,beta = <u_gamma, [u_alpha, u_beta]>``.
    The fibre coordinates of the result are components along ``u_alpha``.
    The metric must be positive definite at ``sample_points`` (default: the origin).
    """
    n, m = A.n, A.m
    pts = np.zeros((1, n)) if sample_points is None else np.atleast_2d(np.asarray(sample_points, float))
    G = [[as_expr(e) for e in row] for row in metric]
    if len(G) != m or any(len(row) != m for row in G):
        raise InputError(f"metric must be {m}x{m}")
    for x in pts:
        env = dict(zip(base_names(n), x.tolist()))
        g = np.array([[e.evaluate(env) for e in row] for row in G])
        if not np.allclose(g, g.T) or np.min(np.linalg.eigvalsh(0.5 * (g + g.T))) <= 0:
            raise InputError(f"metric is not positive definite at x={x.tolist()}")
    frame = orthonormal_frame(metric, subbundle)
    g = [[as_expr(e) for e in row] for row in metric]
    xs = base_names(n)
    r = len(frame)
    rho = [[sum((A.rho[a][i] * u[i] for i in range(m)), Expr.const(0.0)) for u in frame] for a in range(n)]
    sigma = [[sum((A.sigma[a][i] * u[i] for i in range(m)), Expr.const(0.0)) for u in frame] for a in range(n)]
    d = [[[u[i].diff(xa) for xa in xs] for i in range(m)] for u in frame]

    def bracket(al, be):
        X, Y = frame[al], frame[be]
        out = []
        for k in range(m):
            term = Expr.const(0.0)
            for i in range(m):
                for j in range(m):
                    if not (A.c[k][i][j].is_constant and A.c[k][i][j].evaluate({}) == 0.0):
                        term = term + A.c[k][i][j] * X[i] * Y[j]
            for a in range(n):
                for i in range(m):
                    term = term + A.rho[a][i] * X[i] * d[be][k][a]
                    term = term - A.sigma[a][i] * Y[i] * d[al][k][a]
            out.append(term)
        return out

    c = [[[Expr.const(0.0)] * r for _ in range(r)] for _ in range(r)]
    for al in range(r):
        for be in range(r):
            B = bracket(al, be)
            for ga in range(r):
                u = frame[ga]
                c[ga][al][be] = sum((u[k] * g[k][l] * B[l] for k in range(m) for l in range(m)),
                                    Expr.const(0.0))
    return AlgebroidChart(n, r, rho, sigma, c)


# --------------------------------------------------------------- control

def pontryagin_control(f, L_base, dims, base_chart: AlgebroidChart | None = None):
    """Optimal control as a vakonomic problem on a product chart.

    ``dims = (nE, mE, k)``: base and fibre dimensions of the state algebroid
    (default: the tangent bundle of R^nE) and the number of controls.
    ``f`` gives ``mE`` expressions and ``L_base`` the running cost, both in
    ``x1..x_nE`` and ``u1..uk``.  The product chart has base ``(x, u)`` and
    fibre ``(y, udot)``; the constraint is ``y - f(x, u) = 0``.
    """
    nE, mE, k = dims
    if base_chart is None:
        if nE != mE:
            raise InputError("default state chart is a tangent bundle and needs nE == mE")
        base_chart, _ = canonical_tm("0", nE)
    if (base_chart.n, base_chart.m) != (nE, mE):
        raise InputError("base chart does not match dims")
    n, m = nE + k, mE + k
    rename = {f"u{i + 1}": f"x{nE + i + 1}" for i in range(k)}

    def pull(e):
        e = as_expr(e)
        allowed = set(base_names(nE)) | set(rename)
        extra = [v for v in e.free_vars if v not in allowed]
        if extra:
            raise InputError(f"control data may only use x1..x{nE} and u1..u{k}, found {extra}")
        return e.substitute(rename)

    f = [pull(e) for e in f]
    if len(f) != mE:
        raise InputError(f"f needs {mE} components")
    rho = _zeros(n, m)
    sigma = _zeros(n, m)
    for a in range(nE):
        for i in range(mE):
            rho[a][i] = base_chart.rho[a][i]
            sigma[a][i] = base_chart.sigma[a][i]
    for i in range(k):
        rho[nE + i][mE + i] = 1
        sigma[nE + i][mE + i] = 1
    c = _zeros(m, m, m)
    for a in range(mE):
        for i in range(mE):
            for j in range(mE):
                c[a][i][j] = base_chart.c[a][i][j]
    chart = AlgebroidChart(n, m, rho, sigma, c)
    L = Lagrangian(pull(L_base), n, m)
    C = GeometricConstraint(tuple(Expr.var(fiber_names(m)[i]) - f[i] for i in range(mE)), n, m)
    return chart, L, C


# ----------------------------------------------------------- run specs

def _spec(chart, L, mode, x0, y0, h, t1, constraint=None, mu0=None, expect=None, **extra):
    spec = {"algebroid": chart.to_dict(), "lagrangian": L.to_dict(), "mode": mode,
            "initial": {"t0": 0.0, "x": list(map(float, x0)), "y": list(map(float, y0))},
            "integrator": {"h": h, "t1": t1}}
    if constraint is not None:
        spec["constraint"] = constraint.to_dict()
    if mu0 is not None:
        spec["initial"]["mu"] = list(map(float, mu0))
    if expect is not None:
        spec["expect"] = expect
    spec.update(extra)
    return spec


def _oscillator_spec(omega=1.0, amplitude=1.0, h=1e-3, periods=1):
    n_steps = int(round(2 * np.pi * periods / h))
    h = 2 * np.pi * periods / n_steps
    chart, L = canonical_tm(f"0.5 * {float(omega) ** 2!r} * x1^2", 1)
    return _spec(chart, L, "free", [amplitude], [0.0], h, 2 * np.pi * periods, expect="lie")


def _euler_top_spec(I1=1.0, I2=2.0, I3=3.0, h=1e-3, t1=10.0):
    chart, L = lie_algebra_so3((I1, I2, I3))
    return _spec(chart, L, "free", [0.0], [1.0, 0.5, -0.3], h, t1, expect="lie")


def _free_sphere_spec(mass=1.0, r=1.0, k2=2.0, h=1e-3, t1=10.0):
    chart, L = free_sphere(mass, r, k2)
    return _spec(chart, L, "free", [0.0, 0.0], [0.3, -0.2, 0.5, 0.1, -0.4], h, t1, expect="lie")


def _rolling_ball_spec(mass=1.0, r=1.0, k2=2.0, Omega=3.0, h=1e-3, t1=5.0, mode="nonholonomic"):
    chart, L, C = rolling_ball(mass, r, k2, Omega)
    x0 = [0.5, -0.2]
    v = [0.3, 0.1]
    w1 = (Omega * x0[0] - v[1]) / r
    w2 = (v[0] + Omega * x0[1]) / r
    mu0 = [0.2, -0.1] if mode == "vakonomic" else None
    return _spec(chart, L, mode, x0, v + [w1, w2, 0.7], h, t1, C, mu0, expect="lie")


def _min_energy_spec(x0=0.2, xi0=0.7, h=1e-3, t1=2.0):
    chart, L, C = pontryagin_control(["u1"], "0.5 * u1^2", (1, 1, 1))
    # consistent start: u = xi = -mu, y = u, control velocity 0
    return _spec(chart, L, "vakonomic", [x0, xi0], [xi0, 0.0], h, t1, C, [-xi0], expect="lie")


def _sigma_ne_rho_spec(h=1e-3, t1=1.0):
    chart = sigma_ne_rho_chart()
    L = Lagrangian("0.5 * y1^2 - 0.5 * x1^2", 1, 1)
    return _spec(chart, L, "free", [0.5], [0.2], h, t1, expect="general")


def _affine_channel_spec(drift=1.0, omega=1.0, h=1e-3, t1=2.0, mode="affine_reduced"):
    """TR^2 constrained to ``y2 = x1 y1 + drift``; holonomic for any drift."""
    chart, L = canonical_tm(f"0.5 * {float(omega) ** 2!r} * (x1^2 + x2^2)", 2)
    aff = AffineConstraint(("0", repr(float(drift))), (("1", "x1"),), 2, 2)
    x0, Y0 = [0.3, -0.1], 0.4
    if mode == "affine_reduced":
        y0 = [Y0]
    else:
        y0 = [Y0, x0[0] * Y0 + float(drift)]
    mu0 = [0.0] if mode == "vakonomic" else None
    return _spec(chart, L, mode, x0, y0, h, t1, aff, mu0, expect="lie")


SCENARIOS = {
    "affine_channel": _affine_channel_spec,
    "oscillator": _oscillator_spec,
    "euler_top": _euler_top_spec,
    "free_sphere": _free_sphere_spec,
    "rolling_ball": _rolling_ball_spec,
    "min_energy_control": _min_energy_spec,
    "sigma_ne_rho": _sigma_ne_rho_spec,
}


def scenario_spec(name, **params):
    """Run file for a named scenario with keyword overrides."""
    try:
        builder = SCENARIOS[name]
    except KeyError:
        raise InputError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise InputError(f"bad parameters for scenario {name!r}: {exc}") from None
