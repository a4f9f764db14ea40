import numpy as np
import pytest

from algebroid_mech.algebroid import AlgebroidChart
from algebroid_mech.constraints import (AffineConstraint, GeometricConstraint, affine_reduced_rhs,
                                        chetaev_residual, consistency_project, dalembert_residual,
                                        is_holonomic, lift_admissibility_residual, nonholonomic_rhs,
                                        vakonomic_identity_residual, vakonomic_rhs)
from algebroid_mech.dynamics import SystemState
from algebroid_mech.errors import (ConstraintDrift, DimensionError, InputError, NoConvergence, NotQuasiLie,
                                   RankDeficientConstraint, SingularReducedHessian, SingularSaddle)
from algebroid_mech.lagrangian import Lagrangian
from algebroid_mech.scenarios import (canonical_tm, lie_algebra_so3, pontryagin_control, projected_algebroid,
                                      rolling_ball, rolling_ball_rate)

from helpers import rotation, run

BALL, BALL_L, BALL_C = rolling_ball(mass=1.0, r=1.0, k2=2.0, Omega=3.0)
BALL_X0 = [0.5, -0.2]
# planar velocity (0.3, 0.1), spin fixed by the contact conditions, omega3 = 0.7
BALL_Y0 = [0.3, 0.1, 3.0 * 0.5 - 0.1, 0.3 - 3.0 * 0.2, 0.7]


# -------------------------------------------------------------- projection

def test_projection_leaves_points_on_the_set_alone():
    y = np.array(BALL_Y0)
    assert np.array_equal(consistency_project(BALL_C, BALL_X0, y), y)


def test_projection_of_rolling_ball_velocity():
    y = consistency_project(BALL_C, [0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 0.0])
    # minimal displacement splits the slip between y1 and omega2
    assert np.allclose(y, [0.5, 0.0, 0.0, 0.5, 0.0], atol=1e-15)
    assert np.max(np.abs(BALL_C.values([0.0, 0.0], y))) <= 1e-12


def test_projection_failures():
    C = GeometricConstraint(("y1^2 + 1",), 1, 1)
    with pytest.raises(NoConvergence):
        consistency_project(C, [0.0], [0.7])
    C = GeometricConstraint(("y1 - 1", "2 * y1 - 2"), 1, 2)
    with pytest.raises(RankDeficientConstraint):
        consistency_project(C, [0.0], [0.0, 0.0])


def test_constraint_validation():
    with pytest.raises(DimensionError):
        GeometricConstraint(("y1", "y2", "y1 + y2"), 1, 2)
    with pytest.raises(InputError):
        GeometricConstraint(("y3",), 1, 2)
    with pytest.raises(DimensionError):
        AffineConstraint(("0", "0"), (("1", "0"), ("0", "1")), 1, 2)
    with pytest.raises(DimensionError):
        AffineConstraint(("0", "0"), (("1",),), 1, 2)
    with pytest.raises(InputError):
        AffineConstraint(("y1", "0"), (("1", "0"),), 1, 2)


# ------------------------------------------------------------ rolling ball

def test_rolling_ball_momentum_equations():
    s = SystemState(0.0, BALL_X0, BALL_Y0)
    _, ydot, mu = nonholonomic_rhs(BALL, BALL_L, BALL_C, s)
    m, k2, r = 1.0, 2.0, 1.0
    assert np.allclose(m * ydot[:2], mu, atol=1e-14)
    assert np.allclose(m * k2 * ydot[2:4], [r * mu[1], -r * mu[0]], atol=1e-14)
    assert abs(ydot[4]) <= 1e-15
    # reduced planar equations
    alpha = rolling_ball_rate(1.0, 2.0, 3.0)
    assert alpha == 2.0
    assert np.allclose(ydot[:2], [-alpha * BALL_Y0[1], alpha * BALL_Y0[0]], atol=1e-14)
    assert chetaev_residual(BALL, BALL_L, BALL_C, s, ydot, mu) <= 1e-14


def test_rolling_ball_matches_closed_form_rotation():
    h = 1e-3
    traj = run(BALL, BALL_L, BALL_X0, BALL_Y0, h, 5.0, mode="nonholonomic", constraint=BALL_C)
    exact = rotation(BALL_Y0[:2], 2.0 * traj.t)
    assert np.max(np.abs(traj.y[:, :2] - exact)) <= 1e-6
    spin = 2.0 * traj.y[:, 4]
    assert np.max(np.abs(spin - spin[0])) <= 1e-10
    assert np.max(traj.diagnostics["constraint_residual"]) <= 1e-12
    assert dalembert_residual(BALL, BALL_L, BALL_C, traj) <= max(1e-8, 50 * h * h)
    assert np.max(traj.diagnostics["identity_residual"]) <= 1e-8
    assert traj.mu.shape == (len(traj), 2)


def test_fixed_table_keeps_planar_velocity():
    A, L, C = rolling_ball(Omega=0.0)
    y0 = [0.3, 0.1, -0.1, 0.3, 0.2]
    traj = run(A, L, [0.0, 0.0], y0, 1e-2, 2.0, mode="nonholonomic", constraint=C)
    assert np.allclose(traj.y[:, :2], [0.3, 0.1], atol=1e-14)
    assert np.allclose(traj.x[-1], [0.6, 0.2], atol=1e-13)


def test_free_motion_violating_the_constraint_is_refused():
    traj = run(BALL, BALL_L, BALL_X0, [0.3, 0.1, 0.0, 0.0, 0.0], 1e-2, 1.0)
    with pytest.raises(ConstraintDrift):
        dalembert_residual(BALL, BALL_L, BALL_C, traj)


def test_initial_state_and_drift_checks():
    with pytest.raises(InputError):
        run(BALL, BALL_L, BALL_X0, [0.3, 0.1, 0.0, 0.0, 0.0], 1e-2, 1.0, mode="nonholonomic",
            constraint=BALL_C)
    with pytest.raises(InputError):
        run(BALL, BALL_L, BALL_X0, BALL_Y0, 1e-2, 1.0, mode="nonholonomic", mu0=[0.0, 0.0],
            constraint=BALL_C)
    # speed constraint on the plane: quadratic, so RK4 drifts off it
    A, L = canonical_tm("0.5 * x1^2", 2)
    C = GeometricConstraint(("y1^2 + y2^2 - 1",), 2, 2)
    with pytest.raises(ConstraintDrift):
        run(A, L, [1.0, 0.0], [0.0, 1.0], 0.1, 20.0, mode="nonholonomic", constraint=C, drift_tol=1e-12)
    traj = run(A, L, [1.0, 0.0], [0.0, 1.0], 0.1, 20.0, mode="nonholonomic", constraint=C,
               drift_tol=1e-12, project_every=1)
    assert np.max(traj.diagnostics["constraint_residual"]) <= 1e-12


def test_singular_saddle():
    A, L = canonical_tm("0", 2)
    C = GeometricConstraint(("y1", "2 * y1"), 2, 2)
    with pytest.raises(SingularSaddle):
        nonholonomic_rhs(A, L, C, SystemState(0.0, [0.0, 0.0], [0.0, 1.0]))


# ------------------------------------------ projected algebroid equivalence

R3, R3_L = canonical_tm("0.5 * (x1^2 + x2^2) + 0.3 * x3", 3)
KNIFE = GeometricConstraint(("y3 - x1 * y2",), 3, 3)
KNIFE_AFF = AffineConstraint(("0", "0", "0"), (("1", "0", "0"), ("0", "1", "x1")), 3, 3)
KNIFE_X0, KNIFE_Y0 = [0.4, -0.1, 0.2], [0.3, 0.5, 0.2]


def test_projected_algebroid_flow_matches_nonholonomic_solver():
    P = projected_algebroid(R3, np.eye(3, dtype=int).tolist(), [[1, 0, 0], [0, 1, "x1"]])
    # the orthonormal frame is u1 = e1, u2 = (e2 + x1 e3) / sqrt(1 + x1^2)
    PL = Lagrangian("0.5 * (y1^2 + y2^2) - 0.5 * (x1^2 + x2^2) - 0.3 * x3", 3, 2)
    s = np.sqrt(1 + KNIFE_X0[0] ** 2)
    h = 1e-3
    proj = run(P, PL, KNIFE_X0, [0.3, 0.5 * s], h, 3.0)
    full = run(R3, R3_L, KNIFE_X0, KNIFE_Y0, h, 3.0, mode="nonholonomic", constraint=KNIFE)
    x1 = proj.x[:, 0]
    back = np.c_[proj.y[:, 0], proj.y[:, 1] / np.sqrt(1 + x1 ** 2), x1 * proj.y[:, 1] / np.sqrt(1 + x1 ** 2)]
    assert np.max(np.abs(proj.x - full.x)) <= 1e-8
    assert np.max(np.abs(back - full.y)) <= 1e-8
    # the motion really feels the constraint
    assert np.ptp(full.y[:, 2]) > 0.1


def test_affine_reduction_matches_nonholonomic_solver_on_a_linear_constraint():
    h = 1e-3
    red = run(R3, R3_L, KNIFE_X0, [0.3, 0.5], h, 3.0, mode="affine_reduced", constraint=KNIFE_AFF)
    full = run(R3, R3_L, KNIFE_X0, KNIFE_Y0, h, 3.0, mode="nonholonomic", constraint=KNIFE)
    emb = np.array([KNIFE_AFF.embed(red.x[k], red.y[k]) for k in range(len(red))])
    assert np.max(np.abs(red.x - full.x)) <= 1e-6 and np.max(np.abs(emb - full.y)) <= 1e-6
    assert np.max(red.diagnostics["delta_L_residual"]) <= max(1e-8, 50 * h * h)


CHANNEL = AffineConstraint(("0", "1.0"), (("1", "x1"),), 2, 2)
CHANNEL_A, CHANNEL_L = canonical_tm("0.5 * (x1^2 + x2^2)", 2)


def test_affine_reduction_matches_nonholonomic_solver_on_holonomic_affine_constraint():
    h = 1e-3
    x0, Y0 = [0.3, -0.1], 0.4
    red = run(CHANNEL_A, CHANNEL_L, x0, [Y0], h, 2.0, mode="affine_reduced", constraint=CHANNEL)
    full = run(CHANNEL_A, CHANNEL_L, x0, [Y0, x0[0] * Y0 + 1.0], h, 2.0, mode="nonholonomic",
               constraint=CHANNEL.to_geometric())
    emb = np.array([CHANNEL.embed(red.x[k], red.y[k]) for k in range(len(red))])
    assert np.max(np.abs(red.x - full.x)) <= 1e-6 and np.max(np.abs(emb - full.y)) <= 1e-6
    assert is_holonomic(CHANNEL_A, CHANNEL, np.random.default_rng(0).uniform(-1, 1, (10, 2))).is_holonomic


def test_affine_reduced_rhs_checks():
    xdot, Ydot = affine_reduced_rhs(CHANNEL_A, CHANNEL_L, CHANNEL, SystemState(0.0, [0.0, 0.0], [1.0]))
    assert np.allclose(xdot, [1.0, 1.0])
    with pytest.raises(InputError):
        run(CHANNEL_A, CHANNEL_L, [0.0, 0.0], [1.0, 1.0], 0.1, 1.0, mode="affine_reduced", constraint=CHANNEL)
    with pytest.raises(InputError):
        run(CHANNEL_A, CHANNEL_L, [0.0, 0.0], [1.0, 1.0], 0.1, 1.0, mode="affine_reduced",
            constraint=CHANNEL.to_geometric())
    flat = Lagrangian("0.5 * y2^2", 2, 2)
    with pytest.raises(SingularReducedHessian):
        affine_reduced_rhs(CHANNEL_A, flat, AffineConstraint(("0", "0"), (("1", "0"),), 2, 2),
                           SystemState(0.0, [0.0, 0.0], [1.0]))


def test_affine_level_functions_cut_out_the_subbundle():
    G = CHANNEL.to_geometric()
    rng = np.random.default_rng(3)
    for _ in range(10):
        x, Y = rng.normal(size=2), rng.normal(size=1)
        y = CHANNEL.embed(x, Y)
        assert np.max(np.abs(G.values(x, y))) <= 1e-14 and np.allclose(CHANNEL.coordinates(x, y), Y)
        assert abs(G.values(x, y + [0.0, 1.0])[0]) >= 0.5
    assert CHANNEL.K == 1 and CHANNEL.r == 1 and not CHANNEL.is_linear


# -------------------------------------------------------------- vakonomic

def test_vakonomic_with_zero_multiplier_is_restricted_free_flow():
    A, L = canonical_tm("0.5 * x1^2", 2)
    C = GeometricConstraint(("y2",), 2, 2)
    vak = run(A, L, [1.0, 0.5], [0.2, 0.0], 1e-3, 3.0, mode="vakonomic", constraint=C, mu0=[0.0])
    free = run(A, L, [1.0, 0.5], [0.2, 0.0], 1e-3, 3.0)
    assert np.max(np.abs(vak.x - free.x)) <= 1e-12 and np.max(np.abs(vak.y - free.y)) <= 1e-12
    assert not vak.mu.any()
    # with mu = 0 the lift is just dL, so this is admissibility of the free flow
    assert lift_admissibility_residual(A, L, C, vak) <= 1e-6


def test_minimum_energy_control():
    A, L, C = pontryagin_control(("u1",), "0.5 * u1^2", (1, 1, 1))
    x0, xi0 = 0.2, 0.7
    traj = run(A, L, [x0, xi0], [xi0, 0.0], 1e-3, 2.0, mode="vakonomic", constraint=C, mu0=[-xi0])
    assert np.max(np.abs(traj.x[:, 0] - (x0 + xi0 * traj.t))) <= 1e-8
    assert np.max(np.abs(traj.x[:, 1] - xi0)) <= 1e-8
    assert np.max(traj.diagnostics["algebraic_residual"]) <= 1e-8
    # stationarity in the control: u = -mu
    assert np.max(np.abs(traj.x[:, 1] + traj.mu[:, 0])) <= 1e-8
    assert lift_admissibility_residual(A, L, C, traj) <= 1e-8


def test_pontryagin_chart_checks():
    with pytest.raises(InputError):
        pontryagin_control(("u1 * y1",), "0.5 * u1^2", (1, 1, 1))
    with pytest.raises(InputError):
        pontryagin_control(("u1",), "0.5 * u1^2", (2, 1, 1))


def _ball_vakonomic(h, L=BALL_L, mu0=(0.2, -0.1), t1=2.0):
    return run(BALL, L, BALL_X0, BALL_Y0, h, t1, mode="vakonomic", constraint=BALL_C, mu0=list(mu0))


def test_vakonomic_identity_and_lift_on_the_rolling_ball():
    coarse, fine = _ball_vakonomic(2e-2), _ball_vakonomic(1e-2)
    assert np.max(fine.diagnostics["identity_residual"]) <= 1e-10 * (1 + np.max(np.abs(fine.y)))
    r1 = lift_admissibility_residual(BALL, BALL_L, BALL_C, coarse)
    r2 = lift_admissibility_residual(BALL, BALL_L, BALL_C, fine)
    assert 3.0 <= r1 / r2 <= 5.0
    assert r2 <= 50 * 1e-4


def test_vakonomic_rhs_solves_the_expanded_equations():
    s = SystemState(0.3, BALL_X0, BALL_Y0, [0.4, -0.2])
    _, ydot, mudot = vakonomic_rhs(BALL, BALL_L, BALL_C, s)
    assert vakonomic_identity_residual(BALL, BALL_L, BALL_C, s, ydot, mudot) <= 1e-13
    assert vakonomic_identity_residual(BALL, BALL_L, BALL_C, s, ydot, mudot + 0.01) >= 1e-3


def test_broken_lift_is_detected():
    traj = _ball_vakonomic(1e-2)
    traj.mu[len(traj) // 2:] = 0.0
    assert lift_admissibility_residual(BALL, BALL_L, BALL_C, traj) >= 1e-2


def test_vakonomic_and_nonholonomic_motions_differ():
    vak = _ball_vakonomic(1e-3)
    assert dalembert_residual(BALL, BALL_L, BALL_C, vak) >= 1e-3


def test_vakonomic_motion_depends_only_on_restricted_lagrangian():
    lam = 0.7
    shifted = Lagrangian(f"{BALL_L.expr} + {lam} * (y1 - y4 + 3 * x2)", 2, 5, BALL_L.params)
    a = _ball_vakonomic(1e-3)
    b = _ball_vakonomic(1e-3, L=shifted, mu0=(0.2 + lam, -0.1))
    assert np.max(np.abs(a.x - b.x)) <= 1e-8 and np.max(np.abs(a.y - b.y)) <= 1e-8
    assert np.allclose(b.mu[:, 0] - a.mu[:, 0], lam, atol=1e-8)
    # without the multiplier shift the motion changes
    c = _ball_vakonomic(1e-3, L=shifted)
    assert np.max(np.abs(a.y - c.y)) >= 1e-2


def test_vakonomic_needs_multipliers():
    with pytest.raises(InputError):
        run(BALL, BALL_L, BALL_X0, BALL_Y0, 1e-2, 1.0, mode="vakonomic", constraint=BALL_C)


# ------------------------------------------------------------ holonomicity

PTS = np.random.default_rng(1).uniform(-1, 1, (8, 1))


def test_holonomicity_examples():
    A = canonical_tm("0", 2)[0]
    rep = is_holonomic(A, AffineConstraint(("0", "0"), (("1", "0"),), 2, 2), np.zeros((3, 2)))
    assert rep.is_holonomic and rep.max_offspan_residual == 0.0 and rep.samples == 3
    so3 = lie_algebra_so3()[0]
    rep = is_holonomic(so3, AffineConstraint(("0", "0", "1"), (("1", "0", "0"),), 1, 3), PTS)
    assert not rep.is_holonomic and rep.max_offspan_residual == pytest.approx(1.0)
    rep = is_holonomic(so3, AffineConstraint(("0", "0", "0"), (("1", "0", "0"), ("0", "1", "0")), 1, 3), PTS)
    assert not rep.is_holonomic and rep.max_offspan_residual == pytest.approx(1.0)
    assert is_holonomic(so3, AffineConstraint(("0", "0", "0"), (("1", "0", "0"),), 1, 3), PTS).is_holonomic
    rng = np.random.default_rng(2)
    assert not is_holonomic(R3, KNIFE_AFF, rng.uniform(-1, 1, (5, 3))).is_holonomic


def test_holonomicity_needs_a_quasi_lie_chart():
    A = AlgebroidChart(1, 2, [[1, 0]], [["1 + x1", 0]], [[[0, 0], [0, 0]], [[0, 0], [0, 0]]])
    with pytest.raises(NotQuasiLie):
        is_holonomic(A, AffineConstraint(("0", "0"), (("1", "0"),), 1, 2), PTS + 2.0)


def _variation_pairing(Aff, A, t, x, y, Z):
    """``<dphi, delta gamma>`` for the admissible variation generated by ``f = Z^a E_a``."""
    G = Aff.to_geometric()
    f = np.array([Aff.frame(x[k])[1].T @ Z[k] for k in range(len(t))])
    fdot = np.gradient(f, t, axis=0, edge_order=2)
    out = []
    for k in range(2, len(t) - 2):
        rho, sigma, c = A.structure_at(x[k])
        cj = G.jet(x[k], y[k])
        dy = fdot[k] + np.einsum("kij,i,j->k", c, y[k], f[k])
        out.append(cj.phi_x @ (sigma @ f[k]) + cj.phi_y @ dy)
    return np.max(np.abs(out))


def test_holonomic_inclusion():
    h = 1e-3
    t = np.arange(2001) * h
    Z = np.c_[np.cos(3 * t) + t][:, :1]
    # admissible curve on the channel: x1 = sin t, Y = cos t
    x = np.c_[np.sin(t), 0.5 * np.sin(t) ** 2 + t]
    y = np.c_[np.cos(t), np.sin(t) * np.cos(t) + 1.0]
    assert _variation_pairing(CHANNEL, CHANNEL_A, t, x, y, Z) <= 50 * h * h
    # the knife-edge constraint is not holonomic and the same test fails
    x3 = np.c_[np.sin(t), t, 1 - np.cos(t)]
    y3 = np.c_[np.cos(t), np.ones_like(t), np.sin(t)]
    Z2 = np.c_[np.sin(2 * t), np.cos(t)]
    assert _variation_pairing(KNIFE_AFF, R3, t, x3, y3, Z2) >= 1e-2
