"""Shared generators and oracles for the test suite."""

import numpy as np

from algebroid_mech.dynamics import IntegratorConfig, SystemState, Trajectory, integrate

VARS = ("x1", "x2", "y1")


def random_expression(rng, depth=3):
    """A random smooth expression over ``VARS`` whose values stay moderate on [-1, 1]^3."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return str(rng.choice(VARS))
        return f"{rng.uniform(-2, 2):.3f}"
    a = random_expression(rng, depth - 1)
    b = random_expression(rng, depth - 1)
    kind = rng.integers(0, 12)
    return [
        f"({a} + {b})",
        f"({a} - {b})",
        f"({a} * {b})",
        f"({a} / (2 + cos({b})))",
        f"sin({a})",
        f"cos({a})",
        f"exp(sin({a}))",
        f"log(2 + sin({a}))",
        f"sqrt(1 + ({a})^2)",
        f"tan(0.5 * sin({a}))",
        f"({a})^2",
        f"-({a}) * ({b})^3",
    ][kind]


def random_point(rng):
    return dict(zip(VARS, rng.uniform(-1, 1, size=len(VARS)).tolist()))


def run(A, L, x0, y0, h, t1, mode="free", mu0=(), force=None, constraint=None, **cfg):
    s0 = SystemState(0.0, x0, y0, mu0)
    return integrate(A, L, s0, IntegratorConfig(h, **cfg), t1, mode=mode, force=force, constraint=constraint)


def curve(t, x, y, mu=None):
    """Wrap sampled arrays as a Trajectory."""
    t = np.asarray(t, float)
    x = np.asarray(x, float).reshape(len(t), -1)
    y = np.asarray(y, float).reshape(len(t), -1)
    mu = np.zeros((len(t), 0)) if mu is None else np.asarray(mu, float).reshape(len(t), -1)
    return Trajectory(t, x, y, mu)


def bump_probes(t, m, count, rng, modes=4):
    """Variation generators vanishing at both ends of ``t``."""
    s = (t - t[0]) / (t[-1] - t[0])
    out = []
    for _ in range(count):
        coef = rng.normal(size=(modes, m))
        out.append(sum(np.sin((k + 1) * np.pi * s)[:, None] * coef[k] for k in range(modes)))
    return out


def rotation(v0, angle):
    """Planar vector ``v0`` turned by each entry of ``angle``."""
    c, s = np.cos(angle), np.sin(angle)
    return np.c_[c * v0[0] - s * v0[1], s * v0[0] + c * v0[1]]
