"""Equations of motion of the IPVA quarter-car and of the linear benchmark.

State ordering (6 states): theta, theta_dot, phi, phi_dot, x_us, x_us_dot,
where theta is the screw angle and phi the pendulum angle relative to the
carrier. The linear benchmark drops the pendulum and uses
theta, theta_dot, x_us, x_us_dot.
"""

import math

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq

from .errors import LinearSolveFailure
from .params import SuspensionParams

SOLVE_RTOL = 1e-9


def inertia_terms(p: SuspensionParams, phi):
    """(G22, G24, G44) for pendulum angle ``phi``."""
    mr2 = p.m * p.r**2
    a = p.m * p.Rp * p.r
    c = np.cos(phi)
    g22 = p.Ms * p.R**2 + p.J + p.m * p.Rp**2 + mr2 + 2 * a * c + p.Jp + p.Jr
    g24 = mr2 + a * c + p.Jp - p.Jr
    g44 = mr2 + p.Jp + p.Jr
    return g22, g24, g44


def mass_matrix(p: SuspensionParams, x) -> np.ndarray:
    g22, g24, g44 = inertia_terms(p, x[2])
    G = np.eye(6)
    G[1, 1] = g22
    G[1, 3] = G[3, 1] = g24
    G[3, 3] = g44
    G[1, 5] = G[5, 1] = p.Ms * p.R
    G[5, 5] = p.Ms + p.Mus
    return G


def forcing(p: SuspensionParams, x, u, w) -> np.ndarray:
    """Right-hand side F(x, u, w) of G(x) xdot = F."""
    a = p.m * p.Rp * p.r
    s = math.sin(x[2])
    rel = x[3] - x[1]
    return np.array([
        x[1],
        -p.cm * p.R**2 * x[1] + u * rel - p.ks * p.R**2 * x[0]
        + 2 * a * x[3] * x[1] * s + a * s * x[3] ** 2,
        x[3],
        -u * rel - a * s * x[1] ** 2 - p.kp * x[2],
        x[5],
        -p.kt * (x[4] - w),
    ])


def dynamics(p: SuspensionParams, x, u, w) -> np.ndarray:
    """State derivative G(x)^-1 F(x, u, w)."""
    x = np.asarray(x, dtype=float)
    G = mass_matrix(p, x)
    F = forcing(p, x, u, w)
    xdot = np.linalg.solve(G, F)
    res = np.linalg.norm(G @ xdot - F)
    if not np.isfinite(res) or res > SOLVE_RTOL * max(1.0, np.linalg.norm(F)):
        raise LinearSolveFailure(f"mass-matrix solve residual {res:.3e}")
    return xdot


def disturbance_gain(p: SuspensionParams, x) -> np.ndarray:
    """d(x) with dynamics(x,u,w) = dynamics(x,u,0) + w d(x)."""
    e = np.zeros(6)
    e[5] = p.kt
    return np.linalg.solve(mass_matrix(p, x), e)


def sprung_acceleration(p: SuspensionParams, xdot):
    """x_s'' = x_us'' + R theta''."""
    return xdot[5] + p.R * xdot[1]


def harvested_power(u, x):
    return u * (x[1] - x[3]) ** 2


def stage_cost(p: SuspensionParams, x, xdot, u, alpha1=1.0, alpha2=1.0):
    """Economic running cost: weighted squared acceleration minus harvested power."""
    acc = sprung_acceleration(p, xdot)
    return alpha1 * acc**2 - alpha2 * harvested_power(u, x)


def total_energy(p: SuspensionParams, x, w=0.0):
    """Kinetic plus potential energy of the conservative part."""
    qd = np.array([x[1], x[3], x[5]])
    g22, g24, g44 = inertia_terms(p, x[2])
    M = np.array([
        [g22, g24, p.Ms * p.R],
        [g24, g44, 0.0],
        [p.Ms * p.R, 0.0, p.Ms + p.Mus],
    ])
    T = 0.5 * qd @ M @ qd
    V = 0.5 * p.ks * p.R**2 * x[0] ** 2 + 0.5 * p.kt * (x[4] - w) ** 2 + 0.5 * p.kp * x[2] ** 2
    return T + V


# -- linear benchmark ---------------------------------------------------------

def benchmark_matrices(p: SuspensionParams, ce):
    """Mass, damping and stiffness of the benchmark in (theta, x_us)."""
    M = np.array([[p.Ms * p.R**2 + p.Jr, p.R * p.Ms], [p.R * p.Ms, p.Ms + p.Mus]])
    C = np.array([[p.cm * p.R**2 + ce, 0.0], [0.0, 0.0]])
    K = np.array([[p.ks * p.R**2, 0.0], [0.0, p.kt]])
    return M, C, K


def linear_benchmark_dynamics(p: SuspensionParams, x, u, w) -> np.ndarray:
    M, C, K = benchmark_matrices(p, u)
    q = np.array([x[0], x[2]])
    qd = np.array([x[1], x[3]])
    qdd = np.linalg.solve(M, -C @ qd - K @ q + np.array([0.0, p.kt * w]))
    return np.array([x[1], qdd[0], x[3], qdd[1]])


def benchmark_state_matrices(p: SuspensionParams, ce):
    """(A, D) of the benchmark in first-order form, state (theta, theta_d, x_us, x_us_d)."""
    M, C, K = benchmark_matrices(p, ce)
    Mi = np.linalg.inv(M)
    A = np.zeros((4, 4))
    A[0, 1] = A[2, 3] = 1.0
    MK = -Mi @ K
    MC = -Mi @ C
    A[[1, 3], 0] = MK[:, 0]
    A[[1, 3], 2] = MK[:, 1]
    A[[1, 3], 1] = MC[:, 0]
    A[[1, 3], 3] = MC[:, 1]
    D = np.zeros(4)
    D[[1, 3]] = Mi @ np.array([0.0, p.kt])
    return A, D


def natural_frequencies(p: SuspensionParams):
    """Undamped natural frequencies (rad/s) of the benchmark, ascending."""
    M, _, K = benchmark_matrices(p, 0.0)
    return np.sqrt(eigh(K, M, eigvals_only=True))


def calibrate_R_by_frequency(p: SuspensionParams, target_ratio=0.85, bracket=(1e-4, 10.0)):
    """Screw radius giving omega_n1 / omega0 = ``target_ratio`` on the benchmark.

    The first mode ratio approaches ~0.851 as R grows, so targets above
    that have no solution.
    """
    def gap(R):
        return natural_frequencies(p.with_design(R=R))[0] / p.omega0 - target_ratio

    return brentq(gap, *bracket, xtol=1e-14)

