"""Receding-horizon control of the IPVA: nonlinear MPC, SL-MPC and the closed loop.

Both controllers minimise the discretised economic cost

    sum_k Ts * (alpha1 * a_k**2 - alpha2 * P_k)

with a_k the sprung-mass acceleration and P_k the harvested power at
step k. NMPC optimises u = ce directly on RK4 rollouts of the nonlinear
plant. SL-MPC optimises the generator torque Fd = u (x4 - x2) on the
zero-order-hold discretised SL model, where the power term is Fd * v.
"""

from dataclasses import dataclass, field
import csv
import os
import time

import numpy as np

from . import _kernels
from .errors import ConfigError, NonFiniteRollout, NonFiniteState, SolverStalled, SubproblemFailure
from .observer import HgoConfig, RoadEstimator
from .params import SuspensionParams
from .road import PERFECT, PreviewMode, Previewer, RoadModel, RoadSignal, generate
from .sim import Metrics, Trajectory, metrics, road_equilibrium
from .slin import SlStateSpace, discretize

EPS_REL = 1e-6


@dataclass(frozen=True)
class MpcConfig:
    N: int = 15
    Ts: float = 0.01
    alpha1: float = 1.0
    alpha2: float = 0.0
    ce_max: float = 0.225
    max_iter: int = 60
    tol: float = 1e-6
    fd_step: float = 1e-7
    warm_start: bool = True
    cold_guard: bool = True   # also solve from the cold start and keep the cheaper result
    sl_iters: int = 5
    sl_tol: float = 1e-9

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError("must be an integer >= 1", "N")
        if not self.Ts > 0:
            raise ConfigError("must be > 0", "Ts")
        for name in ("alpha1", "alpha2"):
            if not getattr(self, name) >= 0:
                raise ConfigError("must be >= 0", name)
        if not self.ce_max > 0:
            raise ConfigError("must be > 0", "ce_max")


@dataclass
class MpcSolution:
    U: np.ndarray            # damping sequence (recovered from Fd for SL-MPC)
    cost: float
    iterations: int
    status: str
    Fd: np.ndarray = None


def recover_u(Fd, x2, x4, ce_max, eps=EPS_REL):
    """Damping that realises torque Fd at relative speed x4 - x2, clipped to [0, ce_max]."""
    v = x4 - x2
    if abs(v) < eps:
        return 0.0
    return float(min(max(Fd / v, 0.0), ce_max))


# -- NMPC -----------------------------------------------------------------------

_STATUS = {0: "converged", 1: "max_iter", 2: "stalled", 3: "non_finite"}


def nmpc_cost(p: SuspensionParams, x0, U, preview, cfg: MpcConfig):
    return float(_kernels.nmpc_cost(p.as_array(), np.asarray(x0, float), np.asarray(U, float),
                                    np.asarray(preview, float), cfg.Ts, cfg.alpha1, cfg.alpha2))


def nmpc_solve(p: SuspensionParams, x0, preview, cfg: MpcConfig, U0=None, strict=False) -> MpcSolution:
    """Single-shooting projected-gradient solve of the nonlinear problem.

    The cold start is the mid-range sequence. With ``cfg.cold_guard`` a
    warm start ``U0`` is solved in addition to it and the cheaper result
    is returned, so warm-starting can never make the answer worse than a
    cold solve.
    Returns the best iterate. With ``strict`` a stalled line search
    raises SolverStalled; a non-finite rollout from every start raises.
    """
    preview = np.ascontiguousarray(preview, dtype=float)
    if len(preview) != cfg.N:
        raise ValueError(f"preview has {len(preview)} samples, horizon is {cfg.N}")
    x0 = np.asarray(x0, dtype=float)
    pv = p.as_array()
    mid = np.full(cfg.N, 0.5 * cfg.ce_max)
    if U0 is None:
        starts, spare = [mid], [np.zeros(cfg.N)]
    else:
        U0 = np.asarray(U0, float)
        starts = [U0, mid] if cfg.cold_guard else [U0]
        spare = [np.zeros(cfg.N)] if cfg.cold_guard else [mid, np.zeros(cfg.N)]
    best = None
    for start in starts:
        res = _kernels.nmpc_pg(pv, x0, preview, cfg.Ts, cfg.alpha1, cfg.alpha2, start, cfg.ce_max,
                               cfg.fd_step, cfg.tol, cfg.max_iter)
        if res[3] != 3 and (best is None or res[1] < best[1]):
            best = res
    # a start whose rollout diverges (possible under noisy previews) is
    # replaced by the next spare sequence, ending with open circuit
    for start in spare:
        if best is not None:
            break
        res = _kernels.nmpc_pg(pv, x0, preview, cfg.Ts, cfg.alpha1, cfg.alpha2, start, cfg.ce_max,
                               cfg.fd_step, cfg.tol, cfg.max_iter)
        if res[3] != 3:
            best = res
    if best is None:
        raise NonFiniteRollout("every start sequence produced a non-finite rollout")
    U, J, it, st = best
    sol = MpcSolution(U, float(J), int(it), _STATUS[st])
    if strict and st == 2:
        raise SolverStalled(f"line search stalled after {sol.iterations} iterations")
    return sol


class NmpcController:
    name = "nmpc"

    def __init__(self, p: SuspensionParams, cfg: MpcConfig):
        self.p = p
        self.cfg = cfg
        self.prev = None
        self.iterations = 0
        self.fallbacks = 0

    def reset(self):
        self.prev = None

    def __call__(self, x, preview):
        U0 = None
        if self.cfg.warm_start and self.prev is not None:
            U0 = np.append(self.prev[1:], self.prev[-1])
        try:
            sol = nmpc_solve(self.p, x, preview, self.cfg, U0)
        except NonFiniteRollout:
            # the prediction diverges for every candidate (large preview
            # noise); hold the passive maximum-damping setting for this step
            self.fallbacks += 1
            self.prev = None
            U = np.full(self.cfg.N, self.cfg.ce_max)
            return self.cfg.ce_max, MpcSolution(U, float("nan"), 0, "fallback")
        self.prev = sol.U
        self.iterations += sol.iterations
        return float(sol.U[0]), sol


# -- SL-MPC ---------------------------------------------------------------------

@dataclass
class CondensedModel:
    """Horizon predictions of acceleration and relative velocity.

    a = Sa x0 + Ha F + Wa w and v = Sv x0 + Hv F + Wv w over k = 0..N-1.
    """

    Ad: np.ndarray
    Bd: np.ndarray
    Dd: np.ndarray
    Sa: np.ndarray
    Ha: np.ndarray
    Wa: np.ndarray
    Sv: np.ndarray
    Hv: np.ndarray
    Wv: np.ndarray


def condense(p: SuspensionParams, model: SlStateSpace, N, Ts) -> CondensedModel:
    Ad, Bd, Dd = discretize(model.A, model.Bl, model.D, Ts)
    Bd, Dd = Bd[:, 0], Dd[:, 0]
    A, Bl, D = model.A, model.Bl, model.D
    ca = A[5] + p.R * A[1]
    cb = Bl[5] + p.R * Bl[1]
    cw = D[5] + p.R * D[1]
    cv = np.zeros(6)
    cv[3], cv[1] = 1.0, -1.0
    powers = [np.eye(6)]
    for _ in range(N):
        powers.append(Ad @ powers[-1])
    Sa = np.array([ca @ powers[k] for k in range(N)])
    Sv = np.array([cv @ powers[k] for k in range(N)])
    Ha = np.zeros((N, N))
    Wa = np.zeros((N, N))
    Hv = np.zeros((N, N))
    Wv = np.zeros((N, N))
    for k in range(N):
        Ha[k, k], Wa[k, k] = cb, cw
        for j in range(k):
            P = powers[k - 1 - j]
            Ha[k, j] = ca @ P @ Bd
            Wa[k, j] = ca @ P @ Dd
            Hv[k, j] = cv @ P @ Bd
            Wv[k, j] = cv @ P @ Dd
    return CondensedModel(Ad, Bd, Dd, Sa, Ha, Wa, Sv, Hv, Wv)


class SlMpcSolver:
    """Force-form SL-MPC with sequential convexification.

    The passivity constraints 0 <= Fd v and |Fd| <= ce_max |v| become the
    bounds [min(0, ce_max v), max(0, ce_max v)] once v is frozen at the
    previous iterate's prediction; v at step 0 is measured, so the first
    move is exactly passive. The quadratic cost is made convex by a
    proximal term whose weight is the most negative eigenvalue of the
    Hessian, which majorises the cost at the previous iterate.
    """

    def __init__(self, p: SuspensionParams, model: SlStateSpace, cfg: MpcConfig):
        self.p = p
        self.cfg = cfg
        self.cm = condense(p, model, cfg.N, cfg.Ts)
        c = self.cm
        h, a1, a2 = cfg.Ts, cfg.alpha1, cfg.alpha2
        self.Q = 2.0 * h * (a1 * c.Ha.T @ c.Ha - 0.5 * a2 * (c.Hv + c.Hv.T))
        lam = np.linalg.eigvalsh(self.Q)
        scale = max(np.max(np.abs(lam)), 1e-12)
        self.rho = max(0.0, -lam[0]) + 1e-6 * scale

    def cost(self, x0, F, w):
        c = self.cm
        a = c.Sa @ x0 + c.Ha @ F + c.Wa @ w
        v = c.Sv @ x0 + c.Hv @ F + c.Wv @ w
        return float(self.cfg.Ts * np.sum(self.cfg.alpha1 * a**2 - self.cfg.alpha2 * F * v))

    def _iterate(self, x0, w, F0):
        c, cfg = self.cm, self.cfg
        F, n = _kernels.slmpc_iterate(self.Q, self.rho, c.Ha, c.Hv, c.Sa, c.Sv, c.Wa, c.Wv, x0, w,
                                      F0, cfg.ce_max, cfg.Ts, cfg.alpha1, cfg.alpha2, cfg.sl_iters,
                                      cfg.sl_tol)
        v = c.Sv @ x0 + c.Hv @ F + c.Wv @ w
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(v))):
            raise SubproblemFailure("non-finite QP solution or prediction")
        return F, v, int(n), self.cost(x0, F, w)

    def solve(self, x0, preview, F0=None) -> MpcSolution:
        """Solve from zero force, or from ``F0`` and zero force when guarding warm starts."""
        cfg = self.cfg
        x0 = np.asarray(x0, dtype=float)
        w = np.ascontiguousarray(preview, dtype=float)
        cold = np.zeros(cfg.N)
        if F0 is None:
            starts = [cold]
        else:
            starts = [np.asarray(F0, float), cold] if cfg.cold_guard else [np.asarray(F0, float)]
        best = None
        for start in starts:
            res = self._iterate(x0, w, start)
            if best is None or res[3] < best[3]:
                best = res
        F, v, n, J = best
        safe = np.abs(v) >= EPS_REL
        U = np.where(safe, np.clip(F / np.where(safe, v, 1.0), 0.0, cfg.ce_max), 0.0)
        U[0] = recover_u(F[0], x0[1], x0[3], cfg.ce_max)
        return MpcSolution(U, J, n, "ok", F)


def slmpc_solve(p: SuspensionParams, x0, preview, model: SlStateSpace, cfg: MpcConfig, F0=None) -> MpcSolution:
    """One-shot convenience wrapper; controllers cache the condensed model instead."""
    return SlMpcSolver(p, model, cfg).solve(x0, preview, F0)


class SlMpcController:
    name = "slmpc"

    def __init__(self, p: SuspensionParams, model: SlStateSpace, cfg: MpcConfig):
        self.solver = SlMpcSolver(p, model, cfg)
        self.cfg = cfg
        self.prev = None
        self.iterations = 0
        self.fallbacks = 0

    def reset(self):
        self.prev = None

    def __call__(self, x, preview):
        F0 = None
        if self.cfg.warm_start and self.prev is not None:
            F0 = np.append(self.prev[1:], self.prev[-1])
        try:
            sol = self.solver.solve(x, preview, F0)
        except SubproblemFailure:
            # open generator circuit: the safe passive extreme
            self.fallbacks += 1
            self.prev = None
            return 0.0, MpcSolution(np.zeros(self.cfg.N), float("nan"), 0, "fallback", np.zeros(self.cfg.N))
        self.prev = sol.Fd
        self.iterations += sol.iterations
        return float(sol.U[0]), sol


class PassiveController:
    name = "passive"

    def __init__(self, ce):
        self.ce = float(ce)
        self.iterations = 0

    def reset(self):
        pass

    def __call__(self, x, preview):
        return self.ce, None


# -- closed loop ------------------------------------------------------------------

@dataclass
class ClosedLoopResult:
    trajectory: Trajectory
    metrics: Metrics
    wall_ms_per_1000: float
    solve_ms_per_1000: float
    iterations: int
    w_hat: np.ndarray = None
    extra: dict = field(default_factory=dict)


def closed_loop(p: SuspensionParams, controller, signal: RoadSignal, mode: PreviewMode = PERFECT,
                N=15, duration=None, observer: HgoConfig = None, lrde_source="hgo", skip=0,
                x0=None, feedback="auto") -> ClosedLoopResult:
    """Run ``controller`` against the nonlinear plant on ``signal``.

    The preview for step k covers samples k..k+N-1, so the signal must
    extend N - 1 samples past the simulated window. LRDE previews hold
    the observer's latest road estimate (or, with ``lrde_source="true"``,
    the true current sample). ``feedback`` selects what the controller
    acts on: the plant state ("true") or the observer's state estimate
    ("observer"). "auto" uses the observer exactly when the preview is
    LRDE, so that setting runs entirely on estimated signals.
    """
    if feedback == "auto":
        feedback = "observer" if mode.kind == "lrde" and lrde_source == "hgo" else "true"
    if feedback not in ("true", "observer"):
        raise ConfigError(f"unknown feedback source {feedback!r}", "feedback")
    Ts = signal.Ts
    n_avail = len(signal) - (N - 1)
    n = n_avail if duration is None else int(round(duration / Ts))
    if n > n_avail or n <= 0:
        raise ValueError(f"signal too short: need {n + N - 1} samples, have {len(signal)}")
    w = signal.samples
    pv = p.as_array()
    previewer = Previewer(signal, mode)
    x = road_equilibrium(w[0]) if x0 is None else np.array(x0, dtype=float)
    need_obs = (mode.kind == "lrde" and lrde_source == "hgo") or observer is not None \
        or feedback == "observer"
    est = RoadEstimator(p, observer or HgoConfig(Ts=Ts), x, w[0]) if need_obs else None

    states = np.empty((n, 6))
    controls = np.empty(n)
    acc = np.empty(n)
    pw = np.empty(n)
    w_hat = np.empty(n) if est is not None else None
    controller.reset()
    solve_t = 0.0
    t_start = time.perf_counter()
    for k in range(n):
        if mode.kind == "lrde":
            w_prev = est.w_hat if lrde_source == "hgo" else w[k]
            window = np.full(N, w_prev)
        else:
            window = previewer(k, N)
        t0 = time.perf_counter()
        u, _ = controller(x if feedback == "true" else est.state.xhat, window)
        solve_t += time.perf_counter() - t0
        u = min(max(u, 0.0), p.ce_max)
        states[k] = x
        controls[k] = u
        xn, acc[k] = _kernels.ipva_step(pv, x, u, w[k], Ts)
        rel = x[1] - x[3]
        pw[k] = u * rel * rel
        if not np.all(np.isfinite(xn)):
            raise NonFiniteState(f"plant diverged at step {k}", step=k)
        if est is not None:
            w_hat[k] = est.w_hat
            est.update(xn[[0, 2, 4]], u)
        x = xn
    wall = time.perf_counter() - t_start
    traj = Trajectory(np.arange(n) * Ts, states, controls, np.array(w[:n]), acc, pw, x)
    return ClosedLoopResult(traj, metrics(traj, skip), 1e6 * wall / n, 1e6 * solve_t / n,
                            controller.iterations, w_hat)


def run_seed(p: SuspensionParams, controller, seed, duration, mode: PreviewMode = PERFECT, N=15,
             road: RoadModel = None, **kw) -> ClosedLoopResult:
    """Closed loop on a fresh realization long enough for the preview."""
    road = (road or RoadModel()).with_seed(seed)
    sig = generate(road, duration + N * road.Ts)
    return closed_loop(p, controller, sig, mode, N, duration, **kw)


def alpha2_grid(n=10, lo=0.01, hi=0.1):
    return np.logspace(np.log10(lo), np.log10(hi), n)


def append_ledger(path, rows):
    """Append per-run rows (dicts) to a CSV ledger, writing a header for new files."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    keys = list(rows[0].keys()) if rows else []
    with open(path, "a", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        if new:
            wr.writeheader()
        wr.writerows(rows)
