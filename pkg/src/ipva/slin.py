"""Stochastic linearization of the IPVA and stabilizability repair.

Generalized coordinates are q = (theta, phi, x_us). The equations are split
as ``Ml q'' + Cl q' + Kl q + Phi(q, q', q'') = Q`` where Phi carries every
angle-dependent term. Statistical linearization replaces Phi by
``Me q'' + Ce q' + Ke q`` with each matrix the expectation of the matching
Jacobian along stationary responses of the nonlinear plant.

State-space models use the plant ordering
(theta, theta_dot, phi, phi_dot, x_us, x_us_dot).
"""

from dataclasses import dataclass, field
import json
import math

import cvxpy as cp
import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from . import _kernels
from .errors import NotConverged, RepairNotConverged, SingularInertia, SubproblemFailure
from .params import SuspensionParams
from .road import RoadModel, generate
from .sim import road_equilibrium

RANK_RTOL = 1e-9
LMI_MARGIN = 1e-6

# plant-state index of each generalized coordinate and velocity
Q_IDX = np.array([0, 2, 4])
QD_IDX = np.array([1, 3, 5])


@dataclass(frozen=True)
class GeneralizedForm:
    Ml: np.ndarray
    Cl: np.ndarray
    Kl: np.ndarray
    Cu: np.ndarray          # multiplies ce inside the damping matrix
    Fd_dir: np.ndarray      # generalized direction of the damping torque
    Q_w: np.ndarray         # generalized force per unit road displacement


def generalized_form(p: SuspensionParams) -> GeneralizedForm:
    """Linear matrices with the ce-dependent damping split out.

    The rotor inertia Jr enters through the relative rotor angle, so it
    appears on the diagonal of the (theta, phi) block and with a minus
    sign off the diagonal. kp adds pendulum stiffness when non-zero.
    """
    mr2 = p.m * p.r**2
    Ml = np.array([
        [p.Ms * p.R**2 + p.J + p.m * p.Rp**2 + mr2 + p.Jp + p.Jr, mr2 + p.Jp - p.Jr, p.R * p.Ms],
        [mr2 + p.Jp - p.Jr, mr2 + p.Jp + p.Jr, 0.0],
        [p.R * p.Ms, 0.0, p.Ms + p.Mus],
    ])
    Cl = np.diag([p.cm * p.R**2, 0.0, 0.0])
    Cu = np.array([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    Kl = np.diag([p.ks * p.R**2, p.kp, p.kt])
    return GeneralizedForm(Ml, Cl, Kl, Cu, np.array([1.0, -1.0, 0.0]), np.array([0.0, 0.0, p.kt]))


def phi(p: SuspensionParams, q, qd, qdd):
    """Nonlinear vector Phi(q, q', q''); Phi3 = 0."""
    a = p.m * p.Rp * p.r
    c, s = math.cos(q[1]), math.sin(q[1])
    th_d, ph_d = qd[0], qd[1]
    th_dd, ph_dd = qdd[0], qdd[1]
    return np.array([
        2 * a * c * th_dd + a * c * ph_dd - 2 * a * ph_d * th_d * s - a * s * ph_d**2,
        a * c * th_dd + a * s * th_d**2,
        0.0,
    ])


def phi_jacobians(p: SuspensionParams, q, qd, qdd):
    """(dPhi/dq'', dPhi/dq', dPhi/dq) at one point, each 3x3.

    Accepts arrays of shape (3,) or (n, 3); batched input returns
    (n, 3, 3) blocks.
    """
    q, qd, qdd = (np.asarray(v, dtype=float) for v in (q, qd, qdd))
    batched = q.ndim == 2
    q, qd, qdd = (np.atleast_2d(v) for v in (q, qd, qdd))
    n = q.shape[0]
    a = p.m * p.Rp * p.r
    c, s = np.cos(q[:, 1]), np.sin(q[:, 1])
    th_d, ph_d = qd[:, 0], qd[:, 1]
    th_dd, ph_dd = qdd[:, 0], qdd[:, 1]
    Jm = np.zeros((n, 3, 3))
    Jc = np.zeros((n, 3, 3))
    Jk = np.zeros((n, 3, 3))
    Jm[:, 0, 0] = 2 * a * c
    Jm[:, 0, 1] = a * c
    Jm[:, 1, 0] = a * c
    Jc[:, 0, 0] = -2 * a * ph_d * s
    Jc[:, 0, 1] = -2 * a * th_d * s - 2 * a * ph_d * s
    Jc[:, 1, 0] = 2 * a * th_d * s
    Jk[:, 0, 1] = -2 * a * s * th_dd - a * s * ph_dd - 2 * a * c * ph_d * th_d - a * c * ph_d**2
    Jk[:, 1, 1] = -a * s * th_dd + a * c * th_d**2
    if batched:
        return Jm, Jc, Jk
    return Jm[0], Jc[0], Jk[0]


# -- expectations ---------------------------------------------------------------

def batch_mean(values, n_batches=20):
    """Sample mean over axis 0 with a batch-means standard error.

    Batch means absorb the serial correlation of samples taken along a
    single trajectory.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    n_batches = max(2, min(n_batches, n))
    m = n // n_batches
    trimmed = values[: m * n_batches]
    means = trimmed.reshape((n_batches, m) + values.shape[1:]).mean(axis=1)
    return values.mean(axis=0), means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def equivalent_coefficient(partial, samples, n_batches=20):
    """E{partial(sample)} with its standard error; the generic SL building block."""
    vals = np.asarray(partial(np.asarray(samples)), dtype=float)
    return batch_mean(vals, n_batches)


@dataclass
class SlMatrices:
    Me: np.ndarray
    Ce: np.ndarray
    Ke: np.ndarray
    sample_count: int
    se: dict = field(default_factory=dict)

    @classmethod
    def zero(cls):
        z = np.zeros((3, 3))
        return cls(z.copy(), z.copy(), z.copy(), 0, {"Me": z.copy(), "Ce": z.copy(), "Ke": z.copy()})


def plant_samples(p: SuspensionParams, ce, road: RoadModel, n_samples, warmup=1200.0, stride=1):
    """(q, q', q'') rows along a stationary stretch of the nonlinear response."""
    n_warm = int(round(warmup / road.Ts))
    n = n_warm + n_samples * stride
    sig = generate(road, n * road.Ts)
    w = np.ascontiguousarray(sig.samples)
    u = np.full(n, float(ce))
    pv = p.as_array()
    X, _, _, failed = _kernels.simulate_ipva(pv, road_equilibrium(w[0]), u, w, road.Ts)
    if failed >= 0:
        raise NotConverged(f"sampling run diverged at step {failed}")
    sel = np.arange(n_warm, n, stride)
    Xs = np.ascontiguousarray(X[sel])
    qdd = _kernels.batch_accels(pv, Xs, u[sel], w[sel])
    return Xs[:, Q_IDX], Xs[:, QD_IDX], qdd


def estimate_sl_matrices(p: SuspensionParams, design=None, road: RoadModel = None, n_samples=100_000,
                         warmup=1200.0, stride=1, n_batches=20, rtol=0.2) -> SlMatrices:
    """Monte-Carlo expectations of the Phi Jacobians.

    ``design`` supplies (Rp, r, ce); when None, ``p`` is used as is with
    ce = ce_max. The estimate is rejected when any standard error exceeds
    ``rtol`` times the largest magnitude in its matrix (entries whose
    true mean is near zero cannot pass a per-entry relative test).
    """
    road = road or RoadModel()
    ce = p.ce_max
    if design is not None:
        p = p.with_design(design.Rp, design.r)
        ce = design.ce
    q, qd, qdd = plant_samples(p, ce, road, n_samples, warmup, stride)
    Jm, Jc, Jk = phi_jacobians(p, q, qd, qdd)
    out = {}
    ses = {}
    for name, J in (("Me", Jm), ("Ce", Jc), ("Ke", Jk)):
        mean, se = batch_mean(J, n_batches)
        out[name], ses[name] = mean, se
        bad = se > rtol * np.max(np.abs(mean))
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise NotConverged(f"{name}[{i},{j}] standard error {se[i, j]:.3g} too large at n={len(q)}")
    return SlMatrices(out["Me"], out["Ce"], out["Ke"], len(q), ses)


# -- state space ------------------------------------------------------------------

@dataclass
class SlStateSpace:
    """Continuous LTI model in plant ordering.

    ``A`` excludes the electrical damping; the bilinear channel adds
    ``u * B_bilinear @ x``. In force form the generator torque Fd =
    u (x4 - x2) enters through ``Bl``. ``D`` is the road column.
    """

    A: np.ndarray
    B_bilinear: np.ndarray
    Bl: np.ndarray
    D: np.ndarray
    stabilizable: bool = None
    repair: dict = None

    def A_nominal(self, ce):
        return self.A + ce * self.B_bilinear

    def to_dict(self):
        return {"A": self.A.tolist(), "B_bilinear": self.B_bilinear.tolist(), "Bl": self.Bl.tolist(),
                "D": self.D.tolist(), "stabilizable": self.stabilizable}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["A"]), np.array(d["B_bilinear"]), np.array(d["Bl"]), np.array(d["D"]),
                   d.get("stabilizable"))


def _first_order(Minv, C, K, Cu, fd_dir, q_w):
    A = np.zeros((6, 6))
    Bb = np.zeros((6, 6))
    Bl = np.zeros(6)
    D = np.zeros(6)
    A[Q_IDX, QD_IDX] = 1.0
    A[np.ix_(QD_IDX, Q_IDX)] = -Minv @ K
    A[np.ix_(QD_IDX, QD_IDX)] = -Minv @ C
    Bb[np.ix_(QD_IDX, QD_IDX)] = -Minv @ Cu
    # ce*Cu q' = -Fd * fd_dir with Fd = ce (phi_d - theta_d)
    Bl[QD_IDX] = Minv @ fd_dir
    D[QD_IDX] = Minv @ q_w
    return A, Bb, Bl, D


def assemble_sl_statespace(p: SuspensionParams, sl: SlMatrices, check=True) -> SlStateSpace:
    """First-order form of (Ml+Me) q'' + (Cl+Ce) q' + (Kl+Ke) q = Q."""
    g = generalized_form(p)
    M = g.Ml + sl.Me
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > 1e12:
        raise SingularInertia(f"Ml + Me condition number {np.linalg.cond(M):.3g}")
    Minv = np.linalg.inv(M)
    A, Bb, Bl, D = _first_order(Minv, g.Cl + sl.Ce, g.Kl + sl.Ke, g.Cu, g.Fd_dir, g.Q_w)
    ss = SlStateSpace(A, Bb, Bl, D)
    if check:
        ss.stabilizable = stabilizability_check(A, Bl[:, None])[0]
    return ss


def deterministic_linearize(p: SuspensionParams, ce) -> np.ndarray:
    """Jacobian of the plant vector field at the origin with u = ce (state matrix only)."""
    g = generalized_form(p)
    a = p.m * p.Rp * p.r
    G = g.Ml + np.array([[2 * a, a, 0.0], [a, 0.0, 0.0], [0.0, 0.0, 0.0]])
    Gi = np.linalg.inv(G)
    # dF/dq and dF/dq' at the origin; velocity-product and sine terms vanish there
    dFq = -g.Kl
    dFqd = -(g.Cl + ce * g.Cu)
    A = np.zeros((6, 6))
    A[Q_IDX, QD_IDX] = 1.0
    A[np.ix_(QD_IDX, Q_IDX)] = Gi @ dFq
    A[np.ix_(QD_IDX, QD_IDX)] = Gi @ dFqd
    return A


def deterministic_statespace(p: SuspensionParams) -> SlStateSpace:
    """Deterministic linearization in the same split form as the SL model."""
    a = p.m * p.Rp * p.r
    Me0 = np.array([[2 * a, a, 0.0], [a, 0.0, 0.0], [0.0, 0.0, 0.0]])
    z = np.zeros((3, 3))
    return assemble_sl_statespace(p, SlMatrices(Me0, z, z.copy(), 0))


def discretize(A, B, D, Ts):
    """Zero-order-hold discretization of xdot = A x + B u + D w."""
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float).T).T
    D = np.atleast_2d(np.asarray(D, dtype=float).T).T
    n, nb = A.shape[0], B.shape[1]
    aug = np.zeros((n + nb + D.shape[1],) * 2)
    aug[:n, :n] = A
    aug[:n, n:n + nb] = B
    aug[:n, n + nb:] = D
    E = expm(aug * Ts)
    return E[:n, :n], E[:n, n:n + nb], E[:n, n + nb:]


# -- controllability ---------------------------------------------------------------

@dataclass
class CtrbDecomposition:
    T: np.ndarray
    A11: np.ndarray
    A12: np.ndarray
    A22: np.ndarray
    B1: np.ndarray
    q: int
    A21_residual: float


def ctrb_matrix(A, B, normalize=True):
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float).T).T
    n = A.shape[0]
    blocks = []
    blk = B
    for _ in range(n):
        nb = np.linalg.norm(blk)
        blocks.append(blk / nb if (normalize and nb > 0) else blk)
        blk = A @ blk
    return np.hstack(blocks)


def ctrb_decompose(A, B, rtol=RANK_RTOL) -> CtrbDecomposition:
    """Kalman controllability decomposition via the SVD of the controllability matrix.

    Each Krylov block is scaled to unit norm before the SVD (same column
    space, better conditioning). Singular values below ``rtol`` times
    the largest count as zero. T is orthogonal, with its first q
    columns spanning the controllable subspace.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float).T).T
    n = A.shape[0]
    U, s, _ = np.linalg.svd(ctrb_matrix(A, B))
    q = int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0
    T = U
    Ah = T.T @ A @ T
    Bh = T.T @ B
    res = float(np.max(np.abs(Ah[q:, :q]))) if 0 < q < n else 0.0
    return CtrbDecomposition(T, Ah[:q, :q], Ah[:q, q:], Ah[q:, q:], Bh[:q], q, res)


def stabilizability_check(A, B, discrete=False, rtol=RANK_RTOL):
    """(stabilizable, eigenvalues of the uncontrollable block)."""
    dec = ctrb_decompose(A, B, rtol)
    lam = np.linalg.eigvals(dec.A22) if dec.A22.size else np.array([])
    ok = bool(np.all(np.abs(lam) < 1.0)) if discrete else bool(np.all(lam.real < 0.0))
    return ok, lam


# -- repair -----------------------------------------------------------------------

@dataclass
class RepairRecord:
    A_repaired: np.ndarray
    A22_original: np.ndarray
    A22_repaired: np.ndarray
    objective: list
    iterations: int
    converged: bool
    change_norm: float
    decomposition: CtrbDecomposition = None


def _solve(prob, solver, what):
    """Solve with ``solver``, then SCS; boundary-tight LMIs can defeat interior-point methods."""
    status = "not attempted"
    for name in dict.fromkeys((solver, "SCS")):
        try:
            prob.solve(solver=name)
        except cp.error.SolverError:
            status = f"{name} failed"
            continue
        status = prob.status
        if prob.variables()[0].value is not None and status in ("optimal", "optimal_inaccurate"):
            return
    raise SubproblemFailure(f"{what}: {status}")


def _aeq_step(A22, P, margin, solver):
    k = A22.shape[0]
    X = cp.Variable((k, k))
    S = X.T @ P + P @ X + 2 * margin * P
    prob = cp.Problem(cp.Minimize(cp.sum_squares(X - A22)), [0.5 * (S + S.T) << 0])
    _solve(prob, solver, "Aeq step")
    return X.value


def _p_step(Aeq, A22, margin, solver, p_max=1e4):
    k = Aeq.shape[0]
    P = cp.Variable((k, k), symmetric=True)
    t = cp.Variable()
    S = Aeq.T @ P + P @ Aeq + 2 * margin * P
    S22 = A22.T @ P + P @ A22 + 2 * margin * P
    cons = [P >> np.eye(k), P << p_max * np.eye(k), 0.5 * (S + S.T) << 0,
            0.5 * (S22 + S22.T) << t * np.eye(k)]
    prob = cp.Problem(cp.Minimize(t), cons)
    _solve(prob, solver, "P step")
    return 0.5 * (P.value + P.value.T)


def _decay_ok(Aeq, margin):
    return bool(np.all(np.linalg.eigvals(Aeq).real <= -margin * (1 - 1e-6)))


def repair_stabilizability(A, B, margin=LMI_MARGIN, max_iter=30, tol=1e-9, solver="CLARABEL",
                           strict=False) -> RepairRecord:
    """Nearest (Frobenius) Hurwitz replacement of the uncontrollable block.

    Alternates two convex steps. With P fixed, Aeq minimises
    ||Aeq - A22||^2 subject to Aeq'P + P Aeq + 2 margin P <= 0, which
    caps every eigenvalue real part at -margin. With Aeq fixed, P is the
    certificate of Aeq (I <= P <= 1e4 I) under which A22 itself is
    closest to satisfying the same inequality. The previous Aeq stays
    feasible for the new P, so accepted objectives never increase.
    Only the uncontrollable block changes; T maps it back.
    """
    A = np.asarray(A, dtype=float)
    dec = ctrb_decompose(A, B)
    ok, _ = stabilizability_check(A, B)
    if ok:
        return RepairRecord(A.copy(), dec.A22, dec.A22, [0.0], 0, True, 0.0, dec)
    A22 = dec.A22
    k = A22.shape[0]
    P = np.eye(k)
    best = None
    objective = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Aeq = _aeq_step(A22, P, margin, solver)
        f = float(np.sum((Aeq - A22) ** 2))
        if best is None or (f <= objective[-1] and _decay_ok(Aeq, margin)):
            best = Aeq
            objective.append(f)
        else:
            objective.append(objective[-1])
        if len(objective) > 1 and objective[-2] - objective[-1] <= tol * max(objective[-2], 1e-300):
            converged = True
            break
        try:
            P = _p_step(best, A22, margin, solver)
        except SubproblemFailure:
            # no certificate with room to improve: keep the best iterate
            break
    if not _decay_ok(best, margin):
        # solver slack: shift the spectrum onto the margin
        shift = np.max(np.linalg.eigvals(best).real) + margin
        best = best - shift * np.eye(k)
        objective[-1] = float(np.sum((best - A22) ** 2))
    Ah = dec.T.T @ A @ dec.T
    Ah[dec.q:, dec.q:] = best
    Ah[dec.q:, :dec.q] = 0.0
    A_rep = dec.T @ Ah @ dec.T.T
    rec = RepairRecord(A_rep, A22, best, objective, it, converged,
                       float(np.linalg.norm(A_rep - A)), dec)
    if strict and not converged:
        raise RepairNotConverged(f"no convergence in {max_iter} iterations", result=rec)
    return rec


def build_model(p: SuspensionParams, road: RoadModel = None, n_samples=100_000, warmup=1200.0,
                design=None, margin=LMI_MARGIN):
    """Estimate the SL matrices, assemble the state space and repair it if needed.

    Returns (SlMatrices, SlStateSpace); ``ss.repair`` summarises the repair
    when one was necessary.
    """
    sl = estimate_sl_matrices(p, design, road, n_samples, warmup)
    ss = assemble_sl_statespace(p, sl)
    if not ss.stabilizable:
        rec = repair_stabilizability(ss.A, ss.Bl[:, None], margin)
        ss = SlStateSpace(rec.A_repaired, ss.B_bilinear, ss.Bl, ss.D,
                          stabilizability_check(rec.A_repaired, ss.Bl[:, None])[0],
                          {"iterations": rec.iterations, "converged": rec.converged,
                           "change_norm": rec.change_norm, "objective": rec.objective})
    return sl, ss


def lyapunov_certificate(A, margin=LMI_MARGIN):
    """P solving A'P + PA = -I for a Hurwitz A (a quick witness, not the repair path)."""
    return solve_continuous_lyapunov(A.T, -np.eye(A.shape[0]))


# -- accuracy comparison -------------------------------------------------------------

def compare_linearizations(p: SuspensionParams, sl_ss: SlStateSpace, ce, road: RoadModel,
                           duration=60.0, window=1.0, warmup=300.0):
    """x3 RMS error of SL and DL predictions against the nonlinear plant.

    After ``warmup`` the nonlinear response is cut into consecutive
    windows of ``window`` seconds. Both linear models restart from the
    plant state at each window start and are driven by the same road.
    Restarting matters because the free pendulum drifts slowly: the
    deterministic model has a zero eigenvalue there and the stochastic
    one may be mildly unstable, so unbroken open-loop runs measure drift
    rather than model fidelity.

    Returns (rms_sl, rms_dl, traces) with traces = (t, x3_nl, x3_sl, x3_dl).
    """
    Ts = road.Ts
    n_warm = int(round(warmup / Ts))
    n_win = max(1, int(round(window / Ts)))
    n_eval = int(round(duration / Ts)) // n_win * n_win
    sig = generate(road, (n_warm + n_eval + 1) * Ts)
    w = np.ascontiguousarray(sig.samples)
    n = len(w)
    X, _, _, failed = _kernels.simulate_ipva(p.as_array(), road_equilibrium(w[0]), np.full(n, float(ce)),
                                             w, Ts)
    if failed >= 0:
        raise NotConverged(f"nonlinear run diverged at step {failed}")
    As, _, Ds = discretize(sl_ss.A_nominal(ce), np.zeros(6), sl_ss.D, Ts)
    Ad, _, Dd = discretize(deterministic_linearize(p, ce), np.zeros(6), _dl_disturbance(p), Ts)
    Ds, Dd = Ds[:, 0], Dd[:, 0]
    xs_tr = np.empty(n_eval)
    xd_tr = np.empty(n_eval)
    for k0 in range(n_warm, n_warm + n_eval, n_win):
        xs = X[k0].copy()
        xd = X[k0].copy()
        for j in range(n_win):
            k = k0 + j
            xs = As @ xs + Ds * w[k]
            xd = Ad @ xd + Dd * w[k]
            xs_tr[k - n_warm] = xs[2]
            xd_tr[k - n_warm] = xd[2]
    x3 = X[n_warm + 1:n_warm + n_eval + 1, 2]
    e_sl = float(np.sqrt(np.mean((xs_tr - x3) ** 2)))
    e_dl = float(np.sqrt(np.mean((xd_tr - x3) ** 2)))
    t = sig.times[n_warm + 1:n_warm + n_eval + 1]
    return e_sl, e_dl, (t, x3, xs_tr, xd_tr)


def _dl_disturbance(p):
    g = generalized_form(p)
    a = p.m * p.Rp * p.r
    G = g.Ml + np.array([[2 * a, a, 0.0], [a, 0.0, 0.0], [0.0, 0.0, 0.0]])
    D = np.zeros(6)
    D[QD_IDX] = np.linalg.solve(G, g.Q_w)
    return D


# -- export -----------------------------------------------------------------------

def save_model(path, sl: SlMatrices, ss: SlStateSpace, meta=None):
    data = {"Me": sl.Me.tolist(), "Ce": sl.Ce.tolist(), "Ke": sl.Ke.tolist(),
            "sample_count": sl.sample_count, "statespace": ss.to_dict(), "meta": meta or {}}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)


def load_model(path):
    with open(path) as fh:
        d = json.load(fh)
    sl = SlMatrices(np.array(d["Me"]), np.array(d["Ce"]), np.array(d["Ke"]), d["sample_count"])
    return sl, SlStateSpace.from_dict(d["statespace"])


def write_matrices_csv(path, sl: SlMatrices):
    import csv
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["matrix", "row", "col", "value", "std_error"])
        for name in ("Me", "Ce", "Ke"):
            M = getattr(sl, name)
            se = sl.se.get(name, np.zeros((3, 3)))
            for i in range(3):
                for j in range(3):
                    wr.writerow([name, i, j, repr(float(M[i, j])), repr(float(se[i, j]))])
