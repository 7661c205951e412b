"""Compiled inner loops.

Everything here works on the packed parameter vector produced by
``SuspensionParams.as_array`` and on plain float arrays. The public,
readable versions of the same equations live in :mod:`ipva.model`; the
test-suite checks that both agree.
"""

import math

import numpy as np
from numba import njit

# packed parameter indices (see params.PACKED_FIELDS)
MS, MUS, KS, KT, CM, R_, M_, RP, RR, J_, JP, JR, KP = range(13)


@njit(cache=True)
def ipva_accels(pv, x, u, w):
    """Solve G(x) qdd = F(x,u,w) for (theta_dd, phi_dd, xus_dd)."""
    Ms = pv[MS]
    R = pv[R_]
    m = pv[M_]
    mr2 = m * pv[RR] * pv[RR]
    a = m * pv[RP] * pv[RR]
    c = math.cos(x[2])
    s = math.sin(x[2])
    g22 = Ms * R * R + pv[J_] + m * pv[RP] * pv[RP] + mr2 + 2.0 * a * c + pv[JP] + pv[JR]
    g24 = mr2 + a * c + pv[JP] - pv[JR]
    g44 = mr2 + pv[JP] + pv[JR]
    g26 = Ms * R
    g66 = Ms + pv[MUS]
    rel = x[3] - x[1]
    f2 = (-pv[CM] * R * R * x[1] + u * rel - pv[KS] * R * R * x[0]
          + 2.0 * a * x[3] * x[1] * s + a * s * x[3] * x[3])
    f4 = -u * rel - a * s * x[1] * x[1] - pv[KP] * x[2]
    f6 = -pv[KT] * (x[4] - w)
    det = g22 * g44 * g66 - g24 * g24 * g66 - g26 * g26 * g44
    th = (f2 * g44 * g66 - g24 * f4 * g66 - g26 * g44 * f6) / det
    ph = (f4 - g24 * th) / g44
    us = (f6 - g26 * th) / g66
    return th, ph, us


@njit(cache=True)
def ipva_rhs(pv, x, u, w, out):
    th, ph, us = ipva_accels(pv, x, u, w)
    out[0] = x[1]
    out[1] = th
    out[2] = x[3]
    out[3] = ph
    out[4] = x[5]
    out[5] = us


@njit(cache=True)
def linear_rhs(pv, x, u, w, out):
    """Linear benchmark, state (theta, theta_d, xus, xus_d)."""
    Ms = pv[MS]
    R = pv[R_]
    m11 = Ms * R * R + pv[JR]
    m12 = R * Ms
    m22 = Ms + pv[MUS]
    f1 = -(pv[CM] * R * R + u) * x[1] - pv[KS] * R * R * x[0]
    f2 = -pv[KT] * (x[2] - w)
    det = m11 * m22 - m12 * m12
    out[0] = x[1]
    out[1] = (f1 * m22 - m12 * f2) / det
    out[2] = x[3]
    out[3] = (m11 * f2 - m12 * f1) / det


@njit(cache=True)
def _rk4_ipva(pv, x, u, w, h, xn, k1, k2, k3, k4, tmp):
    n = x.shape[0]
    ipva_rhs(pv, x, u, w, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    ipva_rhs(pv, tmp, u, w, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    ipva_rhs(pv, tmp, u, w, k3)
    for i in range(n):
        tmp[i] = x[i] + h * k3[i]
    ipva_rhs(pv, tmp, u, w, k4)
    for i in range(n):
        xn[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def _rk4_linear(pv, x, u, w, h, xn, k1, k2, k3, k4, tmp):
    n = x.shape[0]
    linear_rhs(pv, x, u, w, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k1[i]
    linear_rhs(pv, tmp, u, w, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * h * k2[i]
    linear_rhs(pv, tmp, u, w, k3)
    for i in range(n):
        tmp[i] = x[i] + h * k3[i]
    linear_rhs(pv, tmp, u, w, k4)
    for i in range(n):
        xn[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def ipva_step(pv, x, u, w, h):
    """One RK4 step; returns (x_next, sprung acceleration at the step start)."""
    xn = np.empty(6)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    _rk4_ipva(pv, x, u, w, h, xn, k1, k2, k3, k4, tmp)
    return xn, k1[5] + pv[R_] * k1[1]


@njit(cache=True)
def simulate_ipva(pv, x0, u, w, h):
    """Open-loop RK4 run with ZOH control/road.

    Returns (states[n+1], sprung accel[n], power[n], failed_step) where
    failed_step is -1 when every state stayed finite.
    """
    n = w.shape[0]
    X = np.empty((n + 1, 6))
    acc = np.empty(n)
    pw = np.empty(n)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    X[0] = x0
    R = pv[R_]
    for k in range(n):
        _rk4_ipva(pv, X[k], u[k], w[k], h, X[k + 1], k1, k2, k3, k4, tmp)
        acc[k] = k1[5] + R * k1[1]
        rel = X[k, 1] - X[k, 3]
        pw[k] = u[k] * rel * rel
        ok = True
        for i in range(6):
            if not math.isfinite(X[k + 1, i]):
                ok = False
        if not ok:
            return X, acc, pw, k
    return X, acc, pw, -1


@njit(cache=True)
def simulate_linear(pv, x0, u, w, h):
    n = w.shape[0]
    X = np.empty((n + 1, 4))
    acc = np.empty(n)
    pw = np.empty(n)
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    X[0] = x0
    R = pv[R_]
    for k in range(n):
        _rk4_linear(pv, X[k], u[k], w[k], h, X[k + 1], k1, k2, k3, k4, tmp)
        acc[k] = k1[3] + R * k1[1]
        pw[k] = u[k] * X[k, 1] * X[k, 1]
        ok = True
        for i in range(4):
            if not math.isfinite(X[k + 1, i]):
                ok = False
        if not ok:
            return X, acc, pw, k
    return X, acc, pw, -1


@njit(cache=True)
def simulate_lti(A, B, D, x0, u, w, h, out_row):
    """RK4 for xdot = A x + B u + D w with ZOH inputs.

    Also returns y[k] = out_row . xdot at each step start.
    """
    n = w.shape[0]
    nx = x0.shape[0]
    X = np.empty((n + 1, nx))
    y = np.empty(n)
    X[0] = x0
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    tmp = np.empty(nx)
    for k in range(n):
        xk = X[k]
        k1[:] = A @ xk + B * u[k] + D * w[k]
        tmp[:] = xk + 0.5 * h * k1
        k2[:] = A @ tmp + B * u[k] + D * w[k]
        tmp[:] = xk + 0.5 * h * k2
        k3[:] = A @ tmp + B * u[k] + D * w[k]
        tmp[:] = xk + h * k3
        k4[:] = A @ tmp + B * u[k] + D * w[k]
        X[k + 1] = xk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[k] = out_row @ k1
    return X, y


@njit(cache=True)
def batch_accels(pv, X, u, w):
    """Generalised accelerations (theta_dd, phi_dd, xus_dd) at every row of X."""
    n = X.shape[0]
    out = np.empty((n, 3))
    for k in range(n):
        th, ph, us = ipva_accels(pv, X[k], u[k], w[k])
        out[k, 0] = th
        out[k, 1] = ph
        out[k, 2] = us
    return out


# --------------------------------------------------------------------------
# NMPC single shooting


@njit(cache=True)
def _nmpc_tail(pv, x0, U, W, h, a1, a2, start, xs, store):
    """Cost of steps start..N-1 from state x0; optionally store states."""
    N = U.shape[0]
    R = pv[R_]
    x = x0.copy()
    xn = np.empty(6)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    J = 0.0
    for k in range(start, N):
        if store:
            xs[k] = x
        _rk4_ipva(pv, x, U[k], W[k], h, xn, k1, k2, k3, k4, tmp)
        acc = k1[5] + R * k1[1]
        rel = x[1] - x[3]
        J += h * (a1 * acc * acc - a2 * U[k] * rel * rel)
        x[:] = xn
    return J


@njit(cache=True)
def nmpc_cost(pv, x0, U, W, h, a1, a2):
    xs = np.empty((1, 6))
    return _nmpc_tail(pv, x0, U, W, h, a1, a2, 0, xs, False)


@njit(cache=True)
def nmpc_cost_grad(pv, x0, U, W, h, a1, a2, du, grad):
    """Cost and forward-difference gradient.

    Perturbing u_j leaves steps < j untouched, so each perturbed rollout
    restarts from the stored nominal state at step j.
    """
    N = U.shape[0]
    xs = np.empty((N, 6))
    R = pv[R_]
    J = _nmpc_tail(pv, x0, U, W, h, a1, a2, 0, xs, True)
    # prefix[j] = cost of steps 0..j-1 on the nominal trajectory
    prefix = np.empty(N + 1)
    prefix[0] = 0.0
    xn = np.empty(6)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    for k in range(N):
        _rk4_ipva(pv, xs[k], U[k], W[k], h, xn, k1, k2, k3, k4, tmp)
        acc = k1[5] + R * k1[1]
        rel = xs[k, 1] - xs[k, 3]
        prefix[k + 1] = prefix[k] + h * (a1 * acc * acc - a2 * U[k] * rel * rel)
    Up = U.copy()
    for j in range(N):
        Up[j] = U[j] + du
        Jj = prefix[j] + _nmpc_tail(pv, xs[j], Up, W, h, a1, a2, j, xs, False)
        grad[j] = (Jj - J) / du
        Up[j] = U[j]
    return J


# --------------------------------------------------------------------------
# box-constrained convex QP


@njit(cache=True)
def box_qp(Q, g, lo, hi, x0, tol, maxit):
    """Minimise 0.5 x'Qx + g'x subject to lo <= x <= hi (Q positive definite).

    Projected Newton with Armijo search along the projection arc.
    Returns (x, iterations).
    """
    n = g.shape[0]
    x = np.minimum(np.maximum(x0, lo), hi)
    it = 0
    for it in range(1, maxit + 1):
        gr = Q @ x + g
        pg = 0.0
        for i in range(n):
            p = x[i] - min(max(x[i] - gr[i], lo[i]), hi[i])
            pg = max(pg, abs(p))
        if pg < tol:
            break
        eps = min(1e-8, pg)
        free = np.ones(n, dtype=np.bool_)
        nf = 0
        for i in range(n):
            if (x[i] <= lo[i] + eps and gr[i] > 0.0) or (x[i] >= hi[i] - eps and gr[i] < 0.0):
                free[i] = False
            else:
                nf += 1
        d = np.zeros(n)
        if nf > 0:
            idx = np.empty(nf, dtype=np.int64)
            c = 0
            for i in range(n):
                if free[i]:
                    idx[c] = i
                    c += 1
            Qf = np.empty((nf, nf))
            gf = np.empty(nf)
            for a in range(nf):
                gf[a] = gr[idx[a]]
                for b in range(nf):
                    Qf[a, b] = Q[idx[a], idx[b]]
            df = np.linalg.solve(Qf, -gf)
            for a in range(nf):
                d[idx[a]] = df[a]
        for i in range(n):
            if not free[i]:
                d[i] = -gr[i] / Q[i, i]
        f0 = 0.5 * x @ (Q @ x) + g @ x
        t = 1.0
        xn = x.copy()
        for _ in range(40):
            for i in range(n):
                xn[i] = min(max(x[i] + t * d[i], lo[i]), hi[i])
            fn = 0.5 * xn @ (Q @ xn) + g @ xn
            if fn <= f0 + 1e-4 * (gr @ (xn - x)):
                break
            t *= 0.5
        x[:] = xn
    return x, it


@njit(cache=True)
def nmpc_pg(pv, x0, W, h, a1, a2, U0, umax, du, tol, maxit):
    """Projected-gradient single shooting over U in [0, umax]^N.

    Barzilai-Borwein step lengths with an Armijo test along the
    projected direction. The cost is scaled by 1/h internally.
    Returns (U, cost, iterations, status) with status 0 = converged,
    1 = iteration cap, 2 = line search stalled, 3 = non-finite rollout.
    """
    N = U0.shape[0]
    U = np.minimum(np.maximum(U0, 0.0), umax)
    g = np.empty(N)
    gn = np.empty(N)
    J = nmpc_cost_grad(pv, x0, U, W, h, a1, a2, du, g) / h
    for i in range(N):
        g[i] = g[i] / h if math.isfinite(g[i]) else 0.0
    if not math.isfinite(J):
        return U, J * h, 0, 3
    Un = np.empty(N)
    d = np.empty(N)
    gmax = 0.0
    for i in range(N):
        gmax = max(gmax, abs(g[i]))
    step = umax / gmax if gmax > 0 else 1.0
    status = 1
    it = 0
    for it in range(1, maxit + 1):
        pg = 0.0
        for i in range(N):
            pg = max(pg, abs(U[i] - min(max(U[i] - g[i], 0.0), umax)))
        if pg < tol:
            status = 0
            break
        slope = 0.0
        for i in range(N):
            d[i] = min(max(U[i] - step * g[i], 0.0), umax) - U[i]
            slope += g[i] * d[i]
        t = 1.0
        ok = False
        for _ in range(30):
            for i in range(N):
                # clamp: U + (clip - U) can round just outside the box
                Un[i] = min(max(U[i] + t * d[i], 0.0), umax)
            Jn = nmpc_cost(pv, x0, Un, W, h, a1, a2) / h
            if math.isfinite(Jn) and Jn <= J + 1e-4 * t * slope:
                ok = True
                break
            t *= 0.5
        if not ok:
            status = 2
            break
        Jn = nmpc_cost_grad(pv, x0, Un, W, h, a1, a2, du, gn) / h
        sy = 0.0
        ss = 0.0
        for i in range(N):
            # a perturbation that diverges carries no usable slope
            gn[i] = gn[i] / h if math.isfinite(gn[i]) else 0.0
            s = Un[i] - U[i]
            sy += s * (gn[i] - g[i])
            ss += s * s
        step = ss / sy if sy > 1e-300 else umax / max(pg, 1e-300)
        step = min(max(step, 1e-10), 1e10)
        U[:] = Un
        g[:] = gn
        J = Jn
    return U, J * h, it, status


@njit(cache=True)
def slmpc_iterate(Qc, rho, Ha, Hv, Sa, Sv, Wa, Wv, x0, w, Fbar, cmax, h, a1, a2, iters, tol):
    """Sequential convexification of the force-form SL-MPC problem.

    Each pass freezes the predicted relative velocities to turn the
    passivity constraints into bounds and adds a proximal term rho/2
    |F - Fbar|^2 that makes the quadratic convex. Returns (F, passes).
    """
    N = Fbar.shape[0]
    r = Sa @ x0 + Wa @ w
    s0 = Sv @ x0 + Wv @ w
    g0 = h * (2.0 * a1 * (Ha.T @ r) - a2 * s0)
    Qp = Qc.copy()
    for i in range(N):
        Qp[i, i] += rho
    F = Fbar.copy()
    lo = np.empty(N)
    hi = np.empty(N)
    n = 0
    for n in range(1, iters + 1):
        v = s0 + Hv @ F
        for k in range(N):
            b = cmax * v[k]
            lo[k] = min(0.0, b)
            hi[k] = max(0.0, b)
        Fn, _ = box_qp(Qp, g0 - rho * F, lo, hi, F, 1e-12, 50)
        dmax = 0.0
        for k in range(N):
            dmax = max(dmax, abs(Fn[k] - F[k]))
        F = Fn
        if dmax < tol:
            break
    return F, n
