"""Extended high-gain observer for the states and the road input.

The three position measurements (x1, x3, x5) each drive a model-free
chain of integrators. The x5 chain carries one extra state, sigma_hat,
that tracks f6 = x_us''. Since f6 is affine in the road input,
f6 = b1(x, u) + w b2(x), the road follows by inversion.
"""

from dataclasses import dataclass, replace
import math

import numpy as np

from . import _kernels
from .errors import ConfigError, DegenerateInversion, NonFiniteEstimate
from .params import SuspensionParams

B2_GUARD = 1e-9


@dataclass(frozen=True)
class HgoConfig:
    eps: tuple = (0.01, 0.01, 0.01)
    alpha: tuple = (2.0, 1.0, 2.0, 1.0, 3.0, 3.0, 1.0)
    Ts: float = 0.01
    noise_std: float = 0.0      # measurement noise on (x1, x3, x5), off by default
    noise_seed: int = 0

    def __post_init__(self):
        if len(self.eps) != 3 or not all(e > 0 for e in self.eps):
            raise ConfigError("need three positive values", "eps")
        if len(self.alpha) != 7:
            raise ConfigError("need seven coefficients", "alpha")
        a = self.alpha
        for i, (c1, c0) in enumerate(((a[0], a[1]), (a[2], a[3]))):
            if not (c1 > 0 and c0 > 0):
                raise ConfigError(f"s^2 + {c1} s + {c0} is not Hurwitz", f"alpha{2 * i + 1}")
        # Routh: s^3 + a s^2 + b s + c is Hurwitz iff a, c > 0 and ab > c
        if not (a[4] > 0 and a[6] > 0 and a[4] * a[5] > a[6]):
            raise ConfigError(f"s^3 + {a[4]} s^2 + {a[5]} s + {a[6]} is not Hurwitz", "alpha5")
        if not self.Ts > 0:
            raise ConfigError("must be > 0", "Ts")
        if not self.noise_std >= 0:
            raise ConfigError("must be >= 0", "noise_std")

    def with_eps3(self, eps3):
        return replace(self, eps=(self.eps[0], self.eps[1], float(eps3)))


@dataclass(frozen=True)
class HgoState:
    """Estimates (x1..x6, sigma) and the last two measurements seen."""

    xhat: np.ndarray
    sigma: float
    y_prev: np.ndarray
    y_prev2: np.ndarray = None

    @classmethod
    def at(cls, x, sigma=0.0):
        x = np.asarray(x, dtype=float)
        return cls(x.copy(), float(sigma), x[[0, 2, 4]].copy())

    @property
    def z(self):
        return np.append(self.xhat, self.sigma)


def decompose_affine(p: SuspensionParams, xhat, u):
    """(b1, b2) with x_us'' = b1(x, u) + w b2(x)."""
    pv = p.as_array()
    x = np.asarray(xhat, dtype=float)
    _, _, f0 = _kernels.ipva_accels(pv, x, float(u), 0.0)
    _, _, f1 = _kernels.ipva_accels(pv, x, float(u), 1.0)
    return f0, f1 - f0


def _rhs(z, y, cfg: HgoConfig):
    e1, e2, e3 = cfg.eps
    a = cfg.alpha
    r1, r2, r3 = y[0] - z[0], y[1] - z[2], y[2] - z[4]
    return np.array([
        z[1] + a[0] / e1 * r1,
        a[1] / e1**2 * r1,
        z[3] + a[2] / e2 * r2,
        a[3] / e2**2 * r2,
        z[5] + a[4] / e3 * r3,
        z[6] + a[5] / e3**2 * r3,
        a[6] / e3**3 * r3,
    ])


def hgo_step(obs: HgoState, y, u, cfg: HgoConfig, Ts=None) -> HgoState:
    """Advance the observer over one sample period.

    ``y`` is the measurement at the end of the period. The RK4 midpoint
    stages need y half-way through the step; it is interpolated by the
    parabola through the last three samples (linearly on the first
    step). Linear interpolation would bias sigma_hat by O((Ts/eps)^2),
    which is not small at the default Ts = eps.
    The observer is model-free, so ``u`` only matters to the inversion.
    """
    h = cfg.Ts if Ts is None else Ts
    y1 = np.asarray(y, dtype=float)
    y0 = obs.y_prev
    if obs.y_prev2 is None:
        ym = 0.5 * (y0 + y1)
    else:
        ym = 0.375 * y1 + 0.75 * y0 - 0.125 * obs.y_prev2
    z = obs.z
    k1 = _rhs(z, y0, cfg)
    k2 = _rhs(z + 0.5 * h * k1, ym, cfg)
    k3 = _rhs(z + 0.5 * h * k2, ym, cfg)
    k4 = _rhs(z + h * k3, y1, cfg)
    zn = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(zn)):
        raise NonFiniteEstimate("observer diverged; reduce Ts or enlarge eps")
    return HgoState(zn[:6], float(zn[6]), y1.copy(), y0)


def estimate_disturbance(p: SuspensionParams, obs: HgoState, u, guard=B2_GUARD):
    """Road estimate (sigma_hat - b1) / b2 at the current estimate."""
    b1, b2 = decompose_affine(p, obs.xhat, u)
    if abs(b2) <= guard:
        raise DegenerateInversion(f"|b2| = {abs(b2):.3g} at the current estimate")
    return (obs.sigma - b1) / b2


class RoadEstimator:
    """Stateful wrapper used by the closed loop: step, then read w_hat.

    Holds the previous w_hat when the inversion is degenerate.
    """

    def __init__(self, p: SuspensionParams, cfg: HgoConfig, x0, w0=0.0):
        self.p = p
        self.cfg = cfg
        b1, b2 = decompose_affine(p, x0, 0.0)
        self.state = HgoState.at(x0, b1 + w0 * b2)
        self.w_hat = float(w0)
        self._rng = np.random.default_rng(cfg.noise_seed) if cfg.noise_std > 0 else None

    def update(self, y, u):
        if self._rng is not None:
            y = np.asarray(y, dtype=float) + self.cfg.noise_std * self._rng.standard_normal(3)
        self.state = hgo_step(self.state, y, u, self.cfg)
        try:
            self.w_hat = estimate_disturbance(self.p, self.state, u)
        except DegenerateInversion:
            pass
        return self.w_hat


def track_road(p: SuspensionParams, X, U, cfg: HgoConfig, w0=0.0, x0_hat=None):
    """Run the observer along a recorded trajectory.

    ``X`` has one more row than ``U`` (states before and after each
    step). Returns (w_hat[n+1], sigma_hat[n+1]).
    """
    X = np.asarray(X, dtype=float)
    est = RoadEstimator(p, cfg, X[0] if x0_hat is None else x0_hat, w0)
    if x0_hat is not None:
        est.state = replace(est.state, y_prev=X[0, [0, 2, 4]].copy())
    n = len(U)
    w_hat = np.empty(n + 1)
    sig = np.empty(n + 1)
    w_hat[0], sig[0] = est.w_hat, est.state.sigma
    for k in range(n):
        w_hat[k + 1] = est.update(X[k + 1, [0, 2, 4]], U[k])
        sig[k + 1] = est.state.sigma
    return w_hat, sig


def normalized_rms_error(estimate, truth, skip=0):
    e = np.asarray(estimate)[skip:] - np.asarray(truth)[skip:]
    return float(math.sqrt(np.mean(e**2)) / math.sqrt(np.mean(np.asarray(truth)[skip:] ** 2)))


def smooth_road_response(p: SuspensionParams, ce, amplitude=0.02, omega=1.0, duration=30.0,
                         Ts=0.01, substeps=1000):
    """Plant response to a sinusoidal road, integrated finely and sampled at Ts.

    A road held constant over each Ts step jumps at every sample, which
    puts an O(1) sawtooth on x_us'' that no observer gain can remove.
    Integrating at Ts / substeps makes the road effectively smooth, so
    the sampled f6 is the quantity the extended state should track.
    Returns (X[n+1], w[n+1], f6[n+1]) at the sample instants.
    """
    h = Ts / substeps
    n = int(round(duration / Ts))
    t = (np.arange(n * substeps) + 0.5) * h
    w_fine = amplitude * np.sin(omega * t)
    pv = p.as_array()
    X, _, _, failed = _kernels.simulate_ipva(pv, np.zeros(6), np.full(len(t), float(ce)), w_fine, h)
    if failed >= 0:
        raise NonFiniteEstimate(f"reference run diverged at fine step {failed}")
    Xs = np.ascontiguousarray(X[::substeps])
    ws = amplitude * np.sin(omega * np.arange(n + 1) * Ts)
    f6 = np.array([_kernels.ipva_accels(pv, Xs[k], float(ce), ws[k])[2] for k in range(n + 1)])
    return Xs, ws, f6


def sigma_error(p: SuspensionParams, cfg: HgoConfig, X, u, f6, skip=0):
    """RMS error of the extended state against the true f6 after ``skip`` samples."""
    U = np.full(len(X) - 1, float(u)) if np.ndim(u) == 0 else np.asarray(u)
    _, sig = track_road(p, X, U, cfg)
    e = sig[skip:] - np.asarray(f6)[skip:]
    return float(math.sqrt(np.mean(e**2)))


def eps_scaling(p: SuspensionParams, eps3_values, cfg: HgoConfig = None, ce=None, amplitude=0.02,
                omega=1.0, duration=30.0, skip_time=10.0, substeps=1000):
    """Steady-state sigma_hat error for each eps3 on the smooth-road response."""
    cfg = cfg or HgoConfig()
    ce = p.ce_max if ce is None else ce
    X, _, f6 = smooth_road_response(p, ce, amplitude, omega, duration, cfg.Ts, substeps)
    skip = int(round(skip_time / cfg.Ts))
    return np.array([sigma_error(p, cfg.with_eps3(e), X, ce, f6, skip) for e in eps3_values])
