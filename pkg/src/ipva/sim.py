"""Fixed-step integration, performance metrics and spectral diagnostics."""

from dataclasses import dataclass
import csv

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks, welch

from . import _kernels
from .errors import EmptyTrajectory, NonFiniteState, TooShort
from .params import SuspensionParams
from .road import RoadSignal

PSD_SEGMENT = 2**14


@dataclass
class Trajectory:
    """Per-step record of a run.

    ``states[k]`` is the state at the start of step k; ``final_state`` is
    the state after the last step. Acceleration and power are evaluated
    from the dynamics at (states[k], controls[k], disturbances[k]).
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    disturbances: np.ndarray
    accelerations: np.ndarray
    power: np.ndarray
    final_state: np.ndarray = None

    def __len__(self):
        return len(self.times)

    def window(self, start):
        return Trajectory(self.times[start:], self.states[start:], self.controls[start:],
                          self.disturbances[start:], self.accelerations[start:],
                          self.power[start:], self.final_state)


@dataclass(frozen=True)
class Metrics:
    avg_power: float
    rms_accel: float


def rk4_step(rhs, x, u, w, h):
    k1 = rhs(x, u, w)
    k2 = rhs(x + 0.5 * h * k1, u, w)
    k3 = rhs(x + 0.5 * h * k2, u, w)
    k4 = rhs(x + h * k3, u, w)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), k1


def integrate(rhs, x0, u_policy, road, Ts, duration, outputs=None) -> Trajectory:
    """Classical RK4 with control and road held over each step.

    rhs(x, u, w) -> xdot. ``u_policy`` is a constant or a callable
    ``(k, x) -> u``. ``road`` is a RoadSignal, an array or None (zero road).
    ``outputs(x, xdot, u) -> (accel, power)`` fills the metric channels.
    """
    n = int(round(duration / Ts))
    if isinstance(road, RoadSignal):
        if abs(road.Ts - Ts) > 1e-12:
            raise ValueError(f"road sampled at {road.Ts}, integrator step {Ts}")
        w = road.samples
    elif road is None:
        w = np.zeros(n)
    else:
        w = np.asarray(road, dtype=float)
    if len(w) < n:
        raise ValueError(f"road has {len(w)} samples, need {n}")
    policy = u_policy if callable(u_policy) else (lambda k, x, _u=float(u_policy): _u)

    x = np.array(x0, dtype=float)
    states = np.empty((n, len(x)))
    controls = np.empty(n)
    acc = np.zeros(n)
    pw = np.zeros(n)
    for k in range(n):
        u = policy(k, x)
        states[k] = x
        controls[k] = u
        x, k1 = rk4_step(rhs, x, u, w[k], Ts)
        if outputs is not None:
            acc[k], pw[k] = outputs(states[k], k1, u)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"state diverged at step {k}", step=k)
    return Trajectory(np.arange(n) * Ts, states, controls, np.array(w[:n]), acc, pw, x)


def road_equilibrium(road_value, n_states=6):
    """Rest state with the tyre undeflected on the current road height."""
    x0 = np.zeros(n_states)
    x0[4 if n_states == 6 else 2] = road_value
    return x0


def simulate_ipva(p: SuspensionParams, ce, road: RoadSignal, x0=None, duration=None) -> Trajectory:
    """Passive or open-loop IPVA run (compiled path).

    ``ce`` is a constant or a per-step array. The default initial state
    sits at rest on the first road sample.
    """
    return _simulate(p, ce, road, x0, duration, linear=False)


def simulate_benchmark(p: SuspensionParams, ce, road: RoadSignal, x0=None, duration=None) -> Trajectory:
    """Linear benchmark run, state (theta, theta_d, x_us, x_us_d)."""
    return _simulate(p, ce, road, x0, duration, linear=True)


def _simulate(p, ce, road, x0, duration, linear):
    w = road.samples if isinstance(road, RoadSignal) else np.asarray(road, dtype=float)
    Ts = road.Ts if isinstance(road, RoadSignal) else 0.01
    n = len(w) if duration is None else int(round(duration / Ts))
    w = np.ascontiguousarray(w[:n], dtype=float)
    u = np.broadcast_to(np.asarray(ce, dtype=float), (n,)).copy()
    nx = 4 if linear else 6
    if x0 is None:
        x0 = road_equilibrium(w[0] if n else 0.0, nx)
    kern = _kernels.simulate_linear if linear else _kernels.simulate_ipva
    X, acc, pw, failed = kern(p.as_array(), np.asarray(x0, dtype=float), u, w, Ts)
    if failed >= 0:
        raise NonFiniteState(f"state diverged at step {failed}", step=int(failed))
    return Trajectory(np.arange(n) * Ts, X[:-1], u, w, acc, pw, X[-1])


def metrics(traj: Trajectory, skip=0) -> Metrics:
    """Mean harvested power and RMS sprung-mass acceleration after ``skip`` steps."""
    if len(traj) - skip <= 0:
        raise EmptyTrajectory("no samples left after the transient skip")
    p = traj.power[skip:]
    a = traj.accelerations[skip:]
    return Metrics(float(np.mean(p)), float(np.sqrt(np.mean(a**2))))


def cumulative_mean(series):
    series = np.asarray(series, dtype=float)
    return np.cumsum(series) / np.arange(1, len(series) + 1)


@dataclass(frozen=True)
class StationarityResult:
    stationary: bool
    deviation: float


def stationarity(cum_mean, Ts=0.01, t_check=1200.0, band=0.002) -> StationarityResult:
    """Does the running mean stay within ``band`` (relative) of its final value after ``t_check``?"""
    cum_mean = np.asarray(cum_mean, dtype=float)
    start = int(round(t_check / Ts))
    final = cum_mean[-1]
    tail = cum_mean[start:]
    if len(tail) == 0:
        return StationarityResult(True, 0.0)
    scale = abs(final) if final != 0 else 1.0
    dev = float(np.max(np.abs(tail - final)) / scale)
    return StationarityResult(dev <= band, dev)


def psd(signal, Ts, nperseg=PSD_SEGMENT, omega0=None):
    """One-sided Welch PSD in rad/s.

    Hann window, 50 % overlap, mean removed per segment. The density is
    per rad/s so that its integral over [0, pi/Ts] is the variance.
    Frequencies are divided by ``omega0`` when it is given.
    """
    signal = np.asarray(signal, dtype=float)
    if len(signal) < 2 * nperseg:
        raise TooShort(f"{len(signal)} samples, need at least {2 * nperseg}")
    f, S = welch(signal, fs=1.0 / Ts, window="hann", nperseg=nperseg,
                 noverlap=nperseg // 2, detrend="constant", scaling="density")
    omega = 2 * np.pi * f
    dens = S / (2 * np.pi)
    if omega0 is not None:
        omega = omega / omega0
    return omega, dens


def generator_velocity(traj: Trajectory):
    """Speed across the generator: theta' - phi' for the IPVA, theta' for the benchmark."""
    X = traj.states
    return X[:, 1] - X[:, 3] if X.shape[1] == 6 else X[:, 1].copy()


def peaks_in_band(omega, density, band, prominence_db=3.0, smooth=31):
    """Local maxima of 10 log10(density) inside ``band`` with the given prominence (dB).

    Prominence is measured on the full spectrum, so a shoulder on the
    flank of a neighbouring resonance does not count as a peak. The dB
    curve is first averaged over ``smooth`` bins so Welch scatter does
    not register as structure.
    """
    omega = np.asarray(omega, dtype=float)
    db = 10.0 * np.log10(np.maximum(np.asarray(density, dtype=float), 1e-300))
    if smooth > 1:
        db = uniform_filter1d(db, smooth, mode="nearest")
    idx, _ = find_peaks(db, prominence=prominence_db)
    lo, hi = band
    return omega[idx[(omega[idx] >= lo) & (omega[idx] <= hi)]]


def band_level_db(omega, density, center, halfwidth):
    """Peak level (dB) of the density within center +- halfwidth."""
    omega = np.asarray(omega, dtype=float)
    sel = np.abs(omega - center) <= halfwidth
    if not np.any(sel):
        raise TooShort(f"no frequency bins within {center} +- {halfwidth}")
    return float(10.0 * np.log10(np.max(np.asarray(density)[sel])))


# -- export -------------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path):
    names = ["time_s"] + [f"x{i + 1}" for i in range(traj.states.shape[1])] + [
        "u", "w", "accel_ms2", "power_w"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(names)
        for k in range(len(traj)):
            row = [traj.times[k], *traj.states[k], traj.controls[k], traj.disturbances[k],
                   traj.accelerations[k], traj.power[k]]
            wr.writerow([repr(float(v)) for v in row])


def write_psd_csv(omega, density, path, normalized=False):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["omega_over_omega0" if normalized else "omega_rad_s", "density"])
        for o, d in zip(omega, density):
            wr.writerow([repr(float(o)), repr(float(d))])
