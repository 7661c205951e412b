"""Passive design: grid-search Pareto analysis and the linear-benchmark closed form."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import math

import numpy as np
from scipy.integrate import quad

from .errors import ConstraintViolation
from .model import benchmark_state_matrices
from .params import SuspensionParams
from .road import RoadModel, generate
from .sim import Metrics, metrics, simulate_benchmark, simulate_ipva

ETA_BOX = (0.5, 0.9)
MU_BOX = (0.05, 0.2)


@dataclass(frozen=True)
class DesignPoint:
    """Pendulum geometry and electrical damping of a passive IPVA."""

    Rp: float
    r: float
    ce: float

    def eta(self):
        return self.r / self.Rp

    def mu_r(self, p: SuspensionParams):
        return p.m * self.Rp**2 / (p.Ms * p.R**2)

    def xi_e(self, p: SuspensionParams):
        return p.xi_e(self.ce)

    def violations(self, p: SuspensionParams):
        out = []
        if not (self.Rp > 0 and self.r > 0):
            return ["Rp and r must be positive"]
        if not ETA_BOX[0] < self.eta() < ETA_BOX[1]:
            out.append(f"eta={self.eta():.4g} outside {ETA_BOX}")
        if not MU_BOX[0] < self.mu_r(p) < MU_BOX[1]:
            out.append(f"mu_r={self.mu_r(p):.4g} outside {MU_BOX}")
        if not (self.ce >= 0 and self.xi_e(p) < 1):
            out.append(f"xi_e={self.xi_e(p):.4g} outside [0, 1)")
        return out

    def check(self, p: SuspensionParams):
        bad = self.violations(p)
        if bad:
            raise ConstraintViolation("; ".join(bad))

    @classmethod
    def from_dimensionless(cls, p: SuspensionParams, eta, mu_r, ce):
        Rp = math.sqrt(mu_r * p.Ms * p.R**2 / p.m)
        return cls(Rp, eta * Rp, ce)


POINT3 = DesignPoint(0.117, 0.0897, 0.225)


@dataclass
class ParetoResult:
    """Evaluated designs, their averaged metrics and the non-dominated subset."""

    points: list
    metrics: list
    on_front: np.ndarray
    front: list = field(default_factory=list)

    def power(self):
        return np.array([m.avg_power for m in self.metrics])

    def rms(self):
        return np.array([m.rms_accel for m in self.metrics])


# -- evaluation ---------------------------------------------------------------

def _one_run(args):
    p, d, model, seed, duration, skip, linear = args
    sig = generate(model.with_seed(seed), duration)
    run = simulate_benchmark if linear else simulate_ipva
    pd = p if linear else p.with_design(d.Rp, d.r)
    return metrics(run(pd, d.ce, sig), skip)


def _evaluate(p, d, seeds, duration, model, skip, linear, n_jobs):
    jobs = [(p, d, model, int(s), duration, skip, linear) for s in seeds]
    if n_jobs == 1:
        runs = [_one_run(j) for j in jobs]
    else:
        with ProcessPoolExecutor(n_jobs) as ex:
            runs = list(ex.map(_one_run, jobs))  # ordered
    return Metrics(float(np.mean([m.avg_power for m in runs])),
                   float(np.mean([m.rms_accel for m in runs])))


def evaluate_design(p: SuspensionParams, d: DesignPoint, seeds, duration=200.0,
                    model: RoadModel = None, skip=0, n_jobs=1) -> Metrics:
    """Seed-averaged passive metrics of the nonlinear plant with constant u = ce."""
    d.check(p)
    return _evaluate(p, d, seeds, duration, model or RoadModel(Ts=0.01), skip, False, n_jobs)


def evaluate_benchmark(p: SuspensionParams, ce, seeds, duration=200.0,
                       model: RoadModel = None, skip=0, n_jobs=1) -> Metrics:
    if not (ce >= 0 and p.xi_e(ce) < 1):
        raise ConstraintViolation(f"ce={ce} violates 0 <= xi_e < 1")
    d = DesignPoint(1.0, 1.0, ce)
    return _evaluate(p, d, seeds, duration, model or RoadModel(Ts=0.01), skip, True, n_jobs)


def pareto_mask(power, rms):
    """Non-dominated flags for maximising power and minimising rms."""
    power = np.asarray(power, dtype=float)
    rms = np.asarray(rms, dtype=float)
    n = len(power)
    mask = np.ones(n, dtype=bool)
    for i in range(n):
        dom = (power >= power[i]) & (rms <= rms[i]) & ((power > power[i]) | (rms < rms[i]))
        mask[i] = not dom.any()
    return mask


def _pareto(points, mets):
    mask = pareto_mask([m.avg_power for m in mets], [m.rms_accel for m in mets])
    idx = sorted(np.flatnonzero(mask), key=lambda i: (mets[i].rms_accel, -mets[i].avg_power))
    return ParetoResult(list(points), list(mets), mask, [points[i] for i in idx])


def default_grid(p: SuspensionParams, n_eta=8, n_mu=8, n_ce=8):
    """Interior grid of the design box; ce spans (0, ce_max]."""
    etas = np.linspace(*ETA_BOX, n_eta + 2)[1:-1]
    mus = np.linspace(*MU_BOX, n_mu + 2)[1:-1]
    ces = np.linspace(0.0, p.ce_max, n_ce + 1)[1:]
    return [DesignPoint.from_dimensionless(p, e, mu, c) for e in etas for mu in mus for c in ces]


def grid_search(p: SuspensionParams, grid=None, seeds=range(10), duration=200.0,
                model: RoadModel = None, skip=0, n_jobs=1) -> ParetoResult:
    """Evaluate every grid point with common seeds and extract the Pareto front."""
    grid = default_grid(p) if grid is None else list(grid)
    mets = [evaluate_design(p, d, seeds, duration, model, skip, n_jobs) for d in grid]
    return _pareto(grid, mets)


def pareto_from_metrics(points, mets) -> ParetoResult:
    return _pareto(points, mets)


def linear_benchmark_optimum(p: SuspensionParams, ce_grid=None, seeds=range(10), duration=200.0,
                             model: RoadModel = None, skip=0, n_jobs=1) -> ParetoResult:
    """Benchmark front over the damping grid (points are DesignPoints with unit geometry)."""
    if ce_grid is None:
        ce_grid = np.linspace(0.0, p.ce_max, 9)[1:]
    pts = [DesignPoint(1.0, 1.0, float(c)) for c in ce_grid]
    mets = [evaluate_benchmark(p, d.ce, seeds, duration, model, skip, n_jobs) for d in pts]
    return _pareto(pts, mets)


# -- closed form --------------------------------------------------------------

def sigma_coefficients(p: SuspensionParams, ce, printed=False):
    """(C, a0, a1, a2, a3) of the RMS-acceleration polynomial in R.

    ``printed=True`` reproduces the published a1, which drops a factor
    kt from its ce**2 term and Jr**2 from its kt**2 term; the default
    is the dimensionally consistent coefficient.
    """
    Ms, Mus, ks, kt, cm, R, Jr = p.Ms, p.Mus, p.ks, p.kt, p.cm, p.R, p.Jr
    M = Ms + Mus
    C = R**2 * Ms**2 * (ce + R**2 * cm) * (Jr * M + R**2 * Ms * Mus)
    a0 = Jr * kt * ce**2 * M + Jr**3 * kt**2
    if printed:
        a1 = 2 * ce * cm * Jr * M * kt + ce**2 * Ms * Mus + kt**2 * Ms - 2 * Jr**2 * ks * M * kt
    else:
        a1 = (2 * ce * cm * Jr * M * kt + ce**2 * Ms * Mus * kt + Jr**2 * kt**2 * Ms
              - 2 * Jr**2 * ks * M * kt)
    a2 = (2 * ce * cm * kt * Ms * Mus + cm**2 * Jr * kt * M + ks**2 * Jr * M**2
          - 2 * kt * ks * Jr * Ms * Mus)
    a3 = Ms * Mus * cm**2 * kt + ks**2 * Ms * Mus * M
    return C, a0, a1, a2, a3


def closed_form_linear(p: SuspensionParams, ce, road: RoadModel = None, printed=False):
    """Stationary (avg power W, rms sprung accel m/s^2) of the linear benchmark.

    The road filter cutoff is taken as zero. Raises ZeroDivisionError when
    ce + R^2 cm = 0.
    """
    road = road or RoadModel()
    c = ce + p.R**2 * p.cm
    if c == 0:
        raise ZeroDivisionError("ce + R^2 cm = 0: benchmark is undamped")
    q = math.pi * road.V * road.Gr
    P = ce * q * p.kt / c
    C, a0, a1, a2, a3 = sigma_coefficients(p, ce, printed)
    R2 = p.R**2
    var = q * (a0 + a1 * R2 + a2 * R2**2 + a3 * R2**3) / C
    return P, math.sqrt(var) if var >= 0 else math.nan


def spectral_linear(p: SuspensionParams, ce, road: RoadModel = None, include_cutoff=False):
    """The same two statistics by quadrature of the state-space frequency response.

    Independent of the polynomial: builds (A, D) numerically and
    integrates |H|^2 times the road spectrum over 0..inf.
    """
    road = road or RoadModel()
    A, D = benchmark_state_matrices(p, ce)
    I = np.eye(4)
    wc = road.wc if include_cutoff else 0.0

    def resp(w):
        X = np.linalg.solve(1j * w * I - A, D)   # state per unit road displacement
        acc = 1j * w * (X[3] + p.R * X[1])
        return X[1], acc

    def spec(w):
        return road.intensity / (w**2 + wc**2)

    def integral(f):
        lo, hi = 1e-9, 4.0 * np.max(np.abs(np.linalg.eigvals(A)))
        brk = np.sort(np.abs(np.linalg.eigvals(A).imag))
        v = quad(f, lo, hi, points=brk[brk > 0], limit=2000, epsabs=0, epsrel=1e-12)[0]
        return v + quad(f, hi, np.inf, limit=500, epsabs=0, epsrel=1e-12)[0]

    # one-sided integral of a two-sided spectrum: factor 2 / (2 pi)
    var_thd = integral(lambda w: abs(resp(w)[0]) ** 2 * spec(w)) / math.pi
    var_acc = integral(lambda w: abs(resp(w)[1]) ** 2 * spec(w)) / math.pi
    return ce * var_thd, math.sqrt(var_acc)


# -- export -------------------------------------------------------------------

def write_pareto_csv(res: ParetoResult, p: SuspensionParams, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["Rp_m", "r_m", "ce", "eta", "mu_r", "xi_e", "avg_power_w", "rms_accel_ms2", "front"])
        for d, m, f in zip(res.points, res.metrics, res.on_front):
            vals = (d.Rp, d.r, d.ce, d.eta(), d.mu_r(p), d.xi_e(p), m.avg_power, m.rms_accel)
            wr.writerow([repr(float(v)) for v in vals] + [int(bool(f))])
