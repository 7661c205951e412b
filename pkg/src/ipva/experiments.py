"""Experiment runners: each turns an ExperimentSpec into CSV artifacts plus a manifest.

Result CSVs depend only on the spec, so reruns are byte-identical.
Wall-clock measurements go to ``*_timing.csv`` files and the manifest,
which are the only outputs allowed to differ between runs.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
import csv
import hashlib
import os
import platform
import time

import numpy as np

from . import __version__, design, mpc, observer, sim, slin
from .config import ExperimentSpec, parse_bool
from .errors import ConfigError
from .road import PERFECT, PreviewMode, RoadModel, generate

MANIFEST = "manifest.txt"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _map(fn, jobs, n_jobs):
    """Ordered map, in-process or over a process pool."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(n_jobs) as ex:
        return list(ex.map(fn, jobs))


def _road(spec: ExperimentSpec):
    return RoadModel(Gr=spec.get("Gr", RoadModel.Gr), V=spec.get("V", RoadModel.V),
                     wc=spec.get("wc", RoadModel.wc), Ts=spec.get("Ts", RoadModel.Ts))


def _point(spec: ExperimentSpec):
    p = spec.params
    return design.DesignPoint(spec.get("Rp", p.Rp), spec.get("r", p.r), spec.get("ce", p.ce_max))


# -- passive experiments -----------------------------------------------------------

def _simulate_one(job):
    p, ce, road, seed, duration, linear, skip = job
    sig = generate(road.with_seed(seed), duration)
    traj = (sim.simulate_benchmark if linear else sim.simulate_ipva)(p, ce, sig)
    return traj, sim.metrics(traj, skip)


def run_simulate(spec, out, n_jobs):
    model = spec.get("model", "ipva", str)
    if model not in ("ipva", "benchmark"):
        raise ConfigError(f"expected ipva or benchmark, got {model!r}", "model")
    d = _point(spec)
    p = spec.params.with_design(d.Rp, d.r)
    duration = spec.get("duration", 200.0)
    skip = spec.get("skip", 0, int)
    jobs = [(p, d.ce, _road(spec), s, duration, model == "benchmark", skip) for s in spec.seeds]
    res = _map(_simulate_one, jobs, n_jobs)
    files = []
    if spec.get("write_trajectories", 1, int):
        for s, (traj, _) in zip(spec.seeds, res):
            name = f"trajectory_seed{s}.csv"
            sim.write_trajectory_csv(traj, os.path.join(out, name))
            files.append(name)
    write_rows(os.path.join(out, "metrics.csv"), ["seed", "avg_power_w", "rms_accel_ms2"],
               [(s, m.avg_power, m.rms_accel) for s, (_, m) in zip(spec.seeds, res)])
    return files + ["metrics.csv"]


def run_pareto(spec, out, n_jobs):
    p = spec.params
    road = _road(spec)
    duration = spec.get("duration", 200.0)
    skip = spec.get("skip", 0, int)
    grid = design.default_grid(p, spec.get("n_eta", 8, int), spec.get("n_mu", 8, int),
                               spec.get("n_ce", 8, int))
    res = design.grid_search(p, grid, spec.seeds, duration, road, skip, n_jobs)
    design.write_pareto_csv(res, p, os.path.join(out, "pareto.csv"))
    bench = design.linear_benchmark_optimum(p, None, spec.seeds, duration, road, skip, n_jobs)
    rows = []
    for d, m, f in zip(bench.points, bench.metrics, bench.on_front):
        cf = design.closed_form_linear(p, d.ce, road)
        rows.append((d.ce, p.xi_e(d.ce), m.avg_power, m.rms_accel, cf[0], cf[1], f))
    write_rows(os.path.join(out, "benchmark.csv"),
               ["ce", "xi_e", "avg_power_w", "rms_accel_ms2", "closed_form_power_w",
                "closed_form_rms_ms2", "front"], rows)
    return ["pareto.csv", "benchmark.csv"]


def _stationarity_one(job):
    p, ce, road, seed, duration, t_check, band = job
    sig = generate(road.with_seed(seed), duration)
    traj = sim.simulate_ipva(p, ce, sig)
    cm = sim.cumulative_mean(traj.power)
    st = sim.stationarity(cm, road.Ts, t_check, band)
    step = max(1, int(round(1.0 / road.Ts)))
    return cm[-1], st, cm[step - 1::step]


def run_stationarity(spec, out, n_jobs):
    d = _point(spec)
    p = spec.params.with_design(d.Rp, d.r)
    road = _road(spec)
    duration = spec.get("duration", 2000.0)
    t_check = spec.get("t_check", 1200.0)
    band = spec.get("band", 0.002)
    jobs = [(p, d.ce, road, s, duration, t_check, band) for s in spec.seeds]
    res = _map(_stationarity_one, jobs, n_jobs)
    write_rows(os.path.join(out, "stationarity.csv"),
               ["seed", "mean_power_w", "max_rel_deviation", "stationary"],
               [(s, r[0], r[1].deviation, r[1].stationary) for s, r in zip(spec.seeds, res)])
    trace = res[0][2]
    write_rows(os.path.join(out, "stationarity_trace.csv"), ["time_s", "cumulative_mean_power_w"],
               [(k + 1.0, v) for k, v in enumerate(trace)])
    return ["stationarity.csv", "stationarity_trace.csv"]


def _psd_one(job):
    p, ce, road, seed, duration, nperseg = job
    sig = generate(road.with_seed(seed), duration)
    out = []
    for traj in (sim.simulate_ipva(p, ce, sig), sim.simulate_benchmark(p, ce, sig)):
        om, s_pow = sim.psd(np.sqrt(ce) * sim.generator_velocity(traj), road.Ts, nperseg, p.omega0)
        _, s_acc = sim.psd(traj.accelerations, road.Ts, nperseg, p.omega0)
        out.append((s_pow, s_acc))
    return om, out


def psd_comparison(p, ce, road, seeds, duration=2000.0, nperseg=sim.PSD_SEGMENT, n_jobs=1):
    """Seed-averaged power and acceleration densities of the IPVA and the benchmark.

    The power density is ce times the density of the generator speed, the
    spectral decomposition of the average harvested power.
    Returns (omega / omega0, {name: density}).
    """
    res = _map(_psd_one, [(p, ce, road, s, duration, nperseg) for s in seeds], n_jobs)
    om = res[0][0]
    names = ("ipva_power", "ipva_accel", "bench_power", "bench_accel")
    acc = {n: np.zeros_like(om) for n in names}
    for _, ((ip, ia), (bp, ba)) in res:
        for n, v in zip(names, (ip, ia, bp, ba)):
            acc[n] += v / len(res)
    return om, acc


def superharmonic_summary(om, dens, first=0.85, band=(3.0, 5.0), second=5.18, halfwidth=0.1,
                          prominence_db=3.0):
    lo, hi = band[0] * first, band[1] * first
    out = {}
    for q in ("power", "accel"):
        out[f"ipva_{q}_peaks"] = sim.peaks_in_band(om, dens[f"ipva_{q}"], (lo, hi), prominence_db)
        out[f"bench_{q}_peaks"] = sim.peaks_in_band(om, dens[f"bench_{q}"], (lo, hi), prominence_db)
    bench2 = sim.peaks_in_band(om, dens["bench_accel"], (second - 0.5, second + 0.5), prominence_db)
    centre = float(bench2[np.argmin(np.abs(bench2 - second))]) if len(bench2) else second
    out["second_mode"] = centre
    out["suppression_db"] = (sim.band_level_db(om, dens["bench_accel"], centre, halfwidth)
                             - sim.band_level_db(om, dens["ipva_accel"], centre, halfwidth))
    return out


def run_psd(spec, out, n_jobs):
    d = _point(spec)
    p = spec.params.with_design(d.Rp, d.r)
    om, dens = psd_comparison(p, d.ce, _road(spec), spec.seeds, spec.get("duration", 2000.0),
                              spec.get("nperseg", sim.PSD_SEGMENT, int), n_jobs)
    names = ("ipva_power", "bench_power", "ipva_accel", "bench_accel")
    write_rows(os.path.join(out, "psd.csv"), ["omega_over_omega0", *names],
               [(om[k], *(dens[n][k] for n in names)) for k in range(len(om))])
    s = superharmonic_summary(om, dens)
    rows = [(k, ";".join(f"{x:.4f}" for x in v) if isinstance(v, np.ndarray) else v) for k, v in s.items()]
    write_rows(os.path.join(out, "psd_summary.csv"), ["quantity", "value"], rows)
    return ["psd.csv", "psd_summary.csv"]


# -- linearization -----------------------------------------------------------------------

def _sl_model(spec):
    d = _point(spec)
    p = spec.params.with_design(d.Rp, d.r)
    road = _road(spec).with_seed(spec.get("sl_seed", 3, int))
    return p, slin.build_model(p, road, spec.get("sl_samples", 100_000, int),
                               spec.get("sl_warmup", 1200.0))


def _sl_accuracy_one(job):
    p, ss, ce, road, seed, duration, window, warmup = job
    return slin.compare_linearizations(p, ss, ce, road.with_seed(seed), duration, window, warmup)


def run_sl_accuracy(spec, out, n_jobs):
    p, (sl, ss) = _sl_model(spec)
    ce = _point(spec).ce
    slin.save_model(os.path.join(out, "model.json"), sl, ss,
                    {"stabilizable": bool(ss.stabilizable), "repaired": ss.repair is not None})
    slin.write_matrices_csv(os.path.join(out, "matrices.csv"), sl)
    jobs = [(p, ss, ce, _road(spec), s, spec.get("duration", 60.0), spec.get("window", 1.0),
             spec.get("warmup", 300.0)) for s in spec.seeds]
    res = _map(_sl_accuracy_one, jobs, n_jobs)
    write_rows(os.path.join(out, "sl_accuracy.csv"), ["seed", "rms_error_sl", "rms_error_dl", "sl_better"],
               [(s, r[0], r[1], r[0] < r[1]) for s, r in zip(spec.seeds, res)])
    t, x_nl, x_sl, x_dl = res[0][2]
    write_rows(os.path.join(out, "sl_trace.csv"), ["time_s", "x3_nonlinear", "x3_sl", "x3_dl"],
               zip(t, x_nl, x_sl, x_dl))
    return ["model.json", "matrices.csv", "sl_accuracy.csv", "sl_trace.csv"]


# -- MPC -------------------------------------------------------------------------------

def make_controller(name, p, cfg: mpc.MpcConfig, model=None):
    if name == "passive":
        return mpc.PassiveController(cfg.ce_max)
    if name == "nmpc":
        return mpc.NmpcController(p, cfg)
    if name == "slmpc":
        return mpc.SlMpcController(p, model, cfg)
    raise ConfigError(f"unknown controller {name!r}", "controllers")


def _mpc_one(job):
    p, model, cfg, name, mode, road, seed, duration, hgo = job
    ctrl = make_controller(name, p, cfg, model)
    hgo = hgo if mode.kind == "lrde" else None
    r = mpc.run_seed(p, ctrl, seed, duration, mode, cfg.N, road, observer=hgo)
    return (r.metrics.avg_power, r.metrics.rms_accel, r.iterations, getattr(ctrl, "fallbacks", 0),
            r.wall_ms_per_1000, r.solve_ms_per_1000)


def _warm_up(p, cfg, model):
    """Compile the kernels before anything is timed."""
    road = RoadModel(seed=0)
    for name in ("nmpc", "slmpc"):
        mpc.run_seed(p, make_controller(name, p, cfg, model), 0, 0.05, PERFECT, cfg.N, road)


def _mpc_cfg(spec, alpha1, alpha2):
    return mpc.MpcConfig(N=spec.get("N", 15, int), Ts=_road(spec).Ts,
                         alpha1=spec.get("alpha1", alpha1), alpha2=spec.get("alpha2", alpha2),
                         ce_max=spec.params.ce_max, max_iter=spec.get("max_iter", 60, int),
                         tol=spec.get("tol", 1e-6), sl_iters=spec.get("sl_iters", 5, int),
                         cold_guard=spec.get("cold_guard", True, parse_bool))


def _hgo(spec, Ts):
    e = spec.get("eps", 0.01)
    return observer.HgoConfig(eps=(spec.get("eps1", e), spec.get("eps2", e), spec.get("eps3", e)), Ts=Ts)


def mpc_matrix(spec, out, n_jobs, alpha1, alpha2, stem):
    p, (sl, model) = _sl_model(spec)
    cfg = _mpc_cfg(spec, alpha1, alpha2)
    road = _road(spec)
    duration = spec.get("duration", 20.0)
    modes = [PreviewMode.parse(m) for m in spec.get_list("previews", ["perfect", "lrde", "snr10", "snr15", "snr20"])]
    ctrls = spec.get_list("controllers", ["passive", "nmpc", "slmpc"])
    hgo = _hgo(spec, road.Ts)
    _warm_up(p, cfg, model)
    cases = [("passive", PERFECT)] if "passive" in ctrls else []
    cases += [(c, m) for c in ctrls if c != "passive" for m in modes]
    jobs = [(p, model, cfg, c, m, road, s, duration, hgo) for c, m in cases for s in spec.seeds]
    res = _map(_mpc_one, jobs, n_jobs)
    rows, trows = [], []
    for (_, _, _, c, m, _, s, _, _), r in zip(jobs, res):
        label = "none" if c == "passive" else m.label
        rows.append((c, label, s, r[0], r[1], r[2], r[3]))
        trows.append((c, label, s, r[4], r[5]))
    write_rows(os.path.join(out, f"{stem}.csv"),
               ["controller", "preview", "seed", "avg_power_w", "rms_accel_ms2", "solver_iterations",
                "fallbacks"], rows)
    write_rows(os.path.join(out, f"{stem}_timing.csv"),
               ["controller", "preview", "seed", "wall_ms_per_1000_steps", "solve_ms_per_1000_steps"], trows)
    ledger = spec.settings.get("ledger")
    if ledger:
        mpc.append_ledger(ledger, [
            {"experiment": spec.experiment, "controller": r[0], "preview": r[1], "seed": r[2],
             "avg_power_w": r[3], "rms_accel_ms2": r[4], "wall_ms_per_1000_steps": t[3],
             "solver_iterations": r[5], "fallbacks": r[6]} for r, t in zip(rows, trows)])
    summary = []
    for c, m in cases:
        label = "none" if c == "passive" else m.label
        sel = [r for r in rows if r[0] == c and r[1] == label]
        summary.append((c, label, len(sel), np.mean([r[3] for r in sel]), np.mean([r[4] for r in sel])))
    write_rows(os.path.join(out, f"{stem}_summary.csv"),
               ["controller", "preview", "runs", "mean_power_w", "mean_rms_accel_ms2"], summary)
    return [f"{stem}.csv", f"{stem}_timing.csv", f"{stem}_summary.csv"]


def run_mpc_energy(spec, out, n_jobs):
    return mpc_matrix(spec, out, n_jobs, 0.0, 1.0, "mpc_energy")


def run_mpc_comfort(spec, out, n_jobs):
    return mpc_matrix(spec, out, n_jobs, 1.0, 0.0, "mpc_comfort")


def run_mpc_mixed(spec, out, n_jobs):
    p, (sl, model) = _sl_model(spec)
    road = _road(spec)
    duration = spec.get("duration", 20.0)
    grid = mpc.alpha2_grid(spec.get("n_alpha2", 10, int), spec.get("alpha2_min", 0.01),
                           spec.get("alpha2_max", 0.1))
    ctrls = [c for c in spec.get_list("controllers", ["nmpc", "slmpc"]) if c != "passive"]
    base = _mpc_cfg(spec, 1.0, 0.0)
    _warm_up(p, base, model)
    jobs = [(p, model, base, "passive", PERFECT, road, s, duration, None) for s in spec.seeds]
    for a2 in grid:
        cfg = replace(base, alpha2=float(a2))
        jobs += [(p, model, cfg, c, PERFECT, road, s, duration, None) for c in ctrls for s in spec.seeds]
    res = _map(_mpc_one, jobs, n_jobs)
    rows = [(j[3], j[2].alpha2 if j[3] != "passive" else 0.0, j[6], r[0], r[1], r[2])
            for j, r in zip(jobs, res)]
    write_rows(os.path.join(out, "mpc_mixed.csv"),
               ["controller", "alpha2", "seed", "avg_power_w", "rms_accel_ms2", "solver_iterations"], rows)
    ref = [r for r in rows if r[0] == "passive"]
    p_ref, s_ref = np.mean([r[3] for r in ref]), np.mean([r[4] for r in ref])
    summary = [("passive", 0.0, p_ref, s_ref, False)]
    for c in ctrls:
        for a2 in grid:
            sel = [r for r in rows if r[0] == c and r[1] == float(a2)]
            pw, rm = np.mean([r[3] for r in sel]), np.mean([r[4] for r in sel])
            summary.append((c, float(a2), pw, rm, bool(pw > p_ref and rm < s_ref)))
    write_rows(os.path.join(out, "mpc_mixed_summary.csv"),
               ["controller", "alpha2", "mean_power_w", "mean_rms_accel_ms2", "dominates_passive"], summary)
    return ["mpc_mixed.csv", "mpc_mixed_summary.csv"]


def run_timing(spec, out, n_jobs):
    p, (sl, model) = _sl_model(spec)
    cfg = _mpc_cfg(spec, 0.0, 1.0)
    road = _road(spec)
    duration = spec.get("duration", 10.0)
    _warm_up(p, cfg, model)
    # timing runs stay in-process so they do not compete for the core
    rows = []
    for s in spec.seeds:
        for c in ("nmpc", "slmpc"):
            r = _mpc_one((p, model, cfg, c, PERFECT, road, s, duration, None))
            rows.append((s, c, r[4], r[5], r[2]))
    write_rows(os.path.join(out, "timing.csv"),
               ["seed", "controller", "wall_ms_per_1000_steps", "solve_ms_per_1000_steps",
                "solver_iterations"], rows)
    ratios = [b[2] / a[2] for a, b in zip(rows[::2], rows[1::2])]
    write_rows(os.path.join(out, "timing_summary.csv"), ["seed", "slmpc_over_nmpc"],
               zip(spec.seeds, ratios))
    return ["timing.csv", "timing_summary.csv"]


# -- observer ---------------------------------------------------------------------

def run_observer(spec, out, n_jobs):
    d = _point(spec)
    p = spec.params.with_design(d.Rp, d.r)
    road = _road(spec)
    cfg = _hgo(spec, road.Ts)
    duration = spec.get("duration", 60.0)
    skip = int(round(spec.get("transient", 1.0) / road.Ts))
    rows, files = [], []
    for i, s in enumerate(spec.seeds):
        sig = generate(road.with_seed(s), duration)
        traj = sim.simulate_ipva(p, d.ce, sig)
        X = np.vstack([traj.states, traj.final_state])
        w_hat, _ = observer.track_road(p, X, traj.controls, cfg, sig.samples[0])
        w_true = np.append(sig.samples, sig.samples[-1])
        rows.append((s, observer.normalized_rms_error(w_hat, w_true, skip)))
        if i == 0:
            write_rows(os.path.join(out, "observer_trace.csv"), ["time_s", "w_true_m", "w_hat_m"],
                       [(k * road.Ts, w_true[k], w_hat[k]) for k in range(len(w_hat))])
            files.append("observer_trace.csv")
    write_rows(os.path.join(out, "observer.csv"), ["seed", "normalized_rms_error"], rows)
    eps3 = spec.get_list("eps3_sweep", ["0.08", "0.04", "0.02", "0.01"], float)
    errs = observer.eps_scaling(p, eps3, cfg, d.ce, spec.get("smooth_amplitude", 0.02),
                                spec.get("smooth_omega", 1.0), spec.get("smooth_duration", 30.0),
                                spec.get("smooth_skip", 10.0), spec.get("substeps", 1000, int))
    write_rows(os.path.join(out, "observer_eps.csv"), ["eps3", "sigma_rms_error"], zip(eps3, errs))
    return files + ["observer.csv", "observer_eps.csv"]


RUNNERS = {
    "simulate": run_simulate,
    "pareto": run_pareto,
    "stationarity": run_stationarity,
    "psd": run_psd,
    "sl-accuracy": run_sl_accuracy,
    "mpc-energy": run_mpc_energy,
    "mpc-comfort": run_mpc_comfort,
    "mpc-mixed": run_mpc_mixed,
    "observer": run_observer,
    "timing": run_timing,
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run(spec: ExperimentSpec, n_jobs=1):
    """Execute ``spec`` and write its artifacts and manifest; returns the output directory."""
    out = spec.out
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    files = RUNNERS[spec.experiment](spec, out, n_jobs)
    wall = time.perf_counter() - t0
    lines = [spec.canonical().rstrip("\n")]
    lines += [
        f"manifest.config_sha256 = {spec.digest()}",
        f"manifest.package_version = {__version__}",
        f"manifest.python = {platform.python_version()}",
        f"manifest.numpy = {np.__version__}",
        f"manifest.wall_seconds = {wall:.3f}",
        f"manifest.n_jobs = {n_jobs}",
    ]
    # wall-clock files are listed apart so that the file.* hashes of two runs can be compared
    for f in files:
        kind = "volatile" if "timing" in f else "file"
        lines.append(f"manifest.{kind}.{f} = {_sha256(os.path.join(out, f))}")
    with open(os.path.join(out, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return out
