"""Figures rendered from the CSV artifacts of an experiment directory."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import read_rows  # noqa: E402


def _col(rows, key, cast=float):
    return np.array([cast(r[key]) for r in rows])


def _save(fig, directory, name, fmt):
    path = os.path.join(directory, f"{name}.{fmt}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_pareto(directory, fmt):
    rows = read_rows(os.path.join(directory, "pareto.csv"))
    fig, ax = plt.subplots(figsize=(6, 4.5))
    rms, pw, front = _col(rows, "rms_accel_ms2"), _col(rows, "avg_power_w"), _col(rows, "front", int)
    ax.scatter(rms, pw, s=8, c="0.7", label="IPVA grid")
    o = np.argsort(rms[front == 1])
    ax.plot(rms[front == 1][o], pw[front == 1][o], "o-", ms=4, label="IPVA front")
    bpath = os.path.join(directory, "benchmark.csv")
    if os.path.exists(bpath):
        b = read_rows(bpath)
        ax.plot(_col(b, "rms_accel_ms2"), _col(b, "avg_power_w"), "s--", ms=4, label="linear (simulated)")
        ax.plot(_col(b, "closed_form_rms_ms2"), _col(b, "closed_form_power_w"), "k:", label="linear (closed form)")
    ax.set_xlabel("RMS sprung acceleration (m/s$^2$)")
    ax.set_ylabel("average power (W)")
    ax.legend()
    return [_save(fig, directory, "pareto", fmt)]


def plot_stationarity(directory, fmt):
    rows = read_rows(os.path.join(directory, "stationarity_trace.csv"))
    t, cm = _col(rows, "time_s"), _col(rows, "cumulative_mean_power_w")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t[::20], cm[::20], "x", ms=4)
    ax.axhline(cm[-1], color="r", ls="--")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("running mean power (W)")
    return [_save(fig, directory, "stationarity", fmt)]


def plot_psd(directory, fmt):
    rows = read_rows(os.path.join(directory, "psd.csv"))
    om = _col(rows, "omega_over_omega0")
    sel = (om > 0.2) & (om < 8)
    out = []
    for q, label in (("power", "power density (W s/rad)"), ("accel", "acceleration PSD")):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.semilogy(om[sel], _col(rows, f"bench_{q}")[sel], "-", label="linear")
        ax.semilogy(om[sel], _col(rows, f"ipva_{q}")[sel], "--", label="IPVA")
        ax.set_xlabel(r"$\omega/\omega_0$")
        ax.set_ylabel(label)
        ax.legend()
        out.append(_save(fig, directory, f"psd_{q}", fmt))
    return out


def plot_sl(directory, fmt):
    rows = read_rows(os.path.join(directory, "sl_trace.csv"))
    t = _col(rows, "time_s")
    n = min(len(t), 1000)
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, style, label in (("x3_nonlinear", "k-", "NL"), ("x3_sl", "b--", "SL"), ("x3_dl", "r:", "DL")):
        ax.plot(t[:n], _col(rows, key)[:n], style, label=label)
    ax.set_xlabel("time (s)")
    ax.set_ylabel(r"$x_3 = \phi$ (rad)")
    ax.legend()
    return [_save(fig, directory, "sl_vs_dl", fmt)]


def _boxplot(directory, stem, fmt):
    rows = read_rows(os.path.join(directory, f"{stem}.csv"))
    groups = []
    for r in rows:
        g = (r["controller"], r["preview"])
        if g not in groups:
            groups.append(g)
    out = []
    for key, label in (("avg_power_w", "average power (W)"), ("rms_accel_ms2", "RMS acceleration (m/s$^2$)")):
        data = [[float(r[key]) for r in rows if (r["controller"], r["preview"]) == g] for g in groups]
        fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(groups)), 4))
        ax.boxplot(data)
        ax.set_xticks(range(1, len(groups) + 1))
        ax.set_xticklabels([f"{c}\n{p}" for c, p in groups], fontsize=7)
        ax.set_ylabel(label)
        out.append(_save(fig, directory, f"{stem}_{key.split('_')[1]}", fmt))
    return out


def plot_mixed(directory, fmt):
    rows = read_rows(os.path.join(directory, "mpc_mixed_summary.csv"))
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ref = [r for r in rows if r["controller"] == "passive"][0]
    p0, s0 = float(ref["mean_power_w"]), float(ref["mean_rms_accel_ms2"])
    for c, m in (("nmpc", "o-"), ("slmpc", "s-")):
        sel = [r for r in rows if r["controller"] == c]
        if sel:
            ax.plot(_col(sel, "mean_rms_accel_ms2"), _col(sel, "mean_power_w"), m, ms=4, label=c.upper())
    ax.plot([s0], [p0], "k*", ms=12, label="passive")
    lo, hi = ax.get_xlim()
    ax.fill_between([lo, s0], p0, ax.get_ylim()[1], color="g", alpha=0.15)
    ax.set_xlim(lo, hi)
    ax.set_xlabel("mean RMS acceleration (m/s$^2$)")
    ax.set_ylabel("mean power (W)")
    ax.legend()
    return [_save(fig, directory, "mpc_mixed", fmt)]


def plot_observer(directory, fmt):
    rows = read_rows(os.path.join(directory, "observer_trace.csv"))
    t = _col(rows, "time_s")
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, _col(rows, "w_true_m"), "k-", label="road")
    ax.plot(t, _col(rows, "w_hat_m"), "r--", label="estimate")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("road displacement (m)")
    ax.legend()
    out = [_save(fig, directory, "observer", fmt)]
    epath = os.path.join(directory, "observer_eps.csv")
    if os.path.exists(epath):
        e = read_rows(epath)
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.loglog(_col(e, "eps3"), _col(e, "sigma_rms_error"), "o-")
        ax.set_xlabel(r"$\epsilon_3$")
        ax.set_ylabel(r"RMS error of $\hat\sigma$")
        out.append(_save(fig, directory, "observer_eps", fmt))
    return out


def plot_timing(directory, fmt):
    rows = read_rows(os.path.join(directory, "timing.csv"))
    fig, ax = plt.subplots(figsize=(5, 4))
    names = ["nmpc", "slmpc"]
    means = [np.mean([float(r["wall_ms_per_1000_steps"]) for r in rows if r["controller"] == n]) for n in names]
    ax.bar([n.upper() for n in names], np.array(means) / 1000.0)
    ax.set_ylabel("wall time per 1000 steps (s)")
    return [_save(fig, directory, "timing", fmt)]


PLOTTERS = (
    ("pareto.csv", plot_pareto),
    ("stationarity_trace.csv", plot_stationarity),
    ("psd.csv", plot_psd),
    ("sl_trace.csv", plot_sl),
    ("mpc_energy.csv", lambda d, f: _boxplot(d, "mpc_energy", f)),
    ("mpc_comfort.csv", lambda d, f: _boxplot(d, "mpc_comfort", f)),
    ("mpc_mixed_summary.csv", plot_mixed),
    ("observer_trace.csv", plot_observer),
    ("timing.csv", plot_timing),
)


def render_directory(directory, fmt="png"):
    """Render every figure whose source CSV exists in ``directory``; returns the paths."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"no such directory: {directory}")
    out = []
    for name, fn in PLOTTERS:
        if os.path.exists(os.path.join(directory, name)):
            out.extend(fn(directory, fmt))
    return out
