import numpy as np
import pytest

from ipva import mpc, road, sim
from ipva.errors import ConfigError, IndexOutOfRange
from ipva.road import LRDE, PERFECT, Noisy, PreviewMode, RoadModel, generate


def test_zero_roughness_gives_flat_road():
    sig = generate(RoadModel(Gr=0.0), 5.0)
    assert len(sig) == 500 and not np.any(sig.samples)


def test_same_seed_is_bit_identical():
    a = generate(RoadModel(seed=9), 50.0).samples
    b = generate(RoadModel(seed=9), 50.0).samples
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate(RoadModel(seed=10), 50.0).samples)


def test_stationary_variance():
    # a faster filter keeps the correlation time short relative to the record
    m = RoadModel(wc=0.5)
    v = np.mean([np.var(generate(m.with_seed(s), 4000.0).samples) for s in range(4)])
    assert v == pytest.approx(m.stationary_variance, rel=0.10)


def test_welch_density_matches_filter_spectrum():
    m = RoadModel(seed=1)
    om, dens = sim.psd(generate(m, 2000.0).samples, m.Ts)
    # one-sided density per rad/s is twice the two-sided spectrum over 2 pi
    target = 2 * m.spectrum(om) / (2 * np.pi)
    edges = np.geomspace(0.1, 50.0, 25)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (om >= lo) & (om < hi)
        gap = 10 * np.log10(np.mean(dens[sel]) / np.mean(target[sel]))
        assert abs(gap) < 3.0, (lo, hi, gap)


def test_invalid_models_raise():
    for kw in ({"Gr": -1.0}, {"V": 0.0}, {"wc": -0.1}, {"Ts": 0.0}):
        with pytest.raises(ConfigError):
            RoadModel(**kw)
    with pytest.raises(ConfigError):
        generate(RoadModel(), 0.0)


def test_preview_modes():
    sig = generate(RoadModel(seed=2), 10.0)
    w = road.preview(sig, 100, 15, PERFECT)
    assert w.tobytes() == sig.samples[100:115].tobytes()
    np.testing.assert_array_equal(road.preview(sig, 100, 15, LRDE, w_hat=0.003), np.full(15, 0.003))
    with pytest.raises(IndexOutOfRange):
        road.preview(sig, len(sig) - 5, 15, PERFECT)


@pytest.mark.parametrize("snr", [10, 15, 20])
def test_noisy_preview_hits_requested_snr(snr):
    sig = generate(RoadModel(seed=4), 200.0)
    noisy = road.noisy_copy(sig, snr)
    noise = noisy - sig.samples
    measured = 10 * np.log10(np.mean(sig.samples**2) / np.mean(noise**2))
    assert measured == pytest.approx(snr, abs=0.5)


def test_noisy_window_is_a_slice_of_one_fixed_copy():
    sig = generate(RoadModel(seed=4), 20.0)
    pv = road.Previewer(sig, Noisy(10))
    np.testing.assert_array_equal(pv(10, 15)[5:], pv(15, 15)[:10])


def test_preview_mode_parsing():
    assert PreviewMode.parse("SNR15") == Noisy(15)
    assert PreviewMode.parse("noisy:20").label == "snr20"
    assert PreviewMode.parse("lrde") == LRDE
    for bad in ("sn", "foggy", "snrx"):
        with pytest.raises(ConfigError):
            PreviewMode.parse(bad)
    with pytest.raises(ConfigError):
        PreviewMode("noisy", -3.0)


def test_noise_never_reaches_the_plant(p):
    sig = generate(RoadModel(seed=5), 1.0 + 0.15)
    cfg = mpc.MpcConfig(alpha1=0.0, alpha2=1.0, max_iter=10)
    runs = [mpc.closed_loop(p, mpc.NmpcController(p, cfg), sig, m, duration=1.0)
            for m in (PERFECT, Noisy(10))]
    for r in runs:
        np.testing.assert_array_equal(r.trajectory.disturbances, sig.samples[:100])
    assert not np.array_equal(runs[0].trajectory.controls, runs[1].trajectory.controls)


def test_csv_round_trip(tmp_path):
    sig = generate(RoadModel(seed=6), 3.0)
    path = tmp_path / "road.csv"
    road.write_csv(sig, path)
    back = road.read_csv(path)
    np.testing.assert_array_equal(back.samples, sig.samples)
    assert back.Ts == pytest.approx(sig.Ts)
