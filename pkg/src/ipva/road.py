"""Class-C stochastic road profiles and controller preview windows.

The road displacement is white noise of intensity ``2*pi*Gr*V`` passed
through the first-order filter ``xr' = -wc*xr + n``. Its two-sided
spectrum is ``2*pi*Gr*V / (w**2 + wc**2)``.
"""

from dataclasses import dataclass, field
import csv
import math

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, IndexOutOfRange

# ISO 8608 class C: Gd(n0) = 256e-6 m^3 at n0 = 0.1 cycle/m; Gr = Gd(n0) * n0**2
CLASS_C_GR = 256e-6 * 0.1**2


@dataclass(frozen=True)
class RoadModel:
    Gr: float = CLASS_C_GR
    V: float = 20.0
    wc: float = 0.01
    Ts: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.Gr >= 0:
            raise ConfigError("must be >= 0", "Gr")
        if not self.V > 0:
            raise ConfigError("must be > 0", "V")
        if not self.wc >= 0:
            raise ConfigError("must be >= 0", "wc")
        if not self.Ts > 0:
            raise ConfigError("must be > 0", "Ts")

    @property
    def intensity(self):
        """Intensity of the driving white noise (m^2/s)."""
        return 2.0 * math.pi * self.Gr * self.V

    @property
    def stationary_variance(self):
        if self.wc == 0:
            return math.inf
        return math.pi * self.Gr * self.V / self.wc

    def spectrum(self, omega):
        """Two-sided displacement PSD at ``omega`` (rad/s)."""
        omega = np.asarray(omega, dtype=float)
        return self.intensity / (omega**2 + self.wc**2)

    def with_seed(self, seed):
        return RoadModel(self.Gr, self.V, self.wc, self.Ts, int(seed))


@dataclass(frozen=True)
class RoadSignal:
    samples: np.ndarray
    model: RoadModel = field(default_factory=RoadModel)

    @property
    def Ts(self):
        return self.model.Ts

    @property
    def times(self):
        return np.arange(len(self.samples)) * self.model.Ts

    def __len__(self):
        return len(self.samples)


def generate(model: RoadModel, duration) -> RoadSignal:
    """Sample one road realization of ``duration`` seconds.

    Uses the exact discrete update of the filter over one sample period,
    starting from its stationary distribution (from zero when wc = 0).
    """
    if duration <= 0:
        raise ConfigError("must be positive", "duration")
    n = int(round(duration / model.Ts))
    if model.Gr == 0:
        return RoadSignal(np.zeros(n), model)
    rng = np.random.default_rng(model.seed)
    q = model.intensity
    if model.wc > 0:
        a = math.exp(-model.wc * model.Ts)
        step_var = q * (1.0 - a * a) / (2.0 * model.wc)
        x0 = rng.standard_normal() * math.sqrt(q / (2.0 * model.wc))
    else:
        a = 1.0
        step_var = q * model.Ts
        x0 = 0.0
    e = rng.standard_normal(n) * math.sqrt(step_var)
    e[0] = x0
    return RoadSignal(lfilter([1.0], [1.0, -a], e), model)


# -- preview ------------------------------------------------------------------

@dataclass(frozen=True)
class PreviewMode:
    """What the controller sees of the future road.

    kind is "perfect", "lrde" (hold the latest disturbance estimate) or
    "noisy" (true samples corrupted at ``snr_db``).
    """

    kind: str = "perfect"
    snr_db: float = None

    def __post_init__(self):
        if self.kind not in ("perfect", "lrde", "noisy"):
            raise ConfigError(f"unknown preview kind {self.kind!r}", "preview")
        if self.kind == "noisy" and not (self.snr_db is not None and self.snr_db > 0):
            raise ConfigError("noisy preview needs a positive snr_db", "snr_db")

    @classmethod
    def parse(cls, text):
        """Parse "perfect", "lrde", "snr10", "noisy:15" ..."""
        t = str(text).strip().lower()
        if t in ("perfect", "lrde"):
            return cls(t)
        for prefix in ("snr", "noisy:", "noisy"):
            if t.startswith(prefix):
                try:
                    return cls("noisy", float(t[len(prefix):]))
                except ValueError:
                    break
        raise ConfigError(f"cannot parse preview mode {text!r}", "preview")

    @property
    def label(self):
        if self.kind == "noisy":
            return f"snr{self.snr_db:g}"
        return self.kind


PERFECT = PreviewMode("perfect")
LRDE = PreviewMode("lrde")


def Noisy(snr_db):
    return PreviewMode("noisy", float(snr_db))


def noisy_copy(signal: RoadSignal, snr_db, seed=None) -> np.ndarray:
    """Samples plus white Gaussian noise at the requested SNR.

    Noise power is set from the mean-square of the whole realization,
    so the corruption level is the same at every step of a run.
    """
    x = signal.samples
    p_sig = float(np.mean(x**2))
    sigma = math.sqrt(p_sig / 10.0 ** (snr_db / 10.0))
    if seed is None:
        seed = signal.model.seed
    rng = np.random.default_rng([int(seed), 7919, int(round(snr_db * 1000))])
    return x + sigma * rng.standard_normal(len(x))


class Previewer:
    """Serves preview windows for one run; holds the fixed noisy copy."""

    def __init__(self, signal: RoadSignal, mode: PreviewMode = PERFECT, seed=None):
        self.signal = signal
        self.mode = mode
        if mode.kind == "noisy":
            self._source = noisy_copy(signal, mode.snr_db, seed)
        else:
            self._source = signal.samples

    def __call__(self, k, N, w_hat=0.0):
        return preview(self.signal, k, N, self.mode, w_hat, source=self._source)


def preview(signal: RoadSignal, k, N, mode: PreviewMode = PERFECT, w_hat=0.0, source=None):
    """Road values the controller assumes for steps k .. k+N-1."""
    if mode.kind == "lrde":
        return np.full(N, float(w_hat))
    if k < 0 or k + N > len(signal.samples):
        raise IndexOutOfRange(f"preview window [{k}, {k + N}) outside 0..{len(signal.samples)}")
    if source is None:
        source = signal.samples if mode.kind == "perfect" else noisy_copy(signal, mode.snr_db)
    return np.array(source[k:k + N])


# -- CSV ----------------------------------------------------------------------

def write_csv(signal: RoadSignal, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["time_s", "displacement_m"])
        for t, x in zip(signal.times, signal.samples):
            wr.writerow([f"{t:.6f}", repr(float(x))])


def read_csv(path, model: RoadModel = None) -> RoadSignal:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, x = data[:, 0], data[:, 1]
    if model is None:
        Ts = float(t[1] - t[0]) if len(t) > 1 else RoadModel().Ts
        model = RoadModel(Ts=Ts)
    return RoadSignal(x, model)
