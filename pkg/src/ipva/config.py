"""Flat ``key = value`` experiment files and their resolved form."""

from dataclasses import dataclass, field
import hashlib

from .errors import ConfigError
from .params import PRESETS, SuspensionParams, params_from_mapping

EXPERIMENTS = ("simulate", "pareto", "stationarity", "psd", "sl-accuracy", "mpc-energy",
               "mpc-comfort", "mpc-mixed", "observer", "timing")

# desk-scale defaults; every one can be raised in the config file
DEFAULT_SEEDS = {
    "simulate": "0", "pareto": "0-1", "stationarity": "0-49", "psd": "0-4",
    "sl-accuracy": "0-9", "mpc-energy": "0-9", "mpc-comfort": "0-9", "mpc-mixed": "0-4",
    "observer": "0", "timing": "0-2",
}


def parse_text(text, source="<string>"):
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        out[key.replace("-", "_")] = value
    return out


def load(path):
    with open(path) as fh:
        return parse_text(fh.read(), str(path))


def parse_bool(text):
    """``true/false``, ``yes/no``, ``on/off`` or ``1/0``."""
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def parse_seeds(text):
    """Seed lists: "7", "1,2,5", "0-49" or a mix such as "0-3,10"."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(s) for s in part.split("-", 1))
                if hi < lo:
                    raise ValueError
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(f"cannot parse seed list {text!r}", "seeds") from None
    if not seeds:
        raise ConfigError("seed list is empty", "seeds")
    return seeds


@dataclass
class ExperimentSpec:
    """A named experiment with its parameters and free-form settings."""

    experiment: str
    params: SuspensionParams
    seeds: list
    out: str
    settings: dict = field(default_factory=dict)

    def get(self, key, default, cast=float):
        if key not in self.settings:
            return default
        raw = self.settings[key]
        try:
            return cast(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"cannot interpret {raw!r}", key) from None

    def get_list(self, key, default, cast=str):
        if key not in self.settings:
            return list(default)
        return [cast(s.strip()) for s in str(self.settings[key]).split(",") if s.strip()]

    def canonical(self):
        """Sorted ``key=value`` text of everything that determines the results."""
        items = dict(self.settings)
        items["experiment"] = self.experiment
        items["seeds"] = ",".join(str(s) for s in self.seeds)
        for k, v in self.params.to_dict().items():
            items[f"param.{k}"] = repr(float(v))
        items.pop("out", None)
        items.pop("n_jobs", None)
        return "\n".join(f"{k}={items[k]}" for k in sorted(items)) + "\n"

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def resolve(values, experiment=None, out=None):
    """Turn raw key/value pairs into an ExperimentSpec, validating the basics."""
    values = {k: v for k, v in dict(values).items() if not k.startswith("manifest.")}
    # a manifest lists the resolved parameters as param.<name>
    for k in [k for k in values if k.startswith("param.")]:
        v = values.pop(k)
        values.setdefault(k[len("param."):], v)
    name = experiment or values.pop("experiment", None)
    values.pop("experiment", None)
    if name is None:
        raise ConfigError("no experiment named", "experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; known: {', '.join(EXPERIMENTS)}", "experiment")
    preset_name = values.get("preset", "table1")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; known: {sorted(PRESETS)}", "preset")
    params = params_from_mapping(values)
    # parameters are recorded once, as param.<name>, by canonical()
    for k in params.to_dict():
        values.pop(k, None)
    seeds = parse_seeds(values.pop("seeds", DEFAULT_SEEDS[name]))
    out_dir = out or values.pop("out", None) or f"out/{name}"
    values.pop("out", None)
    values["preset"] = preset_name
    return ExperimentSpec(name, params, seeds, out_dir, values)
