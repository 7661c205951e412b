"""Physical parameters of the IPVA quarter-car and its named presets."""

from dataclasses import asdict, dataclass, fields, replace
import math

import numpy as np

from .errors import ConfigError

# Upper limit on electrical damping quoted for commercial rotary generators.
CE_LIMIT = 7.2

# Layout of the packed vector consumed by the compiled kernels.
PACKED_FIELDS = ("Ms", "Mus", "ks", "kt", "cm", "R", "m", "Rp", "r", "J", "Jp", "Jr", "kp")


def screw_radius_from_damping_limit(Ms=250.0, ks=55e3, ce_limit=CE_LIMIT):
    """Screw radius R for which ``ce_limit`` corresponds to xi_e = 1."""
    omega0 = math.sqrt(ks / Ms)
    return math.sqrt(ce_limit / (2.0 * omega0 * Ms))


@dataclass(frozen=True)
class SuspensionParams:
    """Quarter-car + IPVA constants in SI units.

    ``ce`` is not stored here; it is the control input (or a design
    variable) and is passed separately.
    """

    Ms: float = 250.0
    Mus: float = 35.0
    ks: float = 55e3
    kt: float = 150e3
    cm: float = 150.0
    R: float = screw_radius_from_damping_limit()
    m: float = 2.5
    Rp: float = 0.117
    r: float = 0.0897
    J: float = 0.0
    Jp: float = 0.0
    Jr: float = 0.000121
    kp: float = 0.0
    ce_max: float = 0.225

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"must be a finite number, got {v!r}", f.name)
        for name in ("Ms", "Mus", "ks", "kt", "R"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be strictly positive", name)
        for name in ("m", "Rp", "r", "J", "Jp", "Jr", "cm", "kp", "ce_max"):
            if getattr(self, name) < 0:
                raise ConfigError("must be non-negative", name)

    @property
    def omega0(self):
        return math.sqrt(self.ks / self.Ms)

    @property
    def eta(self):
        return self.r / self.Rp if self.Rp > 0 else math.nan

    @property
    def mu_r(self):
        return self.m * self.Rp**2 / (self.Ms * self.R**2)

    def xi_e(self, ce):
        return ce / (2.0 * self.omega0 * self.Ms * self.R**2)

    def ce_from_xi(self, xi_e):
        return xi_e * 2.0 * self.omega0 * self.Ms * self.R**2

    def with_design(self, Rp=None, r=None, **changes):
        if Rp is not None:
            changes["Rp"] = Rp
        if r is not None:
            changes["r"] = r
        return replace(self, **changes)

    def as_array(self):
        return np.array([getattr(self, k) for k in PACKED_FIELDS], dtype=float)

    def to_dict(self):
        return asdict(self)


def table1():
    """Reference simulation parameters (Pareto point 3 geometry)."""
    return SuspensionParams()


def passive_point3():
    return table1()


PRESETS = {
    "table1": table1,
    "point3": passive_point3,
}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}", "preset") from None


def params_from_mapping(values, base=None):
    """Build parameters from a ``{key: str|float}`` mapping.

    A ``preset`` key selects the starting point; other recognised keys
    override it. Unknown keys are ignored so a single config file can
    carry settings for several modules.
    """
    values = dict(values)
    if base is None:
        base = preset(values.pop("preset", "table1"))
    else:
        values.pop("preset", None)
    known = {f.name for f in fields(SuspensionParams)}
    changes = {}
    for key, raw in values.items():
        if key not in known:
            continue
        try:
            changes[key] = float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a number, got {raw!r}", key) from None
    return replace(base, **changes)
