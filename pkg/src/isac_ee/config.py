"""Scenario configuration, unit parsing and YAML loading.

All powers are kept in mW and noise powers are normalized (default 1).
Config files may give quantities either as bare numbers in the canonical
unit or as strings with an explicit unit suffix, e.g. ``"20dBm"``,
``"5.6mW"``, ``"-30dB"``, ``"22.5deg"``, ``"2GHz"``.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml


class ConfigError(ValueError):
    """Raised for malformed or physically invalid scenario configurations."""


def db_to_lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def lin_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_mw(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0)


_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/%]*)\s*$")

_FREQ = {"": 1.0, "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
_ANGLE = {"": 1.0, "rad": 1.0, "deg": math.pi / 180.0}


def _split(value: Any) -> tuple[float, str]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value), ""
    if isinstance(value, str):
        m = _QTY.match(value)
        if m:
            return float(m.group(1)), m.group(2).lower()
    raise ConfigError(f"cannot parse quantity {value!r}")


def parse_power_mw(value: Any) -> float:
    num, unit = _split(value)
    if unit in ("", "mw"):
        return num
    if unit == "dbm":
        return dbm_to_mw(num)
    if unit == "w":
        return 1e3 * num
    raise ConfigError(f"unknown power unit in {value!r}")


def parse_epsilon(value: Any) -> float:
    """Dynamic power per unit rate, returned in mW per bps/Hz."""
    num, unit = _split(value)
    if unit in ("", "mw", "mw/bps"):
        return num
    if unit in ("dbm", "dbm/bps"):
        return dbm_to_mw(num)
    raise ConfigError(f"unknown unit for epsilon_dyn in {value!r}")


def parse_crb(value: Any) -> float:
    """CRB ceiling in rad^2; ``None``/``"inf"`` disables the constraint."""
    if value is None:
        return math.inf
    if isinstance(value, str) and value.strip().lower() in ("inf", "none", "off"):
        return math.inf
    num, unit = _split(value)
    if unit in ("", "rad2"):
        return num
    if unit == "db":
        return db_to_lin(num)
    raise ConfigError(f"unknown CRB unit in {value!r}")


def parse_angle(value: Any) -> float:
    num, unit = _split(value)
    if unit not in _ANGLE:
        raise ConfigError(f"unknown angle unit in {value!r}")
    return num * _ANGLE[unit]


def parse_freq(value: Any) -> float:
    num, unit = _split(value)
    if unit not in _FREQ:
        raise ConfigError(f"unknown frequency unit in {value!r}")
    return num * _FREQ[unit]


def parse_complex(value: Any) -> complex:
    if isinstance(value, dict):
        mag = float(value.get("magnitude", 1.0))
        phase = parse_angle(value.get("phase", 0.0))
        return complex(mag * math.cos(phase), mag * math.sin(phase))
    if isinstance(value, str):
        return complex(value.replace(" ", ""))
    return complex(value)


@dataclass(frozen=True)
class SystemConfig:
    """Scenario constants. Powers in mW, angles in rad, frequencies in Hz."""

    n_th: int = 5
    n_tv: int = 5
    n_rh: int = 5
    n_rv: int = 5
    k_users: int = 6
    q_subcarriers: int = 16
    f_c: float = 2e9
    bandwidth: float = 10e6
    frame_len: int = 30
    sigma_c_sq: float = 1.0
    sigma_s_sq: float = 1.0
    p_max: float = 100.0
    p_0: float = 5.6
    epsilon_dyn: float = dbm_to_mw(-26.0)
    rho_amp: float = 0.35
    omega: float = 1e-4
    se_threshold: float = 5.0
    crb0_theta: float = 1e-3
    crb0_phi: float = 1e-3
    target_theta: float = math.pi / 8
    target_phi: float = math.pi / 4
    alpha_refl: complex = 1.0 + 0.0j
    cell_radius: float = 1000.0
    r_h: float = 100.0
    nu_pathloss: float = 3.2
    sigma_shadow_db: float = 7.0
    rng_seed: int = 0
    # explicit (radius m, azimuth rad) per user; random annulus drop if None
    user_positions: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        self.validate()

    @property
    def n_t(self) -> int:
        return self.n_th * self.n_tv

    @property
    def n_r(self) -> int:
        return self.n_rh * self.n_rv

    @property
    def kappa(self) -> float:
        return 2.0 * self.frame_len / self.sigma_s_sq

    @property
    def kappa_bar(self) -> float:
        return self.kappa / self.n_t

    def validate(self) -> None:
        for name in ("n_th", "n_tv", "n_rh", "n_rv", "k_users", "q_subcarriers", "frame_len"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.n_t <= self.k_users:
            raise ConfigError(
                f"zero-forcing needs Nt > K (Nt={self.n_t}, K={self.k_users})"
            )
        for name in ("f_c", "bandwidth", "sigma_c_sq", "sigma_s_sq", "p_max", "p_0",
                     "cell_radius", "r_h", "crb0_theta", "crb0_phi"):
            v = getattr(self, name)
            if not (v > 0):
                raise ConfigError(f"{name} must be strictly positive, got {v!r}")
        if not (self.epsilon_dyn >= 0):
            raise ConfigError(f"epsilon_dyn must be nonnegative, got {self.epsilon_dyn!r}")
        if not (0.0 < self.rho_amp <= 1.0):
            raise ConfigError(f"rho_amp must lie in (0, 1], got {self.rho_amp!r}")
        if self.omega < 0:
            raise ConfigError("omega must be nonnegative")
        if self.se_threshold < 0:
            raise ConfigError("se_threshold must be nonnegative (0 disables it)")
        if self.cell_radius < self.r_h:
            raise ConfigError("cell_radius must be at least r_h")
        if not (-math.pi <= self.target_theta <= math.pi):
            raise ConfigError("target_theta must lie in [-pi, pi]")
        if not (-math.pi / 2 <= self.target_phi <= math.pi / 2):
            raise ConfigError("target_phi must lie in [-pi/2, pi/2]")
        if self.user_positions is not None:
            if len(self.user_positions) != self.k_users:
                raise ConfigError("user_positions must list exactly k_users entries")
            for r, _ in self.user_positions:
                if r < self.r_h:
                    raise ConfigError(f"user radius {r} is below r_h={self.r_h}")

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def full(cls, **overrides) -> "SystemConfig":
        """Full-size scenario: 5x5 UPAs, K=6, Q=16 and the reference constants."""
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "SystemConfig":
        """Laptop-size scenario used by the tests and the default sweeps."""
        base = dict(n_th=3, n_tv=3, n_rh=3, n_rv=3, k_users=3, q_subcarriers=4)
        base.update(DESK_SCENARIO)
        base.update(overrides)
        return cls(**base)


# Thresholds/geometry for the desk scenario; chosen so that most seeded drops
# admit a feasible point and both EE terms matter (see README, "Desk-scale scenario").
DESK_SCENARIO: dict[str, Any] = dict(
    se_threshold=5.0,
    crb0_theta=db_to_lin(-30.0),
    crb0_phi=db_to_lin(-30.0),
    p_max=dbm_to_mw(20.0),
    cell_radius=150.0,
    alpha_refl=0.2 + 0.0j,
)


@dataclass(frozen=True)
class SolverSettings:
    """Knobs of the iterative algorithm and the conic backend."""

    tol: float = 1e-4
    max_iter: int = 300
    accuracy: float = 1e-8
    relaxed_accuracy: float = 1e-6
    init_max_iter: int = 100
    init_power_fraction: float = 0.5
    init_jitter: float = 0.1
    clamp_floor: float = 1e-8
    ascent_slack: float = 1e-6
    max_backtrack: int = 6
    equalcs_optimize_xi: bool = False

    def replace(self, **changes) -> "SolverSettings":
        return dataclasses.replace(self, **changes)


_PARSERS = {
    "f_c": parse_freq,
    "bandwidth": parse_freq,
    "p_max": parse_power_mw,
    "p_0": parse_power_mw,
    "epsilon_dyn": parse_epsilon,
    "crb0_theta": parse_crb,
    "crb0_phi": parse_crb,
    "target_theta": parse_angle,
    "target_phi": parse_angle,
    "alpha_refl": parse_complex,
}

_INT_FIELDS = {"n_th", "n_tv", "n_rh", "n_rv", "k_users", "q_subcarriers", "frame_len", "rng_seed"}


def config_from_mapping(data: dict, base: Optional[SystemConfig] = None) -> SystemConfig:
    """Build a config from a plain mapping (the ``system:`` block of a file)."""
    base = base or SystemConfig()
    known = {f.name for f in dataclasses.fields(SystemConfig)}
    changes: dict[str, Any] = {}
    for key, value in (data or {}).items():
        if key == "crb0":
            changes["crb0_theta"] = changes["crb0_phi"] = parse_crb(value)
            continue
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        if key in _PARSERS:
            changes[key] = _PARSERS[key](value)
        elif key == "user_positions":
            changes[key] = None if value is None else tuple(
                (float(r), parse_angle(a)) for r, a in value
            )
        elif key in _INT_FIELDS:
            changes[key] = int(value)
        else:
            changes[key] = float(_split(value)[0])
    try:
        return dataclasses.replace(base, **changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def settings_from_mapping(data: dict, base: Optional[SolverSettings] = None) -> SolverSettings:
    base = base or SolverSettings()
    known = {f.name for f in dataclasses.fields(SolverSettings)}
    unknown = set(data or {}) - known
    if unknown:
        raise ConfigError(f"unknown solver keys {sorted(unknown)}")
    return dataclasses.replace(base, **(data or {}))


@dataclass
class RunConfig:
    system: SystemConfig
    solver: SolverSettings = field(default_factory=SolverSettings)
    raw: dict = field(default_factory=dict)


def load_config(path: str | Path) -> RunConfig:
    """Load a YAML scenario file.

    Layout::

        preset: desk          # or "full"; optional
        system: {...}         # SystemConfig keys, unit suffixes allowed
        solver: {...}         # SolverSettings keys
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")
    preset = data.get("preset", "desk")
    if preset == "desk":
        base = SystemConfig.desk()
    elif preset == "full":
        base = SystemConfig.full()
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    system = config_from_mapping(data.get("system", {}), base)
    solver = settings_from_mapping(data.get("solver", {}))
    return RunConfig(system=system, solver=solver, raw=data)


def config_to_mapping(cfg: SystemConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["alpha_refl"] = str(cfg.alpha_refl)
    if cfg.user_positions is not None:
        out["user_positions"] = [list(p) for p in cfg.user_positions]
    for key in ("crb0_theta", "crb0_phi"):
        if math.isinf(out[key]):
            out[key] = "inf"
    return out


def sweep_values(text: str | Sequence[float]) -> list[float]:
    if isinstance(text, str):
        return [float(v) for v in text.split(",") if v.strip()]
    return [float(v) for v in text]
