"""Model parameters, grid settings, presets and the key-value config format.

Internal units: price offsets in bp, time in days, sizes in millions of
notional, intensities per day. Latencies are stored as given (seconds) so
that configs round-trip bit-exactly; :attr:`SizeBucket.latency_days` is the
only place where seconds are converted.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import BadValue, InvariantViolation, MissingKey, UnknownPreset

SECONDS_PER_DAY = 86400.0


class Protocol(str, Enum):
    NONE = "none"
    UNCONSTRAINED = "unconstrained"
    FAIR = "fair"


@dataclass(frozen=True)
class SizeBucket:
    """One rung of the size ladder, quoted symmetrically on both sides."""

    size: int
    base_intensity: float
    decay: float
    toxicity: float = 0.0
    toxicity_decay: float = 0.0
    latency_s: float = 0.0

    def __post_init__(self):
        if self.size <= 0:
            raise InvariantViolation("bucket size z_n > 0")
        if not self.base_intensity > 0:
            raise InvariantViolation("base intensity Lambda0_n > 0")
        if not self.decay > 0:
            raise InvariantViolation("intensity decay kappa_n > 0")
        if not self.toxicity >= 0:
            raise InvariantViolation("toxicity theta_n >= 0")
        if not self.toxicity_decay >= 0:
            raise InvariantViolation("toxicity decay beta_n >= 0")
        if not self.latency_s >= 0:
            raise InvariantViolation("latency tau_n >= 0")

    @property
    def latency_days(self) -> float:
        return self.latency_s / SECONDS_PER_DAY

    @property
    def constant_slippage(self) -> bool:
        return self.toxicity_decay == 0.0

    def mark_sd(self, sigma: float) -> float:
        """Latency mark dispersion nu_n = sigma * sqrt(tau_n) in bp."""
        return sigma * math.sqrt(self.latency_days)

    def mark_mean(self, delta):
        """Conditional mean of the latency mark, m_n(delta) = -theta exp(-beta delta)."""
        if self.toxicity_decay == 0.0:
            return -self.toxicity + 0.0 * np.asarray(delta, dtype=float)
        return -self.toxicity * np.exp(-self.toxicity_decay * np.asarray(delta, dtype=float))


@dataclass(frozen=True)
class ReputationParams:
    ema_weight: float = 0.01
    flow_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.ema_weight < 1.0:
            raise InvariantViolation("rho in (0,1)")
        if not self.flow_decay >= 0.0:
            raise InvariantViolation("rho_g >= 0")

    def flow_factor(self, R):
        """g(R) = exp(-rho_g R)."""
        return np.exp(-self.flow_decay * np.asarray(R, dtype=float))

    def after_accept(self, R):
        return (1.0 - self.ema_weight) * R

    def after_reject(self, R):
        return (1.0 - self.ema_weight) * R + self.ema_weight


@dataclass(frozen=True)
class ModelParams:
    buckets: tuple[SizeBucket, ...]
    sigma: float = 100.0
    gamma: float = 1e-3
    reputation: ReputationParams = field(default_factory=ReputationParams)
    horizon: float = 0.1
    protocol: Protocol = Protocol.UNCONSTRAINED

    def __post_init__(self):
        object.__setattr__(self, "buckets", tuple(self.buckets))
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if not self.buckets:
            raise InvariantViolation("at least one size bucket")
        if not self.sigma > 0:
            raise InvariantViolation("sigma > 0")
        if not self.gamma >= 0:
            raise InvariantViolation("gamma >= 0")
        if not self.horizon > 0:
            raise InvariantViolation("horizon T > 0")
        sizes = [b.size for b in self.buckets]
        if any(b >= c for b, c in zip(sizes, sizes[1:])):
            raise InvariantViolation("bucket sizes strictly increasing")

    # array views used by the vectorized engines
    @property
    def sizes(self) -> np.ndarray:
        return np.array([b.size for b in self.buckets], dtype=float)

    @property
    def intensities(self) -> np.ndarray:
        return np.array([b.base_intensity for b in self.buckets])

    @property
    def decays(self) -> np.ndarray:
        return np.array([b.decay for b in self.buckets])

    @property
    def toxicities(self) -> np.ndarray:
        return np.array([b.toxicity for b in self.buckets])

    @property
    def nus(self) -> np.ndarray:
        return np.array([b.mark_sd(self.sigma) for b in self.buckets])

    @property
    def constant_slippage(self) -> bool:
        return all(b.constant_slippage for b in self.buckets)

    def flow_factor(self, R):
        return self.reputation.flow_factor(R)

    def with_buckets(self, **changes) -> "ModelParams":
        """Apply the same field change to every bucket (e.g. ``toxicity=0``)."""
        return replace(self, buckets=tuple(replace(b, **changes) for b in self.buckets))

    def with_reputation(self, **changes) -> "ModelParams":
        return replace(self, reputation=replace(self.reputation, **changes))


@dataclass(frozen=True)
class GridSpec:
    q_max: int = 50
    r_points: int = 101
    dt: float = 1e-5
    stationarity_tol: float = 1e-2
    max_time: float = 2.0

    def __post_init__(self):
        if self.r_points < 2:
            raise InvariantViolation("r_points >= 2")
        if not self.dt > 0:
            raise InvariantViolation("dt > 0")
        if not self.stationarity_tol > 0:
            raise InvariantViolation("stationarity_tol > 0")
        if not self.max_time > 0:
            raise InvariantViolation("max_time > 0")

    def check(self, params: ModelParams) -> None:
        if self.q_max < max(b.size for b in params.buckets):
            raise InvariantViolation("q_max >= max bucket size")

    @property
    def q_nodes(self) -> np.ndarray:
        return np.arange(-self.q_max, self.q_max + 1)

    @property
    def r_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.r_points)


# ---------------------------------------------------------------------------
# key-value format

ARRAY_KEYS = ("sizes", "lambda0", "kappa", "theta", "beta", "tau_seconds")
SCALAR_KEYS = (
    "sigma_bp", "gamma", "rho", "rho_g", "horizon_days", "protocol",
    "q_max", "r_points", "dt_days", "stationarity_tol", "max_time_days",
)
CONFIG_KEYS = ARRAY_KEYS + SCALAR_KEYS
_INT_KEYS = {"sizes", "q_max", "r_points"}


def _parse_number(key: str, text: str, integer: bool):
    text = text.strip()
    try:
        value = float(text)
    except ValueError:
        raise BadValue(key, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise BadValue(key, f"not finite: {text!r}")
    if integer:
        if value != int(value):
            raise BadValue(key, f"not an integer: {text!r}")
        return int(value)
    return value


def _parse_value(key: str, raw):
    """Parse one raw value; arrays may be given as a bare scalar (broadcast later)."""
    if key == "protocol":
        try:
            return Protocol(str(raw).strip())
        except ValueError:
            raise BadValue(key, f"expected one of none/unconstrained/fair, got {raw!r}") from None
    integer = key in _INT_KEYS
    if key in ARRAY_KEYS:
        if isinstance(raw, (list, tuple, np.ndarray)):
            return [_parse_number(key, str(v), integer) for v in raw]
        text = str(raw).strip()
        if text.startswith("[") and text.endswith("]"):
            items = [s for s in text[1:-1].split(",") if s.strip()]
            if not items:
                raise BadValue(key, "empty array")
            return [_parse_number(key, s, integer) for s in items]
        return _parse_number(key, text, integer)
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raw = repr(raw)
    return _parse_number(key, str(raw), integer)


def parse_text(text: str) -> dict:
    """Parse config text into a raw mapping of key -> string value."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadValue(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise BadValue(key, "unknown key")
        raw[key] = value
    return raw


def from_mapping(raw: Mapping) -> tuple[ModelParams, GridSpec]:
    """Build validated parameters from a mapping of config keys."""
    for key in CONFIG_KEYS:
        if key not in raw:
            raise MissingKey(key)
    values = {k: _parse_value(k, raw[k]) for k in CONFIG_KEYS}
    lengths = {len(values[k]) for k in ARRAY_KEYS if isinstance(values[k], list)}
    if len(lengths) > 1:
        raise InvariantViolation("per-bucket arrays must have equal length")
    n = lengths.pop() if lengths else 1
    arrays = {k: values[k] if isinstance(values[k], list) else [values[k]] * n for k in ARRAY_KEYS}
    buckets = tuple(
        SizeBucket(
            size=arrays["sizes"][i],
            base_intensity=arrays["lambda0"][i],
            decay=arrays["kappa"][i],
            toxicity=arrays["theta"][i],
            toxicity_decay=arrays["beta"][i],
            latency_s=arrays["tau_seconds"][i],
        )
        for i in range(n)
    )
    params = ModelParams(
        buckets=buckets,
        sigma=values["sigma_bp"],
        gamma=values["gamma"],
        reputation=ReputationParams(values["rho"], values["rho_g"]),
        horizon=values["horizon_days"],
        protocol=values["protocol"],
    )
    grid = GridSpec(
        q_max=values["q_max"],
        r_points=values["r_points"],
        dt=values["dt_days"],
        stationarity_tol=values["stationarity_tol"],
        max_time=values["max_time_days"],
    )
    grid.check(params)
    return params, grid


def to_mapping(params: ModelParams, grid: GridSpec) -> dict:
    b = params.buckets
    return {
        "sizes": [x.size for x in b],
        "lambda0": [x.base_intensity for x in b],
        "kappa": [x.decay for x in b],
        "theta": [x.toxicity for x in b],
        "beta": [x.toxicity_decay for x in b],
        "tau_seconds": [x.latency_s for x in b],
        "sigma_bp": params.sigma,
        "gamma": params.gamma,
        "rho": params.reputation.ema_weight,
        "rho_g": params.reputation.flow_decay,
        "horizon_days": params.horizon,
        "protocol": params.protocol.value,
        "q_max": grid.q_max,
        "r_points": grid.r_points,
        "dt_days": grid.dt,
        "stationarity_tol": grid.stationarity_tol,
        "max_time_days": grid.max_time,
    }


def config_text(params: ModelParams, grid: GridSpec) -> str:
    lines = []
    for key, value in to_mapping(params, grid).items():
        if isinstance(value, list):
            value = "[" + ", ".join(repr(v) for v in value) + "]"
        elif not isinstance(value, str):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path) -> tuple[ModelParams, GridSpec]:
    text = Path(path).read_text(encoding="utf-8")
    return from_mapping(parse_text(text))


def write_config(params: ModelParams, grid: GridSpec, path) -> None:
    Path(path).write_text(config_text(params, grid), encoding="utf-8")


def apply_overrides(params: ModelParams, grid: GridSpec, overrides: Mapping) -> tuple[ModelParams, GridSpec]:
    """Re-validate after replacing config keys; scalars broadcast to per-bucket arrays."""
    raw = to_mapping(params, grid)
    for key, value in overrides.items():
        if key not in CONFIG_KEYS:
            raise BadValue(key, "unknown key")
        raw[key] = value
    return from_mapping(raw)


def config_hash(params: ModelParams, grid: GridSpec) -> str:
    return hashlib.sha256(config_text(params, grid).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# presets

LADDER_SIZES = (1, 2, 5, 10, 20)
LADDER_INTENSITY = (2000.0, 800.0, 600.0, 400.0, 100.0)
LADDER_DECAY = (3.0, 2.5, 2.0, 1.5, 1.0)

# Horizon used for HJB experiments; controls are read from V(0, .) of the
# finite-horizon solve (see README, "horizon").
EXPERIMENT_HORIZON = 0.05
SIMULATION_HORIZON = 0.1


def ladder(theta: float = 0.1, beta: float = 0.0, tau_s: float = 0.5) -> tuple[SizeBucket, ...]:
    return tuple(
        SizeBucket(z, lam, k, theta, beta, tau_s)
        for z, lam, k in zip(LADDER_SIZES, LADDER_INTENSITY, LADDER_DECAY)
    )


def _make(theta=0.1, beta=0.0, tau_s=0.5, rho=0.01, rho_g=0.0,
          protocol=Protocol.UNCONSTRAINED, horizon=EXPERIMENT_HORIZON) -> ModelParams:
    return ModelParams(
        buckets=ladder(theta, beta, tau_s),
        sigma=100.0,
        gamma=1e-3,
        reputation=ReputationParams(rho, rho_g),
        horizon=horizon,
        protocol=protocol,
    )


_PRESETS = {
    "base": lambda: _make(),
    "latency_sweep": lambda: _make(tau_s=0.1),
    "quote_dependent_beta05": lambda: _make(beta=0.5),
    "quote_dependent_beta03": lambda: _make(beta=0.3, rho_g=0.1),
    "feedback_rho01": lambda: _make(rho_g=0.1),
    "table1_tau1s": lambda: _make(tau_s=1.0),
    "simulation_fair": lambda: _make(rho_g=0.01, protocol=Protocol.FAIR, horizon=SIMULATION_HORIZON),
}
PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> ModelParams:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise UnknownPreset(name) from None


def default_grid() -> GridSpec:
    return GridSpec()
