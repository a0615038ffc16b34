"""Physical constants of the bridge model and their JSON configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

# Collapsed Tacoma Narrows Bridge values (SI).
_YOUNG = 210e9
_INERTIA = 0.15
_SHEAR = 81e9
_TORSION_CONST = 6.44e-6


class ConfigError(ValueError):
    """Invalid configuration document or parameter value."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class BridgeParams:
    """Structure constants.

    ``EI`` and ``GK`` are stored as products because only the products
    enter the equations of motion.
    """

    L: float = 853.44
    ell: float = 6.0
    M: float = 7198.0
    EI: float = _YOUNG * _INERTIA
    GK: float = _SHEAR * _TORSION_CONST
    m: float = 981.0
    H0: float = 5.83e7
    Lc: float = 868.62
    s0: float = 72.0
    A: float = 0.1228
    E: float = _YOUNG
    g: float = 9.81

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"expected a number, got {value!r}", f.name)
            if not value > 0 or value != value or value == float("inf"):
                raise ConfigError(f"must be strictly positive and finite, got {value!r}", f.name)
        if not 2 * self.ell < self.L / 10:
            raise ConfigError("deck too wide: require 2*ell < L/10", "ell")
        if not self.Lc > self.L:
            raise ConfigError("cable length must exceed the span", "Lc")

    @property
    def cable_stiffness(self) -> float:
        """Axial stiffness A*E/Lc of one cable (N/m)."""
        return self.A * self.E / self.Lc

    def to_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def to_json(self) -> str:
        # repr of a float round-trips exactly through json
        return json.dumps(self.to_dict(), indent=2)

    def fingerprint(self) -> str:
        """Short stable hash identifying these parameter values."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "BridgeParams":
        return dataclasses.replace(self, **changes)


FIELD_NAMES = tuple(f.name for f in dataclasses.fields(BridgeParams))


def default_tnb() -> BridgeParams:
    return BridgeParams()


def load_config(text: str) -> BridgeParams:
    """Build parameters from a flat JSON object; missing keys take TNB defaults.

    An empty or whitespace-only document yields the defaults.
    """
    if not text.strip():
        return default_tnb()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(doc) - set(FIELD_NAMES))
    if unknown:
        raise ConfigError("unknown key", unknown[0])
    values = {}
    for key, value in doc.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        values[key] = float(value)
    return BridgeParams(**values)


def load_config_file(path) -> BridgeParams:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror or exc}") from exc
    return load_config(text)
