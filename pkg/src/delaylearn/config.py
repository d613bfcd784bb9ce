"""Network and run configuration.

Both configs are flat dataclasses so they can be written to and read from the
plain ``key=value`` files used by the command line.  Unknown keys are always
an error: a silently ignored typo would corrupt an experiment.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

DELAY_MODES = ("none", "axonal", "synaptic")
OPTIMIZERS = ("sgd", "adam")
FEEDBACK = ("symmetric", "random")
DELAY_INITS = ("uniform", "zero")
PREDICT_RULES = ("sum_softmax", "final", "max")
ENGINES = ("auto", "stream", "batched")


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


def _check_choice(name: str, value: str, choices: tuple[str, ...]) -> None:
    if value not in choices:
        raise ConfigError(f"{name}={value!r}: expected one of {', '.join(choices)}")


@dataclass
class NetworkConfig:
    """Scalar hyperparameters of one network.

    Times are in milliseconds, except ``sigma`` and ``d_max`` which are in
    timesteps.  Delay parameters live in ``[-(d_max-1)/2, +(d_max-1)/2]``.
    """

    n_in: int = 116
    n_hidden: int = 16
    n_out: int = 20
    recurrent: bool = False
    delay_in: str = "synaptic"
    delay_rec: str = "none"
    dt: float = 10.0
    tau_m: float = 20.0
    tau_out: float = 1000.0
    v_th: float = 1.0
    v_reset: float = 0.0
    gamma_pd: float = 0.3
    sigma: float = 2.0
    d_max: int = 25
    lr_w: float = 1e-4
    lr_d: float = 1e-2
    sparsity: float = 0.0
    seed: int = 0
    optimizer: str = "sgd"
    feedback: str = "symmetric"
    delay_init: str = "uniform"
    w_scale: float = 1.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("n_in", "n_hidden", "n_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("dt", "tau_m", "tau_out", "v_th", "sigma"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be a positive finite number, got {value}")
        if self.v_reset != 0.0:
            raise ConfigError("v_reset is fixed at 0 by the discretized dynamics")
        if self.d_max < 1 or self.d_max % 2 == 0:
            raise ConfigError(f"d_max must be a positive odd integer, got {self.d_max}")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if self.gamma_pd < 0 or self.lr_w < 0 or self.lr_d < 0:
            raise ConfigError("gamma_pd, lr_w and lr_d must be non-negative")
        _check_choice("delay_in", self.delay_in, DELAY_MODES)
        _check_choice("delay_rec", self.delay_rec, DELAY_MODES)
        _check_choice("optimizer", self.optimizer, OPTIMIZERS)
        _check_choice("feedback", self.feedback, FEEDBACK)
        _check_choice("delay_init", self.delay_init, DELAY_INITS)
        if not self.recurrent and self.delay_rec != "none":
            raise ConfigError("delay_rec requires recurrent=true")

    @property
    def alpha(self) -> float:
        from .dynamics import decay_factor

        return decay_factor(self.tau_m, self.dt)

    @property
    def kappa(self) -> float:
        from .dynamics import decay_factor

        return decay_factor(self.tau_out, self.dt)

    @property
    def d_half(self) -> int:
        """Half-width of the delay clamp range, ``(d_max - 1) / 2``."""
        return (self.d_max - 1) // 2

    @property
    def kernel_radius(self) -> int:
        """Truncation radius of the Gaussian spike kernel in timesteps."""
        return int(math.ceil(3.0 * self.sigma))

    @property
    def density(self) -> float:
        return 1.0 - self.sparsity

    def replace(self, **changes: Any) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RunConfig:
    """Everything needed to reproduce one training run."""

    net: NetworkConfig = field(default_factory=NetworkConfig)
    epochs: int = 60
    batch_size: int = 16
    learn_weights: bool = True
    learn_delays_in: bool = True
    learn_delays_rec: bool = True
    repeats: int = 5
    experiment: str = "default"
    train_manifest: str = ""
    test_manifest: str = ""
    bin_factor: int = 6
    frame_ms: float = 10.0
    predict: str = "sum_softmax"
    engine: str = "auto"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        self.net.validate()
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.bin_factor < 1:
            raise ConfigError("bin_factor must be >= 1")
        if not self.frame_ms > 0:
            raise ConfigError("frame_ms must be > 0")
        _check_choice("predict", self.predict, PREDICT_RULES)
        _check_choice("engine", self.engine, ENGINES)

    def replace(self, **changes: Any) -> "RunConfig":
        net_changes = {k: v for k, v in changes.items() if k in _NET_KEYS}
        run_changes = {k: v for k, v in changes.items() if k not in _NET_KEYS}
        unknown = set(run_changes) - _RUN_KEYS
        if unknown:
            raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
        net = self.net.replace(**net_changes) if net_changes else self.net
        return dataclasses.replace(self, net=net, **run_changes)

    def flat(self) -> dict[str, Any]:
        out = {f.name: getattr(self.net, f.name) for f in fields(self.net)}
        out.update({k: getattr(self, k) for k in sorted(_RUN_KEYS)})
        return out


_NET_TYPES = {f.name: f.type for f in fields(NetworkConfig)}
_NET_KEYS = frozenset(_NET_TYPES)
_RUN_TYPES = {f.name: f.type for f in fields(RunConfig) if f.name != "net"}
_RUN_KEYS = frozenset(_RUN_TYPES)


def _coerce(key: str, raw: str, type_name: str) -> Any:
    raw = raw.strip()
    try:
        if type_name == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type_name}") from None
    return raw


def parse_overrides(pairs: list[str] | dict[str, str]) -> dict[str, Any]:
    """Turn ``key=value`` strings into typed values; unknown keys raise."""
    items = pairs.items() if isinstance(pairs, dict) else (_split_pair(p) for p in pairs)
    out: dict[str, Any] = {}
    for key, raw in items:
        type_name = _NET_TYPES.get(key) or _RUN_TYPES.get(key)
        if type_name is None:
            raise ConfigError(f"unknown config key: {key}")
        out[key] = _coerce(key, raw, str(type_name))
    return out


def _split_pair(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value


def load_run_config(path: str | Path | None, overrides: list[str] | None = None,
                    base: RunConfig | None = None) -> RunConfig:
    """Read a flat ``key=value`` file (``#`` starts a comment) and apply overrides.

    Keys missing from the file keep their value in ``base`` (default: ``RunConfig()``).
    """
    pairs: dict[str, str] = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = _split_pair(line)
            pairs[key] = value
    values = parse_overrides(pairs)
    values.update(parse_overrides(overrides or []))
    return (base or RunConfig()).replace(**values)


def dump_run_config(run: RunConfig) -> str:
    lines = []
    for key, value in run.flat().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
