"""Experiment configuration: a line-oriented ``key = value`` format.

``#`` starts a comment. Lists are comma separated. Unknown keys are errors.
Only the data location is required, either as ``data_dir`` or through the
``HOMEOSTAT_DATA_DIR`` environment variable; everything else has a default.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from homeonet.drift import SEASONAL_SCHEDULES
from homeonet.homeostat import CONTROLLERS, STEP_RULES

DATA_DIR_ENV = "HOMEOSTAT_DATA_DIR"

IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "val_images": "t10k-images-idx3-ubyte",
    "val_labels": "t10k-labels-idx1-ubyte",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    data_dir: str = ""
    dataset: str = "mnist"
    train_images: str = ""
    train_labels: str = ""
    val_images: str = ""
    val_labels: str = ""
    train_size: int = 5000
    val_size: int = 1000
    epochs: int = 20
    epoch_length: int = 5000
    learners: list = field(default_factory=lambda: list(CONTROLLERS))
    shift_mode: str = "constant"
    shift_rates: list = field(default_factory=lambda: [0.0, 1.0, 5.0, 10.0, 50.0])
    schedules: list = field(default_factory=lambda: ["A"])
    season_epochs: int = 0
    lr_init: float = 0.005
    delta: float = 0.2
    lr_min: float = 1e-5
    lr_max: float = 0.5
    step_rule: str = "additive"
    store_capacity: int = 100
    store_passes: int = 1
    realized_effect: str = "true_label"
    hidden: list = field(default_factory=lambda: [80, 60])
    replicates: int = 5
    seed: int = 0
    eval_interval: int = 1000
    out_dir: str = "results"
    threads: int = 1
    step_log: bool = False
    write_events: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"{key}: {why}")

        for key in ("train_size", "val_size", "epochs", "epoch_length", "replicates",
                    "eval_interval", "store_capacity", "store_passes", "threads"):
            if getattr(self, key) < 1:
                bad(key, "must be at least 1")
        if self.eval_interval > self.epoch_length:
            bad("eval_interval", "must not exceed epoch_length")
        if self.seed < 0:
            bad("seed", "must be nonnegative")
        if not self.learners or any(k not in CONTROLLERS for k in self.learners):
            bad("learners", f"choose from {', '.join(CONTROLLERS)}")
        if self.shift_mode not in ("constant", "seasonal"):
            bad("shift_mode", "must be 'constant' or 'seasonal'")
        if any(r < 0 for r in self.shift_rates):
            bad("shift_rates", "rates must be nonnegative")
        if any(r > self.epoch_length for r in self.shift_rates):
            bad("shift_rates", "a rate cannot exceed epoch_length")
        if self.shift_mode == "constant" and not self.shift_rates:
            bad("shift_rates", "at least one rate is required")
        if any(s not in SEASONAL_SCHEDULES for s in self.schedules):
            bad("schedules", f"choose from {', '.join(SEASONAL_SCHEDULES)}")
        if self.season_epochs < 0:
            bad("season_epochs", "must be nonnegative")
        if self.step_rule not in STEP_RULES:
            bad("step_rule", f"choose from {', '.join(STEP_RULES)}")
        if self.realized_effect not in ("true_label", "predicted_label"):
            bad("realized_effect", "must be 'true_label' or 'predicted_label'")
        if not 0 < self.lr_min <= self.lr_init <= self.lr_max:
            bad("lr_init", "need 0 < lr_min <= lr_init <= lr_max")
        if self.delta <= 0:
            bad("delta", "must be positive")
        if not self.hidden or min(self.hidden) < 1:
            bad("hidden", "need at least one positive layer width")

    @property
    def layer_dims(self) -> tuple:
        return (784, *self.hidden, 10)

    def data_paths(self) -> dict:
        """Resolved IDX paths; a ``.gz`` sibling is used when the plain file is absent."""
        base = Path(self.data_dir or os.environ.get(DATA_DIR_ENV, ""))
        out = {}
        for key, name in IDX_NAMES.items():
            explicit = getattr(self, key)
            if explicit:
                out[key] = Path(explicit)
                continue
            path = base / name
            if not path.exists() and (base / (name + ".gz")).exists():
                path = base / (name + ".gz")
            out[key] = path
        return out

    def check_paths(self) -> None:
        for key, path in self.data_paths().items():
            if not path.is_file():
                raise FileNotFoundError(f"{key}: no such file {path}")


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_LIST_TYPES = {"learners": str, "shift_rates": float, "schedules": str, "hidden": int}


def _convert(key: str, raw: str):
    kind = _FIELDS[key].type
    if key in _LIST_TYPES:
        items = [p.strip() for p in raw.split(",") if p.strip()]
        return [_LIST_TYPES[key](p) for p in items]
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(text: str, env: dict | None = None) -> ExperimentConfig:
    """Parse a config document; raises :class:`ConfigError` naming key and line."""
    env = os.environ if env is None else env
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    if not values.get("data_dir") and not env.get(DATA_DIR_ENV):
        explicit = all(values.get(k) for k in IDX_NAMES)
        if not explicit:
            raise ConfigError(f"missing required key 'data_dir' (or set {DATA_DIR_ENV})")
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        where = next((n for n, l in enumerate(text.splitlines(), 1)
                      if l.split("=", 1)[0].strip() == key), None)
        prefix = f"line {where}: " if where else ""
        raise ConfigError(f"{prefix}{exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    lines = [f"{f.name} = {_format(getattr(config, f.name))}"
             for f in dataclasses.fields(config)]
    return "\n".join(lines) + "\n"
