"""Experiment configuration: flat key-value text with dotted namespaces.

A config file holds lines like ``model.d = 64`` with ``#`` comments;
command-line ``--set key=value`` overrides win over the file, and dedicated
flags (``--dataset``, ``--seed``, ``--out``) win over both.  Every run
serializes its effective config back to text, so a run is reproducible from
that file alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

from .augment import AugmentOp, default_ops
from .encoder import EncoderConfig
from .losses import LossWeights
from .training import TrainConfig

# Per-dataset contrastive weights (matched on data.name, case-insensitive).
DATASET_WEIGHTS = {
    "sports": {"lam": 0.04, "beta": 0.4},
    "beauty": {"lam": 0.0, "beta": 0.05},
    "yelp": {"lam": 0.03, "beta": 0.1},
}

FALLBACK_WEIGHTS = {"lam": 0.1, "beta": 0.1}


@dataclass
class DataSection:
    path: str = ""
    name: str = ""
    min_interactions: int = 5


@dataclass
class ModelSection:
    d: int = 64
    n: int = 50
    blocks: int = 2
    heads: int = 2
    dropout: float = 0.5


@dataclass
class AugSection:
    ops: tuple[str, ...] = ("crop", "mask", "reorder")
    crop_ratio: float = 0.6
    mask_ratio: float = 0.3
    reorder_ratio: float = 0.2


@dataclass
class LossSection:
    lam: Optional[float] = None  # config key: loss.lambda
    beta: Optional[float] = None
    gamma: Optional[float] = None
    tau: float = 1.0


@dataclass
class TrainSection:
    lr_theta: float = 1e-3
    lr_phi: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    patience: int = 10
    variant: str = "full"
    seed: int = 42
    stage_schedule: str = "batch"
    log_steps: bool = False


@dataclass
class EvalSection:
    ks: tuple[int, ...] = (5, 10, 20)
    batch_size: int = 256


@dataclass
class SweepSection:
    batch_sizes: tuple[int, ...] = (64, 128, 256)
    noise_ratios: tuple[float, ...] = (0.0, 0.05, 0.10, 0.15, 0.20, 0.30)
    noise_seeds: int = 1


@dataclass
class GridSection:
    lambdas: tuple[float, ...] = (0.01, 0.05, 0.1, 0.5)
    betas: tuple[float, ...] = (0.01, 0.05, 0.1, 0.5)


@dataclass
class GroupsSection:
    bounds: str = "=5,6-8,>8"
    train_per_group: bool = False


@dataclass
class RunSection:
    out: str = ""
    seeds: tuple[int, ...] = (42,)


# Config keys that cannot reuse the field name directly.
KEY_ALIASES = {"loss.lambda": ("loss", "lam")}


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    aug: AugSection = field(default_factory=AugSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    grid: GridSection = field(default_factory=GridSection)
    groups: GroupsSection = field(default_factory=GroupsSection)
    run: RunSection = field(default_factory=RunSection)

    # ---- typed products -------------------------------------------------

    def loss_weights(self) -> LossWeights:
        """Resolve weights, falling back to the per-dataset defaults."""
        defaults = DATASET_WEIGHTS.get(self.data.name.lower(), FALLBACK_WEIGHTS)
        lam = self.loss.lam if self.loss.lam is not None else defaults["lam"]
        beta = self.loss.beta if self.loss.beta is not None else defaults["beta"]
        return LossWeights(
            lam=lam, beta=beta, gamma=self.loss.gamma, temperature=self.loss.tau
        )

    def encoder_config(self, n_items: int) -> EncoderConfig:
        m = self.model
        return EncoderConfig(
            n_items=n_items,
            d=m.d,
            n=m.n,
            blocks=m.blocks,
            heads=m.heads,
            dropout=m.dropout,
        )

    def augment_ops(self) -> tuple[AugmentOp, ...]:
        a = self.aug
        return default_ops(a.ops, a.crop_ratio, a.mask_ratio, a.reorder_ratio)

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            lr_theta=t.lr_theta,
            lr_phi=t.lr_phi,
            weights=self.loss_weights(),
            batch_size=t.batch_size,
            epochs=t.epochs,
            patience=t.patience,
            variant=t.variant,
            seed=t.seed if seed is None else seed,
            stage_schedule=t.stage_schedule,
            log_steps=t.log_steps,
        )

    # ---- flat text round-trip -------------------------------------------

    def _sections(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def set_key(self, key: str, raw: str) -> None:
        section_name, field_name = KEY_ALIASES.get(
            key, tuple(key.split(".", 1)) if "." in key else ("", "")
        )
        section = self._sections().get(section_name)
        if section is None or field_name not in {f.name for f in fields(section)}:
            raise KeyError(key)
        current = getattr(section, field_name)
        setattr(section, field_name, _parse_value(key, raw, current))

    def to_text(self) -> str:
        lines: list[str] = []
        alias_by_field = {v: k for k, v in KEY_ALIASES.items()}
        for section_name, section in self._sections().items():
            for f in fields(section):
                value = getattr(section, f.name)
                if value is None:
                    continue
                key = alias_by_field.get(
                    (section_name, f.name), f"{section_name}.{f.name}"
                )
                lines.append(f"{key} = {_format_value(value)}")
        return "\n".join(lines) + "\n"


# Element type per tuple-valued key; everything else is inferred from the
# current (default) value.
_TUPLE_ELEMENT_TYPES = {
    "aug.ops": str,
    "eval.ks": int,
    "sweep.batch_sizes": int,
    "sweep.noise_ratios": float,
    "grid.lambdas": float,
    "grid.betas": float,
    "run.seeds": int,
}

# Keys whose default is None, so type cannot be inferred from the value.
_OPTIONAL_FLOAT_KEYS = {"loss.lambda", "loss.beta", "loss.gamma"}


def _parse_value(key: str, raw: str, current: object) -> object:
    raw = raw.strip()
    if key in _TUPLE_ELEMENT_TYPES:
        element = _TUPLE_ELEMENT_TYPES[key]
        if not raw:
            return ()
        return tuple(element(part.strip()) for part in raw.split(","))
    if key in _OPTIONAL_FLOAT_KEYS:
        return None if raw.lower() in ("", "none") else float(raw)
    if isinstance(current, bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: cannot parse boolean from {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def _format_value(value: object) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_config_text(
    text: str, base: Optional[ExperimentConfig] = None, source: str = "<config>"
) -> ExperimentConfig:
    """Apply ``key = value`` lines on top of ``base`` (or fresh defaults).

    Raises:
        ValueError: listing every unknown key, or on an unparsable line.
    """
    cfg = base if base is not None else ExperimentConfig()
    unknown: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(
                f"{source}:{lineno}: expected 'key = value', got {line.rstrip()!r}"
            )
        key, raw = (part.strip() for part in stripped.split("=", 1))
        try:
            cfg.set_key(key, raw)
        except KeyError:
            unknown.append(key)
    if unknown:
        raise ValueError(f"{source}: unknown config keys: {', '.join(unknown)}")
    return cfg


def load_config(
    path: Optional[str] = None, overrides: tuple[str, ...] = ()
) -> ExperimentConfig:
    """Build the effective config: defaults, then file, then overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as handle:
            cfg = parse_config_text(handle.read(), cfg, source=path)
    unknown: list[str] = []
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        try:
            cfg.set_key(key, raw)
        except KeyError:
            unknown.append(key)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return cfg
