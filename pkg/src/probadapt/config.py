"""Flat key-value experiment configuration: parse, validate, serialise, hash.

The document format is one ``key = value`` pair per line, ``#`` comments, and
a fixed schema: unknown keys are rejected by name. Serialisation is canonical
(fixed key order, repr-formatted floats), so the config hash is stable under
reordering of the input document.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .data import GeneratorSpec, Shift
from .errors import ConfigError
from .losses import BETA_VARIANTS, PENALTY_VARIANTS
from .trainer import PdaConfig, ScheduleConfig, TrainConfig

MODES = ("uda", "pda", "baseline", "fig1", "ablation_beta", "ablation_penalty",
         "ablation_components")


@dataclass
class ExperimentConfig:
    mode: str = "uda"
    seed: int = 0
    outputs: str = "runs/default"
    # generator
    input_dim: int = 6
    pretrain_classes: int = 16
    task_classes: int = 4
    samples_per_class: int = 50
    rotation: float = math.pi / 4
    translation: tuple[float, ...] = ()
    noise_scale: float = 0.32
    target_class_count: int | None = None
    # schedules
    eta0: float = 0.0075
    tau: float = 3e-4
    upsilon: float = 0.75
    head_lr_multiplier: float = 10.0
    lambda1: float = 1.0
    lambda2_a: float = 1.0
    lambda3_a: float = 0.25
    delta: float = 10.0
    lambda_form: str = "logistic"
    # training
    epochs: int = 20
    batch_size: int = 16
    cgi_updates_backbone: bool = False
    beta_variant: str = "exp_neg_kl"
    penalty_variant: str = "CGI"
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing: float = 0.1
    focal_gamma: float | None = None
    pda_threshold: int = 14
    # pretraining stand-in
    pretrain_epochs: int = 30
    pretrain_lr: float = 0.05

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            input_dim=self.input_dim, pretrain_classes=self.pretrain_classes,
            task_classes=self.task_classes, samples_per_class=self.samples_per_class,
            shift=Shift(rotation=self.rotation, translation=self.translation,
                        noise_scale=self.noise_scale),
            seed=self.seed, target_class_count=self.target_class_count)

    def schedule_config(self, lambda2_a: float | None = None,
                        lambda3_a: float | None = None) -> ScheduleConfig:
        return ScheduleConfig(
            eta0=self.eta0, tau=self.tau, upsilon=self.upsilon,
            head_lr_multiplier=self.head_lr_multiplier, lambda1=self.lambda1,
            lambda2_a=self.lambda2_a if lambda2_a is None else lambda2_a,
            lambda3_a=self.lambda3_a if lambda3_a is None else lambda3_a,
            delta=self.delta, lambda_form=self.lambda_form)

    def train_config(self, with_pda: bool = False,
                     cgi_updates_backbone: bool | None = None,
                     beta_variant: str | None = None,
                     penalty_variant: str | None = None,
                     pda_threshold: int | None = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
            cgi_updates_backbone=(self.cgi_updates_backbone
                                  if cgi_updates_backbone is None else cgi_updates_backbone),
            beta_variant=self.beta_variant if beta_variant is None else beta_variant,
            penalty_variant=(self.penalty_variant
                             if penalty_variant is None else penalty_variant),
            pda=PdaConfig(self.pda_threshold if pda_threshold is None else pda_threshold)
            if with_pda else None,
            momentum=self.momentum, weight_decay=self.weight_decay,
            label_smoothing=self.label_smoothing, focal_gamma=self.focal_gamma)


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(part) for part in text.split(","))


def _parse_optional_int(text: str):
    return None if not text.strip() or text.strip().lower() == "none" else int(text)


def _parse_optional_float(text: str):
    return None if not text.strip() or text.strip().lower() == "none" else float(text)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


# key -> (attribute, parser, validator or None)
SCHEMA: dict[str, tuple[str, object, object]] = {
    "mode": ("mode", str, lambda v: v in MODES),
    "seed": ("seed", int, None),
    "outputs": ("outputs", str, None),
    "generator.input_dim": ("input_dim", int, lambda v: v >= 2),
    "generator.pretrain_classes": ("pretrain_classes", int, lambda v: v >= 2),
    "generator.task_classes": ("task_classes", int, lambda v: v >= 2),
    "generator.samples_per_class": ("samples_per_class", int, lambda v: v >= 1),
    "generator.rotation": ("rotation", float, None),
    "generator.translation": ("translation", _parse_floats, None),
    "generator.noise_scale": ("noise_scale", float, lambda v: v >= 0),
    "generator.target_class_count": ("target_class_count", _parse_optional_int, None),
    "schedule.eta0": ("eta0", float, lambda v: v > 0),
    "schedule.tau": ("tau", float, lambda v: v >= 0),
    "schedule.upsilon": ("upsilon", float, lambda v: v > 0),
    "schedule.head_lr_multiplier": ("head_lr_multiplier", float, lambda v: v > 0),
    "schedule.lambda1": ("lambda1", float, lambda v: v >= 0),
    "schedule.lambda2_a": ("lambda2_a", float, lambda v: v >= 0),
    "schedule.lambda3_a": ("lambda3_a", float, lambda v: v >= 0),
    "schedule.delta": ("delta", float, lambda v: v > 0),
    "schedule.lambda_form": ("lambda_form", str, lambda v: v in ("logistic", "exp")),
    "train.epochs": ("epochs", int, lambda v: v >= 1),
    "train.batch_size": ("batch_size", int, lambda v: v >= 1),
    "train.cgi_updates_backbone": ("cgi_updates_backbone", _parse_bool, None),
    "train.beta_variant": ("beta_variant", str, lambda v: v in BETA_VARIANTS),
    "train.penalty_variant": ("penalty_variant", str, lambda v: v in PENALTY_VARIANTS),
    "train.momentum": ("momentum", float, lambda v: 0 <= v < 1),
    "train.weight_decay": ("weight_decay", float, lambda v: v >= 0),
    "train.label_smoothing": ("label_smoothing", float, lambda v: 0 <= v < 1),
    "train.focal_gamma": ("focal_gamma", _parse_optional_float,
                          lambda v: v is None or v == 0 or v >= 1),
    "train.pda_threshold": ("pda_threshold", int, lambda v: v >= 0),
    "pretrain.epochs": ("pretrain_epochs", int, lambda v: v >= 0),
    "pretrain.lr": ("pretrain_lr", float, lambda v: v > 0),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a flat key-value document; defaults fill the rest."""
    cfg = ExperimentConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        attr, parser, check = SCHEMA[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: cannot parse {value!r} ({exc})") from exc
        if check is not None and not check(parsed):
            raise ConfigError(f"key {key!r}: value {parsed!r} violates its constraint")
        setattr(cfg, attr, parsed)
    if cfg.task_classes > cfg.pretrain_classes:
        raise ConfigError("key 'generator.task_classes': must not exceed pretrain_classes")
    if cfg.target_class_count is not None and not (1 <= cfg.target_class_count <= cfg.task_classes):
        raise ConfigError("key 'generator.target_class_count': out of range")
    if cfg.translation and len(cfg.translation) != cfg.input_dim:
        raise ConfigError("key 'generator.translation': length must equal generator.input_dim")
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical document: every key in schema order."""
    lines = [f"{key} = {_fmt(getattr(cfg, attr))}" for key, (attr, _, _) in SCHEMA.items()]
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:16]
