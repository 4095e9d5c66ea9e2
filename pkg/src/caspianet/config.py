"""Plain-text run configuration: ``key = value`` lines against a fixed schema.

Blank lines and ``#`` comments are ignored.  Unknown keys and malformed
values are rejected.  The resolved config is written next to every run's
outputs so the file doubles as a record of what was run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .attention import BLOCK_KINDS
from .curriculum import CURRICULUM_STAGES, TrainConfig, noisy_student_stages
from .data import AugmentConfig, PhantomSpec
from .network import NetConfig, variant_placement

RESOLVED_NAME = "run_config.txt"


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text

    return parse


VARIANTS = ("default", "baseline") + tuple(k for k in BLOCK_KINDS if k != "none") + (
    "saam+caam",
    "caspian+multiplanar",
    "caspian+multiscale",
)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


SCHEMA: dict[str, Key] = {
    "seed": Key(int, 0, "master seed for every random stream"),
    # phantoms
    "phantom.count": Key(int, 20, "number of phantoms to generate"),
    "phantom.first_id": Key(int, 0, "seed/id of the first phantom"),
    "phantom.extent": Key(int, 32, "cube edge length in voxels"),
    "phantom.lesions": Key(int, 1, "lesions per phantom"),
    "phantom.noise": Key(float, 0.08, "additive Gaussian noise sigma"),
    "phantom.labels": Key(_bool, True, "write label volumes"),
    # network
    "net.levels": Key(int, 3, "encoder levels"),
    "net.base_channels": Key(int, 8, "channels at level 1"),
    "net.crop": Key(int, 32, "training/inference crop edge"),
    "net.variant": Key(_choice(*VARIANTS), "default", "attention placement variant"),
    # training
    "train.epochs": Key(int, 60, "epochs per training run"),
    "train.batch_size": Key(int, 2, "samples per step"),
    "train.lr": Key(float, 1e-3, "base learning rate of the poly schedule"),
    "train.optimizer": Key(_choice("sgd", "adam"), "sgd", "optimizer"),
    "train.momentum": Key(float, 0.9, "SGD momentum"),
    "train.eval_every": Key(int, 10, "validation cadence in epochs"),
    "train.augment": Key(_bool, True, "flip/rotate/intensity augmentation"),
    # curriculum
    "curriculum.plan": Key(_choice("curriculum", "noisy_student"), "curriculum", "noise schedule"),
    "curriculum.teacher_epochs": Key(int, 60, "teacher training epochs"),
    "curriculum.stage_epochs": Key(int, 60, "epochs per student stage"),
    "curriculum.iterations": Key(int, 2, "student iterations for the noisy_student plan"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict[str, Any]

    @classmethod
    def defaults(cls) -> RunConfig:
        return cls({k: v.default for k, v in SCHEMA.items()})

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def set(self, key: str, value: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            try:
                value = SCHEMA[key].parse(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        self.values[key] = value

    def dumps(self) -> str:
        lines = []
        for k, spec in SCHEMA.items():
            v = self.values[k]
            text = str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
            lines.append(f"# {spec.help}\n{k} = {text}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / RESOLVED_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    # -- typed views -------------------------------------------------------

    def phantom_spec(self, seed: int) -> PhantomSpec:
        return PhantomSpec.scaled(
            self["phantom.extent"],
            lesions=self["phantom.lesions"],
            noise=self["phantom.noise"],
            seed=seed,
        )

    def net_config(self, variant: str | None = None) -> NetConfig:
        levels = self["net.levels"]
        v = variant or self["net.variant"]
        placement = None if v == "default" else variant_placement(levels, v)
        return NetConfig(
            levels=levels,
            base_channels=self["net.base_channels"],
            crop=self["net.crop"],
            placement=placement,
            seed=self["seed"],
        )

    def train_config(self) -> TrainConfig:
        crop = self["net.crop"]
        aug = AugmentConfig(crop=crop) if self["train.augment"] else AugmentConfig.identity(crop)
        return TrainConfig(
            epochs=self["train.epochs"],
            batch_size=self["train.batch_size"],
            base_lr=self["train.lr"],
            optimizer=self["train.optimizer"],
            momentum=self["train.momentum"],
            eval_every=self["train.eval_every"],
            seed=self["seed"],
            augment=aug,
        )

    def stages(self):
        if self["curriculum.plan"] == "curriculum":
            return CURRICULUM_STAGES
        return noisy_student_stages(self["curriculum.iterations"])


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig.defaults()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {n}: {exc}") from None
    return cfg


def load(path) -> RunConfig:
    return parse(Path(path).read_text())
