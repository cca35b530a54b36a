"""Flat key=value run configuration with documented defaults.

Unknown keys are rejected so typos fail loudly. A missing config file means
all defaults; command-line flags override individual keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .left import ActivationKind
from .losses import CmsConfig
from .lifelong import TrainConfig
from .metrics import DISTANCES, PerceptualDistance
from .nets import GeneratorConfig


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip())


def _parse_str_list(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


# key -> (default as string, parser, description)
CONFIG_KEYS: dict[str, tuple[str, Callable[[str], Any], str]] = {
    # generator
    "z_dim": ("64", int, "latent size"),
    "w_dim": ("64", int, "intermediate latent size"),
    "mapping_layers": ("3", int, "FC layers in the mapping network"),
    "base_resolution": ("4", int, "resolution of the learned constant"),
    "target_resolution": ("32", int, "output resolution (16/32/64)"),
    "channels": ("128,64,32", _parse_int_list, "channel width per synthesis block"),
    "noise_injection": ("false", _parse_bool, "per-block noise injection"),
    "modulate_affine": ("false", _parse_bool, "also modulate the style affine layers"),
    "base_seed": ("1000", int, "seed deriving the frozen base generator weights"),
    # training
    "lr": ("0.002", float, "Adam learning rate"),
    "adam_beta1": ("0.0", float, "Adam beta1"),
    "adam_beta2": ("0.99", float, "Adam beta2"),
    "batch_size": ("4", int, "real images per step"),
    "iterations": ("2000", int, "training steps per task"),
    "seed": ("0", int, "training/latent seed"),
    "rank": ("1", int, "modulator rank"),
    "with_bias": ("true", _parse_bool, "use the reconstruction bias path"),
    "activation": ("relu", str, "reconstruction activation"),
    "d_steps": ("1", int, "discriminator updates per iteration"),
    "g_steps": ("1", int, "generator updates per iteration"),
    # cluster-wise mode seeking loss
    "cms_lambda": ("1.0", float, "weight of the cluster-wise mode seeking loss"),
    "cms_use_dw": ("true", _parse_bool, "maximize latent distance per noise distance"),
    "cms_use_df": ("true", _parse_bool, "maximize feature distance per latent distance"),
    "cms_use_di": ("true", _parse_bool, "maximize image distance per latent distance"),
    "cms_epsilon": ("1e-5", float, "denominator guard"),
    "cms_oversample": ("4", int, "generated samples per real image for clustering"),
    # metrics
    "distance": ("downsampled_l1", str, "perceptual distance (downsampled_l1/random_conv)"),
    "eval_diversity_samples": ("200", int, "generated images for diversity metrics"),
    "eval_frechet_samples": ("500", int, "generated images for the Frechet distance"),
    # data / paths / toy tasks
    "data_dir": ("data", str, "directory of task subdirectories"),
    "out_dir": ("runs", str, "output directory (checkpoints, logs, metrics)"),
    "task_order": ("", _parse_str_list, "explicit task sequence; empty = sorted ids"),
    "source_domain": ("", str, "source domain name for the ordering command"),
    "distance_matrix": ("", str, "CSV distance matrix for the ordering command"),
    "shots": ("10", int, "images per toy task"),
}


@dataclass
class RunConfig:
    raw: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.raw[key]

    @property
    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(
            z_dim=self.raw["z_dim"],
            w_dim=self.raw["w_dim"],
            mapping_layers=self.raw["mapping_layers"],
            base_resolution=self.raw["base_resolution"],
            target_resolution=self.raw["target_resolution"],
            channels=self.raw["channels"],
            noise_injection=self.raw["noise_injection"],
            modulate_affine=self.raw["modulate_affine"],
        )

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(
            lr=self.raw["lr"],
            adam_betas=(self.raw["adam_beta1"], self.raw["adam_beta2"]),
            batch_size=self.raw["batch_size"],
            iterations=self.raw["iterations"],
            cms=CmsConfig(
                weight=self.raw["cms_lambda"],
                use_dw=self.raw["cms_use_dw"],
                use_df=self.raw["cms_use_df"],
                use_di=self.raw["cms_use_di"],
                epsilon=self.raw["cms_epsilon"],
                oversample_factor=self.raw["cms_oversample"],
            ),
            seed=self.raw["seed"],
            rank=self.raw["rank"],
            with_bias=self.raw["with_bias"],
            act=ActivationKind.from_name(self.raw["activation"]),
            d_steps=self.raw["d_steps"],
            g_steps=self.raw["g_steps"],
        )

    @property
    def data_dir(self) -> Path:
        return Path(self.raw["data_dir"])

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out_dir"])

    def make_distance(self) -> PerceptualDistance:
        name = self.raw["distance"]
        if name not in DISTANCES:
            raise ConfigError(f"unknown distance {name!r} (valid: {', '.join(DISTANCES)})")
        return DISTANCES[name]()


def default_config_text() -> str:
    lines = ["# lfsgen run configuration (key=value; # comments allowed)"]
    for key, (default, _, desc) in CONFIG_KEYS.items():
        lines.append(f"{key}={default}  # {desc}")
    return "\n".join(lines) + "\n"


def parse_config(
    path: Path | str | None, overrides: dict[str, str] | None = None
) -> RunConfig:
    text = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{p}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{p}:{lineno}: unknown key {key!r}")
            text[key] = value
    for key, value in (overrides or {}).items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        text[key] = value
    raw: dict[str, Any] = {}
    for key, (default, parser, _) in CONFIG_KEYS.items():
        value = text.get(key, default)
        try:
            raw[key] = parser(value)
        except ConfigError:
            raise
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({e})") from None
    cfg = RunConfig(raw=raw)
    try:
        cfg.generator
        cfg.train
        cfg.make_distance()
    except ConfigError:
        raise
    except (ValueError, NotImplementedError) as e:
        raise ConfigError(str(e)) from None
    return cfg
