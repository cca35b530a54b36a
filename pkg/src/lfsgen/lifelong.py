"""Task ordering, per-task training over a frozen base, and the modulator registry.

A task trains nothing but its own modulator set: the base generator is hashed
before and after every run and the discriminator is created fresh per task and
discarded. Generation for any learned task loads that task's checkpoint and
replays seeded latents, so earlier tasks reproduce byte-identically no matter
how many tasks were trained afterwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_modulators, save_modulators
from .left import ActivationKind, ModulatorSet
from .losses import CmsConfig, adv_d_loss, adv_g_loss, cms_loss, total_g_loss
from .metrics import DownsampledL1, PerceptualDistance
from .nets import (
    DiscriminatorConfig,
    GeneratorConfig,
    Weights,
    discriminator_forward,
    generator_forward,
    identity_modulator_set,
    init_discriminator,
    weights_hash,
)

TaskSequence = list[str]


@dataclass
class TaskSpec:
    task_id: str
    images: torch.Tensor  # (k, 3, res, res) in [-1, 1]
    resolution: int

    def __post_init__(self) -> None:
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise ValueError(f"task {self.task_id}: need a (k, 3, h, w) batch with k >= 1")
        if self.images.shape[-1] != self.resolution or self.images.shape[-2] != self.resolution:
            raise ValueError(f"task {self.task_id}: images do not match resolution {self.resolution}")

    @property
    def k(self) -> int:
        return self.images.shape[0]


@dataclass
class TrainConfig:
    lr: float = 0.002
    adam_betas: tuple[float, float] = (0.0, 0.99)
    batch_size: int = 4
    iterations: int = 2000
    cms: CmsConfig = field(default_factory=CmsConfig)
    seed: int = 0
    rank: int = 1
    with_bias: bool = True
    act: ActivationKind = ActivationKind.RELU
    d_steps: int = 1
    g_steps: int = 1

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class TrainLog:
    d_loss: list[float] = field(default_factory=list)
    g_adv: list[float] = field(default_factory=list)
    g_cms: list[float] = field(default_factory=list)
    g_total: list[float] = field(default_factory=list)
    base_hash_before: str = ""
    base_hash_after: str = ""

    def to_csv(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "d_loss", "g_adv", "g_cms", "g_total"])
            for i, row in enumerate(zip(self.d_loss, self.g_adv, self.g_cms, self.g_total)):
                writer.writerow([i, *(f"{v:.6f}" for v in row)])


# --- task ordering --------------------------------------------------------------


@dataclass
class DistanceMatrix:
    names: list[str]
    values: np.ndarray  # symmetric, shape (n, n)

    def __post_init__(self) -> None:
        n = len(self.names)
        if self.values.shape != (n, n):
            raise ValueError(f"matrix shape {self.values.shape} does not match {n} names")
        if len(set(self.names)) != n:
            raise ValueError("duplicate domain names")

    def get(self, a: str, b: str) -> float:
        return float(self.values[self.names.index(a), self.names.index(b)])

    @classmethod
    def from_csv(cls, path: Path | str) -> "DistanceMatrix":
        with Path(path).open(newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        if len(rows) < 2:
            raise ValueError(f"distance matrix {path} is empty")
        names = [c.strip() for c in rows[0][1:]]
        values = np.zeros((len(names), len(names)))
        for row in rows[1:]:
            i = names.index(row[0].strip())
            for j, cell in enumerate(row[1 : len(names) + 1]):
                cell = cell.strip()
                if cell:
                    v = float(cell)
                    values[i, j] = v
                    values[j, i] = v
        return cls(names=names, values=values)

    def to_csv(self, path: Path | str) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + self.names)
            for i, name in enumerate(self.names):
                writer.writerow([name] + [f"{v:.6f}" for v in self.values[i]])


def order_tasks(matrix: DistanceMatrix, source_domain: str) -> TaskSequence:
    """Greedy most-distant-next ordering; ties break alphabetically."""
    if source_domain not in matrix.names:
        raise ValueError(f"source domain {source_domain!r} not in matrix")
    remaining = sorted(n for n in matrix.names if n != source_domain)
    current = source_domain
    sequence: TaskSequence = []
    while remaining:
        nxt = min(remaining, key=lambda name: (-matrix.get(current, name), name))
        sequence.append(nxt)
        remaining.remove(nxt)
        current = nxt
    return sequence


def distance_matrix_from_folders(
    task_images: dict[str, torch.Tensor], dist: PerceptualDistance
) -> DistanceMatrix:
    """Mean cross-domain perceptual distance for every pair of image folders."""
    names = sorted(task_images)
    n = len(names)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = dist.pairwise(task_images[names[i]], task_images[names[j]])
            values[i, j] = values[j, i] = float(d.mean())
    return DistanceMatrix(names=names, values=values)


# --- training -------------------------------------------------------------------


def train_task(
    weights: Weights,
    gen_config: GeneratorConfig,
    task: TaskSpec,
    cfg: TrainConfig,
    *,
    dist: PerceptualDistance | None = None,
    disc_config: DiscriminatorConfig | None = None,
) -> tuple[ModulatorSet, TrainLog]:
    """Adversarial training of one fresh identity-initialized modulator set.

    Alternating discriminator/generator Adam steps; the generator objective is
    the adversarial loss plus the weighted cluster-wise mode seeking loss over
    an oversampled batch anchored at the step's real images. Base weights are
    hash-checked to be untouched.
    """
    if task.resolution != gen_config.target_resolution:
        raise ValueError(
            f"task resolution {task.resolution} vs generator {gen_config.target_resolution}"
        )
    dist = dist if dist is not None else DownsampledL1()
    log = TrainLog(base_hash_before=weights_hash(weights))

    g = torch.Generator().manual_seed(cfg.seed)
    mods = identity_modulator_set(
        gen_config, task.task_id, cfg.rank, cfg.with_bias, cfg.act, generator=g
    ).requires_grad_(True)
    dcfg = disc_config or DiscriminatorConfig(resolution=gen_config.target_resolution)
    d_seed = int(torch.randint(0, 2**31 - 1, (1,), generator=g))
    dw = init_discriminator(dcfg, d_seed)

    opt_g = torch.optim.Adam(mods.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
    opt_d = torch.optim.Adam(list(dw.values()), lr=cfg.lr, betas=cfg.adam_betas)

    use_cms = cfg.cms.enabled
    B = cfg.batch_size
    noise_gen = g if gen_config.noise_injection else None
    for _ in range(cfg.iterations):
        idx = torch.randint(0, task.k, (B,), generator=g)
        real = task.images[idx]

        for _ in range(cfg.d_steps):
            z = torch.randn(B, gen_config.z_dim, generator=g)
            with torch.no_grad():
                fake = generator_forward(
                    weights, mods, z, gen_config, noise_generator=noise_gen
                ).image
            d_l = adv_d_loss(
                discriminator_forward(dw, real, dcfg), discriminator_forward(dw, fake, dcfg)
            )
            opt_d.zero_grad()
            d_l.backward()
            opt_d.step()

        for _ in range(cfg.g_steps):
            n_gen = cfg.cms.oversample_factor * B if use_cms else B
            z = torch.randn(n_gen, gen_config.z_dim, generator=g)
            rec = generator_forward(weights, mods, z, gen_config, noise_generator=noise_gen)
            adv = adv_g_loss(discriminator_forward(dw, rec.image[:B], dcfg))
            cms = (
                cms_loss(rec, real, dist, cfg.cms)
                if use_cms
                else torch.zeros((), dtype=rec.image.dtype)
            )
            g_l = total_g_loss(adv, cms, cfg.cms)
            opt_g.zero_grad()
            g_l.backward()
            opt_g.step()

        log.d_loss.append(float(d_l.detach()))
        log.g_adv.append(float(adv.detach()))
        log.g_cms.append(float(cms.detach()))
        log.g_total.append(float(g_l.detach()))

    log.base_hash_after = weights_hash(weights)
    if log.base_hash_after != log.base_hash_before:
        raise RuntimeError("base weights changed during training; freezing contract broken")
    mods.requires_grad_(False)
    for p in mods.parameters():
        p.grad = None
    return mods, log


# --- registry & generation -------------------------------------------------------


class UnknownTaskError(KeyError):
    pass


class ModulatorRegistry:
    """One checkpoint file per task, ``<task_id>.left``, inside one directory."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def path(self, task_id: str) -> Path:
        return self.root / f"{task_id}.left"

    def save(self, mods: ModulatorSet) -> Path:
        p = self.path(mods.task_id)
        save_modulators(mods, p)
        return p

    def load(self, task_id: str) -> ModulatorSet:
        p = self.path(task_id)
        if not p.exists():
            raise UnknownTaskError(f"no modulators stored for task {task_id!r} in {self.root}")
        return load_modulators(p)

    def task_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.left"))


def generate_for_task(
    weights: Weights,
    gen_config: GeneratorConfig,
    registry: ModulatorRegistry,
    task_id: str,
    seed: int,
    n: int,
    batch: int = 64,
) -> torch.Tensor:
    """n seeded images for a stored task; fully deterministic."""
    mods = registry.load(task_id)
    g = torch.Generator().manual_seed(seed)
    res = gen_config.target_resolution
    out = []
    remaining = n
    while remaining > 0:
        m = min(batch, remaining)
        z = torch.randn(m, gen_config.z_dim, generator=g)
        with torch.no_grad():
            rec = generator_forward(
                weights, mods, z, gen_config, noise_generator=g if gen_config.noise_injection else None
            )
        out.append(rec.image)
        remaining -= m
    if not out:
        return torch.empty(0, 3, res, res)
    return torch.cat(out)
