"""Cluster assignment and diversity metrics over pluggable perceptual distances.

Generated images are clustered to the nearest training image (the anchor) and
diversity is scored per cluster. The balanced diversity score weights each
cluster's pairwise distance by the entropy term ``-p * log10(p)`` of its
occupancy ``p``, so collapsing all samples onto one anchor scores zero even
when that single cluster is internally diverse.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import numpy as np
import torch
import torch.nn.functional as F


@runtime_checkable
class PerceptualDistance(Protocol):
    def pairwise(self, xs: torch.Tensor, ys: torch.Tensor) -> torch.Tensor: ...

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> float: ...


def _chunked_l1(a: torch.Tensor, b: torch.Tensor, chunk: int = 64) -> torch.Tensor:
    out = torch.empty(a.shape[0], b.shape[0], dtype=a.dtype)
    for i in range(0, a.shape[0], chunk):
        out[i : i + chunk] = (a[i : i + chunk, None, :] - b[None, :, :]).abs().mean(dim=-1)
    return out


class DownsampledL1:
    """Mean absolute difference after bilinear downsampling to a small grid."""

    def __init__(self, size: int = 16):
        self.size = size

    def _embed(self, xs: torch.Tensor) -> torch.Tensor:
        xs = F.interpolate(xs, size=(self.size, self.size), mode="bilinear", align_corners=False)
        return xs.flatten(1)

    def pairwise(self, xs: torch.Tensor, ys: torch.Tensor) -> torch.Tensor:
        return _chunked_l1(self._embed(xs), self._embed(ys))

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> float:
        return float(self.pairwise(a.unsqueeze(0), b.unsqueeze(0))[0, 0])


class RandomConvFeatures:
    """Distance in the feature space of a fixed, seeded random conv bank.

    Two stride-2 conv layers; per layer the feature vectors are unit-normalized
    along channels and compared by L2, averaged over space and layers.
    """

    def __init__(self, seed: int = 0, channels: tuple[int, int] = (8, 16)):
        g = torch.Generator().manual_seed(seed)
        c1, c2 = channels
        self.w1 = torch.randn(c1, 3, 3, 3, generator=g) / math.sqrt(27)
        self.w2 = torch.randn(c2, c1, 3, 3, generator=g) / math.sqrt(c1 * 9)

    def _features(self, xs: torch.Tensor) -> list[torch.Tensor]:
        h1 = F.leaky_relu(F.conv2d(xs, self.w1.to(xs.dtype), stride=2, padding=1), 0.2)
        h2 = F.leaky_relu(F.conv2d(h1, self.w2.to(xs.dtype), stride=2, padding=1), 0.2)
        out = []
        for h in (h1, h2):
            norm = h.square().sum(dim=1, keepdim=True).sqrt() + 1e-10
            out.append((h / norm).flatten(2))  # (n, c, hw)
        return out

    def pairwise(self, xs: torch.Tensor, ys: torch.Tensor, chunk: int = 32) -> torch.Tensor:
        fx, fy = self._features(xs), self._features(ys)
        out = torch.zeros(xs.shape[0], ys.shape[0], dtype=xs.dtype)
        for hx, hy in zip(fx, fy):
            for i in range(0, hx.shape[0], chunk):
                d = hx[i : i + chunk, None] - hy[None, :]  # (chunk, m, c, hw)
                out[i : i + chunk] += d.square().sum(dim=2).sqrt().mean(dim=-1)
        return out / len(fx)

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> float:
        return float(self.pairwise(a.unsqueeze(0), b.unsqueeze(0))[0, 0])


DISTANCES: dict[str, Callable[[], PerceptualDistance]] = {
    "downsampled_l1": DownsampledL1,
    "random_conv": RandomConvFeatures,
}


@dataclass
class ClusterAssignment:
    """Partition of generated images into nearest-anchor clusters."""

    anchors: torch.Tensor  # (k, 3, h, w)
    images: torch.Tensor  # (N, 3, h, w)
    members: list[list[int]]  # per anchor, indices into images

    @property
    def k(self) -> int:
        return self.anchors.shape[0]

    @property
    def N(self) -> int:
        return self.images.shape[0]

    def validate(self) -> None:
        seen = sorted(i for ms in self.members for i in ms)
        if len(self.members) != self.k or seen != list(range(self.N)):
            raise ValueError("cluster members are not a partition of the images")


def assign_clusters(
    generated: torch.Tensor, anchors: torch.Tensor, dist: PerceptualDistance
) -> ClusterAssignment:
    """Assign each image to its nearest anchor; ties go to the lowest index."""
    if generated.shape[0] < 1 or anchors.shape[0] < 1:
        raise ValueError("need at least one generated image and one anchor")
    if generated.shape[-2:] != anchors.shape[-2:]:
        raise ValueError(
            f"resolution mismatch: generated {tuple(generated.shape[-2:])} vs "
            f"anchors {tuple(anchors.shape[-2:])}"
        )
    d = dist.pairwise(generated, anchors).detach().cpu().numpy()
    nearest = d.argmin(axis=1)  # numpy argmin picks the first (lowest) index on ties
    members: list[list[int]] = [[] for _ in range(anchors.shape[0])]
    for img_idx, anchor_idx in enumerate(nearest):
        members[int(anchor_idx)].append(img_idx)
    return ClusterAssignment(anchors=anchors, images=generated, members=members)


def p_lpips(cluster_images: torch.Tensor, dist: PerceptualDistance) -> float:
    """Mean pairwise distance within one cluster; fewer than 2 members -> 0."""
    n = cluster_images.shape[0]
    if n < 2:
        return 0.0
    d = dist.pairwise(cluster_images, cluster_images)
    iu = torch.triu_indices(n, n, offset=1)
    return float(d[iu[0], iu[1]].mean())


def i_lpips(assignment: ClusterAssignment, dist: PerceptualDistance) -> float:
    """Unweighted mean of per-cluster pairwise distance over clusters with >= 2 members."""
    vals = [
        p_lpips(assignment.images[ms], dist) for ms in assignment.members if len(ms) >= 2
    ]
    return float(np.mean(vals)) if vals else 0.0


def b_lpips(assignment: ClusterAssignment, dist: PerceptualDistance) -> float:
    """Entropy-weighted sum of per-cluster pairwise distances."""
    total = 0.0
    for ms in assignment.members:
        p = len(ms) / assignment.N
        if p == 0.0:
            continue
        w = -p * math.log10(p)
        if w == 0.0:
            continue
        total += w * p_lpips(assignment.images[ms], dist)
    return total


Embedding = Callable[[torch.Tensor], np.ndarray]


class DownsampledEmbedding:
    """Images -> flattened bilinear thumbnails, as float64 vectors."""

    def __init__(self, size: int = 8):
        self.size = size

    def __call__(self, images: torch.Tensor) -> np.ndarray:
        small = F.interpolate(
            images, size=(self.size, self.size), mode="bilinear", align_corners=False
        )
        return small.flatten(1).detach().cpu().numpy().astype(np.float64)


def _sqrtm_trace(m: np.ndarray) -> float:
    # symmetric eigen-decomposition; negative eigenvalues (round-off) clamp to 0
    vals = np.linalg.eigvalsh((m + m.T) / 2.0)
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def _sym_sqrtm(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_embedding_distance(
    real_images: torch.Tensor, fake_images: torch.Tensor, embed: Embedding
) -> float:
    """Frechet distance between Gaussian fits of the two embedding clouds."""
    er, ef = embed(real_images), embed(fake_images)
    if er.shape[0] < 2 or ef.shape[0] < 2:
        raise ValueError("need at least 2 samples on each side")
    if er.shape[1] != ef.shape[1]:
        raise ValueError(f"embedding dims differ: {er.shape[1]} vs {ef.shape[1]}")
    mu_r, mu_f = er.mean(axis=0), ef.mean(axis=0)
    cov_r = np.cov(er, rowvar=False)
    cov_f = np.cov(ef, rowvar=False)
    if er.shape[1] == 1:
        cov_r, cov_f = np.atleast_2d(cov_r), np.atleast_2d(cov_f)
    s_r = _sym_sqrtm(cov_r)
    cross = _sqrtm_trace(s_r @ cov_f @ s_r)
    fed = float(((mu_r - mu_f) ** 2).sum() + np.trace(cov_r) + np.trace(cov_f) - 2.0 * cross)
    return max(fed, 0.0)


# --- reporting ----------------------------------------------------------------


def format_report(metrics: dict[str, float]) -> str:
    """One ``metric=value`` line per metric."""
    return "\n".join(f"{k}={v:.6f}" for k, v in metrics.items())


def append_metrics_csv(path: Path, task_id: str, metrics: dict[str, float]) -> None:
    path = Path(path)
    is_new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if is_new:
            writer.writerow(["task_id", "metric", "value"])
        for k, v in metrics.items():
            writer.writerow([task_id, k, f"{v:.6f}"])
