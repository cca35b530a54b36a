"""Adversarial and mode seeking losses.

The generator loss is the non-saturating adversarial loss plus a weighted
cluster-wise mode seeking term. The mode seeking term clusters an oversampled
batch of generated records onto the step's real images, forms distance ratios
(latent per noise, feature per latent, image per latent) over within-cluster
pairs, and returns the reciprocal of their mean, so minimizing it pushes the
ratios up and spreads samples inside every cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .metrics import PerceptualDistance, assign_clusters
from .nets import ForwardRecord


@dataclass
class CmsConfig:
    weight: float = 1.0  # strength of the cluster-wise term in the generator loss
    use_dw: bool = True
    use_df: bool = True
    use_di: bool = True
    epsilon: float = 1e-5
    oversample_factor: int = 4

    def validate(self) -> None:
        if self.weight < 0:
            raise ValueError("cms weight must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("cms epsilon must be > 0")
        if self.oversample_factor < 1:
            raise ValueError("oversample_factor must be >= 1")
        if self.enabled and not (self.use_dw or self.use_df or self.use_di):
            raise ValueError("cms loss enabled but no maximization target is set")

    @property
    def enabled(self) -> bool:
        return self.weight > 0


def adv_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss: mean softplus(-D(fake))."""
    if fake_logits.numel() == 0:
        raise ValueError("empty batch of fake logits")
    return F.softplus(-fake_logits).mean()


def adv_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Discriminator loss: mean softplus(D(fake)) + mean softplus(-D(real))."""
    if real_logits.numel() == 0 or fake_logits.numel() == 0:
        raise ValueError("empty batch of logits")
    return F.softplus(fake_logits).mean() + F.softplus(-real_logits).mean()


def _mad(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).abs().mean()


def ms_loss_original(
    rec_a: ForwardRecord, rec_b: ForwardRecord, epsilon: float = 1e-5
) -> torch.Tensor:
    """Original mode seeking ratio: latent distance per unit image distance."""
    dz = _mad(rec_a.z, rec_b.z)
    di = _mad(rec_a.image, rec_b.image)
    return dz / (di + epsilon)


def cms_loss(
    records: ForwardRecord,
    anchors: torch.Tensor,
    dist: PerceptualDistance,
    cfg: CmsConfig,
) -> torch.Tensor:
    """Cluster-wise mode seeking loss over an oversampled generated batch.

    Records are assigned to the perceptually closest anchor; within each
    cluster of two or more members all unordered pairs contribute the flagged
    distance ratios. Pair values are averaged per cluster, then over the
    contributing clusters, and the reciprocal is returned. Clusters with fewer
    than two members are excluded; with no contributing cluster the loss is 0.
    """
    cfg.validate()
    if anchors.shape[0] < 1:
        raise ValueError("cms loss needs at least one anchor image")
    if records.image.shape[-2:] != anchors.shape[-2:]:
        raise ValueError(
            f"resolution mismatch: records {tuple(records.image.shape[-2:])} vs "
            f"anchors {tuple(anchors.shape[-2:])}"
        )
    eps = cfg.epsilon
    with torch.no_grad():
        assignment = assign_clusters(records.image.detach(), anchors, dist)

    zf = records.z.flatten(1)
    wf = records.w.flatten(1)
    imf = records.image.flatten(1)
    ffs = [f.flatten(1) for f in records.features]
    n_layers = len(ffs)

    cluster_means: list[torch.Tensor] = []
    for members in assignment.members:
        m = len(members)
        if m < 2:
            continue
        idx = torch.tensor(members, dtype=torch.long)
        pairs = torch.combinations(torch.arange(m), r=2)
        # pair differences via a +/-1 matrix: its backward is a plain matmul,
        # unlike a gather with repeated indices whose grad accumulation order
        # (and hence the low bits) can vary between runs
        pairing = torch.zeros(pairs.shape[0], m, dtype=zf.dtype)
        rows = torch.arange(pairs.shape[0])
        pairing[rows, pairs[:, 0]] = 1.0
        pairing[rows, pairs[:, 1]] = -1.0

        def pair_mad(flat: torch.Tensor) -> torch.Tensor:
            return (pairing @ flat[idx]).abs().mean(dim=1)

        dz = pair_mad(zf)
        dw = pair_mad(wf)
        val = torch.zeros_like(dw)
        if cfg.use_dw:
            val = val + dw / (dz + eps)
        if cfg.use_df:
            df = sum(pair_mad(f) / (dw + eps) for f in ffs)
            val = val + df / n_layers
        if cfg.use_di:
            val = val + pair_mad(imf) / (dw + eps)
        cluster_means.append(val.mean())

    if not cluster_means:
        return torch.zeros((), dtype=records.image.dtype)
    mean = torch.stack(cluster_means).mean()
    return 1.0 / (mean + eps)


def total_g_loss(adv: torch.Tensor, cms: torch.Tensor, cfg: CmsConfig) -> torch.Tensor:
    """Generator objective: adversarial term plus the weighted cluster term."""
    return adv + cfg.weight * cms
