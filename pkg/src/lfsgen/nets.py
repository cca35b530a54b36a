"""Desk-scale style-based generator and discriminator with modulation hooks.

The generator keeps the mapping/synthesis split of style-based architectures:
a small MLP maps the latent ``z`` to an intermediate latent ``w``, and each
synthesis block applies nearest-neighbor upsampling, a 3x3 convolution and a
per-channel style scale derived from ``w`` by an affine layer. Weights live in
a flat name -> tensor dict; base weights are created frozen
(``requires_grad=False``) and a forward pass may swap in modulated effective
weights from a :class:`~lfsgen.left.ModulatorSet` without touching the base.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .left import (
    ConvShape,
    LayerDims,
    LeftConvModulator,
    LeftFcModulator,
    ModulatorSet,
    ShapeError,
    ActivationKind,
    init_identity,
    modulate_conv,
    modulate_fc,
)

Weights = dict[str, torch.Tensor]


class FrozenParameterError(RuntimeError):
    """Gradient was requested for a parameter that is frozen."""


@dataclass(frozen=True)
class GeneratorConfig:
    z_dim: int = 64
    w_dim: int = 64
    mapping_layers: int = 3
    base_resolution: int = 4
    target_resolution: int = 32
    channels: tuple[int, ...] = (128, 64, 32)
    conv_kernel: int = 3
    noise_injection: bool = False
    modulate_affine: bool = False

    def __post_init__(self) -> None:
        if self.target_resolution not in (16, 32, 64):
            raise ValueError(f"target_resolution must be 16/32/64, got {self.target_resolution}")
        ratio = self.target_resolution / self.base_resolution
        blocks = int(round(math.log2(ratio)))
        if 2**blocks != ratio or blocks < 1:
            raise ValueError(
                f"base->target must be a power-of-2 upsampling chain, got "
                f"{self.base_resolution}->{self.target_resolution}"
            )
        if len(self.channels) != blocks:
            raise ValueError(
                f"need {blocks} channel widths for {blocks} blocks, got {len(self.channels)}"
            )

    @property
    def num_blocks(self) -> int:
        return len(self.channels)


@dataclass(frozen=True)
class DiscriminatorConfig:
    resolution: int = 32
    channels: tuple[int, ...] = (32, 64, 64, 64)
    patch_logits: bool = False  # reserved; only the single-logit head exists

    def __post_init__(self) -> None:
        if self.patch_logits:
            raise NotImplementedError("patch discriminator head is a config stub")
        if self.resolution // 2 ** len(self.channels) < 1:
            raise ValueError("too many stride-2 blocks for this resolution")


@dataclass
class ForwardRecord:
    """Everything one generator pass exposes to the losses."""

    z: torch.Tensor  # (n, z_dim)
    w: torch.Tensor  # (n, w_dim)
    features: list[torch.Tensor]  # per synthesis block, (n, c, h, w)
    image: torch.Tensor  # (n, 3, res, res)

    def __len__(self) -> int:
        return self.z.shape[0]


def _mapping_dims(config: GeneratorConfig, i: int) -> tuple[int, int]:
    return (config.w_dim, config.z_dim if i == 0 else config.w_dim)


def modulated_layer_specs(config: GeneratorConfig) -> dict[str, LayerDims]:
    """Names and dimensions of every layer that carries a modulator."""
    specs: dict[str, LayerDims] = {}
    for i in range(config.mapping_layers):
        specs[f"mapping.{i}"] = _mapping_dims(config, i)
    c_prev = config.channels[0]
    for bi, c in enumerate(config.channels):
        specs[f"synthesis.b{bi}.conv"] = ConvShape(c, c_prev, config.conv_kernel)
        if config.modulate_affine:
            specs[f"synthesis.b{bi}.affine"] = (c, config.w_dim)
        c_prev = c
    specs["synthesis.torgb"] = ConvShape(3, config.channels[-1], 1)
    return specs


def init_generator(config: GeneratorConfig, seed: int) -> Weights:
    """Frozen base weights, deterministically derived from the seed."""
    g = torch.Generator().manual_seed(seed)

    def randn(*shape: int) -> torch.Tensor:
        return torch.randn(*shape, generator=g)

    w: Weights = {}
    for i in range(config.mapping_layers):
        d_out, d_in = _mapping_dims(config, i)
        w[f"mapping.{i}.weight"] = randn(d_out, d_in) / math.sqrt(d_in)
        w[f"mapping.{i}.bias"] = 0.01 * randn(d_out)
    c0 = config.channels[0]
    w["synthesis.const"] = randn(c0, config.base_resolution, config.base_resolution)
    c_prev = c0
    k = config.conv_kernel
    for bi, c in enumerate(config.channels):
        w[f"synthesis.b{bi}.conv.weight"] = randn(c, c_prev, k, k) / math.sqrt(c_prev * k * k)
        w[f"synthesis.b{bi}.conv.bias"] = torch.zeros(c)
        w[f"synthesis.b{bi}.affine.weight"] = 0.5 * randn(c, config.w_dim) / math.sqrt(config.w_dim)
        w[f"synthesis.b{bi}.affine.bias"] = torch.ones(c)
        if config.noise_injection:
            w[f"synthesis.b{bi}.noise_strength"] = torch.full((), 0.1)
        c_prev = c
    w["synthesis.torgb.weight"] = randn(3, c_prev, 1, 1) / math.sqrt(c_prev)
    w["synthesis.torgb.bias"] = torch.zeros(3)
    for t in w.values():
        t.requires_grad_(False)
    return w


def identity_modulator_set(
    config: GeneratorConfig,
    task_id: str,
    rank: int,
    with_bias: bool,
    act: ActivationKind,
    *,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> ModulatorSet:
    g = generator if generator is not None else torch.Generator().manual_seed(0)
    layers = {
        name: init_identity(dims, rank, with_bias, act, generator=g, dtype=dtype)
        for name, dims in modulated_layer_specs(config).items()
    }
    return ModulatorSet(task_id=task_id, rank=rank, with_bias=with_bias, act=act, layers=layers)


def _validate_modulators(config: GeneratorConfig, mods: ModulatorSet) -> None:
    specs = modulated_layer_specs(config)
    if set(mods.layers) != set(specs):
        missing = sorted(set(specs) - set(mods.layers))
        extra = sorted(set(mods.layers) - set(specs))
        raise ShapeError(f"modulator set mismatch: missing={missing} extra={extra}")
    for name, dims in specs.items():
        mod = mods.layers[name]
        if isinstance(dims, ConvShape):
            if not isinstance(mod, LeftConvModulator) or mod.shape != dims:
                raise ShapeError(f"layer {name}: conv modulator does not match {dims}")
        else:
            if not isinstance(mod, LeftFcModulator) or (mod.d_out, mod.d_in) != dims:
                raise ShapeError(f"layer {name}: fc modulator does not match {dims}")


def _effective_fc(
    weights: Weights, mods: ModulatorSet | None, name: str
) -> tuple[torch.Tensor, torch.Tensor]:
    w, b = weights[f"{name}.weight"], weights[f"{name}.bias"]
    if mods is not None and name in mods.layers:
        return modulate_fc(w, b, mods.layers[name])
    return w, b


def _effective_conv(
    weights: Weights, mods: ModulatorSet | None, name: str
) -> tuple[torch.Tensor, torch.Tensor]:
    w, b = weights[f"{name}.weight"], weights[f"{name}.bias"]
    if mods is not None and name in mods.layers:
        return modulate_conv(w, mods.layers[name]), b
    return w, b


def modulated_weights(weights: Weights, mods: ModulatorSet) -> Weights:
    """Effective weights of every modulated layer (for inspection/tests)."""
    out: Weights = {}
    for name, mod in mods.layers.items():
        if isinstance(mod, LeftConvModulator):
            out[f"{name}.weight"] = modulate_conv(weights[f"{name}.weight"], mod)
        else:
            wm, bm = modulate_fc(weights[f"{name}.weight"], weights[f"{name}.bias"], mod)
            out[f"{name}.weight"] = wm
            out[f"{name}.bias"] = bm
    return out


def generator_forward(
    weights: Weights,
    modulators: ModulatorSet | None,
    z: torch.Tensor,
    config: GeneratorConfig,
    *,
    noise_generator: torch.Generator | None = None,
) -> ForwardRecord:
    """Run the generator, recording w, per-block features and the image."""
    if z.ndim != 2 or z.shape[1] != config.z_dim:
        raise ShapeError(f"z must be (n, {config.z_dim}), got {tuple(z.shape)}")
    if modulators is not None:
        _validate_modulators(config, modulators)
    if config.noise_injection and noise_generator is None:
        raise ValueError("noise_injection requires a noise_generator for determinism")

    x = z * torch.rsqrt(z.square().mean(dim=1, keepdim=True) + 1e-8)
    for i in range(config.mapping_layers):
        wt, bt = _effective_fc(weights, modulators, f"mapping.{i}")
        x = F.leaky_relu(x @ wt.t() + bt, 0.2)
    w = x

    n = z.shape[0]
    h = weights["synthesis.const"].unsqueeze(0).expand(n, -1, -1, -1).to(z.dtype)
    pad = config.conv_kernel // 2
    features: list[torch.Tensor] = []
    for bi in range(config.num_blocks):
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        cw, cb = _effective_conv(weights, modulators, f"synthesis.b{bi}.conv")
        h = F.conv2d(h, cw, cb, padding=pad)
        if config.noise_injection:
            noise = torch.randn(
                n, 1, h.shape[2], h.shape[3], generator=noise_generator, dtype=h.dtype
            )
            h = h + weights[f"synthesis.b{bi}.noise_strength"] * noise
        h = F.leaky_relu(h, 0.2)
        aw, ab = _effective_fc(weights, modulators, f"synthesis.b{bi}.affine")
        style = w @ aw.t() + ab
        h = h * style.unsqueeze(-1).unsqueeze(-1)
        features.append(h)
    iw, ib = _effective_conv(weights, modulators, "synthesis.torgb")
    image = F.conv2d(h, iw, ib)
    return ForwardRecord(z=z, w=w, features=features, image=image)


def init_discriminator(config: DiscriminatorConfig, seed: int) -> Weights:
    g = torch.Generator().manual_seed(seed)

    def randn(*shape: int) -> torch.Tensor:
        return torch.randn(*shape, generator=g)

    w: Weights = {}
    c_prev = 3
    for bi, c in enumerate(config.channels):
        w[f"d.b{bi}.weight"] = randn(c, c_prev, 3, 3) / math.sqrt(c_prev * 9)
        w[f"d.b{bi}.bias"] = torch.zeros(c)
        c_prev = c
    side = config.resolution // 2 ** len(config.channels)
    w["d.out.weight"] = randn(1, c_prev * side * side) / math.sqrt(c_prev * side * side)
    w["d.out.bias"] = torch.zeros(1)
    for t in w.values():
        t.requires_grad_(True)
    return w


def discriminator_forward(
    weights: Weights, images: torch.Tensor, config: DiscriminatorConfig
) -> torch.Tensor:
    """One logit per image; a single (3, h, w) image yields a 0-dim logit."""
    single = images.ndim == 3
    if single:
        images = images.unsqueeze(0)
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != config.resolution:
        raise ShapeError(
            f"discriminator expects (n, 3, {config.resolution}, {config.resolution}), "
            f"got {tuple(images.shape)}"
        )
    h = images
    for bi in range(len(config.channels)):
        h = F.conv2d(h, weights[f"d.b{bi}.weight"], weights[f"d.b{bi}.bias"], stride=2, padding=1)
        h = F.leaky_relu(h, 0.2)
    logits = h.flatten(1) @ weights["d.out.weight"].t() + weights["d.out.bias"]
    logits = logits.squeeze(1)
    return logits.squeeze(0) if single else logits


def backward(loss: torch.Tensor, trainable_params: list[torch.Tensor]) -> list[torch.Tensor]:
    """Reverse-mode gradients of a recorded scalar for exactly these params."""
    params = list(trainable_params)
    for i, p in enumerate(params):
        if not p.requires_grad:
            raise FrozenParameterError(f"parameter #{i} is frozen; no gradient available")
    return list(torch.autograd.grad(loss, params))


def weights_hash(weights: Weights) -> str:
    """Order-independent sha256 over names, shapes and raw bytes."""
    h = hashlib.sha256()
    for name in sorted(weights):
        t = weights[name].detach()
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.to(torch.float32).contiguous().numpy().tobytes())
    return h.hexdigest()


def count_weights(weights: Weights) -> int:
    return sum(t.numel() for t in weights.values())
