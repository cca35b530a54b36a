"""Rank-constrained factorized weight modulators.

Every frozen base weight gets a per-task multiplicative tensor ``gamma`` and an
additive tensor ``beta`` of the same shape; the effective weight is
``w * gamma + beta``. Both tensors are reconstructed on the fly from small
rank-``r`` factor matrices, so the trainable (and persisted) state of a task is
a few hundred scalars per layer instead of a full weight copy.

Conventions, fixed so that independent oracles can reproduce them:

* all reshapes operate on the row-major flattened element stream;
* the repetition map for the reconstruction bias flattens its ``c_out x K``
  input row-major and replicates the resulting row ``r`` times;
* the pre-activation sum is formed after reshaping, i.e.
  ``act(reshape(m1_out @ m1_inst) + repeat(a1_out @ a1_inst))``;
* ``gamma[o, i, u, v] = m2[i, o*K + u*k + v]`` where ``m2`` is the final
  ``c_in x (c_out*K)`` product;
* ``beta[o, i, u, v] = a2[i, u*k + v]``, replicated along the output-channel
  axis, where ``a2 = a2_in @ a2_inst``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence, Union

import torch
import torch.nn.functional as F


class ShapeError(ValueError):
    """A tensor does not match the dimensions its modulator declares."""


class ActivationKind(enum.IntEnum):
    """Activation applied inside the multiplicative reconstruction.

    The integer values double as the on-disk activation ids of the
    checkpoint format.
    """

    IDENTITY = 0
    SIGMOID = 1
    TANH = 2
    LEAKY_RELU = 3
    GELU = 4
    SILU = 5
    RELU = 6

    def apply(self, x: torch.Tensor) -> torch.Tensor:
        if self is ActivationKind.IDENTITY:
            return x
        if self is ActivationKind.SIGMOID:
            return torch.sigmoid(x)
        if self is ActivationKind.TANH:
            return torch.tanh(x)
        if self is ActivationKind.LEAKY_RELU:
            return F.leaky_relu(x, negative_slope=0.2)
        if self is ActivationKind.GELU:
            return F.gelu(x)
        if self is ActivationKind.SILU:
            return F.silu(x)
        return torch.relu(x)

    @classmethod
    def from_name(cls, name: str) -> "ActivationKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            valid = ", ".join(k.name.lower() for k in cls)
            raise ValueError(f"unknown activation {name!r} (valid: {valid})") from None


@dataclass(frozen=True)
class ConvShape:
    """Dimensions of one convolution weight ``(c_out, c_in, k, k)``."""

    c_out: int
    c_in: int
    k: int

    def __post_init__(self) -> None:
        if self.c_out < 1 or self.c_in < 1 or self.k < 1:
            raise ShapeError(f"invalid conv shape {self}")

    @property
    def K(self) -> int:
        return self.k * self.k

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.c_out, self.c_in, self.k, self.k)


FcDims = tuple[int, int]
LayerDims = Union[ConvShape, FcDims]


def _check(t: torch.Tensor, expected: tuple[int, ...], what: str) -> None:
    if tuple(t.shape) != expected:
        raise ShapeError(f"{what}: expected {expected}, got {tuple(t.shape)}")


@dataclass
class LeftConvModulator:
    """Factor matrices reconstructing gamma/beta for one conv layer."""

    shape: ConvShape
    r: int
    act: ActivationKind
    with_bias: bool
    m1_out: torch.Tensor  # (c_out, r)
    m1_inst: torch.Tensor  # (r, r*K)
    m2_in: torch.Tensor  # (c_in, r)
    a2_in: torch.Tensor  # (c_in, r)
    a2_inst: torch.Tensor  # (r, K)
    a1_out: torch.Tensor | None = None  # (c_out, r), present iff with_bias
    a1_inst: torch.Tensor | None = None  # (r, K), present iff with_bias

    def validate(self) -> None:
        s, r = self.shape, self.r
        if r < 1:
            raise ShapeError(f"rank must be >= 1, got {r}")
        _check(self.m1_out, (s.c_out, r), "m1_out")
        _check(self.m1_inst, (r, r * s.K), "m1_inst")
        _check(self.m2_in, (s.c_in, r), "m2_in")
        _check(self.a2_in, (s.c_in, r), "a2_in")
        _check(self.a2_inst, (r, s.K), "a2_inst")
        if self.with_bias:
            if self.a1_out is None or self.a1_inst is None:
                raise ShapeError("with_bias modulator is missing a1 factors")
            _check(self.a1_out, (s.c_out, r), "a1_out")
            _check(self.a1_inst, (r, s.K), "a1_inst")
        elif self.a1_out is not None or self.a1_inst is not None:
            raise ShapeError("a1 factors present on a modulator without bias")

    def factors(self) -> list[tuple[str, torch.Tensor]]:
        """Factor matrices in the fixed persistence order."""
        out = [("m1_out", self.m1_out), ("m1_inst", self.m1_inst), ("m2_in", self.m2_in)]
        if self.with_bias:
            out += [("a1_out", self.a1_out), ("a1_inst", self.a1_inst)]
        out += [("a2_in", self.a2_in), ("a2_inst", self.a2_inst)]
        return out

    def parameters(self) -> list[torch.Tensor]:
        return [t for _, t in self.factors()]


@dataclass
class LeftFcModulator:
    """Factor matrices plus dense bias modulators for one FC layer."""

    d_out: int
    d_in: int
    r: int
    m_out: torch.Tensor  # (d_out, r)
    m_in: torch.Tensor  # (r, d_in)
    a_out: torch.Tensor  # (d_out, r)
    a_in: torch.Tensor  # (r, d_in)
    gamma_b: torch.Tensor  # (d_out,)
    beta_b: torch.Tensor  # (d_out,)

    def validate(self) -> None:
        if self.r < 1:
            raise ShapeError(f"rank must be >= 1, got {self.r}")
        _check(self.m_out, (self.d_out, self.r), "m_out")
        _check(self.m_in, (self.r, self.d_in), "m_in")
        _check(self.a_out, (self.d_out, self.r), "a_out")
        _check(self.a_in, (self.r, self.d_in), "a_in")
        _check(self.gamma_b, (self.d_out,), "gamma_b")
        _check(self.beta_b, (self.d_out,), "beta_b")

    def factors(self) -> list[tuple[str, torch.Tensor]]:
        return [
            ("m_out", self.m_out),
            ("m_in", self.m_in),
            ("a_out", self.a_out),
            ("a_in", self.a_in),
            ("gamma_b", self.gamma_b),
            ("beta_b", self.beta_b),
        ]

    def parameters(self) -> list[torch.Tensor]:
        return [t for _, t in self.factors()]


Modulator = Union[LeftConvModulator, LeftFcModulator]


@dataclass
class ModulatorSet:
    """One task's complete collection of per-layer modulators.

    This is the only trainable and the only persisted state of a task.
    """

    task_id: str
    rank: int
    with_bias: bool
    act: ActivationKind
    layers: dict[str, Modulator] = field(default_factory=dict)

    def parameters(self) -> list[torch.Tensor]:
        return [t for mod in self.layers.values() for _, t in mod.factors()]

    def named_parameters(self) -> list[tuple[str, torch.Tensor]]:
        return [
            (f"{name}.{fname}", t)
            for name, mod in self.layers.items()
            for fname, t in mod.factors()
        ]

    def requires_grad_(self, flag: bool = True) -> "ModulatorSet":
        for p in self.parameters():
            p.requires_grad_(flag)
        return self

    def n_params(self) -> int:
        return sum(t.numel() for t in self.parameters())


# --- reshape / repetition maps -----------------------------------------------


def reshape_r1(m: torch.Tensor, shape: ConvShape, r: int) -> torch.Tensor:
    """Reflow a ``c_out x (r*K)`` matrix into ``r x (c_out*K)`` row-major."""
    if tuple(m.shape) != (shape.c_out, r * shape.K):
        raise ShapeError(
            f"reshape_r1: expected {(shape.c_out, r * shape.K)}, got {tuple(m.shape)}"
        )
    return m.reshape(r, shape.c_out * shape.K)


def reshape_r1_inverse(m: torch.Tensor, shape: ConvShape, r: int) -> torch.Tensor:
    if tuple(m.shape) != (r, shape.c_out * shape.K):
        raise ShapeError(
            f"reshape_r1_inverse: expected {(r, shape.c_out * shape.K)}, got {tuple(m.shape)}"
        )
    return m.reshape(shape.c_out, r * shape.K)


def repeat_r2(a: torch.Tensor, shape: ConvShape, r: int) -> torch.Tensor:
    """Flatten a ``c_out x K`` matrix row-major and replicate the row r times."""
    if tuple(a.shape) != (shape.c_out, shape.K):
        raise ShapeError(f"repeat_r2: expected {(shape.c_out, shape.K)}, got {tuple(a.shape)}")
    return a.reshape(1, shape.c_out * shape.K).expand(r, -1)


# --- reconstruction -----------------------------------------------------------


def reconstruct_gamma_conv(mod: LeftConvModulator) -> torch.Tensor:
    """Rebuild the multiplicative tensor ``(c_out, c_in, k, k)``."""
    mod.validate()
    s, r = mod.shape, mod.r
    m1 = mod.m1_out @ mod.m1_inst  # (c_out, r*K)
    pre = reshape_r1(m1, s, r)  # (r, c_out*K)
    if mod.with_bias:
        a1 = mod.a1_out @ mod.a1_inst  # (c_out, K)
        pre = pre + repeat_r2(a1, s, r)
    m1p = mod.act.apply(pre)
    m2 = mod.m2_in @ m1p  # (c_in, c_out*K)
    return m2.reshape(s.c_in, s.c_out, s.k, s.k).permute(1, 0, 2, 3)


def reconstruct_beta_conv(mod: LeftConvModulator) -> torch.Tensor:
    """Rebuild the additive tensor, replicated along the output-channel axis."""
    mod.validate()
    s = mod.shape
    a2 = mod.a2_in @ mod.a2_inst  # (c_in, K)
    return a2.reshape(s.c_in, s.k, s.k).unsqueeze(0).expand(s.c_out, -1, -1, -1)


def modulate_conv(w: torch.Tensor, mod: LeftConvModulator) -> torch.Tensor:
    """Effective conv weight ``w * gamma + beta``; ``w`` is never mutated."""
    if tuple(w.shape) != mod.shape.weight_shape:
        raise ShapeError(
            f"modulate_conv: weight {tuple(w.shape)} vs declared {mod.shape.weight_shape}"
        )
    return w * reconstruct_gamma_conv(mod) + reconstruct_beta_conv(mod)


def reconstruct_fc(
    mod: LeftFcModulator,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Rebuild ``(gamma_w, beta_w, gamma_b, beta_b)`` for one FC layer."""
    mod.validate()
    return mod.m_out @ mod.m_in, mod.a_out @ mod.a_in, mod.gamma_b, mod.beta_b


def modulate_fc(
    w: torch.Tensor, b: torch.Tensor, mod: LeftFcModulator
) -> tuple[torch.Tensor, torch.Tensor]:
    if tuple(w.shape) != (mod.d_out, mod.d_in):
        raise ShapeError(f"modulate_fc: weight {tuple(w.shape)} vs ({mod.d_out}, {mod.d_in})")
    if tuple(b.shape) != (mod.d_out,):
        raise ShapeError(f"modulate_fc: bias {tuple(b.shape)} vs ({mod.d_out},)")
    gw, bw, gb, bb = reconstruct_fc(mod)
    return w * gw + bw, b * gb + bb


# --- initialization -----------------------------------------------------------

NOISE_STD = 0.01


def _act_at_one(act: ActivationKind) -> float:
    return float(act.apply(torch.ones((), dtype=torch.float64)))


def init_identity_conv(
    shape: ConvShape,
    r: int,
    with_bias: bool = True,
    act: ActivationKind = ActivationKind.RELU,
    *,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> LeftConvModulator:
    """A modulator whose reconstruction is gamma == 1 and beta == 0.

    The gamma path is filled so every intermediate product is exactly one
    before the activation; the trailing factor is scaled by 1/act(1) so the
    modulation starts as an exact identity for every supported activation.
    On the additive paths one factor of each product starts at zero and the
    other at small noise, so gradients reach both from the first step.
    """
    g = generator if generator is not None else torch.Generator().manual_seed(0)
    act1 = _act_at_one(act)
    m1_out = torch.ones(shape.c_out, r, dtype=dtype)
    m1_inst = torch.full((r, r * shape.K), 1.0 / r, dtype=dtype)
    m2_in = torch.full((shape.c_in, r), 1.0 / (r * act1), dtype=dtype)
    a1_out = a1_inst = None
    if with_bias:
        a1_out = torch.zeros(shape.c_out, r, dtype=dtype)
        a1_inst = NOISE_STD * torch.randn(r, shape.K, generator=g, dtype=dtype)
    a2_in = torch.zeros(shape.c_in, r, dtype=dtype)
    a2_inst = NOISE_STD * torch.randn(r, shape.K, generator=g, dtype=dtype)
    mod = LeftConvModulator(
        shape=shape,
        r=r,
        act=act,
        with_bias=with_bias,
        m1_out=m1_out,
        m1_inst=m1_inst,
        m2_in=m2_in,
        a2_in=a2_in,
        a2_inst=a2_inst,
        a1_out=a1_out,
        a1_inst=a1_inst,
    )
    mod.validate()
    return mod


def init_identity_fc(
    d_out: int,
    d_in: int,
    r: int,
    *,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> LeftFcModulator:
    g = generator if generator is not None else torch.Generator().manual_seed(0)
    mod = LeftFcModulator(
        d_out=d_out,
        d_in=d_in,
        r=r,
        m_out=torch.ones(d_out, r, dtype=dtype),
        m_in=torch.full((r, d_in), 1.0 / r, dtype=dtype),
        a_out=torch.zeros(d_out, r, dtype=dtype),
        a_in=NOISE_STD * torch.randn(r, d_in, generator=g, dtype=dtype),
        gamma_b=torch.ones(d_out, dtype=dtype),
        beta_b=torch.zeros(d_out, dtype=dtype),
    )
    mod.validate()
    return mod


def init_identity(
    shape_or_dims: LayerDims,
    r: int,
    with_bias: bool = True,
    act: ActivationKind = ActivationKind.RELU,
    *,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> Modulator:
    if isinstance(shape_or_dims, ConvShape):
        return init_identity_conv(
            shape_or_dims, r, with_bias, act, generator=generator, dtype=dtype
        )
    d_out, d_in = shape_or_dims
    return init_identity_fc(d_out, d_in, r, generator=generator, dtype=dtype)


# --- parameter accounting -----------------------------------------------------


def conv_param_parts(shape: ConvShape, r: int, with_bias: bool) -> dict[str, int]:
    """Stored-entry counts of one conv modulator, split by factor group."""
    return {
        "gamma": shape.c_out * r + r * r * shape.K + shape.c_in * r,
        "beta": shape.c_in * r + r * shape.K,
        "act_bias": (shape.c_out * r + r * shape.K) if with_bias else 0,
    }


def fc_param_parts(d_out: int, d_in: int, r: int) -> dict[str, int]:
    return {
        "gamma": d_out * r + r * d_in,
        "beta": d_out * r + r * d_in,
        "bias_mods": 2 * d_out,
    }


@dataclass(frozen=True)
class ParamCount:
    total: int
    per_layer: tuple[int, ...]


def layer_param_count(layer: LayerDims, r: int, with_bias: bool) -> int:
    if isinstance(layer, ConvShape):
        return sum(conv_param_parts(layer, r, with_bias).values())
    d_out, d_in = layer
    return sum(fc_param_parts(d_out, d_in, r).values())


def param_count(layers: Sequence[LayerDims], r: int, with_bias: bool) -> ParamCount:
    per_layer = tuple(layer_param_count(layer, r, with_bias) for layer in layers)
    return ParamCount(total=sum(per_layer), per_layer=per_layer)
