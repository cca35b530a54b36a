"""Binary persistence for modulator sets.

Little-endian layout:

    magic            4 bytes, ``LEFT``
    version          u32
    task_id          u32 length + UTF-8 bytes
    rank             u32
    with_bias        u8 (0/1)
    activation id    u8
    layer count      u32
    per layer:
        name         u32 length + UTF-8 bytes
        kind         u8 (0 = conv, 1 = fc)
        dims         conv: c_out, c_in, k as u32 / fc: d_out, d_in as u32
        factors      row-major float32, in the fixed factor order
                     conv: m1_out, m1_inst, m2_in, [a1_out, a1_inst], a2_in, a2_inst
                     fc:   m_out, m_in, a_out, a_in, gamma_b, beta_b

The a1 factors are present exactly when the header's with_bias flag is set.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .left import (
    ActivationKind,
    ConvShape,
    LeftConvModulator,
    LeftFcModulator,
    ModulatorSet,
)

MAGIC = b"LEFT"
VERSION = 1
KIND_CONV = 0
KIND_FC = 1


class CheckpointError(RuntimeError):
    """The file is not a valid modulator checkpoint."""


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_tensor(t: torch.Tensor) -> bytes:
    return t.detach().to(torch.float32).contiguous().numpy().tobytes()


def save_modulators(mods: ModulatorSet, path: Path | str) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(mods.task_id)]
    parts.append(struct.pack("<IBB", mods.rank, int(mods.with_bias), int(mods.act)))
    parts.append(struct.pack("<I", len(mods.layers)))
    for name, mod in mods.layers.items():
        parts.append(_pack_str(name))
        if isinstance(mod, LeftConvModulator):
            s = mod.shape
            parts.append(struct.pack("<BIII", KIND_CONV, s.c_out, s.c_in, s.k))
        else:
            parts.append(struct.pack("<BII", KIND_FC, mod.d_out, mod.d_in))
        for _, t in mod.factors():
            parts.append(_pack_tensor(t))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def tensor(self, *shape: int) -> torch.Tensor:
        n = int(np.prod(shape)) if shape else 1
        raw = self.take(4 * n)
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        return torch.from_numpy(arr)


def load_modulators(path: Path | str) -> ModulatorSet:
    data = Path(path).read_bytes()
    rd = _Reader(data)
    if rd.take(4) != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    task_id = rd.string()
    rank, bias_flag, act_id = rd.unpack("<IBB")
    if rank < 1:
        raise CheckpointError(f"invalid rank {rank}")
    try:
        act = ActivationKind(act_id)
    except ValueError:
        raise CheckpointError(f"unknown activation id {act_id}") from None
    with_bias = bool(bias_flag)
    (n_layers,) = rd.unpack("<I")
    layers: dict[str, LeftConvModulator | LeftFcModulator] = {}
    for _ in range(n_layers):
        name = rd.string()
        (kind,) = rd.unpack("<B")
        if kind == KIND_CONV:
            c_out, c_in, k = rd.unpack("<III")
            shape = ConvShape(c_out, c_in, k)
            K = shape.K
            m1_out = rd.tensor(c_out, rank)
            m1_inst = rd.tensor(rank, rank * K)
            m2_in = rd.tensor(c_in, rank)
            a1_out = rd.tensor(c_out, rank) if with_bias else None
            a1_inst = rd.tensor(rank, K) if with_bias else None
            mod = LeftConvModulator(
                shape=shape,
                r=rank,
                act=act,
                with_bias=with_bias,
                m1_out=m1_out,
                m1_inst=m1_inst,
                m2_in=m2_in,
                a2_in=rd.tensor(c_in, rank),
                a2_inst=rd.tensor(rank, K),
                a1_out=a1_out,
                a1_inst=a1_inst,
            )
            mod.validate()
            layers[name] = mod
        elif kind == KIND_FC:
            d_out, d_in = rd.unpack("<II")
            mod = LeftFcModulator(
                d_out=d_out,
                d_in=d_in,
                r=rank,
                m_out=rd.tensor(d_out, rank),
                m_in=rd.tensor(rank, d_in),
                a_out=rd.tensor(d_out, rank),
                a_in=rd.tensor(rank, d_in),
                gamma_b=rd.tensor(d_out),
                beta_b=rd.tensor(d_out),
            )
            mod.validate()
            layers[name] = mod
        else:
            raise CheckpointError(f"unknown layer kind {kind}")
    if rd.pos != len(data):
        raise CheckpointError(f"{len(data) - rd.pos} trailing bytes after last layer")
    return ModulatorSet(task_id=task_id, rank=rank, with_bias=with_bias, act=act, layers=layers)


def predicted_size(mods: ModulatorSet) -> int:
    """Exact file size implied by the header fields and factor shapes."""
    size = 4 + 4  # magic + version
    size += 4 + len(mods.task_id.encode("utf-8"))
    size += 4 + 1 + 1  # rank, with_bias, activation
    size += 4  # layer count
    for name, mod in mods.layers.items():
        size += 4 + len(name.encode("utf-8"))
        size += 1 + (12 if isinstance(mod, LeftConvModulator) else 8)  # kind + dims
        size += 4 * sum(t.numel() for _, t in mod.factors())
    return size
