"""Independent reference implementations used only by the tests.

Everything here is written as plainly as possible (explicit loops, python
floats, math-module scalars) so it shares no code path with the package.
"""

from __future__ import annotations

import math

import numpy as np


def act_scalar(name: str, x: float) -> float:
    if name == "IDENTITY":
        return x
    if name == "SIGMOID":
        return 1.0 / (1.0 + math.exp(-x))
    if name == "TANH":
        return math.tanh(x)
    if name == "LEAKY_RELU":
        return x if x >= 0.0 else 0.2 * x
    if name == "GELU":
        return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))
    if name == "SILU":
        return x / (1.0 + math.exp(-x))
    if name == "RELU":
        return x if x > 0.0 else 0.0
    raise ValueError(name)


def naive_gamma(
    m1_out: np.ndarray,
    m1_inst: np.ndarray,
    m2_in: np.ndarray,
    act_name: str,
    a1_out: np.ndarray | None,
    a1_inst: np.ndarray | None,
    c_out: int,
    c_in: int,
    k: int,
    r: int,
) -> np.ndarray:
    K = k * k
    # M1 = m1_out @ m1_inst, (c_out, r*K)
    m1 = np.zeros((c_out, r * K))
    for o in range(c_out):
        for j in range(r * K):
            s = 0.0
            for q in range(r):
                s += m1_out[o, q] * m1_inst[q, j]
            m1[o, j] = s
    # R1: row-major stream of m1 refilled into (r, c_out*K)
    stream = [m1[o, j] for o in range(c_out) for j in range(r * K)]
    pre = np.zeros((r, c_out * K))
    pos = 0
    for p in range(r):
        for t in range(c_out * K):
            pre[p, t] = stream[pos]
            pos += 1
    # A1' = row-major flatten of a1_out @ a1_inst, replicated r times
    if a1_out is not None:
        a1 = np.zeros((c_out, K))
        for o in range(c_out):
            for s_ in range(K):
                acc = 0.0
                for q in range(r):
                    acc += a1_out[o, q] * a1_inst[q, s_]
                a1[o, s_] = acc
        flat = [a1[o, s_] for o in range(c_out) for s_ in range(K)]
        for p in range(r):
            for t in range(c_out * K):
                pre[p, t] += flat[t]
    m1p = np.zeros_like(pre)
    for p in range(r):
        for t in range(c_out * K):
            m1p[p, t] = act_scalar(act_name, pre[p, t])
    # M2 = m2_in @ M1', (c_in, c_out*K)
    m2 = np.zeros((c_in, c_out * K))
    for i in range(c_in):
        for t in range(c_out * K):
            s = 0.0
            for q in range(r):
                s += m2_in[i, q] * m1p[q, t]
            m2[i, t] = s
    # gamma[o, i, u, v] = m2[i, o*K + u*k + v]
    gamma = np.zeros((c_out, c_in, k, k))
    for o in range(c_out):
        for i in range(c_in):
            for u in range(k):
                for v in range(k):
                    gamma[o, i, u, v] = m2[i, o * K + u * k + v]
    return gamma


def naive_beta(
    a2_in: np.ndarray, a2_inst: np.ndarray, c_out: int, c_in: int, k: int, r: int
) -> np.ndarray:
    K = k * k
    a2 = np.zeros((c_in, K))
    for i in range(c_in):
        for s_ in range(K):
            acc = 0.0
            for q in range(r):
                acc += a2_in[i, q] * a2_inst[q, s_]
            a2[i, s_] = acc
    beta = np.zeros((c_out, c_in, k, k))
    for o in range(c_out):
        for i in range(c_in):
            for u in range(k):
                for v in range(k):
                    beta[o, i, u, v] = a2[i, u * k + v]
    return beta


def naive_gamma_from_mod(mod) -> np.ndarray:
    f = {name: t.detach().numpy().astype(np.float64) for name, t in mod.factors()}
    return naive_gamma(
        f["m1_out"],
        f["m1_inst"],
        f["m2_in"],
        mod.act.name,
        f.get("a1_out"),
        f.get("a1_inst"),
        mod.shape.c_out,
        mod.shape.c_in,
        mod.shape.k,
        mod.r,
    )


def naive_beta_from_mod(mod) -> np.ndarray:
    f = {name: t.detach().numpy().astype(np.float64) for name, t in mod.factors()}
    return naive_beta(
        f["a2_in"], f["a2_inst"], mod.shape.c_out, mod.shape.c_in, mod.shape.k, mod.r
    )


def mean_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    flat_a, flat_b = a.reshape(-1), b.reshape(-1)
    return float(sum(abs(float(x) - float(y)) for x, y in zip(flat_a, flat_b)) / len(flat_a))


def cms_reference(
    z: np.ndarray,
    w: np.ndarray,
    features: list[np.ndarray],
    imgs: np.ndarray,
    anchors_imgs: np.ndarray,
    pair_dist,  # callable (image_a, image_b) -> float, for the assignment only
    use_dw: bool,
    use_df: bool,
    use_di: bool,
    eps: float = 1e-5,
) -> float:
    n = z.shape[0]
    k = anchors_imgs.shape[0]
    assignment = []
    for i in range(n):
        dists = [pair_dist(imgs[i], anchors_imgs[j]) for j in range(k)]
        best = 0
        for j in range(1, k):
            if dists[j] < dists[best]:
                best = j
        assignment.append(best)
    cluster_vals = []
    for c in range(k):
        members = [i for i in range(n) if assignment[i] == c]
        if len(members) < 2:
            continue
        pair_vals = []
        for a_pos in range(len(members)):
            for b_pos in range(a_pos + 1, len(members)):
                i, j = members[a_pos], members[b_pos]
                dz = mean_abs_diff(z[i], z[j])
                dw = mean_abs_diff(w[i], w[j])
                val = 0.0
                if use_dw:
                    val += dw / (dz + eps)
                if use_df:
                    acc = 0.0
                    for f in features:
                        acc += mean_abs_diff(f[i], f[j]) / (dw + eps)
                    val += acc / len(features)
                if use_di:
                    val += mean_abs_diff(imgs[i], imgs[j]) / (dw + eps)
                pair_vals.append(val)
        cluster_vals.append(sum(pair_vals) / len(pair_vals))
    if not cluster_vals:
        return 0.0
    mean = sum(cluster_vals) / len(cluster_vals)
    return 1.0 / (mean + eps)


def central_difference(fn, tensor, flat_index: int, step: float = 1e-4) -> float:
    """Two-sided finite difference of a scalar-returning fn in one coordinate."""
    flat = tensor.data.view(-1)  # raises if the tensor is not contiguous
    orig = float(flat[flat_index])
    flat[flat_index] = orig + step
    up = float(fn().detach())
    flat[flat_index] = orig - step
    down = float(fn().detach())
    flat[flat_index] = orig
    return (up - down) / (2.0 * step)
