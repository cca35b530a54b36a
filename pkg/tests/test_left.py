import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lfsgen.left import (
    ActivationKind,
    ConvShape,
    LeftFcModulator,
    ShapeError,
    conv_param_parts,
    init_identity,
    init_identity_conv,
    init_identity_fc,
    modulate_conv,
    modulate_fc,
    param_count,
    reconstruct_beta_conv,
    reconstruct_fc,
    reconstruct_gamma_conv,
    reshape_r1,
    reshape_r1_inverse,
)

from oracles import central_difference, naive_beta_from_mod, naive_gamma_from_mod

ALL_ACTS = list(ActivationKind)


def random_modulator(rng, c_out, c_in, k, r, with_bias, act, dtype=torch.float64):
    g = torch.Generator().manual_seed(int(rng.integers(0, 2**31)))
    mod = init_identity_conv(ConvShape(c_out, c_in, k), r, with_bias, act, generator=g, dtype=dtype)
    for p in mod.parameters():
        p.copy_(torch.randn(p.shape, generator=g, dtype=dtype))
    return mod


class TestReshapes:
    def test_r1_rank_one_is_row_flatten(self):
        m = torch.arange(12, dtype=torch.float64).reshape(3, 4)
        out = reshape_r1(m, ConvShape(3, 1, 2), 1)
        assert out.shape == (1, 12)
        assert torch.equal(out.flatten(), m.flatten())

    def test_r1_stream_example(self):
        m = torch.tensor([[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]])
        # c_out=2, r=2, k=sqrt(2)? K=2 comes from a 2x... use k=1 -> K=1? need r*K=4 with r=2 -> K=2
        # K=2 is not a square; the reshape only cares about c_out, r*K and c_out*K.
        shape = ConvShape(2, 1, 1)
        with pytest.raises(ShapeError):
            reshape_r1(m, shape, 2)

    def test_r1_matches_row_major_stream(self):
        shape = ConvShape(2, 3, 2)  # K=4
        r = 2
        m = torch.arange(2 * r * shape.K, dtype=torch.float64).reshape(2, r * shape.K)
        out = reshape_r1(m, shape, r)
        assert out.shape == (r, shape.c_out * shape.K)
        assert torch.equal(out.flatten(), m.flatten())

    @given(
        c_out=st.integers(1, 6),
        k=st.integers(1, 3),
        r=st.integers(1, 4),
        seed=st.integers(0, 2**16),
    )
    @settings(max_examples=40, deadline=None)
    def test_r1_roundtrip_bijection(self, c_out, k, r, seed):
        shape = ConvShape(c_out, 1, k)
        g = torch.Generator().manual_seed(seed)
        m = torch.randn(c_out, r * shape.K, generator=g, dtype=torch.float64)
        back = reshape_r1_inverse(reshape_r1(m, shape, r), shape, r)
        assert torch.equal(back, m)

    def test_r1_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            reshape_r1(torch.zeros(3, 5), ConvShape(3, 1, 2), 1)


class TestGammaReconstruction:
    def test_identity_init_gives_ones(self):
        mod = init_identity_conv(ConvShape(3, 2, 3), 1, False, ActivationKind.IDENTITY)
        assert torch.allclose(reconstruct_gamma_conv(mod), torch.ones(3, 2, 3, 3))

    def test_rank_one_example(self):
        mod = init_identity_conv(
            ConvShape(2, 2, 1), 1, False, ActivationKind.IDENTITY, dtype=torch.float64
        )
        mod.m1_out = torch.tensor([[2.0], [3.0]], dtype=torch.float64)
        mod.m1_inst = torch.tensor([[1.0]], dtype=torch.float64)
        mod.m2_in = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        gamma = reconstruct_gamma_conv(mod)
        expected = torch.tensor([[2.0, 4.0], [3.0, 6.0]], dtype=torch.float64)
        assert torch.equal(gamma.reshape(2, 2), expected)

    def test_relu_clamps_negative_intermediate(self):
        mod = init_identity_conv(
            ConvShape(2, 2, 1), 1, False, ActivationKind.RELU, dtype=torch.float64
        )
        mod.m1_out = torch.tensor([[2.0], [3.0]], dtype=torch.float64)
        mod.m1_inst = torch.tensor([[-1.0]], dtype=torch.float64)
        mod.m2_in = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        assert torch.equal(reconstruct_gamma_conv(mod), torch.zeros(2, 2, 1, 1, dtype=torch.float64))

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            c_out, c_in = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            k = int(rng.choice([1, 3]))
            r = int(rng.choice([1, 2, 4]))
            with_bias = bool(rng.integers(0, 2))
            act = ALL_ACTS[int(rng.integers(0, len(ALL_ACTS)))]
            mod = random_modulator(rng, c_out, c_in, k, r, with_bias, act)
            got = reconstruct_gamma_conv(mod).numpy()
            want = naive_gamma_from_mod(mod)
            assert np.abs(got - want).max() <= 1e-12


class TestBetaReconstruction:
    def test_zero_factor_gives_zeros(self):
        mod = init_identity_conv(ConvShape(4, 3, 3), 2, True, ActivationKind.RELU)
        mod.a2_inst = torch.zeros_like(mod.a2_inst)
        assert torch.equal(reconstruct_beta_conv(mod), torch.zeros(4, 3, 3, 3))

    def test_rank_one_example(self):
        mod = init_identity_conv(
            ConvShape(2, 2, 1), 1, False, ActivationKind.IDENTITY, dtype=torch.float64
        )
        mod.a2_in = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        mod.a2_inst = torch.tensor([[3.0]], dtype=torch.float64)
        beta = reconstruct_beta_conv(mod)
        expected = torch.tensor([[3.0, 6.0], [3.0, 6.0]], dtype=torch.float64)
        assert torch.equal(beta.reshape(2, 2), expected)

    def test_replicated_across_output_channels(self):
        rng = np.random.default_rng(3)
        mod = random_modulator(rng, 5, 3, 3, 2, True, ActivationKind.RELU)
        beta = reconstruct_beta_conv(mod)
        for o in range(1, 5):
            assert torch.equal(beta[o], beta[0])

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            mod = random_modulator(
                rng,
                int(rng.integers(1, 9)),
                int(rng.integers(1, 9)),
                int(rng.choice([1, 3])),
                int(rng.choice([1, 2, 4])),
                True,
                ActivationKind.RELU,
            )
            got = reconstruct_beta_conv(mod).numpy()
            assert np.abs(got - naive_beta_from_mod(mod)).max() <= 1e-12


class TestModulateConv:
    def test_identity_init_is_identity(self):
        g = torch.Generator().manual_seed(0)
        w = torch.randn(3, 2, 3, 3, generator=g)
        mod = init_identity_conv(ConvShape(3, 2, 3), 2, True, ActivationKind.RELU, generator=g)
        assert (modulate_conv(w, mod) - w).abs().max() <= 1e-6

    def test_hand_example(self):
        mod = init_identity_conv(
            ConvShape(2, 2, 1), 1, False, ActivationKind.IDENTITY, dtype=torch.float64
        )
        mod.m1_out = torch.tensor([[2.0], [3.0]], dtype=torch.float64)
        mod.m1_inst = torch.tensor([[1.0]], dtype=torch.float64)
        mod.m2_in = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        mod.a2_in = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        mod.a2_inst = torch.tensor([[3.0]], dtype=torch.float64)
        w = torch.ones(2, 2, 1, 1, dtype=torch.float64)
        expected = torch.tensor([[5.0, 10.0], [6.0, 12.0]], dtype=torch.float64)
        assert torch.equal(modulate_conv(w, mod).reshape(2, 2), expected)

    def test_zero_gamma_beta_equals_w(self):
        g = torch.Generator().manual_seed(5)
        w = torch.randn(2, 3, 1, 1, generator=g, dtype=torch.float64)
        mod = init_identity_conv(
            ConvShape(2, 3, 1), 1, False, ActivationKind.IDENTITY, dtype=torch.float64
        )
        mod.m2_in = torch.zeros_like(mod.m2_in)  # gamma == 0
        # beta == w, built from its rank-1 structure: w must be rank-1 replicated
        mod.a2_in = torch.tensor([[1.0], [2.0], [3.0]], dtype=torch.float64)
        mod.a2_inst = torch.tensor([[0.5]], dtype=torch.float64)
        w = reconstruct_beta_conv(mod).clone()
        assert torch.equal(modulate_conv(w, mod), w)

    def test_w_never_mutated(self):
        g = torch.Generator().manual_seed(9)
        w = torch.randn(4, 4, 3, 3, generator=g)
        before = w.clone()
        rng = np.random.default_rng(2)
        modulate_conv(w, random_modulator(rng, 4, 4, 3, 2, True, ActivationKind.RELU, torch.float32))
        assert torch.equal(w, before)

    def test_shape_mismatch(self):
        mod = init_identity_conv(ConvShape(2, 2, 3), 1, True, ActivationKind.RELU)
        with pytest.raises(ShapeError):
            modulate_conv(torch.zeros(2, 2, 1, 1), mod)


class TestFc:
    def test_ones_product(self):
        mod = init_identity_fc(2, 3, 1, dtype=torch.float64)
        mod.m_out = torch.ones(2, 1, dtype=torch.float64)
        mod.m_in = torch.ones(1, 3, dtype=torch.float64)
        gw, _, _, _ = reconstruct_fc(mod)
        assert torch.equal(gw, torch.ones(2, 3, dtype=torch.float64))

    def test_beta_hand_matmul(self):
        mod = init_identity_fc(2, 2, 1, dtype=torch.float64)
        mod.a_out = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        mod.a_in = torch.tensor([[3.0, 0.0]], dtype=torch.float64)
        _, bw, _, _ = reconstruct_fc(mod)
        assert torch.equal(bw, torch.tensor([[3.0, 0.0], [6.0, 0.0]], dtype=torch.float64))

    @pytest.mark.parametrize("r", [1, 2, 3])
    def test_gamma_rank_bounded(self, r):
        g = torch.Generator().manual_seed(13)
        mod = init_identity_fc(8, 6, r, dtype=torch.float64)
        mod.m_out = torch.randn(8, r, generator=g, dtype=torch.float64)
        mod.m_in = torch.randn(r, 6, generator=g, dtype=torch.float64)
        gw, _, _, _ = reconstruct_fc(mod)
        svals = torch.linalg.svdvals(gw)
        assert int((svals > 1e-9 * svals[0]).sum()) <= r

    def test_identity_modulation(self):
        g = torch.Generator().manual_seed(4)
        w, b = torch.randn(5, 7, generator=g), torch.randn(5, generator=g)
        mod = init_identity_fc(5, 7, 2, generator=g)
        wm, bm = modulate_fc(w, b, mod)
        assert (wm - w).abs().max() <= 1e-6
        assert (bm - b).abs().max() <= 1e-6

    def test_bias_modulation_example(self):
        mod = init_identity_fc(2, 2, 1, dtype=torch.float64)
        mod.gamma_b = 2.0 * torch.ones(2, dtype=torch.float64)
        mod.beta_b = torch.ones(2, dtype=torch.float64)
        b = torch.tensor([1.0, -1.0], dtype=torch.float64)
        _, bm = modulate_fc(torch.ones(2, 2, dtype=torch.float64), b, mod)
        assert torch.equal(bm, torch.tensor([3.0, -1.0], dtype=torch.float64))

    def test_zero_gamma_beta_equals_w(self):
        g = torch.Generator().manual_seed(21)
        mod = init_identity_fc(3, 4, 1, dtype=torch.float64)
        mod.m_out = torch.zeros(3, 1, dtype=torch.float64)  # gamma_w == 0
        mod.a_out = torch.randn(3, 1, generator=g, dtype=torch.float64)
        mod.a_in = torch.randn(1, 4, generator=g, dtype=torch.float64)
        w = (mod.a_out @ mod.a_in).clone()  # beta_w == w
        b = torch.randn(3, generator=g, dtype=torch.float64)
        wm, _ = modulate_fc(w, b, mod)
        assert torch.allclose(wm, w)


class TestInitIdentity:
    @pytest.mark.parametrize("act", ALL_ACTS)
    @pytest.mark.parametrize("r", [1, 2, 4])
    def test_identity_for_every_activation(self, act, r):
        g = torch.Generator().manual_seed(1)
        w = torch.randn(4, 3, 3, 3, generator=g)
        mod = init_identity(ConvShape(4, 3, 3), r, True, act, generator=g)
        assert (modulate_conv(w, mod) - w).abs().max() <= 1e-6

    def test_gamma_exact_ones_rank4_identity(self):
        mod = init_identity_conv(
            ConvShape(3, 5, 3), 4, True, ActivationKind.IDENTITY, dtype=torch.float64
        )
        assert torch.equal(reconstruct_gamma_conv(mod), torch.ones(3, 5, 3, 3, dtype=torch.float64))

    def test_gradient_reaches_a2_in_through_inst_noise(self):
        g = torch.Generator().manual_seed(2)
        mod = init_identity_conv(
            ConvShape(3, 3, 3), 2, True, ActivationKind.RELU, generator=g, dtype=torch.float64
        )
        mod.a2_in.requires_grad_(True)
        w = torch.randn(3, 3, 3, 3, generator=g, dtype=torch.float64)
        loss = modulate_conv(w, mod).square().sum()
        (grad,) = torch.autograd.grad(loss, mod.a2_in)
        assert grad.abs().max() > 0
        # matches central finite differences
        i = int(grad.abs().argmax())
        fd = central_difference(
            lambda: modulate_conv(w, mod).square().sum(), mod.a2_in, i
        )
        assert abs(fd - float(grad.view(-1)[i])) <= 1e-4 * max(abs(fd), 1e-8)

    def test_fc_dispatch(self):
        mod = init_identity((6, 5), 2)
        assert isinstance(mod, LeftFcModulator)
        assert (mod.d_out, mod.d_in) == (6, 5)


class TestGradients:
    def test_every_factor_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        g = torch.Generator().manual_seed(3)
        for c_out, c_in, k, r, with_bias, act in [
            (3, 2, 3, 2, True, ActivationKind.RELU),
            (2, 4, 1, 1, False, ActivationKind.GELU),
            (4, 3, 3, 4, True, ActivationKind.TANH),
        ]:
            mod = random_modulator(rng, c_out, c_in, k, r, with_bias, act)
            for p in mod.parameters():
                p.requires_grad_(True)
            w = torch.randn(c_out, c_in, k, k, generator=g, dtype=torch.float64)
            coeff = torch.randn(c_out, c_in, k, k, generator=g, dtype=torch.float64)

            def loss_fn():
                return (modulate_conv(w, mod) * coeff).sum()

            grads = torch.autograd.grad(loss_fn(), mod.parameters())
            for p, grad in zip(mod.parameters(), grads):
                for i in range(min(4, p.numel())):
                    fd = central_difference(loss_fn, p, i)
                    an = float(grad.view(-1)[i])
                    assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-6)


class TestParamCount:
    def test_conv_example_with_bias(self):
        parts = conv_param_parts(ConvShape(8, 4, 3), 1, True)
        assert parts == {"gamma": 21, "beta": 13, "act_bias": 17}
        assert param_count([ConvShape(8, 4, 3)], 1, True).total == 51

    def test_conv_example_without_bias(self):
        assert param_count([ConvShape(8, 4, 3)], 1, False).total == 34

    def test_empty(self):
        assert param_count([], 3, True).total == 0

    def test_counts_match_stored_entries(self):
        g = torch.Generator().manual_seed(6)
        shape = ConvShape(5, 7, 3)
        for r, with_bias in [(1, True), (2, False), (4, True)]:
            mod = init_identity_conv(shape, r, with_bias, ActivationKind.RELU, generator=g)
            stored = sum(t.numel() for t in mod.parameters())
            assert stored == param_count([shape], r, with_bias).total
        fc = init_identity_fc(9, 4, 3, generator=g)
        assert sum(t.numel() for t in fc.parameters()) == param_count([(9, 4)], 3, True).total

    @given(
        c_out=st.integers(1, 12),
        c_in=st.integers(1, 12),
        k=st.sampled_from([1, 3, 5]),
        r=st.integers(1, 8),
    )
    @settings(max_examples=50, deadline=None)
    def test_strictly_monotone_in_rank_and_bias(self, c_out, c_in, k, r):
        shape = ConvShape(c_out, c_in, k)
        smaller = param_count([shape], r, False).total
        assert param_count([shape], r + 1, False).total > smaller
        assert param_count([shape], r, True).total > smaller
