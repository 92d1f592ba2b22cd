import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lanhdr.alignment import (
    AlignmentModule,
    KeyQueryExtractor,
    UpsampleBlock,
    downsample4,
    fold_average,
    fuse_confidence,
    match_top1,
    rearrange_values,
    unfold_patches,
)
from lanhdr.datapipe import smooth_texture, synthesize_exposures
from lanhdr.errors import ContractError, InvalidInputError
from oracles import area_average, brute_force_match, reflect_patches


def shift_accuracy(index, h, w, dy, dx, margin):
    """Fraction of interior queries whose match is the query position moved by (dy, dx)."""
    idx = index.view(h, w)
    ys, xs = torch.meshgrid(torch.arange(h), torch.arange(w), indexing="ij")
    target = ((ys + dy) % h) * w + (xs + dx) % w
    inner = (slice(margin, h - margin - dy), slice(margin, w - margin - dx))
    return (idx[inner] == target[inner]).double().mean().item()


class TestDownsample:
    def test_constant(self):
        out = downsample4(torch.full((2, 8, 12), 0.3))
        assert out.shape == (2, 2, 3)
        torch.testing.assert_close(out, torch.full((2, 2, 3), 0.3))

    def test_single_bright_pixel(self):
        x = torch.ones(1, 4, 4, dtype=torch.float64)
        x[0, 1, 2] = 16.0
        out = downsample4(x)
        assert out.item() == pytest.approx(area_average(x.numpy())[0, 0, 0])
        assert out.item() == pytest.approx((15 + 16) / 16)

    def test_random_against_loop_oracle(self):
        x = torch.rand(2, 8, 16, dtype=torch.float64)
        np.testing.assert_allclose(downsample4(x).numpy(), area_average(x.numpy()), rtol=1e-12)

    def test_shape_contract(self):
        assert downsample4(torch.rand(6, 64, 64)).shape == (6, 16, 16)
        assert downsample4(torch.rand(2, 6, 64, 64)).shape == (2, 6, 16, 16)

    def test_indivisible(self):
        with pytest.raises(ContractError):
            downsample4(torch.rand(3, 10, 12))


class TestKeyQuery:
    def test_identical_inputs(self):
        net = KeyQueryExtractor(16)
        y = torch.rand(1, 1, 16, 16)
        assert torch.equal(net(y), net(y.clone()))

    def test_shape(self):
        assert KeyQueryExtractor(24)(torch.rand(1, 1, 16, 16)).shape == (1, 24, 16, 16)

    def test_rejects_colour(self):
        with pytest.raises(ContractError):
            KeyQueryExtractor(8)(torch.rand(1, 3, 16, 16))

    def test_shift_equivariant_interior(self):
        net = KeyQueryExtractor(8, layers=3).double()
        y = torch.rand(1, 1, 24, 24, dtype=torch.float64)
        shifted = torch.roll(y, (2, 3), dims=(-2, -1))
        a = torch.roll(net(y), (2, 3), dims=(-2, -1))
        b = net(shifted)
        m = 3 + 3  # receptive-field radius plus the shift
        torch.testing.assert_close(a[..., m:-m, m:-m], b[..., m:-m, m:-m])


class TestMatchTop1:
    def test_self_match_is_identity(self):
        q = torch.randn(1, 30, 18, dtype=torch.float64)
        res = match_top1(q, q.clone())
        assert torch.equal(res.index[0], torch.arange(30))
        torch.testing.assert_close(res.confidence, torch.ones(1, 30, dtype=torch.float64))

    def test_single_patch(self):
        q, k = torch.randn(1, 9, dtype=torch.float64), torch.randn(1, 9, dtype=torch.float64)
        res = match_top1(q, k)
        cos = (q @ k.T / (q.norm() * k.norm())).item()
        assert res.index.tolist() == [0]
        assert res.confidence.item() == pytest.approx(cos, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force_on_5x5_maps(self, seed):
        g = torch.Generator().manual_seed(seed)
        qf = torch.randn(4, 5, 5, generator=g, dtype=torch.float64)
        kf = torch.randn(4, 5, 5, generator=g, dtype=torch.float64)
        qp, kp = unfold_patches(qf[None])[0], unfold_patches(kf[None])[0]
        np.testing.assert_allclose(qp.numpy(), reflect_patches(qf.numpy()))
        idx, score = brute_force_match(reflect_patches(qf.numpy()), reflect_patches(kf.numpy()))
        res = match_top1(qp, kp)
        assert res.index.tolist() == idx.tolist()
        np.testing.assert_allclose(res.confidence.numpy(), score, atol=1e-12)

    @pytest.mark.parametrize("tile", [1, 7, 64, 10_000])
    def test_tiling_does_not_change_result(self, tile):
        g = torch.Generator().manual_seed(3)
        q = torch.randn(2, 100, 27, generator=g)
        k = torch.randn(2, 100, 27, generator=g)
        ref = match_top1(q, k, tile=100)
        res = match_top1(q, k, tile=tile)
        assert torch.equal(res.index, ref.index)
        assert torch.equal(res.confidence, ref.confidence)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_positive_rescaling_invariance(self, seed):
        g = torch.Generator().manual_seed(seed)
        q = torch.randn(1, 40, 18, generator=g, dtype=torch.float64)
        k = torch.randn(1, 40, 18, generator=g, dtype=torch.float64)
        lq = torch.rand(1, 40, 1, generator=g, dtype=torch.float64) * 10 + 0.1
        lk = torch.rand(1, 40, 1, generator=g, dtype=torch.float64) * 10 + 0.1
        a, b = match_top1(q, k), match_top1(q * lq, k * lk)
        assert torch.equal(a.index, b.index)
        torch.testing.assert_close(a.confidence, b.confidence, atol=1e-6, rtol=0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 60))
    def test_ranges(self, seed, n):
        g = torch.Generator().manual_seed(seed)
        res = match_top1(torch.randn(1, n, 9, generator=g), torch.randn(1, n, 9, generator=g))
        assert ((res.index >= 0) & (res.index < n)).all()
        assert ((res.confidence >= -1 - 1e-6) & (res.confidence <= 1 + 1e-6)).all()

    def test_zero_patches_are_finite(self):
        q = torch.zeros(1, 4, 9)
        k = torch.randn(1, 4, 9)
        k[0, 2] = 0
        res = match_top1(q, k)
        assert torch.isfinite(res.confidence).all()
        assert res.index.tolist() == [[0, 0, 0, 0]]

    def test_ties_pick_lowest_index(self):
        q = torch.tensor([[[1.0, 0.0]]])
        k = torch.tensor([[[0.0, 1.0], [2.0, 0.0], [1.0, 0.0]]])
        assert match_top1(q, k).index.item() == 1

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            match_top1(torch.zeros(1, 0, 9), torch.zeros(1, 0, 9))

    def test_mismatched(self):
        with pytest.raises(ContractError):
            match_top1(torch.zeros(1, 3, 9), torch.zeros(1, 3, 18))


class TestRearrange:
    def test_identity_index_roundtrip(self):
        x = torch.randn(2, 5, 7, 6, dtype=torch.float64)
        patches = unfold_patches(x)
        ident = torch.arange(42).expand(2, 42)
        torch.testing.assert_close(rearrange_values(patches, ident, (7, 6)), x, atol=1e-6, rtol=0)
        torch.testing.assert_close(fold_average(patches, (7, 6)), x, atol=1e-6, rtol=0)

    def test_constant_index_against_construction(self):
        g = torch.Generator().manual_seed(0)
        x = torch.randn(1, 2, 4, 5, generator=g, dtype=torch.float64)
        out = rearrange_values(unfold_patches(x), torch.zeros(1, 20, dtype=torch.long), (4, 5))
        patch0 = reflect_patches(x[0].numpy())[0].reshape(2, 3, 3)
        h, w = 4, 5
        expected = np.zeros((2, h, w))
        for y in range(h):
            for xx in range(w):
                acc, cnt = np.zeros(2), 0
                for cy in range(y - 1, y + 2):
                    for cx in range(xx - 1, xx + 2):
                        if 0 <= cy < h and 0 <= cx < w:  # a patch centred here covers (y, xx)
                            acc += patch0[:, y - cy + 1, xx - cx + 1]
                            cnt += 1
                expected[:, y, xx] = acc / cnt
        np.testing.assert_allclose(out[0].numpy(), expected, atol=1e-12)

    def test_shape(self):
        v = unfold_patches(torch.randn(1, 3, 8, 8))
        assert rearrange_values(v, torch.randint(0, 64, (1, 64)), (8, 8)).shape == (1, 3, 8, 8)

    def test_out_of_range(self):
        v = unfold_patches(torch.randn(1, 3, 4, 4))
        with pytest.raises(RuntimeError):
            rearrange_values(v, torch.full((1, 16), 16), (4, 4))


class TestFuseConfidence:
    def test_zero_confidence(self):
        v = torch.randn(1, 3, 4, 4)
        assert fuse_confidence(v, v, torch.zeros(1, 16)).eq(0).all()

    def test_unit_confidence_is_concat(self):
        v, r = torch.randn(1, 3, 4, 4), torch.randn(1, 3, 4, 4)
        assert torch.equal(fuse_confidence(v, r, torch.ones(1, 16)), torch.cat([v, r], 1))

    def test_elementwise_oracle(self):
        g = torch.Generator().manual_seed(1)
        v, r = torch.randn(1, 2, 3, 3, generator=g), torch.randn(1, 2, 3, 3, generator=g)
        s = torch.rand(1, 9, generator=g)
        out = fuse_confidence(v, r, s)
        for c in range(4):
            src = v if c < 2 else r
            for y in range(3):
                for x in range(3):
                    assert out[0, c, y, x].item() == pytest.approx(src[0, c % 2, y, x].item() * s[0, y * 3 + x].item())

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            fuse_confidence(torch.zeros(1, 2, 4, 4), torch.zeros(1, 3, 4, 4), torch.zeros(1, 16))


class TestUpsample:
    def test_shape(self):
        assert UpsampleBlock(16, 24)(torch.rand(1, 16, 16, 16)).shape == (1, 24, 32, 32)

    def test_zero_input_zero_bias(self):
        blk = UpsampleBlock(4, 4)
        torch.nn.init.zeros_(blk.conv.bias)
        assert blk(torch.zeros(1, 4, 8, 8)).eq(0).all()

    def test_interpolation_of_constant(self):
        blk = UpsampleBlock(2, 2)
        up = blk.interpolate(torch.full((1, 2, 4, 4), 0.7))
        assert up.shape == (1, 2, 8, 8) and up.eq(0.7).all()


def _window_pair(size=64, seed=0, shift=(4, 8), ref_e=1.0, nbr_e=4.0):
    g = torch.Generator().manual_seed(seed)
    # dim enough that nbr_e * linear stays below 1: no saturation anywhere
    clean = smooth_texture((size, size), g, octaves=6) * (0.9 / nbr_e) ** (1 / 2.2)
    ref = synthesize_exposures(clean, ref_e).pixels
    nbr = synthesize_exposures(torch.roll(clean, shift, dims=(-2, -1)), nbr_e).pixels
    return ref, nbr


def six(ldr, e):
    return torch.cat([ldr, ldr**2.2 / e], dim=0)[None]


class TestAlignmentModule:
    def test_self_alignment_identity(self):
        ref, _ = _window_pair()
        mod = AlignmentModule(16, 16, 16)
        with torch.no_grad():
            fa, match = mod(six(ref, 1.0), ref[None], 1.0, 1.0)
        assert torch.equal(match.index[0], torch.arange(256))
        assert fa.shape == (1, 16, 32, 32)

    @pytest.mark.parametrize("seed", range(3))
    def test_translation_recovered(self, seed):
        torch.manual_seed(seed)
        ref, nbr = _window_pair(seed=seed)
        mod = AlignmentModule(32, 16, 16, layers=3)
        with torch.no_grad():
            _, match = mod(six(nbr, 4.0), ref[None], 4.0, 1.0)
        assert shift_accuracy(match.index[0], 16, 16, 1, 2, margin=4) >= 0.95

    def test_batched_exposures(self):
        ref, nbr = _window_pair()
        mod = AlignmentModule(8, 8, 8, layers=2)
        with torch.no_grad():
            fa, match = mod(torch.cat([six(nbr, 4.0)] * 2), torch.stack([ref, ref]),
                            torch.tensor([4.0, 4.0]), torch.tensor([1.0, 1.0]))
        assert fa.shape == (2, 8, 32, 32)
        assert torch.equal(match.index[0], match.index[1])

    def test_rejects_wrong_channels(self):
        mod = AlignmentModule(8, 8, 8)
        with pytest.raises(ContractError):
            mod(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16), 1.0, 1.0)
