"""Tests for slicing, checkerboard machinery, and the context networks."""

from dataclasses import replace

import numpy as np
import pytest

from s2lc.coder import SIGMA_MIN
from s2lc.context import (
    CheckerboardMask,
    SliceLayout,
    ac_context,
    adaptive_maps,
    ag_context,
    checkerboard_mask,
    checkerboard_split,
    concat_slices,
    deformable_attention,
    entropy_parameters,
    latent_residual_prediction,
    project_prev_slices,
    slice_entropy_params,
    slice_residual,
    spatial_context,
    split_slices,
)
from s2lc.errors import ConfigurationError, ShapeError
from s2lc.transforms import ConvP

from oracles import ac_ref, adaptive_maps_ref, ag_ref, conv3x3_ref, deformable_ref


def _zero_conv(out_ch, in_ch, k=1):
    return ConvP(np.zeros((out_ch, in_ch, k, k), dtype=np.float32),
                 np.zeros(out_ch, dtype=np.float32))


class TestSliceLayout:
    def test_full_profile_slicing(self):
        layout = SliceLayout(10, 320)
        assert layout.slice_width == 32
        assert layout.ranges()[0] == (0, 32) and layout.ranges()[-1] == (288, 320)

    def test_desk_profile_slicing(self):
        assert SliceLayout(4, 32).slice_width == 8

    def test_uneven_slicing_rejected(self):
        with pytest.raises(ConfigurationError):
            SliceLayout(3, 32)

    def test_split_concat_identity(self, rng):
        y = rng.normal(size=(1, 32, 4, 6)).astype(np.float32)
        parts = split_slices(y, SliceLayout(4, 32))
        assert [p.shape[1] for p in parts] == [8, 8, 8, 8]
        np.testing.assert_array_equal(concat_slices(parts), y)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            split_slices(np.zeros((1, 16, 2, 2), dtype=np.float32), SliceLayout(4, 32))


class TestCheckerboard:
    def test_two_by_two_anchors(self):
        mask = checkerboard_mask(2, 2)
        np.testing.assert_array_equal(mask.anchor, [[True, False], [False, True]])

    def test_three_by_three_anchor_count(self):
        assert checkerboard_mask(3, 3).anchor.sum() == 5

    def test_partition_identity(self, rng):
        t = rng.normal(size=(1, 3, 5, 4)).astype(np.float32)
        mask = checkerboard_mask(5, 4)
        a = checkerboard_split(t, mask, "anchor")
        n = checkerboard_split(t, mask, "non_anchor")
        np.testing.assert_array_equal(a + n, t)
        assert not np.any(a * n)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            checkerboard_split(np.zeros((1, 1, 3, 3)), checkerboard_mask(2, 2), "anchor")

    def test_bad_part_name(self):
        with pytest.raises(ValueError):
            checkerboard_split(np.zeros((1, 1, 2, 2)), checkerboard_mask(2, 2), "both")


class TestSpatialContext:
    def _conv(self, rng, out_ch=16, in_ch=8):
        return ConvP(rng.normal(scale=0.3, size=(out_ch, in_ch, 5, 5)).astype(np.float32),
                     rng.normal(scale=0.3, size=out_ch).astype(np.float32))

    def test_zero_anchors_give_bias(self, rng):
        conv = self._conv(rng)
        out = spatial_context(np.zeros((1, 8, 6, 6), dtype=np.float32), conv)
        ref = np.broadcast_to(conv.bias[None, :, None, None], out.shape)
        np.testing.assert_allclose(out, ref, atol=1e-7)

    def test_non_anchor_taps_are_structurally_zero(self, rng):
        conv = self._conv(rng)
        mask = checkerboard_mask(6, 6)
        base = rng.normal(size=(1, 8, 6, 6)).astype(np.float32)
        anchors = checkerboard_split(base, mask, "anchor")
        out1 = spatial_context(anchors, conv)
        # arbitrary junk at non-anchor input positions must not change the
        # output anywhere it is consumed (the non-anchor positions)
        junk = anchors + checkerboard_split(
            rng.normal(scale=100, size=base.shape).astype(np.float32), mask, "non_anchor"
        )
        out2 = spatial_context(junk, conv)
        used = mask.non_anchor
        np.testing.assert_array_equal(out1[:, :, used], out2[:, :, used])

    def test_impulse_response_hits_odd_parity_offsets_only(self, rng):
        conv = self._conv(rng, out_ch=4, in_ch=1)
        x = np.zeros((1, 1, 7, 7), dtype=np.float32)
        x[0, 0, 2, 2] = 1.0  # anchor-parity impulse
        out = spatial_context(x, conv) - conv.bias[None, :, None, None]
        nonzero = np.argwhere(np.abs(out[0]).sum(axis=0) > 1e-9)
        for r, c in nonzero:
            dr, dc = r - 2, c - 2
            assert abs(dr) <= 2 and abs(dc) <= 2, "outside the 5x5 neighborhood"
            assert (dr + dc) % 2 == 1, "even-parity tap leaked"
        # every admissible in-range tap responds for some channel
        expected = {(2 + dr, 2 + dc) for dr in range(-2, 3) for dc in range(-2, 3)
                    if (dr + dc) % 2 == 1 and 0 <= 2 + dr < 7 and 0 <= 2 + dc < 7}
        assert {tuple(p) for p in nonzero} == expected


class TestAdaptiveMaps:
    def test_zero_weights_give_half(self, desk_weights):
        maps = desk_weights.context_params()[0].ag.maps
        zero = replace(maps, s_w1=_zero_conv(16, 16), s_w2=_zero_conv(1, 16),
                       c_w1=_zero_conv(16, 16), c_w2=_zero_conv(16, 16))
        x = np.ones((1, 16, 3, 3), dtype=np.float32)
        s_map, c_map = adaptive_maps(x, zero)
        np.testing.assert_array_equal(s_map, np.full((1, 1, 3, 3), 0.5, dtype=np.float32))
        np.testing.assert_array_equal(c_map, np.full((1, 16, 1, 1), 0.5, dtype=np.float32))

    def test_outputs_strictly_inside_unit_interval(self, desk_weights, rng):
        maps = desk_weights.context_params()[1].ac.maps
        x = rng.normal(scale=5, size=(1, 16, 4, 4)).astype(np.float32)
        s_map, c_map = adaptive_maps(x, maps)
        for m in (s_map, c_map):
            assert np.all(m > 0.0) and np.all(m < 1.0)

    def test_matches_formula_oracle(self, desk_weights, rng):
        maps = desk_weights.context_params()[2].ag.maps
        for _ in range(100):
            x = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
            s_map, c_map = adaptive_maps(x, maps)
            s_ref, c_ref = adaptive_maps_ref(x, maps)
            np.testing.assert_allclose(s_map, s_ref, atol=1e-6)
            np.testing.assert_allclose(c_map, c_ref, atol=1e-6)


class TestDeformableAttention:
    def test_zero_offsets_degenerate_to_pointwise_gather(self, desk_weights, rng):
        deform = desk_weights.context_params()[1].ag.deform
        deform = replace(deform, offset=_zero_conv(2 * deform.heads * deform.points, 16, k=3))
        x = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
        ctx = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
        out = deformable_attention(x, ctx, deform)
        # all samples land on the reference point: output = out_proj(v(point))
        from s2lc.tensor import ConvSpec, conv2d

        v = conv2d(ctx, deform.v.weight, deform.v.bias, ConvSpec(1, 1))
        ref = conv2d(v, deform.out.weight, deform.out.bias, ConvSpec(1, 1))
        np.testing.assert_allclose(out, ref, atol=1e-6)

    def test_matches_staged_oracle(self, desk_weights, rng):
        deform = desk_weights.context_params()[0].ag.deform
        for _ in range(5):
            q = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
            ctx = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
            out = deformable_attention(q, ctx, deform)
            ref = deformable_ref(q, ctx, deform)
            np.testing.assert_allclose(out, ref, atol=1e-6)

    def test_spatial_mismatch_rejected(self, desk_weights):
        deform = desk_weights.context_params()[0].ag.deform
        with pytest.raises(ShapeError):
            deformable_attention(np.zeros((1, 16, 4, 4), dtype=np.float32),
                                 np.zeros((1, 16, 2, 2), dtype=np.float32), deform)


class TestAgAcContext:
    def test_ag_zero_depthwise_leaves_gated_global_branch(self, desk_weights, rng):
        ag = desk_weights.context_params()[1].ag
        ag_zero_dw = replace(ag, dw=ConvP(np.zeros((16, 1, 3, 3), dtype=np.float32),
                                          np.zeros(16, dtype=np.float32)))
        x = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
        out = ag_context(x, ag_zero_dw)
        g = deformable_attention(x, x, ag.deform)
        _, c_map = adaptive_maps(x, ag.maps)
        np.testing.assert_allclose(out, c_map * g, atol=1e-7)

    def test_ag_empty_context_is_deterministic_constant_field(self, desk_weights):
        sp = desk_weights.context_params()[0]
        zero = np.zeros((1, 16, 4, 4), dtype=np.float32)
        out1 = ag_context(zero, sp.ag)
        out2 = ag_context(zero, sp.ag)
        np.testing.assert_array_equal(out1, out2)
        # spatially constant: every position sees identical bias-driven inputs
        flat = out1[0].reshape(16, -1)
        np.testing.assert_allclose(flat, np.tile(flat[:, :1], (1, 16)), atol=1e-6)

    def test_ag_matches_transcription_oracle(self, desk_weights, rng):
        ag = desk_weights.context_params()[2].ag
        for _ in range(20):
            x = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
            np.testing.assert_allclose(ag_context(x, ag), ag_ref(x, ag), atol=1e-6)

    def test_ac_zero_channel_branch_leaves_gated_depthwise(self, desk_weights, rng):
        ac = desk_weights.context_params()[1].ac
        ac_zero = replace(ac, cw1=_zero_conv(16, 16), cw2=_zero_conv(16, 16))
        x = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
        out = ac_context(x, ac_zero)
        d = conv3x3_ref(x, ac.dw.weight, ac.dw.bias, depthwise=True).astype(np.float32)
        _, c_map = adaptive_maps(x, ac.maps)
        np.testing.assert_allclose(out, c_map * d, atol=1e-6)

    def test_ac_output_shape_contract(self, desk_weights, rng):
        ac = desk_weights.context_params()[3].ac
        x = rng.normal(size=(1, 16, 5, 7)).astype(np.float32)
        assert ac_context(x, ac).shape == (1, 16, 5, 7)

    def test_ac_matches_transcription_oracle(self, desk_weights, rng):
        ac = desk_weights.context_params()[3].ac
        for _ in range(20):
            x = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
            np.testing.assert_allclose(ac_context(x, ac), ac_ref(x, ac), atol=1e-6)


class TestEntropyParameters:
    def test_sigma_respects_floor(self, desk_weights, rng):
        sp = desk_weights.context_params()[0]
        phi_hs = rng.normal(size=(1, 64, 4, 4)).astype(np.float32)
        params = slice_entropy_params(phi_hs, [], None, sp)
        assert np.all(params.sigma >= SIGMA_MIN)
        assert params.mu.shape == (1, 8, 4, 4) and params.sigma.shape == (1, 8, 4, 4)

    def test_zero_weights_reduce_to_biases(self, desk_weights):
        sp = desk_weights.context_params()[0]
        mu_bias = np.linspace(-1, 1, 8).astype(np.float32)
        sig_bias = np.linspace(-2, 2, 8).astype(np.float32)
        gep2 = ConvP(np.zeros((16, 24, 1, 1), dtype=np.float32),
                     np.concatenate([mu_bias, sig_bias]))
        sp0 = replace(sp, gep=(sp.gep[0], sp.gep[1], gep2))
        phi = np.zeros((1, 64, 2, 2), dtype=np.float32)
        params = slice_entropy_params(phi, [], None, sp0)
        np.testing.assert_allclose(params.mu[0, :, 0, 0], mu_bias, atol=1e-7)
        expected_sigma = np.maximum(np.logaddexp(0, sig_bias.astype(np.float64)), SIGMA_MIN)
        np.testing.assert_allclose(params.sigma[0, :, 0, 0], expected_sigma, rtol=1e-6)

    def test_anchor_pass_feeds_structural_zero_spatial_context(self, desk_weights, rng):
        sp = desk_weights.context_params()[2]
        phi_hs = rng.normal(size=(1, 64, 4, 4)).astype(np.float32)
        prev = [rng.normal(size=(1, 8, 4, 4)).astype(np.float32) for _ in range(2)]
        anchor_pass = slice_entropy_params(phi_hs, prev, None, sp)
        ctx = project_prev_slices(prev, sp, (4, 4))
        phi_ch = ac_context(ctx, sp.ac) + ag_context(ctx, sp.ag)
        direct = entropy_parameters(phi_hs, phi_ch, np.zeros((1, 16, 4, 4), dtype=np.float32), sp)
        np.testing.assert_array_equal(anchor_pass.mu, direct.mu)
        np.testing.assert_array_equal(anchor_pass.sigma, direct.sigma)
        # while a non-zero spatial context changes the outcome
        other = entropy_parameters(phi_hs, phi_ch,
                                   rng.normal(size=(1, 16, 4, 4)).astype(np.float32), sp)
        assert not np.array_equal(other.mu, anchor_pass.mu)


class TestLatentResidual:
    def test_bounds_strictly_open(self, desk_weights, rng):
        sp = desk_weights.context_params()[0]
        for _ in range(20):
            scale = float(rng.uniform(0.1, 40.0))
            lrp = tuple(
                ConvP((rng.normal(size=c.weight.shape) * scale).astype(np.float32),
                      (rng.normal(size=c.bias.shape) * scale).astype(np.float32))
                for c in sp.lrp
            )
            spx = replace(sp, lrp=lrp)
            phi = rng.normal(size=(1, 64, 4, 4)).astype(np.float32)
            y_hat = rng.normal(size=(1, 8, 4, 4)).astype(np.float32)
            corr = slice_residual(phi, [], y_hat, spx)
            assert np.all(corr > -0.5) and np.all(corr < 0.5)

    def test_zero_weights_zero_bias_give_zero(self, desk_weights):
        sp = desk_weights.context_params()[1]
        lrp = (
            ConvP(np.zeros((24, 40, 3, 3), dtype=np.float32), np.zeros(24, dtype=np.float32)),
            ConvP(np.zeros((16, 24, 3, 3), dtype=np.float32), np.zeros(16, dtype=np.float32)),
            ConvP(np.zeros((8, 16, 3, 3), dtype=np.float32), np.zeros(8, dtype=np.float32)),
        )
        spx = replace(sp, lrp=lrp)
        phi = np.ones((1, 64, 3, 3), dtype=np.float32)
        prev = [np.ones((1, 8, 3, 3), dtype=np.float32)]
        out = slice_residual(phi, prev, np.ones((1, 8, 3, 3), dtype=np.float32), spx)
        np.testing.assert_array_equal(out, np.zeros_like(out))

    def test_matches_transcription_oracle(self, desk_weights, rng):
        from oracles import conv3x3_ref

        sp = desk_weights.context_params()[2]
        phi_slice = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
        ctx = rng.normal(size=(1, 16, 4, 4)).astype(np.float32)
        y_hat = rng.normal(size=(1, 8, 4, 4)).astype(np.float32)
        out = latent_residual_prediction(phi_slice, ctx, y_hat, sp)

        def lrelu(v):
            return np.where(v >= 0, v, 0.01 * v).astype(np.float32)

        x = np.concatenate([phi_slice, ctx, y_hat], axis=1)
        x = lrelu(conv3x3_ref(x, sp.lrp[0].weight, sp.lrp[0].bias).astype(np.float32))
        x = lrelu(conv3x3_ref(x, sp.lrp[1].weight, sp.lrp[1].bias).astype(np.float32))
        x = conv3x3_ref(x, sp.lrp[2].weight, sp.lrp[2].bias).astype(np.float32)
        ref = 0.5 * np.tanh(x.astype(np.float64))
        np.testing.assert_allclose(out, ref, atol=1e-6)


class TestCausality:
    def _setup(self, desk_weights, rng):
        cps = desk_weights.context_params()
        phi_hs = rng.normal(size=(1, 64, 4, 4)).astype(np.float32)
        slices = [rng.normal(size=(1, 8, 4, 4)).astype(np.float32) for _ in range(4)]
        return cps, phi_hs, slices

    def test_channel_causality(self, desk_weights, rng):
        cps, phi_hs, slices = self._setup(desk_weights, rng)
        mask = checkerboard_mask(4, 4)
        for trial in range(10):
            i = int(rng.integers(0, 4))
            j = int(rng.integers(i, 4))
            base = slice_entropy_params(phi_hs, slices[:i], None, cps[i])
            perturbed = [s.copy() for s in slices]
            perturbed[j] += rng.normal(scale=3.0, size=perturbed[j].shape).astype(np.float32)
            again = slice_entropy_params(phi_hs, perturbed[:i], None, cps[i])
            np.testing.assert_array_equal(base.mu, again.mu)
            np.testing.assert_array_equal(base.sigma, again.sigma)

    def test_spatial_causality_anchor_pass(self, desk_weights, rng):
        cps, phi_hs, slices = self._setup(desk_weights, rng)
        # the anchor pass never reads the current slice at all
        base = slice_entropy_params(phi_hs, slices[:1], None, cps[1])
        assert base.mu.shape == (1, 8, 4, 4)

    def test_spatial_causality_non_anchor_pass(self, desk_weights, rng):
        # parameters actually used by the non-anchor pass (those at non-anchor
        # positions) must never depend on non-anchor latent values
        cps, phi_hs, slices = self._setup(desk_weights, rng)
        mask = checkerboard_mask(4, 4)
        used = mask.non_anchor
        anchors = checkerboard_split(slices[2], mask, "anchor")
        base = slice_entropy_params(phi_hs, slices[:2], anchors, cps[2])
        for _ in range(10):
            junk = anchors + checkerboard_split(
                rng.normal(scale=10, size=anchors.shape).astype(np.float32), mask, "non_anchor"
            )
            again = slice_entropy_params(phi_hs, slices[:2], junk, cps[2])
            np.testing.assert_array_equal(base.mu[:, :, used], again.mu[:, :, used])
            np.testing.assert_array_equal(base.sigma[:, :, used], again.sigma[:, :, used])
