import math

import numpy as np
import pytest

import oracles
from conftest import make_random_model
from fgcam import model_graph as mg
from fgcam import tensor_core as tc
from fgcam.cam_backends import (CamWeights, RelevanceStack, cam_explanation,
                                explanation_components, gradcam_weights)
from fgcam.errors import UnsupportedStructureError
from fgcam.model_graph import LayerSpec, ModelGraph
from fgcam.relprop import (InputDomain, fg_cam_explain, improve_resolution,
                           lrp_explain, maxpool_route, zbeta_input, zplus_layer)


def stack(values, layer="x", signed=False):
    return RelevanceStack(layer=layer,
                          values=np.asarray(values, dtype=np.float32),
                          signed=signed)


def random_conv_instance(rng):
    ci = int(rng.integers(1, 4))
    co = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    h = int(rng.integers(k, 9))
    w = int(rng.integers(k, 9))
    stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    padding = (int(rng.integers(0, 2)), int(rng.integers(0, 2)))
    layer = LayerSpec(kind="conv2d", name="c",
                      weights=rng.standard_normal((co, ci, k, k)).astype(np.float32),
                      bias=rng.standard_normal(co).astype(np.float32),
                      stride=stride, padding=padding)
    x = np.abs(rng.standard_normal((ci, h, w))).astype(np.float32)
    oh, ow = tc.conv_output_hw(h, w, k, k, *stride, *padding)
    r = rng.random((co, oh, ow)).astype(np.float32)
    return layer, x, r


class TestZPlus:
    def test_linear_hand_example(self):
        layer = LayerSpec(kind="linear", name="fc",
                          weights=np.array([[1.0, 2.0]], dtype=np.float32),
                          bias=np.array([9.0], dtype=np.float32))
        out = zplus_layer(layer, np.array([1.0, 1.0], dtype=np.float32),
                          stack([3.0]))
        np.testing.assert_allclose(out.values, [1.0, 2.0], rtol=1e-6)

    def test_all_negative_weights_give_zero(self):
        layer = LayerSpec(kind="linear", name="fc",
                          weights=-np.ones((2, 3), dtype=np.float32),
                          bias=np.zeros(2, dtype=np.float32))
        out = zplus_layer(layer, np.ones(3, dtype=np.float32), stack([1.0, 1.0]))
        np.testing.assert_array_equal(out.values, np.zeros(3, dtype=np.float32))

    @pytest.mark.parametrize("seed", range(10))
    def test_conv_conservation(self, seed):
        rng = np.random.default_rng(seed)
        layer, x, r = random_conv_instance(rng)
        out = zplus_layer(layer, x, stack(r))
        m, out_shape = oracles.conv_as_matrix(np.maximum(layer.weights, 0.0),
                                              x.shape, layer.stride, layer.padding)
        z = m @ x.astype(np.float64).ravel()
        kept = r.astype(np.float64).ravel()[z > 0].sum()
        total = out.values.astype(np.float64).sum()
        assert total == pytest.approx(kept, rel=1e-4, abs=1e-7)

    @pytest.mark.parametrize("seed", range(5))
    def test_linear_conservation(self, seed):
        rng = np.random.default_rng(100 + seed)
        m_, n = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        layer = LayerSpec(kind="linear", name="fc",
                          weights=rng.standard_normal((m_, n)).astype(np.float32),
                          bias=rng.standard_normal(m_).astype(np.float32))
        x = np.abs(rng.standard_normal(n)).astype(np.float32)
        r = rng.random(m_).astype(np.float32)
        out = zplus_layer(layer, x, stack(r))
        z = np.maximum(layer.weights, 0.0).astype(np.float64) @ x.astype(np.float64)
        kept = r.astype(np.float64)[z > 0].sum()
        assert out.values.astype(np.float64).sum() == \
            pytest.approx(kept, rel=1e-4, abs=1e-7)

    @pytest.mark.parametrize("seed", range(5))
    def test_avgpool_conservation(self, seed):
        rng = np.random.default_rng(200 + seed)
        layer = LayerSpec(kind="avgpool2d", name="gap", kernel=(2, 2), stride=(2, 2))
        x = np.abs(rng.standard_normal((3, 8, 8))).astype(np.float32)
        r = rng.random((3, 4, 4)).astype(np.float32)
        out = zplus_layer(layer, x, stack(r))
        z = tc.avgpool2d(x, layer.kernel, layer.stride)
        kept = r.astype(np.float64)[z > 0].sum()
        assert out.values.astype(np.float64).sum() == \
            pytest.approx(kept, rel=1e-4, abs=1e-7)

    def test_flatten_reshapes_exactly(self):
        layer = LayerSpec(kind="flatten", name="flatten")
        r = np.arange(12, dtype=np.float32)
        out = zplus_layer(layer, np.zeros((3, 2, 2), dtype=np.float32), stack(r))
        np.testing.assert_array_equal(out.values, r.reshape(3, 2, 2))

    @pytest.mark.parametrize("seed", range(6))
    def test_conv_matches_dense_linear_equivalent(self, seed):
        rng = np.random.default_rng(300 + seed)
        layer, x, r = random_conv_instance(rng)
        got = zplus_layer(layer, x, stack(r))
        m, _ = oracles.conv_as_matrix(layer.weights, x.shape,
                                      layer.stride, layer.padding)
        want = oracles.dense_zplus(m, x, r).reshape(x.shape)
        np.testing.assert_allclose(got.values, want, rtol=1e-5, atol=1e-6)


class TestMaxpoolRoute:
    def test_single_window(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32)
        _, arg = tc.maxpool2d(x, 2, 2)
        out = maxpool_route(arg, stack([[[5.0]]]), x.shape)
        np.testing.assert_array_equal(out.values, [[[0, 0], [0, 5.0]]])

    @pytest.mark.parametrize("seed", range(5))
    def test_overlapping_windows_match_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 7, 7)).astype(np.float32)
        out_fwd, arg = tc.maxpool2d(x, (3, 3), (2, 2))
        r = rng.random(out_fwd.shape).astype(np.float32)
        got = maxpool_route(arg, stack(r), x.shape)
        want = oracles.brute_maxpool_route(x, (3, 3), (2, 2), r)
        np.testing.assert_allclose(got.values, want, atol=1e-6)

    def test_exact_conservation_non_overlapping(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 8, 8)).astype(np.float32)
        _, arg = tc.maxpool2d(x, 2, 2)
        r = rng.random((4, 4, 4)).astype(np.float32)
        out = maxpool_route(arg, stack(r), x.shape)
        assert math.fsum(out.values.ravel().tolist()) == \
            math.fsum(r.ravel().tolist())


class TestZBeta:
    def test_single_connection_ratio_is_one(self):
        layer = LayerSpec(kind="conv2d", name="c0",
                          weights=np.array([[[[2.0]]]], dtype=np.float32),
                          bias=np.zeros(1, dtype=np.float32),
                          stride=(1, 1), padding=(0, 0))
        domain = InputDomain(lower=np.array([-1.0], dtype=np.float32),
                             upper=np.array([1.0], dtype=np.float32))
        x = np.array([[[0.3]]], dtype=np.float32)
        out = zbeta_input(layer, x, domain, stack([[[7.0]]]))
        assert out.values[0, 0, 0] == pytest.approx(7.0, rel=1e-5)
        assert out.signed

    def test_hand_example(self):
        # w=[1,1], x=[.5,.5], b=0, h=1: numerators .5,.5, denominator 1
        layer = LayerSpec(kind="conv2d", name="c0",
                          weights=np.ones((1, 2, 1, 1), dtype=np.float32),
                          bias=np.zeros(1, dtype=np.float32),
                          stride=(1, 1), padding=(0, 0))
        domain = InputDomain(lower=np.zeros(2, dtype=np.float32),
                             upper=np.ones(2, dtype=np.float32))
        x = np.full((2, 1, 1), 0.5, dtype=np.float32)
        out = zbeta_input(layer, x, domain, stack([[[1.0]]]))
        np.testing.assert_allclose(out.values[:, 0, 0], [0.5, 0.5], rtol=1e-5)

    @pytest.mark.parametrize("seed", range(5))
    def test_conservation(self, seed):
        rng = np.random.default_rng(400 + seed)
        layer, x, r = random_conv_instance(rng)
        lo = np.full(x.shape[0], -2.0, dtype=np.float32)
        hi = np.full(x.shape[0], 2.0, dtype=np.float32)
        x = np.clip(x, -1.9, 1.9)
        domain = InputDomain(lower=lo, upper=hi)
        out = zbeta_input(layer, x, domain, stack(r))
        m, _ = oracles.conv_as_matrix(layer.weights, x.shape,
                                      layer.stride, layer.padding)
        lo_full = np.broadcast_to(lo[:, None, None], x.shape).ravel()
        hi_full = np.broadcast_to(hi[:, None, None], x.shape).ravel()
        wp, wn = np.maximum(m, 0), np.minimum(m, 0)
        z = m @ x.astype(np.float64).ravel() - wp @ lo_full - wn @ hi_full
        kept = r.astype(np.float64).ravel()[z > 0].sum()
        assert out.values.astype(np.float64).sum() == \
            pytest.approx(kept, rel=1e-4, abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(500 + seed)
        layer, x, r = random_conv_instance(rng)
        lo = np.full(x.shape[0], -2.0, dtype=np.float32)
        hi = np.full(x.shape[0], 2.0, dtype=np.float32)
        x = np.clip(x, -1.9, 1.9)
        out = zbeta_input(layer, x, InputDomain(lower=lo, upper=hi), stack(r))
        m, _ = oracles.conv_as_matrix(layer.weights, x.shape,
                                      layer.stride, layer.padding)
        lo_full = np.broadcast_to(lo[:, None, None], x.shape).ravel()
        hi_full = np.broadcast_to(hi[:, None, None], x.shape).ravel()
        want = oracles.dense_zbeta(m, x, lo_full, hi_full, r).reshape(x.shape)
        np.testing.assert_allclose(out.values, want, rtol=1e-4, atol=1e-5)

    def test_bad_domain_rejected(self):
        with pytest.raises(Exception):
            InputDomain(lower=np.array([1.0], dtype=np.float32),
                        upper=np.array([0.5], dtype=np.float32))


@pytest.fixture
def pipeline():
    model = make_random_model(np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal(model.input_shape).astype(np.float32)
    return model, mg.forward_trace(model, x), x


class TestImproveResolution:
    def test_target_equal_last_conv_is_identity(self, pipeline):
        model, trace, _ = pipeline
        w = gradcam_weights(model, trace, 0)
        comps = explanation_components(w, trace, model.last_conv_name())
        out = improve_resolution(model, trace, comps, model.last_conv_name())
        np.testing.assert_array_equal(out.values, comps.values)

    def test_shapes_at_every_layer(self, pipeline):
        model, trace, _ = pipeline
        w = gradcam_weights(model, trace, 1)
        comps = explanation_components(w, trace, model.last_conv_name())
        last = model.last_conv_index()
        for i in range(last + 1):
            name = model.layers[i].name
            out = improve_resolution(model, trace, comps, name)
            assert out.values.shape == trace.outputs[i].shape, name
        out = improve_resolution(model, trace, comps, "input")
        assert out.values.shape == trace.input.shape

    def test_target_after_last_conv_rejected(self, pipeline):
        model, trace, _ = pipeline
        w = gradcam_weights(model, trace, 0)
        comps = explanation_components(w, trace, model.last_conv_name())
        with pytest.raises(UnsupportedStructureError):
            improve_resolution(model, trace, comps, "fc")

    def test_conservation_through_relu_conv_maxpool(self):
        # positive weights, bias-free: every step conserves, so the walk does
        rng = np.random.default_rng(3)
        c1 = 3
        layers = [
            LayerSpec(kind="conv2d", name="conv1",
                      weights=np.abs(rng.standard_normal((c1, 1, 3, 3))).astype(np.float32),
                      bias=np.zeros(c1, dtype=np.float32), stride=(1, 1), padding=(1, 1)),
            LayerSpec(kind="relu", name="relu1"),
            LayerSpec(kind="maxpool2d", name="pool1", kernel=(2, 2), stride=(2, 2)),
            LayerSpec(kind="conv2d", name="conv2",
                      weights=np.abs(rng.standard_normal((2, c1, 3, 3))).astype(np.float32),
                      bias=np.zeros(2, dtype=np.float32), stride=(1, 1), padding=(1, 1)),
            LayerSpec(kind="flatten", name="flatten"),
            LayerSpec(kind="linear", name="fc",
                      weights=np.abs(rng.standard_normal((3, 2 * 6 * 6))).astype(np.float32),
                      bias=np.zeros(3, dtype=np.float32)),
        ]
        model = ModelGraph(layers=layers, input_shape=(1, 12, 12), class_count=3,
                           mean=np.zeros(1, dtype=np.float32),
                           std=np.ones(1, dtype=np.float32))
        x = rng.random(model.input_shape).astype(np.float32)
        trace = mg.forward_trace(model, x)
        comps = RelevanceStack(layer="conv2",
                               values=np.abs(rng.standard_normal(
                                   trace.output_of("conv2").shape)).astype(np.float32))
        out = improve_resolution(model, trace, comps, "conv1")
        total_in = out.values.astype(np.float64).sum()
        total_out = comps.values.astype(np.float64).sum()
        assert total_in == pytest.approx(total_out, rel=1e-4)


class TestFgCamExplain:
    @pytest.mark.parametrize("backend_name", ["grad", "score"])
    def test_reduces_to_cam_at_last_conv(self, pipeline, backend_name):
        model, trace, x = pipeline
        L = model.last_conv_name()
        got = fg_cam_explain(model, trace, x, 0, backend_name, L)
        if backend_name == "grad":
            w = gradcam_weights(model, trace, 0)
        else:
            from fgcam.cam_backends import scorecam_weights
            w = scorecam_weights(model, trace, x, 0)
        want = cam_explanation(w, trace, L)
        np.testing.assert_allclose(got.map, want.map, atol=1e-6)

    def test_unsigned_map_nonnegative(self, pipeline):
        model, trace, x = pipeline
        expl = fg_cam_explain(model, trace, x, 1, "grad", "input")
        assert (expl.map >= 0).all()
        assert expl.map.shape == model.input_shape[1:]

    def test_signed_map_skips_relu(self, pipeline):
        model, trace, x = pipeline
        signed = fg_cam_explain(model, trace, x, 1, "grad", "input", signed=True)
        unsigned = fg_cam_explain(model, trace, x, 1, "grad", "input")
        np.testing.assert_allclose(np.maximum(signed.map, 0.0), unsigned.map,
                                   atol=1e-6)
        assert signed.signed

    def test_positive_homogeneity(self, pipeline):
        # scaling the step-1 weights scales the map: check by scaling the
        # components directly through the rest of the pipeline
        model, trace, x = pipeline
        w = gradcam_weights(model, trace, 2)
        comps = explanation_components(w, trace, model.last_conv_name())
        lam = 3.5
        scaled = RelevanceStack(layer=comps.layer, values=lam * comps.values,
                                signed=comps.signed)
        a = improve_resolution(model, trace, comps, "input")
        b = improve_resolution(model, trace, scaled, "input")
        np.testing.assert_allclose(b.values, lam * a.values, rtol=1e-4, atol=1e-5)

    def test_unknown_backend_rejected(self, pipeline):
        model, trace, x = pipeline
        with pytest.raises(ValueError):
            fg_cam_explain(model, trace, x, 0, "nope", "input")

    def test_backends_agree_across_kernel_implementations(self, pipeline):
        from fgcam import kernels
        model, trace, x = pipeline
        maps = {}
        for name in ("numba", "numpy"):
            with kernels.use_backend(name):
                fresh = mg.forward_trace(model, x)
                maps[name] = fg_cam_explain(model, fresh, x, 0, "grad", "input").map
        np.testing.assert_allclose(maps["numba"], maps["numpy"],
                                   rtol=1e-4, atol=1e-6)


class TestLrp:
    def test_one_layer_positive_model(self):
        # y = Wx with positive W: input relevance proportional to w_ci * x_i
        rng = np.random.default_rng(5)
        w = np.abs(rng.standard_normal((3, 4))).astype(np.float32)
        layers = [
            LayerSpec(kind="conv2d", name="stem",
                      weights=np.ones((1, 1, 1, 1), dtype=np.float32),
                      bias=np.zeros(1, dtype=np.float32), stride=(1, 1),
                      padding=(0, 0)),
            LayerSpec(kind="relu", name="relu"),
            LayerSpec(kind="flatten", name="flatten"),
            LayerSpec(kind="linear", name="fc", weights=w,
                      bias=np.zeros(3, dtype=np.float32)),
        ]
        model = ModelGraph(layers=layers, input_shape=(1, 1, 4), class_count=3,
                           mean=np.zeros(1, dtype=np.float32),
                           std=np.ones(1, dtype=np.float32))
        x = rng.random((1, 1, 4)).astype(np.float32)
        trace = mg.forward_trace(model, x)
        expl = lrp_explain(model, trace, 1, signed=True)
        contrib = w[1] * trace.output_of("relu").ravel()
        want = contrib / contrib.sum() * trace.logits[1]
        # z-beta at the stem redistributes within single 1x1 connections,
        # which keeps per-pixel shares intact
        np.testing.assert_allclose(expl.map.ravel(), want, rtol=1e-3)

    def test_total_relevance_close_to_logit(self):
        rng = np.random.default_rng(6)
        c1 = 3
        layers = [
            LayerSpec(kind="conv2d", name="conv1",
                      weights=np.abs(rng.standard_normal((c1, 1, 3, 3))).astype(np.float32),
                      bias=np.zeros(c1, dtype=np.float32), stride=(1, 1), padding=(1, 1)),
            LayerSpec(kind="relu", name="relu1"),
            LayerSpec(kind="maxpool2d", name="pool1", kernel=(2, 2), stride=(2, 2)),
            LayerSpec(kind="flatten", name="flatten"),
            LayerSpec(kind="linear", name="fc",
                      weights=np.abs(rng.standard_normal((2, c1 * 16))).astype(np.float32),
                      bias=np.zeros(2, dtype=np.float32)),
        ]
        model = ModelGraph(layers=layers, input_shape=(1, 8, 8), class_count=2,
                           mean=np.full(1, 0.5, dtype=np.float32),
                           std=np.full(1, 0.5, dtype=np.float32))
        # keep pixels strictly inside the z-beta domain
        raw = rng.random(model.input_shape).astype(np.float32)
        x = (raw - 0.5) / 0.5
        trace = mg.forward_trace(model, x)
        expl = lrp_explain(model, trace, 0, signed=True)
        assert expl.map.astype(np.float64).sum() == \
            pytest.approx(float(trace.logits[0]), rel=1e-3)

    def test_non_target_logits_do_not_contribute(self, pipeline):
        model, trace, x = pipeline
        # zero out every other class row; the explanation must not change
        expl_a = lrp_explain(model, trace, 2, signed=True)
        mutated = make_random_model(np.random.default_rng(0))
        for c in range(mutated.class_count):
            if c != 2:
                mutated.layers[-1].weights[c] = 17.0
                mutated.layers[-1].bias[c] = -3.0
        trace_b = mg.forward_trace(mutated, x)
        expl_b = lrp_explain(mutated, trace_b, 2, signed=True)
        np.testing.assert_allclose(expl_a.map, expl_b.map, atol=1e-6)
