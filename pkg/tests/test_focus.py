"""Tests for focusing, the context module and diffusion."""

import math

import numpy as np
import pytest

from bagcn.errors import ConfigError, ShapeError, ValidationError
from bagcn.focus import (
    AttentionMap,
    ContextMode,
    FocusDiffuseParams,
    FocusMode,
    LstmParams,
    LstmState,
    attention_scores,
    cam_forward,
    diffuse,
    fd_forward,
    focus,
    lstm_cell,
)
from bagcn.tensor import Tensor, sigmoid

PROPERTY_CASES = 100


def _params(
    channels: int = 4,
    context_channels: int = 4,
    context: ContextMode = ContextMode.BI,
    seed: int = 0,
) -> FocusDiffuseParams:
    return FocusDiffuseParams("fd", channels, context_channels, context, np.random.default_rng(seed))


def _zero_scores(params: FocusDiffuseParams) -> None:
    params.score_weight.assign(np.zeros(params.score_weight.shape))
    params.score_bias.assign(np.zeros(1))


def _silence_context(params: FocusDiffuseParams) -> None:
    for layer in params.cam_layers:
        for direction in (layer.forward, layer.backward):
            if direction is not None:
                direction.w_input.assign(np.zeros(direction.w_input.shape))
                direction.w_hidden.assign(np.zeros(direction.w_hidden.shape))


class TestAttentionScores:
    """Tests for the per-joint sigmoid scores."""

    def test_known_value(self) -> None:
        """Test sigmoid(2) for a single channel with unit weight."""
        params = _params(channels=1)
        params.score_weight.assign([[1.0]])
        scores = attention_scores(Tensor(np.full((1, 1, 1, 1), 2.0)), params)
        assert scores.item() == pytest.approx(0.8807970779778823, abs=1e-12)

    def test_zero_weights_give_one_half(self, rng: np.random.Generator) -> None:
        """Zero score weights give exactly 0.5 everywhere."""
        params = _params()
        _zero_scores(params)
        scores = attention_scores(Tensor(rng.normal(size=(2, 5, 3, 4))), params)
        assert np.all(scores.data == 0.5)

    def test_range(self) -> None:
        """Scores stay in [0, 1] for large random inputs."""
        gen = np.random.default_rng(3)
        for case in range(PROPERTY_CASES):
            params = _params(seed=case)
            scores = attention_scores(Tensor(gen.normal(scale=50.0, size=(2, 4, 3, 4))), params)
            assert scores.shape == (2, 4, 3, 1)
            assert np.all(scores.data >= 0.0) and np.all(scores.data <= 1.0)


class TestFocus:
    """Tests for the latent node aggregation."""

    @pytest.fixture
    def three_joints(self) -> tuple[Tensor, FocusDiffuseParams]:
        """Joints with values 1, 2 and 3 and an identity node projection."""
        params = _params(channels=1, context_channels=2)
        params.w_node.assign([[1.0]])
        _zero_scores(params)
        return Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1)), params

    @pytest.mark.parametrize(
        ("mode", "expected"), [(FocusMode.AVG, 2.0), (FocusMode.MAX, 3.0), (FocusMode.ATT, 2.0)]
    )
    def test_hand_examples(
        self, three_joints: tuple[Tensor, FocusDiffuseParams], mode: FocusMode, expected: float
    ) -> None:
        """Test avg, max and uniform-attention aggregation of [1, 2, 3]."""
        f_in, params = three_joints
        node = focus(f_in, mode, params)
        assert node.shape == (1, 1, 1, 1)
        assert node.item() == expected

    def test_attention_weights(self, three_joints: tuple[Tensor, FocusDiffuseParams]) -> None:
        """Test the weighted mean for explicit scores."""
        f_in, params = three_joints
        scores = Tensor(np.array([1.0, 0.0, 1.0]).reshape(1, 3, 1, 1))
        assert focus(f_in, FocusMode.ATT, params, scores).item() == 2.0
        scores = Tensor(np.array([0.0, 0.0, 0.5]).reshape(1, 3, 1, 1))
        assert focus(f_in, FocusMode.ATT, params, scores).item() == 3.0

    def test_off_has_no_node(self, three_joints: tuple[Tensor, FocusDiffuseParams]) -> None:
        """Focus refuses mode 'off'."""
        f_in, params = three_joints
        with pytest.raises(ValidationError):
            focus(f_in, FocusMode.OFF, params)

    def test_uniform_attention_equals_average(self) -> None:
        """Attention with zero score weights is bit-identical to avg."""
        gen = np.random.default_rng(4)
        for case in range(PROPERTY_CASES):
            context = [ContextMode.NONE, ContextMode.UNI, ContextMode.BI][case % 3]
            params = _params(channels=4, context_channels=4, context=context, seed=case)
            _zero_scores(params)
            x = Tensor(gen.normal(size=(2, int(gen.integers(1, 7)), 3, 4)))
            att = fd_forward(x, params, FocusMode.ATT, context)
            avg = fd_forward(x, params, FocusMode.AVG, context)
            np.testing.assert_array_equal(att.data, avg.data)

    def test_attention_node_is_convex(self) -> None:
        """Before the node projection each channel lies between its joint minimum and maximum."""
        gen = np.random.default_rng(11)
        for case in range(PROPERTY_CASES):
            params = _params(channels=4, seed=case)
            params.w_node.assign(np.eye(4))
            x = gen.normal(scale=3.0, size=(2, int(gen.integers(1, 7)), 3, 4))
            node = focus(Tensor(x), FocusMode.ATT, params).data
            assert node.shape == (2, 1, 3, 4)
            assert np.all(node >= x.min(axis=1, keepdims=True) - 1e-12)
            assert np.all(node <= x.max(axis=1, keepdims=True) + 1e-12)


class TestLstm:
    """Tests for the recurrent cell."""

    def test_forget_bias(self) -> None:
        """The forget gate bias starts at one."""
        params = LstmParams("l", 3, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(params.bias.data, [0, 0, 1, 1, 0, 0, 0, 0])
        assert not params.bias.decay

    def test_zero_weights_keep_zero_state(self) -> None:
        """Zero weights and a zero candidate bias leave h and c at zero."""
        params = LstmParams("l", 3, 2, np.random.default_rng(0))
        params.w_input.assign(np.zeros((3, 8)))
        params.w_hidden.assign(np.zeros((2, 8)))
        state = lstm_cell(Tensor(np.ones((1, 3))), LstmState.zeros(1, 2), params)
        np.testing.assert_array_equal(state.hidden.data, np.zeros((1, 2)))
        np.testing.assert_array_equal(state.cell.data, np.zeros((1, 2)))

    def test_candidate_bias(self) -> None:
        """Test one step driven by the candidate bias only."""
        params = LstmParams("l", 1, 1, np.random.default_rng(0))
        params.w_input.assign(np.zeros((1, 4)))
        params.w_hidden.assign(np.zeros((1, 4)))
        params.bias.assign([0.0, 0.0, 0.0, 1.0])
        state = lstm_cell(Tensor(np.zeros((1, 1))), LstmState.zeros(1, 1), params)
        cell = 0.5 * math.tanh(1.0)
        assert state.cell.item() == pytest.approx(cell, abs=1e-15)
        assert state.hidden.item() == pytest.approx(0.5 * math.tanh(cell), abs=1e-15)

    def test_shape_mismatch(self) -> None:
        """The input width must match the weights."""
        params = LstmParams("l", 3, 2, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            lstm_cell(Tensor(np.zeros((1, 4))), LstmState.zeros(1, 2), params)


class TestContextModule:
    """Tests for the stacked recurrent context module."""

    @pytest.mark.parametrize("context", [ContextMode.UNI, ContextMode.BI])
    @pytest.mark.parametrize("frames", [1, 5])
    def test_shape(self, context: ContextMode, frames: int, rng: np.random.Generator) -> None:
        """Test (N, 1, T, C') to (N, 1, T, context width)."""
        params = _params(channels=3, context_channels=6, context=context)
        out = cam_forward(Tensor(rng.normal(size=(2, 1, frames, 3))), params, context)
        assert out.shape == (2, 1, frames, 6)

    def test_silent_weights_give_zero(self, rng: np.random.Generator) -> None:
        """Zero recurrent weights give a zero context."""
        params = _params()
        _silence_context(params)
        out = cam_forward(Tensor(rng.normal(size=(2, 1, 4, 4))), params, ContextMode.BI)
        np.testing.assert_array_equal(out.data, np.zeros((2, 1, 4, 4)))

    def test_unidirectional_is_causal(self, rng: np.random.Generator) -> None:
        """Changing late frames leaves earlier uni outputs unchanged."""
        params = _params(context=ContextMode.UNI)
        x = rng.normal(size=(1, 1, 6, 4))
        changed = x.copy()
        changed[:, :, 4:] += 1.0
        a = cam_forward(Tensor(x), params, ContextMode.UNI).data
        b = cam_forward(Tensor(changed), params, ContextMode.UNI).data
        np.testing.assert_array_equal(a[:, :, :4], b[:, :, :4])
        assert not np.array_equal(a[:, :, 4:], b[:, :, 4:])

    def test_bidirectional_sees_the_future(self, rng: np.random.Generator) -> None:
        """Bidirectional outputs at early frames depend on late frames."""
        params = _params(context=ContextMode.BI)
        x = rng.normal(size=(1, 1, 6, 4))
        changed = x.copy()
        changed[:, :, 5] += 1.0
        a = cam_forward(Tensor(x), params, ContextMode.BI).data
        b = cam_forward(Tensor(changed), params, ContextMode.BI).data
        assert not np.array_equal(a[:, :, 0], b[:, :, 0])

    def test_time_reversal_swaps_directions(self) -> None:
        """With tied directions, reversing time reverses the output and swaps its halves."""
        gen = np.random.default_rng(13)
        for case in range(PROPERTY_CASES):
            params = _params(channels=3, context_channels=4, seed=case)
            params.cam_layers = params.cam_layers[:1]
            layer = params.cam_layers[0]
            assert layer.backward is not None
            for name in ("w_input", "w_hidden", "bias"):
                getattr(layer.backward, name).assign(getattr(layer.forward, name).data.copy())
            x = gen.normal(size=(2, 1, int(gen.integers(1, 7)), 3))
            out = cam_forward(Tensor(x), params, ContextMode.BI).data
            flipped = cam_forward(Tensor(x[:, :, ::-1].copy()), params, ContextMode.BI).data
            swapped = np.concatenate([out[..., 2:], out[..., :2]], axis=-1)[:, :, ::-1]
            np.testing.assert_allclose(flipped, swapped, rtol=0.0, atol=1e-12)

    def test_none_is_rejected(self) -> None:
        """Cam_forward needs a recurrent mode."""
        with pytest.raises(ValidationError):
            cam_forward(
                Tensor(np.zeros((1, 1, 2, 4))), _params(context=ContextMode.NONE), ContextMode.NONE
            )


class TestDiffuse:
    """Tests for gating the context back into the joints."""

    def test_gate_is_monotone(self) -> None:
        """Raising one raw score strictly grows the context that joint receives and no other."""
        gen = np.random.default_rng(12)
        channels, width = 3, 4
        # w_fuse that passes the gated context through unchanged
        w_fuse = Tensor(np.vstack([np.zeros((channels, width)), np.eye(width)]))
        for _ in range(PROPERTY_CASES):
            v = int(gen.integers(1, 6))
            f_in = Tensor(gen.normal(size=(1, v, 2, channels)))
            g_st = Tensor(gen.normal(size=(1, 1, 2, width)) + 0.1)
            raw = gen.normal(scale=2.0, size=(1, v, 2, 1))
            joint = int(gen.integers(0, v))
            raised = raw.copy()
            raised[:, joint] += gen.uniform(0.1, 2.0)
            before = diffuse(f_in, g_st, sigmoid(Tensor(raw)), w_fuse).data
            after = diffuse(f_in, g_st, sigmoid(Tensor(raised)), w_fuse).data
            grown = np.linalg.norm(after[0, joint], axis=-1)
            assert np.all(grown > np.linalg.norm(before[0, joint], axis=-1))
            np.testing.assert_allclose(
                np.delete(after, joint, axis=1), np.delete(before, joint, axis=1), rtol=0.0, atol=1e-12
            )

    def test_matches_reference(self, rng: np.random.Generator) -> None:
        """Test concat(f, s * g) @ W_fuse against numpy."""
        f_in = rng.normal(size=(2, 3, 4, 5))
        g_st = rng.normal(size=(2, 1, 4, 6))
        scores = rng.uniform(size=(2, 3, 4, 1))
        w_fuse = rng.normal(size=(11, 5))
        out = diffuse(Tensor(f_in), Tensor(g_st), Tensor(scores), Tensor(w_fuse))
        gated = scores * np.broadcast_to(g_st, (2, 3, 4, 6))
        expected = np.concatenate([f_in, gated], axis=-1) @ w_fuse
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_closed_gate(self, rng: np.random.Generator) -> None:
        """Zero scores keep only the joint features."""
        f_in = rng.normal(size=(1, 3, 2, 2))
        w_fuse = rng.normal(size=(5, 2))
        g_st = Tensor(rng.normal(size=(1, 1, 2, 3)))
        out = diffuse(Tensor(f_in), g_st, Tensor(np.zeros((1, 3, 2, 1))), Tensor(w_fuse))
        np.testing.assert_allclose(out.data, f_in @ w_fuse[:2], atol=1e-12)

    def test_open_gate(self) -> None:
        """Unit scores pass the context to every joint."""
        f_in = np.zeros((1, 2, 1, 1))
        g_st = np.full((1, 1, 1, 1), 3.0)
        out = diffuse(Tensor(f_in), Tensor(g_st), Tensor(np.ones((1, 2, 1, 1))), Tensor([[0.0], [1.0]]))
        np.testing.assert_array_equal(out.data.ravel(), [3.0, 3.0])

    def test_context_shape(self) -> None:
        """The context must have one node per frame."""
        with pytest.raises(ShapeError):
            diffuse(
                Tensor(np.zeros((1, 2, 3, 1))),
                Tensor(np.zeros((1, 1, 2, 1))),
                Tensor(np.zeros((1, 2, 3, 1))),
                Tensor(np.zeros((2, 1))),
            )


class TestFocusDiffuseUnit:
    """Tests for the complete unit."""

    def test_off_returns_input(self, rng: np.random.Generator) -> None:
        """Mode 'off' returns the very same tensor."""
        x = Tensor(rng.normal(size=(1, 3, 2, 4)))
        assert fd_forward(x, None, FocusMode.OFF, ContextMode.BI) is x

    def test_missing_parameters(self) -> None:
        """An active mode needs parameters."""
        with pytest.raises(ConfigError):
            fd_forward(Tensor(np.zeros((1, 3, 2, 4))), None, FocusMode.ATT, ContextMode.BI)

    @pytest.mark.parametrize("mode", [FocusMode.ATT, FocusMode.AVG, FocusMode.MAX])
    @pytest.mark.parametrize("context", list(ContextMode))
    def test_shape_and_attention(
        self, mode: FocusMode, context: ContextMode, rng: np.random.Generator
    ) -> None:
        """The unit keeps the feature shape and hands out scores."""
        params = _params(channels=4, context_channels=6, context=context)
        collected: list[Tensor] = []
        out = fd_forward(Tensor(rng.normal(size=(2, 5, 3, 4))), params, mode, context, collected)
        assert out.shape == (2, 5, 3, 4)
        assert [s.shape for s in collected] == [(2, 5, 3, 1)]

    def test_joint_relabeling_equivariance(self) -> None:
        """Permuting joints permutes the output the same way."""
        gen = np.random.default_rng(5)
        for case in range(PROPERTY_CASES):
            v = int(gen.integers(1, 7))
            perm = gen.permutation(v)
            params = _params(seed=case)
            x = gen.normal(size=(2, v, 3, 4))
            x_perm = np.empty_like(x)
            x_perm[:, perm] = x
            out = fd_forward(Tensor(x), params, FocusMode.ATT, ContextMode.BI).data
            out_perm = fd_forward(Tensor(x_perm), params, FocusMode.ATT, ContextMode.BI).data
            np.testing.assert_allclose(out_perm[:, perm], out, atol=1e-12)

    def test_parameter_count(self) -> None:
        """Test 3C'^2 + 641C' + 132097 parameters for a 128-wide bi context."""
        for channels in (16, 32, 64):
            params = _params(channels=channels, context_channels=128)
            assert params.num_parameters() == 3 * channels**2 + 641 * channels + 132097

    @pytest.mark.parametrize(
        ("channels", "context_channels", "context"),
        [(4, 5, ContextMode.BI), (8, 4, ContextMode.NONE)],
    )
    def test_invalid_widths(self, channels: int, context_channels: int, context: ContextMode) -> None:
        """Test odd bidirectional widths and unpaddable plain context."""
        with pytest.raises(ConfigError):
            _params(channels, context_channels, context)


class TestAttentionMap:
    """Tests for per-sample attention maps."""

    def test_from_scores(self) -> None:
        """Test splitting (N, V, T, 1) into (T, V) maps."""
        scores = np.arange(12.0).reshape(2, 3, 2, 1) / 12.0
        maps = AttentionMap.from_scores(scores, 4, ["a", "b"])
        assert [m.sample_id for m in maps] == ["a", "b"]
        np.testing.assert_array_equal(maps[1].scores, scores[1, :, :, 0].T)
        record = maps[0].to_record()
        assert (record["T"], record["V"], record["layer"]) == (2, 3, 4)

    def test_threshold_extremes(self) -> None:
        """Test thresholds 0 and 1 with strict comparison."""
        amap = AttentionMap(np.array([[0.0, 0.5, 1.0], [0.9, 0.0, 0.2]]), 0, "s")
        assert amap.activated_joints(0.0) == [[1, 2], [0, 2]]
        assert amap.activated_joints(1.0) == [[], []]
        assert amap.activated_joints(0.8) == [[2], [0]]

    def test_out_of_range(self) -> None:
        """Scores outside [0, 1] are rejected."""
        with pytest.raises(ValidationError):
            AttentionMap(np.array([[1.5]]), 0, "s")

    def test_sample_count(self) -> None:
        """Ids must match the batch size."""
        with pytest.raises(ShapeError):
            AttentionMap.from_scores(np.zeros((2, 3, 2, 1)), 0, ["only-one"])
