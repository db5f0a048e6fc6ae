import numpy as np
import pytest
import torch

from spotkit.errors import ShapeMismatch
from spotkit.models import (
    GatedRecurrentLayer,
    ModelConfig,
    PtsBackbone,
    PtsHead,
    PtsModel,
    temporal_shift,
)


def make_model(shift_fraction=0.125, bidirectional=True, seed=3):
    config = ModelConfig(key="pts", num_classes=3, trunk_channels=(8, 16),
                         recurrent_hidden=16, shift_fraction=shift_fraction,
                         bidirectional=bidirectional, frame_radius=1, seed=seed)
    return PtsModel(config)


class TestTemporalShift:
    def test_zero_fraction_identity(self):
        x = torch.randn(2, 5, 8, 4, 4)
        assert torch.equal(temporal_shift(x, 0.0), x)

    def test_shift_mechanics(self):
        x = torch.arange(3 * 8, dtype=torch.float32).reshape(1, 3, 8, 1, 1)
        out = temporal_shift(x, 0.125)  # fold = 1
        # channel 0 pulls from the future; frame 2 zero-filled
        assert out[0, 0, 0, 0, 0] == x[0, 1, 0, 0, 0]
        assert out[0, 2, 0, 0, 0] == 0.0
        # channel 1 pulls from the past; frame 0 zero-filled
        assert out[0, 1, 1, 0, 0] == x[0, 0, 1, 0, 0]
        assert out[0, 0, 1, 0, 0] == 0.0
        # remaining channels untouched
        assert torch.equal(out[0, :, 2:], x[0, :, 2:])

    def test_excessive_fraction(self):
        with pytest.raises(ShapeMismatch):
            temporal_shift(torch.randn(1, 2, 4, 2, 2), 0.75)


class TestBackbone:
    def test_shape_contract(self):
        backbone = PtsBackbone(3, (8, 16), shift_fraction=0.125)
        frames = torch.rand(2, 7, 32, 32, 3)
        out = backbone(frames)
        assert out.shape == (2, 7, 16)

    def test_no_shift_is_frame_permutation_equivariant(self):
        backbone = PtsBackbone(3, (8, 16), shift_fraction=0.0)
        frames = torch.rand(1, 6, 16, 16, 3)
        perm = torch.randperm(6)
        out = backbone(frames)
        permuted = backbone(frames[:, perm])
        torch.testing.assert_close(permuted, out[:, perm])

    def test_shift_gives_temporal_receptive_field(self):
        backbone = PtsBackbone(3, (8, 16), shift_fraction=0.125)
        frames = torch.rand(1, 6, 16, 16, 3)
        base = backbone(frames)
        altered = frames.clone()
        altered[:, 2] = torch.rand(16, 16, 3)
        out = backbone(altered)
        # frame 3 sees frame 2 through the shifted channels
        assert not torch.allclose(out[0, 3], base[0, 3])


class TestGatedRecurrent:
    def test_zero_recurrent_weights_are_per_frame(self):
        layer = GatedRecurrentLayer(4, 6)
        with torch.no_grad():
            layer.weight_hidden.zero_()
        x = torch.randn(2, 5, 4)
        out = layer(x)
        altered = x.clone()
        altered[:, 0] = torch.randn(2, 4)
        out2 = layer(altered)
        torch.testing.assert_close(out[:, 1:], out2[:, 1:])
        assert not torch.allclose(out[:, 0], out2[:, 0])

    def test_recurrence_carries_history(self):
        layer = GatedRecurrentLayer(4, 6)
        x = torch.randn(1, 5, 4)
        altered = x.clone()
        altered[:, 0] += 1.0
        assert not torch.allclose(layer(x)[:, 4], layer(altered)[:, 4])


class TestPtsHead:
    def test_rows_are_simplex(self):
        head = PtsHead(8, 12, num_classes=3, bidirectional=True)
        probs = torch.softmax(head(torch.randn(2, 9, 8)), dim=-1)
        torch.testing.assert_close(probs.sum(dim=-1), torch.ones(2, 9), atol=1e-6, rtol=0)


class TestPtsModel:
    def test_frame_scores_shape_and_simplex(self):
        model = make_model()
        frames = torch.rand(2, 6, 32, 32, 3)
        mask = torch.ones(2, 6, dtype=torch.bool)
        scores = model.frame_scores(frames, mask)
        assert scores.shape == (2, 6, 4)
        torch.testing.assert_close(scores.sum(dim=-1), torch.ones(2, 6), atol=1e-6, rtol=0)

    def test_t_frames_in_t_embeddings_out(self):
        model = make_model()
        frames = torch.rand(1, 9, 32, 32, 3)
        assert model.embed(frames).shape[1] == 9

    def test_seeded_build_is_reproducible(self):
        a, b = make_model(seed=7), make_model(seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
        c = make_model(seed=8)
        assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))

    def test_gradient_matches_central_differences(self):
        from spotkit.pipeline import ClipTargets
        torch.manual_seed(0)
        model = make_model().double()
        frames = torch.rand(1, 5, 16, 16, 3, dtype=torch.float64)
        mask = torch.ones(1, 5, dtype=torch.bool)
        frame_classes = np.zeros((1, 5, 4), dtype=np.float64)
        frame_classes[0, :, 3] = 1.0
        frame_classes[0, 2] = [0.0, 1.0, 0.0, 0.0]
        targets = ClipTargets(mode="frame_label", frame_classes=frame_classes)

        loss = model.training_loss(frames, mask, targets)
        params = list(model.parameters())
        grads = torch.autograd.grad(loss, params)

        rng = np.random.default_rng(1)
        checked = 0
        step = 1e-5
        for p_idx in rng.permutation(len(params)):
            param = params[p_idx]
            flat = param.detach().reshape(-1)
            for _ in range(2):
                i = int(rng.integers(0, flat.numel()))
                original = float(flat[i])
                scale = max(1.0, abs(original))
                h = step * scale
                with torch.no_grad():
                    flat[i] = original + h
                    plus = float(model.training_loss(frames, mask, targets))
                    flat[i] = original - h
                    minus = float(model.training_loss(frames, mask, targets))
                    flat[i] = original
                numeric = (plus - minus) / (2 * h)
                analytic = float(grads[p_idx].reshape(-1)[i])
                denom = max(abs(numeric), abs(analytic), 1e-8)
                assert abs(numeric - analytic) / denom < 1e-3, (
                    f"param {p_idx} index {i}: numeric {numeric} vs analytic {analytic}")
                checked += 1
            if checked >= 22:
                break
        assert checked >= 20
