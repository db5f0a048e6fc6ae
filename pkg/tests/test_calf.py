import numpy as np
import pytest
import torch

from oracles import brute_force_candidate_match, loop_context_loss
from spotkit.errors import InvalidZoneParams, ShapeMismatch
from spotkit.models import (
    CalfModel,
    CalfSegmentationNeck,
    CalfSpottingHead,
    ModelConfig,
    calf_context_loss,
    calf_spotting_loss,
    match_candidates,
    signed_distance_grid,
)

ZONES = torch.tensor([[-8.0, -2.0, 2.0, 8.0]])


class TestSignedDistance:
    def test_single_annotation(self):
        grid = signed_distance_grid(6, [(2, 0)], 1)
        assert grid[:, 0].tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0]

    def test_tie_prefers_earlier_annotation(self):
        # frame 3 is equidistant from annotations at 2 and 4
        grid = signed_distance_grid(6, [(2, 0), (4, 0)], 1)
        assert grid[3, 0] == 1.0  # distance to the earlier annotation, positive

    def test_missing_class_far_away(self):
        grid = signed_distance_grid(4, [(0, 0)], 2)
        assert (grid[:, 1] > 1e16).all()


class TestContextLoss:
    def test_perfect_fit_is_zero(self):
        zones = torch.tensor([[-6.0, -3.0, 3.0, 6.0]])
        scores = torch.zeros(20, 1, dtype=torch.float64)
        scores[7:14, 0] = 1.0  # action zone of the annotation at frame 10
        loss = calf_context_loss(scores, [(10, 0)], zones)
        assert float(loss) == 0.0

    def test_all_ambiguous_sentinels_zero_any_scores(self):
        zones = torch.tensor([[-1e18, 0.0, 0.0, 1e18]])
        scores = torch.rand(12, 1, dtype=torch.float64) * 0.9 + 0.05
        loss = calf_context_loss(scores, [], zones)
        assert float(loss) == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        scores = torch.tensor(rng.uniform(0.05, 0.95, size=(12, 2)))
        annotations = [(3, 0), (9, 1), (10, 0)]
        zones = torch.tensor([[-4.0, -2.0, 1.0, 3.0], [-5.0, -1.0, 2.0, 4.0]])
        ours = float(calf_context_loss(scores, annotations, zones))
        oracle = loop_context_loss(scores.tolist(), annotations, zones.tolist())
        assert ours == pytest.approx(oracle, abs=1e-6)

    def test_loss_is_non_negative(self):
        rng = np.random.default_rng(8)
        for trial in range(10):
            scores = torch.tensor(rng.uniform(0.01, 0.99, size=(10, 3)))
            annotations = [(int(rng.integers(0, 10)), int(rng.integers(0, 3)))
                           for _ in range(rng.integers(0, 4))]
            zones = torch.tensor([[-5.0, -2.0, 2.0, 5.0]] * 3)
            assert float(calf_context_loss(scores, annotations, zones)) >= 0.0

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(12)
        scores = torch.tensor(rng.uniform(0.1, 0.9, size=(12, 2)), requires_grad=True)
        annotations = [(2, 0), (8, 1)]
        zones = torch.tensor([[-4.0, -2.0, 2.0, 4.0], [-6.0, -1.0, 1.0, 6.0]])
        loss = calf_context_loss(scores, annotations, zones)
        analytic = torch.autograd.grad(loss, scores)[0]

        cells = [(int(t), int(c)) for t in rng.integers(0, 12, size=25)
                 for c in [rng.integers(0, 2)]]
        step = 1e-6
        for t, c in cells:
            base = scores.detach().clone()
            plus, minus = base.clone(), base.clone()
            plus[t, c] += step
            minus[t, c] -= step
            numeric = (float(calf_context_loss(plus, annotations, zones))
                       - float(calf_context_loss(minus, annotations, zones))) / (2 * step)
            denom = max(abs(numeric), abs(float(analytic[t, c])), 1e-8)
            assert abs(numeric - float(analytic[t, c])) / denom < 1e-4

    def test_invalid_zones(self):
        scores = torch.rand(4, 1) * 0.8 + 0.1
        with pytest.raises(InvalidZoneParams):
            calf_context_loss(scores, [], torch.tensor([[2.0, -1.0, 1.0, 4.0]]))
        with pytest.raises(InvalidZoneParams):
            calf_context_loss(scores, [], torch.tensor([[-4.0, 1.0, 2.0, 4.0]]))


class TestSegmentationNeck:
    def test_range_and_shape(self):
        neck = CalfSegmentationNeck(feature_dim=8, hidden_dim=16, num_classes=3, depth=2)
        x = torch.randn(2, 12, 8)
        seg, hidden = neck(x, torch.ones(2, 12, dtype=torch.bool))
        assert seg.shape == (2, 12, 3)
        assert hidden.shape == (2, 12, 16)
        assert (seg >= 0).all() and (seg <= 1).all()

    def test_bit_stable(self):
        neck = CalfSegmentationNeck(8, 16, 2, 2)
        x = torch.randn(1, 10, 8)
        mask = torch.ones(1, 10, dtype=torch.bool)
        a, _ = neck(x, mask)
        b, _ = neck(x, mask)
        assert torch.equal(a, b)


class TestSpottingHead:
    def test_ranges(self):
        head = CalfSpottingHead(hidden_dim=16, clip_length=12, num_candidates=5, num_classes=3)
        hidden = torch.randn(4, 12, 16)
        locations, confidences, class_probs = head(hidden)
        assert locations.shape == (4, 5)
        assert ((locations >= 0) & (locations <= 1)).all()
        assert ((confidences >= 0) & (confidences <= 1)).all()
        torch.testing.assert_close(class_probs.sum(dim=-1), torch.ones(4, 5),
                                   atol=1e-6, rtol=0)

    def test_wrong_clip_length(self):
        head = CalfSpottingHead(16, 12, 5, 3)
        with pytest.raises(ShapeMismatch):
            head(torch.randn(1, 10, 16))

    def test_perfect_candidates_zero_loss(self):
        locations = torch.tensor([0.2, 0.7, 0.5])
        confidences = torch.tensor([1.0, 1.0, 0.0])
        class_probs = torch.tensor([
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.3, 0.3, 0.4],
        ])
        gts = [(0.2, 0), (0.7, 1)]
        loss = calf_spotting_loss(locations, confidences, class_probs, gts)
        assert float(loss) == 0.0

    def test_no_ground_truth_only_confidence(self):
        locations = torch.tensor([0.5])
        confidences = torch.tensor([0.0])
        class_probs = torch.tensor([[0.5, 0.5]])
        assert float(calf_spotting_loss(locations, confidences, class_probs, [])) == 0.0

    def test_matching_equals_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            candidates = torch.tensor(rng.uniform(0, 1, size=rng.integers(1, 8)))
            gts = torch.tensor(rng.uniform(0, 1, size=rng.integers(0, 5)))
            ours = match_candidates(gts, candidates)
            oracle = brute_force_candidate_match(gts.tolist(), candidates.tolist())
            assert ours == oracle


class TestCalfModel:
    def make_model(self, clip_length=12):
        config = ModelConfig(key="calf", num_classes=2, feature_dim=8, hidden_dim=16,
                             clip_length=clip_length, num_candidates=3,
                             zone_params=(-4.0, -2.0, 2.0, 4.0), seed=5)
        return CalfModel(config)

    def test_training_loss_runs_and_backprops(self):
        from spotkit.pipeline import ClipTargets
        model = self.make_model()
        payload = torch.randn(3, 12, 8)
        mask = torch.ones(3, 12, dtype=torch.bool)
        mask[2, 9:] = False
        frame_classes = np.zeros((3, 12, 3), dtype=np.float32)
        frame_classes[:, :, 2] = 1.0
        frame_classes[0, 4] = [1.0, 0.0, 0.0]  # event of class 0 at frame 4
        targets = ClipTargets(mode="frame_label", frame_classes=frame_classes)
        loss = model.training_loss(payload, mask, targets)
        assert float(loss) > 0
        loss.backward()
        grads = [p.grad for p in model.parameters() if p.grad is not None]
        assert grads

    def test_candidates_surface(self):
        model = self.make_model()
        payload = torch.randn(2, 12, 8)
        mask = torch.ones(2, 12, dtype=torch.bool)
        locations, confidences, class_probs = model.window_candidates(payload, mask)
        assert locations.shape == (2, 3)
        assert class_probs.shape == (2, 3, 3)
