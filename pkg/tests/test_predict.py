import numpy as np
import torch

from spotkit.models import ModelConfig, predict_video
from spotkit.models.base import SpottingModel
from spotkit.pipeline import FeatureSequence


class ClipStub(SpottingModel):
    """Clip scores = [mean of window payload, 1 - mean] for hand checks."""

    prediction_mode = "clip"

    def __init__(self):
        super().__init__(ModelConfig(key="stub", num_classes=1, feature_dim=1))

    def clip_scores(self, payload, pad_mask):
        mask = pad_mask.unsqueeze(-1).to(payload.dtype)
        mean = (payload * mask).sum(dim=(1, 2)) / mask.sum(dim=(1, 2))
        return torch.stack([mean, 1.0 - mean], dim=-1)


class FrameStub(SpottingModel):
    """Frame scores = window mean broadcast to every frame (so overlapping
    windows contribute different values to shared frames)."""

    prediction_mode = "frame"

    def __init__(self):
        super().__init__(ModelConfig(key="stub", num_classes=1, feature_dim=1))

    def frame_scores(self, payload, pad_mask):
        mask = pad_mask.unsqueeze(-1).to(payload.dtype)
        mean = (payload * mask).sum(dim=(1, 2)) / mask.sum(dim=(1, 2))
        per_frame = mean[:, None, None].expand(-1, payload.shape[1], 1)
        return torch.cat([per_frame, 1.0 - per_frame], dim=-1)


def sequence(values, rate=2.0):
    data = np.asarray(values, dtype=np.float32)[:, None]
    return FeatureSequence(video_id="v", data=data, feature_rate_hz=rate)


class TestClipMode:
    def test_single_window_at_center(self):
        seq = sequence([0.0, 1.0, 0.0, 1.0])
        times, scores = predict_video(ClipStub(), seq, clip_length=4, eval_stride=4)
        assert times.tolist() == [1000]  # center of [0, 2 s) at 2 Hz
        assert scores.shape == (1, 2)
        assert scores[0, 0] == 0.5

    def test_stride_one_window_centers(self):
        seq = sequence([0.0] * 6)
        times, scores = predict_video(ClipStub(), seq, clip_length=4, eval_stride=1)
        assert times.tolist() == [1000, 1500, 2000, 2500, 3000, 3500]
        assert scores.shape == (6, 2)


class TestFrameMode:
    def test_no_overlap_concatenates(self):
        seq = sequence([0.0, 0.0, 1.0, 1.0])
        times, scores = predict_video(FrameStub(), seq, clip_length=2, eval_stride=2)
        assert times.tolist() == [0, 500, 1000, 1500]
        np.testing.assert_allclose(scores[:, 0], [0.0, 0.0, 1.0, 1.0])

    def test_half_overlap_averages(self):
        # windows [0,1,2,3] mean 1.5 and [2,3,4,5] mean 3.5; frames 2,3 -> 2.5
        seq = sequence([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        times, scores = predict_video(FrameStub(), seq, clip_length=4, eval_stride=2)
        np.testing.assert_allclose(scores[2, 0], 2.5)
        np.testing.assert_allclose(scores[3, 0], 2.5)
        np.testing.assert_allclose(scores[0, 0], 1.5)
        # frame 4 is covered by windows starting at 2 and 4 (padded)
        assert times.tolist() == [0, 500, 1000, 1500, 2000, 2500]
