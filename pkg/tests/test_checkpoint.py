import numpy as np
import pytest
import torch

from spotkit.errors import CheckpointMismatch
from spotkit.models import (
    Checkpoint,
    ModelConfig,
    build_model,
    checkpoint_from_model,
    load_checkpoint,
    load_into_model,
    save_checkpoint,
)


def pooling_config(seed=0, **kwargs):
    base = dict(key="pool:netvlad++", num_classes=3, feature_dim=8, clusters=2, seed=seed)
    base.update(kwargs)
    return ModelConfig(**base)


class TestContainer:
    def test_round_trip(self, tmp_path):
        ckpt = Checkpoint(
            model_key="pool:max",
            model_config=ModelConfig(key="pool:max", num_classes=2).to_dict(),
            tensors={"model/w": np.arange(6, dtype=np.float32).reshape(2, 3),
                     "model/b": np.array(1.5, dtype=np.float64)},
            extra={"epoch": 3, "best_metric": 0.5},
        )
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
        assert loaded.model_key == ckpt.model_key
        assert loaded.extra == ckpt.extra
        np.testing.assert_array_equal(loaded.tensors["model/w"], ckpt.tensors["model/w"])
        np.testing.assert_array_equal(loaded.tensors["model/b"], ckpt.tensors["model/b"])

    def test_save_load_save_is_byte_identical(self, tmp_path):
        ckpt = Checkpoint(
            model_key="calf",
            model_config=ModelConfig(key="calf", num_classes=2).to_dict(),
            tensors={"model/a": np.random.default_rng(0).normal(size=(4, 4))},
            extra={"epoch": 1},
        )
        first = tmp_path / "a.ckpt"
        second = tmp_path / "b.ckpt"
        save_checkpoint(first, ckpt)
        save_checkpoint(second, load_checkpoint(first))
        assert first.read_bytes() == second.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(path)


class TestModelCheckpoints:
    def test_model_round_trip_preserves_outputs(self, tmp_path):
        model = build_model(pooling_config(seed=1))
        x = torch.randn(2, 8, 8)
        mask = torch.ones(2, 8, dtype=torch.bool)
        before = model.clip_scores(x, mask)

        path = tmp_path / "m.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, extra={"epoch": 0}))

        fresh = build_model(pooling_config(seed=99))  # different init
        with pytest.raises(CheckpointMismatch):
            load_into_model(fresh, load_checkpoint(path))  # config differs (seed)

        same = build_model(pooling_config(seed=1))
        load_into_model(same, load_checkpoint(path))
        torch.testing.assert_close(same.clip_scores(x, mask), before)

    def test_key_mismatch(self, tmp_path):
        model = build_model(pooling_config())
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, checkpoint_from_model(model))
        other = build_model(ModelConfig(key="pool:max", num_classes=3, feature_dim=8))
        with pytest.raises(CheckpointMismatch):
            load_into_model(other, load_checkpoint(path))
