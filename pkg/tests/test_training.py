"""Training loops: descent, determinism, early stop, distillation terms."""

import numpy as np
import pytest

from lungsound.architectures import build_model, load_model
from lungsound.nn.store import TrainingError
from lungsound.patches import MixupConfig, Patch, one_hot
from lungsound.training import (
    DISTILL_GAMMA,
    TrainConfig,
    distill,
    predict_posteriors,
    train,
    training_accuracy,
)


def labeled_patches(n, n_classes=4, width=32, seed=0):
    """Separable toy patches: class k rides on a mean shift of k."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = i % n_classes
        pixels = rng.standard_normal((64, width)) * 0.3 + k
        out.append(Patch(pixels, one_hot(k, n_classes), recording_id=f"r{i}"))
    return out


class TestTrainConfig:
    def test_loss_resolution(self):
        assert TrainConfig(loss="auto").resolve_loss(True) == "kl"
        assert TrainConfig(loss="auto").resolve_loss(False) == "cross_entropy"
        assert TrainConfig(loss="kl").resolve_loss(False) == "kl"
        assert TrainConfig(loss="cross_entropy").resolve_loss(True) == "cross_entropy"

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(loss="hinge")


class TestTrain:
    def test_loss_descends_on_separable_data(self):
        model = build_model("student", 4, seed=1)
        patches = labeled_patches(16, seed=2)
        cfg = TrainConfig(epochs=3, batch_size=8, lr=1e-3, seed=3)
        history = train(model, patches, cfg)
        assert len(history) == 3
        assert history[-1].loss < history[0].loss
        assert history[0].extra["loss_name"] == "cross_entropy"

    def test_bit_identical_under_fixed_seed(self, tmp_path):
        results = []
        for run in ("a", "b"):
            model = build_model("student", 4, seed=7)
            patches = labeled_patches(12, seed=8)
            cfg = TrainConfig(epochs=2, batch_size=6, lr=1e-3, seed=9)
            path = tmp_path / f"{run}.ckpt"
            history = train(model, patches, cfg, checkpoint_path=path)
            probs = predict_posteriors(model, patches)
            results.append((model, history, probs, path))
        (m1, h1, p1, f1), (m2, h2, p2, f2) = results
        for name in m1.store.names():
            assert np.array_equal(m1.store[name].value, m2.store[name].value)
        assert np.array_equal(p1, p2)
        assert [e.loss for e in h1] == [e.loss for e in h2]
        assert f1.read_bytes() == f2.read_bytes()

    def test_mixup_switches_to_kl(self):
        model = build_model("student", 4, seed=10)
        patches = labeled_patches(8, seed=11)
        cfg = TrainConfig(epochs=1, batch_size=8, lr=1e-3, seed=12)
        history = train(model, patches, cfg, mixup=MixupConfig())
        assert history[0].extra["loss_name"] == "kl"

    def test_early_stop_and_accuracy_tracking(self):
        model = build_model("student", 4, seed=13)
        patches = labeled_patches(8, seed=14)
        cfg = TrainConfig(
            epochs=50, batch_size=8, lr=1e-3, seed=15, early_stop_accuracy=0.0
        )
        history = train(model, patches, cfg)
        assert len(history) == 1
        assert "train_accuracy" in history[0].extra

    def test_checkpoint_written_and_loadable(self, tmp_path):
        model = build_model("student", 4, seed=16)
        patches = labeled_patches(8, seed=17)
        path = tmp_path / "model.ckpt"
        train(model, patches, TrainConfig(epochs=1, batch_size=8, lr=1e-3, seed=18),
              checkpoint_path=path)
        renewed = load_model(path)
        x = np.stack([p.pixels for p in patches]).astype(np.float32)[..., None]
        assert np.array_equal(renewed.forward(x), model.forward(x))

    def test_non_finite_loss_aborts_with_diagnostics(self):
        model = build_model("student", 4, seed=19)
        model.store["head.dense.w"].value[0, 0] = np.nan
        patches = labeled_patches(8, seed=20)
        with pytest.raises(TrainingError, match="epoch 1"):
            train(model, patches, TrainConfig(epochs=1, batch_size=8, seed=21))

    def test_needs_two_patches(self):
        model = build_model("student", 4, seed=22)
        with pytest.raises(TrainingError):
            train(model, labeled_patches(1), TrainConfig(epochs=1))

    def test_accuracy_reaches_one_on_easy_data(self):
        model = build_model("student", 4, seed=23)
        patches = labeled_patches(16, seed=24)
        cfg = TrainConfig(epochs=30, batch_size=8, lr=1e-3, seed=25,
                          early_stop_accuracy=1.0)
        history = train(model, patches, cfg)
        assert history[-1].extra["train_accuracy"] == 1.0
        assert len(history) < 30
        assert training_accuracy(model, patches) == 1.0


class TestDistill:
    def make_pair(self, n_classes=3):
        teacher = build_model("cnn_moe", n_classes, n_experts=10, seed=30)
        student = build_model("student", n_classes, seed=31)
        return teacher, student

    def test_history_decomposes_into_terms(self):
        teacher, student = self.make_pair()
        patches = labeled_patches(6, n_classes=3, seed=32)
        cfg = TrainConfig(epochs=2, batch_size=6, lr=1e-3, seed=33)
        history = distill(teacher, student, patches, cfg)
        assert len(history) == 2
        for entry in history:
            recomposed = entry.data_term + entry.l2_term + DISTILL_GAMMA * entry.extra["euclid_term"]
            assert abs(entry.loss - recomposed) < 1e-6
            assert entry.extra["gamma"] == DISTILL_GAMMA
            assert entry.extra["loss_name"] == "cross_entropy+euclid"

    def test_embedding_distance_shrinks(self):
        teacher, student = self.make_pair()
        patches = labeled_patches(6, n_classes=3, seed=34)
        cfg = TrainConfig(epochs=5, batch_size=6, lr=1e-3, seed=35)
        history = distill(teacher, student, patches, cfg, gamma=1.0)
        assert history[-1].extra["euclid_term"] < history[0].extra["euclid_term"]

    def test_teacher_parameters_frozen(self):
        teacher, student = self.make_pair()
        snapshot = {n: p.value.copy() for n, p in teacher.store.items()}
        patches = labeled_patches(6, n_classes=3, seed=36)
        distill(teacher, student, patches, TrainConfig(epochs=1, batch_size=6, seed=37))
        for name, value in snapshot.items():
            assert np.array_equal(teacher.store[name].value, value)

    def test_deterministic_under_seed(self):
        outs = []
        for _ in range(2):
            teacher, student = self.make_pair()
            patches = labeled_patches(6, n_classes=3, seed=38)
            cfg = TrainConfig(epochs=2, batch_size=6, lr=1e-3, seed=39)
            history = distill(teacher, student, patches, cfg)
            outs.append((student, [e.loss for e in history]))
        (s1, l1), (s2, l2) = outs
        assert l1 == l2
        for name in s1.store.names():
            assert np.array_equal(s1.store[name].value, s2.store[name].value)
