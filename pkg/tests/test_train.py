import numpy as np
import pytest
import torch

from fmip.generators import LabeledInstance
from fmip.milp import from_dense
from fmip.model import ModelConfig, build_model, model_from_checkpoint
from fmip.train import TrainConfig, _batch_loss, _Item, probe_batch_size, train

SMALL = ModelConfig(layers=2, hidden=8)


@pytest.fixture
def labeled(mixed3):
    return LabeledInstance(mixed3, np.array([1.0, 1.0, 0.0]), -3.0, "optimal")


@pytest.fixture
def second():
    inst = from_dense([[1.0, 1.0, 1.0]], [1.0], [-1.0, -1.0, -0.5], [0, 0, 0], [1, 1, 1], num_int=2,
                      name="second")
    return LabeledInstance(inst, np.array([1.0, 0.0, 0.0]), -1.0, "optimal")


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.learning_rate, cfg.weight_decay, cfg.lr_schedule, cfg.omega) == (
            300, 2e-4, 1e-4, "cosine", 1.0)

    @pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(learning_rate=0), dict(lr_schedule="step"),
                                        dict(batch_size=-1)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestTrain:
    def test_omega_zero_int_head_gradients_vanish(self, labeled):
        model = build_model(SMALL, 0, torch.float64)
        loss = _batch_loss(model, [_Item(labeled, True)], 0.0, np.random.default_rng(0))
        loss.backward()
        for name, p in model.named_parameters():
            if name.startswith("head_int"):
                assert torch.all(p.grad == 0), name
        assert any(p.grad is not None and torch.any(p.grad != 0) for p in model.head_cont.parameters())

    def test_deterministic(self, labeled, second):
        cfg = TrainConfig(epochs=3, batch_size=2, seed=4)
        a = train([labeled, second], SMALL, cfg)
        b = train([labeled, second], SMALL, cfg)
        assert a.loss_curve == b.loss_curve
        assert a.checkpoint["params"] == b.checkpoint["params"]

    def test_resume_continues(self, labeled, second):
        # the cosine schedule depends on the total epoch count, so compare at a constant rate
        kw = dict(batch_size=1, seed=1, lr_schedule="constant")
        full = train([labeled, second], SMALL, TrainConfig(epochs=4, **kw))
        half = train([labeled, second], SMALL, TrainConfig(epochs=2, **kw))
        assert half.checkpoint["epoch"] == 2
        rest = train([labeled, second], None, TrainConfig(epochs=4), resume=half.checkpoint)
        assert [e["epoch"] for e in rest.loss_curve] == [1, 2, 3, 4]
        assert rest.loss_curve == full.loss_curve
        assert rest.checkpoint["params"] == full.checkpoint["params"]
        assert rest.checkpoint["optimizer"] == full.checkpoint["optimizer"]

    def test_memorizes_single_instance(self, labeled):
        res = train([labeled], SMALL, TrainConfig(epochs=300, learning_rate=1e-3, batch_size=1))
        losses = [e["loss"] for e in res.loss_curve]
        assert len(losses) == 300
        assert np.mean(losses[-20:]) < 0.1 * np.mean(losses[:10])

    def test_checkpoint_loads(self, labeled):
        res = train([labeled], SMALL, TrainConfig(epochs=1, batch_size=1))
        model = model_from_checkpoint(res.checkpoint)
        for p, q in zip(model.parameters(), res.model.parameters()):
            assert torch.equal(p, q)
        assert res.checkpoint["train_config"]["epochs"] == 1

    def test_auto_batch(self, labeled, second):
        items = [_Item(labeled, True), _Item(second, True)]
        assert probe_batch_size(build_model(SMALL), items, 1.0, 256) == 2
        assert train([labeled, second], SMALL, TrainConfig(epochs=1)).batch_size == 2

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train([], SMALL)

    def test_non_finite_loss(self, labeled):
        bad = LabeledInstance(labeled.instance, np.array([1.0, 1.0, np.inf]), -3.0, "optimal")
        with pytest.raises(FloatingPointError):
            train([bad], SMALL, TrainConfig(epochs=1, batch_size=1))

    def test_too_few_categories(self, toy):
        lab = LabeledInstance(toy, np.array([0.0, 0.0]), 0.0, "optimal")
        with pytest.raises(ValueError):
            train([lab], SMALL, TrainConfig(epochs=1))
