import numpy as np
import pytest

from medrdf.classifier import Classifier, SmallNet
from medrdf.harness.config import parse_config
from medrdf.harness.experiments import Experiment


class ConstantClassifier(Classifier):
    """Always predicts ``label``; no gradients."""

    def __init__(self, num_classes, label, input_shape=(1, 4, 4)):
        self.num_classes = num_classes
        self.label = label
        self.input_shape = input_shape

    def _proba(self, batch):
        out = np.zeros((len(batch), self.num_classes))
        out[:, self.label] = 1.0
        return out


class StochasticClassifier(Classifier):
    """Ignores its input and draws each row's label from ``probs``."""

    def __init__(self, probs, seed, input_shape=(1, 1, 1)):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.num_classes = len(probs)
        self.input_shape = input_shape
        self.rng = np.random.default_rng(seed)

    def _proba(self, batch):
        labels = self.rng.choice(self.num_classes, size=len(batch), p=self.probs)
        return np.eye(self.num_classes)[labels]


class AlternatingClassifier(Classifier):
    """Labels rows 0, 1, 0, 1, ... so an even count splits exactly in half."""

    def __init__(self, input_shape=(1, 2, 2)):
        self.num_classes = 2
        self.input_shape = input_shape

    def _proba(self, batch):
        out = np.zeros((len(batch), 2))
        out[np.arange(len(batch)), np.arange(len(batch)) % 2] = 1.0
        return out


def linear_net(weights, bias=None, input_shape=None):
    """SmallNet without hidden layers: logits = (x.flat - 0.5) @ weights + bias."""
    weights = np.asarray(weights, dtype=np.float64)
    d, k = weights.shape
    shape = input_shape or (1, 1, d)
    net = SmallNet(shape, k, conv_channels=(), hidden=())
    net.set_params([weights, np.zeros(k) if bias is None else np.asarray(bias, float)])
    return net


# small config shared by the harness, service and CLI tests
SMALL_CONFIG = {
    "seed": 0,
    "dataset": {"test_limit": 12},
    "train": {"epochs": 8, "lr_decay_epochs": [5]},
    "attacks": [{"kind": "pgd", "steps": 7}],
    "medrdf": [{"n": 200}],
    "sweep": {"sigmas": [0.05, 0.1], "epsilons": [0.0, 8 / 255], "copies": [10, 100], "n": 100},
}


@pytest.fixture
def small_config(tmp_path):
    return parse_config(SMALL_CONFIG).with_overrides(out=str(tmp_path / "out"))


@pytest.fixture(scope="session")
def trained_experiment(tmp_path_factory):
    """The default desk-scale experiment (full synthetic task, default model)."""
    cfg = parse_config({"seed": 0}).with_overrides(out=str(tmp_path_factory.mktemp("desk")))
    exp = Experiment(cfg)
    exp.model
    return exp
