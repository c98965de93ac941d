import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core.network import init_params
from core.schemas import HyperParamDistribution, HyperParams, NetSpec, ProtocolConfig, SuiteSpec
from core.synthetic import gen_synthetic_suite
from core.trainer import TaskSplit

TINY_SUITE = SuiteSpec(
    feature_dim=6, num_classes=3, num_domains=3, samples_per_domain=60,
    aux_relatedness=[0.9, 0.5], aux_num_domains=2, aux_samples_per_domain=60,
    pretrain_num_classes=4, pretrain_samples=200,
)


def tiny_protocol() -> ProtocolConfig:
    return ProtocolConfig(
        hidden_widths=[8],
        pretrain=HyperParams(learning_rate=1e-2, batch_size=32, steps=60, eval_every=20),
        aux=HyperParams(learning_rate=1e-2, batch_size=32, steps=20, eval_every=10),
        probe=HyperParams(learning_rate=1e-2, batch_size=32, steps=20, eval_every=10),
        search=HyperParamDistribution(steps=20, eval_every=5, freeze_featurizer_steps=5),
        dagger_splits=2,
    )


@pytest.fixture(scope="session")
def tiny_suite():
    return gen_synthetic_suite(TINY_SUITE, seed=7)


@pytest.fixture
def protocol():
    return tiny_protocol()


@pytest.fixture
def net_spec():
    return NetSpec(input_dim=4, hidden_widths=[5], num_classes=3)


@pytest.fixture
def small_net(net_spec):
    return init_params(net_spec, seed=0)


@pytest.fixture
def toy_task():
    """Three separable blobs in 4 dimensions"""
    rng = np.random.default_rng(0)
    centers = np.array([[2.0, 0, 0, 0], [0, 2.0, 0, 0], [0, 0, 2.0, 0]])
    y = np.arange(90) % 3
    x = centers[y] + 0.5 * rng.normal(size=(90, 4))
    return TaskSplit(name="toy", num_classes=3, x_train=x[:60], y_train=y[:60], x_val=x[60:], y_val=y[60:],
                     train_ids=np.arange(60), val_ids=np.arange(60, 90))


@pytest.fixture
def fast_hparams():
    return HyperParams(learning_rate=1e-2, batch_size=16, steps=20, eval_every=5)
