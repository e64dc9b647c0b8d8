# app/tests/conftest.py
# Fixtures compartilhadas: um dataset sintético pequeno e um modelo mínimo

import pytest

from app.data import synth_generate
from app.models.configs import ModelConfig, ProposalConfig, SyntheticConfig, TrainConfig, TrunkLayer
from app.models.region import ImageExtent, OverlapBounds


@pytest.fixture(scope="session")
def tiny_synth_config():
    return SyntheticConfig(
        width=48,
        height=48,
        num_classes=3,
        instances_max=2,
        noise_amplitude=0.0,
        distractor_count=0,
        train_instances=12,
        test_instances=6,
        seed=0,
    )


@pytest.fixture(scope="session")
def tiny_split(tiny_synth_config):
    return synth_generate(tiny_synth_config)


@pytest.fixture
def tiny_model_config(tiny_split):
    return ModelConfig(
        extent=ImageExtent(width=48, height=48),
        trunk=(TrunkLayer(kind="conv", channels=4, kernel=3), TrunkLayer(kind="pool", kernel=2, stride=2)),
        roi_pool_size=2,
        fc_widths=(8, 8),
        class_names=tiny_split.train.class_names,
    )


@pytest.fixture
def tiny_proposal_config():
    return ProposalConfig(scales=(16, 32), aspect_ratios=(1.0,))


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        learning_rate=0.01,
        batch_primaries=4,
        images_per_batch=2,
        n_candidates=3,
        iterations=3,
        bounds=OverlapBounds(l=0.0, u=0.5),
        seed=0,
    )
