"""Shared fixtures. Heavy artifacts (toy dataset, trained checkpoints) are
cached under .cache/ by partgen.testsupport so repeated runs are cheap."""
import numpy as np
import pytest
import torch

from partgen.model import ModelConfig, PartAwareNet
from partgen.shards import ShardDataset
from partgen.testsupport import toy_dataset_dir


def tiny_config(**kw) -> ModelConfig:
    base = dict(code_dim=24, num_parts=4, d_model=24, d_pe=16, num_layers=2,
                num_heads=2, decomp_hidden=48, head_hidden=32, ff_mult=2)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def tiny_model():
    torch.manual_seed(0)
    return PartAwareNet(tiny_config()).eval()


@pytest.fixture(scope="session")
def toy_dir():
    return toy_dataset_dir()


@pytest.fixture(scope="session")
def toy_dataset(toy_dir):
    return ShardDataset.open(toy_dir / "shards")
