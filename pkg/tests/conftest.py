import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import synth  # noqa: E402


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """20 train / 8 val clips, track 1. Small enough for fast loop tests."""
    root = tmp_path_factory.mktemp("tinyset")
    manifest_path = synth.build_dataset(root, n_train=20, n_val=8, track=1, seed=3)
    return manifest_path


@pytest.fixture(scope="session")
def tiny_dataset_track2(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyset2")
    manifest_path = synth.build_dataset(root, n_train=16, n_val=6, track=2, seed=4)
    return manifest_path


@pytest.fixture(scope="session")
def smoke_dataset(tmp_path_factory):
    """The 200/50 constructed dataset used by the end-to-end acceptance run."""
    root = tmp_path_factory.mktemp("smokeset")
    manifest_path = synth.build_dataset(root, n_train=200, n_val=50, track=1, seed=7)
    return manifest_path
