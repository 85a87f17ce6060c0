import numpy as np
import pytest

from bosc.data import Counts, FingerprintSpec, load_dataset, synth_dataset


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """Three easy in-set classes plus one out-of-set class at 16x16."""
    root = tmp_path_factory.mktemp("toy")
    specs = [
        FingerprintSpec("A", "periodic", 11, "in_set", 0.095, [0]),
        FingerprintSpec("B", "block", 12, "in_set", 0.095, [0]),
        FingerprintSpec("C", "noise", 13, "in_set", 0.095, [0]),
        FingerprintSpec("U", "periodic", 14, "out_of_set", 0.095, [5]),
    ]
    manifest = synth_dataset(specs, root, Counts(train=600, val=30, test=20, test_out=20), (16, 16, 3), seed=3)
    return manifest, load_dataset(manifest)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
