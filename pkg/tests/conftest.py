"""
Shared fixtures. The environment is pinned before any project module is
imported so that logs and progress files land in a throwaway directory.
"""
import os
import sys
import tempfile

os.environ.setdefault('FEDCPU_OUTPUT_DIR', tempfile.mkdtemp(prefix='fedcpu-tests-'))
os.environ['FEDCPU_LOG_TO_FILE'] = 'false'
os.environ.pop('FEDCPU_DATASET_PATH', None)

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from simulation.channel import draw_channel  # noqa: E402
from simulation.lattice import DEFAULT_BLOCK_GENERATOR, DEFAULT_SECOND_MOMENT, Lattice  # noqa: E402
from utils.rng import StreamFactory  # noqa: E402

CONFIG_DIR = os.path.join(ROOT, 'configs')


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def streams():
    return StreamFactory(7)


@pytest.fixture
def lattice_factory():
    """Default-block lattice with the exact second moment, any even dimension."""
    def make(dimension=2, scale=1.0):
        return Lattice(np.array(DEFAULT_BLOCK_GENERATOR), scale, dimension,
                       DEFAULT_SECOND_MOMENT * scale ** 2)
    return make


@pytest.fixture
def random_channel(rng):
    def make(M=3, K=2, snr=10.0):
        return draw_channel(M, K, 5.0, rng, snr)
    return make


@pytest.fixture
def smoke_config_path():
    return os.path.join(CONFIG_DIR, 'smoke.toml')


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Per-test output directory, also exported for config loading."""
    monkeypatch.setenv('FEDCPU_OUTPUT_DIR', str(tmp_path))
    return tmp_path


@pytest.fixture
def fixed_channel_path():
    """One antenna, two devices; the fixture behind configs/smoke.toml."""
    return os.path.join(CONFIG_DIR, 'fixtures', 'channel_k2_m1.csv')
