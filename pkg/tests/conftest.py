import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vlcmap.decmap import build_map
from vlcmap.sceneio import reference_scene
from vlcmap.signaling import build_layer_set

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def benchmark_scene():
    """4x4 four-color indoor scene at 15 dB receiver-side SNR."""
    return reference_scene()


@pytest.fixture(scope="session")
def benchmark_table(benchmark_scene):
    return build_layer_set(benchmark_scene, 2)


@pytest.fixture(scope="session")
def benchmark_map(benchmark_scene, benchmark_table):
    """Decoding map of the benchmark scene for filter 0, group size 1."""
    return build_map(benchmark_scene, benchmark_table, 0)


@pytest.fixture(scope="session")
def corner_scene():
    """2x2 array at 0.6 m pitch (the four-corner benchmark)."""
    return reference_scene(2, 2, spacing_x=0.6, spacing_y=0.6)


@pytest.fixture(scope="session")
def pair_scene():
    """Two transmitter positions 0.6 m apart."""
    return reference_scene(1, 2, spacing_x=0.6, spacing_y=0.6)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260826)
