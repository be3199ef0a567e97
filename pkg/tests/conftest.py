import numpy as np
import pytest

from elasticq.evaluate import calibration_from_bytes
from elasticq.model import ModelConfig, build_model
from elasticq.quantize import ModelStore

# small widths keep the search tests fast; footprint-pinned tests build the
# default-sized config themselves
SMALL = dict(d_model=32, n_heads=4, d_ff=64, n_layers=4)


def small_config(seed=0, **kw):
    return ModelConfig(**{**SMALL, **kw, "seed": seed})


def small_store(seed=0, bits=(2, 8), **kw):
    return ModelStore(build_model(small_config(seed, **kw)), bits)


def tiny_calib(max_context=64, nbytes=512):
    data = bytes((i * 37 + 11) % 256 for i in range(nbytes))
    return calibration_from_bytes(data, max_context=max_context)


@pytest.fixture(scope="session")
def default_store():
    """Default-dimension model: footprints here match the hand arithmetic."""
    return ModelStore(build_model(ModelConfig(seed=7)), [2, 8])


@pytest.fixture(scope="session")
def default_store_248():
    return ModelStore(build_model(ModelConfig(seed=7)), [2, 4, 8])


@pytest.fixture(scope="session")
def calib():
    return tiny_calib()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
