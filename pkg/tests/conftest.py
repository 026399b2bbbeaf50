import numpy as np
import pytest

from rawbayer.imgcore import LAYOUTS, BayerImage, pattern_of


def random_bayer(rng, height, width, bit_depth=12, layout="RGGB", black=None, white=None):
    samples = rng.integers(0, 2**bit_depth, size=(height, width))
    return BayerImage(samples, bit_depth, pattern_of(layout), black, white)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=LAYOUTS)
def layout(request):
    return request.param
