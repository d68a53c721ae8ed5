import numpy as np
import pytest

from densebody.bodymodel import WeakPerspectiveCamera, toy_model
from densebody.rasterizer import RasterConfig, render_iuv

# image rows grow downward while the model is y-up; a half turn about x stands it upright
UPRIGHT = np.pi


@pytest.fixture(scope="session")
def model():
    return toy_model(0)


def upright_pose(K=24, rng=None, spread=0.0):
    theta = np.zeros((K, 3))
    if rng is not None and spread > 0:
        theta = rng.uniform(-spread, spread, size=(K, 3))
    theta[0] = (UPRIGHT, 0.0, 0.0)
    return theta


@pytest.fixture(scope="session")
def body_map(model):
    cam = WeakPerspectiveCamera(0.5, (0.5, 0.5))
    return render_iuv(model, upright_pose(), np.zeros(model.num_betas), cam, RasterConfig(56, 56), workers=1)
