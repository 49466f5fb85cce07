import numpy as np
import pytest

from captrap.imageio import Image, save_image
from captrap.poisoner import generate_synthetic_dataset


def make_image(width, height, fill=None, pixels=None):
    if pixels is not None:
        return Image(np.asarray(pixels, dtype=np.uint8))
    arr = np.full((height, width, 3), 0 if fill is None else fill, dtype=np.uint8)
    return Image(arr)


@pytest.fixture
def gray_image():
    return make_image(16, 16, fill=128)


@pytest.fixture(scope="session")
def synth_200(tmp_path_factory):
    """Shared 200/20/50 synthetic dataset (the poisoning-counts fixture)."""
    root = tmp_path_factory.mktemp("synth200")
    manifest, detections = generate_synthetic_dataset(200, 20, 50, seed=2021, out_dir=root)
    return manifest, detections, root


def write_ppm(path, width, height, fill):
    save_image(make_image(width, height, fill=fill), path)
