import numpy as np
import pytest

from sdsar.errors import FormatVersionError
from sdsar.image import IntensityImage, load_image, read_pgm, read_raw, save_image, write_pgm, write_raw


def test_rejects_negative_and_nonfinite_pixels():
    with pytest.raises(ValueError):
        IntensityImage(np.array([[1.0, -0.5]]))
    with pytest.raises(ValueError):
        IntensityImage(np.array([[np.inf, 1.0]]))


def test_rejects_wrong_rank():
    with pytest.raises(ValueError):
        IntensityImage(np.ones(4))


def test_pgm_roundtrip_8bit(tmp_path):
    img = IntensityImage(np.arange(12, dtype=float).reshape(3, 4))
    path = tmp_path / "img.pgm"
    write_pgm(path, img, maxval=255)
    back = read_pgm(path)
    assert back.maxval == 255
    np.testing.assert_array_equal(back.pixels, img.pixels)


def test_pgm_roundtrip_16bit(tmp_path):
    rng = np.random.default_rng(0)
    img = IntensityImage(rng.integers(0, 40000, (5, 7)).astype(float))
    path = tmp_path / "img16.pgm"
    write_pgm(path, img, maxval=65535)
    back = read_pgm(path)
    assert back.maxval == 65535
    np.testing.assert_array_equal(back.pixels, img.pixels)


def test_pgm_clips_out_of_range(tmp_path):
    img = IntensityImage(np.array([[300.0, 12.4]]))
    path = tmp_path / "clip.pgm"
    write_pgm(path, img, maxval=255)
    back = read_pgm(path)
    np.testing.assert_array_equal(back.pixels, [[255.0, 12.0]])


def test_pgm_rejects_garbage(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P6 2 2 255\n\x00" * 4)
    with pytest.raises(FormatVersionError):
        read_pgm(path)


def test_raw_roundtrip(tmp_path):
    img = IntensityImage(np.random.default_rng(1).uniform(0, 9, (6, 3)), looks=4)
    path = tmp_path / "img.raw"
    write_raw(path, img)
    back = read_raw(path)
    assert back.looks == 4
    np.testing.assert_allclose(back.pixels, img.pixels, rtol=1e-6)


def test_load_save_dispatch(tmp_path):
    img = IntensityImage(np.full((2, 2), 3.0))
    save_image(tmp_path / "a.pgm", img)
    save_image(tmp_path / "a.raw", img)
    assert load_image(tmp_path / "a.pgm").pixels.shape == (2, 2)
    assert load_image(tmp_path / "a.raw").pixels.shape == (2, 2)
    with pytest.raises(FormatVersionError):
        load_image(tmp_path / "a.png")
