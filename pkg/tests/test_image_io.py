import numpy as np
import pytest
from PIL import Image

from errors import DataError
from image_io import atomic_write_bytes, load_image, save_image, to_uint8


def test_png_gray_round_trip_on_quantized_values(tmp_path, rng):
    img = rng.integers(0, 256, size=(9, 7)) / 255.0
    path = tmp_path / "gray.png"
    save_image(path, img)
    loaded = load_image(path)
    assert loaded.shape == (9, 7)
    np.testing.assert_allclose(loaded, img, atol=1e-12)


def test_pgm_is_written_as_binary_p5(tmp_path, rng):
    img = rng.integers(0, 256, size=(5, 6)) / 255.0
    path = tmp_path / "gray.pgm"
    save_image(path, img)
    assert path.read_bytes().startswith(b"P5")
    np.testing.assert_allclose(load_image(path), img, atol=1e-12)


def test_color_png_keeps_three_planes(tmp_path, rng):
    img = rng.integers(0, 256, size=(4, 5, 3)) / 255.0
    path = tmp_path / "color.png"
    save_image(path, img)
    loaded = load_image(path)
    assert loaded.shape == (4, 5, 3)
    np.testing.assert_allclose(loaded, img, atol=1e-12)


def test_rounding_to_nearest_after_clipping():
    values = np.array([-0.2, 0.4 / 255, 0.6 / 255, 1.3])
    assert to_uint8(values).tolist() == [0, 0, 1, 255]


def test_color_pgm_and_unknown_suffix_rejected(tmp_path):
    with pytest.raises(DataError):
        save_image(tmp_path / "c.pgm", np.zeros((4, 4, 3)))
    with pytest.raises(DataError):
        save_image(tmp_path / "x.jpg", np.zeros((4, 4)))


def test_missing_or_corrupt_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        load_image(tmp_path / "missing.png")
    broken = tmp_path / "broken.png"
    broken.write_bytes(b"not an image")
    with pytest.raises(DataError):
        load_image(broken)


def test_palette_images_are_converted_to_rgb(tmp_path):
    path = tmp_path / "palette.png"
    Image.new("P", (3, 2), color=0).save(path)
    assert load_image(path).shape == (2, 3, 3)


def test_atomic_write_replaces_and_leaves_no_temp_files(tmp_path):
    target = tmp_path / "sub" / "file.bin"
    atomic_write_bytes(target, b"first")
    atomic_write_bytes(target, b"second")
    assert target.read_bytes() == b"second"
    assert [p.name for p in target.parent.iterdir()] == ["file.bin"]
