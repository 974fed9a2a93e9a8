import numpy as np
import pytest

from corpus import decode_labels, encode_labels, label_step, load_corpus, parse_range
from errors import DataError
from image_io import save_image
from imaging import region_wedges

from conftest import make_texture


def test_parse_range_includes_stop():
    assert parse_range("0.5:0.6:0.02") == pytest.approx([0.5, 0.52, 0.54, 0.56, 0.58, 0.6])
    assert parse_range("4:12:4") == [4.0, 8.0, 12.0]
    assert parse_range("0.7") == [0.7]


@pytest.mark.parametrize("text", ["a:b:c", "1:2", "1:0:0.1", "0:1:0", "0:1:-0.5", ""])
def test_parse_range_rejects_malformed_ranges(text):
    with pytest.raises(DataError):
        parse_range(text)


def test_label_levels():
    assert label_step(2) == 255
    assert label_step(3) == 127
    labels = region_wedges(12, 12, 3)
    encoded = encode_labels(labels, 3)
    assert set(np.unique(encoded)) == {0, 127, 254}
    np.testing.assert_array_equal(decode_labels(encoded / 255.0, 3), labels)


def test_load_corpus_groups_by_stem(tmp_path, rng):
    for stem in ("b", "a"):
        for k in range(2):
            save_image(tmp_path / f"{stem}_src{k}.png", make_texture(rng, 16, 16))
    save_image(tmp_path / "a_ref.png", make_texture(rng, 16, 16))
    labels = np.zeros((16, 16), dtype=int)
    labels[:, 8:] = 1
    save_image(tmp_path / "a_truth.png", encode_labels(labels, 2) / 255.0)
    (tmp_path / "notes.txt").write_text("ignored", encoding="utf-8")

    items = load_corpus(tmp_path)
    assert [item.stem for item in items] == ["a", "b"]
    first, second = items
    assert len(first.sources) == 2 and first.reference is not None
    np.testing.assert_array_equal(first.labels, labels)
    assert second.reference is None and second.labels is None


def test_load_corpus_rejects_gaps_and_empty_dirs(tmp_path, rng):
    with pytest.raises(DataError):
        load_corpus(tmp_path)
    with pytest.raises(DataError):
        load_corpus(tmp_path / "missing")
    save_image(tmp_path / "x_src0.png", make_texture(rng, 8, 8))
    save_image(tmp_path / "x_src2.png", make_texture(rng, 8, 8))
    with pytest.raises(DataError):
        load_corpus(tmp_path)
