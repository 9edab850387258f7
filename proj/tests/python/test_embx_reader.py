import struct

import pytest

import dvme
import embx_reader


def test_fixture_reads_identically(fixture_dir):
    blob = (fixture_dir / "tiny.embx").read_bytes()
    ref = embx_reader.read(blob)
    assert ref["sources"] == [("alpha", 2), ("beta", 1)]
    assert ref["labels"] == [0, 2, 1]
    assert ref["groups"] == [7, -1, 7]
    assert ref["features"]["alpha"] == [[1.0, -2.5], [0.25, 0.0], [3.5, -0.125]]
    ds = dvme.decode_embx(blob)
    assert ds.sources == ref["sources"]
    assert ds.num_classes == ref["num_classes"] == 3
    assert ds.labels == ref["labels"]
    assert ds.group_ids == ref["groups"]
    for name, rows in ref["features"].items():
        assert ds.features(name).tolist() == rows
    assert ds.encode() == blob


def test_library_output_is_readable_without_the_library():
    ds = dvme.synth(num_classes=3, sources=[("x", 3), ("y", 2)], samples_per_class=4, seed=5)
    ref = embx_reader.read(ds.encode())
    assert ref["labels"] == ds.labels
    assert ref["groups"] is None
    for name, _ in ref["sources"]:
        got = ds.features(name).tolist()
        assert got == ref["features"][name]


def test_reader_and_library_agree_on_corruption(fixture_dir):
    blob = bytearray((fixture_dir / "tiny.embx").read_bytes())
    blob[40] ^= 1
    with pytest.raises(embx_reader.EmbxError):
        embx_reader.read(bytes(blob))
    with pytest.raises(dvme.DataError):
        dvme.decode_embx(bytes(blob))


def test_version_field_is_enforced(fixture_dir):
    blob = bytearray((fixture_dir / "tiny.embx").read_bytes())
    struct.pack_into("<I", blob, 4, 2)
    with pytest.raises(dvme.VersionError):
        dvme.decode_embx(bytes(blob))
