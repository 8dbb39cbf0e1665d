import struct

import numpy as np
import pytest

from svfpredict import Grid, LabelMap, ScalarImage, VectorField, mff


def test_scalar_round_trip(tmp_path, rng):
    img = ScalarImage(rng.normal(size=(5, 7)), Grid((5, 7), (0.5, 2.0)))
    mff.save(tmp_path / "x.mff", img, {"source": "test"})
    back = mff.load(tmp_path / "x.mff")
    assert isinstance(back, ScalarImage)
    assert np.array_equal(back.values, img.values) and back.grid == img.grid


def test_vector_round_trip_3d(tmp_path, rng):
    v = VectorField(rng.normal(size=(3, 4, 5, 6)))
    mff.save(tmp_path / "v.mff", v)
    back = mff.load(tmp_path / "v.mff")
    assert isinstance(back, VectorField) and np.array_equal(back.values, v.values)


def test_labels_round_trip(tmp_path, rng):
    L = LabelMap(rng.integers(0, 3, (6, 6)), structure_names={1: "a", 2: "b"})
    mff.save(tmp_path / "l.mff", L)
    back = mff.load(tmp_path / "l.mff")
    assert isinstance(back, LabelMap)
    assert np.array_equal(back.values, L.values) and back.structure_names == {1: "a", 2: "b"}


def test_header_layout(tmp_path):
    v = VectorField(np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4), Grid((3, 4), (1.5, 2.5)))
    mff.save(tmp_path / "v.mff", v)
    raw = (tmp_path / "v.mff").read_bytes()
    assert raw[:4] == b"MFF1"
    D, n0, n1, channels = struct.unpack_from("<4I", raw, 4)
    assert (D, n0, n1, channels) == (2, 3, 4, 2)
    assert raw[20] == 0
    assert struct.unpack_from("<2d", raw, 21) == (1.5, 2.5)
    data = np.frombuffer(raw[37:], "<f8")
    assert np.array_equal(data, np.arange(24.0))


def test_float32_tag(tmp_path, rng):
    img = ScalarImage(rng.normal(size=(4, 4)))
    mff.save(tmp_path / "x.mff", img, dtype_tag=1)
    raw = (tmp_path / "x.mff").read_bytes()
    assert raw[4 + 4 + 8 + 4] == 1
    np.testing.assert_allclose(mff.load(tmp_path / "x.mff").values, img.values, rtol=1e-6)


@pytest.mark.parametrize("mutate", ["magic", "truncate", "tag", "payload"])
def test_corrupt_files_rejected(tmp_path, rng, mutate):
    p = tmp_path / "x.mff"
    mff.save(p, ScalarImage(rng.normal(size=(4, 4))))
    raw = bytearray(p.read_bytes())
    if mutate == "magic":
        raw[:4] = b"XXXX"
    elif mutate == "truncate":
        raw = raw[:10]
    elif mutate == "tag":
        raw[20] = 9
    else:
        raw = raw[:-8]
    p.write_bytes(bytes(raw))
    with pytest.raises(mff.MFFError):
        mff.load(p)


def test_unsupported_object(tmp_path):
    with pytest.raises(TypeError):
        mff.save(tmp_path / "x.mff", np.zeros(3))
