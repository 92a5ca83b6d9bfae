import json

import numpy as np
import pytest

from extremeseg.errors import BadMagic, HeaderMismatch
from extremeseg.io import read_mask, read_volume, write_mask, write_u8, write_volume
from extremeseg.net import Arch, init_model, load_model, save_model
from extremeseg.volume import Volume3D


def test_volume_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    v = Volume3D(rng.normal(size=(4, 5, 6)).astype(np.float32), spacing=(0.6, 0.6, 1.0))
    write_volume(v, tmp_path / "v.vol")
    w = read_volume(tmp_path / "v.vol")
    assert w.dims == (4, 5, 6)
    assert w.spacing == (0.6, 0.6, 1.0)
    assert w.data.tobytes() == v.data.tobytes()


@pytest.mark.parametrize("values", [(0, 1), (0, 1, 2)])
def test_mask_roundtrip(tmp_path, values):
    rng = np.random.default_rng(1)
    m = rng.choice(values, size=(3, 7, 2)).astype(np.uint8)
    write_mask(m, tmp_path / "m.vol")
    assert np.array_equal(read_mask(tmp_path / "m.vol"), m)


def test_file_layout(tmp_path):
    m = np.zeros((2, 3, 1), np.uint8)
    m[1, 0, 0] = 1
    m[0, 1, 0] = 2
    write_mask(m, tmp_path / "m.vol", spacing=(1, 2, 3))
    raw = (tmp_path / "m.vol").read_bytes()
    assert raw[:4] == b"VOL1"
    end = raw.index(b"\n")
    header = json.loads(raw[4:end])
    assert header == {"dims": [2, 3, 1], "spacing": [1.0, 2.0, 3.0], "dtype": "u8", "order": "x-fastest"}
    # x-fastest payload
    assert list(raw[end + 1:]) == [0, 1, 2, 0, 0, 0]


def test_truncated_payload(tmp_path):
    write_volume(Volume3D(np.zeros((2, 2, 2), np.float32)), tmp_path / "v.vol")
    raw = (tmp_path / "v.vol").read_bytes()
    (tmp_path / "t.vol").write_bytes(raw[:-3])
    with pytest.raises(HeaderMismatch):
        read_volume(tmp_path / "t.vol")


def test_bad_magic(tmp_path):
    write_volume(Volume3D(np.zeros((2, 2, 2), np.float32)), tmp_path / "v.vol")
    raw = bytearray((tmp_path / "v.vol").read_bytes())
    raw[:4] = b"VOLX"
    (tmp_path / "b.vol").write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        read_volume(tmp_path / "b.vol")


def test_kind_mismatch(tmp_path):
    write_mask(np.zeros((2, 2, 2), np.uint8), tmp_path / "m.vol")
    with pytest.raises(HeaderMismatch):
        read_volume(tmp_path / "m.vol")


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_volume(tmp_path / "nope.vol")


def test_write_mask_rejects_bad_labels(tmp_path):
    with pytest.raises(ValueError):
        write_mask(np.full((2, 2, 2), 5, np.uint8), tmp_path / "m.vol")


def test_u8_raster(tmp_path):
    a = np.arange(24, dtype=np.uint8).reshape(2, 3, 4) * 10
    write_u8(a, tmp_path / "o.vol")
    assert np.array_equal(read_mask(tmp_path / "o.vol"), a)


def test_checkpoint_roundtrip(tmp_path):
    m = init_model(Arch(), seed=3)
    save_model(m, tmp_path / "m.mdl")
    back = load_model(tmp_path / "m.mdl")
    assert back.arch == m.arch
    assert back.seed == 3
    assert back.params.tobytes() == m.params.tobytes()
    assert (tmp_path / "m.mdl").read_bytes()[:4] == b"MDL1"


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.mdl").write_bytes(b"NOPE{}\n")
    with pytest.raises(BadMagic):
        load_model(tmp_path / "x.mdl")
