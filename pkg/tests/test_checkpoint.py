"""Checkpoint codec: byte-exact round trips and corruption detection."""

import struct

import numpy as np
import pytest

from shapegan.checkpoint import (
    MAGIC,
    VERSION,
    CheckpointBlob,
    load_checkpoint,
    save_checkpoint,
)
from shapegan.errors import DataError


def sample_blob():
    rng = np.random.default_rng(0)
    tensors = {
        "encoder/conv0.w": rng.normal(size=(4, 3, 3, 3)),
        "encoder/conv0.b": rng.normal(size=(4,)),
        "adam/critic/step": np.array(7.0),  # rank-0 tensors must survive too
        "unicode/προφίλ": rng.normal(size=(2, 2)),
    }
    rng_state = {
        "bit_generator": "PCG64",
        "state": {"state": 2**90, "inc": 13},
        "has_uint32": 0,
        "uinteger": 0,
    }
    return CheckpointBlob(tensors, "seed = 1\nbatch_size = 4\n", rng_state)


def test_round_trip_preserves_everything(tmp_path):
    blob = sample_blob()
    path = save_checkpoint(tmp_path / "c.sgck", blob)
    back = load_checkpoint(path)
    assert list(back.tensors) == list(blob.tensors)  # order too
    for name in blob.tensors:
        assert np.array_equal(back.tensors[name], blob.tensors[name])
        assert back.tensors[name].dtype == np.float64
    assert back.config_text == blob.config_text
    assert back.rng_state == blob.rng_state


def test_save_load_save_is_byte_identical(tmp_path):
    a = tmp_path / "a.sgck"
    b = tmp_path / "b.sgck"
    save_checkpoint(a, sample_blob())
    save_checkpoint(b, load_checkpoint(a))
    assert a.read_bytes() == b.read_bytes()


def test_big_integer_rng_state_survives(tmp_path):
    # PCG64 state words exceed 64 bits; JSON carries them as plain ints
    blob = sample_blob()
    path = save_checkpoint(tmp_path / "c.sgck", blob)
    assert load_checkpoint(path).rng_state["state"]["state"] == 2**90


def test_no_temp_file_left_behind(tmp_path):
    save_checkpoint(tmp_path / "c.sgck", sample_blob())
    assert [p.name for p in tmp_path.iterdir()] == ["c.sgck"]


def test_loaded_tensors_are_writable_copies(tmp_path):
    path = save_checkpoint(tmp_path / "c.sgck", sample_blob())
    back = load_checkpoint(path)
    back.tensors["encoder/conv0.b"][0] = 99.0  # must not raise


def test_clone_is_deep():
    blob = sample_blob()
    copy = blob.clone()
    copy.tensors["encoder/conv0.b"][0] = -1.0
    copy.rng_state["state"]["inc"] = 0
    assert blob.tensors["encoder/conv0.b"][0] != -1.0
    assert blob.rng_state["state"]["inc"] == 13


def test_bad_magic(tmp_path):
    path = tmp_path / "x.sgck"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(DataError, match="bad magic"):
        load_checkpoint(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "x.sgck"
    path.write_bytes(MAGIC + struct.pack("<II", VERSION + 1, 0))
    with pytest.raises(DataError, match=f"version {VERSION + 1}"):
        load_checkpoint(path)


@pytest.mark.parametrize("keep", [3, 7, 11, 25, 60])
def test_truncation_always_detected(tmp_path, keep):
    full = save_checkpoint(tmp_path / "full.sgck", sample_blob()).read_bytes()
    cut = tmp_path / "cut.sgck"
    cut.write_bytes(full[:keep])
    with pytest.raises(DataError, match="truncated checkpoint"):
        load_checkpoint(cut)


def test_truncation_names_what_was_being_read(tmp_path):
    full = save_checkpoint(tmp_path / "full.sgck", sample_blob()).read_bytes()
    cut = tmp_path / "cut.sgck"
    cut.write_bytes(full[:4])
    with pytest.raises(DataError, match="reading version"):
        load_checkpoint(cut)


def test_trailing_bytes_rejected(tmp_path):
    path = save_checkpoint(tmp_path / "c.sgck", sample_blob())
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(DataError, match="4 trailing bytes"):
        load_checkpoint(path)


def test_duplicate_tensor_name_rejected(tmp_path):
    # hand-build a file with the same name twice
    name = b"w"
    tensor = struct.pack("<I", 1) + name + struct.pack("<I", 0) + struct.pack("<d", 1.0)
    body = (
        MAGIC
        + struct.pack("<II", VERSION, 2)
        + tensor
        + tensor
        + struct.pack("<I", 0)
        + struct.pack("<I", 2)
        + b"{}"
    )
    path = tmp_path / "dup.sgck"
    path.write_bytes(body)
    with pytest.raises(DataError, match="duplicate tensor name 'w'"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot read checkpoint"):
        load_checkpoint(tmp_path / "absent.sgck")


def test_empty_tensor_dict_round_trips(tmp_path):
    blob = CheckpointBlob({}, "", {})
    back = load_checkpoint(save_checkpoint(tmp_path / "e.sgck", blob))
    assert back.tensors == {} and back.config_text == "" and back.rng_state == {}
