"""Tests for feature files, manifests and checkpoints."""

import json
import struct

import numpy as np
import pytest

from mfhca.core.autodiff import Tensor, no_grad
from mfhca.core.errors import (
    BadMagicError,
    CheckpointError,
    DataError,
    EmptyFeatureError,
    FeatureFileError,
    ManifestError,
    MissingParameterError,
    ParameterShapeError,
    TruncatedPayloadError,
)
from mfhca.core.features import (
    LABELS,
    load_checkpoint,
    load_manifest,
    load_state,
    read_checkpoint,
    read_feature_file,
    resolve_path,
    save_checkpoint,
    save_manifest,
    write_feature_file,
)
from mfhca.core.model import MfhcaModel, count_params, parameter_breakdown

ONE_BY_ONE = b"MFH1" + struct.pack("<II", 1, 1) + struct.pack("<f", 1.0)


def _entry(uid="u1", speaker="s1", label="happy", **overrides):
    entry = {
        "utterance_id": uid,
        "speaker_id": speaker,
        "session": "Ses01",
        "label": label,
        "wav_path": f"wav/{uid}.wav",
        "feature_path": f"features/{uid}.mfh",
    }
    entry.update(overrides)
    return entry


def _write_manifest(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_one_by_one_file_layout(tmp_path):
    path = tmp_path / "one.mfh"
    write_feature_file(path, np.ones((1, 1)))
    raw = path.read_bytes()
    assert len(raw) == 16
    assert raw == ONE_BY_ONE
    np.testing.assert_array_equal(read_feature_file(path), [[1.0]])


def test_feature_file_is_little_endian(tmp_path):
    path = tmp_path / "m.mfh"
    matrix = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_feature_file(path, matrix)
    raw = path.read_bytes()
    assert raw[4:12] == struct.pack("<II", 2, 3)
    np.testing.assert_array_equal(np.frombuffer(raw[12:], dtype="<f4"), matrix.ravel())
    loaded = read_feature_file(path)
    assert loaded.dtype == np.float32
    np.testing.assert_array_equal(loaded, matrix)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.mfh"
    path.write_bytes(b"XXXX" + ONE_BY_ONE[4:])
    with pytest.raises(BadMagicError):
        read_feature_file(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "short.mfh"
    path.write_bytes(ONE_BY_ONE[:-1])
    with pytest.raises(TruncatedPayloadError):
        read_feature_file(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "header.mfh"
    path.write_bytes(b"MFH1\x01\x00")
    with pytest.raises(TruncatedPayloadError):
        read_feature_file(path)


def test_trailing_bytes_are_rejected(tmp_path):
    path = tmp_path / "long.mfh"
    path.write_bytes(ONE_BY_ONE + b"\0\0\0\0")
    with pytest.raises(TruncatedPayloadError):
        read_feature_file(path)


def test_empty_feature_file(tmp_path):
    path = tmp_path / "empty.mfh"
    path.write_bytes(b"MFH1" + struct.pack("<II", 0, 768))
    with pytest.raises(EmptyFeatureError):
        read_feature_file(path)
    with pytest.raises(EmptyFeatureError):
        write_feature_file(path, np.zeros((0, 768)))


def test_feature_file_errors_are_data_errors(tmp_path):
    with pytest.raises(DataError):
        read_feature_file(tmp_path / "missing.mfh")
    with pytest.raises(FeatureFileError):
        write_feature_file(tmp_path / "nan.mfh", np.array([[np.nan]]))
    with pytest.raises(FeatureFileError):
        write_feature_file(tmp_path / "vec.mfh", np.zeros(3))


def test_manifest_roundtrip(tmp_path):
    path = _write_manifest(
        tmp_path / "m.jsonl",
        [json.dumps(_entry("a")), "", json.dumps(_entry("b", label="sad"))],
    )
    entries = load_manifest(path)
    assert [e.utterance_id for e in entries] == ["a", "b"]
    assert entries[1].label_index == LABELS.index("sad")
    save_manifest(tmp_path / "copy.jsonl", entries)
    assert load_manifest(tmp_path / "copy.jsonl") == entries


def test_manifest_excited_must_be_merged(tmp_path):
    path = _write_manifest(tmp_path / "m.jsonl", [json.dumps(_entry(label="excited"))])
    with pytest.raises(ManifestError, match="merge it into 'happy'"):
        load_manifest(path)


@pytest.mark.parametrize(
    "line,match",
    [
        ("{not json", "malformed JSON"),
        ("[1, 2]", "JSON object"),
        (json.dumps({"utterance_id": "x"}), "missing field"),
        (json.dumps(_entry(label="bored")), "unknown label"),
        (json.dumps(_entry(wav_path="")), "wav_path must be non-empty"),
        (json.dumps(_entry(session=3)), "must be a string"),
    ],
)
def test_manifest_rejects_bad_lines(tmp_path, line, match):
    path = _write_manifest(tmp_path / "m.jsonl", [json.dumps(_entry("ok")), line])
    with pytest.raises(ManifestError, match=match) as info:
        load_manifest(path)
    assert "line 2" in str(info.value)


def test_manifest_duplicate_ids(tmp_path):
    path = _write_manifest(tmp_path / "m.jsonl", [json.dumps(_entry("a"))] * 2)
    with pytest.raises(ManifestError, match="duplicate utterance_id"):
        load_manifest(path)


def test_resolve_path(tmp_path):
    assert resolve_path("wav/a.wav", tmp_path) == tmp_path / "wav" / "a.wav"
    assert resolve_path("/abs/a.wav", tmp_path).as_posix() == "/abs/a.wav"


def _inputs(config, rng):
    spec = Tensor(rng.standard_normal((2, 1, *config.spec_shape)).astype(np.float32))
    feats = Tensor(
        rng.standard_normal((2, config.feature_frames, config.hca.hubert_dim)).astype(np.float32)
    )
    return spec, feats


def test_checkpoint_roundtrip_reproduces_logits(tmp_path, tiny_config, rng):
    model = MfhcaModel(tiny_config)
    model.buffer("input_stats")[:] = [1.5, 2.5]
    model.eval()
    spec, feats = _inputs(tiny_config, rng)
    with no_grad():
        before = model(spec, feats).data
    path = tmp_path / "model.mfc"
    save_checkpoint(path, model)
    assert path.read_bytes()[:4] == b"MFC1"

    restored = load_checkpoint(path)
    assert restored.config == tiny_config
    assert not restored.training
    with no_grad():
        after = restored(spec, feats).data
    np.testing.assert_array_equal(before, after)
    np.testing.assert_array_equal(restored.buffer("input_stats"), [1.5, 2.5])


def test_checkpoint_config_entry_comes_first(tmp_path, tiny_config):
    path = tmp_path / "model.mfc"
    save_checkpoint(path, MfhcaModel(tiny_config))
    raw = path.read_bytes()
    (name_len,) = struct.unpack_from("<H", raw, 8)
    assert raw[10 : 10 + name_len] == b"__config__"
    config, tensors = read_checkpoint(path)
    assert config is not None and config["feature_frames"] == tiny_config.feature_frames
    assert "classifier.fc3.weight" in tensors
    assert all(t.dtype == np.float32 for t in tensors.values())


def test_missing_parameter_names_the_tensor(tmp_path, tiny_config):
    path = tmp_path / "model.mfc"
    save_checkpoint(path, MfhcaModel(tiny_config))
    _, tensors = read_checkpoint(path)
    del tensors["classifier.fc3.weight"]
    with pytest.raises(MissingParameterError, match="classifier.fc3.weight"):
        load_state(MfhcaModel(tiny_config), tensors, str(path))


def test_parameter_shape_mismatch(tmp_path, tiny_config):
    path = tmp_path / "model.mfc"
    save_checkpoint(path, MfhcaModel(tiny_config))
    _, tensors = read_checkpoint(path)
    tensors["classifier.fc3.bias"] = np.zeros(7, dtype=np.float32)
    with pytest.raises(ParameterShapeError):
        load_state(MfhcaModel(tiny_config), tensors, str(path))


def test_unexpected_tensor(tmp_path, tiny_config):
    path = tmp_path / "model.mfc"
    save_checkpoint(path, MfhcaModel(tiny_config))
    _, tensors = read_checkpoint(path)
    tensors["stray.weight"] = np.zeros(1, dtype=np.float32)
    with pytest.raises(CheckpointError, match="stray.weight"):
        load_state(MfhcaModel(tiny_config), tensors, str(path))


def test_truncated_checkpoint(tmp_path, tiny_config):
    path = tmp_path / "model.mfc"
    save_checkpoint(path, MfhcaModel(tiny_config))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "model.mfc"
    path.write_bytes(b"MFH1" + b"\0" * 8)
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)


def test_checkpoint_name_not_utf8(tmp_path):
    path = tmp_path / "model.mfc"
    raw = b"MFC1" + struct.pack("<I", 1) + struct.pack("<H", 2) + b"\xff\xfe"
    path.write_bytes(raw + struct.pack("<B", 0))
    with pytest.raises(CheckpointError, match="not UTF-8"):
        read_checkpoint(path)


def test_checkpoint_config_entry_must_be_1d(tmp_path):
    path = tmp_path / "model.mfc"
    raw = b"MFC1" + struct.pack("<I", 1) + struct.pack("<H", 10) + b"__config__"
    path.write_bytes(raw + struct.pack("<B", 0))
    with pytest.raises(CheckpointError, match="must be 1-D"):
        read_checkpoint(path)


def test_parameter_count_survives_checkpoint(tmp_path, tiny_config):
    model = MfhcaModel(tiny_config)
    path = tmp_path / "model.mfc"
    save_checkpoint(path, model)
    restored = load_checkpoint(path)
    assert count_params(restored) == count_params(model)
    assert parameter_breakdown(restored) == parameter_breakdown(model)
