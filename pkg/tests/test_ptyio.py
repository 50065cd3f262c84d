import json
import struct

import numpy as np
import pytest

from ptyhybrid.errors import (BundleError, CorruptionError, UnsupportedVersionError,
                              ValidationError)
from ptyhybrid.ptyio import (MANIFEST, Bundle, TraceWriter, read_bundle, read_dataset,
                             read_trace, write_bundle, write_dataset)
from ptyhybrid.solver import IterationTrace


def random_bundle(seed):
    rng = np.random.default_rng(seed)
    arrays = {}
    for i in range(int(rng.integers(1, 4))):
        shape = tuple(int(s) for s in rng.integers(0, 6, size=int(rng.integers(1, 4))))
        if rng.integers(2):
            arr = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex64)
        else:
            arr = (rng.standard_normal(shape) * 10.0 ** rng.integers(-30, 30)).astype(np.float32)
        arrays[f"a{i}"] = arr
    return Bundle(arrays, {"seed": seed})


@pytest.mark.parametrize("seed", range(50))
def test_round_trip(tmp_path, seed):
    bundle = random_bundle(seed)
    write_bundle(bundle, tmp_path / "b")
    back = read_bundle(tmp_path / "b")
    assert back.meta == bundle.meta
    assert set(back.arrays) == set(bundle.arrays)
    for name, arr in bundle.arrays.items():
        assert back.arrays[name].dtype == arr.dtype
        assert back.arrays[name].shape == arr.shape
        assert back.arrays[name].tobytes() == arr.tobytes()


def test_byte_level_contract(tmp_path):
    write_bundle(Bundle({"d": np.ones((1, 4, 4), np.float32)}), tmp_path / "b")
    raw = (tmp_path / "b" / "d.bin").read_bytes()
    assert len(raw) == 64
    assert all(raw[i:i + 4] == struct.pack("<f", 1.0) for i in range(0, 64, 4))
    write_bundle(Bundle({"p": np.array([[1 - 2j]], np.complex64)}), tmp_path / "c")
    assert (tmp_path / "c" / "p.bin").read_bytes() == struct.pack("<ff", 1.0, -2.0)


def test_reads_hand_built_bundle(tmp_path):
    root = tmp_path / "hand"
    root.mkdir()
    (root / "x.bin").write_bytes(struct.pack("<4f", 0.5, 1.5, 2.5, 3.5))
    (root / "z.bin").write_bytes(struct.pack("<2f", 3.0, 4.0))
    (root / MANIFEST).write_text(json.dumps({
        "version": 1, "meta": {},
        "arrays": {"x": {"file": "x.bin", "dtype": "f32", "shape": [2, 2]},
                   "z": {"file": "z.bin", "dtype": "c64", "shape": [1]}}}))
    b = read_bundle(root)
    np.testing.assert_array_equal(b.arrays["x"], [[0.5, 1.5], [2.5, 3.5]])
    assert b.arrays["z"][0] == 3 + 4j


def _dataset_bundle(tmp_path, small_ds):
    path = tmp_path / "ds"
    write_dataset(small_ds, path)
    return path


def test_dataset_round_trip(tmp_path, small_ds):
    ds = read_dataset(_dataset_bundle(tmp_path, small_ds))
    np.testing.assert_array_equal(ds.d, small_ds.d)
    np.testing.assert_array_equal(ds.probe, small_ds.probe)
    np.testing.assert_array_equal(ds.scan, small_ds.scan)
    np.testing.assert_array_equal(ds.psi_ref, small_ds.psi_ref)
    assert ds.shape == small_ds.shape


def test_truncated_file(tmp_path, small_ds):
    path = _dataset_bundle(tmp_path, small_ds)
    raw = (path / "d.bin").read_bytes()
    (path / "d.bin").write_bytes(raw[:-4])
    with pytest.raises(CorruptionError, match=f"expected {len(raw)} bytes.*found {len(raw) - 4}"):
        read_bundle(path)


def test_negative_data(tmp_path):
    d = np.ones((1, 4, 4), np.float32)
    d[0, 1, 1] = -1
    write_bundle(Bundle({"d": d, "probe": np.ones((4, 4), np.complex64),
                         "scan": np.zeros((1, 2), np.float32)}), tmp_path / "b")
    with pytest.raises(ValidationError):
        read_bundle(tmp_path / "b")


def test_missing_array_file(tmp_path, small_ds):
    path = _dataset_bundle(tmp_path, small_ds)
    (path / "probe.bin").unlink()
    with pytest.raises(BundleError, match="probe.bin"):
        read_bundle(path)


def test_version_and_dtype_checks(tmp_path):
    write_bundle(Bundle({"x": np.zeros(2, np.float32)}), tmp_path / "b")
    manifest = json.loads((tmp_path / "b" / MANIFEST).read_text())
    manifest["version"] = 2
    (tmp_path / "b" / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(UnsupportedVersionError):
        read_bundle(tmp_path / "b")
    manifest["version"] = 1
    manifest["arrays"]["x"]["dtype"] = "f64"
    (tmp_path / "b" / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(CorruptionError):
        read_bundle(tmp_path / "b")


def test_missing_manifest_is_not_a_bundle(tmp_path):
    (tmp_path / "b").mkdir()
    with pytest.raises(BundleError, match="not a bundle"):
        read_bundle(tmp_path / "b")


def test_write_replaces_bundle_but_not_other_directories(tmp_path):
    write_bundle(Bundle({"x": np.zeros(2, np.float32)}), tmp_path / "b")
    write_bundle(Bundle({"y": np.ones(3, np.float32)}), tmp_path / "b")
    assert set(read_bundle(tmp_path / "b").arrays) == {"y"}
    assert sorted(p.name for p in tmp_path.iterdir()) == ["b"]
    other = tmp_path / "other"
    other.mkdir()
    (other / "keep.txt").write_text("x")
    with pytest.raises(BundleError):
        write_bundle(Bundle({"x": np.zeros(2, np.float32)}), other)
    assert (other / "keep.txt").exists()


def test_failed_write_leaves_nothing(tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr("ptyhybrid.ptyio.os.replace", fail)
    with pytest.raises(BundleError, match="disk full"):
        write_bundle(Bundle({"x": np.zeros(2, np.float32)}), tmp_path / "b")
    assert list(tmp_path.iterdir()) == []


def test_trace_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    t = IterationTrace(iter=0, objective=-1.5, gamma=0.25, shrinks=2, step_norm=3.0,
                       stage_ms=(1, 2, 3, 4), restarted=True, bytes_border=16)
    with TraceWriter(path, parallel=True) as w:
        w(t)
        assert len(read_trace(path)) == 1  # flushed while open
    row = read_trace(path)[0]
    assert row["objective"] == -1.5 and row["restarted"] == 1 and row["bytes_border"] == 16
