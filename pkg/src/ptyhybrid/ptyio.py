"""Bundle format: a directory holding ``manifest.json`` plus raw
little-endian row-major array files.

``f32`` arrays are 4-byte floats; ``c64`` arrays are interleaved
``(real, imag)`` 4-byte floats. The manifest is written last, so a bundle
without one is incomplete and never read.
"""

import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleError, CorruptionError, UnsupportedVersionError, ValidationError
from .field import Dataset, round_positions

VERSION = 1
MANIFEST = "manifest.json"
DTYPES = {"f32": np.dtype("<f4"), "c64": np.dtype("<c8")}
DATASET_ARRAYS = {"d": ("f32", 3), "probe": ("c64", 2), "scan": ("f32", 2)}


@dataclass
class Bundle:
    arrays: dict
    meta: dict = field(default_factory=dict)


def _dtype_tag(arr):
    if np.iscomplexobj(arr):
        return "c64"
    return "f32"


def write_bundle(bundle, path):
    """Write ``bundle`` atomically to directory ``path``.

    An existing bundle (or empty directory) at ``path`` is replaced.
    """
    path = Path(path)
    if path.exists():
        if not path.is_dir() or (any(path.iterdir()) and not (path / MANIFEST).exists()):
            raise BundleError(f"{path}: exists and is not a bundle; refusing to replace it")
    parent = path.parent if str(path.parent) else Path(".")
    tmp = None
    try:
        parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=parent))
        entries = {}
        for name, arr in bundle.arrays.items():
            tag = _dtype_tag(arr)
            data = np.ascontiguousarray(arr, dtype=DTYPES[tag])
            fname = f"{name}.bin"
            (tmp / fname).write_bytes(data.tobytes())
            entries[name] = {"file": fname, "dtype": tag, "shape": list(data.shape)}
        manifest = {"version": VERSION, "arrays": entries, "meta": bundle.meta}
        (tmp / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except OSError as err:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
        raise BundleError(f"{path}: cannot write bundle: {err}") from err


def read_bundle(path, validate_dataset=True):
    """Read and validate a bundle.

    Shapes from the manifest are cross-checked against file byte lengths. If
    the bundle carries ``d``, it is validated as a dataset bundle.
    """
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as err:
        raise BundleError(f"{path}: no {MANIFEST}; not a bundle") from err
    except (OSError, json.JSONDecodeError) as err:
        raise CorruptionError(f"{path}: unreadable manifest: {err}") from err
    if manifest.get("version") != VERSION:
        raise UnsupportedVersionError(
            f"{path}: bundle version {manifest.get('version')!r} unsupported (want {VERSION})")
    arrays = {}
    for name, entry in manifest.get("arrays", {}).items():
        tag = entry.get("dtype")
        if tag not in DTYPES:
            raise CorruptionError(f"{path}: array {name!r} has unknown dtype {tag!r}")
        shape = tuple(int(s) for s in entry["shape"])
        fpath = path / entry["file"]
        try:
            raw = fpath.read_bytes()
        except FileNotFoundError as err:
            raise BundleError(f"{path}: array file {entry['file']!r} missing") from err
        expected = math.prod(shape) * DTYPES[tag].itemsize
        if len(raw) != expected:
            raise CorruptionError(
                f"{fpath}: expected {expected} bytes for shape {shape} {tag}, "
                f"found {len(raw)}")
        arrays[name] = np.frombuffer(raw, dtype=DTYPES[tag]).reshape(shape).astype(
            DTYPES[tag].newbyteorder("="))
    bundle = Bundle(arrays, manifest.get("meta", {}))
    if validate_dataset and "d" in arrays:
        _validate_dataset_arrays(path, bundle)
    return bundle


def _validate_dataset_arrays(path, bundle):
    for name, (tag, ndim) in DATASET_ARRAYS.items():
        arr = bundle.arrays.get(name)
        if arr is None:
            raise BundleError(f"{path}: dataset bundle lacks required array {name!r}")
        if _dtype_tag(arr) != tag or arr.ndim != ndim:
            raise CorruptionError(f"{path}: array {name!r} must be {ndim}-D {tag}")
    d = bundle.arrays["d"]
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValidationError(f"{path}: diffraction data contains negative or non-finite values")


def dataset_to_bundle(ds, extra_meta=None):
    arrays = {
        "d": ds.d.astype(np.float32),
        "probe": ds.probe.astype(np.complex64),
        "scan": ds.scan.astype(np.float32),
    }
    if ds.psi_ref is not None:
        arrays["psi_ref"] = ds.psi_ref.astype(np.complex64)
    meta = dict(ds.meta)
    meta["object_shape"] = list(ds.shape)
    meta["position_rounding"] = "nearest, half-up, top-left corners"
    if extra_meta:
        meta.update(extra_meta)
    return Bundle(arrays, meta)


def bundle_to_dataset(bundle):
    a = bundle.arrays
    if "object_shape" in bundle.meta:
        shape = tuple(bundle.meta["object_shape"])
    elif "psi_ref" in a:
        shape = a["psi_ref"].shape
    else:
        raise BundleError("dataset bundle has neither meta.object_shape nor psi_ref")
    n = a["probe"].shape[0]
    scan = round_positions(a["scan"], shape[0], shape[1], n)
    return Dataset(probe=a["probe"], scan=scan, d=a["d"], shape=shape,
                   psi_ref=a.get("psi_ref"), meta=dict(bundle.meta))


def write_dataset(ds, path, extra_meta=None):
    write_bundle(dataset_to_bundle(ds, extra_meta), path)


def read_dataset(path):
    return bundle_to_dataset(read_bundle(path))


TRACE_COLUMNS = ("iter", "objective", "gamma", "shrinks", "step_norm",
                 "grad_ms", "dir_ms", "ls_ms", "update_ms", "restarted")
PARALLEL_COLUMNS = ("grad_wait_ms", "dir_wait_ms", "ls_wait_ms", "update_wait_ms",
                    "bytes_gathered", "bytes_scattered", "bytes_border")


def trace_fields(trace, parallel=False):
    row = [str(trace.iter), repr(trace.objective), repr(trace.gamma), str(trace.shrinks),
           repr(trace.step_norm), *(f"{x:.3f}" for x in trace.stage_ms),
           str(int(trace.restarted))]
    if parallel:
        row += [f"{x:.3f}" for x in trace.wait_ms]
        row += [str(trace.bytes_gathered), str(trace.bytes_scattered), str(trace.bytes_border)]
    return row


class TraceWriter:
    """Append-only comma-separated trace file; each row is flushed as written."""

    def __init__(self, path, parallel=False):
        self.parallel = parallel
        self._fh = open(path, "w", encoding="utf-8")
        cols = TRACE_COLUMNS + (PARALLEL_COLUMNS if parallel else ())
        self._fh.write(",".join(cols) + "\n")
        self._fh.flush()

    def __call__(self, trace):
        self._fh.write(",".join(trace_fields(trace, self.parallel)) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trace(path):
    """Parse a trace file into a list of ``{column: float}`` dicts."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            values = line.strip().split(",")
            rows.append({k: float(v) for k, v in zip(header, values)})
    return rows
