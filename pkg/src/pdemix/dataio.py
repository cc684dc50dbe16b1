"""On-disk dataset format.

A dataset directory holds `manifest.json` plus one raw array file per
sample: 32-bit IEEE-754 little-endian floats, frame-major then row-major
(C order), extension `.f32`. The manifest carries the generation config
echo, normalization constants, and per-sample entries
{id, split, times, truth, file, shape}.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .datagen import BlobConfig, Dataset, GenConfig, SampleRecord, SampleTruth
from .pde import ReactionKind

FORMAT_TAG = "pdemix-dataset-v1"


class DatasetIOError(Exception):
    """Base class for dataset read/write failures."""


class ManifestError(DatasetIOError):
    """Missing, unparsable, or schema-violating manifest."""


class ShapeMismatchError(DatasetIOError):
    """Array file size or metadata disagrees with the declared shape."""


class TruncatedArrayError(DatasetIOError):
    """Array file is shorter than the declared shape requires."""


def _fmt_float(x: float) -> float:
    """Round-trip a float through 9 significant digits (stable re-writes)."""
    return float(f"{float(x):.9g}")


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, floats at 9 significant digits."""

    def conv(o):
        if isinstance(o, float):
            return _fmt_float(o)
        if isinstance(o, dict):
            return {k: conv(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [conv(v) for v in o]
        if isinstance(o, (np.floating,)):
            return _fmt_float(float(o))
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.ndarray):
            return conv(o.tolist())
        return o

    return json.dumps(conv(obj), sort_keys=True, indent=2) + "\n"


def config_to_dict(cfg: GenConfig) -> dict:
    return {
        "grid": list(cfg.grid),
        "n_train": cfg.n_train,
        "n_val": cfg.n_val,
        "n_test": cfg.n_test,
        "obs_times": list(cfg.obs_times),
        "z_x_range": list(cfg.z_x_range),
        "z_r_range": list(cfg.z_r_range),
        "components": [k.value for k in cfg.components],
        "seed": cfg.seed,
        "blob": {
            "amplitude_range": list(cfg.blob.amplitude_range),
            "sigma_range": list(cfg.blob.sigma_range),
            "center_margin": cfg.blob.center_margin,
        },
    }


_GEN_KEYS = {"grid", "n_train", "n_val", "n_test", "obs_times", "z_x_range",
             "z_r_range", "components", "seed", "blob"}
_BLOB_KEYS = {"amplitude_range", "sigma_range", "center_margin"}


def config_from_dict(d: dict) -> GenConfig:
    if not isinstance(d, dict):
        raise ManifestError("config must be an object")
    unknown = set(d) - _GEN_KEYS
    if unknown:
        raise ManifestError(f"unknown config keys: {sorted(unknown)}")
    missing = _GEN_KEYS - set(d)
    if missing:
        raise ManifestError(f"missing config keys: {sorted(missing)}")
    blob = d["blob"]
    unknown = set(blob) - _BLOB_KEYS
    if unknown:
        raise ManifestError(f"unknown blob keys: {sorted(unknown)}")
    try:
        return GenConfig(
            grid=tuple(int(v) for v in d["grid"]),
            n_train=int(d["n_train"]), n_val=int(d["n_val"]),
            n_test=int(d["n_test"]),
            obs_times=tuple(float(t) for t in d["obs_times"]),
            z_x_range=tuple(float(v) for v in d["z_x_range"]),
            z_r_range=tuple(float(v) for v in d["z_r_range"]),
            components=tuple(ReactionKind(k) for k in d["components"]),
            seed=int(d["seed"]),
            blob=BlobConfig(
                amplitude_range=tuple(float(v) for v in blob["amplitude_range"]),
                sigma_range=tuple(float(v) for v in blob["sigma_range"]),
                center_margin=float(blob["center_margin"]),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"invalid config: {exc}") from exc


def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    split_of = {sid: name for name, ids in ds.splits.items() for sid in ids}
    entries = []
    for s in ds.samples:
        fname = f"{s.id}.f32"
        arr = np.ascontiguousarray(s.frames, dtype="<f4")
        arr.tofile(path / fname)
        truth = None
        if s.truth is not None:
            truth = {"component_id": s.truth.component_id,
                     "z_x": s.truth.z_x, "z_r": s.truth.z_r}
        entries.append({
            "id": s.id,
            "split": split_of.get(s.id, "test"),
            "times": list(np.asarray(s.times, dtype=float)),
            "truth": truth,
            "file": fname,
            "shape": [int(v) for v in s.frames.shape],
        })
    manifest = {
        "format": FORMAT_TAG,
        "config": config_to_dict(ds.provenance),
        "normalization": list(ds.normalization),
        "samples": entries,
    }
    (path / "manifest.json").write_text(canonical_json(manifest), encoding="utf-8")


def load_manifest(path) -> dict:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise ManifestError(f"no manifest.json in {path}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_TAG:
        raise ManifestError(f"not a {FORMAT_TAG} manifest")
    for key in ("config", "normalization", "samples"):
        if key not in manifest:
            raise ManifestError(f"manifest missing key {key!r}")
    return manifest


def load_sample(path, entry: dict) -> SampleRecord:
    """Load one sample given its manifest entry; validates the array file."""
    try:
        sid = entry["id"]
        times = np.asarray(entry["times"], dtype=np.float64)
        shape = tuple(int(v) for v in entry["shape"])
        fname = entry["file"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"bad sample entry: {exc}") from exc
    if len(shape) != 3:
        raise ShapeMismatchError(f"{sid}: shape must be [T, H, W], got {shape}")
    if shape[0] != times.size:
        raise ShapeMismatchError(
            f"{sid}: {shape[0]} frames declared but {times.size} times")
    fpath = Path(path) / fname
    if not fpath.exists():
        raise TruncatedArrayError(f"{sid}: missing array file {fname}")
    expected = int(np.prod(shape)) * 4
    actual = fpath.stat().st_size
    if actual < expected:
        raise TruncatedArrayError(
            f"{sid}: {fname} has {actual} bytes, expected {expected}")
    if actual != expected:
        raise ShapeMismatchError(
            f"{sid}: {fname} has {actual} bytes, expected {expected}")
    frames = np.fromfile(fpath, dtype="<f4").reshape(shape)
    truth = None
    if entry.get("truth") is not None:
        t = entry["truth"]
        truth = SampleTruth(component_id=int(t["component_id"]),
                            z_x=float(t["z_x"]), z_r=float(t["z_r"]))
    return SampleRecord(id=sid, frames=frames, times=times, truth=truth)


def read_dataset(path) -> Dataset:
    path = Path(path)
    manifest = load_manifest(path)
    config = config_from_dict(manifest["config"])
    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    samples = []
    for entry in manifest["samples"]:
        rec = load_sample(path, entry)
        samples.append(rec)
        splits.setdefault(entry.get("split", "test"), []).append(rec.id)
    lo, hi = manifest["normalization"]
    return Dataset(samples=samples, splits=splits,
                   normalization=(float(lo), float(hi)), provenance=config)
