"""Synthetic benchmark generation.

Each sample is a Gaussian blob initial condition evolved under one of the
candidate reaction-diffusion PDEs with coefficients drawn uniformly from
configured ranges. The whole dataset is min-max normalized jointly across
splits so its extrema map to exactly 0 and 1, then stored as float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .pde import (PdeParams, ReactionKind, StepFailure, NonFinite, integrate)

MAX_RETRIES = 5


@dataclass(frozen=True)
class BlobConfig:
    amplitude_range: tuple[float, float] = (0.5, 1.0)
    sigma_range: tuple[float, float] = (2.0, 6.0)
    center_margin: float = 4.0


@dataclass(frozen=True)
class GenConfig:
    grid: tuple[int, int] = (32, 32)
    n_train: int = 800
    n_val: int = 200
    n_test: int = 1000
    obs_times: tuple[float, ...] = (0.0, 12.0, 24.0)
    z_x_range: tuple[float, float] = (0.01, 1.0)
    z_r_range: tuple[float, float] = (0.01, 0.1)
    components: tuple[ReactionKind, ...] = (
        ReactionKind.LOGISTIC0, ReactionKind.LOGISTIC1, ReactionKind.LOGISTIC2)
    seed: int = 0
    blob: BlobConfig = field(default_factory=BlobConfig)

    def __post_init__(self):
        for lo, hi in (self.z_x_range, self.z_r_range):
            if not (0 < lo < hi):
                raise ValueError("parameter ranges need 0 < lo < hi")
        t = np.asarray(self.obs_times)
        if t[0] != 0 or (np.diff(t) <= 0).any():
            raise ValueError("obs_times must be strictly increasing from 0")
        if self.grid[0] < 3 or self.grid[1] < 3:
            raise ValueError("grid must be at least 3x3")
        if not self.components:
            raise ValueError("need at least one component")


@dataclass
class SampleTruth:
    component_id: int
    z_x: float
    z_r: float


@dataclass
class SampleRecord:
    id: str
    frames: np.ndarray  # (T, H, W) float32 after normalization
    times: np.ndarray   # (T,)
    truth: Optional[SampleTruth] = None


@dataclass
class Dataset:
    samples: list[SampleRecord]
    splits: dict[str, list[str]]          # split name -> sample ids
    normalization: tuple[float, float]    # (global_min, global_max)
    provenance: GenConfig

    def split_samples(self, name: str) -> list[SampleRecord]:
        ids = set(self.splits[name])
        return [s for s in self.samples if s.id in ids]


def sample_initial_condition(rng: np.random.Generator, config: GenConfig) -> np.ndarray:
    """Single Gaussian blob, amplitude/width/center drawn uniformly."""
    h, w = config.grid
    a_lo, a_hi = config.blob.amplitude_range
    s_lo, s_hi = config.blob.sigma_range
    m = config.blob.center_margin
    amp = rng.uniform(a_lo, a_hi)
    sigma = rng.uniform(s_lo, s_hi)
    ci = rng.uniform(m, h - 1 - m)
    cj = rng.uniform(m, w - 1 - m)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    u0 = amp * np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2.0 * sigma ** 2))
    return np.clip(u0, 0.0, 1.0)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(index,)))


def generate_sample(rng: np.random.Generator, component_id: int,
                    config: GenConfig, sample_id: str) -> SampleRecord:
    """Draw parameters and an initial blob, integrate the ground-truth PDE.

    Frames are raw (unnormalized) float64 here; generate_dataset normalizes.
    Retries with fresh draws on solver failure, up to MAX_RETRIES.
    """
    kind = config.components[component_id]
    times = np.asarray(config.obs_times, dtype=np.float64)
    last_exc: Exception | None = None
    for _ in range(MAX_RETRIES):
        z_x = rng.uniform(*config.z_x_range)
        z_r = 0.0 if kind is ReactionKind.NONE else rng.uniform(*config.z_r_range)
        u0 = sample_initial_condition(rng, config)
        try:
            traj = integrate(PdeParams(z_x, z_r, kind), u0, times)
        except (StepFailure, NonFinite) as exc:
            last_exc = exc
            continue
        return SampleRecord(id=sample_id, frames=traj.frames, times=times,
                            truth=SampleTruth(component_id, z_x, z_r))
    raise RuntimeError(f"generation failed after {MAX_RETRIES} retries: {last_exc}")


def generate_dataset(config: GenConfig) -> Dataset:
    """Full benchmark: balanced round-robin components within each split."""
    k = len(config.components)
    samples: list[SampleRecord] = []
    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    index = 0
    for split, count in (("train", config.n_train), ("val", config.n_val),
                         ("test", config.n_test)):
        for i in range(count):
            sid = f"{split}-{i:05d}"
            rec = generate_sample(_sample_rng(config.seed, index), i % k,
                                  config, sid)
            samples.append(rec)
            splits[split].append(sid)
            index += 1

    if samples:
        lo = min(float(s.frames.min()) for s in samples)
        hi = max(float(s.frames.max()) for s in samples)
        if hi <= lo:
            hi = lo + 1.0  # constant dataset; degenerate but well-defined
        for s in samples:
            s.frames = ((s.frames - lo) / (hi - lo)).astype(np.float32)
    else:
        lo, hi = 0.0, 1.0
    return Dataset(samples=samples, splits=splits, normalization=(lo, hi),
                   provenance=config)
