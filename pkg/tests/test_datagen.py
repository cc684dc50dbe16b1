import numpy as np
import pytest

from pdemix.datagen import (BlobConfig, GenConfig, Dataset, generate_dataset,
                            generate_sample, sample_initial_condition,
                            _sample_rng)
from pdemix.pde import PdeParams, ReactionKind, integrate

SMALL = GenConfig(grid=(12, 12), n_train=6, n_val=3, n_test=6,
                  obs_times=(0.0, 6.0, 12.0), blob=BlobConfig(center_margin=3.0),
                  seed=7)


class TestInitialCondition:
    def test_zero_amplitude_gives_zero_field(self):
        cfg = GenConfig(grid=(12, 12),
                        blob=BlobConfig(amplitude_range=(0.0, 0.0),
                                        center_margin=3.0))
        u0 = sample_initial_condition(np.random.default_rng(0), cfg)
        np.testing.assert_array_equal(u0, np.zeros((12, 12)))

    def test_peak_near_center_and_bounded(self):
        cfg = GenConfig(grid=(16, 16), blob=BlobConfig(center_margin=5.0))
        for s in range(20):
            rng = np.random.default_rng(s)
            amp = rng.uniform(0.5, 1.0)
            sigma = rng.uniform(2.0, 6.0)
            ci = rng.uniform(5.0, 10.0)
            cj = rng.uniform(5.0, 10.0)
            u0 = sample_initial_condition(np.random.default_rng(s), cfg)
            i, j = np.unravel_index(np.argmax(u0), u0.shape)
            assert abs(i - ci) <= 1.0 and abs(j - cj) <= 1.0
            # nearest grid point to the center is at most half a cell away
            nearest = amp * np.exp(-0.5 / (2 * sigma ** 2))
            assert nearest <= u0.max() <= amp + 1e-12
            assert np.all(u0 >= 0) and np.all(u0 <= 1)

    def test_respects_margin(self):
        cfg = GenConfig(grid=(12, 12),
                        blob=BlobConfig(sigma_range=(0.5, 0.5),
                                        center_margin=4.0))
        for s in range(10):
            u0 = sample_initial_condition(np.random.default_rng(s), cfg)
            i, j = np.unravel_index(np.argmax(u0), u0.shape)
            assert 3 <= i <= 8 and 3 <= j <= 8


class TestGenerateSample:
    def test_truth_within_ranges(self):
        for idx in range(9):
            rec = generate_sample(_sample_rng(SMALL.seed, idx), idx % 3,
                                  SMALL, f"s-{idx}")
            lo, hi = SMALL.z_x_range
            assert lo <= rec.truth.z_x <= hi
            lo, hi = SMALL.z_r_range
            assert lo <= rec.truth.z_r <= hi
            assert rec.truth.component_id == idx % 3
            assert rec.frames.shape == (3, 12, 12)

    def test_none_component_has_zero_reaction_and_conserves_mass(self):
        cfg = GenConfig(grid=(12, 12), components=(ReactionKind.NONE,),
                        obs_times=(0.0, 8.0), blob=BlobConfig(center_margin=3.0))
        rec = generate_sample(_sample_rng(3, 0), 0, cfg, "s")
        assert rec.truth.z_r == 0.0
        m0 = rec.frames[0].sum()
        m1 = rec.frames[1].sum()
        assert m1 == pytest.approx(m0, rel=1e-7)

    def test_deterministic_given_rng_state(self):
        a = generate_sample(_sample_rng(11, 4), 1, SMALL, "x")
        b = generate_sample(_sample_rng(11, 4), 1, SMALL, "x")
        np.testing.assert_array_equal(a.frames, b.frames)
        assert a.truth.z_x == b.truth.z_x and a.truth.z_r == b.truth.z_r

    def test_reaction_kinds_separate_at_matched_parameters(self):
        # same u0 and coefficients, different kinetics: final frames differ
        cfg = GenConfig(grid=(16, 16), blob=BlobConfig(center_margin=5.0))
        u0 = sample_initial_condition(np.random.default_rng(2), cfg)
        times = np.array([0.0, 24.0])
        z_x, z_r = 0.1, 0.08
        f1 = integrate(PdeParams(z_x, z_r, ReactionKind.LOGISTIC1), u0, times).frames[-1]
        f2 = integrate(PdeParams(z_x, z_r, ReactionKind.LOGISTIC2), u0, times).frames[-1]
        assert np.sqrt(np.mean((f1 - f2) ** 2)) > 1e-3


@pytest.fixture(scope="module")
def ds() -> Dataset:
    return generate_dataset(SMALL)


class TestGenerateDataset:
    def test_split_sizes_and_ids(self, ds):
        assert len(ds.splits["train"]) == 6
        assert len(ds.splits["val"]) == 3
        assert len(ds.splits["test"]) == 6
        assert ds.splits["train"][0] == "train-00000"
        assert len(ds.samples) == 15

    def test_components_balanced_within_split(self, ds):
        for split in ("train", "val", "test"):
            counts = np.bincount(
                [s.truth.component_id for s in ds.split_samples(split)],
                minlength=3)
            assert counts.max() - counts.min() <= 1

    def test_normalization_extrema_exact(self, ds):
        lo = min(s.frames.min() for s in ds.samples)
        hi = max(s.frames.max() for s in ds.samples)
        assert lo == np.float32(0.0)
        assert hi == np.float32(1.0)
        assert ds.normalization[0] < ds.normalization[1]

    def test_frames_dtype_and_range(self, ds):
        for s in ds.samples:
            assert s.frames.dtype == np.float32
            assert np.all(s.frames >= 0) and np.all(s.frames <= 1)
            assert np.all(np.isfinite(s.frames))

    def test_same_seed_reproduces_bytes(self, ds):
        again = generate_dataset(SMALL)
        for a, b in zip(ds.samples, again.samples):
            assert a.id == b.id
            assert a.frames.tobytes() == b.frames.tobytes()

    def test_different_seed_differs(self, ds):
        other = generate_dataset(
            GenConfig(grid=(12, 12), n_train=6, n_val=3, n_test=6,
                      obs_times=(0.0, 6.0, 12.0),
                      blob=BlobConfig(center_margin=3.0), seed=8))
        assert any(a.frames.tobytes() != b.frames.tobytes()
                   for a, b in zip(ds.samples, other.samples))


class TestConfigValidation:
    def test_bad_z_range(self):
        with pytest.raises(ValueError):
            GenConfig(z_x_range=(0.5, 0.1))

    def test_times_must_start_at_zero(self):
        with pytest.raises(ValueError):
            GenConfig(obs_times=(1.0, 2.0))

    def test_grid_too_small(self):
        with pytest.raises(ValueError):
            GenConfig(grid=(2, 5))

    def test_empty_components(self):
        with pytest.raises(ValueError):
            GenConfig(components=())
