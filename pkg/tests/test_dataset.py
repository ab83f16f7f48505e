"""Sampling, the analytic forward model, splits, and persistence."""

import math

import numpy as np
import pytest

from specinv import dataset
from specinv.dataset import (
    DatasetFormatError,
    DesignParams,
    PARAM_UPPER,
    assign_splits,
    build_dataset,
    denormalize_designs,
    generate_designs,
    generate_dataset,
    load_dataset,
    load_metadata,
    normalize_designs,
    peak_parameters,
    save_dataset,
    scale_and_filter,
    sobol_scrambled,
    split_counts,
    surrogate_spectra,
    surrogate_spectrum,
    witness_pair,
)


class TestSobol:
    def test_unscrambled_second_point_is_center(self):
        pts = sobol_scrambled(2, seed=0, scramble=False)
        np.testing.assert_array_equal(pts[1], np.full(5, 0.5))

    def test_range(self):
        pts = sobol_scrambled(512, seed=3)
        assert np.all(pts >= 0.0) and np.all(pts < 1.0)

    def test_equidistribution(self):
        pts = sobol_scrambled(4096, seed=1)
        means = pts.mean(axis=0)
        assert np.all(means >= 0.48) and np.all(means <= 0.52)

    def test_determinism(self):
        a = sobol_scrambled(64, seed=5)
        b = sobol_scrambled(64, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_only_five_dims(self):
        with pytest.raises(ValueError, match="dim"):
            sobol_scrambled(4, dim=3)


class TestScaleAndFilter:
    def test_origin_maps_to_lower_bounds_and_is_kept(self):
        designs = scale_and_filter(np.zeros((1, 5)))
        assert len(designs) == 1
        np.testing.assert_array_equal(designs[0].to_array(), [305.0, 45.0, 150.0, 25.0, 80.0])

    def test_narrow_period_wide_cell_rejected(self):
        # p = 305, w = 190 -> gap 115 < 200
        u = np.array([[0.0, 1.0, 0.5, 0.5, 0.5]])
        assert scale_and_filter(u) == []

    def test_wide_period_wide_cell_kept(self):
        # p = 415, w = 190 -> gap 225
        u = np.array([[1.0, 1.0, 0.5, 0.5, 0.5]])
        designs = scale_and_filter(u)
        assert len(designs) == 1
        assert designs[0].p - designs[0].w == pytest.approx(225.0)

    def test_generate_designs_reaches_requested_count(self):
        designs = generate_designs(97, seed=2)
        assert len(designs) == 97
        for d in designs:
            assert d.p - d.w >= dataset.MIN_PERIOD_WIDTH_GAP

    def test_generate_designs_deterministic(self):
        a = generate_designs(40, seed=9)
        b = generate_designs(40, seed=9)
        for da, db in zip(a, b):
            np.testing.assert_array_equal(da.to_array(), db.to_array())


class TestDesignParams:
    def test_bounds_validated(self):
        with pytest.raises(ValueError, match="intervals"):
            DesignParams(300.0, 45.0, 200.0, 100.0, 100.0)

    def test_gap_validated(self):
        with pytest.raises(ValueError, match="gap"):
            DesignParams(310.0, 150.0, 200.0, 100.0, 100.0)

    def test_normalization_round_trip(self):
        rng = np.random.default_rng(4)
        u = rng.random((200, 5))
        back = normalize_designs(denormalize_designs(u))
        assert np.max(np.abs(back - u)) <= 1e-12


class TestSurrogate:
    def test_shape_and_range(self):
        designs = generate_designs(50, seed=1)
        spectra = surrogate_spectra(np.array([d.to_array() for d in designs]))
        assert spectra.shape == (50, 101)
        assert np.all(spectra >= 0.0) and np.all(spectra <= 1.0)

    def test_pure_function(self):
        d = generate_designs(1, seed=8)[0]
        np.testing.assert_array_equal(surrogate_spectrum(d), surrogate_spectrum(d))

    def test_sin_symmetry_of_second_center(self):
        u = np.array([0.3, 0.4, 0.2, 0.1, 0.6])
        mirrored = u.copy()
        mirrored[3] = 0.5 - u[3]
        c_a, _, _ = peak_parameters(u[None, :])
        c_b, _, _ = peak_parameters(mirrored[None, :])
        assert c_a[0, 1] == pytest.approx(c_b[0, 1], abs=1e-9)

    def test_spot_value_at_isolated_first_peak(self):
        """With the other resonances far away, A(center_1) is amplitude_1."""
        u = np.array([0.0, 0.1, 0.8, 0.0, 0.1])
        # direct evaluation of the stated construction
        center_1 = 430.0 + 240.0 * u[0]
        amplitude_1 = 0.55 + 0.45 * u[1]
        d = DesignParams.from_array(denormalize_designs(u))
        spectrum = surrogate_spectrum(d)
        i = int(round((center_1 - 400.0) / 3.0))
        assert abs(spectrum[i] - amplitude_1) <= 0.02

    def test_out_of_bounds_rejected(self):
        bad = PARAM_UPPER + 1.0
        with pytest.raises(ValueError, match="intervals"):
            surrogate_spectra(bad[None, :])

    def test_witness_pair_is_multi_valued(self):
        """Far-apart designs, nearly identical spectra."""
        a, b = witness_pair()
        ua, ub = a.normalized(), b.normalized()
        assert np.linalg.norm(ua - ub) >= 0.2
        sa, sb = surrogate_spectrum(a), surrogate_spectrum(b)
        rmse = math.sqrt(float(np.mean((sa - sb) ** 2)))
        assert rmse <= 0.01


class TestSplits:
    def test_counts_small(self):
        assert split_counts(10) == (8, 1, 1)

    def test_counts_full_scale(self):
        assert split_counts(3848) == (3078, 384, 386)

    def test_assign_splits_counts_and_determinism(self):
        tags = assign_splits(3848, seed=0)
        assert int(np.sum(tags == "train")) == 3078
        assert int(np.sum(tags == "val")) == 384
        assert int(np.sum(tags == "test")) == 386
        np.testing.assert_array_equal(tags, assign_splits(3848, seed=0))

    def test_too_few_records(self):
        with pytest.raises(ValueError, match="10"):
            assign_splits(9, seed=0)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        ds = build_dataset(generate_designs(100, seed=3), seed=3)
        path = tmp_path / "data.csv"
        save_dataset(path, ds, seed=3)
        loaded = load_dataset(path)
        np.testing.assert_array_equal(loaded.designs, ds.designs)
        np.testing.assert_array_equal(loaded.spectra, ds.spectra)
        np.testing.assert_array_equal(loaded.split_tags, ds.split_tags)

    def test_metadata_sidecar(self, tmp_path):
        ds = generate_dataset(20, seed=6)
        path = tmp_path / "data.csv"
        save_dataset(path, ds, seed=6)
        meta = load_metadata(path)
        assert meta["seed"] == 6
        assert meta["samples"] == 20
        assert meta["surrogate_version"] == dataset.SURROGATE_VERSION
        assert meta["split_counts"] == {"train": 16, "val": 2, "test": 2}

    def test_wrong_column_count_reports_line(self, tmp_path):
        ds = build_dataset(generate_designs(12, seed=1), seed=1)
        path = tmp_path / "data.csv"
        save_dataset(path, ds)
        lines = path.read_text().splitlines()
        lines[2] = ",".join(lines[2].split(",")[:-1])  # drop one spectrum column
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 3"):
            load_dataset(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        header = ",".join(["p", "w", "h1", "h2", "h3", "split"] + [f"a_{i:03d}" for i in range(100)])
        path.write_text(header + "\n")
        with pytest.raises(DatasetFormatError, match="line 1"):
            load_dataset(path)

    def test_bad_split_tag_reports_line(self, tmp_path):
        ds = build_dataset(generate_designs(12, seed=1), seed=1)
        path = tmp_path / "data.csv"
        save_dataset(path, ds)
        lines = path.read_text().splitlines()
        cells = lines[1].split(",")
        cells[5] = "holdout"
        lines[1] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_dataset(path)

    def test_constraint_revalidated_on_load(self, tmp_path):
        ds = build_dataset(generate_designs(12, seed=1), seed=1)
        path = tmp_path / "data.csv"
        save_dataset(path, ds)
        lines = path.read_text().splitlines()
        cells = lines[4].split(",")
        cells[0], cells[1] = "310.0", "150.0"  # gap 160 < 200
        lines[4] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 5"):
            load_dataset(path)

    def test_non_numeric_value_reports_line(self, tmp_path):
        ds = build_dataset(generate_designs(12, seed=1), seed=1)
        path = tmp_path / "data.csv"
        save_dataset(path, ds)
        lines = path.read_text().splitlines()
        cells = lines[3].split(",")
        cells[8] = "oops"
        lines[3] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 4"):
            load_dataset(path)


class TestLabeledDataset:
    def test_split_views_align(self):
        ds = generate_dataset(40, seed=2)
        for split in ("train", "val", "test"):
            idx = ds.indices(split)
            np.testing.assert_array_equal(ds.spectra_for(split), ds.spectra[idx])
            np.testing.assert_array_equal(ds.designs_for(split), ds.designs[idx])
            targets = ds.targets_for(split)
            assert np.all(targets >= 0.0) and np.all(targets <= 1.0)

    def test_unknown_split_rejected(self):
        ds = generate_dataset(20, seed=2)
        with pytest.raises(ValueError, match="split"):
            ds.indices("holdout")
