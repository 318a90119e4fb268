import json
import math

import numpy as np
import pytest

from soilspec.data import (
    DataError,
    SpectralLibrary,
    SplitAssignment,
    audit_max_deviation,
    fit_target_scaler,
    load_library,
    quantile_audit,
    save_library,
    split_sizes,
    standardize_spectrum,
    stratified_split,
)
from soilspec.synthetic import mixture_library


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


# --- loading ---------------------------------------------------------------


def test_load_full_half_nm_grid(tmp_path):
    wl = [f"{400 + 0.5 * i:.1f}" for i in range(4200)]
    rows = [[0.1] * 4200 + [12.0, 1.5], [0.2] * 4200 + [8.0, 0.9]]
    write_csv(tmp_path / "lib.csv", wl + ["OC", "N"], rows)
    lib = load_library(tmp_path / "lib.csv")
    assert lib.n_bands == 4200
    assert lib.wavelengths[0] == 400.0 and lib.wavelengths[-1] == 2499.5
    assert lib.variable_names == ("OC", "N")


def test_load_drops_rows_with_missing_target(tmp_path):
    write_csv(tmp_path / "lib.csv", ["400", "401", "OC"],
              [[0.1, 0.2, 3.0], [0.1, 0.3, ""], [0.2, 0.2, 5.0]])
    lib = load_library(tmp_path / "lib.csv")
    assert lib.n_samples == 2
    assert lib.dropped_count == 1
    np.testing.assert_array_equal(lib.targets[:, 0], [3.0, 5.0])


def test_load_drops_rows_with_missing_band(tmp_path):
    write_csv(tmp_path / "lib.csv", ["400", "401", "OC"], [[0.1, "", 3.0], [0.2, 0.2, 5.0]])
    assert load_library(tmp_path / "lib.csv").dropped_count == 1


def test_load_empty_file(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(DataError, match="zero usable rows"):
        load_library(tmp_path / "empty.csv")


def test_load_header_only(tmp_path):
    (tmp_path / "h.csv").write_text("400,401,OC\n")
    with pytest.raises(DataError, match="zero usable rows"):
        load_library(tmp_path / "h.csv")


def test_load_non_monotone_wavelengths(tmp_path):
    write_csv(tmp_path / "lib.csv", ["401", "400", "OC"], [[0.1, 0.2, 3.0]])
    with pytest.raises(DataError, match="increasing"):
        load_library(tmp_path / "lib.csv")


def test_load_malformed_csv(tmp_path):
    (tmp_path / "bad.csv").write_text("400,401,OC\n0.1,0.2,3.0\n0.1,0.2,3.0,9,9\n")
    with pytest.raises(DataError):
        load_library(tmp_path / "bad.csv")


def test_load_coords_and_target_selection(tmp_path):
    write_csv(tmp_path / "lib.csv", ["400", "401", "OC", "N", "lat", "lon"],
              [[0.1, 0.2, 3.0, 1.0, 45.0, 7.0], [0.2, 0.2, 5.0, 2.0, 46.0, 8.0]])
    lib = load_library(tmp_path / "lib.csv", targets=["N"])
    assert lib.variable_names == ("N",)
    np.testing.assert_array_equal(lib.coords, [[45.0, 7.0], [46.0, 8.0]])


def test_save_load_roundtrip(tmp_path, small_library):
    save_library(small_library, tmp_path / "lib.csv")
    back = load_library(tmp_path / "lib.csv")
    np.testing.assert_allclose(back.spectra, small_library.spectra, rtol=1e-9)
    np.testing.assert_allclose(back.targets, small_library.targets, rtol=1e-9)
    np.testing.assert_allclose(back.coords, small_library.coords, rtol=1e-9)


def test_library_invariants():
    with pytest.raises(DataError):
        SpectralLibrary(np.array([1.0, 1.0]), np.zeros((1, 2)), np.zeros((1, 1)), ("a",))
    with pytest.raises(DataError):
        SpectralLibrary(np.array([1.0, 2.0]), np.array([[0.0, np.nan]]), np.zeros((1, 1)), ("a",))
    with pytest.raises(DataError):
        SpectralLibrary(np.array([1.0, 2.0]), np.zeros((1, 2)), np.zeros((1, 2)), ("a",))


# --- splitting -------------------------------------------------------------


def test_split_degenerate_fractions(small_library):
    split = stratified_split(small_library, (1.0, 0.0, 0.0), seed=3)
    np.testing.assert_array_equal(split.indices_train, np.arange(small_library.n_samples))
    assert len(split.indices_val) == 0 and len(split.indices_test) == 0


def test_split_sizes_reference_counts():
    assert split_sizes(17939, (0.777, 0.1115, 0.1115)) == (13939, 2000, 2000)


def test_split_17939_sample_library():
    lib = mixture_library(n_samples=17939, n_bands=8, n_vars=12, seed=5)
    split = stratified_split(lib, (0.777, 0.1115, 0.1115), seed=0)
    assert tuple(len(i) for i in split) == (13939, 2000, 2000)


@pytest.mark.parametrize("method", ["joint", "pivot"])
def test_split_is_partition_and_deterministic(small_library, method):
    a = stratified_split(small_library, (0.8, 0.1, 0.1), seed=11, method=method)
    b = stratified_split(small_library, (0.8, 0.1, 0.1), seed=11, method=method)
    allidx = np.sort(np.concatenate(list(a)))
    np.testing.assert_array_equal(allidx, np.arange(small_library.n_samples))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert tuple(len(i) for i in a) == (160, 20, 20)


def test_split_seed_changes_assignment(small_library):
    a = stratified_split(small_library, seed=1)
    b = stratified_split(small_library, seed=2)
    assert not np.array_equal(a.indices_test, b.indices_test)


def test_split_too_few_samples():
    with pytest.raises(DataError):
        stratified_split(np.arange(5.0)[:, None], n_strat_bins=10)


def test_split_bad_fractions(small_library):
    with pytest.raises(DataError):
        stratified_split(small_library, (0.5, 0.2, 0.2))


def test_split_json_roundtrip(tmp_path, small_library):
    split = stratified_split(small_library, seed=4)
    split.to_json(tmp_path / "s.json")
    payload = json.loads((tmp_path / "s.json").read_text())
    assert {"seed", "train", "val", "test"} <= set(payload)
    back = SplitAssignment.from_json(tmp_path / "s.json")
    for x, y in zip(split, back):
        np.testing.assert_array_equal(x, y)
    assert back.seed == 4


def test_split_10k_stratification():
    lib = mixture_library(n_samples=10_000, n_bands=8, n_vars=12, seed=0)
    split = stratified_split(lib, (0.8, 0.1, 0.1), seed=0, n_strat_bins=10)
    assert tuple(len(i) for i in split) == (8000, 1000, 1000)
    assert audit_max_deviation(quantile_audit(lib, split)) <= 2.0


# --- audit -----------------------------------------------------------------


def test_audit_uniform_toy():
    targets = np.arange(100.0)[:, None]
    # every tenth sample to val/test, evenly spread over the bins
    val = np.arange(0, 100, 10)
    test = np.arange(5, 100, 10)
    train = np.setdiff1d(np.arange(100), np.concatenate([val, test]))
    split = SplitAssignment(train, val, test, (0.8, 0.1, 0.1), 0, 10)
    table = quantile_audit(targets, split, 10)
    for part in ("full", "train", "val", "test"):
        np.testing.assert_allclose(table[part][0], 10.0)


def test_audit_train_only_equals_full(small_library):
    split = stratified_split(small_library, (1.0, 0.0, 0.0))
    table = quantile_audit(small_library, split)
    assert set(table) == {"full", "train"}
    for a, b in zip(table["train"], table["full"]):
        np.testing.assert_array_equal(a, b)


def test_audit_rows_sum_to_100(small_library):
    table = quantile_audit(small_library, stratified_split(small_library))
    for rows in table.values():
        for row in rows:
            assert abs(row.sum() - 100.0) < 0.1


def test_audit_full_is_bin_mass():
    values = np.array([0, 0, 0, 1, 2, 3, 4, 5, 6, 7], dtype=float)[:, None]
    table = quantile_audit(values, None, 2)
    # median 2.5: lower half holds 5 of 10 values
    np.testing.assert_allclose(table["full"][0], [50.0, 50.0])


# --- standardization -------------------------------------------------------


def test_standardize_examples():
    np.testing.assert_allclose(standardize_spectrum(np.array([2.0, 4.0])), [-1.0, 1.0], atol=1e-12)
    s = math.sqrt(1.5)
    np.testing.assert_allclose(standardize_spectrum(np.array([1.0, 2.0, 3.0])), [-s, 0.0, s], atol=1e-12)


def test_standardize_degenerate():
    with pytest.raises(DataError, match="degenerate spectrum"):
        standardize_spectrum(np.array([5.0, 5.0, 5.0]))


def test_standardize_moments_and_idempotence(rng):
    x = rng.normal(3.0, 2.0, size=(20, 64))
    z = standardize_spectrum(x)
    np.testing.assert_allclose(z.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(standardize_spectrum(z), z, atol=1e-9)


def test_scaler_examples():
    sc = fit_target_scaler(np.array([[0.0], [2.0]]))
    assert sc.mean[0] == 1.0 and sc.std[0] == 1.0
    np.testing.assert_array_equal(sc.apply(np.array([[0.0], [2.0]]))[:, 0], [-1.0, 1.0])


def test_scaler_zero_variance():
    with pytest.raises(DataError):
        fit_target_scaler(np.array([[1.0, 3.0], [2.0, 3.0], [4.0, 3.0]]))


def test_scaler_needs_two_rows():
    with pytest.raises(DataError):
        fit_target_scaler(np.array([[1.0, 2.0]]))


def test_scaler_roundtrip(rng):
    x = rng.normal(size=(100, 12)) * rng.uniform(0.1, 100, 12) + rng.uniform(-50, 50, 12)
    sc = fit_target_scaler(x)
    back = sc.invert(sc.apply(x))
    np.testing.assert_allclose(back, x, rtol=1e-12, atol=1e-12 * np.abs(x).max())
