import dataclasses
import json
from collections import Counter

import numpy as np
import pytest

from onoff_nilm.exceptions import ConfigurationError, DataError, FormatError
from onoff_nilm.ingest import ApplianceTrace, HouseholdRecord, label_activity
from onoff_nilm.synth import (MixedDatasetSpec, WindowSample, analyze_profile, build_mixed_dataset,
                              build_re_group, build_se_group, compose_window, group_specs,
                              load_dataset, save_dataset, split, split_indices)

from conftest import constant_trace


def base(**kw):
    d = dict(group="RE", dit=2, ad_max=1, window_len=128, n_samples=40, seed=0)
    d.update(kw)
    return MixedDatasetSpec(**d)


class TestSpec:
    @pytest.mark.parametrize("kw", [
        dict(group="SE", dit=5, ad=5), dict(group="SE", dit=5, ad=0), dict(group="RE", dit=5, ad_max=5),
        dict(group="XX", dit=5, ad_max=2), dict(group="RE", dit=5, ad_max=2, window_len=0),
        dict(group="RE", dit=5, ad_max=2, train_fraction=1.0),
        dict(group="RE", dit=5, ad_max=2, device_pool=("a", "b")),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            MixedDatasetSpec(**kw)

    def test_dict_round_trip(self):
        s = MixedDatasetSpec("SE", 5, ad=2, device_pool=("a", "b", "c", "d", "e"))
        assert MixedDatasetSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s


class TestComposeWindow:
    def test_identity(self):
        w = np.arange(10, dtype=np.float32)
        s = compose_window({"a": w}, ["a", "b"], 0.0)
        np.testing.assert_array_equal(s.aggregate, w)
        assert list(s.labels) == [True, False]

    def test_additivity(self):
        s = compose_window({"a": np.full(6, 100.0), "b": np.full(6, 50.0)}, ["b", "a"])
        np.testing.assert_array_equal(s.aggregate, 150.0)
        assert s.active_ids == {"a", "b"}

    def test_noise_bounds(self):
        rng = np.random.default_rng(0)
        comps = {k: rng.uniform(0, 500, 300) for k in "abc"}
        s = compose_window(comps, list("abcd"), 10.0, seed=5)
        resid = s.aggregate.astype(np.float64) - np.sum(list(comps.values()), axis=0)
        assert resid.min() >= -1e-3 and resid.max() <= 10.0 + 1e-3

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            compose_window({"a": np.ones(5), "b": np.ones(6)}, ["a", "b"])

    def test_popcount_invariant(self):
        with pytest.raises(DataError):
            WindowSample(np.zeros(3), np.array([True, True]), frozenset({"a"}))


class TestGroups:
    def test_se_counts(self, household):
        specs = group_specs("SE", [5, 10], 9, base())
        assert len(specs) == 4 + 9
        assert len(group_specs("SE", [2], 9, base())) == 1
        assert len(group_specs("RE", [5, 10], 8, base())) == 2

    def test_se_popcount_law(self, household):
        groups = build_se_group(household, [5], 9, base())
        assert [ds.spec.ad for ds in groups] == [1, 2, 3, 4]
        for ds in groups:
            for y in (ds.y_train, ds.y_test):
                assert np.all(y.sum(axis=1) == ds.spec.ad)

    def test_re_balance_400(self, household):
        (ds,) = build_re_group(household, [5], 8, base(n_samples=400))
        counts = Counter(np.concatenate([ds.y_train, ds.y_test]).sum(axis=1).tolist())
        assert counts == {1: 100, 2: 100, 3: 100, 4: 100}

    def test_re_balance_401(self, household):
        (ds,) = build_re_group(household, [10], 8, base(n_samples=401))
        counts = Counter(np.concatenate([ds.y_train, ds.y_test]).sum(axis=1).tolist())
        assert set(counts) == set(range(1, 9))
        assert max(counts.values()) - min(counts.values()) <= 1

    def test_re_dit2(self, household):
        (ds,) = build_re_group(household, [2], 8, base())
        assert np.all(ds.y_train.sum(axis=1) == 1)

    def test_empty_pool(self):
        with pytest.raises(ConfigurationError):
            build_se_group([], [5], 9, base())

    def test_pool_too_small(self, household):
        with pytest.raises(ConfigurationError):
            build_re_group(household, [11], 8, base())

    def test_active_windows_have_on_samples(self, constant_household):
        # with constant traces the aggregate is the exact sum of the chosen powers
        spec = MixedDatasetSpec("SE", 4, ad=2, window_len=50, n_samples=20, seed=4)
        ds = build_mixed_dataset(spec, constant_household)
        power = {f"d{i}": 100.0 * (i + 1) for i in range(4)}
        for x, y in zip(ds.X_train, ds.y_train):
            expected = sum(power[d] for d, on in zip(ds.device_order, y) if on)
            np.testing.assert_array_equal(x, expected)

    def test_noise_only_adds(self, constant_household):
        spec = MixedDatasetSpec("RE", 4, ad_max=3, window_len=50, n_samples=30, seed=2,
                                noise_amplitude=10.0)
        ds = build_mixed_dataset(spec, constant_household)
        power = np.array([100.0 * (int(d[1:]) + 1) for d in ds.device_order])
        resid = ds.X_train - (ds.y_train @ power)[:, None]
        assert resid.min() >= -1e-3 and resid.max() <= 10.0 + 1e-3

    def test_determinism(self, household):
        spec = base(group="RE", dit=5, ad_max=3, noise_amplitude=10.0)
        a, b = build_mixed_dataset(spec, household), build_mixed_dataset(spec, household)
        assert a.X_train.tobytes() == b.X_train.tobytes()
        assert a.y_test.tobytes() == b.y_test.tobytes()
        assert a.device_order == b.device_order

    def test_seed_changes_data(self, household):
        s1 = base(group="SE", dit=5, ad=1, ad_max=None)
        s2 = dataclasses.replace(s1, seed=11)
        assert build_mixed_dataset(s1, household).X_train.tobytes() != \
            build_mixed_dataset(s2, household).X_train.tobytes()

    def test_split_fraction(self, small_re):
        n = len(small_re.X_train) + len(small_re.X_test)
        assert abs(len(small_re.X_train) - 0.8 * n) <= 1
        assert set(small_re.device_order) <= set(small_re.spec.device_pool)

    def test_inactive_devices_are_zero(self, constant_household):
        spec = MixedDatasetSpec("SE", 4, ad=1, window_len=50, n_samples=12, seed=2)
        ds = build_mixed_dataset(spec, constant_household)
        assert set(np.unique(ds.X_train)) <= {100.0, 200.0, 300.0, 400.0}


class TestSplit:
    def test_ten_samples(self):
        tr, te = split_indices([1] * 10, 0.8, 0)
        assert (len(tr), len(te)) == (8, 2)

    def test_stratified(self):
        strata = np.repeat([1, 2, 3, 4], 100)
        tr, te = split_indices(strata, 0.8, 3)
        for k in range(1, 5):
            assert abs(np.count_nonzero(strata[tr] == k) - 80) <= 1
        assert len(np.intersect1d(tr, te)) == 0
        assert len(tr) + len(te) == 400

    def test_uneven_strata(self):
        strata = np.array([1] * 7 + [2] * 13 + [3] * 3)
        tr, _ = split_indices(strata, 0.8, 0)
        assert len(tr) == round(0.8 * 23)
        for k, n in ((1, 7), (2, 13), (3, 3)):
            assert abs(np.count_nonzero(strata[tr] == k) - 0.8 * n) <= 1

    def test_deterministic(self):
        strata = np.repeat([1, 2], 50)
        a, b = split_indices(strata, 0.8, 9), split_indices(strata, 0.8, 9)
        np.testing.assert_array_equal(a[0], b[0])

    def test_too_few(self):
        with pytest.raises(DataError):
            split_indices([1], 0.8, 0)

    def test_sample_split(self, small_re):
        samples = small_re.train
        tr, te = split(samples, 0.75, 0)
        assert len(tr) + len(te) == len(samples)


class TestProfile:
    def test_two_always_on(self):
        rec = HouseholdRecord("h", [constant_trace("a", 100, 500), constant_trace("b", 300, 500),
                                    constant_trace("c", 0.0, 500)])
        prof = analyze_profile(rec, 50)
        assert prof.histogram == {2: 1.0}
        assert prof.n_max_ad == 2

    def test_crafted_schedule(self):
        # windows of 20 samples; activity counts per window = 1, 1, 2, 3
        n, w = 80, 20
        a = np.zeros(n); a[0:10] = a[20:30] = a[40:50] = a[60:70] = 200
        b = np.zeros(n); b[45:55] = b[62:72] = 200
        c = np.zeros(n); c[70:80] = 200
        rec = HouseholdRecord("h", [ApplianceTrace(k, k, 8.0, 0.0, v.astype(np.float32))
                                    for k, v in zip("abc", (a, b, c))])
        prof = analyze_profile(rec, w)
        assert prof.histogram == {1: 0.5, 2: 0.25, 3: 0.25}
        assert prof.n_max_ad == 3

    def test_avg_max_override(self, household):
        prof = analyze_profile(household, 255, n_avg_max_ad=2)
        assert prof.n_avg_max_ad == 2
        assert abs(sum(prof.histogram.values()) - 1) < 1e-9

    def test_all_gap(self):
        t = ApplianceTrace("a", "a", 8.0, 0.0, np.full(100, 50, np.float32), gaps=((0.0, 1e6),))
        with pytest.raises(DataError):
            analyze_profile(HouseholdRecord("h", [t]), 10)


class TestStorage:
    def test_round_trip(self, tmp_path, small_re):
        save_dataset(small_re, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        for name in ("X_train", "y_train", "X_test", "y_test"):
            assert getattr(back, name).tobytes() == getattr(small_re, name).tobytes()
        assert back.device_order == small_re.device_order
        assert back.spec == small_re.spec

    def test_files_byte_identical_on_regeneration(self, tmp_path, household, small_re):
        again = build_mixed_dataset(small_re.spec, household)
        save_dataset(small_re, tmp_path / "a")
        save_dataset(again, tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_truncated(self, tmp_path, small_re):
        save_dataset(small_re, tmp_path / "ds")
        f = tmp_path / "ds" / "train_aggregate.f32"
        f.write_bytes(f.read_bytes()[:-4])
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "ds")

    def test_permuted_device_order(self, tmp_path, small_re):
        save_dataset(small_re, tmp_path / "ds")
        m = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        m["device_order"] = m["device_order"][::-1]
        (tmp_path / "ds" / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(FormatError, match="checksum"):
            load_dataset(tmp_path / "ds")

    def test_not_a_dataset(self, tmp_path):
        with pytest.raises(FormatError):
            load_dataset(tmp_path)

    def test_labels_follow_device_order(self, small_re):
        for s, y in zip(small_re.train, small_re.y_train):
            assert s.active_ids == {d for d, on in zip(small_re.device_order, y) if on}
