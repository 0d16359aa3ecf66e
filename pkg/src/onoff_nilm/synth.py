"""Mixed-dataset synthesis: SE and RE groups, active-device profiles, splits, storage.

A mixed dataset sums independently positioned windows of the selected active
devices (inactive devices contribute exactly 0 W) and adds uniform noise.
All randomness for sample ``i`` derives from ``(seed, dit, ad, group, i)`` so
generation is independent of execution order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DataError, FormatError
from .ingest import ActivityRule, HouseholdRecord, label_activity

DEFAULT_WINDOW = 2550
POWER_SCALE = 1000.0
FORMAT_TAG = "onoff-nilm-dataset/1"
_GROUP_CODE = {"SE": 1, "RE": 2}


@dataclass(frozen=True)
class DatasetProfile:
    histogram: dict[int, float]
    n_max_ad: int
    n_avg_max_ad: int
    n_windows: int = 0

    def __post_init__(self):
        if self.histogram and abs(sum(self.histogram.values()) - 1.0) > 1e-9:
            raise DataError("profile histogram does not sum to 1")
        if self.n_avg_max_ad > self.n_max_ad:
            raise DataError("average maximum exceeds maximum")


@dataclass(frozen=True)
class MixedDatasetSpec:
    group: str = "RE"
    dit: int = 5
    ad: int | None = None
    ad_max: int | None = None
    window_len: int = DEFAULT_WINDOW
    n_samples: int = 1000
    seed: int = 0
    device_pool: tuple[str, ...] = ()
    train_fraction: float = 0.8
    noise_amplitude: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "device_pool", tuple(self.device_pool))
        if self.group not in _GROUP_CODE:
            raise ConfigurationError(f"group must be SE or RE, got {self.group!r}")
        if self.window_len < 1:
            raise ConfigurationError("window_len must be >= 1")
        if self.n_samples < 2:
            raise ConfigurationError("n_samples must be >= 2")
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if self.noise_amplitude < 0:
            raise ConfigurationError("noise_amplitude must be >= 0")
        if self.device_pool and self.dit > len(self.device_pool):
            raise ConfigurationError(f"dit={self.dit} exceeds pool size {len(self.device_pool)}")
        if self.group == "SE":
            if self.ad is None or not 1 <= self.ad <= self.dit - 1:
                raise ConfigurationError(f"SE needs 1 <= ad <= dit-1 (dit={self.dit}, ad={self.ad})")
        else:
            if self.ad_max is None or not 1 <= self.ad_max <= self.dit - 1:
                raise ConfigurationError(
                    f"RE needs 1 <= ad_max <= dit-1 (dit={self.dit}, ad_max={self.ad_max})")

    @property
    def ad_levels(self):
        if self.group == "SE":
            return [self.ad]
        return list(range(1, self.ad_max + 1))

    @property
    def cell(self):
        """Directory-friendly cell name, e.g. ``se_dit5_ad2`` or ``re_dit10``."""
        if self.group == "SE":
            return f"se_dit{self.dit}_ad{self.ad}"
        return f"re_dit{self.dit}"

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["device_pool"] = list(self.device_pool)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "device_pool": tuple(d.get("device_pool", ()))})


@dataclass(eq=False)
class WindowSample:
    aggregate: np.ndarray
    labels: np.ndarray
    active_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if int(np.count_nonzero(self.labels)) != len(self.active_ids):
            raise DataError("label popcount does not match active device set")


@dataclass(eq=False)
class MixedDataset:
    """Materialised dataset; label column ``j`` always refers to ``device_order[j]``."""

    spec: MixedDatasetSpec
    device_order: list[str]
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    power_scale: float = POWER_SCALE

    @property
    def dit(self):
        return len(self.device_order)

    @property
    def window_len(self):
        return self.X_train.shape[1]

    def _samples(self, X, y):
        order = np.asarray(self.device_order)
        return [WindowSample(x, lab.astype(bool), frozenset(order[lab.astype(bool)]))
                for x, lab in zip(X, y)]

    @property
    def train(self):
        return self._samples(self.X_train, self.y_train)

    @property
    def test(self):
        return self._samples(self.X_test, self.y_test)


class _Pool:
    """Per-device arrays plus the window starts that see at least one ON sample."""

    def __init__(self, traces, window_len, rule):
        self.window_len = window_len
        self.values = {}
        self.starts = {}
        for tr in traces:
            if len(tr) < window_len:
                continue
            on = label_activity(tr, rule)
            bad = tr.gap_mask()
            c_on = np.concatenate(([0], np.cumsum(on)))
            c_bad = np.concatenate(([0], np.cumsum(bad)))
            n_on = c_on[window_len:] - c_on[:-window_len]
            n_bad = c_bad[window_len:] - c_bad[:-window_len]
            starts = np.flatnonzero((n_on > 0) & (n_bad == 0))
            if len(starts):
                self.values[tr.device_id] = tr.values
                self.starts[tr.device_id] = starts
        if not self.values:
            raise ConfigurationError("device pool is empty (no trace has a usable ON window)")

    @property
    def ids(self):
        return list(self.values)

    def window(self, device_id, rng):
        s = int(rng.choice(self.starts[device_id]))
        return self.values[device_id][s:s + self.window_len]


def _as_traces(pool):
    if isinstance(pool, HouseholdRecord):
        return list(pool.appliances)
    traces = []
    for item in pool:
        if isinstance(item, HouseholdRecord):
            traces.extend(item.appliances)
        else:
            traces.append(item)
    return traces


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def compose_window(active, device_order, noise_amplitude=0.0, seed=0):
    """Sum the active device windows and add uniform noise in ``[0, noise_amplitude]``.

    ``active`` maps device id to its window; every id must appear in ``device_order``.
    """
    windows = list(active.values())
    if not windows:
        raise DataError("compose_window needs at least one active window")
    n = len(windows[0])
    if any(len(w) != n for w in windows):
        raise DataError("active windows differ in length")
    total = np.sum([np.asarray(w, dtype=np.float64) for w in windows], axis=0)
    if noise_amplitude > 0:
        total = total + _rng(seed).uniform(0.0, noise_amplitude, size=n)
    labels = np.isin(np.asarray(device_order), list(active))
    return WindowSample(np.clip(total, 0.0, None).astype(np.float32), labels,
                        frozenset(active))


def _ad_schedule(spec, rng):
    levels = spec.ad_levels
    base, extra = divmod(spec.n_samples, len(levels))
    counts = np.full(len(levels), base)
    counts[:extra] += 1
    return rng.permutation(np.repeat(levels, counts))


def build_mixed_dataset(spec, pool, rule=ActivityRule()):
    """Materialise one mixed dataset from ``pool`` (traces or household records)."""
    traces = _as_traces(pool)
    p = _Pool(traces, spec.window_len, rule)
    ids = list(spec.device_pool) if spec.device_pool else p.ids
    missing = [i for i in ids if i not in p.values]
    if missing:
        raise ConfigurationError(f"devices without usable ON windows: {missing}")
    if spec.dit > len(ids):
        raise ConfigurationError(f"dit={spec.dit} exceeds pool size {len(ids)}")
    if not spec.device_pool:
        spec = dataclasses.replace(spec, device_pool=tuple(ids))
    code = _GROUP_CODE[spec.group]
    level = spec.ad if spec.group == "SE" else spec.ad_max
    ds_rng = np.random.default_rng([spec.seed, spec.dit])
    device_order = [ids[i] for i in ds_rng.choice(len(ids), size=spec.dit, replace=False)]
    schedule = _ad_schedule(spec, np.random.default_rng([spec.seed, spec.dit, level, code]))

    X = np.empty((spec.n_samples, spec.window_len), dtype=np.float32)
    y = np.zeros((spec.n_samples, spec.dit), dtype=np.uint8)
    for i, k in enumerate(schedule):
        rng = np.random.default_rng([spec.seed, spec.dit, level, code, i])
        chosen = rng.choice(spec.dit, size=int(k), replace=False)
        active = {device_order[j]: p.window(device_order[j], rng) for j in sorted(chosen)}
        sample = compose_window(active, device_order, spec.noise_amplitude, rng)
        X[i] = sample.aggregate
        y[i] = sample.labels
    tr, te = split_indices(schedule, spec.train_fraction, spec.seed)
    return MixedDataset(spec, device_order, X[tr], y[tr], X[te], y[te])


def split_indices(strata, train_fraction, seed):
    """Deterministic stratified split; returns sorted train and test index arrays.

    Uses largest-remainder allocation so every stratum is within one sample of
    its proportional share and the overall train size is ``round(f * n)``.
    """
    strata = np.asarray(strata)
    n = len(strata)
    if n < 2:
        raise DataError("need at least 2 samples to split")
    if not 0 < train_fraction < 1:
        raise ConfigurationError("train_fraction must lie in (0, 1)")
    keys = np.unique(strata)
    sizes = np.array([np.count_nonzero(strata == k) for k in keys])
    exact = train_fraction * sizes
    take = np.floor(exact).astype(int)
    target = min(max(int(round(train_fraction * n)), 1), n - 1)
    order = np.argsort(-(exact - take), kind="stable")
    j = 0
    while take.sum() < target:
        s = order[j % len(order)]
        if take[s] < sizes[s]:
            take[s] += 1
        j += 1
    while take.sum() > target:
        s = order[::-1][j % len(order)]
        if take[s] > 0:
            take[s] -= 1
        j += 1
    rng = np.random.default_rng([seed, 7])
    train = []
    for k, t in zip(keys, take):
        idx = rng.permutation(np.flatnonzero(strata == k))
        train.extend(idx[:t])
    train = np.sort(np.asarray(train, dtype=int))
    test = np.setdiff1d(np.arange(n), train)
    return train, test


def split(samples, train_fraction=0.8, seed=0):
    """Split a list of :class:`WindowSample` stratified by active-device count."""
    strata = [len(s.active_ids) for s in samples]
    tr, te = split_indices(strata, train_fraction, seed)
    return [samples[i] for i in tr], [samples[i] for i in te]


def build_se_group(pool, dit_list, n_max_ad, base_spec, rule=ActivityRule()):
    """One dataset per (dit, ad) with ``ad`` in ``1 .. min(n_max_ad, dit-1)``."""
    traces = _as_traces(pool)
    if not traces:
        raise ConfigurationError("empty device pool")
    size = len(base_spec.device_pool) if base_spec.device_pool else len(traces)
    if max(dit_list) > size:
        raise ConfigurationError(f"max dit {max(dit_list)} exceeds pool size {size}")
    out = []
    for dit in dit_list:
        for ad in range(1, min(n_max_ad, dit - 1) + 1):
            spec = dataclasses.replace(base_spec, group="SE", dit=dit, ad=ad, ad_max=None)
            out.append(build_mixed_dataset(spec, traces, rule))
    return out


def build_re_group(pool, dit_list, n_avg_max_ad, base_spec, rule=ActivityRule()):
    """One dataset per dit with an equal mix of AD in ``1 .. min(n_avg_max_ad, dit-1)``."""
    traces = _as_traces(pool)
    if not traces:
        raise ConfigurationError("empty device pool")
    size = len(base_spec.device_pool) if base_spec.device_pool else len(traces)
    if max(dit_list) > size:
        raise ConfigurationError(f"max dit {max(dit_list)} exceeds pool size {size}")
    out = []
    for dit in dit_list:
        spec = dataclasses.replace(base_spec, group="RE", dit=dit, ad=None,
                                   ad_max=min(n_avg_max_ad, dit - 1))
        out.append(build_mixed_dataset(spec, traces, rule))
    return out


def group_specs(group, dit_list, ad_limit, base_spec):
    """The specs :func:`build_se_group` / :func:`build_re_group` would build, without data."""
    if group == "SE":
        return [dataclasses.replace(base_spec, group="SE", dit=d, ad=a, ad_max=None)
                for d in dit_list for a in range(1, min(ad_limit, d - 1) + 1)]
    return [dataclasses.replace(base_spec, group="RE", dit=d, ad=None, ad_max=min(ad_limit, d - 1))
            for d in dit_list]


def analyze_profile(households, window_len, rule=ActivityRule(), n_avg_max_ad=None,
                    segment_seconds=86400.0):
    """Distribution of the number of active devices per non-overlapping window.

    A device is active in a window when any of its labelled-ON samples falls in it;
    windows touching a gap are skipped. The average maximum is the mean of the
    per-household maxima, or of per-day maxima when only one household is given,
    rounded to the nearest integer. ``n_avg_max_ad`` pins it to a known value.
    """
    if isinstance(households, HouseholdRecord):
        households = [households]
    counts_all = []
    per_unit_max = []
    for hh in households:
        if not hh.appliances:
            raise DataError(f"household {hh.house_id!r} has no appliances")
        n = min(len(a) for a in hh.appliances)
        if window_len > n:
            raise DataError(f"window_len {window_len} exceeds trace length {n}")
        n_win = n // window_len
        active = np.zeros(n_win, dtype=int)
        bad = np.zeros(n_win, dtype=bool)
        for a in hh.appliances:
            on = label_activity(a, rule)[: n_win * window_len].reshape(n_win, window_len)
            active += on.any(axis=1)
            bad |= a.gap_mask()[: n_win * window_len].reshape(n_win, window_len).any(axis=1)
        good = ~bad
        counts = active[good]
        counts_all.append(counts)
        if len(households) > 1:
            if len(counts):
                per_unit_max.append(counts.max())
        else:
            period = hh.appliances[0].sample_period
            per_seg = max(1, int(round(segment_seconds / (period * window_len))))
            seg_id = np.arange(n_win)[good] // per_seg
            per_unit_max.extend(counts[seg_id == s].max() for s in np.unique(seg_id))
    counts = np.concatenate(counts_all) if counts_all else np.array([], dtype=int)
    if len(counts) == 0:
        raise DataError("every window intersects a gap")
    values, freq = np.unique(counts, return_counts=True)
    hist = {int(v): float(f) / len(counts) for v, f in zip(values, freq)}
    n_max = int(counts.max())
    avg_max = int(n_avg_max_ad) if n_avg_max_ad is not None else \
        int(math.floor(np.mean(per_unit_max) + 0.5))
    return DatasetProfile(hist, n_max, min(avg_max, n_max), len(counts))


# --- storage -----------------------------------------------------------------

def _labels_digest(device_order, data):
    h = hashlib.sha256(json.dumps(list(device_order)).encode())
    h.update(data)
    return h.hexdigest()


def _arrays(ds):
    return {
        "train_aggregate": (ds.X_train.astype("<f4"), "<f4"),
        "train_labels": (ds.y_train.astype(np.uint8), "u1"),
        "test_aggregate": (ds.X_test.astype("<f4"), "<f4"),
        "test_labels": (ds.y_test.astype(np.uint8), "u1"),
    }


def _suffix(dtype):
    return ".f32" if dtype == "<f4" else ".u8"


def dataset_manifest(ds):
    entries = {}
    for name, (arr, dtype) in _arrays(ds).items():
        data = np.ascontiguousarray(arr).tobytes()
        digest = (_labels_digest(ds.device_order, data) if name.endswith("labels")
                  else hashlib.sha256(data).hexdigest())
        entries[name] = {"file": name + _suffix(dtype), "dtype": dtype,
                         "shape": list(arr.shape), "sha256": digest}
    return {
        "format": FORMAT_TAG,
        "spec": ds.spec.to_dict(),
        "device_order": list(ds.device_order),
        "power_scale": ds.power_scale,
        "arrays": entries,
    }


def save_dataset(ds, path):
    """Write manifest.json plus raw little-endian arrays; returns the manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = dataset_manifest(ds)
    for name, (arr, _) in _arrays(ds).items():
        (path / manifest["arrays"][name]["file"]).write_bytes(np.ascontiguousarray(arr).tobytes())
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path):
    try:
        manifest = json.loads((Path(path) / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable dataset manifest ({exc})") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise FormatError(f"{path}: not a {FORMAT_TAG} directory")
    return manifest


def load_dataset(path):
    path = Path(path)
    manifest = read_manifest(path)
    order = manifest["device_order"]
    out = {}
    for name, meta in manifest["arrays"].items():
        f = path / meta["file"]
        try:
            data = f.read_bytes()
        except OSError as exc:
            raise FormatError(f"{f}: {exc}") from exc
        dtype = np.dtype(meta["dtype"])
        expected = int(np.prod(meta["shape"])) * dtype.itemsize
        if len(data) != expected:
            raise FormatError(f"{f}: {len(data)} bytes, manifest expects {expected}")
        digest = (_labels_digest(order, data) if name.endswith("labels")
                  else hashlib.sha256(data).hexdigest())
        if digest != meta["sha256"]:
            raise FormatError(f"{f}: checksum mismatch (array or device_order altered)")
        out[name] = np.frombuffer(data, dtype=dtype).reshape(meta["shape"]).copy()
    spec = MixedDatasetSpec.from_dict(manifest["spec"])
    if out["train_labels"].shape[1] != len(order) or out["train_aggregate"].shape[1] != spec.window_len:
        raise FormatError(f"{path}: array shapes disagree with spec")
    return MixedDataset(spec, list(order), out["train_aggregate"].astype(np.float32),
                        out["train_labels"], out["test_aggregate"].astype(np.float32),
                        out["test_labels"], float(manifest.get("power_scale", POWER_SCALE)))
