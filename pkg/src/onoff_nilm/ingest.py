"""Appliance trace loading, resampling, activity labelling and synthetic households.

Traces keep the native sample period of their source (REFIT ~8 s, UK-DALE ~6 s).
Outages longer than twice the median sample period are recorded as gaps and are
never interpolated over.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, DataError, FormatError

log = logging.getLogger(__name__)

GAP_FACTOR = 2.0
REFIT_APPLIANCE_COLUMNS = tuple(f"Appliance{i}" for i in range(1, 10))
REFIT_PERIOD = 8.0


@dataclass(eq=False)
class ApplianceTrace:
    """One power series in watts.

    ``timestamps`` is ``None`` for a uniform grid (``start_time + i * sample_period``),
    otherwise it holds the raw unix seconds of each reading. ``gaps`` lists
    ``(t_start, t_end)`` intervals with no valid data.
    """

    device_id: str
    appliance_name: str
    sample_period: float
    start_time: float
    values: np.ndarray
    timestamps: np.ndarray | None = None
    gaps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 1 or len(self.values) < 1:
            raise DataError(f"trace {self.device_id!r} is empty")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise DataError(f"trace {self.device_id!r} has negative or non-finite values")
        if not self.sample_period > 0:
            raise DataError(f"trace {self.device_id!r} has non-positive sample period")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
            if self.timestamps.shape != self.values.shape:
                raise DataError(f"trace {self.device_id!r}: timestamps/values length mismatch")
        self.gaps = tuple((float(a), float(b)) for a, b in self.gaps)

    def __len__(self):
        return len(self.values)

    @property
    def is_uniform(self):
        return self.timestamps is None

    @property
    def times(self):
        if self.timestamps is not None:
            return self.timestamps
        return self.start_time + self.sample_period * np.arange(len(self.values))

    @property
    def end_time(self):
        """End of the last reading's holding interval."""
        return float(self.times[-1]) + self.sample_period

    def gap_mask(self):
        """Boolean mask of samples whose holding interval touches a recorded gap."""
        mask = np.zeros(len(self), dtype=bool)
        if not self.gaps:
            return mask
        t = self.times
        for a, b in self.gaps:
            mask |= (t + self.sample_period > a) & (t < b)
        return mask


@dataclass(eq=False)
class HouseholdRecord:
    house_id: str
    appliances: list[ApplianceTrace]
    aggregate: ApplianceTrace | None = None

    def __post_init__(self):
        ids = [a.device_id for a in self.appliances]
        if len(set(ids)) != len(ids):
            raise DataError(f"household {self.house_id!r} has duplicate device ids")

    def device_ids(self):
        return [a.device_id for a in self.appliances]

    def __getitem__(self, device_id):
        for a in self.appliances:
            if a.device_id == device_id:
                return a
        raise KeyError(device_id)

    def aligned(self, target_period=None):
        """Resample every member onto one common uniform grid.

        The grid starts at the latest member start and spans the shortest common
        length, so all returned traces have identical ``start_time`` and length.
        """
        traces = list(self.appliances)
        if self.aggregate is not None:
            traces.append(self.aggregate)
        if target_period is None:
            target_period = float(np.median([t.sample_period for t in traces]))
        start = max(t.times[0] for t in traces)
        end = min(t.end_time for t in traces)
        n = int(math.floor((end - start) / target_period + 1e-9))
        if n < 1:
            raise DataError(f"household {self.house_id!r}: member traces do not overlap")
        out = [resample(t, target_period, start_time=start, n_samples=n) for t in traces]
        agg = out.pop() if self.aggregate is not None else None
        return HouseholdRecord(self.house_id, out, agg)


@dataclass(frozen=True)
class ActivityRule:
    on_threshold: float = 15.0
    min_on_duration: float = 60.0

    def __post_init__(self):
        if not self.on_threshold > 0:
            raise ConfigurationError("on_threshold must be positive")
        if not self.min_on_duration >= 0:
            raise ConfigurationError("min_on_duration must be non-negative")


def _median_period(t, fallback):
    if len(t) < 2:
        return fallback
    return float(np.median(np.diff(t)))


def _find_gaps(t, period):
    d = np.diff(t)
    idx = np.flatnonzero(d > GAP_FACTOR * period)
    return tuple((float(t[i] + period), float(t[i + 1])) for i in idx)


def _check_monotone(t, describe_row):
    bad = np.flatnonzero(np.diff(t) <= 0)
    if len(bad):
        raise DataError(f"non-monotone timestamps at {describe_row(int(bad[0]) + 1)}")


def load_refit(path, house_id):
    """Load a REFIT house CSV (``Time, Unix, Aggregate, Appliance1..9``)."""
    path = Path(path)
    try:
        header = pd.read_csv(path, nrows=0).columns
    except (OSError, pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise FormatError(f"{path}: cannot read REFIT header ({exc})") from exc
    required = ("Unix", "Aggregate") + REFIT_APPLIANCE_COLUMNS
    missing = [c for c in required if c not in header]
    if missing:
        raise FormatError(f"{path}: missing REFIT columns {missing}")
    df = pd.read_csv(path, usecols=list(required))
    try:
        t = df["Unix"].to_numpy(dtype=np.float64)
        data = df[list(required[1:])].to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: non-numeric REFIT data ({exc})") from exc
    if len(t) == 0:
        raise DataError(f"{path}: no rows")
    # header is line 1, data row i sits on line i + 2
    _check_monotone(t, lambda i: f"{path} line {i + 2}")
    period = _median_period(t, REFIT_PERIOD)
    gaps = _find_gaps(t, period)

    def trace(col, values, device_id):
        return ApplianceTrace(device_id, col, period, float(t[0]), values.astype(np.float32),
                              timestamps=t.copy(), gaps=gaps)

    aggregate = trace("Aggregate", data[:, 0], f"{house_id}/aggregate")
    appliances = [trace(c, data[:, j + 1], f"{house_id}/{c.lower()}")
                  for j, c in enumerate(REFIT_APPLIANCE_COLUMNS)]
    return HouseholdRecord(house_id, appliances, aggregate)


def _read_dat(path):
    try:
        arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                try:
                    if len(parts) < 2:
                        raise ValueError
                    float(parts[0]), float(parts[1])
                except ValueError:
                    raise DataError(f"{path} line {lineno}: cannot parse {line.strip()!r}") from None
        raise DataError(f"{path}: inconsistent column count")
    if arr.shape[0] == 0:
        raise DataError(f"{path}: no readings")
    if arr.shape[1] < 2:
        raise DataError(f"{path} line 1: expected 'unix_seconds watts'")
    return arr[:, 0], arr[:, 1]


def load_ukdale(path, house_id):
    """Load a UK-DALE house directory (``labels.dat`` + ``channel_N.dat``)."""
    path = Path(path)
    labels_file = path / "labels.dat"
    if not labels_file.is_file():
        raise FormatError(f"{path}: labels.dat not found")
    labels = {}
    for lineno, line in enumerate(labels_file.read_text().splitlines(), 1):
        parts = line.split(maxsplit=1)
        if not parts:
            continue
        if len(parts) != 2 or not parts[0].isdigit():
            raise FormatError(f"{labels_file} line {lineno}: expected 'channel name'")
        labels[int(parts[0])] = parts[1].strip()

    aggregate = None
    appliances = []
    for ch in sorted(labels):
        dat = path / f"channel_{ch}.dat"
        if not dat.is_file():
            log.warning("%s: channel_%d.dat listed in labels.dat but missing; skipped", path, ch)
            continue
        t, w = _read_dat(dat)
        _check_monotone(t, lambda i, dat=dat: f"{dat} line {i + 1}")
        period = _median_period(t, 6.0)
        tr = ApplianceTrace(f"{house_id}/channel_{ch}", labels[ch], period, float(t[0]),
                            w.astype(np.float32), timestamps=t, gaps=_find_gaps(t, period))
        if ch == 1:
            aggregate = tr
        else:
            appliances.append(tr)
    return HouseholdRecord(house_id, appliances, aggregate)


def _holding_intervals(trace):
    """Knots and cumulative energy of the piecewise-constant signal behind ``trace``."""
    t = trace.times.astype(np.float64)
    v = trace.values.astype(np.float64)
    period = trace.sample_period
    hold = np.full(len(t), period)
    if len(t) > 1:
        d = np.diff(t)
        short = d <= GAP_FACTOR * period
        hold[:-1] = np.where(short, d, np.minimum(d, period))
    knots = np.empty(2 * len(t))
    knots[0::2] = t
    knots[1::2] = t + hold
    seg = v * hold
    energy = np.empty(2 * len(t))
    energy[1::2] = np.cumsum(seg)
    energy[0] = 0.0
    energy[2::2] = energy[1:-1:2]
    return knots, energy


def resample(trace, target_period, start_time=None, n_samples=None):
    """Interval-mean resampling onto a uniform grid.

    Each reading holds its value until the next one (or for one period before a
    recorded gap); gap time counts as 0 W. A partial final bin is averaged over
    its covered part only.
    """
    if not target_period > 0:
        raise ConfigurationError("target_period must be positive")
    if len(trace.values) == 0:
        raise DataError("cannot resample an empty trace")
    start = trace.start_time if start_time is None else float(start_time)
    if (trace.is_uniform and target_period == trace.sample_period and start == trace.start_time
            and (n_samples is None or n_samples == len(trace))):
        return ApplianceTrace(trace.device_id, trace.appliance_name, trace.sample_period,
                              trace.start_time, trace.values.copy(), gaps=trace.gaps)
    knots, energy = _holding_intervals(trace)
    end = knots[-1]
    if n_samples is None:
        n_samples = max(1, int(math.ceil((end - start) / target_period - 1e-9)))
    edges = start + target_period * np.arange(n_samples + 1)
    e = np.interp(edges, knots, energy, left=0.0, right=energy[-1])
    lo = np.maximum(edges[:-1], knots[0])
    hi = np.minimum(edges[1:], end)
    covered = np.clip(hi - lo, 0.0, None)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(covered > 0, np.diff(e) / np.where(covered > 0, covered, 1.0), 0.0)
    out = np.clip(out, 0.0, None)
    return ApplianceTrace(trace.device_id, trace.appliance_name, float(target_period), start,
                          out.astype(np.float32), gaps=trace.gaps)


def _runs(mask):
    """Start/stop indices of True runs in a boolean vector."""
    padded = np.concatenate(([False], mask, [False]))
    d = np.diff(padded.astype(np.int8))
    return np.flatnonzero(d == 1), np.flatnonzero(d == -1)


def label_activity(trace, rule=ActivityRule()):
    """Per-sample ON/OFF ground truth.

    A sample is ON when its power reaches ``rule.on_threshold``. OFF gaps between
    two ON runs that last less than ``min_on_duration`` are bridged first, then
    ON runs shorter than ``min_on_duration`` are dropped.
    """
    if len(trace.values) == 0:
        raise DataError("cannot label an empty trace")
    on = trace.values >= rule.on_threshold
    if rule.min_on_duration <= 0:
        return on
    period = trace.sample_period
    starts, stops = _runs(~on)
    for a, b in zip(starts, stops):
        if a > 0 and b < len(on) and (b - a) * period < rule.min_on_duration:
            on[a:b] = True
    starts, stops = _runs(on)
    for a, b in zip(starts, stops):
        if (b - a) * period < rule.min_on_duration:
            on[a:b] = False
    return on


# --- canonical on-disk store -------------------------------------------------

def _write_trace_csv(trace, path):
    arr = np.column_stack([trace.times, trace.values.astype(np.float64)])
    np.savetxt(path, arr, fmt=["%.17g", "%.9g"], delimiter=",",
               header="unix_seconds,watts", comments="")


def _trace_meta(trace, filename):
    return {
        "device_id": trace.device_id,
        "appliance_name": trace.appliance_name,
        "file": filename,
        "sample_period": trace.sample_period,
        "start_time": trace.start_time,
        "n_samples": len(trace),
        "uniform": trace.is_uniform,
        "gaps": [list(g) for g in trace.gaps],
    }


def save_household(record, path):
    """Write ``record`` as manifest.json plus one CSV per trace."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    devices = []
    for i, tr in enumerate(record.appliances):
        name = f"device_{i:03d}.csv"
        _write_trace_csv(tr, path / name)
        devices.append(_trace_meta(tr, name))
    manifest = {
        "house_id": record.house_id,
        "sample_period": float(np.median([t.sample_period for t in record.appliances])),
        "start_time": min(t.start_time for t in record.appliances),
        "devices": devices,
        "aggregate": None,
    }
    if record.aggregate is not None:
        _write_trace_csv(record.aggregate, path / "aggregate.csv")
        manifest["aggregate"] = _trace_meta(record.aggregate, "aggregate.csv")
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _read_trace(path, meta):
    try:
        arr = np.loadtxt(path / meta["file"], delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path / meta['file']}: {exc}") from exc
    if arr.shape != (meta["n_samples"], 2):
        raise FormatError(f"{path / meta['file']}: expected {meta['n_samples']} rows")
    return ApplianceTrace(meta["device_id"], meta["appliance_name"], meta["sample_period"],
                          meta["start_time"], arr[:, 1].astype(np.float32),
                          timestamps=None if meta["uniform"] else arr[:, 0],
                          gaps=[tuple(g) for g in meta["gaps"]])


def load_household(path):
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest.json ({exc})") from exc
    appliances = [_read_trace(path, m) for m in manifest["devices"]]
    agg = manifest.get("aggregate")
    aggregate = _read_trace(path, agg) if agg else None
    return HouseholdRecord(manifest["house_id"], appliances, aggregate)


def load_source(kind, path=None, house_id=None, seed=0, n_devices=10, duration=7 * 86400.0):
    """Dispatch on dataset kind: ``refit``, ``ukdale``, ``synthetic`` or ``store``."""
    if kind == "synthetic":
        return synth_household(n_devices, DEFAULT_MIX, duration, seed)
    if path is None:
        raise ConfigurationError(f"dataset {kind!r} needs a path")
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file or directory")
    if kind == "refit":
        return load_refit(path, house_id or path.stem)
    if kind == "ukdale":
        return load_ukdale(path, house_id or path.name)
    if kind == "store":
        return load_household(path)
    raise ConfigurationError(f"unknown dataset kind {kind!r}")


def data_root():
    """Default dataset root from ``NILM_DATA_DIR`` (or the current directory)."""
    return Path(os.environ.get("NILM_DATA_DIR", "."))


# --- synthetic households ----------------------------------------------------

@dataclass(frozen=True)
class Archetype:
    """Parametric appliance family.

    ``power`` is the rated draw of variant 0; variant ``v`` draws
    ``power * VARIANT_STEP**v`` and stretches its durations by ``1 + 0.15 v``, so
    two devices of one family differ by at least 18% in amplitude.
    """

    name: str
    power: float
    events_per_day: float
    on_minutes: tuple[float, float]
    off_minutes: tuple[float, float] = (0.0, 0.0)


VARIANT_STEP = 1.18
N_VARIANTS = 8

ARCHETYPES = {
    # compressor duty cycle, always cycling
    "periodic-cycler": Archetype("periodic-cycler", 95.0, 0.0, (12.0, 20.0), (25.0, 45.0)),
    # kettle / microwave bursts
    "short-spike": Archetype("short-spike", 1900.0, 10.0, (2.0, 5.0)),
    # heat, wash, spin phases
    "multi-phase-cycle": Archetype("multi-phase-cycle", 2100.0, 5.0, (45.0, 90.0)),
    # space heater, immersion
    "long-flat": Archetype("long-flat", 1100.0, 4.0, (40.0, 150.0)),
    # oven / iron thermostat: element pulses inside each session
    "pulsed-heater": Archetype("pulsed-heater", 750.0, 4.0, (10.0, 30.0), (0.3, 0.7)),
}
DEFAULT_MIX = ("periodic-cycler", "short-spike", "multi-phase-cycle", "long-flat", "pulsed-heater")


def _place(values, start, profile):
    stop = min(len(values), start + len(profile))
    if stop > start:
        values[start:stop] += profile[: stop - start]


def _gen_periodic(arch, scale, stretch, n, period, rng):
    values = np.zeros(n)
    i = int(rng.integers(0, max(1, int(arch.off_minutes[1] * 60 / period))))
    while i < n:
        on = int(rng.uniform(*arch.on_minutes) * stretch * 60 / period)
        off = int(rng.uniform(*arch.off_minutes) * stretch * 60 / period)
        prof = np.full(on, arch.power * scale)
        prof[: max(1, on // 20)] *= 1.6  # inrush
        _place(values, i, prof)
        i += on + off
    return values


def _event_starts(arch, stretch, n, period, rng):
    days = n * period / 86400.0
    k = int(rng.poisson(arch.events_per_day * days))
    span = int(arch.on_minutes[1] * stretch * 60 / period)
    k = max(k, 1)
    return np.sort(rng.integers(0, max(1, n - span), size=k))


def _gen_spike(arch, scale, stretch, n, period, rng):
    values = np.zeros(n)
    for s in _event_starts(arch, stretch, n, period, rng):
        on = max(2, int(rng.uniform(*arch.on_minutes) * stretch * 60 / period))
        _place(values, s, np.full(on, arch.power * scale))
    return values


def _gen_multiphase(arch, scale, stretch, n, period, rng):
    values = np.zeros(n)
    per_min = 60 / period
    for s in _event_starts(arch, stretch, n, period, rng):
        total = rng.uniform(*arch.on_minutes) * stretch
        heat = int(0.2 * total * per_min)
        wash = int(0.6 * total * per_min)
        spin = int(0.2 * total * per_min)
        tumble = np.where((np.arange(wash) // max(1, int(per_min))) % 2 == 0, 0.12, 0.05)
        prof = np.concatenate([
            np.full(heat, 1.0),
            tumble,
            np.full(spin, 0.25),
        ]) * arch.power * scale
        _place(values, s, prof)
    return values


def _gen_flat(arch, scale, stretch, n, period, rng):
    values = np.zeros(n)
    for s in _event_starts(arch, stretch, n, period, rng):
        on = int(rng.uniform(*arch.on_minutes) * stretch * 60 / period)
        _place(values, s, np.full(on, arch.power * scale))
    return values


def _gen_pulsed(arch, scale, stretch, n, period, rng):
    values = np.zeros(n)
    per_min = 60 / period
    for s in _event_starts(arch, stretch, n, period, rng):
        end = s + int(rng.uniform(*arch.on_minutes) * stretch * per_min)
        i = s
        while i < end:
            on = max(2, int(rng.uniform(0.5, 1.0) * per_min))
            off = max(2, int(rng.uniform(*arch.off_minutes) * per_min))
            _place(values, i, np.full(min(on, end - i), arch.power * scale))
            i += on + off
    return values


_GENERATORS = {
    "periodic-cycler": _gen_periodic,
    "short-spike": _gen_spike,
    "multi-phase-cycle": _gen_multiphase,
    "long-flat": _gen_flat,
    "pulsed-heater": _gen_pulsed,
}


def synth_household(n_devices, profile_mix=DEFAULT_MIX, duration=86400.0, seed=0,
                    sample_period=REFIT_PERIOD, standby=1.5, house_id=None):
    """Generate a deterministic synthetic household.

    Device ``k`` uses archetype ``profile_mix[k % len(profile_mix)]`` at variant
    ``k // len(profile_mix)``. Each device gets its own random stream derived
    from ``(seed, k)``, plus uniform standby/sensor noise in ``[0, standby]`` W,
    which stays below the default ON threshold.
    """
    profile_mix = tuple(profile_mix)
    if n_devices < 1:
        raise ConfigurationError("n_devices must be at least 1")
    unknown = [m for m in profile_mix if m not in ARCHETYPES]
    if unknown or not profile_mix:
        raise ConfigurationError(f"unknown archetypes {unknown}")
    if n_devices > len(profile_mix) * N_VARIANTS:
        raise ConfigurationError(
            f"{n_devices} devices exceed catalog capacity {len(profile_mix) * N_VARIANTS}")
    n = int(round(duration / sample_period))
    if n < 1:
        raise ConfigurationError("duration shorter than one sample")
    house_id = house_id or f"synth{seed}"
    traces = []
    for k in range(n_devices):
        name = profile_mix[k % len(profile_mix)]
        variant = k // len(profile_mix)
        arch = ARCHETYPES[name]
        rng = np.random.default_rng([seed, k])
        values = _GENERATORS[name](arch, VARIANT_STEP ** variant, 1 + 0.15 * variant,
                                   n, sample_period, rng)
        values += rng.uniform(0.0, standby, size=n)
        traces.append(ApplianceTrace(f"{house_id}/{name}-{variant}", name, sample_period, 0.0,
                                     values.astype(np.float32)))
    return HouseholdRecord(house_id, traces)
