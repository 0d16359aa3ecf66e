"""Multi-label metrics, random-guess probabilities, cross-model statistics and grids."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, UndefinedMetricError
from .validation import check_same_shape

RE_COLUMN = 0  # ad-axis key of the single mixed-AD column in an RE grid


@dataclass(frozen=True)
class DeviceCounts:
    device_id: str
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def support(self):
        return self.tp + self.fn


@dataclass(frozen=True)
class DeviceScore:
    device_id: str
    precision: float
    recall: float
    f1: float
    weight: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    per_device: list[DeviceScore]
    weighted_f1: float
    n_samples: int
    exact_match: float | None = None

    def to_dict(self):
        return asdict(self)

    def table_rows(self):
        """Per-device rows with the weighted average last."""
        rows = [(d.device_id, d.precision, d.recall, d.f1, d.support) for d in self.per_device]
        rows.append(("Weighted avg.", None, None, self.weighted_f1,
                     sum(d.support for d in self.per_device)))
        return rows

    def write_table(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["device", "precision", "recall", "f1", "support"])
            for name, p, r, f, s in self.table_rows():
                w.writerow([name, "" if p is None else f"{p:.4f}", "" if r is None else f"{r:.4f}",
                            f"{f:.4f}", s])
        return path


def confusion(preds, labels, device_ids=None):
    """Column-wise TP/FP/FN/TN for boolean matrices ``(n_samples, n_devices)``."""
    preds, labels = check_same_shape(preds, labels)
    p = preds.astype(bool)
    t = labels.astype(bool)
    tp = np.count_nonzero(p & t, axis=0)
    fp = np.count_nonzero(p & ~t, axis=0)
    fn = np.count_nonzero(~p & t, axis=0)
    tn = np.count_nonzero(~p & ~t, axis=0)
    if device_ids is None:
        device_ids = [str(j) for j in range(p.shape[1])]
    return [DeviceCounts(d, int(a), int(b), int(c), int(e))
            for d, a, b, c, e in zip(device_ids, tp, fp, fn, tn)]


def _ratio(a, b):
    return a / b if b else 0.0


def weighted_f1(counts, n_samples=None):
    """Support-weighted mean of per-device F1.

    Precision, recall and F1 are 0 whenever their denominator is 0; a device
    with zero support gets weight 0.
    """
    total = sum(c.support for c in counts)
    if total == 0:
        raise UndefinedMetricError("weighted F1 is undefined when no device is ever active")
    scores = []
    for c in counts:
        p = _ratio(c.tp, c.tp + c.fp)
        r = _ratio(c.tp, c.tp + c.fn)
        f = _ratio(2 * p * r, p + r)
        scores.append(DeviceScore(c.device_id, p, r, f, c.support / total, c.support))
    wf1 = math.fsum(s.f1 * s.weight for s in scores)
    if n_samples is None and counts:
        c = counts[0]
        n_samples = c.tp + c.fp + c.fn + c.tn
    return EvalReport(scores, min(wf1, 1.0), int(n_samples or 0))


def evaluate(preds, labels, device_ids=None):
    """Confusion + weighted F1 + exact-set-match rate in one report."""
    preds, labels = check_same_shape(preds, labels)
    report = weighted_f1(confusion(preds, labels, device_ids), len(preds))
    exact = float(np.mean(np.all(preds.astype(bool) == labels.astype(bool), axis=1)))
    return EvalReport(report.per_device, report.weighted_f1, report.n_samples, exact)


def random_prob_se(dit, ad, exact=False):
    """Chance of guessing the exact active set when ``ad`` of ``dit`` devices are ON."""
    if not 1 <= ad <= dit:
        raise ConfigurationError(f"need 1 <= ad <= dit, got dit={dit}, ad={ad}")
    p = Fraction(1, math.comb(dit, ad))
    return p if exact else float(p)


def random_prob_re(dit, ad_max, exact=False):
    """Chance of guessing the exact active set when 1..``ad_max`` devices may be ON.

    The admissible sets are all subsets minus the empty set minus those larger
    than ``ad_max``.
    """
    if not 1 <= ad_max <= dit:
        raise ConfigurationError(f"need 1 <= ad_max <= dit, got dit={dit}, ad_max={ad_max}")
    n = 2 ** dit - math.comb(dit, 0) - sum(math.comb(dit, k) for k in range(ad_max + 1, dit + 1))
    p = Fraction(1, n)
    return p if exact else float(p)


def _pp(x):
    # absorb binary representation error of decimal scores
    return round(x * 100.0, 9) + 0.0


def avg_improvement(ours, theirs):
    """Mean score difference over aligned datasets, in percentage points."""
    ours, theirs = list(ours), list(theirs)
    if len(ours) != len(theirs):
        raise ConfigurationError(f"score lists differ in length: {len(ours)} vs {len(theirs)}")
    if not ours:
        raise ConfigurationError("no scores to compare")
    return _pp(math.fsum(a - b for a, b in zip(ours, theirs)) / len(ours))


@dataclass
class ResultGrid:
    """Cells keyed by ``(dit, ad)``; missing keys are unsupported combinations.

    ``kind`` is ``"score"`` for weighted-F1 grids and ``"probability"`` for
    random-guess grids. RE grids use a single ad column keyed ``RE_COLUMN``.
    """

    axis_dit: list[int]
    axis_ad: list[int]
    cells: dict = field(default_factory=dict)
    kind: str = "score"
    title: str = ""

    def __post_init__(self):
        self.axis_dit = sorted(int(d) for d in self.axis_dit)
        self.axis_ad = sorted(int(a) for a in self.axis_ad)
        for key, v in self.cells.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"grid cell {key} = {v} outside [0, 1]")

    def get(self, dit, ad):
        return self.cells.get((dit, ad))

    def as_array(self):
        """Matrix ``[dit, ad]`` with NaN in unsupported cells."""
        arr = np.full((len(self.axis_dit), len(self.axis_ad)), np.nan)
        for i, d in enumerate(self.axis_dit):
            for j, a in enumerate(self.axis_ad):
                v = self.cells.get((d, a))
                if v is not None:
                    arr[i, j] = v
        return arr

    def to_csv(self):
        lines = ["dit\\ad," + ",".join("all" if a == RE_COLUMN else str(a) for a in self.axis_ad)]
        for d in self.axis_dit:
            vals = [self.cells.get((d, a)) for a in self.axis_ad]
            lines.append(f"{d}," + ",".join("" if v is None else repr(float(v)) for v in vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text, kind="score", title=""):
        rows = list(csv.reader(io_lines(text)))
        ads = [RE_COLUMN if a == "all" else int(a) for a in rows[0][1:]]
        dits, cells = [], {}
        for row in rows[1:]:
            d = int(row[0])
            dits.append(d)
            for a, v in zip(ads, row[1:]):
                if v != "":
                    cells[(d, a)] = float(v)
        return cls(dits, ads, cells, kind, title)

    def to_dict(self):
        return {"kind": self.kind, "title": self.title, "axis_dit": self.axis_dit,
                "axis_ad": self.axis_ad,
                "cells": [[d, a, v] for (d, a), v in sorted(self.cells.items())]}


def io_lines(text):
    return text.strip("\n").split("\n")


def se_probability_grid(dit_list, ad_limit):
    """Random-guess probabilities for every SE cell with ``1 <= ad <= min(ad_limit, dit-1)``."""
    cells = {(d, a): random_prob_se(d, a) for d in dit_list for a in range(1, min(ad_limit, d - 1) + 1)}
    ads = sorted({a for _, a in cells})
    return ResultGrid(list(dit_list), ads, cells, "probability", "Random (SE)")


def re_probability_grid(dit_list, ad_limit):
    cells = {(d, RE_COLUMN): random_prob_re(d, min(ad_limit, d - 1)) for d in dit_list}
    return ResultGrid(list(dit_list), [RE_COLUMN], cells, "probability", "Random (RE)")


def degradation_per_step(grid, step=5):
    """Average drop in score (pp) each time ``step`` devices are added.

    For every adjacent pair ``(dit, dit + step)`` present in the grid, the drop is
    averaged over the ad columns both rows support; the result is the mean of
    those per-pair drops.
    """
    dits = set(grid.axis_dit)
    pair_drops = []
    for d in sorted(dits):
        if d + step not in dits:
            continue
        shared = [a for a in grid.axis_ad
                  if grid.get(d, a) is not None and grid.get(d + step, a) is not None]
        if shared:
            pair_drops.append(math.fsum(grid.get(d, a) - grid.get(d + step, a) for a in shared)
                              / len(shared))
    if not pair_drops:
        raise ConfigurationError(f"grid has no pair of dit levels {step} apart with shared cells")
    return _pp(math.fsum(pair_drops) / len(pair_drops))


def empirical_random_check(dit, policy, trials=100_000, seed=0):
    """Monte-Carlo exact-set-match rate of the random baseline against random truths.

    Returns ``(rate, standard_error)``.
    """
    from .models.baselines import random_baseline

    if trials < 1000:
        raise ConfigurationError("use at least 1000 trials")
    truth = random_baseline(dit, policy, seed=np.random.SeedSequence([seed, 1]))(trials)
    guess = random_baseline(dit, policy, seed=np.random.SeedSequence([seed, 2]))(trials)
    p = float(np.mean(np.all(truth == guess, axis=1)))
    return p, math.sqrt(p * (1 - p) / trials)


def render_grid(grid, path, stem=None):
    """Write ``<stem>.csv`` and a heatmap PNG; probability grids also get a curve plot.

    Returns the list of written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not grid.cells:
        raise ConfigurationError("cannot render an empty grid")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    stem = stem or (grid.title.replace(" ", "_").replace("(", "").replace(")", "").lower() or "grid")
    written = []
    csv_path = path / f"{stem}.csv"
    csv_path.write_text(grid.to_csv())
    written.append(csv_path)

    arr = np.ma.masked_invalid(grid.as_array())
    fig, ax = plt.subplots(figsize=(1.0 + 0.55 * len(grid.axis_ad), 1.0 + 0.5 * len(grid.axis_dit)))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("white")
    im = ax.imshow(arr, cmap=cmap, vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(grid.axis_ad)),
                  ["all" if a == RE_COLUMN else str(a) for a in grid.axis_ad])
    ax.set_yticks(range(len(grid.axis_dit)), [str(d) for d in grid.axis_dit])
    ax.set_xlabel("AD")
    ax.set_ylabel("DiT")
    ax.set_title(grid.title)
    for i in range(arr.shape[0]):
        for j in range(arr.shape[1]):
            if not np.ma.is_masked(arr[i, j]):
                v = float(arr[i, j])
                txt = f"{v:.2f}" if grid.kind == "score" else f"{100 * v:.2g}%"
                ax.text(j, i, txt, ha="center", va="center", fontsize=7,
                        color="black" if v > 0.5 else "white")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    png = path / f"{stem}.png"
    fig.savefig(png, dpi=100, metadata={"Software": None})
    plt.close(fig)
    written.append(png)

    if grid.kind == "probability" and RE_COLUMN not in grid.axis_ad:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for d in grid.axis_dit:
            pts = [(a, grid.get(d, a)) for a in grid.axis_ad if grid.get(d, a) is not None]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", label=f"{d} DiT")
        ax.set_xlabel("AD")
        ax.set_ylabel("P(correct)")
        if min(grid.cells.values()) > 0:
            ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        curve = path / f"{stem}_curves.png"
        fig.savefig(curve, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written.append(curve)
    return written


def bundle_report(eval_report=None, cost_report=None, grids=None, extra=None):
    """JSON document combining an evaluation, a cost report and grid file references."""
    doc = {}
    if eval_report is not None:
        doc["eval"] = eval_report.to_dict()
    if cost_report is not None:
        doc["cost"] = asdict(cost_report)
    if grids:
        doc["grids"] = {k: [str(p) for p in v] for k, v in grids.items()}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True, default=float)
