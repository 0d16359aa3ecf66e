"""Command-line pipeline: analyze, synth, train, eval, cost, sweep, report.

Every command reads one JSON experiment manifest (``--config``), optionally
overridden by the global flags, and writes under ``--out``::

    out/datasets/<cell>/                      mixed datasets
    out/models/<model>/<cell>/seed<N>/        trained models
    out/results/<model>/<cell>/seed<N>/       per-dataset evaluation
    out/results/<model>/grid_<group>.*        result grids
    out/reports/                              profiles, costs, summaries

Exit codes: 0 success, 2 configuration or data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import joblib
import numpy as np

from . import complexity, evaluation, ingest, synth
from .exceptions import (ConfigurationError, NilmError, TrainingDivergenceError,
                         UnsupportedCombinationError)
from .models import (RandomForestBaseline, RandomGuessClassifier, TrainConfig, TrainedModel,
                     model_spec, paper_train_config, predict, train)
from .models.estimators import classify

log = logging.getLogger("onoff_nilm")

NETWORKS = ("ctrnn", "vgg11")
MODELS = NETWORKS + ("rf", "random")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


@dataclass
class SourceConfig:
    kind: str = "synthetic"
    paths: list[str] = field(default_factory=list)  # relative paths resolve under NILM_DATA_DIR
    seed: int = 0
    n_devices: int = 5
    duration: float = 14 * 86400.0


@dataclass
class ExperimentConfig:
    """One manifest drives every command."""

    source: SourceConfig = field(default_factory=SourceConfig)
    group: str = "RE"
    dit_list: list[int] = field(default_factory=lambda: [5])
    window_len: int = synth.DEFAULT_WINDOW
    n_samples: int = 1000
    noise_amplitude: float = 10.0
    n_max_ad: int | None = None  # None: take from the source profile
    n_avg_max_ad: int | None = None
    models: list[str] = field(default_factory=lambda: ["ctrnn"])
    width_scale: float = 1.0
    train: dict = field(default_factory=dict)  # batch_size / learning_rate / epochs overrides
    table: str = "refit"  # which published training table supplies defaults
    seeds: list[int] = field(default_factory=lambda: [0])
    seed: int = 0  # dataset seed
    out: str = "runs"
    forest_size: int = 100
    cost_model: str = "ctrnn"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        src = d.pop("source", {})
        if isinstance(src, str):
            src = {"kind": src}
        try:
            return cls(source=SourceConfig(**src), **d)
        except TypeError as exc:
            raise ConfigurationError(f"bad config: {exc}") from None

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self):
        if self.group not in ("SE", "RE"):
            raise ConfigurationError(f"group must be SE or RE, got {self.group!r}")
        if self.source.kind not in ("synthetic", "refit", "ukdale", "store"):
            raise ConfigurationError(f"unknown dataset source {self.source.kind!r}")
        if not self.dit_list or min(self.dit_list) < 2:
            raise ConfigurationError("dit_list needs values >= 2")
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise ConfigurationError(f"unknown models {bad}; choose from {MODELS}")
        if not 0 < self.width_scale <= 1:
            raise ConfigurationError("width_scale must lie in (0, 1]")
        if self.table not in ("refit", "ukdale"):
            raise ConfigurationError("table must be refit or ukdale")
        extra = set(self.train) - {"batch_size", "learning_rate", "epochs"}
        if extra:
            raise ConfigurationError(f"unknown train overrides {sorted(extra)}")
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        # fail fast on spec invariants, before any data work
        _base_spec(self)
        for m in self.models:
            if m in NETWORKS:
                for d in self.dit_list:
                    model_spec(m, d, self.window_len, self.width_scale)
        return self


PRESETS = {
    # CPU-sized run: 5 synthetic devices, 510-sample windows, quarter-width network
    "desk": {
        "source": {"kind": "synthetic", "seed": 0, "n_devices": 5, "duration": 14 * 86400.0},
        "group": "RE", "dit_list": [5], "window_len": 510, "n_samples": 2000,
        "noise_amplitude": 10.0, "n_max_ad": 4, "n_avg_max_ad": 4, "width_scale": 0.25,
        "models": ["ctrnn", "rf", "random"],
    },
}


def load_config(args):
    base = {}
    if getattr(args, "preset", None):
        base.update(PRESETS[args.preset])
    if args.config:
        try:
            base.update(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"{args.config}: cannot read config ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}: invalid JSON ({exc})") from None
    cfg = ExperimentConfig.from_dict(base)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.seeds = [args.seed]
    if args.out is not None:
        cfg.out = args.out
    if args.dataset is not None:
        cfg.source.kind = args.dataset
    if args.scale is not None:
        cfg.width_scale = args.scale
    if getattr(args, "model", None):
        cfg.models = [args.model]
    if getattr(args, "group", None):
        cfg.group = args.group
    return cfg.validate()


# --- helpers -----------------------------------------------------------------

def _out(cfg, *parts):
    p = Path(cfg.out).joinpath(*parts)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_households(cfg):
    src = cfg.source
    if src.kind == "synthetic":
        return [ingest.synth_household(src.n_devices, duration=src.duration, seed=src.seed)]
    if not src.paths:
        raise ConfigurationError(f"dataset {src.kind!r} needs source.paths")
    root = ingest.data_root()
    out = []
    for p in src.paths:
        path = Path(p) if Path(p).is_absolute() else root / p
        out.append(ingest.load_source(src.kind, path))
    return out


def _profile(cfg, households):
    if cfg.n_max_ad is not None and cfg.n_avg_max_ad is not None:
        return None, cfg.n_max_ad, cfg.n_avg_max_ad
    prof = synth.analyze_profile(households, cfg.window_len, n_avg_max_ad=cfg.n_avg_max_ad)
    return (prof, cfg.n_max_ad if cfg.n_max_ad is not None else prof.n_max_ad,
            prof.n_avg_max_ad)


def _base_spec(cfg):
    return synth.MixedDatasetSpec(group="RE", dit=2, ad_max=1, window_len=cfg.window_len,
                                  n_samples=cfg.n_samples, seed=cfg.seed,
                                  noise_amplitude=cfg.noise_amplitude)


def _dataset_dirs(cfg):
    root = Path(cfg.out) / "datasets"
    found = []
    for d in sorted(root.glob("*/manifest.json")):
        spec = synth.MixedDatasetSpec.from_dict(synth.read_manifest(d.parent)["spec"])
        if spec.group == cfg.group and spec.dit in cfg.dit_list:
            found.append((spec, d.parent))
    if not found:
        raise ConfigurationError(f"no {cfg.group} datasets under {root}; run `synth` first")
    return found


def _train_config(cfg, model, spec, seed):
    ad = spec.ad if spec.group == "SE" else None
    try:
        base = paper_train_config(model, cfg.table, spec.group, spec.dit, ad, seed)
    except UnsupportedCombinationError:
        if {"batch_size", "learning_rate", "epochs"} <= set(cfg.train):
            base = TrainConfig(seed=seed)
        else:
            raise
    return dataclasses.replace(base, **cfg.train)


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")
    return path


# --- commands ----------------------------------------------------------------

def cmd_analyze(cfg):
    households = _load_households(cfg)
    prof = synth.analyze_profile(households, cfg.window_len, n_avg_max_ad=cfg.n_avg_max_ad)
    out = _out(cfg, "reports")
    with open(out / "profile_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["active_devices", "probability"])
        for k in sorted(prof.histogram):
            w.writerow([k, repr(prof.histogram[k])])
    _write_json(out / "profile.json", {"n_max_ad": prof.n_max_ad,
                                       "n_avg_max_ad": prof.n_avg_max_ad,
                                       "n_windows": prof.n_windows,
                                       "window_len": cfg.window_len})
    print(f"n_max_ad={prof.n_max_ad} n_avg_max_ad={prof.n_avg_max_ad} "
          f"over {prof.n_windows} windows -> {out}")
    return EXIT_OK


def cmd_synth(cfg):
    households = _load_households(cfg)
    _, n_max, n_avg = _profile(cfg, households)
    limit = n_max if cfg.group == "SE" else n_avg
    specs = synth.group_specs(cfg.group, cfg.dit_list, limit, _base_spec(cfg))
    if not specs:
        raise ConfigurationError(f"no {cfg.group} cells for dit_list={cfg.dit_list}")
    root = _out(cfg, "datasets")
    for spec in specs:
        ds = synth.build_mixed_dataset(spec, households)
        manifest = synth.dataset_manifest(ds)
        target = root / spec.cell
        try:
            current = synth.read_manifest(target)
        except NilmError:
            current = None
        if current == json.loads(json.dumps(manifest)):
            try:
                synth.load_dataset(target)
                print(f"{spec.cell}: up to date")
                continue
            except NilmError:
                pass
        synth.save_dataset(ds, target)
        print(f"{spec.cell}: wrote {len(ds.X_train)} train / {len(ds.X_test)} test windows")
    return EXIT_OK


def _fit_one(cfg, model, spec, ds, seed, target):
    if model in NETWORKS:
        mspec = model_spec(model, ds.dit, ds.window_len, cfg.width_scale)
        tc = _train_config(cfg, model, spec, seed)
        trained = train(mspec, ds, tc)
        trained.save(target)
        (target / "train_config.json").write_text(
            json.dumps(dataclasses.asdict(tc), indent=2, sort_keys=True) + "\n")
        return f"final loss {trained.history[-1]['loss']:.4f}"
    if model == "rf":
        est = RandomForestBaseline(cfg.forest_size, random_state=seed).fit(ds.X_train, ds.y_train)
    else:
        ad = spec.ad if spec.group == "SE" else spec.ad_max
        est = RandomGuessClassifier(spec.group, ad, seed).fit(ds.X_train, ds.y_train)
    joblib.dump(est, target / "estimator.joblib")
    return "fitted"


def cmd_train(cfg):
    for spec, path in _dataset_dirs(cfg):
        ds = synth.load_dataset(path)
        for model in cfg.models:
            for seed in cfg.seeds:
                target = _out(cfg, "models", model, spec.cell, f"seed{seed}")
                msg = _fit_one(cfg, model, spec, ds, seed, target)
                print(f"{model}/{spec.cell}/seed{seed}: {msg}")
    return EXIT_OK


def _predict_labels(model_dir, ds):
    if (model_dir / "spec.json").exists():
        tm = TrainedModel.load(model_dir)
        if tm.spec.input_len != ds.window_len or tm.spec.n_outputs != ds.dit:
            raise ConfigurationError(f"{model_dir}: model spec does not match dataset shape")
        return classify(predict(tm, ds.X_test)).astype(np.uint8)
    f = model_dir / "estimator.joblib"
    if not f.exists():
        raise ConfigurationError(f"{model_dir}: no trained model; run `train` first")
    est = joblib.load(f)
    if est.n_outputs_ != ds.dit:
        raise ConfigurationError(f"{model_dir}: estimator does not match dataset shape")
    return est.predict(ds.X_test)


def _grid_key(spec):
    return (spec.dit, spec.ad if spec.group == "SE" else evaluation.RE_COLUMN)


def cmd_eval(cfg):
    cells = _dataset_dirs(cfg)
    summaries = {}
    for model in cfg.models:
        scores, exact = {}, {}
        for spec, path in cells:
            ds = synth.load_dataset(path)
            per_seed = []
            for seed in cfg.seeds:
                mdir = Path(cfg.out) / "models" / model / spec.cell / f"seed{seed}"
                preds = _predict_labels(mdir, ds)
                rep = evaluation.evaluate(preds, ds.y_test, ds.device_order)
                rdir = _out(cfg, "results", model, spec.cell, f"seed{seed}")
                rep.write_table(rdir / "table.csv")
                _write_json(rdir / "eval.json", rep.to_dict())
                per_seed.append(rep)
            wf1 = [r.weighted_f1 for r in per_seed]
            scores[_grid_key(spec)] = float(np.mean(wf1))
            exact[_grid_key(spec)] = float(np.mean([r.exact_match for r in per_seed]))
            _write_json(_out(cfg, "results", model, spec.cell) / "summary.json",
                        {"weighted_f1_per_seed": wf1, "weighted_f1_mean": float(np.mean(wf1)),
                         "exact_match_per_seed": [r.exact_match for r in per_seed],
                         "seeds": cfg.seeds})
            print(f"{model}/{spec.cell}: weighted F1 {np.mean(wf1):.4f} over {len(wf1)} seed(s)")
        grid = evaluation.ResultGrid(sorted({k[0] for k in scores}), sorted({k[1] for k in scores}),
                                     scores, "score", f"{model} ({cfg.group})")
        files = evaluation.render_grid(grid, _out(cfg, "results", model), f"grid_{cfg.group.lower()}")
        exact_grid = evaluation.ResultGrid(grid.axis_dit, grid.axis_ad, exact, "probability",
                                           f"{model} exact match ({cfg.group})")
        files += evaluation.render_grid(exact_grid, _out(cfg, "results", model),
                                        f"grid_{cfg.group.lower()}_exact")
        summary = {"grid": grid.to_dict(), "exact_match_grid": exact_grid.to_dict(),
                   "files": [str(f) for f in files], "n_seeds": len(cfg.seeds)}
        try:
            summary["degradation_per_5_dit"] = evaluation.degradation_per_step(grid, 5)
        except ConfigurationError:
            pass
        summaries[model] = summary
    # closed-form chance level for the same cells
    prob = _probability_grid(cfg, cells)
    pfiles = evaluation.render_grid(prob, _out(cfg, "results", "chance"),
                                    f"grid_{cfg.group.lower()}")
    summaries["chance"] = {"grid": prob.to_dict(), "files": [str(f) for f in pfiles]}
    _write_json(_out(cfg, "reports") / f"eval_{cfg.group.lower()}.json", summaries)
    return EXIT_OK


def _probability_grid(cfg, cells):
    probs = {}
    for spec, _ in cells:
        if spec.group == "SE":
            probs[_grid_key(spec)] = evaluation.random_prob_se(spec.dit, spec.ad)
        else:
            probs[_grid_key(spec)] = evaluation.random_prob_re(spec.dit, spec.ad_max)
    return evaluation.ResultGrid(sorted({k[0] for k in probs}), sorted({k[1] for k in probs}),
                                 probs, "probability", f"Random ({cfg.group})")


def cmd_cost(cfg):
    out = _out(cfg, "reports")
    name = cfg.cost_model
    if name not in NETWORKS:
        raise ConfigurationError(f"cost_model must be one of {NETWORKS}")
    n_train = int(round(cfg.n_samples * 0.8))
    epochs = int(cfg.train.get("epochs", 20))
    spec = model_spec(name, cfg.dit_list[0], cfg.window_len, cfg.width_scale)
    ours = complexity.spec_cost_report(spec, n_train, epochs)
    published = [complexity.cost_report(complexity.PUBLISHED_LABELS[k], p, f, n_train, epochs)
                 for k, (p, f) in complexity.PUBLISHED.items()]
    reports = [dataclasses.replace(ours, name=f"{name} (counted)")] + published
    csv_text, table = complexity.cost_table(reports)
    (out / "cost_table.csv").write_text(csv_text)
    (out / "cost_table.txt").write_text(table)
    flops = {complexity.PUBLISHED_LABELS[k]: f for k, (_, f) in complexity.PUBLISHED.items()
             if k != "vae_nilm"}
    (out / "inference_curve.csv").write_text(complexity.inference_curve(flops))
    f_ct = complexity.PUBLISHED["ctrnn"][1]
    lines = [f"CtRNN uses {complexity.energy_reduction(f_ct, complexity.PUBLISHED[k][1]):.1f}% "
             f"less training energy than {complexity.PUBLISHED_LABELS[k]}"
             for k in ("vgg11", "tanoni_crnn")]
    (out / "cost_comparison.txt").write_text("\n".join(lines) + "\n")
    _write_json(out / "cost.json", {"counted": dataclasses.asdict(ours),
                                    "published": [dataclasses.asdict(r) for r in published],
                                    "comparison": lines})
    print(table, end="")
    print("\n".join(lines))
    return EXIT_OK


def cmd_sweep(cfg):
    for step in (cmd_synth, cmd_train, cmd_eval):
        code = step(cfg)
        if code:
            return code
    return cmd_report(cfg)


def cmd_report(cfg):
    """Cross-model summary: per-device tables, improvements, degradation."""
    out = _out(cfg, "reports")
    summary_file = out / f"eval_{cfg.group.lower()}.json"
    if not summary_file.exists():
        raise ConfigurationError(f"{summary_file} missing; run `eval` first")
    summaries = json.loads(summary_file.read_text())
    grids = {m: {(d, a): v for d, a, v in s["grid"]["cells"]}
             for m, s in summaries.items() if m in MODELS}
    lines = []
    if "ctrnn" in grids:
        for other in (m for m in grids if m != "ctrnn"):
            keys = sorted(set(grids["ctrnn"]) & set(grids[other]))
            if keys:
                imp = evaluation.avg_improvement([grids["ctrnn"][k] for k in keys],
                                                 [grids[other][k] for k in keys])
                lines.append(f"ctrnn vs {other}: {imp:+.2f} pp over {len(keys)} dataset(s)")
    for m, s in summaries.items():
        if "degradation_per_5_dit" in s:
            lines.append(f"{m}: {s['degradation_per_5_dit']:.2f} pp lost per 5 DiT added")
    # per-device table for every cell, averaged over seeds
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "cell", "device", "precision", "recall", "f1", "support"])
    for m in grids:
        for cell_dir in sorted((Path(cfg.out) / "results" / m).glob("*/")):
            seeds = sorted(cell_dir.glob("seed*/eval.json"))
            if not seeds:
                continue
            reps = [json.loads(f.read_text()) for f in seeds]
            for j, dev in enumerate(reps[0]["per_device"]):
                w.writerow([m, cell_dir.name, dev["device_id"],
                            f"{np.mean([r['per_device'][j]['precision'] for r in reps]):.4f}",
                            f"{np.mean([r['per_device'][j]['recall'] for r in reps]):.4f}",
                            f"{np.mean([r['per_device'][j]['f1'] for r in reps]):.4f}",
                            dev["support"]])
            w.writerow([m, cell_dir.name, "Weighted avg.", "", "",
                        f"{np.mean([r['weighted_f1'] for r in reps]):.4f}",
                        sum(d["support"] for d in reps[0]["per_device"])])
    (out / f"table_{cfg.group.lower()}.csv").write_text(buf.getvalue())
    (out / f"summary_{cfg.group.lower()}.txt").write_text("\n".join(lines) + "\n")
    bundle = evaluation.bundle_report(extra={"summaries": summaries, "statements": lines,
                                             "config": cfg.to_dict()})
    (out / f"report_{cfg.group.lower()}.json").write_text(bundle + "\n")
    print("\n".join(lines) if lines else "no cross-model statistics (single model)")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "cost": cmd_cost, "sweep": cmd_sweep, "report": cmd_report}


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="JSON experiment manifest")
    p.add_argument("--seed", type=int, default=d, help="dataset and training seed")
    p.add_argument("--out", metavar="DIR", default=d, help="output root")
    p.add_argument("--dataset", choices=("refit", "ukdale", "synthetic"), default=d)
    p.add_argument("--scale", type=float, default=d, help="network width scale")
    p.add_argument("--preset", choices=sorted(PRESETS), default=d)
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser():
    parser = argparse.ArgumentParser(prog="onoff-nilm", description=__doc__.split("\n")[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.split("\n")[0] if fn.__doc__ else None)
        _global_flags(p, suppress=True)
        if name in ("train", "eval", "cost", "sweep"):
            p.add_argument("--model", choices=MODELS)
        if name in ("synth", "train", "eval", "sweep", "report"):
            p.add_argument("--group", choices=("SE", "RE"))
    return parser


cmd_analyze.__doc__ = "Profile active-device counts of the source dataset."
cmd_synth.__doc__ = "Synthesize the SE or RE group of mixed datasets."
cmd_train.__doc__ = "Train the configured models on every dataset cell."
cmd_eval.__doc__ = "Evaluate trained models; write tables and result grids."
cmd_cost.__doc__ = "Parameter, FLOP, energy and CO2 accounting."
cmd_sweep.__doc__ = "Run synth, train, eval and report in sequence."


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except TrainingDivergenceError as exc:
        print(f"error: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (NilmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
