"""Training engine and the sklearn-compatible network classifier."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..evaluation import confusion, weighted_f1
from ..exceptions import ConfigurationError, TrainingDivergenceError, UndefinedMetricError
from ..synth import POWER_SCALE
from ..validation import check_labels, check_windows
from .configs import TrainConfig
from .network import SpecNetwork, load_weights, save_weights
from .specs import ModelSpec, model_spec

log = logging.getLogger(__name__)


@contextlib.contextmanager
def deterministic_mode(seed, threads=1):
    """Seed torch, pin the thread count and force deterministic kernels, then restore."""
    prev_threads = torch.get_num_threads()
    prev_det = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(seed)
    try:
        yield
    finally:
        torch.set_num_threads(prev_threads)
        torch.use_deterministic_algorithms(prev_det)


@dataclass(eq=False)
class TrainedModel:
    spec: ModelSpec
    network: SpecNetwork
    history: list[dict] = field(default_factory=list)
    power_scale: float = POWER_SCALE

    def save(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / "spec.json").write_text(self.spec.to_json())
        save_weights(self.network, path / "weights")
        (path / "model.json").write_text(json.dumps({"power_scale": self.power_scale}))
        with open(path / "history.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "val_weighted_f1"])
            writer.writeheader()
            for row in self.history:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        spec = ModelSpec.from_json((path / "spec.json").read_text())
        net = load_weights(SpecNetwork(spec), path / "weights")
        meta = json.loads((path / "model.json").read_text())
        history = []
        hist_file = path / "history.csv"
        if hist_file.exists():
            with open(hist_file) as fh:
                history = [{"epoch": int(r["epoch"]), "loss": float(r["loss"]),
                            "val_weighted_f1": float(r["val_weighted_f1"])}
                           for r in csv.DictReader(fh)]
        return cls(spec, net.eval(), history, meta["power_scale"])

    def weight_checksum(self):
        h = hashlib.sha256()
        for name, t in self.network.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().astype("<f4").tobytes())
        return h.hexdigest()


def _scores(network, X, power_scale, batch_size=256):
    network.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            xb = torch.from_numpy(X[i:i + batch_size] / np.float32(power_scale))
            out.append(network(xb).numpy())
    return np.concatenate(out).astype(np.float64)


def _dataset_loss(network, X, y, power_scale, batch_size=256):
    network.eval()
    total = 0.0
    loss_fn = torch.nn.BCEWithLogitsLoss(reduction="sum")
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            xb = torch.from_numpy(X[i:i + batch_size] / np.float32(power_scale))
            yb = torch.from_numpy(y[i:i + batch_size].astype(np.float32))
            total += float(loss_fn(network.logits(xb), yb))
    return total / y.size


def fit_network(spec, X, y, config, X_val=None, y_val=None, power_scale=POWER_SCALE,
                deterministic=True, verbose=False):
    """Minimise mean per-device binary cross-entropy with minibatch Adam.

    ``history[e]["loss"]`` is the full training-set loss after epoch ``e + 1``,
    evaluated in a fixed order so identical weights give identical values.
    """
    X = check_windows(X, spec.input_len)
    y = check_labels(y, spec.n_outputs, len(X))
    if X_val is not None:
        X_val = check_windows(X_val, spec.input_len, "X_val")
        y_val = check_labels(y_val, spec.n_outputs, len(X_val), "y_val")
    ctx = deterministic_mode(config.seed) if deterministic else contextlib.nullcontext()
    with ctx:
        torch.manual_seed(config.seed)
        network = SpecNetwork(spec)
        if config.optimizer == "adam":
            opt = torch.optim.Adam(network.parameters(), lr=config.learning_rate)
        else:
            opt = torch.optim.SGD(network.parameters(), lr=config.learning_rate)
        loss_fn = torch.nn.BCEWithLogitsLoss()
        gen = torch.Generator().manual_seed(config.seed)
        Xt = torch.from_numpy(X / np.float32(power_scale))
        yt = torch.from_numpy(y.astype(np.float32))
        history = []
        for epoch in range(1, config.epochs + 1):
            network.train()
            perm = torch.randperm(len(X), generator=gen)
            for i in range(0, len(X), config.batch_size):
                idx = perm[i:i + config.batch_size]
                opt.zero_grad()
                loss = loss_fn(network.logits(Xt[idx]), yt[idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergenceError(epoch, float(loss.detach()))
                loss.backward()
                opt.step()
            epoch_loss = _dataset_loss(network, X, y, power_scale)
            if not math.isfinite(epoch_loss):
                raise TrainingDivergenceError(epoch, epoch_loss)
            val_f1 = float("nan")
            if X_val is not None:
                preds = classify(_scores(network, X_val, power_scale))
                try:
                    val_f1 = weighted_f1(confusion(preds, y_val)).weighted_f1
                except UndefinedMetricError:
                    pass
            history.append({"epoch": epoch, "loss": epoch_loss, "val_weighted_f1": val_f1})
            if verbose:
                log.info("epoch %d loss %.5f val_wF1 %.4f", epoch, epoch_loss, val_f1)
        network.eval()
    return TrainedModel(spec, network, history, power_scale)


def train(spec, dataset, config, deterministic=True, verbose=False):
    """Train ``spec`` on ``dataset.train``; per-epoch validation uses ``dataset.test``."""
    if dataset.window_len != spec.input_len:
        raise ConfigurationError(
            f"dataset windows have length {dataset.window_len}, spec expects {spec.input_len}")
    if dataset.dit != spec.n_outputs:
        raise ConfigurationError(f"dataset has {dataset.dit} devices, spec emits {spec.n_outputs}")
    return fit_network(spec, dataset.X_train, dataset.y_train, config, dataset.X_test,
                       dataset.y_test, dataset.power_scale, deterministic, verbose)


def predict(model, window, batch_size=256):
    """Sigmoid scores for one window (vector) or a batch of windows (matrix)."""
    single = np.ndim(window) == 1
    X = check_windows(window, model.spec.input_len, "window")
    scores = _scores(model.network, X, model.power_scale, batch_size)
    return scores[0] if single else scores


def classify(scores):
    """Device ``i`` is ON iff its score is strictly above 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    if np.any((scores < 0) | (scores > 1)) or not np.all(np.isfinite(scores)):
        raise ConfigurationError("scores must lie in [0, 1]")
    return scores > 0.5


class NetworkClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label ON/OFF classifier wrapping :func:`fit_network`.

    ``X`` holds aggregate windows in watts, ``y`` the multi-hot device labels.

    Parameters
    ----------
    architecture : {"ctrnn", "vgg11"}
    width_scale : float
        Multiplies every layer width; 1.0 is the full-size network.
    batch_size, learning_rate, epochs : training schedule.
    random_state : int
        Seeds weight init and minibatch order.
    power_scale : float
        Watts are divided by this before entering the network.
    deterministic : bool
        Run single-threaded with deterministic kernels.
    """

    def __init__(self, architecture="ctrnn", width_scale=1.0, batch_size=128,
                 learning_rate=3e-4, epochs=20, random_state=0, power_scale=POWER_SCALE,
                 optimizer="adam", deterministic=True, predict_batch_size=256, verbose=False):
        self.architecture = architecture
        self.width_scale = width_scale
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.random_state = random_state
        self.power_scale = power_scale
        self.optimizer = optimizer
        self.deterministic = deterministic
        self.predict_batch_size = predict_batch_size
        self.verbose = verbose

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_windows(X)
        y = check_labels(y, n_samples=len(X))
        spec = model_spec(self.architecture, y.shape[1], X.shape[1], self.width_scale)
        config = TrainConfig(self.batch_size, self.learning_rate, self.epochs,
                             int(self.random_state), optimizer=self.optimizer)
        self.model_ = fit_network(spec, X, y, config, X_val, y_val, self.power_scale,
                                  self.deterministic, self.verbose)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        self.history_ = self.model_.history
        return self

    @classmethod
    def from_model(cls, model, **params):
        est = cls(architecture=model.spec.name, power_scale=model.power_scale, **params)
        est.model_ = model
        est.n_features_in_ = model.spec.input_len
        est.n_outputs_ = model.spec.n_outputs
        est.history_ = model.history
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_windows(X, self.n_features_in_)
        return _scores(self.model_.network, X, self.model_.power_scale, self.predict_batch_size)

    def predict(self, X):
        return classify(self.predict_proba(X)).astype(np.uint8)
