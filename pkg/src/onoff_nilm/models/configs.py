"""Training configurations, including the published per-cell (BS, LR, E) table."""

from __future__ import annotations

from dataclasses import dataclass

from ..exceptions import ConfigurationError, UnsupportedCombinationError


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 3e-4
    epochs: int = 20
    seed: int = 0
    loss: str = "bce"
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.loss != "bce":
            raise ConfigurationError(f"unsupported loss {self.loss!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")


_ = None  # unsupported cell


def _table(columns, rows):
    out = {}
    for dit, cells in rows.items():
        for ads, cell in zip(columns, cells):
            if cell is _:
                continue
            for ad in ads:
                out[(dit, ad)] = cell
    return out


# SE group; keys are (dit, ad), values (batch size, learning rate, epochs)
SE_TABLE = {
    ("ctrnn", "refit"): _table(
        [(1,), (2,), (3, 4), (5, 6, 7, 8), (9,)],
        {
            5: [(512, 1e-4, 40), (256, 5e-4, 20), (128, 5e-4, 20), _, _],
            10: [(512, 1e-4, 40), (256, 5e-4, 20), (128, 5e-4, 20), (128, 5e-4, 20), (128, 1e-4, 20)],
            15: [(512, 1e-4, 40), (256, 5e-4, 20), (128, 5e-4, 20), (128, 5e-4, 20), (128, 5e-4, 20)],
            20: [(512, 1e-4, 40), (256, 5e-4, 20), (128, 5e-4, 20), (128, 5e-4, 20), (128, 5e-4, 20)],
        }),
    ("ctrnn", "ukdale"): _table(
        [(2, 3, 4), (5, 9), (11, 13), (14,), (15, 16, 17), (24, 26)],
        {
            5: [(128, 3e-4, 20), _, _, _, _, _],
            10: [(128, 3e-4, 20), (128, 3e-4, 20), _, _, _, _],
            15: [(128, 3e-4, 20), (128, 3e-4, 20), (128, 5e-4, 20), (128, 5e-4, 20), _, _],
            20: [(128, 3e-4, 20), (128, 3e-4, 20), (128, 5e-4, 20), (128, 1e-4, 20),
                 (128, 1e-4, 20), _],
            54: [(128, 1e-4, 20), (128, 1e-4, 20), (128, 3e-4, 20), (128, 3e-4, 20),
                 (128, 3e-4, 20), (128, 3e-4, 20)],
        }),
    ("vgg11", "refit"): _table(
        [(1,), (2,), (3, 4), (5, 6, 7, 8, 9)],
        {
            5: [(512, 1e-4, 50), (256, 1e-4, 20), (128, 1e-4, 20), _],
            10: [(512, 1e-4, 50), (256, 1e-4, 20), (128, 1e-4, 20), (128, 1e-4, 20)],
            15: [(512, 1e-4, 50), (256, 1e-4, 20), (128, 1e-4, 20), (128, 1e-4, 20)],
            20: [(512, 1e-4, 50), (256, 1e-4, 20), (128, 1e-4, 20), (128, 1e-4, 20)],
        }),
    ("vgg11", "ukdale"): _table(
        [(2, 3, 4), (5, 9), (11, 13, 14), (16, 17), (24, 26)],
        {
            5: [(128, 1e-4, 20), _, _, _, _],
            10: [(128, 1e-4, 20), (128, 1e-4, 20), _, _, _],
            15: [(128, 1e-4, 20), (128, 1e-4, 20), (128, 1e-4, 20), _, _],
            20: [(128, 1e-4, 20), (128, 1e-4, 20), (128, 1e-4, 20), (128, 5e-5, 20), _],
            54: [(128, 1e-4, 20), (128, 1e-4, 20), (128, 1e-4, 20), (128, 5e-5, 20),
                 (128, 5e-5, 20)],
        }),
}

RE_LEARNING_RATE = {"ctrnn": 3e-4, "vgg11": 1e-4}
RE_BATCH_SIZE = 128
RE_EPOCHS = 20


def paper_train_config(model, dataset, group, dit, ad=None, seed=0):
    """Published (batch size, learning rate, epochs) for one mixed-dataset cell.

    RE cells always use batch 128 and 20 epochs. SE cells come from the
    per-(DiT, AD) table; cells the table leaves empty raise
    :class:`UnsupportedCombinationError`.
    """
    if model not in RE_LEARNING_RATE:
        raise ConfigurationError(f"no published configuration for model {model!r}")
    if dataset not in ("refit", "ukdale"):
        raise ConfigurationError(f"no published configuration for dataset {dataset!r}")
    if group == "RE":
        return TrainConfig(RE_BATCH_SIZE, RE_LEARNING_RATE[model], RE_EPOCHS, seed)
    if group != "SE":
        raise ConfigurationError(f"group must be SE or RE, got {group!r}")
    try:
        bs, lr, e = SE_TABLE[(model, dataset)][(dit, ad)]
    except KeyError:
        raise UnsupportedCombinationError(
            f"no published SE configuration for {model}/{dataset} at {dit} DiT, {ad} AD") from None
    return TrainConfig(bs, lr, e, seed)
