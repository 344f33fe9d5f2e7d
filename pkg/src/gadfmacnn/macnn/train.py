"""Cross-entropy training, checkpointing and prediction for MACNN."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..container import read_container, write_container
from ..errors import LabelOutOfRange, NonFiniteLoss, ShapeMismatch
from ..torchio import (arrays_to_state, optimizer_from_arrays, optimizer_to_arrays,
                       state_to_arrays)
from .layers import softmax
from .model import MACNN, MacnnConfig, as_input_tensor

log = logging.getLogger(__name__)
CHECKPOINT_KIND = "macnn_checkpoint"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("invalid training settings")


@dataclass
class ClassifierCheckpoint:
    model: MACNN
    optimizer: torch.optim.Optimizer
    train_config: TrainConfig
    epoch: int = 0
    best_val_accuracy: float = -1.0
    best_epoch: int = 0
    best_state: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)

    @property
    def config(self) -> MacnnConfig:
        return self.model.cfg

    def best_model(self) -> MACNN:
        """A copy of the model holding the best-validation weights."""
        m = copy.deepcopy(self.model)
        if self.best_state:
            m.load_state_dict(self.best_state)
        m.eval()
        return m


def new_checkpoint(cfg: MacnnConfig, tcfg: TrainConfig, class_names=None) -> ClassifierCheckpoint:
    model = MACNN(cfg, seed=tcfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate, betas=tcfg.adam_betas)
    names = list(class_names) if class_names else [str(i) for i in range(cfg.num_classes)]
    return ClassifierCheckpoint(model, opt, tcfg, best_state=copy.deepcopy(model.state_dict()),
                                class_names=names)


def _as_xy(data, cfg: MacnnConfig):
    if isinstance(data, tuple):
        x, y = data
    else:
        x, y = data, [im.label for im in data]
    x = as_input_tensor(x, cfg)
    y = torch.as_tensor(np.asarray(y, dtype=np.int64))
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatch("image and label counts differ")
    if x.shape[0] == 0:
        raise ValueError("empty data set")
    if y.min() < 0 or y.max() >= cfg.num_classes:
        raise LabelOutOfRange(f"labels must lie in [0, {cfg.num_classes})")
    return x, y


@torch.no_grad()
def _evaluate(model: MACNN, x, y, batch_size: int = 256) -> tuple[float, float]:
    model.eval()
    total, correct = 0.0, 0
    for i in range(0, x.shape[0], batch_size):
        logits = model(x[i:i + batch_size])
        total += F.cross_entropy(logits, y[i:i + batch_size], reduction="sum").item()
        correct += int((logits.argmax(1) == y[i:i + batch_size]).sum())
    return total / x.shape[0], correct / x.shape[0]


def _epoch_order(seed: int, epoch: int, n: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0]))
    return torch.randperm(n, generator=g)


def train_classifier(train, val, cfg: MacnnConfig, tcfg: TrainConfig,
                     checkpoint: ClassifierCheckpoint | None = None, class_names=None,
                     log_path=None, checkpoint_path=None, on_epoch=None) -> ClassifierCheckpoint:
    """Minimize cross-entropy for ``tcfg.epochs`` epochs (counted from epoch 0).

    ``train``/``val`` are GafImage sequences or ``(array, labels)`` tuples.
    Passing an existing ``checkpoint`` resumes it. Shuffling is seeded per
    epoch, so a resumed run retraces an uninterrupted one.
    """
    xt, yt = _as_xy(train, cfg)
    xv, yv = _as_xy(val, cfg)
    ck = checkpoint or new_checkpoint(cfg, tcfg, class_names)
    model, opt = ck.model, ck.optimizer
    while ck.epoch < tcfg.epochs:
        model.train()
        order = _epoch_order(tcfg.seed, ck.epoch, xt.shape[0])
        running, seen = 0.0, 0
        for i in range(0, xt.shape[0], tcfg.batch_size):
            idx = order[i:i + tcfg.batch_size]
            logits = model(xt[idx])
            loss = F.cross_entropy(logits, yt[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"epoch {ck.epoch + 1}: loss {loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * idx.numel()
            seen += idx.numel()
        val_loss, val_acc = _evaluate(model, xv, yv)
        ck.epoch += 1
        ck.history.append({"epoch": ck.epoch, "train_loss": running / seen,
                           "val_loss": val_loss, "val_accuracy": val_acc})
        if val_acc > ck.best_val_accuracy:
            ck.best_val_accuracy = val_acc
            ck.best_epoch = ck.epoch
            ck.best_state = copy.deepcopy(model.state_dict())
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", ck.epoch,
                 running / seen, val_loss, val_acc)
        if log_path is not None:
            write_history_csv(ck.history, log_path)
        if checkpoint_path is not None:
            save_classifier(ck, checkpoint_path)
        if on_epoch is not None:
            on_epoch(ck)
    return ck


def write_history_csv(history: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["val_accuracy"])])


@torch.no_grad()
def predict(checkpoint: ClassifierCheckpoint | MACNN, images, use_best: bool = True,
            batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """(labels, probabilities); labels are the row-wise argmax of the probabilities."""
    if isinstance(checkpoint, ClassifierCheckpoint):
        model = checkpoint.best_model() if use_best else checkpoint.model
    else:
        model = checkpoint
    model.eval()
    x = as_input_tensor(images, model.cfg, dtype=next(model.parameters()).dtype)
    probs = [softmax(model(x[i:i + batch_size]), dim=1) for i in range(0, x.shape[0], batch_size)]
    p = torch.cat(probs).numpy() if probs else np.zeros((0, model.cfg.num_classes))
    return p.argmax(axis=1), p


def save_classifier(ck: ClassifierCheckpoint, path) -> None:
    arrays = state_to_arrays(ck.model.state_dict(), "model")
    arrays.update(state_to_arrays(ck.best_state, "best"))
    opt_arrays, opt_meta = optimizer_to_arrays(ck.optimizer, "opt")
    arrays.update(opt_arrays)
    meta = {
        "model_config": ck.config.to_dict(),
        "train_config": asdict(ck.train_config),
        "epoch": ck.epoch,
        "best_val_accuracy": ck.best_val_accuracy,
        "best_epoch": ck.best_epoch,
        "history": ck.history,
        "class_names": ck.class_names,
        "optimizer": opt_meta,
    }
    write_container(path, CHECKPOINT_KIND, meta, arrays)


def load_classifier(path) -> ClassifierCheckpoint:
    _, meta, arrays = read_container(path, expect_kind=CHECKPOINT_KIND)
    cfg = MacnnConfig.from_dict(meta["model_config"])
    tcfg = TrainConfig(**meta["train_config"])
    ck = new_checkpoint(cfg, tcfg, meta["class_names"])
    like = ck.model.state_dict()
    ck.model.load_state_dict(arrays_to_state(arrays, "model", like))
    ck.best_state = arrays_to_state(arrays, "best", like)
    optimizer_from_arrays(ck.optimizer, "opt", arrays, meta["optimizer"])
    ck.epoch = meta["epoch"]
    ck.best_val_accuracy = meta["best_val_accuracy"]
    ck.best_epoch = meta["best_epoch"]
    ck.history = meta["history"]
    return ck
