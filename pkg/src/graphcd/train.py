"""Training loop, evaluation harness, checkpointing, and prediction."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import (
    SampleRecord,
    load_records,
    render_comparison_map,
    to_model_input,
    write_png,
)
from .losses import batch_total_loss_grad
from .metrics import ConfusionCounts, confusion, metrics_report, precision_recall_f1
from .model import BGINet
from .ops import DTYPE, sigmoid
from .optim import AdamW, polynomial_lr


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, parts: dict):
        self.epoch = epoch
        self.batch = batch
        self.parts = parts
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: {parts}"
        )


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Polynomial decay lr * (1 - epoch/total_epochs)^power."""
    return polynomial_lr(cfg.lr, epoch, cfg.total_epochs, cfg.poly_power)


def count_params(model) -> int:
    """Total number of trainable scalar parameters."""
    params = model.params if isinstance(model, BGINet) else model
    return int(sum(v.size for v in params.values()))


@dataclass
class Checkpoint:
    params: dict
    bn_state: dict
    opt_state: dict
    epoch: int
    best_val_f1: float
    config: TrainConfig

    def model(self) -> BGINet:
        return BGINet(self.config.model, params=self.params, state=self.bn_state)

    def save(self, path):
        arrays = {}
        for k, v in self.params.items():
            arrays[f"param/{k}"] = v
        for k, v in self.bn_state.items():
            arrays[f"state/{k}"] = v
        for k, v in self.opt_state.get("m", {}).items():
            arrays[f"opt.m/{k}"] = v
        for k, v in self.opt_state.get("v", {}).items():
            arrays[f"opt.v/{k}"] = v
        arrays["meta/opt_t"] = np.array(self.opt_state.get("t", 0))
        arrays["meta/epoch"] = np.array(self.epoch)
        arrays["meta/best_val_f1"] = np.array(self.best_val_f1)
        arrays["meta/config"] = np.array(json.dumps(asdict(self.config)))
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, expected_config: TrainConfig | None = None) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as npz:
            cfg_dict = json.loads(str(npz["meta/config"]))
            for key in ("stage_channels", "blocks_per_stage"):
                cfg_dict[key] = tuple(cfg_dict[key])
            config = TrainConfig(**cfg_dict)
            if expected_config is not None and \
                    expected_config.model_signature() != config.model_signature():
                raise ValueError(
                    "checkpoint was written with a different model configuration: "
                    f"{config.model_signature()} vs expected "
                    f"{expected_config.model_signature()}"
                )
            params, state, m, v = {}, {}, {}, {}
            for key in npz.files:
                if key.startswith("param/"):
                    params[key[6:]] = npz[key].copy()
                elif key.startswith("state/"):
                    state[key[6:]] = npz[key].copy()
                elif key.startswith("opt.m/"):
                    m[key[6:]] = npz[key].copy()
                elif key.startswith("opt.v/"):
                    v[key[6:]] = npz[key].copy()
            return cls(
                params=params, bn_state=state,
                opt_state={"t": int(npz["meta/opt_t"]), "m": m, "v": v},
                epoch=int(npz["meta/epoch"]),
                best_val_f1=float(npz["meta/best_val_f1"]),
                config=config,
            )


def _records_to_arrays(records: list[SampleRecord]):
    x1 = np.stack([to_model_input(r.image_t1) for r in records])
    x2 = np.stack([to_model_input(r.image_t2) for r in records])
    y = np.stack([r.mask.astype(DTYPE) for r in records])
    return x1, x2, y


def _load_split_dir(cfg: TrainConfig, name: str):
    return load_records(Path(cfg.data_dir) / name)


def train(cfg: TrainConfig, data=None, log=None) -> Checkpoint:
    """Run the full optimization; returns the best-validation checkpoint.

    ``data`` may be a (train_records, val_records) tuple to bypass
    ``cfg.data_dir``. Deterministic for a fixed config and seed under
    single-threaded numerics.
    """
    if data is not None:
        train_records, val_records = data
    else:
        train_records = _load_split_dir(cfg, "train")
        try:
            val_records = _load_split_dir(cfg, "val")
        except FileNotFoundError:
            val_records = []
    if not train_records:
        raise ValueError("training split is empty")

    rng = np.random.default_rng(cfg.seed)
    net = BGINet(cfg.model, rng=rng)
    opt = AdamW(net.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    x1, x2, y = _records_to_arrays(train_records)
    n = len(train_records)
    loss_cfg = cfg.loss

    best = None
    best_f1 = -1.0
    step = 0
    done = False
    epochs = cfg.total_epochs if cfg.total_steps == 0 else int(1e9)
    for epoch in range(epochs):
        lr = lr_at(epoch, cfg)
        perm = rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            if cfg.total_steps > 0:
                lr = polynomial_lr(cfg.lr, step, cfg.total_steps, cfg.poly_power)
            logits, cache = net.forward_batch(x1[idx], x2[idx], train=True)
            loss, dlogits, parts = batch_total_loss_grad(logits, y[idx], loss_cfg)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, bi, parts)
            grads, _ = net.backward_batch(dlogits, cache)
            opt.step(net.params, grads, lr=lr)
            step += 1
            if cfg.total_steps > 0 and step >= cfg.total_steps:
                done = True
                break
        if val_records:
            counts = _accumulate_confusion(net, val_records, cfg.threshold)
            val_f1 = precision_recall_f1(counts).f1
        else:
            val_f1 = 0.0
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr:.2e}  loss {loss:.4f}  val_f1 {val_f1:.2f}")
        if not val_records or val_f1 > best_f1:
            best_f1 = val_f1
            best = Checkpoint(
                params={k: v.copy() for k, v in net.params.items()},
                bn_state={k: v.copy() for k, v in net.bn_state.items()},
                opt_state={"t": opt.t,
                           "m": {k: v.copy() for k, v in opt.m.items()},
                           "v": {k: v.copy() for k, v in opt.v.items()}},
                epoch=epoch, best_val_f1=best_f1, config=cfg,
            )
        if done or (cfg.total_steps == 0 and epoch + 1 >= cfg.total_epochs):
            break
    return best


def _accumulate_confusion(net: BGINet, records, threshold: float,
                          dump_dir=None, batch: int = 16) -> ConfusionCounts:
    counts = ConfusionCounts()
    for start in range(0, len(records), batch):
        chunk = records[start:start + batch]
        x1 = np.stack([to_model_input(r.image_t1) for r in chunk])
        x2 = np.stack([to_model_input(r.image_t2) for r in chunk])
        logits, _ = net.forward_batch(x1, x2, train=False)
        probs = sigmoid(logits)
        for i, rec in enumerate(chunk):
            counts = counts + confusion(probs[i], rec.mask, threshold)
            if dump_dir is not None:
                pred = (probs[i] >= threshold).astype(np.uint8)
                write_png(Path(dump_dir) / f"{rec.id}_pred.png", pred * 255)
                write_png(Path(dump_dir) / f"{rec.id}_diff.png",
                          render_comparison_map(pred, rec.mask))
    return counts


def evaluate(checkpoint: Checkpoint, records, threshold: float = 0.5,
             dump_dir=None):
    """Micro-averaged metrics over a split; optionally dumps per-tile maps."""
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    net = checkpoint.model()
    counts = _accumulate_confusion(net, records, threshold, dump_dir)
    return metrics_report(counts, extra={"tiles": len(records),
                                         "threshold": threshold})


def predict(checkpoint: Checkpoint, image1: np.ndarray, image2: np.ndarray):
    """Change probabilities for one uint8 [H, W, 3] bitemporal pair."""
    net = checkpoint.model()
    return net.forward(to_model_input(image1), to_model_input(image2))
