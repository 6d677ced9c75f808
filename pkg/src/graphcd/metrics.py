"""Confusion counts and micro-averaged precision / recall / F1."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp, fp=self.fp + other.fp,
            fn=self.fn + other.fn, tn=self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class PRF(NamedTuple):
    precision: float  # percent
    recall: float     # percent
    f1: float         # percent
    degenerate: bool


def confusion(pred_prob, gt, threshold: float = 0.5) -> ConfusionCounts:
    """Binarize predictions at the threshold and count pixel outcomes."""
    pred_prob = np.asarray(pred_prob)
    gt = np.asarray(gt)
    if pred_prob.shape != gt.shape:
        raise ValueError(f"prediction {pred_prob.shape} and target {gt.shape} shapes differ")
    pred = pred_prob >= threshold
    pos = gt > 0
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & pos)),
        fp=int(np.count_nonzero(pred & ~pos)),
        fn=int(np.count_nonzero(~pred & pos)),
        tn=int(np.count_nonzero(~pred & ~pos)),
    )


def harmonic_f1(precision: float, recall: float) -> float:
    """F1 from precision/recall given on any common scale (e.g. percent)."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def precision_recall_f1(c: ConfusionCounts) -> PRF:
    """Micro-averaged metrics in percent; zero denominators flag degenerate."""
    degenerate = False
    if c.tp + c.fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = 100.0 * c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = 100.0 * c.tp / (c.tp + c.fn)
    f1 = harmonic_f1(precision, recall)
    return PRF(precision=precision, recall=recall, f1=f1, degenerate=degenerate)


def metrics_report(c: ConfusionCounts, extra: dict | None = None):
    """Line-oriented ``key = value`` text plus a JSON-ready dict."""
    prf = precision_recall_f1(c)
    payload: dict = {
        "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
        "precision": round(prf.precision, 4),
        "recall": round(prf.recall, 4),
        "f1": round(prf.f1, 4),
        "degenerate": prf.degenerate,
    }
    if extra:
        payload.update(extra)
    text = "\n".join(f"{k} = {v}" for k, v in payload.items()) + "\n"
    return text, payload


def write_report(path, c: ConfusionCounts, extra: dict | None = None):
    text, payload = metrics_report(c, extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return text, payload
