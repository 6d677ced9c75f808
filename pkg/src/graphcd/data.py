"""Bitemporal sample records: PNG I/O, tiling, splits, and error-map rendering.

A dataset directory holds three folders with matching file names:
``A/`` (first date), ``B/`` (second date) and ``label/`` (binary mask,
0/255 grayscale PNG binarized at > 127).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .ops import DTYPE


@dataclass
class SampleRecord:
    image_t1: np.ndarray  # uint8 [H, W, 3]
    image_t2: np.ndarray  # uint8 [H, W, 3]
    mask: np.ndarray      # uint8 [H, W] with values in {0, 1}
    id: str

    def __post_init__(self):
        if self.image_t1.shape != self.image_t2.shape:
            raise ValueError(
                f"{self.id}: bitemporal images differ in shape "
                f"{self.image_t1.shape} vs {self.image_t2.shape}"
            )
        if self.mask.shape != self.image_t1.shape[:2]:
            raise ValueError(
                f"{self.id}: mask shape {self.mask.shape} does not match "
                f"images {self.image_t1.shape[:2]}"
            )
        bad = set(np.unique(self.mask)) - {0, 1}
        if bad:
            raise ValueError(f"{self.id}: mask has non-binary values {sorted(bad)}")


def to_model_input(image_uint8: np.ndarray) -> np.ndarray:
    """uint8 [H, W, 3] -> float64 [3, H, W] scaled to [-1, 1]."""
    return (image_uint8.astype(DTYPE) / 127.5 - 1.0).transpose(2, 0, 1)


def tile(record: SampleRecord, size: int = 256, stride: int = 256) -> list[SampleRecord]:
    """Non-overlapping (or strided) grid crops; remainders are dropped."""
    h, w = record.mask.shape
    out = []
    for r, y in enumerate(range(0, h - size + 1, stride)):
        for c, x in enumerate(range(0, w - size + 1, stride)):
            out.append(SampleRecord(
                image_t1=record.image_t1[y:y + size, x:x + size].copy(),
                image_t2=record.image_t2[y:y + size, x:x + size].copy(),
                mask=record.mask[y:y + size, x:x + size].copy(),
                id=f"{record.id}_r{r}_c{c}",
            ))
    return out


def split(records, ratios, seed: int):
    """Deterministic disjoint (train, val, test) partition by seeded shuffle."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) == 0:
        raise ValueError(f"ratios must be three non-negative numbers, got {ratios}")
    total = float(sum(ratios))
    ordered = sorted(records, key=lambda r: r.id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    n = len(shuffled)
    n_train = int(n * ratios[0] / total)
    n_val = int(n * ratios[1] / total)
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


TP_COLOR = (255, 255, 0)
FP_COLOR = (255, 0, 0)
FN_COLOR = (0, 0, 255)
TN_COLOR = (0, 0, 0)


def render_comparison_map(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Color-coded error map: TP yellow, FP red, FN blue, TN black."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and target {gt.shape} shapes differ")
    out = np.zeros((*pred.shape, 3), dtype=np.uint8)
    out[pred & gt] = TP_COLOR
    out[pred & ~gt] = FP_COLOR
    out[~pred & gt] = FN_COLOR
    return out


# ---------------------------------------------------------------------------
# directory I/O
# ---------------------------------------------------------------------------

def _read_rgb(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def _read_mask(path: Path) -> np.ndarray:
    gray = np.asarray(Image.open(path).convert("L"))
    return (gray > 127).astype(np.uint8)


def load_records(root) -> list[SampleRecord]:
    root = Path(root)
    for sub in ("A", "B", "label"):
        if not (root / sub).is_dir():
            raise FileNotFoundError(f"dataset directory {root} is missing {sub}/")
    names = sorted(p.name for p in (root / "A").glob("*.png"))
    if not names:
        raise FileNotFoundError(f"no PNG files under {root}/A")
    records = []
    for name in names:
        records.append(SampleRecord(
            image_t1=_read_rgb(root / "A" / name),
            image_t2=_read_rgb(root / "B" / name),
            mask=_read_mask(root / "label" / name),
            id=Path(name).stem,
        ))
    return records


def save_records(records, root):
    root = Path(root)
    for sub in ("A", "B", "label"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for rec in records:
        Image.fromarray(rec.image_t1).save(root / "A" / f"{rec.id}.png")
        Image.fromarray(rec.image_t2).save(root / "B" / f"{rec.id}.png")
        Image.fromarray((rec.mask * 255).astype(np.uint8)).save(
            root / "label" / f"{rec.id}.png")


def write_png(path, array: np.ndarray):
    Image.fromarray(array).save(path)
