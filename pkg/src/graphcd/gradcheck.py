"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic vs. numeric gradients.

    Relative error for each scalar is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``;
    ``max_rel_error`` keeps the worst scalar per parameter tensor.
    """

    step: float
    tolerance: float
    precision: str = "float64"
    max_rel_error: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values()) if self.max_rel_error else 0.0

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def lines(self) -> list[str]:
        out = []
        for name, err in sorted(self.max_rel_error.items()):
            status = "ok" if err <= self.tolerance else "FAIL"
            out.append(f"{name:<32s} max_rel_err = {err:.3e}  [{status}]")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / denom


def finite_diff_grad(
    loss_fn: Callable[[Mapping[str, np.ndarray]], float],
    params: dict[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    step: float = 1e-3,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Probe every scalar of every parameter with central differences.

    ``loss_fn(params)`` must be a deterministic scalar function of the
    current parameter values. Parameters are perturbed in place and
    restored afterwards. ``analytic`` maps the same names to gradient
    arrays of matching shape.
    """
    report = GradCheckReport(step=step, tolerance=tolerance)
    for name, value in params.items():
        if name not in analytic:
            raise KeyError(f"no analytic gradient supplied for '{name}'")
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != value.shape:
            raise ValueError(
                f"gradient shape {grad.shape} != parameter shape "
                f"{value.shape} for '{name}'"
            )
        numeric = np.empty(value.size, dtype=np.float64)
        flat = value.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            f_plus = float(loss_fn(params))
            flat[i] = saved - step
            f_minus = float(loss_fn(params))
            flat[i] = saved
            numeric[i] = (f_plus - f_minus) / (2.0 * step)
        err = relative_error(grad.reshape(-1), numeric)
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
    return report
