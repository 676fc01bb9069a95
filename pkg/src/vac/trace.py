"""Per-iteration metric records shared by every training loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COLUMNS = (
    "iter",
    "l1_policy_error",
    "linf_value_error",
    "min_residual",
    "objective",
    "negative_residual_flag",
    "samples_consumed",
)


@dataclass
class RunTrace:
    """Thinned metric history plus the final iterate.

    `rows` has one line per recorded iteration with columns COLUMNS.
    `status` is one of max_iters, converged, greedy_stable, exhausted,
    diverged.
    """

    rows: np.ndarray = field(default_factory=lambda: np.empty((0, len(COLUMNS))))
    status: str = "max_iters"
    n_iters: int = 0
    v: np.ndarray | None = None
    logits: np.ndarray | None = None
    q: np.ndarray | None = None
    final_l1: float = np.nan

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return self.rows[:, COLUMNS.index(name)]

    @property
    def iters(self):
        return self.column("iter").astype(np.int64)

    @property
    def l1_error(self):
        return self.column("l1_policy_error")

    @property
    def linf_error(self):
        return self.column("linf_value_error")

    @property
    def min_residual(self):
        return self.column("min_residual")

    @property
    def objective(self):
        return self.column("objective")

    @property
    def negative_flag(self):
        return self.column("negative_residual_flag").astype(bool)

    @property
    def samples(self):
        return self.column("samples_consumed").astype(np.int64)

    @property
    def policy(self):
        if self.logits is None:
            return None
        e = np.exp(self.logits - self.logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
