from __future__ import annotations

import numpy as np


class RunningNormalizer:
    """Per-feature running mean/std; outputs are clipped to +-``clip``."""

    def __init__(self, size: int, eps: float = 0.01, clip: float = 5.0):
        self.size = size
        self.eps = eps
        self.clip = clip
        self.total = np.zeros(size)
        self.total_sq = np.zeros(size)
        self.count = np.zeros(1)
        self.mean = np.zeros(size)
        self.std = np.ones(size)

    def update(self, rows):
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, self.size)
        self.total += rows.sum(axis=0)
        self.total_sq += (rows * rows).sum(axis=0)
        self.count += rows.shape[0]
        self.recompute()

    def recompute(self):
        n = max(float(self.count[0]), 1.0)
        self.mean = self.total / n
        var = np.maximum(self.eps**2, self.total_sq / n - self.mean**2)
        self.std = np.sqrt(var)

    def __call__(self, x):
        return np.clip((np.asarray(x, dtype=np.float64) - self.mean) / self.std, -self.clip, self.clip)
