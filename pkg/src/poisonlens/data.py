"""Labeled datasets with per-sample poison provenance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, EmptyDataset


@dataclass(frozen=True)
class LabeledDataset:
    """Design matrix, targets, and per-sample poison flags.

    ``X`` has one row per sample (images are stored flattened).  ``y`` holds
    regression targets or integer class labels.  ``poison_flags`` marks the
    samples injected by an attacker; ``seed`` records the generator seed the
    dataset was built from, when there was one.
    """

    X: np.ndarray
    y: np.ndarray
    poison_flags: np.ndarray = field(default=None)  # type: ignore[assignment]
    seed: int | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionMismatch(f"X must be 2-D, got shape {X.shape}")
        y = np.asarray(self.y)
        if y.shape != (X.shape[0],):
            raise DimensionMismatch(
                f"y has shape {y.shape}, expected ({X.shape[0]},)"
            )
        flags = self.poison_flags
        if flags is None:
            flags = np.zeros(X.shape[0], dtype=bool)
        else:
            flags = np.asarray(flags, dtype=bool)
            if flags.shape != (X.shape[0],):
                raise DimensionMismatch(
                    f"poison_flags has shape {flags.shape}, expected ({X.shape[0]},)"
                )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "poison_flags", flags)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def clean_subset(self) -> "LabeledDataset":
        keep = ~self.poison_flags
        return LabeledDataset(self.X[keep], self.y[keep], seed=self.seed)

    def poison_subset(self) -> "LabeledDataset":
        keep = self.poison_flags
        return LabeledDataset(
            self.X[keep], self.y[keep], np.ones(int(keep.sum()), dtype=bool),
            seed=self.seed,
        )

    def require_nonempty(self):
        if self.n_samples == 0:
            raise EmptyDataset("dataset has no samples")
