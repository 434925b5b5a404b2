"""Trigger masks and poisoned-dataset construction.

Two trigger geometries: an L shape near the top-right corner (margin/size
arithmetic below) and a solid square in the lower-right corner.  Each mask
carries both the raw cells, which are written into images at max intensity,
and a zero-mean unit-norm copy of the pattern, which is used only as the
reference direction for spectral overlap measurements.

Poisoning decisions are deterministic per sample: a counter-based Philox
generator keyed by ``sample_index + base_seed`` draws one uniform and
compares it to the poison fraction.  The stochastic variant draws from a
single run-level stream instead.  Samples already carrying the target label
are never modified.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .exceptions import DimensionMismatch, GeometryOutOfBounds

L_SHAPE = "l_shape"
SQUARE = "square"

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class TriggerMask:
    """Trigger geometry plus its raw cells and normalized pattern."""

    geometry: str
    size_img: int
    channels: int
    margin: int
    size: int
    normalized_pattern: np.ndarray  # (channels, size_img, size_img)
    raw_cells: tuple[tuple[int, int, int], ...]  # (channel, row, col)

    @property
    def n_pixels(self) -> int:
        return self.channels * self.size_img * self.size_img

    def indicator(self) -> np.ndarray:
        """0/1 array marking the raw cells, shaped like one image."""
        ind = np.zeros((self.channels, self.size_img, self.size_img))
        for c, r, col in self.raw_cells:
            ind[c, r, col] = 1.0
        return ind

    def to_csv_rows(self) -> list[tuple[int, int, int, float]]:
        """Flat (channel, row, col, value) rows of the normalized pattern."""
        rows = []
        for c in range(self.channels):
            for r in range(self.size_img):
                for col in range(self.size_img):
                    rows.append((c, r, col, float(self.normalized_pattern[c, r, col])))
        return rows


def _normalize(raw: np.ndarray) -> np.ndarray:
    pattern = raw - raw.mean()
    return pattern / (np.linalg.norm(pattern) + 1e-8)


def make_l_mask(size_img: int = 32, channels: int = 3, margin: int = 3,
                size: int = 2) -> TriggerMask:
    """L-shaped trigger near the top-right corner.

    The vertical arm occupies rows [margin, margin+size) in the column at the
    midpoint of the right-margin slice; the horizontal arm occupies columns
    [size_img-margin-size, size_img-margin) in the row at the midpoint of the
    top-margin slice.  The arms share one cell, so each channel carries
    2*size - 1 raw cells.
    """
    if margin + size > size_img or margin < 0 or size < 1:
        raise GeometryOutOfBounds(
            f"L mask margin={margin}, size={size} outside {size_img}px image"
        )
    ys = slice(margin, margin + size)
    xs = slice(size_img - margin - size, size_img - margin)
    cy = (ys.start + ys.stop - 1) // 2
    cx = (xs.start + xs.stop - 1) // 2

    raw = np.zeros((channels, size_img, size_img))
    raw[:, ys, cx] = 1.0
    raw[:, cy, xs] = 1.0
    cells = tuple(
        (c, int(r), int(col))
        for c in range(channels)
        for r, col in zip(*np.nonzero(raw[c]))
    )
    return TriggerMask(
        geometry=L_SHAPE, size_img=size_img, channels=channels,
        margin=margin, size=size, normalized_pattern=_normalize(raw),
        raw_cells=cells,
    )


def make_square_mask(size_img: int = 28, channels: int = 1,
                     side: int = 4) -> TriggerMask:
    """Solid side x side square in the lower-right corner of the image."""
    if side > size_img or side < 1:
        raise GeometryOutOfBounds(
            f"square side={side} outside {size_img}px image"
        )
    block = slice(size_img - side, size_img)
    raw = np.zeros((channels, size_img, size_img))
    raw[:, block, block] = 1.0
    cells = tuple(
        (c, int(r), int(col))
        for c in range(channels)
        for r, col in zip(*np.nonzero(raw[c]))
    )
    return TriggerMask(
        geometry=SQUARE, size_img=size_img, channels=channels,
        margin=0, size=side, normalized_pattern=_normalize(raw),
        raw_cells=cells,
    )


@dataclass
class PoisonPolicy:
    """Fraction-based poisoning policy.

    In deterministic mode the decision for a sample depends only on
    (index, base_seed, theta, label); re-running a build yields identical
    poison sets across process restarts.  In stochastic mode decisions come
    from one run-level stream seeded by ``global_seed``; access to the stream
    is serialised.
    """

    theta: float
    target_class: int
    mode: str = DETERMINISTIC
    base_seed: int = 42
    global_seed: int = 0
    _rng: np.random.Generator | None = field(default=None, init=False,
                                             repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False,
                                  repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta={self.theta} outside [0, 1)")
        if self.mode not in (DETERMINISTIC, STOCHASTIC):
            raise ValueError(f"unknown mode {self.mode!r}")

    def _stream(self) -> np.random.Generator:
        if self._rng is None:
            self._rng = np.random.Generator(np.random.Philox(self.global_seed))
        return self._rng


def poison_decision(idx: int, label, policy: PoisonPolicy) -> bool:
    """Whether sample ``idx`` with ``label`` gets poisoned under the policy."""
    if label == policy.target_class:
        return False
    if policy.mode == DETERMINISTIC:
        rng = np.random.Generator(np.random.Philox(key=idx + policy.base_seed))
        return bool(rng.random() < policy.theta)
    with policy._lock:
        return bool(policy._stream().random() < policy.theta)


def apply_trigger(image: np.ndarray, mask: TriggerMask) -> np.ndarray:
    """Copy of ``image`` with the raw trigger cells set to max intensity (1.0).

    Accepts (channels, H, W) or, for single-channel masks, (H, W).
    Idempotent: re-triggering an image changes nothing.
    """
    image = np.asarray(image, dtype=np.float64)
    squeeze = False
    if image.ndim == 2 and mask.channels == 1:
        image = image[None, :, :]
        squeeze = True
    if image.shape != (mask.channels, mask.size_img, mask.size_img):
        raise DimensionMismatch(
            f"image shape {image.shape}, mask expects "
            f"({mask.channels}, {mask.size_img}, {mask.size_img})"
        )
    out = image.copy()
    for c, r, col in mask.raw_cells:
        out[c, r, col] = 1.0
    return out[0] if squeeze else out


def poison_dataset(base: LabeledDataset, mask: TriggerMask,
                   policy: PoisonPolicy, mean=None, std=None
                   ) -> tuple[LabeledDataset, np.ndarray]:
    """Poison a fraction of the non-target samples of ``base``.

    Selected rows get the trigger applied in image space and their label
    overwritten with the target class.  When ``mean``/``std`` are given,
    normalisation is applied to every sample AFTER triggering, so poisoned
    cells end at (1.0 - mean) / std.  Rows of ``base.X`` must be flattened
    (channels, size_img, size_img) images in mask geometry.
    """
    base.require_nonempty()
    shape = (mask.channels, mask.size_img, mask.size_img)
    if base.n_features != mask.n_pixels:
        raise DimensionMismatch(
            f"{base.n_features} features per row, mask needs {mask.n_pixels}"
        )
    X = base.X.copy()
    y = base.y.copy()
    flags = np.zeros(base.n_samples, dtype=bool)
    for idx in range(base.n_samples):
        if poison_decision(idx, y[idx], policy):
            img = apply_trigger(X[idx].reshape(shape), mask)
            X[idx] = img.ravel()
            y[idx] = policy.target_class
            flags[idx] = True
    if mean is not None or std is not None:
        mean_arr = np.broadcast_to(np.asarray(0.0 if mean is None else mean,
                                              dtype=np.float64).reshape(-1, 1, 1),
                                   shape).ravel()
        std_arr = np.broadcast_to(np.asarray(1.0 if std is None else std,
                                             dtype=np.float64).reshape(-1, 1, 1),
                                  shape).ravel()
        X = (X - mean_arr) / std_arr
    poison_indices = np.nonzero(flags)[0]
    return LabeledDataset(X, y, flags, seed=base.seed), poison_indices
