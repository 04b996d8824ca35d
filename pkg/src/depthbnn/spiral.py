"""Two-class spiral dataset with exact seeded reproducibility.

Sampling: t ~ U[0,1], radius u = sqrt(t) (making the squared radius uniform),
class y ~ U{-1,+1}, point x ~ N([y u cos(w u pi/2), y u sin(w u pi/2)],
4e-4 I).  Labels are stored as {0,1}; the latent radii are kept as generation
metadata for distribution diagnostics.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .tape import RandomTape

KS_CRITICAL_1PCT = 1.6276  # asymptotic one-sample Kolmogorov-Smirnov, alpha = 0.01


@dataclass(frozen=True)
class SpiralConfig:
    omega: float
    n: int
    seed: int
    noise_var: float = 4e-4

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.noise_var <= 0:
            raise ValueError("noise_var must be positive")


@dataclass
class LabeledDataset:
    xs: np.ndarray  # (n, 2)
    ys: np.ndarray  # (n,) in {0, 1}
    checksum: str
    config: SpiralConfig | None = None
    radii: np.ndarray | None = field(default=None, repr=False)  # latent u per sample

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.int64)
        if self.xs.shape != (len(self.ys), 2):
            raise ValueError("xs must be n x 2 aligned with ys")
        if not np.all((self.ys == 0) | (self.ys == 1)):
            raise ValueError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.ys)


def data_checksum(xs: np.ndarray, ys: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(xs, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(ys, dtype=np.int64).tobytes())
    return h.hexdigest()


def generate(config: SpiralConfig) -> LabeledDataset:
    """Draw n labeled spiral samples; identical seeds give identical datasets."""
    tape = RandomTape(config.seed)
    t = tape.uniform(config.n)
    u = np.sqrt(t)
    sign = tape.integers(0, 2, config.n) * 2 - 1  # y_n in {-1, +1}
    angle = config.omega * u * (math.pi / 2.0)
    centers = np.stack([sign * u * np.cos(angle), sign * u * np.sin(angle)], axis=1)
    xs = centers + math.sqrt(config.noise_var) * tape.normal((config.n, 2))
    ys = ((sign + 1) // 2).astype(np.int64)
    return LabeledDataset(xs, ys, data_checksum(xs, ys), config=config, radii=u)


def radius_distribution_check(radii: np.ndarray) -> float:
    """Kolmogorov-Smirnov statistic of the squared radii against U[0,1].

    Under correct generation (u = sqrt(t)) the squared radii are uniform;
    compare sqrt(n) * statistic against KS_CRITICAL_1PCT.
    """
    radii = np.asarray(radii, dtype=np.float64)
    if radii.size < 1000:
        raise ValueError(f"need at least 1000 samples, got {radii.size}")
    squared = np.sort(np.square(radii))
    n = squared.size
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    return float(max(np.max(grid_hi - squared), np.max(squared - grid_lo)))


def save_csv(dataset: LabeledDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "y"])
        for (x1, x2), y in zip(dataset.xs, dataset.ys):
            writer.writerow([repr(float(x1)), repr(float(x2)), int(y)])


def load_csv(path) -> LabeledDataset:
    """Read a dataset exported by save_csv; generation metadata is not restored."""
    xs, ys = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["x1", "x2", "y"]:
            raise ValueError(f"unexpected CSV header: {header}")
        for row in reader:
            xs.append([float(row[0]), float(row[1])])
            ys.append(int(row[2]))
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    return LabeledDataset(xs, ys, data_checksum(xs, ys))
