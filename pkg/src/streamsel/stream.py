"""Synthetic and CSV-replay data streams with optional feature/label noise."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NOISE_KINDS = ("none", "feature", "label")


@dataclass
class Window:
    ids: np.ndarray
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class MixtureSpec:
    """Isotropic Gaussian class clusters; ``spreads[c]`` is class c's std-dev."""

    dim: int = 20
    n_classes: int = 4
    class_sep: float = 1.5
    spreads: list[float] = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])
    seed: int = 0

    def means(self) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 7919])
        return self.class_sep * rng.normal(size=(self.n_classes, self.dim))

    def spread_vector(self) -> np.ndarray:
        s = np.asarray(self.spreads, dtype=np.float64)
        if s.size == 1:
            s = np.full(self.n_classes, s[0])
        if s.size != self.n_classes:
            raise ValueError(f"need {self.n_classes} class spreads, got {s.size}")
        return s

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(rng)
        y = rng.integers(0, self.n_classes, size=n)
        noise = rng.normal(size=(n, self.dim))
        X = self.means()[y] + self.spread_vector()[y, None] * noise
        return X, y


@dataclass
class NoiseSpec:
    kind: str = "none"
    fraction: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("noise fraction must lie in [0, 1]")

    def apply(self, X: np.ndarray, y: np.ndarray, n_classes: int, rng) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "none" or self.fraction == 0:
            return X, y
        rng = np.random.default_rng(rng)
        hit = rng.random(len(y)) < self.fraction
        X, y = X.copy(), y.copy()
        if self.kind == "feature":
            X[hit] += self.sigma * rng.normal(size=(int(hit.sum()), X.shape[1]))
        else:
            # a revised label is always a different class
            shift = rng.integers(1, n_classes, size=int(hit.sum()))
            y[hit] = (y[hit] + shift) % n_classes
        return X, y


class StreamSource:
    """Round-indexed windows of ``velocity`` samples.

    Window t depends only on (seed, t), so paired runs see identical data.
    """

    def __init__(self, velocity: int, seed: int = 0, mixture: MixtureSpec | None = None,
                 csv_path: str | Path | None = None, noise: NoiseSpec | None = None):
        if velocity < 1:
            raise ValueError("velocity must be >= 1")
        self.velocity = velocity
        self.seed = seed
        self.noise = noise or NoiseSpec()
        self.mixture = mixture
        self._X = self._y = None
        if csv_path is not None:
            self._X, self._y = read_stream_csv(csv_path)
        elif mixture is None:
            raise ValueError("need a mixture spec or a CSV path")

    @property
    def dim(self) -> int:
        return self._X.shape[1] if self._X is not None else self.mixture.dim

    @property
    def n_classes(self) -> int:
        return int(self._y.max()) + 1 if self._y is not None else self.mixture.n_classes

    def window(self, t: int) -> Window:
        ids = t * self.velocity + np.arange(self.velocity)
        if self._X is not None:
            rows = ids % len(self._y)
            X, y = self._X[rows], self._y[rows]
        else:
            X, y = self.mixture.sample(self.velocity, [self.seed, t, 0])
        X, y = self.noise.apply(X, y, self.n_classes, [self.seed, t, 1])
        return Window(ids, X, y)

    def held_out(self, n: int) -> Window:
        """Clean evaluation set, disjoint in seed space from the stream windows."""
        if self._X is not None:
            return Window(np.arange(len(self._y)), self._X, self._y)
        X, y = self.mixture.sample(n, [self.seed, 2 ** 31, 0])
        return Window(np.arange(n), X, y)


def write_stream_csv(path, X: np.ndarray, y: np.ndarray):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(X.shape[1])])
        for label, row in zip(y, X):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def read_stream_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label" or header[1:] != [f"f{i}" for i in range(len(header) - 1)]:
            raise ValueError(f"{path}: header must be label,f0,f1,...")
        rows = [r for r in reader if r]
    y = np.array([int(r[0]) for r in rows], dtype=np.int64)
    X = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    if y.size and y.min() < 0:
        raise ValueError(f"{path}: labels must be 0-based non-negative integers")
    return X, y


def generate(mixture: MixtureSpec, n: int, seed: int, noise: NoiseSpec | None = None):
    X, y = mixture.sample(n, [seed, 0, 0])
    if noise is not None:
        X, y = noise.apply(X, y, mixture.n_classes, [seed, 0, 1])
    return X, y
