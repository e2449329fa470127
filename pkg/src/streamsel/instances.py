"""Synthetic per-sample gradient sets for the variance checks."""
from __future__ import annotations

import numpy as np


def random_instance(seed, n_classes: int = 3, per_class=(3, 20), dim: int = 10):
    """Random labels/gradients with per-class offsets and spreads.

    ``per_class`` is a fixed count or an inclusive ``(low, high)`` range.
    """
    rng = np.random.default_rng(seed)
    labels, grads = [], []
    for c in range(n_classes):
        n = per_class if np.isscalar(per_class) else int(rng.integers(per_class[0], per_class[1] + 1))
        center = rng.normal(0.0, 1.0, dim)
        spread = rng.uniform(0.1, 2.0)
        scale = rng.uniform(0.5, 2.0, size=(n, 1))
        grads.append(scale * (center + spread * rng.normal(size=(n, dim))))
        labels.append(np.full(n, c))
    return np.concatenate(labels), np.concatenate(grads)


def two_class_instance(seed=0, n: int = 20, dim: int = 2, jitter: float = 0.02):
    """Diverse-direction class 0 and concentrated class 1, both with unit norms.

    Class 0 gradients point in evenly spread directions; class 1 gradients
    are small perturbations of a single direction.
    """
    rng = np.random.default_rng(seed)
    angles = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    g0 = np.zeros((n, dim))
    g0[:, 0], g0[:, 1] = np.cos(angles), np.sin(angles)
    g1 = np.zeros((n, dim))
    g1[:, 0] = 1.0
    g1 += jitter * rng.normal(size=(n, dim))
    g1 /= np.linalg.norm(g1, axis=1, keepdims=True)
    labels = np.repeat([0, 1], n)
    return labels, np.concatenate([g0, g1])


def heterogeneous_instance(seed=0, dim: int = 8):
    """Three classes with different gradient diversity and norm levels.

    Class 0: large, diverse gradients with varying norms; class 1: medium
    norms concentrated around one direction; class 2: small, diverse.
    """
    rng = np.random.default_rng(seed)
    n = 40
    base = rng.normal(size=dim)
    base /= np.linalg.norm(base)

    d0 = rng.normal(size=(n, dim))
    g0 = d0 / np.linalg.norm(d0, axis=1, keepdims=True) * rng.lognormal(1.0, 0.6, (n, 1))
    g1 = (3.0 * base + 0.1 * rng.normal(size=(n, dim))) * rng.lognormal(0.0, 0.6, (n, 1))
    d2 = rng.normal(size=(n, dim))
    g2 = 0.4 * d2 / np.linalg.norm(d2, axis=1, keepdims=True) * rng.lognormal(0.0, 0.6, (n, 1))
    labels = np.repeat([0, 1, 2], n)
    return labels, np.concatenate([g0, g1, g2])
