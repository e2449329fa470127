"""Closed-form and Monte-Carlo batch-gradient variance.

Variance of a random vector always means the trace of its covariance.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .importance import (FIXED, FLAT, PER_CLASS, SelectionPlan, build_plan_per_class,
                         intra_class_probabilities, partition)


class DecompositionError(ValueError):
    pass


class GuardError(ValueError):
    pass


@dataclass
class ClassTerms:
    alpha: float
    beta: float
    gamma: float

    @property
    def contribution(self) -> float:
        return self.alpha * (self.beta - self.gamma)


@dataclass
class VarianceDecomposition:
    """``total = sum_y alpha_y * (beta_y - gamma_y)``.

    Flat plans are a single group keyed ``-1`` spanning the whole candidate set.
    """

    terms: dict[int, ClassTerms]
    unallocated: list[int] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(t.contribution for t in self.terms.values()))

    def to_json(self) -> dict:
        return {"total": self.total,
                "terms": {str(k): {"alpha": t.alpha, "beta": t.beta, "gamma": t.gamma}
                          for k, t in sorted(self.terms.items())},
                "unallocated": list(self.unallocated)}


@dataclass
class McVarianceEstimate:
    n_draws: int
    variance: float
    stderr: float
    mean: np.ndarray


def _beta(grads: np.ndarray, probs: np.ndarray) -> float:
    sq = np.einsum("ij,ij->i", grads, grads)
    bad = (probs <= 0) & (sq > 0)
    if np.any(bad):
        raise DecompositionError("zero selection probability on a sample with nonzero gradient")
    keep = probs > 0
    return float((sq[keep] / probs[keep]).sum() / len(grads) ** 2)


def _gamma(grads: np.ndarray) -> float:
    m = grads.mean(axis=0)
    return float(m @ m)


def closed_form_variance(plan: SelectionPlan, grads: np.ndarray) -> VarianceDecomposition:
    n = plan.n_candidates
    if plan.mode == FIXED:
        return VarianceDecomposition({-1: ClassTerms(0.0, 0.0, 0.0)})
    if plan.mode == FLAT:
        b = plan.batch_size
        if plan.replace:
            terms = ClassTerms(1.0 / b, _beta(grads, plan.flat_probs), _gamma(grads))
        else:
            # uniform without replacement: finite-population correction
            fpc = (n - b) / (n - 1) if n > 1 else 0.0
            sq = float(np.einsum("ij,ij->", grads, grads)) / n
            terms = ClassTerms(fpc / b, sq, _gamma(grads))
        return VarianceDecomposition({-1: terms})

    terms, skipped = {}, []
    for c in sorted(plan.members):
        idx = plan.members[c]
        k = plan.class_sizes.get(c, 0)
        if k == 0:
            skipped.append(c)
            continue
        g = grads[idx]
        terms[c] = ClassTerms(len(idx) ** 2 / (n ** 2 * k), _beta(g, plan.class_probs[c]), _gamma(g))
    return VarianceDecomposition(terms, skipped)


def sample_estimates(plan: SelectionPlan, grads: np.ndarray, n_draws: int, rng) -> np.ndarray:
    """``n_draws`` independent realisations of the weighted batch gradient, one per row.

    Per-class and with-replacement draws are generated as multinomial counts,
    which has the same law as drawing the batch entries one by one.
    """
    rng = np.random.default_rng(rng)
    n, p = grads.shape
    out = np.zeros((n_draws, p))
    if plan.mode == FIXED:
        out[:] = grads[plan.fixed].mean(axis=0)
        return out
    if plan.mode == FLAT:
        b = plan.batch_size
        if plan.replace:
            probs = plan.flat_probs
            keep = probs > 0
            counts = rng.multinomial(b, probs[keep], size=n_draws)
            wg = grads[keep] / (probs[keep] * n)[:, None]
            return counts @ wg / b
        keys = rng.random((n_draws, n))
        chosen = np.argpartition(keys, b - 1, axis=1)[:, :b] if b < n else np.tile(np.arange(n), (n_draws, 1))
        counts = np.zeros((n_draws, n))
        np.put_along_axis(counts, chosen, 1.0, axis=1)
        return counts @ grads / b
    for c in sorted(plan.members):
        k = plan.class_sizes.get(c, 0)
        if k == 0:
            continue
        idx = plan.members[c]
        probs = plan.class_probs[c]
        keep = probs > 0
        counts = rng.multinomial(k, probs[keep], size=n_draws)
        wg = grads[idx][keep] / (probs[keep] * len(idx))[:, None]
        out += (len(idx) / (n * k)) * (counts @ wg)
    return out


def trace_variance(samples: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Unbiased trace variance of the rows, its standard error and the row mean."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    dev = samples - mean
    z = np.einsum("ij,ij->i", dev, dev) * n / (n - 1)
    return float(z.mean()), float(z.std(ddof=1) / math.sqrt(n)), mean


def mc_variance(plan: SelectionPlan, grads: np.ndarray, n_draws: int = 100_000, seed=0) -> McVarianceEstimate:
    if n_draws < 2:
        raise ValueError("need at least 2 draws")
    v, se, mean = trace_variance(sample_estimates(plan, grads, n_draws, seed))
    return McVarianceEstimate(n_draws, v, se, mean)


@dataclass
class IdentityCheck:
    lhs: float
    rhs: float
    residual: float
    stderr: float
    variance: float

    @property
    def residual_in_se(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.residual == 0 else math.inf
        return self.residual / self.stderr


def distance_identity_check(w_t, w_ref, plan: SelectionPlan, grads: np.ndarray, lr: float,
                            n_draws: int = 100_000, seed=0) -> IdentityCheck:
    """Expected one-step distance reduction versus its variance-based expression.

    Both sides are evaluated on the same draws. ``residual`` and ``stderr`` are
    normalised by ``max(|lhs|, |rhs|, 1e-12)``; ``stderr`` combines the
    standard errors of both sides in quadrature.
    """
    w_t = np.asarray(w_t, dtype=np.float64)
    w_ref = np.asarray(w_ref, dtype=np.float64)
    g_hats = sample_estimates(plan, grads, n_draws, seed)
    d = w_t - w_ref
    after = d[None, :] - lr * g_hats
    per_draw = float(d @ d) - np.einsum("ij,ij->i", after, after)
    lhs = float(per_draw.mean())
    var, var_se, _ = trace_variance(g_hats)
    full = grads.mean(axis=0)
    rhs = -lr ** 2 * var + 2 * lr * float(d @ full) - lr ** 2 * float(full @ full)
    se = math.hypot(float(per_draw.std(ddof=1)) / math.sqrt(n_draws), lr ** 2 * var_se)
    scale = max(abs(lhs), abs(rhs), 1e-12)
    return IdentityCheck(lhs, rhs, abs(lhs - rhs) / scale, se / scale, var)


def class_spread_terms(labels, grads: np.ndarray) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Per class: sizes |S_y| and ``beta*_y - gamma_y`` under norm-proportional sampling."""
    members = partition(labels)
    classes = sorted(members)
    sizes = np.array([len(members[c]) for c in classes], dtype=np.float64)
    spread = []
    for c in classes:
        g = grads[members[c]]
        probs = intra_class_probabilities(np.linalg.norm(g, axis=1))
        spread.append(max(_beta(g, probs) - _gamma(g), 0.0))
    return classes, sizes, np.array(spread)


def allocation_variance(sizes: np.ndarray, spread: np.ndarray, alloc, total: int | None = None) -> float:
    """``sum_y |S_y|^2 (beta*_y - gamma_y) / (|S|^2 b_y)`` for real or integer ``b``.

    A class with zero allocation costs nothing when its spread is zero and is
    infinite otherwise.
    """
    alloc = np.asarray(alloc, dtype=np.float64)
    n = sizes.sum() if total is None else total
    out = 0.0
    for s, d, b in zip(sizes, spread, alloc):
        if b <= 0:
            if d > 0:
                return math.inf
            continue
        out += s * s * d / b
    return out / n ** 2


def relaxed_optimum(sizes: np.ndarray, spread: np.ndarray, batch_size: int) -> np.ndarray:
    """Real-valued allocation minimising :func:`allocation_variance` on the simplex."""
    w = sizes * np.sqrt(spread)
    if w.sum() <= 0:
        return batch_size * sizes / sizes.sum()
    return batch_size * w / w.sum()


def compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative integers summing to ``total``."""
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 1 - prev - 1)
        yield tuple(out)


def exhaustive_allocation_search(labels, grads: np.ndarray, batch_size: int,
                                 guard: int = 100_000) -> tuple[dict[int, int], float]:
    classes, sizes, spread = class_spread_terms(labels, grads)
    k = len(classes)
    if math.comb(batch_size + k - 1, k - 1) > guard:
        raise GuardError(f"{k} classes with batch {batch_size} exceeds {guard} compositions")
    best, best_v = None, math.inf
    for comp in compositions(batch_size, k):
        v = allocation_variance(sizes, spread, comp)
        if v < best_v:
            best, best_v = comp, v
    if best is None:
        raise GuardError("no finite-variance allocation exists for this batch size")
    return dict(zip(classes, best)), best_v


def single_move_delta(sizes: np.ndarray, spread: np.ndarray, alloc) -> float:
    """Largest finite variance change from moving one slot between two classes."""
    alloc = np.asarray(alloc, dtype=np.int64)
    base = allocation_variance(sizes, spread, alloc)
    worst = 0.0
    for i, j in itertools.permutations(range(len(alloc)), 2):
        if alloc[i] == 0:
            continue
        moved = alloc.copy()
        moved[i] -= 1
        moved[j] += 1
        v = allocation_variance(sizes, spread, moved)
        if math.isfinite(v) and math.isfinite(base):
            worst = max(worst, abs(v - base))
    return worst


def plan_with_allocation(labels, grads: np.ndarray, alloc: dict[int, int]) -> SelectionPlan:
    return build_plan_per_class(labels, sum(alloc.values()), alloc, grads)
