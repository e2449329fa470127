"""Sample/class importance, selection plans and weighted batch drawing.

A plan is built over a candidate set given as parallel arrays ``labels`` (n,)
and ``grads`` (n, p). Per-class plans (C-IS) fix how many draws each class
gets and sample within a class proportionally to gradient norm; flat plans
(IS, uniform, RS) draw over the whole set; fixed plans (loss/entropy
heuristics) pick a deterministic top-k.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STRATEGIES = ("cis", "is", "rs", "hl", "ll", "ce")

PER_CLASS = "per_class"
FLAT = "flat"
FIXED = "fixed"


class SelectionError(ValueError):
    pass


@dataclass
class ClassGradientSummary:
    label: int
    count: int
    mean_grad: np.ndarray
    mean_norm: float
    mean_sq_norm: float


@dataclass
class SelectionPlan:
    strategy: str
    mode: str
    batch_size: int
    labels: np.ndarray
    members: dict[int, np.ndarray]
    class_sizes: dict[int, int]
    class_probs: dict[int, np.ndarray] = field(default_factory=dict)
    flat_probs: np.ndarray | None = None
    replace: bool = True
    fixed: np.ndarray | None = None

    @property
    def n_candidates(self) -> int:
        return len(self.labels)

    def to_json(self) -> dict:
        out = {
            "strategy": self.strategy,
            "mode": self.mode,
            "batch_size": self.batch_size,
            "class_sizes": {str(k): int(v) for k, v in sorted(self.class_sizes.items())},
            "members": {str(k): v.tolist() for k, v in sorted(self.members.items())},
        }
        if self.mode == PER_CLASS:
            out["class_probs"] = {str(k): v.tolist() for k, v in sorted(self.class_probs.items())}
        elif self.mode == FLAT:
            out["flat_probs"] = self.flat_probs.tolist()
            out["replace"] = self.replace
        else:
            out["fixed"] = self.fixed.tolist()
        return out


@dataclass
class WeightedBatch:
    """Drawn samples with their unbiasedness weights.

    ``ids`` index into the candidate set the plan was built on.
    ``class_totals`` holds |S_y| and ``total`` |S|; ``class_hist`` the realized
    number of draws per class.
    """

    mode: str
    ids: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    class_hist: dict[int, int]
    class_totals: dict[int, int]
    total: int
    features: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)


def partition(labels) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def sample_importance(g) -> float:
    if hasattr(g, "grad"):
        return float(g.norm)
    return float(np.linalg.norm(g))


def summarize_class(grads: np.ndarray, label: int = 0) -> ClassGradientSummary:
    grads = np.atleast_2d(grads)
    n = grads.shape[0]
    if n == 0:
        return ClassGradientSummary(label, 0, np.zeros(grads.shape[1]), 0.0, 0.0)
    norms = np.linalg.norm(grads, axis=1)
    return ClassGradientSummary(label, n, grads.mean(axis=0), float(norms.mean()),
                                float((norms ** 2).mean()))


def class_importance(summary: ClassGradientSummary) -> float:
    """``|S_y| * sqrt(E[|g|]^2 - |E[g]|^2)``, radicand clamped at zero."""
    if summary.count == 0:
        return 0.0
    radicand = summary.mean_norm ** 2 - float(summary.mean_grad @ summary.mean_grad)
    return summary.count * float(np.sqrt(max(radicand, 0.0)))


def _largest_remainder(targets: np.ndarray, total: int) -> np.ndarray:
    sizes = np.floor(targets).astype(np.int64)
    short = total - int(sizes.sum())
    if short > 0:
        rem = targets - sizes
        # stable sort on -rem: equal remainders go to the lower class index
        order = np.argsort(-rem, kind="stable")
        sizes[order[:short]] += 1
    return sizes


def allocate_batch_sizes(importances, total: int, class_counts=None,
                         replace: bool = True, required=None) -> np.ndarray:
    """Integer batch sizes proportional to class importance.

    Largest-remainder rounding with ties to the lower index. When every
    importance is zero the split is proportional to ``class_counts``. A class
    with positive importance that rounds to zero takes one slot from the class
    whose allocation most exceeds its real-valued target, provided enough
    slots exist; otherwise the sampled estimator would miss that class.
    ``required`` marks further classes that need a slot under the same rule,
    e.g. a zero-importance class whose mean gradient is nonzero.
    """
    if total < 1:
        raise ValueError("batch size must be >= 1")
    imp = np.asarray(importances, dtype=np.float64)
    if np.any(imp < 0):
        raise ValueError("importances must be non-negative")
    counts = np.ones_like(imp) if class_counts is None else np.asarray(class_counts, np.float64)
    weight = imp if imp.sum() > 0 else counts
    if weight.sum() <= 0:
        raise SelectionError("no class has data")
    targets = total * weight / weight.sum()
    sizes = _largest_remainder(targets, total)

    positive = weight > 0
    if required is not None:
        positive = positive | np.asarray(required, dtype=bool)
    if positive.sum() <= total:
        for y in np.flatnonzero(positive & (sizes == 0)):
            donors = np.flatnonzero(sizes >= 2)
            if donors.size == 0:
                break
            d = donors[np.argmax((sizes - targets)[donors])]
            sizes[d] -= 1
            sizes[y] += 1

    if not replace and class_counts is not None:
        cap = np.asarray(class_counts, dtype=np.int64)
        sizes = _cap_sizes(sizes, cap, targets)
    return sizes


def _cap_sizes(sizes: np.ndarray, cap: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if cap.sum() < sizes.sum():
        raise SelectionError("batch larger than candidate set without replacement")
    sizes = np.minimum(sizes, cap)
    while sizes.sum() < targets.sum() - 1e-9:
        room = np.flatnonzero(sizes < cap)
        y = room[np.argmax((targets - sizes)[room])]
        sizes[y] += 1
    return sizes


def intra_class_probabilities(norms) -> np.ndarray:
    """Probabilities proportional to gradient norm; uniform if all norms vanish."""
    norms = np.asarray(norms, dtype=np.float64)
    if norms.size == 0:
        raise SelectionError("empty class")
    s = norms.sum()
    if s <= 0:
        return np.full(norms.size, 1.0 / norms.size)
    return norms / s


def _check_candidates(labels, grads, batch_size):
    labels = np.asarray(labels)
    if labels.size == 0:
        raise SelectionError("empty candidate set")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if grads is not None and len(grads) != len(labels):
        raise SelectionError("one gradient per candidate required")
    return labels


def build_plan_cis(labels, grads: np.ndarray, batch_size: int, replace: bool = True) -> SelectionPlan:
    labels = _check_candidates(labels, grads, batch_size)
    members = partition(labels)
    classes = sorted(members)
    norms = np.linalg.norm(grads, axis=1)
    imps = [class_importance(summarize_class(grads[members[c]], c)) for c in classes]
    counts = [len(members[c]) for c in classes]
    # a zero-importance class still needs one draw to recover a nonzero mean
    required = [bool(np.any(grads[members[c]].mean(axis=0))) for c in classes]
    sizes = allocate_batch_sizes(imps, batch_size, counts, replace=replace, required=required)
    return SelectionPlan(
        strategy="cis", mode=PER_CLASS, batch_size=batch_size, labels=labels,
        members=members, class_sizes={c: int(s) for c, s in zip(classes, sizes)},
        class_probs={c: intra_class_probabilities(norms[members[c]]) for c in classes},
        replace=replace)


def build_plan_per_class(labels, batch_size: int, class_sizes: dict[int, int],
                         grads: np.ndarray | None = None, strategy: str = "cis") -> SelectionPlan:
    """Per-class plan with a caller-chosen allocation.

    Intra-class probabilities follow gradient norms when ``grads`` is given,
    otherwise they are uniform.
    """
    labels = _check_candidates(labels, grads, batch_size)
    members = partition(labels)
    if sum(class_sizes.values()) != batch_size:
        raise SelectionError("class sizes must sum to the batch size")
    probs = {}
    for c, idx in members.items():
        if grads is None:
            probs[c] = np.full(len(idx), 1.0 / len(idx))
        else:
            probs[c] = intra_class_probabilities(np.linalg.norm(grads[idx], axis=1))
    return SelectionPlan(strategy=strategy, mode=PER_CLASS, batch_size=batch_size,
                         labels=labels, members=members,
                         class_sizes={c: int(class_sizes.get(c, 0)) for c in members},
                         class_probs=probs)


def _flat_plan(strategy, labels, probs, batch_size, replace) -> SelectionPlan:
    members = partition(labels)
    classes = sorted(members)
    expected = np.array([probs[members[c]].sum() for c in classes]) * batch_size
    sizes = _largest_remainder(expected, batch_size)
    return SelectionPlan(strategy=strategy, mode=FLAT, batch_size=batch_size, labels=labels,
                         members=members, class_sizes={c: int(s) for c, s in zip(classes, sizes)},
                         flat_probs=probs, replace=replace)


def build_plan_is(labels, grads: np.ndarray, batch_size: int) -> SelectionPlan:
    """Flat importance sampling, ``P(x)`` proportional to ``|g_x|`` over all candidates.

    ``class_sizes`` holds the rounded expected per-class counts; realized
    counts are recorded on the drawn batch.
    """
    labels = _check_candidates(labels, grads, batch_size)
    probs = intra_class_probabilities(np.linalg.norm(grads, axis=1))
    return _flat_plan("is", labels, probs, batch_size, replace=True)


def build_plan_uniform(labels, batch_size: int, replace: bool = True) -> SelectionPlan:
    labels = _check_candidates(labels, None, batch_size)
    if not replace and batch_size > len(labels):
        raise SelectionError("batch larger than candidate set without replacement")
    probs = np.full(len(labels), 1.0 / len(labels))
    return _flat_plan("rs" if not replace else "uniform", labels, probs, batch_size, replace)


def build_plan_baseline(kind: str, labels, batch_size: int, logits: np.ndarray | None = None) -> SelectionPlan:
    """Random (without replacement) or top-k loss/entropy heuristics; all weights 1."""
    from .model import cross_entropy, entropy

    labels = _check_candidates(labels, None, batch_size)
    if batch_size > len(labels):
        raise SelectionError(f"{kind}: batch {batch_size} exceeds {len(labels)} candidates")
    if kind == "rs":
        return build_plan_uniform(labels, batch_size, replace=False)
    if kind not in ("hl", "ll", "ce"):
        raise ValueError(f"unknown baseline {kind!r}")
    if logits is None:
        raise SelectionError(f"{kind} needs model outputs")
    if kind == "ce":
        key = -entropy(logits)
    else:
        losses = cross_entropy(logits, labels)
        key = -losses if kind == "hl" else losses
    chosen = np.sort(np.argsort(key, kind="stable")[:batch_size])
    members = partition(labels)
    sizes = {c: int(np.isin(chosen, idx).sum()) for c, idx in members.items()}
    return SelectionPlan(strategy=kind, mode=FIXED, batch_size=batch_size, labels=labels,
                         members=members, class_sizes=sizes, fixed=chosen, replace=False)


def draw_batch(plan: SelectionPlan, rng, features: np.ndarray | None = None) -> WeightedBatch:
    """Draw one batch; ``rng`` is a seed or ``numpy.random.Generator``."""
    rng = np.random.default_rng(rng)
    totals = {c: len(idx) for c, idx in plan.members.items()}
    n = plan.n_candidates
    if plan.mode == PER_CLASS:
        ids, weights = [], []
        for c in sorted(plan.members):
            k = plan.class_sizes.get(c, 0)
            if k == 0:
                continue
            idx, p = plan.members[c], plan.class_probs[c]
            pick = rng.choice(len(idx), size=k, replace=True, p=p)
            ids.append(idx[pick])
            weights.append(1.0 / (p[pick] * len(idx)))
        ids = np.concatenate(ids)
        weights = np.concatenate(weights)
    elif plan.mode == FLAT:
        p = plan.flat_probs
        if plan.replace:
            ids = rng.choice(n, size=plan.batch_size, replace=True, p=p)
            weights = 1.0 / (p[ids] * n)
        else:
            ids = np.sort(rng.choice(n, size=plan.batch_size, replace=False))
            weights = np.ones(len(ids))
    else:
        ids = plan.fixed.copy()
        weights = np.ones(len(ids))
    labels = plan.labels[ids]
    hist = {c: int((labels == c).sum()) for c in sorted(plan.members)}
    return WeightedBatch(mode=PER_CLASS if plan.mode == PER_CLASS else FLAT, ids=ids,
                         labels=labels, weights=weights, class_hist=hist,
                         class_totals=totals, total=n,
                         features=None if features is None else features[ids])


def estimate_coefficients(batch: WeightedBatch) -> np.ndarray:
    """Per-entry multipliers ``c_i`` such that ``g_hat = sum_i c_i g_i``."""
    if batch.mode == PER_CLASS:
        s_y = np.array([batch.class_totals[int(c)] for c in batch.labels], dtype=np.float64)
        b_y = np.array([batch.class_hist[int(c)] for c in batch.labels], dtype=np.float64)
        return batch.weights * s_y / (batch.total * b_y)
    return batch.weights / len(batch)


def weighted_gradient_estimate(batch: WeightedBatch, grads: np.ndarray) -> np.ndarray:
    """Unbiased batch gradient; ``grads`` rows align with the batch entries."""
    grads = np.atleast_2d(grads)
    if grads.shape[0] != len(batch):
        raise ValueError("one gradient row per batch entry required")
    return estimate_coefficients(batch) @ grads
