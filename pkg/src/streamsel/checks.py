"""Oracle checks behind the ``variance-check`` and ``alloc-check`` commands."""
from __future__ import annotations

import numpy as np

from .importance import build_plan_cis, build_plan_is, build_plan_uniform, partition
from .instances import random_instance
from .variance_lab import (allocation_variance, class_spread_terms, closed_form_variance,
                           exhaustive_allocation_search, mc_variance, plan_with_allocation,
                           relaxed_optimum, single_move_delta, distance_identity_check)

MC_SIGMAS = 3.0
IDENTITY_SIGMAS = 5.0
RELAXED_TOL = 1e-9
FLOAT_FLOOR = 1e-12


def strategy_plans(labels, grads, batch_size):
    return {
        "cis": build_plan_cis(labels, grads, batch_size),
        "is": build_plan_is(labels, grads, batch_size),
        "uniform": build_plan_uniform(labels, batch_size),
    }


def compare_closed_form_mc(labels, grads, batch_size, n_draws=100_000, seed=0) -> dict:
    out = {}
    for name, plan in strategy_plans(labels, grads, batch_size).items():
        cf = closed_form_variance(plan, grads).total
        mc = mc_variance(plan, grads, n_draws, seed)
        # rounding floor: a zero-variance estimator leaves only float noise on both sides
        diff = max(abs(cf - mc.variance) - FLOAT_FLOOR * float(np.einsum("ij,ij->i", grads, grads).mean()), 0.0)
        z = diff / mc.stderr if mc.stderr > 0 else (0.0 if diff == 0 else np.inf)
        out[name] = {"closed_form": cf, "mc": mc.variance, "mc_stderr": mc.stderr,
                     "z": float(z), "ok": bool(z <= MC_SIGMAS)}
    return out


def identity_residuals(labels, grads, batch_size, lrs=(0.01, 0.1), n_draws=100_000, seed=0) -> dict:
    rng = np.random.default_rng([seed, 1])
    p = grads.shape[1]
    w_t, w_ref = rng.normal(size=p), rng.normal(size=p)
    plan = build_plan_cis(labels, grads, batch_size)
    out = {}
    for lr in lrs:
        chk = distance_identity_check(w_t, w_ref, plan, grads, lr, n_draws, seed)
        out[str(lr)] = {"lhs": chk.lhs, "rhs": chk.rhs, "residual": chk.residual,
                        "stderr": chk.stderr, "ok": bool(chk.residual <= IDENTITY_SIGMAS * chk.stderr)}
    return out


def relaxed_optimality(sizes, spread, batch_size, n_random=10_000, seed=0) -> dict:
    """Relaxed optimum versus random points on the allocation simplex."""
    best = relaxed_optimum(sizes, spread, batch_size)
    v_best = allocation_variance(sizes, spread, best)
    rng = np.random.default_rng(seed)
    active = spread > 0
    trials = np.zeros((n_random, len(sizes)))
    trials[:, active] = rng.dirichlet(np.ones(int(active.sum())), size=n_random) * batch_size
    v_min = min(allocation_variance(sizes, spread, a) for a in trials)
    return {"relaxed_allocation": best.tolist(), "relaxed_variance": v_best,
            "random_min_variance": v_min,
            "ok": bool(v_best <= v_min + RELAXED_TOL * max(1.0, abs(v_min)))}


def allocation_report(labels, grads, batch_size, n_random=10_000, seed=0, perturb=False) -> dict:
    classes, sizes, spread = class_spread_terms(labels, grads)
    cis = build_plan_cis(labels, grads, batch_size)
    cis_alloc = [cis.class_sizes[c] for c in classes]
    v_cis = allocation_variance(sizes, spread, cis_alloc)
    best, v_best = exhaustive_allocation_search(labels, grads, batch_size)
    delta = single_move_delta(sizes, spread, cis_alloc)
    isp = build_plan_is(labels, grads, batch_size)
    expected_is = [float(isp.flat_probs[isp.members[c]].sum() * batch_size) for c in classes]
    report = {
        "classes": classes,
        "class_sizes": sizes.astype(int).tolist(),
        "beta_minus_gamma": spread.tolist(),
        "cis_allocation": cis_alloc,
        "cis_variance": v_cis,
        "exhaustive_allocation": [best[c] for c in classes],
        "exhaustive_variance": v_best,
        "single_move_delta": delta,
        "is_expected_allocation": expected_is,
        "cis_within_rounding": bool(v_cis <= v_best + delta + 1e-12),
        "relaxed": relaxed_optimality(sizes, spread, batch_size, n_random, seed),
    }
    if len(classes) == 1:
        report["note"] = "single class: the only allocation gives every slot to it"
    if perturb and len(classes) > 1:
        moved = list(cis_alloc)
        src = int(np.argmax(moved))
        dst = int(np.argmin([m if i != src else np.inf for i, m in enumerate(moved)]))
        moved[src] -= 1
        moved[dst] += 1
        v_moved = allocation_variance(sizes, spread, moved)
        plan = plan_with_allocation(labels, grads, dict(zip(classes, moved)))
        report["perturbation"] = {"allocation": moved, "variance": v_moved,
                                  "closed_form": closed_form_variance(plan, grads).total}
        report["perturbation_worse"] = bool(v_moved > v_cis)
    report["ok"] = bool(report["cis_within_rounding"] and report["relaxed"]["ok"])
    return report


def variance_check(seed=42, n_classes=3, per_class=8, dim=6, batch_size=6,
                   n_draws=100_000, perturb=False) -> dict:
    labels, grads = random_instance(seed, n_classes, per_class, dim)
    mc = compare_closed_form_mc(labels, grads, batch_size, n_draws, seed)
    ident = identity_residuals(labels, grads, batch_size, n_draws=n_draws, seed=seed)
    alloc = allocation_report(labels, grads, batch_size, seed=seed, perturb=perturb)
    ok = (all(v["ok"] for v in mc.values()) and all(v["ok"] for v in ident.values())
          and alloc["ok"])
    return {"instance": {"seed": seed, "classes": n_classes, "per_class": per_class,
                         "dim": dim, "batch_size": batch_size, "draws": n_draws,
                         "n_samples": int(len(labels)), "class_counts":
                             {str(c): int(len(i)) for c, i in partition(labels).items()}},
            "closed_form_vs_mc": mc, "identity": ident, "allocation": alloc, "ok": bool(ok)}
