"""Statistical property checks behind the ``verify`` command.

Each suite returns a list of check records: plain dicts with ``name``,
``passed``, the measured and reference values, and the bound used.
"""
from __future__ import annotations

import math

import numpy as np

from .mathcore import RngStream, sigm, softplus, stream_id
from .oracle import (
    EnumerableProblem,
    centered_estimator,
    exact_estimator_moments,
    exact_grad,
    mc_estimator_stats,
    optimal_baseline,
    random_single_layer_problem,
    random_smooth_problem,
    reinforce_estimator,
    straight_through_estimator,
)
from .units import noisy_rectifier_forward, unit_statistics


def _check(name, passed, **values):
    return {"name": name, "passed": bool(passed), **{k: _jsonable(v) for k, v in values.items()}}


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def noisy_rectifier_suite(n: int = 1_000_000, seed: int = 0, grid=(-2.0, 0.0, 2.0)) -> list:
    """Logistic-noise rectifier: firing probability sigm(a) and mean softplus(a)."""
    out = []
    for a in grid:
        act = noisy_rectifier_forward(np.full(n, a), RngStream(seed, stream_id("prop1", int(a * 1000) + 10**6)),
                                      "logistic")
        on = (act.h > 0).astype(np.float64)
        se_p = on.std(ddof=1) / math.sqrt(n)
        se_m = act.h.std(ddof=1) / math.sqrt(n)
        out.append(_check(f"noisy_rectifier.p_active[a={a:g}]", abs(on.mean() - sigm(a)) <= 5 * se_p,
                          measured=on.mean(), exact=sigm(a), bound=5 * se_p))
        out.append(_check(f"noisy_rectifier.mean[a={a:g}]", abs(act.h.mean() - softplus(a)) <= 5 * se_m,
                          measured=act.h.mean(), exact=softplus(a), bound=5 * se_m))
    return out


def sts_suite(grid=(-2.0, -4.0, -6.0, -8.0)) -> list:
    """Two-atom identities and the shrinking first-order residual."""
    out = []
    residuals = []
    for a in grid:
        p = sigm(a)
        root = math.sqrt(p)
        atoms = np.array([0.0, root])
        probs = np.array([1.0 - root, root])
        mean = float(atoms @ probs)
        p_active = float(probs[1])
        stats = unit_statistics("sts", a)
        out.append(_check(f"sts.mean[a={a:g}]", abs(mean - p) <= 1e-12 and abs(stats.mean - p) <= 1e-12,
                          measured=mean, exact=p, bound=1e-12))
        out.append(_check(f"sts.p_active[a={a:g}]", abs(p_active - root) <= 1e-12,
                          measured=p_active, exact=root, bound=1e-12))
        ef = float((atoms**2) @ probs)
        residuals.append(abs(ef - p**2) / root)
    decreasing = all(x > y for x, y in zip(residuals, residuals[1:]))
    out.append(_check("sts.residual_decreasing", decreasing, measured=residuals, grid=list(grid)))
    out.append(_check("sts.residual_small", residuals[-1] < 0.02, measured=residuals[-1], bound=0.02))
    return out


def unbiasedness_suite(n_problems: int = 25, n: int = 1_000_000, seed: int = 0, bias: float = 0.0) -> list:
    """Exact and Monte Carlo mean of the REINFORCE estimate against the exact gradient."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    est = reinforce_estimator(bias)
    out = []
    for j in range(n_problems):
        k = int(rng.integers(1, 4))
        prob = random_smooth_problem(rng, k)
        for i in range(k):
            g = exact_grad(prob, i)
            mean, _ = exact_estimator_moments(est, prob, i)
            stats = mc_estimator_stats(est, prob, i, n, seed=seed + 1000 * j + i)
            out.append(_check(f"reinforce.exact_mean[problem={j},unit={i}]", abs(mean - g) <= 1e-10,
                              measured=mean, exact=g, bound=1e-10))
            out.append(_check(f"reinforce.mc_mean[problem={j},unit={i}]",
                              abs(stats.mean - g) <= 4 * stats.standard_error,
                              measured=stats.mean, exact=g, bound=4 * stats.standard_error))
    return out


def baseline_suite(seed: int = 0, n_random: int = 20) -> list:
    """Optimal baseline on the linear-loss unit, plus invariance and variance reduction."""
    out = []
    prob = EnumerableProblem(loss=lambda h: float(h[0]), a=[0.0])
    grid = np.linspace(-1.0, 2.0, 41)
    variances = np.array([exact_estimator_moments(centered_estimator(b), prob, 0)[1] for b in grid])
    best = float(grid[variances.argmin()])
    out.append(_check("baseline.grid_minimum", abs(best - 0.5) < 1e-12, measured=best, exact=0.5))
    ratio = optimal_baseline(prob, 0)
    p = 0.5
    closed = (p * (1 - p) ** 2) / (p * (1 - p))
    out.append(_check("baseline.closed_form", abs(ratio - closed) <= 1e-10, measured=ratio, exact=closed, bound=1e-10))

    rng = np.random.Generator(np.random.Philox(key=seed + 17))
    for j in range(n_random):
        k = int(rng.integers(1, 4))
        pr = random_smooth_problem(rng, k)
        i = int(rng.integers(0, k))
        m0, v0 = exact_estimator_moments(reinforce_estimator(), pr, i)
        const = float(rng.normal(0, 3))
        m1, _ = exact_estimator_moments(centered_estimator(const), pr, i)
        out.append(_check(f"baseline.invariance[problem={j}]", abs(m1 - m0) <= 1e-10,
                          measured=m1, exact=m0, bound=1e-10))
        lbar = optimal_baseline(pr, i)
        _, v_opt = exact_estimator_moments(centered_estimator(lbar), pr, i)
        _, v_near = zip(*[exact_estimator_moments(centered_estimator(lbar + d), pr, i)
                          for d in (-1.0, -0.5, -0.1, 0.1, 0.5, 1.0)])
        out.append(_check(f"baseline.variance_reduction[problem={j}]",
                          v_opt < v0 and all(v_opt <= v for v in v_near),
                          measured=v_opt, uncentered=v0, optimal_baseline=lbar))
    return out


def st_sign_suite(n_problems: int = 100, seed: int = 0, min_grad: float = 1e-4, required: int = 95):
    """Sign agreement of the plain straight-through mean with the exact gradient.

    Returns the check records and the list of disagreeing instances.
    """
    rng = np.random.Generator(np.random.Philox(key=seed + 29))
    est = straight_through_estimator("plain")
    agree, counterexamples, tried = 0, [], 0
    count = 0
    while count < n_problems:
        tried += 1
        prob = random_single_layer_problem(rng)
        g = exact_grad(prob, 0)
        if abs(g) <= min_grad:
            continue
        count += 1
        st_mean, _ = exact_estimator_moments(est, prob, 0)
        if np.sign(st_mean) == np.sign(g):
            agree += 1
        else:
            counterexamples.append({
                "a": float(prob.a[0]), "p": float(sigm(prob.a[0])),
                "loss_0": prob.loss(np.zeros(1)), "loss_1": prob.loss(np.ones(1)),
                "dloss_0": float(prob.loss_grad(np.zeros(1))[0]), "dloss_1": float(prob.loss_grad(np.ones(1))[0]),
                "exact_grad": g, "st_mean": st_mean,
            })
    checks = [_check("straight_through.sign_agreement", agree >= required, measured=agree,
                     total=n_problems, bound=required, sampled=tried)]
    return checks, counterexamples


def run_verification(seed: int = 0, mc_samples: int = 1_000_000, inject_bias: float = 0.0) -> dict:
    checks = []
    checks += noisy_rectifier_suite(mc_samples, seed)
    checks += sts_suite()
    checks += unbiasedness_suite(n=mc_samples, seed=seed, bias=inject_bias)
    checks += baseline_suite(seed)
    st_checks, counterexamples = st_sign_suite(seed=seed)
    checks += st_checks
    return {
        "passed": all(c["passed"] for c in checks),
        "n_checks": len(checks),
        "n_failed": sum(not c["passed"] for c in checks),
        "checks": checks,
        "counterexamples": counterexamples,
    }
