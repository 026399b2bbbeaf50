"""Self-contained battery of theory checks, reported as JSON-friendly records."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import theory
from .imgcore import pattern_of
from .mosaic import demosaic_array, mosaic_array

SUITES = ("theory",)


@dataclass
class Check:
    check: str
    value: float
    tolerance: float
    passed: bool
    expected_violation: bool = False

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["pass"] = doc.pop("passed")
        if not self.expected_violation:
            del doc["expected_violation"]
        return doc


def random_discrete(rng: np.random.Generator, n: int) -> theory.DiscreteDistribution:
    w = rng.random(n) ** 3
    w[rng.random(n) < 0.1] = 0.0
    if w.sum() == 0:
        w[0] = 1.0
    return theory.DiscreteDistribution(w / w.sum())


def random_gridded(rng: np.random.Generator, lo: float = -3.0, hi: float = 3.0, n: int = 200) -> theory.GriddedDensity:
    mu = rng.uniform(lo / 2, hi / 2)
    sd = rng.uniform(0.3, 1.5)
    skew = rng.uniform(-1, 1)
    return theory.GriddedDensity.from_function(
        lambda x: np.exp(-0.5 * ((x - mu) / sd) ** 2) * (1 + 0.5 * skew * np.tanh(x)), lo, hi, n
    )


def random_monotone_map(rng: np.random.Generator, lo: float = -3.0, hi: float = 3.0) -> theory.PiecewiseLinearMap:
    k = int(rng.integers(2, 12))
    knots = np.concatenate([[lo], np.sort(rng.uniform(lo, hi, k - 2)), [hi]])
    knots = np.unique(knots)
    slopes = rng.uniform(0.05, 5.0, knots.size - 1)
    values = np.concatenate([[rng.uniform(-5, 5)], np.diff(knots) * slopes]).cumsum()
    return theory.PiecewiseLinearMap(knots, values)


def fold_control_pair() -> tuple[theory.DiscreteDistribution, theory.DiscreteDistribution]:
    """Mirror-image pair: distinct, but identical once i and n-1-i are merged."""
    p = theory.DiscreteDistribution([0.7, 0.1, 0.1, 0.1])
    q = theory.DiscreteDistribution([0.1, 0.1, 0.1, 0.7])
    return p, q


def run_theory_suite(seed: int = 0, trials: int = 200) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []

    p = random_discrete(rng, 16)
    checks.append(Check("js_identical_is_zero", theory.js_divergence(p, p), 0.0, theory.js_divergence(p, p) == 0.0))
    disjoint = theory.js_divergence(theory.DiscreteDistribution([1, 0]), theory.DiscreteDistribution([0, 1]))
    checks.append(Check("js_disjoint_is_ln2", abs(disjoint - math.log(2)), 1e-15, abs(disjoint - math.log(2)) <= 1e-15))

    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 65))
        a, b = random_discrete(rng, n), random_discrete(rng, n)
        perm = theory.IndexMap.permutation(rng.permutation(n))
        worst = max(worst, theory.verify_js_invariance(a, b, perm).abs_diff)
    checks.append(Check("js_invariance_permutation", worst, theory.DISCRETE_TOL, worst <= theory.DISCRETE_TOL))

    worst = 0.0
    for _ in range(max(trials // 10, 5)):
        a, b = random_gridded(rng), random_gridded(rng)
        worst = max(worst, theory.verify_js_invariance(a, b, random_monotone_map(rng)).abs_diff)
    checks.append(Check("js_invariance_piecewise_linear", worst, theory.GRIDDED_TOL, worst <= theory.GRIDDED_TOL))

    fp, fq = fold_control_pair()
    fold = theory.verify_js_invariance(fp, fq, theory.IndexMap.fold(4))
    checks.append(Check("js_fold_negative_control", fold.abs_diff, 1e-3, fold.abs_diff > 1e-3, expected_violation=True))

    same = theory.virtual_criterion(p, p)
    checks.append(Check("global_minimum_is_minus_log4", abs(same + theory.LOG4), 0.0, same == -theory.LOG4))

    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 65))
        a, b = random_discrete(rng, n), random_discrete(rng, n)
        v = theory.gan_value(a, b, theory.optimal_discriminator(a, b))
        worst = max(worst, abs(v - theory.virtual_criterion(a, b)))
    checks.append(Check("virtual_criterion_matches_value_at_optimum", worst, 1e-9, worst <= 1e-9))

    a, b = random_discrete(rng, 12), random_discrete(rng, 12)
    best = theory.gan_value(a, b, theory.optimal_discriminator(a, b))
    gap = min(best - theory.gan_value(a, b, rng.random(12)) for _ in range(trials))
    checks.append(Check("optimal_discriminator_maximizes_value", gap, 0.0, gap >= 0.0))

    perm = theory.IndexMap.permutation(rng.permutation(12))
    d_before = theory.optimal_discriminator(a, b)
    d_after = theory.optimal_discriminator(theory.pushforward(a, perm), theory.pushforward(b, perm))
    diff = float(np.max(np.abs(d_after[perm.mapping] - d_before)))
    checks.append(Check("optimal_discriminator_transform_consistency", diff, 0.0, diff == 0.0))

    worst = 0.0
    for _ in range(max(trials // 10, 5)):
        w = theory.WeightTensor(rng.normal(size=(4, 6, 3, 3)), rng.uniform(0.1, 3.0, 4), eps=0.0)
        norms = np.sqrt(np.sum(theory.weight_demodulate(w).weights ** 2, axis=(0, 2, 3)))
        worst = max(worst, float(np.max(np.abs(norms - 1.0))))
    checks.append(Check("demodulated_unit_norm", worst, 1e-12, worst <= 1e-12))

    w = theory.WeightTensor(rng.normal(size=(3, 5, 3, 3)), rng.uniform(0.1, 3.0, 3), eps=0.0)
    scaled = theory.WeightTensor(w.weights, 7.5 * w.scales, eps=0.0)
    diff = float(np.max(np.abs(theory.weight_demodulate(w).weights - theory.weight_demodulate(scaled).weights)))
    checks.append(Check("demodulation_scale_invariant", diff, 1e-12, diff <= 1e-12))

    pattern = pattern_of("RGGB")
    for alg in ("nearest", "bilinear"):
        x, y = rng.random((8, 8)), rng.random((8, 8))
        alpha, beta = rng.normal(size=2)
        lhs = demosaic_array(alpha * x + beta * y, pattern, alg)
        rhs = alpha * demosaic_array(x, pattern, alg) + beta * demosaic_array(y, pattern, alg)
        diff = float(np.max(np.abs(lhs - rhs)))
        checks.append(Check(f"demosaic_{alg}_linearity", diff, 1e-12, diff <= 1e-12))

    jac = theory.numerical_jacobian(lambda r: demosaic_array(r, pattern, "bilinear"), rng.random((6, 6)))
    diff = float(np.max(np.abs(jac.sum(axis=1) - 1.0)))
    checks.append(Check("demosaic_bilinear_partition_of_unity", diff, 1e-8, diff <= 1e-8))

    x = rng.random((3, 6, 6))
    jac = theory.numerical_jacobian(lambda planes: mosaic_array(planes, pattern), x)
    one_hot = bool(np.all((np.abs(jac) < 1e-8) | (np.abs(jac - 1) < 1e-8)) and np.allclose(jac.sum(axis=1), 1.0))
    checks.append(Check("mosaic_jacobian_is_selection", float(not one_hot), 0.0, one_hot))

    return checks


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name != "theory":
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    return run_theory_suite(seed)


def suite_passed(checks: list[Check]) -> bool:
    return all(c.passed for c in checks)


def report(checks: list[Check]) -> list[dict]:
    return [c.to_dict() for c in checks]
