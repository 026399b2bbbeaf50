import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import jensenshannon

from rawbayer import theory
from rawbayer.imgcore import pattern_of
from rawbayer.mosaic import demosaic_array, mosaic_array
from rawbayer.verify import fold_control_pair, random_discrete, random_gridded, random_monotone_map

D = theory.DiscreteDistribution
LN2 = math.log(2)


def prob_vectors(min_size=2, max_size=32):
    return st.lists(st.floats(0, 1), min_size=min_size, max_size=max_size).filter(lambda v: sum(v) > 1e-3)


def normalize(v):
    v = np.asarray(v, dtype=float)
    return D(v / v.sum())


def test_js_examples():
    p = D([0.2, 0.3, 0.5])
    assert theory.js_divergence(p, p) == 0.0
    assert theory.js_divergence(D([1, 0]), D([0, 1])) == pytest.approx(0.693147, abs=1e-6)
    assert theory.js_divergence(D([1, 0]), D([0, 1])) == pytest.approx(LN2, abs=1e-15)


def test_js_rejects_mismatched_support():
    with pytest.raises(ValueError):
        theory.js_divergence(D([1, 0]), D([0.5, 0.25, 0.25]))


@settings(max_examples=200)
@given(st.data())
def test_js_matches_scipy_and_is_symmetric(data):
    n = data.draw(st.integers(2, 32))
    a = normalize(data.draw(prob_vectors(n, n)))
    b = normalize(data.draw(prob_vectors(n, n)))
    js = theory.js_divergence(a, b)
    assert js == pytest.approx(jensenshannon(a.probs, b.probs) ** 2, abs=1e-12)
    assert js == theory.js_divergence(b, a)
    assert -1e-15 <= js <= LN2 + 1e-15


def test_optimal_discriminator_examples():
    p = D([0.1, 0.9])
    np.testing.assert_array_equal(theory.optimal_discriminator(p, p), [0.5, 0.5])
    np.testing.assert_array_equal(theory.optimal_discriminator(D([1, 0]), D([0, 1])), [1.0, 0.0])
    # 0/0 is taken as one half
    np.testing.assert_array_equal(theory.optimal_discriminator(D([1, 0, 0]), D([0, 1, 0])), [1.0, 0.0, 0.5])


def test_optimal_discriminator_transform_consistency(rng):
    a, b = random_discrete(rng, 20), random_discrete(rng, 20)
    perm = theory.IndexMap.permutation(rng.permutation(20))
    after = theory.optimal_discriminator(theory.pushforward(a, perm), theory.pushforward(b, perm))
    np.testing.assert_array_equal(after[perm.mapping], theory.optimal_discriminator(a, b))


def test_optimal_discriminator_gridded_consistency(rng):
    a, b = random_gridded(rng), random_gridded(rng)
    t = random_monotone_map(rng)
    pa, pb = theory.pushforward(a, t), theory.pushforward(b, t)
    d_after = theory.optimal_discriminator(pa, pb)
    mids = 0.5 * (pa.edges[:-1] + pa.edges[1:])
    src = t.inverse(mids)
    d_before = a.at(src) / (a.at(src) + b.at(src))
    np.testing.assert_allclose(d_after, d_before, atol=1e-12)


def test_gan_value_examples():
    p = D([0.3, 0.7])
    assert theory.gan_value(p, D([0.6, 0.4]), [0.5, 0.5]) == -math.log(4)
    a, b = D([1, 0]), D([0, 1])
    v = theory.gan_value(a, b, theory.optimal_discriminator(a, b))
    assert abs(v) <= 1e-11  # clamp at 1e-12 leaves ~2e-12
    assert -math.log(4) + 2 * LN2 == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        theory.gan_value(p, p, [0.5])


def test_optimal_discriminator_maximizes_value(rng):
    a, b = random_discrete(rng, 10), random_discrete(rng, 10)
    best = theory.gan_value(a, b, theory.optimal_discriminator(a, b))
    for _ in range(1000):
        assert theory.gan_value(a, b, rng.random(10)) <= best


def test_virtual_criterion(rng):
    p = random_discrete(rng, 9)
    assert theory.virtual_criterion(p, p) == -math.log(4)
    assert theory.virtual_criterion(D([1, 0]), D([0, 1])) == pytest.approx(0.0, abs=1e-15)
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        a, b = random_discrete(rng, n), random_discrete(rng, n)
        v = theory.gan_value(a, b, theory.optimal_discriminator(a, b))
        assert abs(v - theory.virtual_criterion(a, b)) <= 1e-9


def test_pushforward_identity_and_uniform_scaling():
    p = D([0.1, 0.2, 0.7])
    ident = theory.IndexMap.permutation([0, 1, 2])
    np.testing.assert_array_equal(theory.pushforward(p, ident).probs, p.probs)
    u = theory.GriddedDensity.on_interval(0.0, 1.0, np.ones(10))
    out = theory.pushforward(u, theory.PiecewiseLinearMap.affine(2.0, 0.0, 0.0, 1.0))
    assert out.edges[0] == 0.0 and out.edges[-1] == 2.0
    np.testing.assert_allclose(out.density, 0.5, atol=1e-15)


def test_pushforward_permutes(rng):
    p = random_discrete(rng, 8)
    perm = rng.permutation(8)
    out = theory.pushforward(p, theory.IndexMap.permutation(perm))
    np.testing.assert_array_equal(out.probs[perm], p.probs)


def test_pushforward_preserves_mass(rng):
    for _ in range(100):
        out = theory.pushforward(random_gridded(rng), random_monotone_map(rng))
        assert abs(out.mass - 1.0) <= 1e-6


def test_pushforward_matches_change_of_variables(rng):
    # density of T(X) at t is p(T^-1 t) / T'(T^-1 t); compare at random points
    p = random_gridded(rng)
    t = random_monotone_map(rng)
    out = theory.pushforward(p, t)
    pts = rng.uniform(t.values[0], t.values[-1], 200)
    x = t.inverse(pts)
    idx = np.clip(np.searchsorted(t.knots, x, side="right") - 1, 0, t.knots.size - 2)
    slope = (t.values[idx + 1] - t.values[idx]) / (t.knots[idx + 1] - t.knots[idx])
    np.testing.assert_allclose(out.at(pts), p.at(x) / slope, rtol=1e-9)


def test_invariance_permutation(rng):
    for _ in range(200):
        n = int(rng.integers(2, 65))
        r = theory.verify_js_invariance(random_discrete(rng, n), random_discrete(rng, n), theory.IndexMap.permutation(rng.permutation(n)))
        assert r.abs_diff <= 1e-12 and r.passed


def test_invariance_affine_gaussians():
    lo, hi = -4.0, 4.0
    p = theory.GriddedDensity.from_function(lambda x: np.exp(-0.5 * x**2), lo, hi, 400)
    q = theory.GriddedDensity.from_function(lambda x: np.exp(-0.5 * ((x - 1) / 0.7) ** 2), lo, hi, 400)
    r = theory.verify_js_invariance(p, q, theory.PiecewiseLinearMap.affine(2.0, 1.0, lo, hi))
    assert r.abs_diff <= 1e-6 and r.passed


def test_fold_negative_control():
    p, q = fold_control_pair()
    fold = theory.IndexMap.fold(4)
    assert not fold.invertible
    r = theory.verify_js_invariance(p, q, fold)
    assert r.js_after == 0.0
    assert r.abs_diff > 1e-3
    assert not r.invariant and r.passed


def test_fold_control_found_by_brute_force():
    # every asymmetric pair on 4 points with mirrored probabilities breaks invariance
    grid = [v / 10 for v in range(11)]
    fold = theory.IndexMap.fold(4)
    hits = 0
    for a in grid:
        for b in grid:
            c = 1 - a - b
            if c < -1e-12:
                continue
            p = D(np.array([a, b, max(c, 0), 0.0]) / (a + b + max(c, 0)))
            q = D(p.probs[::-1])
            if theory.verify_js_invariance(p, q, fold).abs_diff > 1e-3:
                hits += 1
    assert hits > 0


def test_demodulation_unit_norm_and_scale_invariance(rng):
    for _ in range(20):
        w = theory.WeightTensor(rng.normal(size=(5, 7, 3, 3)), rng.uniform(0.1, 2, 5), eps=0.0)
        out = theory.weight_demodulate(w).weights
        norms = np.sqrt(np.sum(out**2, axis=(0, 2, 3)))
        assert np.max(np.abs(norms - 1)) <= 1e-12
        scaled = theory.WeightTensor(w.weights, 3.7 * w.scales, eps=0.0)
        assert np.max(np.abs(theory.weight_demodulate(scaled).weights - out)) <= 1e-12


def test_demodulation_fixed_point(rng):
    w = rng.normal(size=(3, 4, 3, 3))
    w /= np.sqrt(np.sum(w**2, axis=(0, 2, 3)))[None, :, None, None]
    out = theory.weight_demodulate(theory.WeightTensor(w, np.ones(3), eps=0.0))
    np.testing.assert_allclose(out.weights, w, atol=1e-15)


def test_demodulation_matches_loop_oracle(rng):
    w = rng.normal(size=(2, 3, 2, 2))
    s = rng.uniform(0.5, 2, 2)
    eps = 1e-3
    out = theory.weight_demodulate(theory.WeightTensor(w, s, eps)).weights
    for j in range(3):
        total = sum((s[i] * w[i, j, a, b]) ** 2 for i in range(2) for a in range(2) for b in range(2))
        for i in range(2):
            np.testing.assert_allclose(out[i, j], s[i] * w[i, j] / math.sqrt(total + eps), rtol=1e-14)


def test_demodulation_zero_weights():
    w = theory.WeightTensor(np.zeros((2, 2, 3, 3)), np.ones(2), eps=1e-8)
    assert np.all(np.isfinite(theory.weight_demodulate(w).weights))
    with pytest.raises(ValueError):
        theory.weight_demodulate(theory.WeightTensor(np.zeros((2, 2, 3, 3)), np.ones(2), eps=0.0))


def ft(values, layer=0):
    return theory.FeatureTensor(np.asarray(values, dtype=float), layer)


def test_feature_matching_examples(rng):
    feats = [ft(rng.random((2, 3, 3))), ft(rng.random((4, 2, 2)))]
    assert theory.feature_matching_loss(feats, feats) == 0.0
    assert theory.feature_matching_loss([ft([[[3.0]]])], [ft([[[5.0]]])]) == 2.0
    a, b = rng.random((2, 3, 3)), rng.random((2, 3, 3))
    tiled = lambda x: np.tile(x, (1, 2, 2))
    assert theory.feature_matching_loss([ft(tiled(a))], [ft(tiled(b))]) == pytest.approx(
        theory.feature_matching_loss([ft(a)], [ft(b)]), rel=1e-14
    )
    with pytest.raises(ValueError):
        theory.feature_matching_loss([ft(a)], [ft(rng.random((2, 3, 4)))])


def test_perceptual_loss(rng):
    real = [ft(rng.random((c, 4, 4))) for c in (1, 2, 3, 4, 5)]
    fake = [ft(rng.random((c, 4, 4))) for c in (1, 2, 3, 4, 5)]
    assert theory.perceptual_loss(real, real) == 0.0
    one = theory.perceptual_loss(real, fake, (1, 0, 0, 0, 0))
    assert one == theory.feature_matching_loss(real[:1], fake[:1])
    lam = rng.random(5)
    assert theory.perceptual_loss(real, fake, 2 * lam) == pytest.approx(2 * theory.perceptual_loss(real, fake, lam), rel=1e-14)
    with pytest.raises(ValueError):
        theory.perceptual_loss(real[:4], fake[:4])


def test_total_loss(rng):
    assert theory.total_loss(1.5, 2.0, 3.0, 0.0, 0.0) == 1.5
    assert theory.total_loss(1, 2, 3, 1, 1) == 6
    x, y = rng.random(3), rng.random(3)
    a = rng.random(2)
    lhs = theory.total_loss(*(x + y), *a)
    assert lhs == pytest.approx(theory.total_loss(*x, *a) + theory.total_loss(*y, *a), rel=1e-14)


def test_feature_tensor_file_round_trip(tmp_path, rng):
    tensors = [ft(rng.random((2, 3, 4)), 0), ft(rng.random((1, 1, 5)), 1)]
    path = tmp_path / "f.bin"
    theory.write_feature_tensors(tensors, path)
    blob = path.read_bytes()
    assert blob[:4] == (2).to_bytes(4, "little")
    back = theory.read_feature_tensors(path)
    for a, b in zip(tensors, back):
        np.testing.assert_array_equal(a.data, b.data)
    path.write_bytes(blob[:-1])
    with pytest.raises(ValueError):
        theory.read_feature_tensors(path)


def test_jacobian_of_bilinear_is_constant(rng):
    pat = pattern_of("RGGB")
    f = lambda r: demosaic_array(r, pat, "bilinear")
    j1 = theory.numerical_jacobian(f, rng.random((6, 6)))
    j2 = theory.numerical_jacobian(f, rng.random((6, 6)))
    assert np.max(np.abs(j1 - j2)) <= 1e-8
    assert np.max(np.abs(j1.sum(axis=1) - 1)) <= 1e-8


def test_jacobian_of_mosaic_is_selection(rng):
    pat = pattern_of("GRBG")
    jac = theory.numerical_jacobian(lambda x: mosaic_array(x, pat), rng.random((3, 4, 4)))
    rounded = np.round(jac)
    assert np.max(np.abs(jac - rounded)) <= 1e-8
    assert set(np.unique(rounded)) <= {0.0, 1.0}
    assert np.all(rounded.sum(axis=1) == 1)


def test_jacobian_of_gamma():
    jac = theory.numerical_jacobian(lambda v: np.power(v, 0.5), np.full((2, 2), 0.25))
    np.testing.assert_allclose(np.diag(jac), 1.0, atol=1e-8)


def test_jacobian_rejects_large_input():
    with pytest.raises(ValueError):
        theory.numerical_jacobian(lambda x: x, np.zeros((13, 4)))
    with pytest.raises(ValueError):
        theory.numerical_jacobian(lambda x: x, np.zeros((4, 4)), h=0.0)
