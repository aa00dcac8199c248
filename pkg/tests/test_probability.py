# tests/test_probability.py
import numpy as np
import pytest

from src.core.errors import BudgetExceededError, ValidationError
from src.core.probability import (
    Channel,
    DistortionMatrix,
    JointTable,
    ProbVec,
    compose,
    condition,
    conditional_independence_residual,
    conditional_mutual_information,
    empirical,
    empirical_joint,
    entropy,
    expected_distortion,
    kl_divergence,
    limsup_product_tv,
    marginalize,
    mutual_information,
    product_tv,
    sequences,
    tv_distance,
    tv_distance_by_subsets,
)


def test_tv_matches_supremum_over_events():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = rng.dirichlet(np.ones(5))
        q = rng.dirichlet(np.ones(5))
        assert tv_distance(p, q) == pytest.approx(tv_distance_by_subsets(p, q), abs=1e-12)


def test_tv_is_a_bounded_metric():
    rng = np.random.default_rng(4)
    p, q, r = (rng.dirichlet(np.ones(4)) for _ in range(3))
    assert tv_distance(p, p) == 0.0
    assert tv_distance(p, q) == pytest.approx(tv_distance(q, p))
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
    assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0


def test_tv_rejects_alphabet_mismatch():
    with pytest.raises(ValidationError):
        tv_distance([0.5, 0.5], [1.0, 0.0, 0.0])


def test_tables_validate_mass():
    with pytest.raises(ValidationError):
        ProbVec(np.array([0.6, 0.6]))
    with pytest.raises(ValidationError):
        ProbVec(np.array([1.2, -0.2]))
    with pytest.raises(ValidationError):
        JointTable(np.array([0.5, 0.5]))
    with pytest.raises(ValidationError):
        Channel(np.array([[0.5, 0.4], [0.0, 1.0]]))


def test_channel_keeps_undefined_rows_flagged():
    joint = np.array([[0.5, 0.0], [0.5, 0.0]])
    ch = condition(joint, axis=0)
    assert ch.defined.tolist() == [True, False]
    assert not ch.fully_defined
    assert np.all(np.isnan(ch.p[1]))
    np.testing.assert_allclose(ch.p[0], [0.5, 0.5])


def test_compose_then_condition_recovers_channel():
    prior = ProbVec(np.array([0.2, 0.8]))
    ch = Channel(np.array([[0.9, 0.1], [0.3, 0.7]]))
    joint = compose(prior, ch)
    np.testing.assert_allclose(condition(joint, axis=-1).p, ch.p)
    np.testing.assert_allclose(marginalize(joint, [0]).p, prior.p)


def test_marginalize_respects_requested_order():
    rng = np.random.default_rng(5)
    j = JointTable(rng.dirichlet(np.ones(24)).reshape(2, 3, 4))
    m = marginalize(j, [2, 0])
    assert m.dims == (4, 2)
    np.testing.assert_allclose(m.p, j.p.sum(axis=1).T)


def test_empirical_types():
    t = empirical([0, 1, 1, 2], 4)
    assert t.counts.tolist() == [1, 2, 1, 0]
    np.testing.assert_allclose(t.p, [0.25, 0.5, 0.25, 0.0])
    tj = empirical_joint([[0, 1, 1], [1, 1, 0]], [2, 2])
    assert tj.counts.tolist() == [[0, 1], [1, 1]]
    with pytest.raises(ValidationError):
        empirical([0, 3], 3)
    with pytest.raises(ValidationError):
        empirical_joint([[0, 1], [0]], [2, 2])


def test_entropy_and_information_values():
    assert entropy([0.5, 0.5]) == pytest.approx(1.0)
    assert entropy([1.0, 0.0]) == 0.0
    # BSC(0.11) with uniform input
    eps = 0.11
    joint = 0.5 * np.array([[1 - eps, eps], [eps, 1 - eps]])
    hb = -eps * np.log2(eps) - (1 - eps) * np.log2(1 - eps)
    assert mutual_information(joint) == pytest.approx(1.0 - hb, abs=1e-12)
    assert mutual_information(np.outer([0.3, 0.7], [0.6, 0.4])) == pytest.approx(0.0, abs=1e-12)


def test_conditional_information_of_markov_chain_vanishes():
    # X - Z - Y: p(x, y, z) = p(z) p(x|z) p(y|z)
    pz = np.array([0.4, 0.6])
    px_z = np.array([[0.9, 0.1], [0.2, 0.8]])
    py_z = np.array([[0.7, 0.3], [0.5, 0.5]])
    j = np.einsum("z,zx,zy->xyz", pz, px_z, py_z)
    assert conditional_mutual_information(j, given=2) == pytest.approx(0.0, abs=1e-12)
    assert conditional_independence_residual(j, 0, 1, (2,)) == pytest.approx(0.0, abs=1e-15)
    assert mutual_information(j.sum(axis=2)) > 0.0


def test_kl_divergence():
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(1.0)
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == float("inf")


def test_expected_distortion_hamming():
    d = DistortionMatrix.hamming(2)
    assert expected_distortion(np.array([[0.4, 0.1], [0.2, 0.3]]), d) == pytest.approx(0.3)
    with pytest.raises(ValidationError):
        DistortionMatrix(np.array([[0.0, -1.0], [1.0, 0.0]]))


def test_sequences_are_lexicographic():
    s = sequences(2, 3)
    assert s.shape == (8, 3)
    assert s[0].tolist() == [0, 0, 0]
    assert s[5].tolist() == [1, 0, 1]
    with pytest.raises(BudgetExceededError):
        sequences(2, 25)


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_product_tv_by_types_matches_enumeration(n):
    p, q = np.array([0.5, 0.5]), np.array([0.6, 0.4])
    assert product_tv(p, q, n) == pytest.approx(product_tv(p, q, n, method="sequences"), abs=1e-12)


def test_product_tv_ternary_types_match_enumeration():
    p, q = np.array([0.2, 0.3, 0.5]), np.array([0.3, 0.3, 0.4])
    assert product_tv(p, q, 4) == pytest.approx(product_tv(p, q, 4, method="sequences"), abs=1e-12)


def test_product_tv_grows_towards_one():
    p, q = np.array([0.5, 0.5]), np.array([0.6, 0.4])
    values = [product_tv(p, q, n) for n in (1, 10, 100, 1000)]
    assert values[0] == pytest.approx(0.1)
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] > 0.99


def test_limsup_product_tv_is_two_valued():
    assert limsup_product_tv([0.5, 0.5], [0.5, 0.5]) == 0
    assert limsup_product_tv([0.5, 0.5], [0.5 + 1e-12, 0.5 - 1e-12]) == 0
    assert limsup_product_tv([0.5, 0.5], [0.51, 0.49]) == 1
    with pytest.raises(ValidationError):
        limsup_product_tv([0.5, 0.5], [0.5, 0.5], tol=0.0)


def test_empirical_type_of_long_sample_is_close():
    rng = np.random.default_rng(12)
    p = np.array([0.1, 0.2, 0.3, 0.4])
    for _ in range(5):
        sample = rng.choice(4, size=10_000, p=p)
        assert tv_distance(empirical(sample, 4), p) < 0.02


def _random_instances(count: int, seed: int, k: int = 4):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield rng, rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))


def test_tv_property_common_channel_keeps_distance():
    for rng, p, q in _random_instances(1000, seed=21):
        ch = Channel(rng.dirichlet(np.ones(3), size=4))
        assert tv_distance(compose(p, ch), compose(q, ch)) == pytest.approx(tv_distance(p, q), abs=1e-12)


def test_tv_property_marginals_never_exceed_joints():
    rng = np.random.default_rng(22)
    for _ in range(1000):
        a = rng.dirichlet(np.ones(12)).reshape(3, 4)
        b = rng.dirichlet(np.ones(12)).reshape(3, 4)
        assert tv_distance(a.sum(axis=1), b.sum(axis=1)) <= tv_distance(a, b) + 1e-12
        assert tv_distance(a.sum(axis=0), b.sum(axis=0)) <= tv_distance(a, b) + 1e-12


def test_tv_property_triangle_and_convexity():
    for rng, p, q in _random_instances(1000, seed=23):
        r = rng.dirichlet(np.ones(4))
        assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
        weights = rng.dirichlet(np.ones(3))
        qs = rng.dirichlet(np.ones(4), size=3)
        mixed = weights @ qs
        bound = sum(w * tv_distance(p, qi) for w, qi in zip(weights, qs))
        assert tv_distance(p, mixed) <= bound + 1e-12


def test_channels_never_increase_tv():
    for rng, p, q in _random_instances(200, seed=24):
        ch = Channel(rng.dirichlet(np.ones(5), size=4))
        out_p = compose(p, ch).p.sum(axis=0)
        out_q = compose(q, ch).p.sum(axis=0)
        assert tv_distance(out_p, out_q) <= tv_distance(p, q) + 1e-12


def test_calculus_examples():
    ident = np.diag([0.5, 0.5])
    np.testing.assert_allclose(marginalize(ident, [1]).p, [0.5, 0.5])
    np.testing.assert_allclose(compose(ProbVec(np.array([0.3, 0.7])), Channel.identity(2)).p, np.diag([0.3, 0.7]))
    prod = np.outer([0.2, 0.8], [0.6, 0.4])
    np.testing.assert_allclose(condition(prod, axis=1).p, [[0.6, 0.4], [0.6, 0.4]])
    # Z copies X, so X is known given Z whatever the reconstruction does
    rng = np.random.default_rng(25)
    w = rng.dirichlet(np.ones(2), size=(2, 2))
    j = np.einsum("xz,xzy->xyz", np.diag([0.4, 0.6]), w)
    assert conditional_mutual_information(j, given=2) == pytest.approx(0.0, abs=1e-12)


def test_product_tv_examples():
    p = np.array([0.5, 0.5])
    assert product_tv(p, p, 10) == 0.0
    assert product_tv([1.0, 0.0], [0.0, 1.0], 3) == pytest.approx(1.0)
    values = [product_tv(p, [0.6, 0.4], n) for n in (1, 2, 4, 8)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] > values[0]
    single = product_tv(p, [0.6, 0.4], 1)
    assert all(product_tv(p, [0.6, 0.4], n) >= single - 1e-12 for n in range(1, 21))
    assert limsup_product_tv([1.0, 0.0], [0.0, 1.0]) == 1
    assert product_tv(p, [0.6, 0.4], 512) > 0.95
