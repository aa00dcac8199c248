# tests/test_coding_sim.py
import json

import numpy as np
import pytest

from conftest import PROBLEMS, h_b
from src.core.errors import BudgetExceededError, ValidationError
from src.core.probability import Channel, DistortionMatrix, JointTable
from src.core.rdp_solver import solve_empirical_rdp
from src.services.problem_service import parse_problem
from src.simulation.codebook import (
    Codebook,
    CodeConfig,
    SchemeSpec,
    codeword,
    derive_key,
    floor_pow2,
    prf_uniforms,
    scheme_from_channel,
)
from src.simulation.coding_sim import (
    TrialResult,
    TrialStats,
    decode,
    exact_joint_law,
    likelihood_encode,
    markov_residual,
    monte_carlo,
    proof_diagnostics,
    rate_thresholds,
    run_trial,
)


def load_scheme(name: str) -> SchemeSpec:
    pf = parse_problem(json.loads((PROBLEMS / name).read_text(encoding="utf-8")))
    assert pf.scheme is not None
    return pf.scheme


@pytest.fixture
def bsc_scheme() -> SchemeSpec:
    return load_scheme("binary_bsc_scheme.json")


@pytest.fixture
def identity_scheme() -> SchemeSpec:
    return load_scheme("binary_identity_scheme.json")


def test_prf_is_a_pure_function():
    a = prf_uniforms(derive_key("k", 1), np.arange(1000))
    b = prf_uniforms(derive_key("k", 1), np.arange(1000))
    c = prf_uniforms(derive_key("k", 2), np.arange(1000))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() >= 0.0 and a.max() < 1.0
    assert abs(a.mean() - 0.5) < 0.05


def test_floor_pow2():
    assert floor_pow2(0.0) == 1
    assert floor_pow2(3.0) == 8
    assert floor_pow2(4 * 0.75) == 8
    assert floor_pow2(2.5) == 5
    assert floor_pow2(1200.0) == 2 ** 1200
    with pytest.raises(ValidationError):
        floor_pow2(-1.0)


def test_codewords_are_regenerated_identically(bsc_scheme):
    cb = Codebook(bsc_scheme, CodeConfig(n=6, R=0.5, R0=0.5), codebook_seed=3)
    z = np.zeros(6, dtype=np.int64)
    first = codeword(cb, z, 5, 2)
    again = codeword(Codebook(bsc_scheme, CodeConfig(n=6, R=0.5, R0=0.5), codebook_seed=3), z, 5, 2)
    assert np.array_equal(first, again)
    block = cb.block(z, 2, 1, cb.config.message_count + 1)
    assert np.array_equal(block[4], first)
    with pytest.raises(ValidationError):
        codeword(cb, z, 0, 1)
    with pytest.raises(ValidationError):
        codeword(cb, z, cb.config.message_count + 1, 1)
    with pytest.raises(ValidationError):
        codeword(cb, z, 1, cb.config.randomness_count + 1)
    with pytest.raises(ValidationError):
        codeword(cb, np.zeros(5, dtype=np.int64), 1, 1)


def test_scheme_rejects_inconsistent_source():
    with pytest.raises(ValidationError):
        SchemeSpec(
            JointTable(np.array([[0.7], [0.3]])),
            Channel(np.array([[0.5, 0.5]])),
            Channel(np.array([[[0.89, 0.11], [0.11, 0.89]]])),
            Channel(np.array([[[1.0, 0.0], [0.0, 1.0]]])),
            DistortionMatrix.hamming(2),
        )


def test_thresholds_and_markov_residual(bsc_scheme):
    r, r0 = rate_thresholds(bsc_scheme)
    assert r == pytest.approx(1.0 - h_b(0.11), abs=1e-12)
    assert r0 == pytest.approx(h_b(0.11), abs=1e-12)
    assert markov_residual(bsc_scheme) == pytest.approx(0.0, abs=1e-15)


def _ratio_scheme() -> SchemeSpec:
    # one symbol per block: likelihoods 0.75 vs 0.25 for x = 0
    return SchemeSpec(
        JointTable(np.array([[0.5], [0.5]])),
        Channel(np.array([[0.5, 0.5]])),
        Channel(np.array([[[0.75, 0.25], [0.25, 0.75]]])),
        Channel(np.array([[[1.0, 0.0], [0.0, 1.0]]])),
        DistortionMatrix.hamming(2),
    )


def test_likelihood_encoder_follows_likelihood_ratio():
    scheme = _ratio_scheme()
    config = CodeConfig(n=1, R=1.0)
    z = [0]
    seed = next(s for s in range(256)
                if codeword(Codebook(scheme, config, s), z, 1, 1)[0] != codeword(Codebook(scheme, config, s), z, 2, 1)[0])
    cb = Codebook(scheme, config, seed)
    favoured = 1 if codeword(cb, z, 1, 1)[0] == 0 else 2
    picks = [likelihood_encode(cb, [0], z, 1, trial_seed=t) for t in range(4000)]
    share = picks.count(favoured) / len(picks)
    assert share == pytest.approx(0.75, abs=0.03)
    assert set(picks) <= {1, 2}


def test_likelihood_encoder_budget_guard(bsc_scheme):
    cb = Codebook(bsc_scheme, CodeConfig(n=4, R=1.0))
    with pytest.raises(BudgetExceededError):
        likelihood_encode(cb, [0, 1, 0, 1], [0, 0, 0, 0], 1, trial_seed=0, message_budget=8)


def test_trials_are_reproducible(bsc_scheme):
    cb = Codebook(bsc_scheme, CodeConfig(n=8, R=0.8, R0=0.6, master_seed=5, trials=6), codebook_seed=1)
    assert run_trial(cb, 3) == run_trial(cb, 3)
    serial = monte_carlo(cb, threads=1)
    threaded = monte_carlo(cb, threads=3)
    assert serial.to_dict() == threaded.to_dict()
    assert [r.message for r in serial.results] == [r.message for r in threaded.results]
    assert "results" not in serial.to_dict()


def test_identity_scheme_has_zero_distortion(identity_scheme):
    cb = Codebook(identity_scheme, CodeConfig(n=4, R=1.0, master_seed=9, trials=40), codebook_seed=2)
    report = monte_carlo(cb)
    assert report.trials + report.failures == 40
    assert report.trials > 0
    assert report.mean_distortion == 0.0
    assert report.mean_empirical_tv == 0.0
    assert len(report.trial_rows()) == report.trials


def test_monte_carlo_argument_checks(bsc_scheme):
    cb = Codebook(bsc_scheme, CodeConfig(n=4, R=0.5, trials=1))
    with pytest.raises(ValidationError):
        monte_carlo(cb)
    with pytest.raises(ValidationError):
        run_trial(cb, 0, encoder="greedy")
    with pytest.raises(ValidationError):
        CodeConfig(n=0, R=1.0)


def test_trial_stats_merge_is_order_free():
    results = [TrialResult(i, 0.1 * i, 0.05 * i, 1, 1) for i in range(5)]
    results.append(TrialResult(5, float("nan"), float("nan"), 0, 0, failed=True))
    parts = [TrialStats.of(r) for r in results]
    left = TrialStats()
    for p in parts:
        left = left.merge(p)
    right = TrialStats()
    for p in reversed(parts):
        right = p.merge(right)
    assert left.count == right.count == 5
    assert left.failures == 1
    assert left.sum_d == pytest.approx(right.sum_d)
    assert TrialStats.of(results[0]).half_width(0.0, 0.0) == 0.0


def test_exact_laws_are_normalized(bsc_scheme):
    config = CodeConfig(n=3, R=0.7, R0=0.7)
    laws = exact_joint_law(bsc_scheme, config, codebook_seed=4)
    for law in (laws.p_xy, laws.q_xy, laws.pbar_xy, laws.q_yz, laws.pbar_yz):
        assert law.sum() == pytest.approx(1.0, abs=1e-12)
    assert laws.failure_mass == 0.0
    expected = 1.0 / (config.message_count * config.randomness_count)
    np.testing.assert_allclose(laws.q_mk, expected, atol=1e-15)
    # the encoder only reweights messages, so the x^n marginal of P is the source law
    np.testing.assert_allclose(laws.p_xy.sum(axis=1), laws.p_x_source, atol=1e-12)


def test_exact_law_budget(bsc_scheme):
    with pytest.raises(BudgetExceededError):
        exact_joint_law(bsc_scheme, CodeConfig(n=10, R=1.0, R0=1.0), budget=1000)


def test_proof_diagnostics_single_letter(bsc_scheme):
    # n = 1 with one codeword: Q draws x from P(x|u), P from the source
    report = proof_diagnostics(bsc_scheme, CodeConfig(n=1, R=0.8, R0=0.8), seeds=(0, 1))
    for d in report.per_seed:
        assert d.tv_P_Q == pytest.approx(0.39, abs=1e-12)
    assert report.mean["tv_P_Q"] == pytest.approx(0.39, abs=1e-12)
    with pytest.raises(ValidationError):
        proof_diagnostics(bsc_scheme, CodeConfig(n=1, R=0.8), seeds=())


def test_proof_diagnostics_count_encoding_failures(bsc_scheme, identity_scheme):
    # one codeword u^2 and X = U: only the block x^2 = u^2 can be encoded
    report = proof_diagnostics(identity_scheme, CodeConfig(n=2, R=0.0), seeds=(0, 1, 2))
    for d in report.per_seed:
        assert d.failure_mass == pytest.approx(0.75, abs=1e-12)
    assert report.mean["failure_mass"] == pytest.approx(0.75, abs=1e-12)
    assert report.to_dict()["per_seed"][0]["failure_mass"] == pytest.approx(0.75, abs=1e-12)
    clean = proof_diagnostics(bsc_scheme, CodeConfig(n=2, R=0.5, R0=0.5), seeds=(0,))
    assert clean.mean["failure_mass"] == 0.0


def test_proof_diagnostics_shrink_with_blocklength(bsc_scheme):
    r, r0 = rate_thresholds(bsc_scheme)
    seeds = range(20)
    means = [proof_diagnostics(bsc_scheme, CodeConfig(n=n, R=r + 0.3, R0=r0 + 0.3), seeds).mean
             for n in (1, 2, 3, 4)]
    tv = [m["tv_P_Q"] for m in means]
    assert all(b <= a + 0.02 for a, b in zip(tv, tv[1:]))
    assert tv[-1] < tv[0]
    for m in means:
        assert 0.0 <= m["tv_P_Pbar"] <= 1.0
        assert 0.0 <= m["strong_tv"] <= 1.0


def test_ensemble_encoder_trend(uniform_binary, cfg):
    sol = solve_empirical_rdp(uniform_binary, 0.11, 0.1, cfg)
    scheme = scheme_from_channel(uniform_binary.p_xz, sol.channel, uniform_binary.d)
    r, r0 = rate_thresholds(scheme)
    cb = Codebook(scheme, CodeConfig(n=500, R=r + 0.1, R0=r0 + 0.1, master_seed=2024, trials=100))
    report = monte_carlo(cb, encoder="ensemble")
    assert report.failures == 0
    assert report.mean_distortion + report.ci95_distortion <= 0.13
    assert report.mean_empirical_tv + report.ci95_tv <= 0.12


def test_single_letter_trials_match_expectation(bsc_scheme):
    # n = 1 with one codeword: y = u is fixed, x is uniform, so E[D] = 1/2
    cb = Codebook(bsc_scheme, CodeConfig(n=1, R=0.0, master_seed=3, trials=2000))
    report = monte_carlo(cb)
    stderr = report.ci95_distortion / 1.959963984540054
    assert abs(report.mean_distortion - 0.5) <= 3 * stderr
    assert report.mean_empirical_tv == pytest.approx(report.mean_distortion)


def test_ensemble_encoder_below_threshold_loses_distortion(uniform_binary, cfg):
    sol = solve_empirical_rdp(uniform_binary, 0.11, 0.1, cfg)
    scheme = scheme_from_channel(uniform_binary.p_xz, sol.channel, uniform_binary.d)
    r, r0 = rate_thresholds(scheme)
    cb = Codebook(scheme, CodeConfig(n=500, R=r - 0.3, R0=r0 + 0.1, master_seed=2024, trials=50))
    report = monte_carlo(cb, encoder="ensemble")
    assert report.mean_distortion - report.ci95_distortion >= 0.11 + 0.05


def _noisy_decoder_scheme() -> SchemeSpec:
    # X = U, so P(x|z) equals P(u|z)
    return SchemeSpec(
        JointTable(0.5 * np.array([[0.8, 0.3], [0.2, 0.7]])),
        Channel(np.array([[0.8, 0.2], [0.3, 0.7]])),
        Channel(np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]])),
        Channel(np.array([[[0.9, 0.1], [0.25, 0.75]], [[0.9, 0.1], [0.25, 0.75]]])),
        DistortionMatrix.hamming(2),
    )


def test_long_codewords_and_decoder_follow_their_laws():
    cb = Codebook(_noisy_decoder_scheme(), CodeConfig(n=10_000, R=0.0), codebook_seed=8)
    z = np.arange(10_000) % 2
    u = codeword(cb, z, 1, 1)
    assert u[z == 0].mean() == pytest.approx(0.2, abs=0.025)
    assert u[z == 1].mean() == pytest.approx(0.7, abs=0.03)
    y = decode(cb, 1, z, 1, trial_seed=5)
    assert y[u == 0].mean() == pytest.approx(0.1, abs=0.02)
    assert y[u == 1].mean() == pytest.approx(0.75, abs=0.03)
    np.testing.assert_array_equal(y, decode(cb, 1, z, 1, trial_seed=5))


def test_confidence_interval_shrinks_with_trials(bsc_scheme):
    widths = []
    for trials in (2000, 4000):
        cb = Codebook(bsc_scheme, CodeConfig(n=1, R=0.0, master_seed=3, trials=trials))
        widths.append(monte_carlo(cb).ci95_distortion)
    assert widths[1] / widths[0] == pytest.approx(2 ** -0.5, abs=0.05)
