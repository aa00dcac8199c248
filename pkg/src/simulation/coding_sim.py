# src/simulation/coding_sim.py
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import reduce
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy
from scipy.stats import norm

from src.core.errors import BudgetExceededError, EncodingFailure, ValidationError
from src.core.probability import (
    conditional_independence_residual,
    empirical,
    information,
    pad_to,
    product_law,
    sequences,
    tv_distance,
)
from src.simulation.codebook import (
    Codebook,
    CodeConfig,
    SchemeSpec,
    codeword,
    derive_key,
    inverse_cdf,
    prf_uniforms,
    trial_generator,
)
from src.utils.logger import get_logger

log = get_logger(__name__)

ENCODERS = ("exact", "ensemble")

# Likelihood weights below exp(-700) relative to the best codeword count as zero.
_LOG_FLOOR = -700.0
# Above this mean, a Poisson class count is replaced by its mean.
_POISSON_CAP = 1e12
_Z95 = float(norm.ppf(0.975))


def _log_table(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.nan_to_num(p))


def _cdf_table(p: np.ndarray) -> np.ndarray:
    return np.cumsum(np.nan_to_num(p), axis=-1)


def rate_thresholds(scheme: SchemeSpec) -> Tuple[float, float]:
    """(I(X;U|Z), I(Y;U|Z) - I(X;U|Z) floored at 0): the minimal (R, R0) of the scheme."""
    joint = scheme.base_joint()                    # (x, y, z, u)
    r = information(joint, (0,), (3,), (2,))
    r_sum = information(joint, (1,), (3,), (2,))
    return r, max(0.0, r_sum - r)


def markov_residual(scheme: SchemeSpec) -> float:
    """Largest deviation of P(x,y|u,z) from P(x|u,z) P(y|u,z) on the base joint."""
    return conditional_independence_residual(scheme.base_joint(), 0, 1, (2, 3))


# ----------------------------
# Encoder / decoder
# ----------------------------

def likelihood_encode(cb: Codebook, x: Sequence[int], z: Sequence[int], m0: int, trial_seed: int,
                      message_budget: int = 1 << 22) -> int:
    """
    Sample m with probability proportional to prod_i P(x_i | z_i, u_i(z^n, m, m0)).

    Scores are accumulated in log space over chunks of messages; the uniform for the
    inverse-CDF draw comes from the PRF keyed by ("encode", trial_seed).
    """
    xx = cb.check_sequence(x, cb.scheme.x_size, "encoder x^n")
    zz = cb.check_sequence(z, cb.scheme.z_size, "encoder z^n")
    cb.check_indices(1, m0)
    total = cb.config.message_count
    if total > message_budget:
        raise BudgetExceededError(
            f"likelihood_encode: {total} messages exceed message_budget {message_budget}; use the ensemble encoder"
        )
    log_px = _log_table(cb.scheme.x_given_zu.p)
    scores = np.empty(total)
    for start, block in cb.blocks(zz, m0):
        scores[start - 1:start - 1 + block.shape[0]] = log_px[zz[None, :], block, xx[None, :]].sum(axis=1)
    top = scores.max()
    if not np.isfinite(top):
        raise EncodingFailure("likelihood_encode: every codeword assigns x^n likelihood zero")
    rel = scores - top
    weights = np.where(rel < _LOG_FLOOR, 0.0, np.exp(rel))
    cdf = np.cumsum(weights)
    u = prf_uniforms(derive_key("encode", trial_seed), np.zeros(1))[0] * cdf[-1]
    return int(min(total - 1, np.searchsorted(cdf, u, side="right"))) + 1


def decode(cb: Codebook, m: int, z: Sequence[int], m0: int, trial_seed: int) -> np.ndarray:
    """y_i ~ P(y | z_i, u_i(z^n, m, m0)) independently, uniforms keyed by ("decode", trial_seed)."""
    u = codeword(cb, z, m, m0)
    zz = np.asarray(z, dtype=np.int64)
    cdf = _cdf_table(cb.scheme.y_given_zu.p)[zz, u]
    r = prf_uniforms(derive_key("decode", trial_seed), np.arange(cb.n))
    return inverse_cdf(cdf, r)


def _uniform_index(gen: np.random.Generator, count: int) -> int:
    """Uniform integer in [0, count), exact also for counts beyond 64 bits."""
    if count < (1 << 62):
        return int(gen.integers(count))
    nbytes = (count.bit_length() + 7) // 8 + 8
    return int.from_bytes(gen.bytes(nbytes), "big") % count


def _composition_array(n: int, k: int) -> np.ndarray:
    if k == 1:
        return np.array([[n]])
    if k == 2:
        c0 = np.arange(n + 1)
        return np.stack([c0, n - c0], axis=1)
    grids = np.indices((n + 1,) * (k - 1)).reshape(k - 1, -1).T
    grids = grids[grids.sum(axis=1) <= n]
    return np.concatenate([grids, n - grids.sum(axis=1, keepdims=True)], axis=1)


def ensemble_encode(scheme: SchemeSpec, x: np.ndarray, z: np.ndarray, message_count: int,
                    gen: np.random.Generator, class_budget: int = 2_000_000) -> Tuple[int, np.ndarray]:
    """
    Likelihood encoding against a fresh random codebook of `message_count` words, sampled
    through joint type classes instead of codeword by codeword.

    Codeword prior and likelihood depend on u^n only through the counts of each u symbol
    inside every (z, x) group of positions. Class occupancies are drawn as independent
    Poisson counts with mean M * P(class); the chosen class is sampled with weight
    count * likelihood and a codeword is placed uniformly inside it. Returns (m, u^n).
    """
    n = x.size
    ku = scheme.u_size
    pu = np.nan_to_num(scheme.u_given_z.p)
    px = np.nan_to_num(scheme.x_given_zu.p)
    groups: List[Tuple[np.ndarray, np.ndarray]] = []
    log_prior = np.zeros(1)
    log_lik = np.zeros(1)
    sizes: List[int] = []
    for zv in range(scheme.z_size):
        for xv in range(scheme.x_size):
            pos = np.flatnonzero((z == zv) & (x == xv))
            if not pos.size:
                continue
            if len(log_prior) * math.comb(pos.size + ku - 1, ku - 1) > class_budget:
                raise BudgetExceededError(f"ensemble_encode: type classes exceed budget {class_budget}")
            comps = _composition_array(pos.size, ku)
            lp = gammaln(pos.size + 1) - gammaln(comps + 1).sum(axis=1) + xlogy(comps, pu[zv]).sum(axis=1)
            ll = xlogy(comps, px[zv, :, xv]).sum(axis=1)
            log_prior = (log_prior[:, None] + lp[None, :]).ravel()
            log_lik = (log_lik[:, None] + ll[None, :]).ravel()
            groups.append((pos, comps))
            sizes.append(comps.shape[0])

    log_mean = math.log(message_count) + log_prior
    log_count = np.full(log_mean.shape, -np.inf)
    small = log_mean <= math.log(_POISSON_CAP)
    draws = gen.poisson(np.exp(log_mean[small]))
    with np.errstate(divide="ignore"):
        log_count[small] = np.log(draws)
    log_count[~small] = log_mean[~small]

    log_w = log_count + log_lik
    if not np.isfinite(log_w.max()):
        raise EncodingFailure("ensemble_encode: no codeword assigns x^n positive likelihood")
    probs = np.exp(log_w - logsumexp(log_w))
    cdf = np.cumsum(probs)
    chosen = int(min(cdf.size - 1, np.searchsorted(cdf, gen.random() * cdf[-1], side="right")))

    u = np.empty(n, dtype=np.int64)
    for (pos, comps), idx in zip(groups, np.unravel_index(chosen, sizes) if sizes else ()):
        symbols = np.repeat(np.arange(ku), comps[idx])
        u[pos] = gen.permutation(symbols)
    return 1 + _uniform_index(gen, message_count), u


# ----------------------------
# Trials
# ----------------------------

@dataclass(frozen=True)
class TrialResult:
    trial: int
    distortion: float
    empirical_tv: float
    message: int
    common_randomness: int
    failed: bool = False

    def as_row(self) -> List[Any]:
        return [self.trial, self.distortion, self.empirical_tv, self.message, self.common_randomness]


@dataclass(frozen=True)
class TrialStats:
    """Mergeable sums over trials; merge is associative and commutative."""
    count: int = 0
    failures: int = 0
    sum_d: float = 0.0
    sumsq_d: float = 0.0
    sum_tv: float = 0.0
    sumsq_tv: float = 0.0

    @classmethod
    def of(cls, r: TrialResult) -> "TrialStats":
        if r.failed:
            return cls(failures=1)
        return cls(1, 0, r.distortion, r.distortion ** 2, r.empirical_tv, r.empirical_tv ** 2)

    def merge(self, other: "TrialStats") -> "TrialStats":
        return TrialStats(
            self.count + other.count,
            self.failures + other.failures,
            self.sum_d + other.sum_d,
            self.sumsq_d + other.sumsq_d,
            self.sum_tv + other.sum_tv,
            self.sumsq_tv + other.sumsq_tv,
        )

    def half_width(self, s: float, ss: float) -> float:
        if self.count < 2:
            return 0.0
        mean = s / self.count
        var = max(0.0, (ss - self.count * mean * mean) / (self.count - 1))
        return _Z95 * math.sqrt(var / self.count)


@dataclass(frozen=True)
class SimReport:
    mean_distortion: float
    mean_empirical_tv: float
    ci95_distortion: float
    ci95_tv: float
    trials: int
    failures: int
    n: int
    R: float
    R0: float
    encoder: str
    results: List[TrialResult] = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out.pop("results")
        return out

    def trial_rows(self) -> List[List[Any]]:
        return [r.as_row() for r in self.results if not r.failed]


TRIAL_CSV_HEADER = ["trial", "distortion", "empirical_tv", "message", "m0"]


def sample_source(scheme: SchemeSpec, n: int, gen: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """(x^n, z^n) i.i.d. from p_xz."""
    flat = scheme.p_xz.p.ravel()
    cdf = np.cumsum(flat)
    idx = inverse_cdf(np.broadcast_to(cdf, (n, flat.size)), gen.random(n) * cdf[-1])
    return idx // scheme.z_size, idx % scheme.z_size


def measure(scheme: SchemeSpec, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Per-letter distortion and d_TV between the types of x^n and y^n."""
    k = max(scheme.x_size, scheme.y_size)
    dist = float(scheme.d.d[x, y].mean())
    tv = tv_distance(pad_to(empirical(x, scheme.x_size).p, k), pad_to(empirical(y, scheme.y_size).p, k))
    return dist, tv


def run_trial(cb: Codebook, trial_index: int, encoder: str = "exact", message_budget: int = 1 << 22,
              class_budget: int = 2_000_000) -> TrialResult:
    """One source block through encoder and decoder; randomness derived from (master_seed, trial_index)."""
    if trial_index < 0:
        raise ValidationError("run_trial: trial_index must be >= 0")
    if encoder not in ENCODERS:
        raise ValidationError(f"run_trial: unknown encoder '{encoder}'")
    cfg = cb.config
    scheme = cb.scheme
    gen = trial_generator("trial", cfg.master_seed, trial_index)
    x, z = sample_source(scheme, cfg.n, gen)
    m0 = 1 + _uniform_index(gen, cfg.randomness_count)
    if encoder == "exact":
        trial_seed = derive_key("trial-seed", cfg.master_seed, trial_index)
        m = likelihood_encode(cb, x, z, m0, trial_seed, message_budget)
        y = decode(cb, m, z, m0, trial_seed)
    else:
        m, u = ensemble_encode(scheme, x, z, cfg.message_count, gen, class_budget)
        y = inverse_cdf(_cdf_table(scheme.y_given_zu.p)[z, u], gen.random(cfg.n))
    dist, tv = measure(scheme, x, y)
    return TrialResult(trial_index, dist, tv, m, m0)


def monte_carlo(cb: Codebook, encoder: str = "exact", threads: int = 1, message_budget: int = 1 << 22,
                class_budget: int = 2_000_000) -> SimReport:
    """Independent trials 0..trials-1, merged into means and normal-approximation 95% half-widths."""
    cfg = cb.config
    if cfg.trials < 2:
        raise ValidationError("monte_carlo: at least 2 trials required")
    if encoder == "exact" and cfg.message_count > message_budget:
        raise BudgetExceededError(
            f"monte_carlo: {cfg.message_count} messages exceed message_budget {message_budget}; use the ensemble encoder"
        )

    def one(t: int) -> TrialResult:
        try:
            return run_trial(cb, t, encoder, message_budget, class_budget)
        except EncodingFailure as ex:
            log.debug("trial %d: %s", t, ex)
            return TrialResult(t, float("nan"), float("nan"), 0, 0, failed=True)

    log.info("monte_carlo: n=%d R=%.4f R0=%.4f trials=%d encoder=%s", cfg.n, cfg.R, cfg.R0, cfg.trials, encoder)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, range(cfg.trials)))
    stats = reduce(TrialStats.merge, (TrialStats.of(r) for r in results), TrialStats())
    if stats.count == 0:
        raise EncodingFailure(f"monte_carlo: all {cfg.trials} trials failed to encode")
    if stats.failures:
        log.warning("monte_carlo: %d of %d trials failed to encode", stats.failures, cfg.trials)
    return SimReport(
        mean_distortion=stats.sum_d / stats.count,
        mean_empirical_tv=stats.sum_tv / stats.count,
        ci95_distortion=stats.half_width(stats.sum_d, stats.sumsq_d),
        ci95_tv=stats.half_width(stats.sum_tv, stats.sumsq_tv),
        trials=stats.count,
        failures=stats.failures,
        n=cfg.n,
        R=cfg.R,
        R0=cfg.R0,
        encoder=encoder,
        results=results,
    )


# ----------------------------
# Exact laws at small n
# ----------------------------

@dataclass(frozen=True)
class ExactLaws:
    """
    Exact block laws for one codebook realization; arrays are indexed by sequence
    rank (see probability.sequences).

    p_xy:     law induced by likelihood encoder and decoder
    q_xy:     auxiliary law with (m, m0) uniform and x^n, y^n drawn from the codeword
    pbar_xy:  i.i.d. product of the base (x, y) marginal
    q_yz, pbar_yz: the (y^n, z^n) counterparts of q and pbar
    q_mk:     auxiliary law of (m0, m)
    failure_mass: source mass on blocks no codeword can explain (encoded uniformly)
    """
    n: int
    p_xy: np.ndarray
    q_xy: np.ndarray
    pbar_xy: np.ndarray
    q_yz: np.ndarray
    pbar_yz: np.ndarray
    q_mk: np.ndarray
    p_x_source: np.ndarray
    failure_mass: float


def _pairwise_product(table: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.prod(table[a[:, None, :], b[None, :, :]], axis=2)


def exact_joint_law(scheme: SchemeSpec, config: CodeConfig, codebook_seed: int = 0,
                    budget: int = 10_000_000) -> ExactLaws:
    n = config.n
    kx, ky, kz = scheme.x_size, scheme.y_size, scheme.z_size
    msgs, rand = config.message_count, config.randomness_count
    terms = (kx ** n) * (kz ** n) * msgs * rand
    if terms > budget:
        raise BudgetExceededError(f"exact_joint_law: {terms} terms exceed enumeration budget {budget}")
    xs, ys, zs = sequences(kx, n), sequences(ky, n), sequences(kz, n)
    cb = Codebook(scheme, config, codebook_seed)
    px_tab = np.nan_to_num(scheme.x_given_zu.p)
    py_tab = np.nan_to_num(scheme.y_given_zu.p)
    p_xz = scheme.p_xz.p
    p_z = scheme.p_z
    pz_seq = product_law(p_z, n)

    p_xy = np.zeros((xs.shape[0], ys.shape[0]))
    q_xy = np.zeros_like(p_xy)
    q_yz = np.zeros((ys.shape[0], zs.shape[0]))
    q_mk = np.zeros((rand, msgs))
    failure = 0.0
    for zi, z in enumerate(zs):
        pz = pz_seq[zi]
        if pz <= 0:
            continue
        cond = np.prod(p_xz[xs, z[None, :]] / p_z[z][None, :], axis=1)       # P(x^n | z^n)
        for m0 in range(1, rand + 1):
            u = cb.block(z, m0, 1, msgs + 1)                                   # (M, n)
            lx = np.prod(px_tab[z[None, None, :], u[:, None, :], xs[None, :, :]], axis=2)   # (M, X^n)
            ly = np.prod(py_tab[z[None, None, :], u[:, None, :], ys[None, :, :]], axis=2)   # (M, Y^n)
            norm_x = lx.sum(axis=0)
            enc = np.where(norm_x > 0, lx / np.where(norm_x > 0, norm_x, 1.0), 1.0 / msgs)
            w = pz / rand
            failure += w * float(cond[norm_x <= 0].sum())
            p_xy += w * cond[:, None] * (enc.T @ ly)
            q_xy += (w / msgs) * (lx.T @ ly)
            q_yz[:, zi] += (w / msgs) * ly.sum(axis=0)
            q_mk[m0 - 1] += (w / msgs) * lx.sum(axis=1) * ly.sum(axis=1)

    base = scheme.base_joint()
    pbar_xy = _pairwise_product(base.sum(axis=(2, 3)), xs, ys)
    pbar_yz = _pairwise_product(base.sum(axis=(0, 3)), ys, zs)
    return ExactLaws(n, p_xy, q_xy, pbar_xy, q_yz, pbar_yz, q_mk, product_law(scheme.p_xz.p.sum(axis=1), n),
                     failure)


def _embed(law: np.ndarray, k_from: int, k: int, n: int) -> np.ndarray:
    """Move a law on k_from^n into k^n (same sequences, ranks recomputed)."""
    if k_from == k:
        return law
    idx = sequences(k_from, n) @ (k ** np.arange(n - 1, -1, -1))
    out = np.zeros(k ** n)
    out[idx] = law
    return out


@dataclass(frozen=True)
class ProofDiagnostics:
    codebook_seed: int
    tv_P_Q: float
    tv_Q_Pbar_YZ: float
    tv_P_Pbar: float
    strong_tv: float
    expected_empirical_tv: float
    expected_distortion: float
    failure_mass: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class DiagnosticsReport:
    per_seed: List[ProofDiagnostics]
    mean: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return {"per_seed": [d.to_dict() for d in self.per_seed], "mean": dict(self.mean)}


def diagnose(scheme: SchemeSpec, laws: ExactLaws, codebook_seed: int) -> ProofDiagnostics:
    n = laws.n
    kx, ky = scheme.x_size, scheme.y_size
    k = max(kx, ky)
    xs, ys = sequences(kx, n), sequences(ky, n)
    strong = tv_distance(_embed(laws.p_x_source, kx, k, n), _embed(laws.p_xy.sum(axis=0), ky, k, n))
    type_x = (xs[:, :, None] == np.arange(k)).mean(axis=1)
    type_y = (ys[:, :, None] == np.arange(k)).mean(axis=1)
    tv_types = 0.5 * np.abs(type_x[:, None, :] - type_y[None, :, :]).sum(axis=-1)
    dist = scheme.d.d[xs[:, None, :], ys[None, :, :]].mean(axis=-1)
    return ProofDiagnostics(
        codebook_seed=codebook_seed,
        tv_P_Q=tv_distance(laws.p_xy, laws.q_xy),
        tv_Q_Pbar_YZ=tv_distance(laws.q_yz, laws.pbar_yz),
        tv_P_Pbar=tv_distance(laws.p_xy, laws.pbar_xy),
        strong_tv=strong,
        expected_empirical_tv=float((laws.p_xy * tv_types).sum()),
        expected_distortion=float((laws.p_xy * dist).sum()),
        failure_mass=laws.failure_mass,
    )


def proof_diagnostics(scheme: SchemeSpec, config: CodeConfig, seeds: Sequence[int] = (0,),
                      budget: int = 10_000_000) -> DiagnosticsReport:
    """Exact diagnostics per codebook seed, plus their average over the seed list."""
    if not seeds:
        raise ValidationError("proof_diagnostics: at least one codebook seed required")
    per_seed = [diagnose(scheme, exact_joint_law(scheme, config, s, budget), s) for s in seeds]
    failed = [d.codebook_seed for d in per_seed if d.failure_mass > 0]
    if failed:
        log.warning("proof_diagnostics: encoding failures (uniform fallback) under codebook seeds %s", failed)
    keys = ("tv_P_Q", "tv_Q_Pbar_YZ", "tv_P_Pbar", "strong_tv", "expected_empirical_tv", "expected_distortion",
            "failure_mass")
    mean = {k: float(np.mean([getattr(d, k) for d in per_seed])) for k in keys}
    return DiagnosticsReport(per_seed, mean)
