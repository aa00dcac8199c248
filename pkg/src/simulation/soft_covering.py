# src/simulation/soft_covering.py
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import BudgetExceededError, ValidationError
from src.core.probability import Channel, JointTable, as_array, empirical, information, sequences, tv_distance
from src.simulation.codebook import derive_key, floor_pow2, inverse_cdf, prf_uniforms, sequence_digest
from src.utils.logger import get_logger

log = get_logger(__name__)

# Cap on codewords x outcomes x positions held in memory per chunk.
_CHUNK_CELLS = 4_000_000


def uniform_type_sequence(p_w: np.ndarray, n: int) -> Tuple[int, ...]:
    """A w^n whose type is the largest-remainder rounding of n * p_w, symbols in ascending order."""
    p = as_array(p_w).ravel()
    raw = n * p
    counts = np.floor(raw).astype(int)
    short = n - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return tuple(int(s) for s in np.repeat(np.arange(p.size), counts))


@dataclass(frozen=True)
class SynthesisSpec:
    """
    Channel synthesis instance: codewords u^n(w^n, j) ~ prod P(u_i | w_i), j = 1..floor(2^{nR}),
    pushed through P(v | u, w) and compared with prod P(v | w_i).
    """
    p_w: np.ndarray
    u_given_w: Channel
    v_given_uw: Channel
    n: int
    R: float
    w_seq: Tuple[int, ...] = ()
    seeds: Tuple[int, ...] = tuple(range(50))
    budget: int = 10_000_000
    _v_given_w: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        p_w = np.asarray(as_array(self.p_w), dtype=float).ravel()
        if np.any(p_w < 0) or abs(p_w.sum() - 1.0) > 1e-9:
            raise ValidationError("SynthesisSpec: p_w must be a distribution")
        kw = p_w.size
        if self.u_given_w.in_dims != (kw,):
            raise ValidationError("SynthesisSpec: u_given_w must be indexed by w")
        if self.v_given_uw.in_dims != (self.u_given_w.out_dim, kw):
            raise ValidationError("SynthesisSpec: v_given_uw must map (u, w) to v")
        if self.n < 1:
            raise ValidationError("SynthesisSpec: n must be >= 1")
        if self.R < 0:
            raise ValidationError("SynthesisSpec: R must be >= 0")
        w = self.w_seq or uniform_type_sequence(p_w, self.n)
        if len(w) != self.n or min(w) < 0 or max(w) >= kw:
            raise ValidationError("SynthesisSpec: w^n must have length n over the W alphabet")
        if self.v_size ** self.n > self.budget:
            raise BudgetExceededError(f"SynthesisSpec: {self.v_size}^{self.n} outcomes exceed budget {self.budget}")
        object.__setattr__(self, "p_w", p_w)
        object.__setattr__(self, "w_seq", tuple(int(s) for s in w))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        vw = np.einsum("wu,uwv->wv", np.nan_to_num(self.u_given_w.p), np.nan_to_num(self.v_given_uw.p))
        object.__setattr__(self, "_v_given_w", vw)

    @property
    def u_size(self) -> int:
        return self.u_given_w.out_dim

    @property
    def v_size(self) -> int:
        return self.v_given_uw.out_dim

    @property
    def codeword_count(self) -> int:
        return floor_pow2(self.n * self.R)

    @property
    def p_uvw(self) -> JointTable:
        """Single-letter joint over (U, V, W) under p_w."""
        return JointTable(np.einsum("w,wu,uwv->uvw", self.p_w, self.u_given_w.p, self.v_given_uw.p))

    def with_cell(self, n: int, R: float) -> "SynthesisSpec":
        """Same channels at another (n, R); w^n reset to the maximally uniform type."""
        return replace(self, n=n, R=R, w_seq=())


@dataclass(frozen=True)
class SynthesisResult:
    n: int
    R: float
    tv: List[float]
    mean_tv: float
    threshold: float


def _codewords(spec: SynthesisSpec, seed: int, start: int, stop: int) -> np.ndarray:
    w = np.asarray(spec.w_seq, dtype=np.int64)
    key = derive_key("synthesis", seed, sequence_digest(w))
    rows = np.arange(start, stop, dtype=np.uint64)
    counters = rows[:, None] * np.uint64(spec.n) + np.arange(spec.n, dtype=np.uint64)[None, :]
    cdf = np.cumsum(np.nan_to_num(spec.u_given_w.p), axis=-1)[w]
    return inverse_cdf(cdf[None, :, :], prf_uniforms(key, counters))


def synthesize_output_law(spec: SynthesisSpec, seed: int) -> np.ndarray:
    """Q(v^n | w^n) = (1/J) sum_j prod_i P(v_i | u_i(w^n, j), w_i), indexed like sequences(|V|, n)."""
    n, j_total = spec.n, spec.codeword_count
    vs = sequences(spec.v_size, n)
    w = np.asarray(spec.w_seq, dtype=np.int64)
    table = np.nan_to_num(spec.v_given_uw.p)
    chunk = max(1, _CHUNK_CELLS // (vs.shape[0] * n))
    law = np.zeros(vs.shape[0])
    for start in range(0, j_total, chunk):
        stop = min(j_total, start + chunk)
        cw = _codewords(spec, seed, start, stop)
        law += np.prod(table[cw[:, None, :], w[None, None, :], vs[None, :, :]], axis=2).sum(axis=0)
    return law / j_total


def target_law(spec: SynthesisSpec) -> np.ndarray:
    """prod_i P(v_i | w_i) over V^n."""
    out = np.ones(1)
    for wi in spec.w_seq:
        out = np.outer(out, spec._v_given_w[wi]).ravel()
    return out


def tv_to_target(spec: SynthesisSpec, seed: int) -> float:
    return tv_distance(target_law(spec), synthesize_output_law(spec, seed))


def synthesis_threshold(spec: SynthesisSpec) -> float:
    """I(U;V|W) under P(u,v|w) weighted by the type of w^n."""
    kw = spec.p_w.size
    w_type = empirical(spec.w_seq, kw).p
    joint = np.einsum("w,wu,uwv->uvw", w_type, np.nan_to_num(spec.u_given_w.p), np.nan_to_num(spec.v_given_uw.p))
    return information(joint, (0,), (1,), (2,))


def run_synthesis(spec: SynthesisSpec) -> SynthesisResult:
    if not spec.seeds:
        raise ValidationError("run_synthesis: at least one seed required")
    target = target_law(spec)
    tvs = [tv_distance(target, synthesize_output_law(spec, s)) for s in spec.seeds]
    return SynthesisResult(spec.n, spec.R, tvs, float(np.mean(tvs)), synthesis_threshold(spec))


@dataclass(frozen=True)
class SweepRow:
    n: int
    R: float
    threshold: float
    mean_tv: float
    seed_count: int
    status: str = "ok"

    def as_row(self) -> List[Any]:
        return [self.n, self.R, self.threshold, self.mean_tv, self.seed_count]

    def to_dict(self) -> Dict[str, Any]:
        return {"n": self.n, "R": self.R, "threshold": self.threshold, "mean_tv": self.mean_tv,
                "seed_count": self.seed_count, "status": self.status}


SWEEP_CSV_HEADER = ["n", "R", "threshold", "mean_tv", "seed_count"]


def _sweep_cell(template: SynthesisSpec, n: int, R: float, seeds: Tuple[int, ...]) -> SweepRow:
    try:
        spec = replace(template.with_cell(n, R), seeds=seeds)
        res = run_synthesis(spec)
    except BudgetExceededError as ex:
        log.warning("rate_sweep: cell n=%d R=%g skipped: %s", n, R, ex)
        return SweepRow(n, R, float("nan"), float("nan"), 0, "budget_exceeded")
    return SweepRow(n, R, res.threshold, res.mean_tv, len(seeds))


def rate_sweep(template: SynthesisSpec, n_list: Sequence[int], R_list: Sequence[float],
               seeds: Optional[Sequence[int]] = None, threads: int = 1) -> List[SweepRow]:
    """Mean TV on the (n, R) grid, rows ordered by R then n; cells over budget are flagged."""
    use = tuple(int(s) for s in (template.seeds if seeds is None else seeds))
    if not use:
        raise ValidationError("rate_sweep: at least one seed required")
    cells = [(n, float(r)) for r in R_list for n in sorted(n_list)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(lambda c: _sweep_cell(template, c[0], c[1], use), cells))
