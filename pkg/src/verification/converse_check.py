# src/verification/converse_check.py
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from src.core.errors import BudgetExceededError, InfeasibleProblemError, ValidationError
from src.core.probability import JointTable, information, pad_to, sequences, tv_distance
from src.core.rdp_solver import ProblemSpec, SolverConfig, solve_empirical_rdp
from src.simulation.codebook import trial_generator
from src.utils.logger import get_logger

log = get_logger(__name__)

SANDWICH_TOL = 1e-12


@dataclass(frozen=True)
class SmallCode:
    """
    Deterministic block code without common randomness.

    encoder[x_rank, z_rank] is the message (0-based) sent for (x^n, z^n);
    decoder[m, z_rank] is the rank of the reconstruction y^n. Ranks follow
    probability.sequences.
    """
    n: int
    M: int
    encoder: np.ndarray
    decoder: np.ndarray

    def __post_init__(self) -> None:
        enc = np.asarray(self.encoder, dtype=np.int64)
        dec = np.asarray(self.decoder, dtype=np.int64)
        if self.n < 1 or self.M < 1:
            raise ValidationError("SmallCode: need n >= 1 and M >= 1")
        if enc.ndim != 2 or dec.ndim != 2 or dec.shape != (self.M, enc.shape[1]):
            raise ValidationError("SmallCode: encoder must be (X^n, Z^n) and decoder (M, Z^n)")
        if enc.min() < 0 or enc.max() >= self.M or dec.min() < 0:
            raise ValidationError("SmallCode: map values out of range")
        object.__setattr__(self, "encoder", enc)
        object.__setattr__(self, "decoder", dec)

    @property
    def rate(self) -> float:
        return math.log2(self.M) / self.n

    def describe(self) -> Dict[str, Any]:
        return {"n": self.n, "M": self.M, "encoder": self.encoder.tolist(), "decoder": self.decoder.tolist()}

    @classmethod
    def identity(cls, kx: int, kz: int, n: int) -> "SmallCode":
        """M = |X|^n, message = x^n, reconstruction = x^n."""
        size = kx ** n
        enc = np.repeat(np.arange(size)[:, None], kz ** n, axis=1)
        dec = np.repeat(np.arange(size)[:, None], kz ** n, axis=1)
        return cls(n, size, enc, dec)

    @classmethod
    def constant(cls, kx: int, kz: int, n: int, y_rank: int) -> "SmallCode":
        return cls(n, 1, np.zeros((kx ** n, kz ** n), dtype=np.int64), np.full((1, kz ** n), y_rank))


@dataclass(frozen=True)
class CodeEvaluation:
    rate: float
    distortion: float
    perception_tv: float
    expected_empirical_tv: float
    auxiliary_rate_bound: float
    time_mixed_joint: JointTable

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rate": self.rate,
            "distortion": self.distortion,
            "perception_tv": self.perception_tv,
            "expected_empirical_tv": self.expected_empirical_tv,
            "auxiliary_rate_bound": self.auxiliary_rate_bound,
            "time_mixed_joint": self.time_mixed_joint.p.tolist(),
        }


def evaluate_code(code: SmallCode, spec: ProblemSpec, budget: int = 1_000_000) -> CodeEvaluation:
    """
    Exact expectations over the i.i.d. source for one code, with T uniform on 1..n:
    per-letter distortion, d_TV(P_{X_T}, P_{Y_T}), E d_TV of the block types, and
    I(X_T; T, M | Z_T).
    """
    n = code.n
    kx, ky, kz = spec.x_size, spec.y_size, spec.z_size
    if (kx * kz) ** n > budget:
        raise BudgetExceededError(f"evaluate_code: {(kx * kz) ** n} source blocks exceed budget {budget}")
    xs, ys, zs = sequences(kx, n), sequences(ky, n), sequences(kz, n)
    if code.encoder.shape != (xs.shape[0], zs.shape[0]) or code.decoder.max() >= ys.shape[0]:
        raise ValidationError("evaluate_code: code does not match the problem alphabets")
    p_seq = np.prod(spec.p_xz.p[xs[:, None, :], zs[None, :, :]], axis=2)        # (X^n, Z^n)
    z_rank = np.arange(zs.shape[0])[None, :]
    y_rank = code.decoder[code.encoder, z_rank]                                 # (X^n, Z^n)
    y_seq = ys[y_rank]                                                          # (X^n, Z^n, n)

    x_b = np.broadcast_to(xs[:, None, :], y_seq.shape)
    z_b = np.broadcast_to(zs[None, :, :], y_seq.shape)
    m_b = np.broadcast_to(code.encoder, p_seq.shape)
    mixed = np.zeros((kx, ky, kz))
    aux = np.zeros((kx, kz, n, code.M))
    share = p_seq / n
    for t in range(n):
        np.add.at(mixed, (x_b[..., t], y_seq[..., t], z_b[..., t]), share)
        np.add.at(aux, (x_b[..., t], z_b[..., t], t, m_b), share)

    distortion = float((p_seq * spec.d.d[x_b, y_seq].mean(axis=-1)).sum())
    k = spec.common_size
    perception = tv_distance(pad_to(mixed.sum(axis=(1, 2)), k), pad_to(mixed.sum(axis=(0, 2)), k))
    sym = np.arange(k)
    type_x = (xs[:, :, None] == sym).mean(axis=1)
    type_y = (ys[:, :, None] == sym).mean(axis=1)[y_rank]
    block_tv = 0.5 * np.abs(type_x[:, None, :] - type_y).sum(axis=-1)
    return CodeEvaluation(
        rate=code.rate,
        distortion=min(spec.d.d_max, distortion),
        perception_tv=perception,
        expected_empirical_tv=float((p_seq * block_tv).sum()),
        auxiliary_rate_bound=information(aux, (0,), (2, 3), (1,)),
        time_mixed_joint=JointTable(mixed),
    )


@dataclass
class ConverseReport:
    """Search outcome; merge() is associative so partial searches can be combined."""
    codes_checked: int = 0
    violations: List[Dict[str, Any]] = field(default_factory=list)
    sandwich_violations: int = 0
    bound_violations: int = 0
    solver_failures: int = 0
    closest_gap: float = math.inf

    def merge(self, other: "ConverseReport") -> "ConverseReport":
        return ConverseReport(
            self.codes_checked + other.codes_checked,
            self.violations + other.violations,
            self.sandwich_violations + other.sandwich_violations,
            self.bound_violations + other.bound_violations,
            self.solver_failures + other.solver_failures,
            min(self.closest_gap, other.closest_gap),
        )

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["closest_gap"] = None if math.isinf(self.closest_gap) else self.closest_gap
        return out


class _SolverCache:
    """R^(e) at achieved (delta, pi) points; codes share few distinct points."""

    def __init__(self, spec: ProblemSpec, cfg: SolverConfig):
        self.spec = spec
        self.cfg = cfg
        self._rates: Dict[Tuple[float, float], Optional[float]] = {}

    def rate(self, delta: float, pi: float) -> Optional[float]:
        key = (round(delta, 12), round(pi, 12))
        if key not in self._rates:
            try:
                self._rates[key] = solve_empirical_rdp(self.spec, key[0], min(1.0, key[1]), self.cfg).rate
            except InfeasibleProblemError as ex:
                log.warning("solver found no channel at an achieved point %s: %s", key, ex)
                self._rates[key] = None
        return self._rates[key]


def _check_codes(spec: ProblemSpec, codes: Iterable[SmallCode], tol: float, cfg: SolverConfig) -> ConverseReport:
    cache = _SolverCache(spec, cfg)
    report = ConverseReport()
    for code in codes:
        ev = evaluate_code(code, spec)
        report.codes_checked += 1
        if ev.expected_empirical_tv + SANDWICH_TOL < ev.perception_tv:
            report.sandwich_violations += 1
        if ev.rate + SANDWICH_TOL < ev.auxiliary_rate_bound:
            report.bound_violations += 1
        solver_rate = cache.rate(ev.distortion, ev.perception_tv)
        if solver_rate is None:
            # an achieved point is feasible by construction
            report.solver_failures += 1
            report.violations.append({
                "code": code.describe(),
                "rate": ev.rate,
                "delta": ev.distortion,
                "pi": ev.perception_tv,
                "solver_rate": None,
            })
            continue
        gap = ev.rate - solver_rate
        report.closest_gap = min(report.closest_gap, gap)
        if gap < -tol:
            report.violations.append({
                "code": code.describe(),
                "rate": ev.rate,
                "delta": ev.distortion,
                "pi": ev.perception_tv,
                "solver_rate": solver_rate,
            })
    if report.violations:
        log.error("%d of %d codes beat the single-letter rate", len(report.violations), report.codes_checked)
    return report


def _space_sizes(spec: ProblemSpec, n: int, M: int) -> Tuple[int, int, int, int]:
    src = (spec.x_size ** n) * (spec.z_size ** n)
    outs = spec.y_size ** n
    zn = spec.z_size ** n
    return src, outs, zn, (M ** src) * (outs ** (M * zn))


def exhaustive_check(spec: ProblemSpec, n: int, M: int, tol: float = 1e-6,
                     cfg: SolverConfig = SolverConfig(), limit: int = 1_000_000) -> ConverseReport:
    """Every deterministic (encoder, decoder) pair of blocklength n with M messages."""
    if n < 1 or M < 1:
        raise ValidationError("exhaustive_check: need n >= 1 and M >= 1")
    src, outs, zn, total = _space_sizes(spec, n, M)
    if total > limit:
        raise BudgetExceededError(f"exhaustive_check: {total} encoder/decoder pairs exceed the limit {limit}")
    log.info("exhaustive_check: n=%d M=%d over %d codes", n, M, total)
    xn = src // zn

    def codes() -> Iterable[SmallCode]:
        for enc in itertools.product(range(M), repeat=src):
            enc_arr = np.array(enc, dtype=np.int64).reshape(xn, zn)
            for dec in itertools.product(range(outs), repeat=M * zn):
                yield SmallCode(n, M, enc_arr, np.array(dec, dtype=np.int64).reshape(M, zn))

    return _check_codes(spec, codes(), tol, cfg)


def sampled_check(spec: ProblemSpec, n: int, M: int, samples: int, seed: int, tol: float = 1e-6,
                  cfg: SolverConfig = SolverConfig()) -> ConverseReport:
    """Uniformly sampled encoder/decoder pairs; a pure function of seed."""
    if n < 1 or M < 1 or samples < 0:
        raise ValidationError("sampled_check: need n >= 1, M >= 1 and samples >= 0")
    src, outs, zn, _ = _space_sizes(spec, n, M)
    xn = src // zn
    gen = trial_generator("converse", seed)

    def codes() -> Iterable[SmallCode]:
        for _ in range(samples):
            enc = gen.integers(M, size=(xn, zn))
            dec = gen.integers(outs, size=(M, zn))
            yield SmallCode(n, M, enc, dec)

    return _check_codes(spec, codes(), tol, cfg)
