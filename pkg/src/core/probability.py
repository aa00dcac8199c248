# src/core/probability.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr, gammaln, xlogy

from src.core.errors import BudgetExceededError, ValidationError

# Validity tolerance for every probability table.
PROB_TOL = 1e-12
# Default equality tolerance used when deciding P_X == P_Y.
EQUALITY_TOL = 1e-9
_LN2 = np.log(2.0)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_masses(p: np.ndarray, what: str, atol: float) -> None:
    if p.size == 0:
        raise ValidationError(f"{what}: empty table")
    if not np.all(np.isfinite(p)):
        raise ValidationError(f"{what}: non-finite entries")
    if np.any(p < -atol):
        raise ValidationError(f"{what}: negative mass {p.min():.3g}")
    total = float(p.sum())
    if abs(total - 1.0) > atol:
        raise ValidationError(f"{what}: total mass {total!r} differs from 1")


# ----------------------------
# Table types
# ----------------------------

@dataclass(frozen=True)
class ProbVec:
    """Distribution over a single finite alphabet {0, ..., k-1}."""
    p: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen(self.p)
        if arr.ndim != 1:
            raise ValidationError(f"ProbVec: expected 1 axis, got {arr.ndim}")
        _check_masses(arr, "ProbVec", PROB_TOL)
        object.__setattr__(self, "p", arr)

    @property
    def alphabet_size(self) -> int:
        return int(self.p.shape[0])

    @classmethod
    def uniform(cls, k: int) -> "ProbVec":
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def point_mass(cls, k: int, symbol: int) -> "ProbVec":
        p = np.zeros(k)
        p[symbol] = 1.0
        return cls(p)


@dataclass(frozen=True)
class JointTable:
    """Joint distribution over two or more finite alphabets (one array axis per variable)."""
    p: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen(self.p)
        if arr.ndim < 2:
            raise ValidationError(f"JointTable: expected at least 2 axes, got {arr.ndim}")
        _check_masses(arr, "JointTable", PROB_TOL)
        object.__setattr__(self, "p", arr)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.p.shape)


@dataclass(frozen=True)
class Channel:
    """
    Conditional law: p[..., y] is the output distribution for one conditioning row.

    Rows whose conditioning event has zero mass (see condition()) are kept as NaN and
    flagged False in `defined`; consumers must not read them.
    """
    p: np.ndarray
    defined: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        arr = np.array(self.p, dtype=float)
        if arr.ndim < 2:
            raise ValidationError("Channel: expected at least one conditioning axis")
        mask = np.ones(arr.shape[:-1], dtype=bool) if self.defined is None else np.array(self.defined, dtype=bool)
        if mask.shape != arr.shape[:-1]:
            raise ValidationError("Channel: defined-mask shape does not match conditioning axes")
        rows = arr[mask]
        if rows.size:
            if not np.all(np.isfinite(rows)) or np.any(rows < -PROB_TOL):
                raise ValidationError("Channel: rows must be finite and nonnegative")
            bad = np.abs(rows.sum(axis=-1) - 1.0) > PROB_TOL
            if np.any(bad):
                raise ValidationError("Channel: every row must sum to 1")
        mask.setflags(write=False)
        arr.setflags(write=False)
        object.__setattr__(self, "p", arr)
        object.__setattr__(self, "defined", mask)

    @property
    def in_dims(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.p.shape[:-1])

    @property
    def out_dim(self) -> int:
        return int(self.p.shape[-1])

    @property
    def fully_defined(self) -> bool:
        return bool(np.all(self.defined))

    @classmethod
    def identity(cls, k: int) -> "Channel":
        return cls(np.eye(k))

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "Channel":
        """Normalize nonnegative rows (used by solver/simulation internals)."""
        rows = np.clip(np.asarray(rows, dtype=float), 0.0, None)
        return cls(rows / rows.sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class EmpiricalDist:
    """Type of a sequence (or of a tuple of aligned sequences): counts / n."""
    counts: np.ndarray
    n: int
    p: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64)
        if self.n < 1 or int(counts.sum()) != self.n:
            raise ValidationError("EmpiricalDist: counts must sum to n >= 1")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "p", _frozen(counts / self.n))


@dataclass(frozen=True)
class DistortionMatrix:
    """Per-letter distortion D(x, y) with entries in [0, d_max]."""
    d: np.ndarray
    d_max: float = -1.0

    def __post_init__(self) -> None:
        arr = _frozen(self.d)
        if arr.ndim != 2:
            raise ValidationError("DistortionMatrix: expected a |X| x |Y| table")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValidationError("DistortionMatrix: entries must be finite and >= 0")
        d_max = float(arr.max()) if self.d_max < 0 else float(self.d_max)
        if not np.isfinite(d_max) or np.any(arr > d_max):
            raise ValidationError("DistortionMatrix: entries must lie in [0, d_max] with finite d_max")
        object.__setattr__(self, "d", arr)
        object.__setattr__(self, "d_max", d_max)

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.d.shape[0]), int(self.d.shape[1]))

    @classmethod
    def hamming(cls, kx: int, ky: Optional[int] = None) -> "DistortionMatrix":
        ky = kx if ky is None else ky
        d = np.ones((kx, ky))
        for i in range(min(kx, ky)):
            d[i, i] = 0.0
        return cls(d, 1.0)


TableLike = Union[ProbVec, JointTable, EmpiricalDist, np.ndarray, Sequence[float]]


def as_array(t: TableLike) -> np.ndarray:
    """Raw mass array behind any table type."""
    if isinstance(t, (ProbVec, JointTable, EmpiricalDist, Channel)):
        return t.p
    return np.asarray(t, dtype=float)


# ----------------------------
# Total variation
# ----------------------------

def tv_distance(p: TableLike, q: TableLike) -> float:
    """Total variation sup_A |P(A) - Q(A)|, evaluated as half the L1 distance."""
    a, b = as_array(p), as_array(q)
    if a.shape != b.shape:
        raise ValidationError(f"tv_distance: alphabet mismatch {a.shape} vs {b.shape}")
    return float(min(1.0, max(0.0, 0.5 * np.abs(a - b).sum())))


def tv_distance_by_subsets(p: TableLike, q: TableLike) -> float:
    """Definitional supremum over all events; only for tiny alphabets."""
    a, b = as_array(p).ravel(), as_array(q).ravel()
    if a.shape != b.shape:
        raise ValidationError("tv_distance_by_subsets: alphabet mismatch")
    if a.size > 16:
        raise BudgetExceededError("tv_distance_by_subsets: at most 16 outcomes")
    diff = a - b
    best = 0.0
    for mask in range(1 << a.size):
        sel = [(mask >> i) & 1 == 1 for i in range(a.size)]
        best = max(best, abs(float(diff[sel].sum())))
    return best


def pad_to(p: np.ndarray, k: int) -> np.ndarray:
    """Embed a distribution on {0..len-1} into {0..k-1} with zero mass on the extra symbols."""
    out = np.zeros(k)
    out[: p.shape[0]] = p
    return out


# ----------------------------
# Empirical distributions
# ----------------------------

def empirical(seq: Sequence[int], alphabet_size: int) -> EmpiricalDist:
    arr = np.asarray(seq, dtype=np.int64)
    if arr.size == 0:
        raise ValidationError("empirical: empty sequence")
    if arr.min() < 0 or arr.max() >= alphabet_size:
        raise ValidationError(f"empirical: symbol outside alphabet of size {alphabet_size}")
    return EmpiricalDist(np.bincount(arr, minlength=alphabet_size), int(arr.size))


def empirical_joint(seqs: Sequence[Sequence[int]], alphabet_sizes: Sequence[int]) -> EmpiricalDist:
    """Joint type of aligned sequences, e.g. ((x_1..x_n), (y_1..y_n))."""
    arrs = [np.asarray(s, dtype=np.int64) for s in seqs]
    if len(arrs) != len(alphabet_sizes) or not arrs:
        raise ValidationError("empirical_joint: one alphabet size per sequence required")
    n = arrs[0].size
    if n == 0:
        raise ValidationError("empirical_joint: empty sequence")
    for a, k in zip(arrs, alphabet_sizes):
        if a.size != n:
            raise ValidationError("empirical_joint: sequences must have equal length")
        if a.min() < 0 or a.max() >= k:
            raise ValidationError(f"empirical_joint: symbol outside alphabet of size {k}")
    flat = np.ravel_multi_index(tuple(arrs), tuple(alphabet_sizes))
    counts = np.bincount(flat, minlength=int(np.prod(alphabet_sizes))).reshape(tuple(alphabet_sizes))
    return EmpiricalDist(counts, int(n))


# ----------------------------
# Expectations and information measures
# ----------------------------

def expected_distortion(joint: TableLike, d: DistortionMatrix) -> float:
    j = as_array(joint)
    if j.shape != d.d.shape:
        raise ValidationError(f"expected_distortion: joint {j.shape} vs distortion {d.d.shape}")
    return float(min(d.d_max, max(0.0, (j * d.d).sum())))


def entropy(p: TableLike) -> float:
    """Shannon entropy in bits of any table (all axes jointly)."""
    a = as_array(p)
    if np.any(a < -PROB_TOL):
        raise ValidationError("entropy: negative mass")
    return float(entr(np.clip(a, 0.0, None)).sum() / _LN2)


def _marginal(j: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    drop = tuple(ax for ax in range(j.ndim) if ax not in keep)
    return j.sum(axis=drop) if drop else j


def information(joint: TableLike, a: Sequence[int], b: Sequence[int], given: Sequence[int] = ()) -> float:
    """I(A;B|C) in bits for disjoint axis groups a, b, given of one joint table."""
    j = as_array(joint)
    a, b, c = tuple(a), tuple(b), tuple(given)
    if set(a) & set(b) or set(a) & set(c) or set(b) & set(c):
        raise ValidationError("information: axis groups must be disjoint")
    if any(ax < 0 or ax >= j.ndim for ax in a + b + c):
        raise ValidationError("information: axis out of range")
    h_ac = entropy(_marginal(j, a + c))
    h_bc = entropy(_marginal(j, b + c))
    h_abc = entropy(_marginal(j, a + b + c))
    h_c = entropy(_marginal(j, c)) if c else 0.0
    return max(0.0, h_ac + h_bc - h_abc - h_c)


def mutual_information(joint: TableLike) -> float:
    j = as_array(joint)
    if j.ndim != 2:
        raise ValidationError("mutual_information: expected a 2-axis table")
    return information(j, (0,), (1,))


def conditional_mutual_information(joint: TableLike, given: int = 2) -> float:
    """I(A;B|C) for a 3-axis table where `given` names the conditioning axis."""
    j = as_array(joint)
    if j.ndim != 3:
        raise ValidationError("conditional_mutual_information: expected a 3-axis table")
    given = given % 3
    a, b = [ax for ax in range(3) if ax != given]
    return information(j, (a,), (b,), (given,))


def kl_divergence(p: TableLike, q: TableLike) -> float:
    """D(P||Q) in bits; +inf when P is not absolutely continuous w.r.t. Q."""
    a, b = as_array(p).ravel(), as_array(q).ravel()
    if a.shape != b.shape:
        raise ValidationError("kl_divergence: alphabet mismatch")
    if np.any((a > 0) & (b <= 0)):
        return float("inf")
    mask = a > 0
    return float((xlogy(a[mask], a[mask]) - xlogy(a[mask], b[mask])).sum() / _LN2)


# ----------------------------
# Probability calculus plumbing
# ----------------------------

def marginalize(joint: TableLike, keep: Sequence[int]) -> Union[ProbVec, JointTable]:
    """Keep the listed axes (in the listed order) and sum out the rest."""
    j = as_array(joint)
    keep = tuple(ax % j.ndim for ax in keep)
    if not keep or len(set(keep)) != len(keep):
        raise ValidationError("marginalize: keep must list distinct axes")
    m = _marginal(j, sorted(keep))
    m = np.transpose(m, [sorted(keep).index(ax) for ax in keep])
    return ProbVec(m) if m.ndim == 1 else JointTable(m)


def compose(prior: TableLike, ch: Channel) -> JointTable:
    """prior(in...) * ch(out | in...) as a joint with the output appended as last axis."""
    pr = as_array(prior)
    if pr.shape != ch.in_dims:
        raise ValidationError(f"compose: prior {pr.shape} vs channel input {ch.in_dims}")
    rows = np.where(ch.defined[..., None], ch.p, 0.0)
    return JointTable(pr[..., None] * rows)


def condition(joint: TableLike, axis: int = -1) -> Channel:
    """
    Channel P(axis | other axes). Conditioning rows with zero mass are left undefined
    (NaN, flagged) rather than filled with an arbitrary completion.
    """
    j = as_array(joint)
    axis = axis % j.ndim
    moved = np.moveaxis(j, axis, -1)
    mass = moved.sum(axis=-1)
    defined = mass > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        rows = moved / mass[..., None]
    rows[~defined] = np.nan
    return Channel(rows, defined)


def conditional_independence_residual(joint: TableLike, a: int, b: int, given: Sequence[int]) -> float:
    """max |P(a,b|g) - P(a|g) P(b|g)| over conditioning values g with positive mass."""
    j = as_array(joint)
    given = tuple(given)
    m = _marginal(j, sorted((a, b) + given))
    order = sorted((a, b) + given)
    m = np.transpose(m, [order.index(ax) for ax in given + (a, b)])
    g_mass = m.sum(axis=(-2, -1))
    ok = g_mass > 0
    if not np.any(ok):
        return 0.0
    cond = m[ok] / g_mass[ok][:, None, None]
    pa = cond.sum(axis=2, keepdims=True)
    pb = cond.sum(axis=1, keepdims=True)
    return float(np.abs(cond - pa * pb).max())


# ----------------------------
# Sequences and product laws
# ----------------------------

def sequences(k: int, n: int) -> np.ndarray:
    """All k^n sequences as rows, lexicographic (row index = base-k number)."""
    if k ** n > 1 << 24:
        raise BudgetExceededError(f"sequences: {k}^{n} rows exceed the enumeration limit")
    return np.indices((k,) * n).reshape(n, -1).T.copy()


def product_law(p: TableLike, n: int) -> np.ndarray:
    """P^{(x)n} as a flat vector indexed like sequences(k, n)."""
    a = as_array(p)
    out = np.ones(1)
    for _ in range(n):
        out = np.outer(out, a).ravel()
    return out


def compositions(n: int, k: int) -> Iterator[Tuple[int, ...]]:
    """All k-tuples of nonnegative integers summing to n."""
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in compositions(n - first, k - 1):
            yield (first,) + rest


def _type_count(n: int, k: int) -> int:
    return int(round(np.exp(gammaln(n + k) - gammaln(k) - gammaln(n + 1))))


def product_tv(p: TableLike, q: TableLike, n: int, method: str = "types", budget: int = 2_000_000) -> float:
    """
    Exact d_TV(P^n, Q^n).

    Product masses depend only on the type of a sequence, so the default method sums
    |P^n(T) - Q^n(T)| over type classes T weighted by their size; method="sequences"
    enumerates X^n directly and is only feasible for tiny n.
    """
    a, b = as_array(p).ravel(), as_array(q).ravel()
    if a.shape != b.shape:
        raise ValidationError("product_tv: alphabet mismatch")
    if n < 1:
        raise ValidationError("product_tv: n must be positive")
    k = a.size
    if method == "sequences":
        if k ** n > budget:
            raise BudgetExceededError(f"product_tv: {k}^{n} sequences exceed budget {budget}")
        return tv_distance(product_law(a, n), product_law(b, n))
    if method != "types":
        raise ValidationError(f"product_tv: unknown method '{method}'")
    if _type_count(n, k) > budget:
        raise BudgetExceededError(f"product_tv: too many type classes for n={n}, k={k}")
    if k == 2:
        c0 = np.arange(n + 1, dtype=float)
        counts = np.stack([c0, n - c0], axis=1)
    else:
        counts = np.array(list(compositions(n, k)), dtype=float)
    log_size = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)
    la = log_size + xlogy(counts, a).sum(axis=1)
    lb = log_size + xlogy(counts, b).sum(axis=1)
    total = 0.5 * np.abs(np.exp(la) - np.exp(lb)).sum()
    return float(min(1.0, max(0.0, total)))


def limsup_product_tv(p: TableLike, q: TableLike, tol: float = EQUALITY_TOL) -> int:
    """
    limsup_n d_TV(P^n, Q^n): 0 when the marginals coincide (within tol), else 1,
    since products of distinct marginals separate completely.
    """
    if tol <= 0:
        raise ValidationError("limsup_product_tv: tol must be positive")
    return 0 if tv_distance(p, q) <= tol else 1
