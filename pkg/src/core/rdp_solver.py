# src/core/rdp_solver.py
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq, linprog, minimize
from scipy.special import logsumexp, xlogy

from src.core.errors import BudgetExceededError, InfeasibleProblemError, ValidationError
from src.core.probability import (
    Channel,
    DistortionMatrix,
    JointTable,
    compositions,
    conditional_independence_residual,
    entropy,
    information,
    limsup_product_tv,
    pad_to,
)
from src.utils.logger import get_logger

log = get_logger("solver")

_LN2 = math.log(2.0)
_TINY = 1e-300
MEMBERSHIP_TOL = 1e-9


# ----------------------------
# Problem, configuration and results
# ----------------------------

@dataclass(frozen=True)
class ProblemSpec:
    """One RDP instance: source law P_XZ (axes x, z), reconstruction alphabet size, distortion."""
    p_xz: JointTable
    y_size: int
    d: DistortionMatrix

    def __post_init__(self) -> None:
        if self.p_xz.p.ndim != 2:
            raise ValidationError("ProblemSpec: p_xz must have axes (x, z)")
        if self.y_size < 1:
            raise ValidationError("ProblemSpec: y_size must be positive")
        if self.d.shape != (self.x_size, self.y_size):
            raise ValidationError(
                f"ProblemSpec: distortion shape {self.d.shape} != ({self.x_size}, {self.y_size})"
            )
        if self.x_size * self.y_size * self.z_size > 10_000:
            raise BudgetExceededError("ProblemSpec: |X|*|Y|*|Z| above 10^4 is out of desk scale")

    @property
    def x_size(self) -> int:
        return int(self.p_xz.p.shape[0])

    @property
    def z_size(self) -> int:
        return int(self.p_xz.p.shape[1])

    @property
    def p_x(self) -> np.ndarray:
        return self.p_xz.p.sum(axis=1)

    @property
    def p_z(self) -> np.ndarray:
        return self.p_xz.p.sum(axis=0)

    @property
    def common_size(self) -> int:
        """Alphabet on which P_X and P_Y are compared (the larger of the two)."""
        return max(self.x_size, self.y_size)

    def conditional_entropy_x_given_z(self) -> float:
        return entropy(self.p_xz) - entropy(self.p_z)


@dataclass(frozen=True)
class SolverConfig:
    """
    Iteration caps and tolerances.

    primal_tol:      slack for monotonicity / nesting comparisons; inner fixed points are
                     iterated to primal_tol * 1e-4.
    dual_tol:        multiplier root-search tolerance and marginal-matching tolerance.
    constraint_tol:  accepted violation of distortion / perception constraints (the epsilon
                     of achievability); operational rate = rate + constraint_tol.
    """
    max_outer_iters: int = 100
    max_inner_iters: int = 5000
    primal_tol: float = 1e-6
    dual_tol: float = 1e-10
    constraint_tol: float = 1e-6
    multiplier_upper_bound: float = 1e4
    step_initial: float = 0.5
    step_decay: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("primal_tol", "dual_tol", "constraint_tol", "multiplier_upper_bound",
                     "step_initial", "step_decay"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"SolverConfig: {name} must be > 0")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValidationError("SolverConfig: iteration caps must be >= 1")
        if self.step_initial >= 1 or self.step_decay >= 1:
            raise ValidationError("SolverConfig: step_initial and step_decay must be < 1")

    @property
    def inner_tol(self) -> float:
        return self.primal_tol * 1e-4


@dataclass(frozen=True)
class RDPSolution:
    rate: float
    channel: Channel
    achieved_distortion: float
    achieved_perception_tv: float
    multipliers: Tuple[float, float]
    converged: bool
    iterations: int
    objective_history: Tuple[float, ...] = ()
    status: str = "optimal"
    constraint_tol: float = 0.0
    output_scaling: Tuple[float, ...] = ()

    @property
    def operational_rate(self) -> float:
        return self.rate + self.constraint_tol

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rate": self.rate,
            "operational_rate": self.operational_rate,
            "achieved_distortion": self.achieved_distortion,
            "achieved_perception_tv": self.achieved_perception_tv,
            "lambda_distortion": self.multipliers[0],
            "nu_perception": self.multipliers[1],
            "converged": self.converged,
            "iterations": self.iterations,
            "status": self.status,
            "channel": self.channel.p.tolist(),
            "objective_history": list(self.objective_history),
        }


@dataclass(frozen=True)
class RegionPoint:
    R: float
    R0: float
    delta: float
    pi: float

    def __post_init__(self) -> None:
        if self.R < 0 or self.R0 < 0 or self.delta < 0 or not (0.0 <= self.pi <= 1.0):
            raise ValidationError("RegionPoint: need R, R0, delta >= 0 and pi in [0, 1]")


@dataclass(frozen=True)
class CurveRow:
    delta: float
    pi: float
    rate: float
    achieved_distortion: float
    achieved_tv: float
    converged: bool
    status: str = "optimal"


@dataclass(frozen=True)
class LagrangianResult:
    channel: Channel
    objective: float
    objective_history: Tuple[float, ...]
    converged: bool
    iterations: int


# ----------------------------
# Channel evaluation
# ----------------------------

def evaluate_channel(spec: ProblemSpec, w: np.ndarray) -> Tuple[float, float, float]:
    """(I(X;Y|Z), E[D], d_TV(P_X, P_Y)) for a channel array W[x, z, y]."""
    joint = spec.p_xz.p[..., None] * w
    rate = information(joint, (0,), (2,), (1,))
    dist = float(min(spec.d.d_max, max(0.0, np.einsum("xzy,xy->", joint, spec.d.d))))
    k = spec.common_size
    tv = 0.5 * float(np.abs(pad_to(joint.sum(axis=(0, 1)), k) - pad_to(spec.p_x, k)).sum())
    return rate, dist, min(1.0, tv)


def _solution(spec: ProblemSpec, w: np.ndarray, cfg: SolverConfig, *, lam: float, nu: float,
              converged: bool, iterations: int, history: Sequence[float], status: str,
              scaling: Sequence[float] = ()) -> RDPSolution:
    w = np.clip(w, 0.0, None)
    w = w / w.sum(axis=-1, keepdims=True)
    rate, dist, tv = evaluate_channel(spec, w)
    return RDPSolution(
        rate=rate,
        channel=Channel(w),
        achieved_distortion=dist,
        achieved_perception_tv=tv,
        multipliers=(float(lam), float(nu)),
        converged=bool(converged),
        iterations=int(iterations),
        objective_history=tuple(float(h) for h in history),
        status=status,
        constraint_tol=cfg.constraint_tol,
        output_scaling=tuple(float(s) for s in scaling),
    )


# ----------------------------
# Linear programs (zero-rate feasibility, minimum distortion)
# ----------------------------

def _marginal_rows(spec: ProblemSpec, n_vars_per_y: int, weights: np.ndarray) -> np.ndarray:
    """Rows A[y, :] with A @ v = sum_blocks weights * v[block, y] for blocks of size |Y|."""
    ky = spec.y_size
    a = np.zeros((ky, n_vars_per_y * ky))
    for blk, wgt in enumerate(weights):
        for y in range(ky):
            a[y, blk * ky + y] = wgt
    return a


def _perception_lp_parts(spec: ProblemSpec, a_py: np.ndarray, n_main: int,
                         marginal: Optional[np.ndarray], tv_radius: Optional[float]):
    """Extra (A_ub, b_ub, A_eq, b_eq, bounds) for the output-marginal or TV constraint."""
    k = spec.common_size
    ky = spec.y_size
    px = pad_to(spec.p_x, k)
    a_ub: List[np.ndarray] = []
    b_ub: List[float] = []
    a_eq: List[np.ndarray] = []
    b_eq: List[float] = []
    n_extra = 0
    if marginal is not None:
        for y in range(ky):
            a_eq.append(a_py[y])
            b_eq.append(float(marginal[y]))
    elif tv_radius is not None:
        n_extra = k
        for y in range(k):
            row_hi = np.zeros(n_main + k)
            row_lo = np.zeros(n_main + k)
            if y < ky:
                row_hi[:n_main] = a_py[y]
                row_lo[:n_main] = -a_py[y]
            row_hi[n_main + y] = -1.0
            row_lo[n_main + y] = -1.0
            a_ub += [row_hi, row_lo]
            b_ub += [float(px[y]), -float(px[y])]
        row = np.zeros(n_main + k)
        row[n_main:] = 1.0
        a_ub.append(row)
        b_ub.append(2.0 * tv_radius)
    return a_ub, b_ub, a_eq, b_eq, n_extra


def _run_lp(c: np.ndarray, a_ub, b_ub, a_eq, b_eq, n_main: int, n_extra: int):
    n = n_main + n_extra

    def widen(rows):
        return [np.concatenate([r, np.zeros(n - r.size)]) if r.size < n else r for r in rows]

    res = linprog(
        np.concatenate([c, np.zeros(n_extra)]),
        A_ub=np.array(widen(a_ub)) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(widen(a_eq)),
        b_eq=np.array(b_eq),
        bounds=[(0.0, None)] * n,
        method="highs",
    )
    if res.status != 0:
        return None
    return float(res.fun), np.clip(res.x[:n_main], 0.0, None)


def zero_rate_channel(spec: ProblemSpec, *, marginal: Optional[np.ndarray] = None,
                      tv_radius: Optional[float] = None) -> Optional[Tuple[float, np.ndarray]]:
    """
    Minimum distortion over channels with Y independent of X given Z (rate 0),
    optionally with a pinned output marginal or a TV ball around P_X.
    Returns (distortion, W[x, z, y]) or None when no such channel exists.
    """
    kx, kz, ky = spec.x_size, spec.z_size, spec.y_size
    pxz = spec.p_xz.p
    cost = np.einsum("xz,xy->zy", pxz, spec.d.d).ravel()
    n_main = kz * ky
    a_eq: List[np.ndarray] = []
    b_eq: List[float] = []
    for z in range(kz):
        row = np.zeros(n_main)
        row[z * ky:(z + 1) * ky] = 1.0
        a_eq.append(row)
        b_eq.append(1.0)
    a_py = _marginal_rows(spec, kz, spec.p_z)
    a_ub, b_ub, eq2, beq2, n_extra = _perception_lp_parts(spec, a_py, n_main, marginal, tv_radius)
    out = _run_lp(cost, a_ub, b_ub, a_eq + eq2, b_eq + beq2, n_main, n_extra)
    if out is None:
        return None
    dist, v = out
    q = v.reshape(kz, ky)
    q = np.where(q.sum(axis=1, keepdims=True) > 0, q, 1.0 / ky)
    q = q / q.sum(axis=1, keepdims=True)
    return dist, np.broadcast_to(q[None, :, :], (kx, kz, ky)).copy()


def min_distortion(spec: ProblemSpec, *, marginal: Optional[np.ndarray] = None,
                   tv_radius: Optional[float] = None) -> Optional[Tuple[float, np.ndarray]]:
    """Smallest E[D] over all channels meeting the perception constraint (transport LP)."""
    kx, kz, ky = spec.x_size, spec.z_size, spec.y_size
    pxz = spec.p_xz.p
    if marginal is None and tv_radius is None:
        w = np.zeros((kx, kz, ky))
        best = spec.d.d.argmin(axis=1)
        w[np.arange(kx), :, best] = 1.0
        return float((pxz * spec.d.d.min(axis=1)[:, None]).sum()), w
    cost = (pxz[:, :, None] * spec.d.d[:, None, :]).ravel()
    n_main = kx * kz * ky
    a_eq: List[np.ndarray] = []
    b_eq: List[float] = []
    for blk in range(kx * kz):
        row = np.zeros(n_main)
        row[blk * ky:(blk + 1) * ky] = 1.0
        a_eq.append(row)
        b_eq.append(1.0)
    a_py = _marginal_rows(spec, kx * kz, pxz.ravel())
    a_ub, b_ub, eq2, beq2, n_extra = _perception_lp_parts(spec, a_py, n_main, marginal, tv_radius)
    out = _run_lp(cost, a_ub, b_ub, a_eq + eq2, b_eq + beq2, n_main, n_extra)
    if out is None:
        return None
    dist, v = out
    w = v.reshape(kx, kz, ky)
    w = np.where(w.sum(axis=-1, keepdims=True) > 0, w, 1.0 / ky)
    return dist, w / w.sum(axis=-1, keepdims=True)


# ----------------------------
# Alternating minimization at a fixed slope
# ----------------------------

@dataclass
class _EngineState:
    q: np.ndarray                      # per-z output law, shape (Z, Y)
    b: np.ndarray                      # output-marginal scaling, shape (Y,)
    w: Optional[np.ndarray] = None
    iterations: int = 0
    converged: bool = False


def _engine(spec: ProblemSpec, lam: float, cfg: SolverConfig, *, marginal: Optional[np.ndarray] = None,
            state: Optional[_EngineState] = None) -> _EngineState:
    """
    Minimize sum P(x,z) W log(W / q_z) + lam * E[D] over (W, q) by alternating closed-form
    updates. With `marginal`, the W-step is the I-projection onto {P_Y = marginal}, done by
    Sinkhorn scaling of the output columns.
    """
    kx, kz, ky = spec.x_size, spec.z_size, spec.y_size
    pxz = spec.p_xz.p
    pz = pxz.sum(axis=0)
    px_given_z = np.where(pz[None, :] > 0, pxz / np.where(pz > 0, pz, 1.0)[None, :], 1.0 / kx)
    shifted = spec.d.d - spec.d.d.min(axis=1, keepdims=True)
    kernel = np.maximum(np.exp(-lam * shifted), _TINY)[:, None, :]      # (X, 1, Y)

    if state is None:
        q = np.full((kz, ky), 1.0 / ky)
        b = np.ones(ky)
    else:
        q = np.maximum(state.q, 1e-12)
        q = q / q.sum(axis=1, keepdims=True)
        b = state.b.copy()
    if marginal is not None:
        b = np.where(marginal > 0, np.maximum(b, _TINY), 0.0)

    tol = cfg.inner_tol
    w = None
    converged = False
    it = 0
    for it in range(1, cfg.max_inner_iters + 1):
        base = q[None, :, :] * kernel
        w = base * b[None, None, :]
        w = w / w.sum(axis=-1, keepdims=True)
        if marginal is not None:
            for _ in range(200):
                py = np.einsum("xz,xzy->y", pxz, w)
                if np.abs(py - marginal).max() < cfg.dual_tol:
                    break
                ratio = np.where(py > 0, marginal / np.where(py > 0, py, 1.0), 0.0)
                b = np.maximum(b * ratio, 0.0)
                b = b / b.max()
                w = base * b[None, None, :]
                w = w / w.sum(axis=-1, keepdims=True)
        q_new = np.einsum("xz,xzy->zy", px_given_z, w)
        change = float(np.abs(q_new - q).max())
        q = q_new
        if change < tol:
            converged = True
            break
    return _EngineState(q=q, b=b, w=w, iterations=it, converged=converged)


def _objective(spec: ProblemSpec, w: np.ndarray) -> float:
    return evaluate_channel(spec, w)[0]


def _solve_pinned(spec: ProblemSpec, delta: float, cfg: SolverConfig, *,
                  marginal: Optional[np.ndarray] = None) -> RDPSolution:
    """
    min I(X;Y|Z) s.t. E[D] <= delta (and P_Y == marginal when given).
    Zero rate is settled by a linear program; otherwise the slope lam is found by a
    bracketed Brent search on E[D](lam) = delta.
    """
    tol = cfg.constraint_tol
    low = min_distortion(spec, marginal=marginal)
    if low is None:
        raise InfeasibleProblemError("no channel produces the requested output marginal")
    d_min, w_min = low
    if delta < d_min - tol:
        raise InfeasibleProblemError(
            f"delta={delta:.6g} is below the minimum achievable distortion {d_min:.6g}"
        )
    zero = zero_rate_channel(spec, marginal=marginal)
    if zero is not None and zero[0] <= delta + tol:
        log.debug("zero-rate channel feasible at delta=%.6g", delta)
        return _solution(spec, zero[1], cfg, lam=0.0, nu=0.0, converged=True, iterations=0,
                         history=(0.0,), status="zero_rate")

    target = max(delta, d_min + tol)
    history: List[float] = []
    states: Dict[str, _EngineState] = {}
    iterations = [0]

    def excess(lam: float) -> float:
        st = _engine(spec, lam, cfg, marginal=marginal, state=states.get("warm"))
        states["warm"] = st
        iterations[0] += st.iterations
        rate, dist, _ = evaluate_channel(spec, st.w)
        history.append(rate)
        return dist - target

    lo, hi = 0.0, 1.0
    while excess(hi) > 0:
        lo = hi
        hi *= 2.0
        if hi > cfg.multiplier_upper_bound:
            if d_min <= delta + tol:
                # distortion floor reached only in the limit; take the minimum-distortion channel
                log.warning("slope exceeded %.3g; returning the minimum-distortion channel",
                            cfg.multiplier_upper_bound)
                return _solution(spec, w_min, cfg, lam=hi, nu=0.0, converged=False,
                                 iterations=iterations[0], history=history, status="multiplier_bound")
            raise InfeasibleProblemError("distortion multiplier exceeded its upper bound")
    try:
        lam, info = brentq(excess, lo, hi, xtol=cfg.dual_tol, rtol=1e-14,
                           maxiter=cfg.max_outer_iters, full_output=True, disp=False)
        root_ok = bool(info.converged)
    except ValueError:
        lam, root_ok = hi, False
    st = _engine(spec, lam, cfg, marginal=marginal, state=states.get("warm"))
    iterations[0] += st.iterations
    nu = 0.0
    if marginal is not None:
        # per-symbol marginal multipliers; their spread is the TV multiplier
        theta = -np.log(np.maximum(st.b[marginal > 0], _TINY)) / _LN2
        nu = float(theta.max() - theta.min()) if theta.size else 0.0
    converged = root_ok and st.converged
    if not converged:
        log.warning("solver did not converge (root=%s, inner=%s) at delta=%.6g", root_ok, st.converged, delta)
    return _solution(spec, st.w, cfg, lam=lam / _LN2, nu=nu, converged=converged, iterations=iterations[0],
                     history=history, status="optimal" if converged else "max_iter",
                     scaling=st.b if marginal is not None else ())


# ----------------------------
# Public solvers
# ----------------------------

def _check_delta(delta: float) -> None:
    if not (delta >= 0 and math.isfinite(delta)):
        raise ValidationError(f"delta must be a finite value >= 0, got {delta!r}")


def _check_pi(pi: float) -> None:
    if not (0.0 <= pi <= 1.0):
        raise ValidationError(f"pi must lie in [0, 1], got {pi!r}")


def solve_conditional_rd(spec: ProblemSpec, delta: float, cfg: SolverConfig = SolverConfig()) -> RDPSolution:
    """R(delta) = min I(X;Y|Z) subject to E[D] <= delta."""
    _check_delta(delta)
    return _solve_pinned(spec, delta, cfg)


def _realism_marginal(spec: ProblemSpec) -> np.ndarray:
    if spec.y_size < spec.x_size:
        p_x = spec.p_x
        if p_x[spec.y_size:].sum() > 0:
            raise InfeasibleProblemError("perfect realism: P_X has mass outside the reconstruction alphabet")
        return p_x[: spec.y_size].copy()
    return pad_to(spec.p_x, spec.y_size)


def solve_perfect_realism(spec: ProblemSpec, delta: float, cfg: SolverConfig = SolverConfig()) -> RDPSolution:
    """min I(X;Y|Z) subject to E[D] <= delta and P_Y = P_X."""
    _check_delta(delta)
    return _solve_pinned(spec, delta, cfg, marginal=_realism_marginal(spec))


def _tv_to_px(spec: ProblemSpec, r: np.ndarray) -> float:
    k = spec.common_size
    return 0.5 * float(np.abs(pad_to(r, k) - pad_to(spec.p_x, k)).sum())


def _boundary_point(spec: ProblemSpec, inside: np.ndarray, outside: np.ndarray, pi: float) -> np.ndarray:
    """Point on [inside, outside] where the TV to P_X reaches pi (TV is convex along the segment)."""
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _tv_to_px(spec, inside + mid * (outside - inside)) <= pi:
            lo = mid
        else:
            hi = mid
    r = inside + lo * (outside - inside)
    return np.clip(r, 0.0, None) / np.clip(r, 0.0, None).sum()


def solve_empirical_rdp(spec: ProblemSpec, delta: float, pi: float,
                        cfg: SolverConfig = SolverConfig()) -> RDPSolution:
    """
    R^(e)(delta, pi) = min I(X;Y|Z) s.t. E[D] <= delta and d_TV(P_X, P_Y) <= pi.

    When the unconstrained optimum already meets the TV bound it is returned as is
    (nu = 0). Otherwise the constraint is active and the output marginal is searched on
    the TV ball; each candidate marginal is solved exactly with _solve_pinned.
    """
    _check_delta(delta)
    _check_pi(pi)
    tol = cfg.constraint_tol
    if pi >= 1.0:
        return solve_conditional_rd(spec, delta, cfg)

    zero = zero_rate_channel(spec, tv_radius=pi)
    if zero is not None and zero[0] <= delta + tol:
        return _solution(spec, zero[1], cfg, lam=0.0, nu=0.0, converged=True, iterations=0,
                         history=(0.0,), status="zero_rate")

    feasible = min_distortion(spec, tv_radius=pi)
    if feasible is None or delta < feasible[0] - tol:
        raise InfeasibleProblemError(f"no channel meets delta={delta:.6g} and pi={pi:.6g} together")

    base = solve_conditional_rd(spec, delta, cfg)
    if base.achieved_perception_tv <= pi + tol:
        return base

    log.debug("perception constraint active at delta=%.6g, pi=%.6g", delta, pi)
    r_free = np.einsum("xz,xzy->y", spec.p_xz.p, base.channel.p)
    r_lp = np.einsum("xz,xzy->y", spec.p_xz.p, feasible[1])
    r0 = _boundary_point(spec, r_lp, r_free, pi)

    candidates: List[RDPSolution] = []
    evaluations = [0]

    def pinned(r: np.ndarray) -> Optional[RDPSolution]:
        evaluations[0] += 1
        try:
            return _solve_pinned(spec, delta, cfg, marginal=r)
        except InfeasibleProblemError:
            return None

    first = pinned(r0)
    if first is not None:
        candidates.append(first)

    if spec.y_size > 2:
        candidates.extend(_search_marginal(spec, delta, pi, r0, cfg, pinned))
        if spec.y_size >= spec.x_size and _tv_to_px(spec, pad_to(spec.p_x, spec.y_size)) <= pi:
            realism = pinned(pad_to(spec.p_x, spec.y_size))
            if realism is not None:
                candidates.append(realism)

    if not candidates:
        raise InfeasibleProblemError(f"no feasible output marginal found for delta={delta:.6g}, pi={pi:.6g}")
    best = min(candidates, key=lambda s: s.rate)
    history = tuple(base.objective_history) + tuple(c.rate for c in candidates)
    return replace(best, objective_history=history,
                   iterations=best.iterations + base.iterations,
                   converged=best.converged and base.converged)


def _search_marginal(spec: ProblemSpec, delta: float, pi: float, r0: np.ndarray,
                     cfg: SolverConfig, pinned) -> List[RDPSolution]:
    """SLSQP over output marginals in the TV ball; gradient = per-symbol marginal multipliers."""
    ky, k = spec.y_size, spec.common_size
    px = pad_to(spec.p_x, k)
    found: List[RDPSolution] = []
    cache: Dict[bytes, Optional[RDPSolution]] = {}
    penalty_rate = 2.0 * math.log2(max(spec.x_size, 2)) + 1.0

    def solve(r: np.ndarray) -> Optional[RDPSolution]:
        r = np.clip(r, 0.0, None)
        r = r / r.sum()
        key = np.round(r, 14).tobytes()
        if key not in cache:
            cache[key] = pinned(r)
            if cache[key] is not None:
                found.append(cache[key])
        return cache[key]

    def fun(v: np.ndarray) -> float:
        sol = solve(v[:ky])
        return penalty_rate if sol is None else sol.rate

    def jac(v: np.ndarray) -> np.ndarray:
        g = np.zeros(v.size)
        sol = solve(v[:ky])
        if sol is not None and sol.output_scaling:
            lb = np.log(np.maximum(np.array(sol.output_scaling), 1e-22)) / _LN2
            g[:ky] = lb - lb.mean()
        return g

    # v = (r_0..r_{ky-1}, t_0..t_{k-1}) with t_k >= |r_k - px_k| and sum(t) <= 2 pi
    cons = [{"type": "eq", "fun": lambda v: np.array([v[:ky].sum() - 1.0]),
             "jac": lambda v: np.concatenate([np.ones(ky), np.zeros(k)])[None, :]}]
    for y in range(k):
        def hi(v, y=y):
            return v[ky + y] - ((v[y] if y < ky else 0.0) - px[y])

        def lo(v, y=y):
            return v[ky + y] + ((v[y] if y < ky else 0.0) - px[y])
        cons += [{"type": "ineq", "fun": hi}, {"type": "ineq", "fun": lo}]
    cons.append({"type": "ineq", "fun": lambda v: 2.0 * pi - v[ky:].sum()})

    t0 = np.abs(pad_to(r0, k) - px)
    v0 = np.concatenate([r0, t0])
    try:
        minimize(fun, v0, jac=jac, method="SLSQP", constraints=cons,
                 bounds=[(0.0, 1.0)] * ky + [(0.0, 1.0)] * k,
                 options={"maxiter": cfg.max_outer_iters, "ftol": cfg.primal_tol * 1e-3})
    except (ValueError, FloatingPointError) as ex:
        log.warning("marginal search stopped early: %s", ex)
    return [s for s in found if s.achieved_perception_tv <= pi + cfg.constraint_tol]


def strong_rdp_bound(spec: ProblemSpec, delta: float, pi: float, cfg: SolverConfig = SolverConfig()) -> float:
    """Upper bound on R^(s)(delta, pi) with unlimited common randomness (two-valued limsup)."""
    _check_delta(delta)
    _check_pi(pi)
    if pi >= 1.0 - cfg.constraint_tol:
        return solve_conditional_rd(spec, delta, cfg).rate
    return solve_perfect_realism(spec, delta, cfg).rate


def g_function(spec: ProblemSpec, rate: float, delta: float, cfg: SolverConfig = SolverConfig()) -> int:
    """Infimum of limsup product TV over channels with I <= rate, E[D] <= delta: 0 iff realism fits."""
    if rate < 0:
        raise ValidationError("g_function: rate must be >= 0")
    _check_delta(delta)
    try:
        realism = solve_perfect_realism(spec, delta, cfg)
    except InfeasibleProblemError:
        return 1
    return 0 if realism.rate <= rate + cfg.constraint_tol else 1


def f_function(spec: ProblemSpec, delta: float, cfg: SolverConfig = SolverConfig()) -> int:
    """f(delta) = g(R(delta), delta)."""
    return g_function(spec, solve_conditional_rd(spec, delta, cfg).rate, delta, cfg)


# ----------------------------
# Lagrangian inner routine (mirror descent with TV subgradient)
# ----------------------------

def _lagrangian_value(spec: ProblemSpec, w: np.ndarray, lam: float, nu: float) -> float:
    rate, dist, tv = evaluate_channel(spec, w)
    return rate + lam * dist + nu * tv


def lagrangian_inner_solve(spec: ProblemSpec, lam: float, nu: float,
                           cfg: SolverConfig = SolverConfig()) -> LagrangianResult:
    """
    Approximately minimize I(X;Y|Z) + lam * E[D] + nu * d_TV(P_X, P_Y).

    Each iteration recomputes the per-z output law in closed form, then takes an entropic
    mirror-descent step on the channel rows toward q_z * exp(-lam*d - nu*g), where g is a
    TV subgradient (0 on ties). Steps that do not decrease the objective are rejected and
    the step size shrinks.
    """
    if lam < 0 or nu < 0:
        raise ValidationError("lagrangian_inner_solve: multipliers must be >= 0")
    kx, kz, ky = spec.x_size, spec.z_size, spec.y_size
    k = spec.common_size
    pxz = spec.p_xz.p
    pz = pxz.sum(axis=0)
    px_given_z = np.where(pz[None, :] > 0, pxz / np.where(pz > 0, pz, 1.0)[None, :], 1.0 / kx)
    px = pad_to(spec.p_x, k)
    cost_bits = lam * spec.d.d * _LN2           # objective is in bits; work in nats inside exp

    rng = np.random.default_rng(cfg.seed)
    w = 1.0 + 0.1 * rng.random((kx, kz, ky))
    w = w / w.sum(axis=-1, keepdims=True)
    obj = _lagrangian_value(spec, w, lam, nu)
    history = [obj]
    step = cfg.step_initial
    converged = False
    it = 0
    for it in range(1, cfg.max_inner_iters + 1):
        q = np.einsum("xz,xzy->zy", px_given_z, w)
        py = pad_to(np.einsum("xz,xzy->y", pxz, w), k)
        diff = py - px
        g = 0.5 * np.sign(np.where(np.abs(diff) > 1e-15, diff, 0.0))[:ky]
        log_target = (np.log(np.maximum(q, _TINY))[None, :, :]
                      - cost_bits[:, None, :] - nu * _LN2 * g[None, None, :])
        log_w = np.log(np.maximum(w, _TINY))
        mixed = (1.0 - step) * log_w + step * log_target
        w_new = np.exp(mixed - logsumexp(mixed, axis=-1, keepdims=True))
        new_obj = _lagrangian_value(spec, w_new, lam, nu)
        if new_obj <= obj:
            moved = float(np.abs(w_new - w).max())
            w, obj = w_new, new_obj
            history.append(obj)
            if moved < cfg.inner_tol:
                converged = True
                break
            step = min(cfg.step_initial, step / cfg.step_decay)
        else:
            step *= cfg.step_decay
            if step < 1e-12:
                converged = True
                break
    return LagrangianResult(channel=Channel.from_rows(w), objective=obj,
                            objective_history=tuple(history), converged=converged, iterations=it)


# ----------------------------
# Brute-force oracles
# ----------------------------

def _row_grid(ky: int, resolution: int) -> np.ndarray:
    return np.array(list(compositions(resolution, ky)), dtype=float) / resolution


def _grid_scan(spec: ProblemSpec, resolution: int, budget: int, score) -> float:
    """Evaluate score(W batch) over every grid channel; returns the smallest score."""
    kx, kz, ky = spec.x_size, spec.z_size, spec.y_size
    if resolution < 10:
        raise ValidationError("brute force: grid_resolution must be >= 10")
    if kx * kz * (ky - 1) > 6:
        raise BudgetExceededError("brute force: more than 6 free channel parameters")
    grid = _row_grid(ky, resolution)
    rows = kx * kz
    total = grid.shape[0] ** rows
    if total > budget:
        raise BudgetExceededError(f"brute force: {total} grid channels exceed budget {budget}")
    best = math.inf
    chunk = 200_000
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        digits = np.array(np.unravel_index(idx, (grid.shape[0],) * rows)).T     # (C, rows)
        w = grid[digits].reshape(-1, kx, kz, ky)
        best = min(best, float(score(w)))
    return best


def _batch_measures(spec: ProblemSpec, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    pxz = spec.p_xz.p
    pz = pxz.sum(axis=0)
    joint = pxz[None, :, :, None] * w                                   # (C, X, Z, Y)
    pzy = joint.sum(axis=1)                                             # (C, Z, Y)
    q = np.where(pz[None, :, None] > 0, pzy / np.where(pz > 0, pz, 1.0)[None, :, None], 1.0)
    rate = (xlogy(joint, w) - xlogy(joint, np.broadcast_to(q[:, None, :, :], joint.shape))).sum(axis=(1, 2, 3)) / _LN2
    dist = np.einsum("cxzy,xy->c", joint, spec.d.d)
    k = spec.common_size
    py = np.zeros((w.shape[0], k))
    py[:, :spec.y_size] = joint.sum(axis=(1, 2))
    tv = 0.5 * np.abs(py - pad_to(spec.p_x, k)[None, :]).sum(axis=1)
    return np.maximum(rate, 0.0), dist, tv


def brute_force_rdp(spec: ProblemSpec, delta: float, pi: float, grid_resolution: int = 200,
                    budget: int = 50_000_000) -> float:
    """Minimum I(X;Y|Z) over grid channels (row entries multiples of 1/resolution) meeting both constraints."""
    _check_delta(delta)
    _check_pi(pi)

    def score(w: np.ndarray) -> float:
        rate, dist, tv = _batch_measures(spec, w)
        ok = (dist <= delta + MEMBERSHIP_TOL) & (tv <= pi + MEMBERSHIP_TOL)
        return float(rate[ok].min()) if np.any(ok) else math.inf

    best = _grid_scan(spec, grid_resolution, budget, score)
    if not math.isfinite(best):
        raise InfeasibleProblemError("brute force: no grid channel meets the constraints")
    return best


def brute_force_lagrangian(spec: ProblemSpec, lam: float, nu: float, grid_resolution: int = 200,
                           budget: int = 50_000_000) -> float:
    """Grid minimum of I + lam * E[D] + nu * TV."""
    def score(w: np.ndarray) -> float:
        rate, dist, tv = _batch_measures(spec, w)
        return float((rate + lam * dist + nu * tv).min())

    return _grid_scan(spec, grid_resolution, budget, score)


# ----------------------------
# Region membership
# ----------------------------

def check_region_membership(joint: JointTable, point: RegionPoint, flavor: str, gamma: float,
                            d: DistortionMatrix, cfg: SolverConfig = SolverConfig()) -> bool:
    """
    Defining inequalities of the gamma-regions for a candidate joint over X x Y x Z x U.

    flavor: "empirical", "strong_minus" or "strong_plus". Strong flavors evaluate f(delta)
    on the problem induced by the joint's (X, Z) marginal.
    """
    j = joint.p
    if j.ndim != 4:
        raise ValidationError("check_region_membership: joint must have axes (x, y, z, u)")
    if gamma <= 0:
        raise ValidationError("check_region_membership: gamma must be > 0")
    if flavor not in ("empirical", "strong_minus", "strong_plus"):
        raise ValidationError(f"check_region_membership: unknown flavor '{flavor}'")
    kx, ky = j.shape[0], j.shape[1]
    if d.shape != (kx, ky):
        raise ValidationError("check_region_membership: distortion shape does not match joint")
    eps = MEMBERSHIP_TOL
    k = max(kx, ky)
    p_x = pad_to(j.sum(axis=(1, 2, 3)), k)
    p_y = pad_to(j.sum(axis=(0, 2, 3)), k)
    exp_d = float(np.einsum("xyzu,xy->", j, d.d))
    if point.delta < exp_d - eps:
        return False

    if flavor == "empirical":
        return (point.R >= information(j, (0,), (1,), (2,)) + gamma - eps
                and point.pi >= 0.5 * float(np.abs(p_x - p_y).sum()) - eps)

    spec = ProblemSpec(JointTable(j.sum(axis=(1, 3))), ky, d)
    f_delta = f_function(spec, point.delta, cfg)
    if flavor == "strong_plus":
        return point.pi >= f_delta and point.R >= information(j, (0,), (1,), (2,)) + gamma - eps

    if not (point.pi < f_delta and point.R0 > 0):
        return False
    if conditional_independence_residual(j, 0, 1, (2, 3)) > eps:
        return False
    return (point.R >= information(j, (0,), (3,), (2,)) + gamma - eps
            and point.R + point.R0 >= information(j, (1,), (3,), (2,)) + gamma - eps
            and point.pi >= limsup_product_tv(p_x, p_y) - eps)


# ----------------------------
# Curves
# ----------------------------

def _curve_cell(spec: ProblemSpec, delta: float, pi: float, cfg: SolverConfig) -> CurveRow:
    try:
        sol = solve_empirical_rdp(spec, delta, pi, cfg)
    except InfeasibleProblemError as ex:
        log.warning("curve cell (%.6g, %.6g) infeasible: %s", delta, pi, ex)
        return CurveRow(delta, pi, math.nan, math.nan, math.nan, False, "infeasible")
    return CurveRow(delta, pi, sol.rate, sol.achieved_distortion, sol.achieved_perception_tv,
                    sol.converged, sol.status)


def sweep_curve(spec: ProblemSpec, deltas: Sequence[float], pis: Sequence[float],
                cfg: SolverConfig = SolverConfig(), threads: int = 1) -> List[CurveRow]:
    """One solution summary per (delta, pi) grid point, sorted by (delta, pi)."""
    if not deltas or not pis:
        raise ValidationError("sweep_curve: grids must be nonempty")
    cells = sorted({(float(dv), float(pv)) for dv in deltas for pv in pis})
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: _curve_cell(spec, c[0], c[1], cfg), cells))
    else:
        rows = [_curve_cell(spec, dv, pv, cfg) for dv, pv in cells]
    return rows
