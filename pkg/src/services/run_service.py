# src/services/run_service.py
from __future__ import annotations

import sys
from argparse import Namespace
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO

import numpy as np

from src import __version__
from src.backends.fs_backend import atomic_write_text, csv_text, dumps_json, write_csv, write_json
from src.config.settings import Settings
from src.core.errors import ConvergenceError, ValidationError
from src.core.rdp_solver import (
    SolverConfig,
    solve_conditional_rd,
    solve_empirical_rdp,
    solve_perfect_realism,
    strong_rdp_bound,
    sweep_curve,
)
from src.services.problem_service import ProblemFile, ProblemService
from src.simulation.codebook import Codebook, CodeConfig, SchemeSpec, scheme_from_channel
from src.simulation.coding_sim import TRIAL_CSV_HEADER, monte_carlo, rate_thresholds
from src.simulation.soft_covering import SWEEP_CSV_HEADER, rate_sweep
from src.utils.logger import get_logger
from src.verification.converse_check import exhaustive_check, sampled_check

log = get_logger(__name__)

FLAVORS = ("rd", "empirical", "realism", "strong-bound")
CURVE_CSV_HEADER = ["delta", "pi", "rate", "achieved_distortion", "achieved_tv", "converged"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_INFEASIBLE = 3


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce one run byte for byte."""
    subcommand: str
    config: Dict[str, Any]
    master_seed: Optional[int]
    version: str
    input_digest: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def parse_grid(text: str) -> List[float]:
    """'a:b:step' (inclusive, rounded to 12 decimals) or a comma list."""
    text = text.strip()
    if ":" not in text:
        try:
            return [float(v) for v in text.split(",") if v.strip()]
        except ValueError as ex:
            raise ValidationError(f"bad grid '{text}': {ex}") from ex
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"bad grid '{text}': expected a:b:step")
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError as ex:
        raise ValidationError(f"bad grid '{text}': {ex}") from ex
    if step <= 0 or b < a:
        raise ValidationError(f"bad grid '{text}': need step > 0 and b >= a")
    count = int(np.floor((b - a) / step + 1e-9)) + 1
    return [round(a + i * step, 12) for i in range(count)]


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as ex:
        raise ValidationError(f"bad integer list '{text}': {ex}") from ex


class RunService:
    """Subcommand handlers; each returns a process exit code."""

    def __init__(self, settings: Settings, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None):
        self.settings = settings
        self.problems = ProblemService(settings)
        self.stdout = stdout or sys.stdout
        self.stderr = stderr or sys.stderr

    # ---- helpers ---------------------------------------------------------------

    @property
    def _float_format(self) -> str:
        return str(self.settings.output["float_format"])

    def _solver_config(self, args: Namespace) -> SolverConfig:
        return self.settings.solver_config(constraint_tol=getattr(args, "tol", None))

    def _emit(self, text: str, out: Optional[str], manifest: RunManifest) -> None:
        """Payload to --out (manifest next to it) or to stdout (manifest to stderr)."""
        if out:
            path = Path(out)
            atomic_write_text(path, text)
            write_json(path.with_name(path.name + ".manifest.json"), manifest.to_dict())
            log.info("wrote %s", path)
        else:
            self.stdout.write(text)
            self.stdout.flush()
            self.stderr.write(dumps_json(manifest.to_dict()))

    def _manifest(self, subcommand: str, config: Dict[str, Any], digest: str,
                  master_seed: Optional[int] = None) -> RunManifest:
        return RunManifest(subcommand, config, master_seed, __version__, digest)

    # ---- solve -----------------------------------------------------------------

    def solve(self, args: Namespace) -> int:
        pf = self.problems.load_problem(args.problem)
        cfg = self._solver_config(args)
        flavor = args.flavor
        if flavor not in FLAVORS:
            raise ValidationError(f"unknown flavor '{flavor}'")
        payload: Dict[str, Any] = {"flavor": flavor, "delta": args.delta, "pi": args.pi}
        converged = True
        if flavor == "strong-bound":
            payload["rate"] = strong_rdp_bound(pf.spec, args.delta, args.pi, cfg)
        else:
            if flavor == "rd":
                sol = solve_conditional_rd(pf.spec, args.delta, cfg)
            elif flavor == "realism":
                sol = solve_perfect_realism(pf.spec, args.delta, cfg)
            else:
                sol = solve_empirical_rdp(pf.spec, args.delta, args.pi, cfg)
            payload.update(sol.to_dict())
            converged = sol.converged
        config = {"problem": str(pf.path), "flavor": flavor, "delta": args.delta, "pi": args.pi,
                  "solver": asdict(cfg)}
        self._emit(dumps_json(payload), args.out, self._manifest("solve", config, pf.digest))
        return EXIT_OK if converged else EXIT_NOT_CONVERGED

    # ---- curve -----------------------------------------------------------------

    def curve(self, args: Namespace) -> int:
        pf = self.problems.load_problem(args.problem)
        cfg = self._solver_config(args)
        deltas = parse_grid(args.grid_delta) if args.grid_delta else [args.delta]
        pis = parse_grid(args.grid_pi) if args.grid_pi else [args.pi]
        rows = sweep_curve(pf.spec, deltas, pis, cfg, threads=self.settings.threads)
        text = csv_text(CURVE_CSV_HEADER, [
            [r.delta, r.pi, r.rate, r.achieved_distortion, r.achieved_tv, r.converged] for r in rows
        ], self._float_format)
        config = {"problem": str(pf.path), "deltas": deltas, "pis": pis, "solver": asdict(cfg)}
        self._emit(text, args.out, self._manifest("curve", config, pf.digest))
        if any(r.status == "infeasible" for r in rows):
            log.warning("curve: %d infeasible cells", sum(r.status == "infeasible" for r in rows))
        return EXIT_OK if all(r.converged or r.status == "infeasible" for r in rows) else EXIT_NOT_CONVERGED

    # ---- simulate --------------------------------------------------------------

    def _scheme(self, pf: ProblemFile, args: Namespace, cfg: SolverConfig) -> SchemeSpec:
        if pf.scheme is not None and args.delta is None:
            return pf.scheme
        if args.delta is None:
            raise ValidationError("problem has no scheme: pass --delta (and --pi) to build one from the solver")
        sol = solve_empirical_rdp(pf.spec, args.delta, args.pi, cfg)
        if not sol.converged:
            raise ConvergenceError(f"solver channel at delta={args.delta:g}, pi={args.pi:g} did not converge")
        log.info("scheme from solver channel at delta=%g pi=%g (rate %.6f)", args.delta, args.pi, sol.rate)
        return scheme_from_channel(pf.spec.p_xz, sol.channel, pf.spec.d)

    def simulate(self, args: Namespace) -> int:
        pf = self.problems.load_problem(args.problem)
        cfg = self._solver_config(args)
        sim = self.settings.simulation
        scheme = self._scheme(pf, args, cfg)
        trials = args.trials if args.trials is not None else int(sim["trials"])
        seed = args.seed if args.seed is not None else int(sim["master_seed"])
        codebook_seed = args.codebook_seed if args.codebook_seed is not None else int(sim["codebook_seed"])
        encoder = args.encoder or str(sim["encoder"])
        r_x, r_y = rate_thresholds(scheme)
        rate = args.rate
        code = CodeConfig(n=args.n, R=rate, R0=args.r0, master_seed=seed, trials=trials)
        cb = Codebook(scheme, code, codebook_seed)
        report = monte_carlo(cb, encoder=encoder, threads=self.settings.threads,
                             message_budget=int(sim["message_budget"]))
        payload = report.to_dict()
        payload["thresholds"] = {"R": r_x, "R0": r_y}
        config = {"problem": str(pf.path), "n": args.n, "R": rate, "R0": args.r0, "trials": trials,
                  "codebook_seed": codebook_seed, "encoder": encoder, "delta": args.delta, "pi": args.pi,
                  "message_budget": int(sim["message_budget"])}
        manifest = self._manifest("simulate", config, pf.digest, seed)
        self._emit(dumps_json(payload), args.out, manifest)
        if args.out:
            trials_path = Path(args.out).with_suffix(".trials.csv")
            write_csv(trials_path, TRIAL_CSV_HEADER, report.trial_rows(), self._float_format)
        return EXIT_OK

    # ---- softcover -------------------------------------------------------------

    def softcover(self, args: Namespace) -> int:
        sf = self.problems.load_synthesis(args.problem)
        n_list = [args.n] if args.n is not None else parse_int_list(args.n_list)
        r_list = [args.rate] if args.rate is not None else parse_grid(args.rate_list)
        count = args.seeds if args.seeds is not None else int(self.settings.soft_covering["seed_count"])
        base_seed = args.seed if args.seed is not None else 0
        seeds = list(range(base_seed, base_seed + count))
        template = self.problems.synthesis_spec(sf, min(n_list), r_list[0], seeds)
        rows = rate_sweep(template, n_list, r_list, seeds, threads=self.settings.threads)
        text = csv_text(SWEEP_CSV_HEADER, [r.as_row() for r in rows], self._float_format)
        config = {"problem": str(sf.path), "n": n_list, "R": r_list, "seeds": [seeds[0], len(seeds)],
                  "w_sequence": "uniform-type"}
        self._emit(text, args.out, self._manifest("softcover", config, sf.digest, base_seed))
        return EXIT_OK

    # ---- converse --------------------------------------------------------------

    def converse(self, args: Namespace) -> int:
        pf = self.problems.load_problem(args.problem)
        cfg = self._solver_config(args)
        conv = self.settings.converse
        tol = args.tol if args.tol is not None else float(conv["tol"])
        if args.mode == "exhaustive":
            report = exhaustive_check(pf.spec, args.n, args.messages, tol, cfg,
                                      limit=int(conv["search_space_limit"]))
            seed = None
            samples = None
        else:
            samples = args.samples if args.samples is not None else int(conv["samples"])
            seed = args.seed if args.seed is not None else 0
            report = sampled_check(pf.spec, args.n, args.messages, samples, seed, tol, cfg)
        config = {"problem": str(pf.path), "mode": args.mode, "n": args.n, "M": args.messages,
                  "samples": samples, "tol": tol, "solver": asdict(cfg)}
        self._emit(dumps_json(report.to_dict()), args.out, self._manifest("converse", config, pf.digest, seed))
        return EXIT_OK
