# tests/test_converse.py
import json

import numpy as np
import pytest

from conftest import PROBLEMS
from src.core.errors import BudgetExceededError, InfeasibleProblemError, ValidationError
from src.core.rdp_solver import ProblemSpec
from src.services.problem_service import parse_problem
from src.verification import converse_check
from src.verification.converse_check import (
    ConverseReport,
    SmallCode,
    evaluate_code,
    exhaustive_check,
    sampled_check,
)


def load_spec(name: str) -> ProblemSpec:
    return parse_problem(json.loads((PROBLEMS / name).read_text(encoding="utf-8"))).spec


def test_identity_code(uniform_binary):
    ev = evaluate_code(SmallCode.identity(2, 1, 2), uniform_binary)
    assert ev.rate == 1.0
    assert ev.distortion == 0.0
    assert ev.perception_tv == pytest.approx(0.0, abs=1e-15)
    assert ev.expected_empirical_tv == pytest.approx(0.0, abs=1e-15)
    assert ev.auxiliary_rate_bound == pytest.approx(1.0, abs=1e-12)
    assert ev.time_mixed_joint.p.sum() == pytest.approx(1.0)


def test_constant_code(uniform_binary):
    ev = evaluate_code(SmallCode.constant(2, 1, 1, y_rank=0), uniform_binary)
    assert ev.rate == 0.0
    assert ev.distortion == pytest.approx(0.5)
    assert ev.perception_tv == pytest.approx(0.5)
    assert ev.expected_empirical_tv == pytest.approx(0.5)
    assert ev.auxiliary_rate_bound == pytest.approx(0.0, abs=1e-12)


def test_small_code_validation():
    with pytest.raises(ValidationError):
        SmallCode(1, 2, np.array([[0], [2]]), np.array([[0], [1]]))
    with pytest.raises(ValidationError):
        SmallCode(1, 2, np.array([[0], [1]]), np.array([[0]]))


def test_exhaustive_constant_side_information():
    spec = load_spec("binary_constant_side_information.json")
    report = exhaustive_check(spec, n=1, M=2)
    assert report.codes_checked == 256
    assert report.violations == []
    assert report.solver_failures == 0
    assert report.sandwich_violations == 0
    assert report.bound_violations == 0
    assert report.closest_gap >= -1e-6


def test_exhaustive_with_side_information():
    spec = load_spec("binary_side_information.json")
    report = exhaustive_check(spec, n=1, M=2)
    assert report.codes_checked == 256
    assert report.violations == []
    assert report.solver_failures == 0
    assert report.sandwich_violations == 0


def test_exhaustive_guard(uniform_binary):
    with pytest.raises(BudgetExceededError):
        exhaustive_check(uniform_binary, n=3, M=4, limit=1000)
    with pytest.raises(ValidationError):
        exhaustive_check(uniform_binary, n=0, M=2)


def test_sampled_check_is_seeded(uniform_binary):
    a = sampled_check(uniform_binary, n=2, M=2, samples=200, seed=5)
    b = sampled_check(uniform_binary, n=2, M=2, samples=200, seed=5)
    assert a.to_dict() == b.to_dict()
    assert a.codes_checked == 200
    assert a.violations == []
    assert a.solver_failures == 0
    assert a.sandwich_violations == 0
    assert a.bound_violations == 0


def test_sampled_check_without_samples(uniform_binary):
    report = sampled_check(uniform_binary, n=2, M=2, samples=0, seed=1)
    assert report.codes_checked == 0
    assert report.to_dict()["closest_gap"] is None
    with pytest.raises(ValidationError):
        sampled_check(uniform_binary, n=2, M=2, samples=-1, seed=1)


def test_sampled_check_at_scale(uniform_binary):
    report = sampled_check(uniform_binary, n=2, M=2, samples=10_000, seed=11)
    assert report.codes_checked == 10_000
    assert report.violations == []
    assert report.sandwich_violations == 0
    assert report.bound_violations == 0
    assert report.solver_failures == 0
    assert report.closest_gap >= -1e-6


def test_infeasible_solver_answer_counts_as_violation(uniform_binary, monkeypatch):
    def refuse(*args, **kwargs):
        raise InfeasibleProblemError("no channel")

    monkeypatch.setattr(converse_check, "solve_empirical_rdp", refuse)
    report = sampled_check(uniform_binary, n=1, M=2, samples=5, seed=3)
    assert report.solver_failures == 5
    assert len(report.violations) == 5
    assert all(v["solver_rate"] is None for v in report.violations)


def test_report_merge():
    a = ConverseReport(codes_checked=3, closest_gap=0.2)
    b = ConverseReport(codes_checked=4, sandwich_violations=1, closest_gap=0.1)
    merged = a.merge(b)
    assert merged.codes_checked == 7
    assert merged.sandwich_violations == 1
    assert merged.closest_gap == 0.1
    assert merged.to_dict() == b.merge(a).to_dict()
