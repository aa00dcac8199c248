# tests/test_soft_covering.py
import json
import math

import numpy as np
import pytest

from conftest import PROBLEMS, h_b
from src.core.errors import BudgetExceededError, ValidationError
from src.core.probability import Channel
from src.services.problem_service import parse_synthesis
from src.simulation.soft_covering import (
    SynthesisSpec,
    rate_sweep,
    run_synthesis,
    synthesis_threshold,
    synthesize_output_law,
    target_law,
    tv_to_target,
    uniform_type_sequence,
)


def bsc_spec(n: int, R: float, seeds=range(50)) -> SynthesisSpec:
    sf = parse_synthesis(json.loads((PROBLEMS / "binary_bsc_synthesis.json").read_text(encoding="utf-8")))
    return SynthesisSpec(sf.p_w, sf.u_given_w, sf.v_given_uw, n, R, seeds=tuple(seeds))


def copy_spec(n: int, R: float) -> SynthesisSpec:
    """V = U with U uniform on {0, 1} and a trivial W."""
    return SynthesisSpec(np.array([1.0]), Channel(np.array([[0.5, 0.5]])),
                         Channel(np.array([[[1.0, 0.0]], [[0.0, 1.0]]])), n, R, seeds=(0,))


def test_single_codeword_copy_channel():
    spec = copy_spec(2, 0.0)
    assert spec.codeword_count == 1
    # one point mass against the uniform law on four outcomes
    assert tv_to_target(spec, 0) == pytest.approx(0.75, abs=1e-12)


def test_output_independent_of_codeword_is_exact():
    spec = SynthesisSpec(np.array([1.0]), Channel(np.array([[0.3, 0.7]])),
                         Channel(np.array([[[0.6, 0.4]], [[0.6, 0.4]]])), 5, 0.2, seeds=(0, 1))
    for seed in spec.seeds:
        assert tv_to_target(spec, seed) == pytest.approx(0.0, abs=1e-12)


def test_laws_are_normalized():
    spec = bsc_spec(6, 0.7, seeds=(3,))
    assert target_law(spec).sum() == pytest.approx(1.0, abs=1e-12)
    assert synthesize_output_law(spec, 3).sum() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(synthesize_output_law(spec, 3), synthesize_output_law(spec, 3))


def test_threshold_of_bundled_instance():
    assert synthesis_threshold(bsc_spec(4, 1.0)) == pytest.approx(1.0 - h_b(0.1), abs=1e-12)
    assert synthesis_threshold(bsc_spec(4, 1.0)) == pytest.approx(0.531, abs=1e-3)


def test_tv_falls_above_threshold_and_stays_high_below():
    above_short = run_synthesis(bsc_spec(2, 1.0))
    above_long = run_synthesis(bsc_spec(8, 1.0))
    below_long = run_synthesis(bsc_spec(8, 0.2))
    assert above_long.mean_tv < above_short.mean_tv
    assert below_long.mean_tv > 0.5
    assert len(above_long.tv) == 50


def test_uniform_type_sequence():
    assert uniform_type_sequence(np.array([0.5, 0.5]), 4) == (0, 0, 1, 1)
    assert uniform_type_sequence(np.array([0.2, 0.8]), 3) == (0, 1, 1)
    assert len(uniform_type_sequence(np.array([1 / 3, 1 / 3, 1 / 3]), 7)) == 7


def test_spec_validation():
    with pytest.raises(ValidationError):
        bsc_spec(0, 1.0)
    with pytest.raises(ValidationError):
        bsc_spec(2, -0.5)
    with pytest.raises(BudgetExceededError):
        SynthesisSpec(np.array([1.0]), Channel(np.array([[0.5, 0.5]])),
                      Channel(np.array([[[0.9, 0.1]], [[0.1, 0.9]]])), 30, 1.0, budget=1000)
    with pytest.raises(ValidationError):
        run_synthesis(bsc_spec(2, 1.0, seeds=()))


def test_rate_sweep_order_and_budget_cells():
    template = bsc_spec(2, 0.5, seeds=range(4))
    template = SynthesisSpec(template.p_w, template.u_given_w, template.v_given_uw, 2, 0.5,
                             seeds=template.seeds, budget=64)
    rows = rate_sweep(template, [4, 2, 8], [1.0, 0.2], threads=2)
    assert [(r.n, r.R) for r in rows] == [(2, 1.0), (4, 1.0), (8, 1.0), (2, 0.2), (4, 0.2), (8, 0.2)]
    flagged = [r for r in rows if r.status == "budget_exceeded"]
    assert [r.n for r in flagged] == [8, 8]
    assert all(math.isnan(r.mean_tv) for r in flagged)
    assert rows[0].seed_count == 4


def test_single_cell_sweep_matches_direct_tv():
    spec = bsc_spec(4, 0.75, seeds=(7,))
    row = rate_sweep(spec, [4], [0.75])[0]
    assert row.mean_tv == pytest.approx(tv_to_target(spec, 7), abs=1e-15)
