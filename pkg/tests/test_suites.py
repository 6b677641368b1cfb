import math

import numpy as np
import pytest

from qcsdp.games import chsh, chsh_optimal_strategy, commutator_report, random_ac_strategy
from qcsdp.linalg import check_com_power_bound
from qcsdp.suites import (SuiteResult, check_dilation, com_power_suite, dilation_suite, philox,
                          sq_bound_suite, voiculescu_table)


def test_philox_streams_are_reproducible():
    a = philox(5).standard_normal(4)
    np.testing.assert_array_equal(a, philox(5).standard_normal(4))
    assert not np.array_equal(a, philox(6).standard_normal(4))


def test_suite_result_pass_flag():
    assert SuiteResult("x", 3, 0, 0.5).passed
    assert not SuiteResult("x", 3, 1, 1.5).passed
    assert not SuiteResult("x", 0, 0, 0.0).passed


def test_voiculescu_rows():
    rows = voiculescu_table([2, 3, 4, 256])
    assert [d for d, _, _ in rows] == [2, 3, 4, 256]
    for d, got, want in rows:
        assert want == pytest.approx(2 * math.sin(math.pi / d), abs=1e-15)
        assert abs(got - want) <= 1e-10


def test_homogeneous_commutator_power_suite_passes():
    res = com_power_suite(300, seed=0, form="homogeneous")
    assert res.passed and res.worst <= 1.0


def test_stated_commutator_power_suite_records_counterexamples():
    res = com_power_suite(1000, seed=0, form="stated")
    assert res.trials == 1000
    # every recorded failure really has lhs > rhs
    for k, d, r, lhs, rhs in res.details:
        assert lhs > rhs
    assert res.failures == len(res.details) == 7
    assert res.worst == pytest.approx(2.11, abs=5e-3)


def test_stated_form_fails_on_scaled_rank_one_pair():
    plus = np.full((2, 2), 0.5)
    beta = 1e-4
    res = check_com_power_bound(plus, np.diag([beta, 0.0]), 0.5)
    assert res.lhs == pytest.approx(math.sqrt(beta) / 2, rel=1e-9)
    assert not res.holds


def test_unknown_form_is_rejected():
    with pytest.raises(ValueError):
        com_power_suite(1, form="other")


def test_sq_bound_suite_passes():
    res = sq_bound_suite(100, seed=0)
    assert res.passed and res.trials == 100


def test_dilation_suite_passes():
    res = dilation_suite(100, seed=0)
    assert res.passed and res.trials == 100
    assert res.worst <= 1.0


@pytest.mark.parametrize("noise", [1e-4, 1e-2])
def test_dilation_of_nearly_commuting_strategy(noise):
    s = random_ac_strategy(philox(1), chsh(), 2, 2, noise=noise)
    chk = check_dilation(chsh(), s)
    assert chk.holds
    assert chk.delta == pytest.approx(commutator_report(s).delta_max)
    assert 0 < chk.delta


def test_dilation_of_tensor_strategy_is_exact():
    chk = check_dilation(chsh(), chsh_optimal_strategy())
    assert chk.delta <= 1e-12 and chk.dilated_delta <= 1e-9
    assert chk.value_change <= 1e-9 and chk.projective_residual <= 1e-9
