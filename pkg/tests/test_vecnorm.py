from __future__ import annotations

import itertools
import logging
import math

import numpy as np
import pytest

from boxnorm.errors import InputError, ParameterError, ScaleError
from boxnorm.vecnorm import (
    BoxParams,
    KSupportParams,
    VertexSet,
    box_dual_pairing_gap,
    box_norm,
    dual_box_norm,
    dual_k_support_norm,
    dual_ksup_q_norm,
    k_support_norm,
    ksup_inf_norm,
    ksup_one_norm,
    overlap_group_lasso_oracle,
    polyhedral_dual_norm,
    solve_breakpoints,
    theta_objective,
)
from tests.oracles import (
    box_norm_by_enumeration,
    box_norm_by_minimize,
    k_support_by_minimize,
    random_box,
)


def _dual_by_greedy(u: np.ndarray, params: BoxParams) -> float:
    # sup of sum theta_i u_i^2 over the box: fill the largest u_i^2 first
    u2 = np.sort(u**2)[::-1]
    theta = np.full(u.size, params.a)
    budget = params.c - u.size * params.a
    for i in range(u.size):
        take = min(params.b - params.a, budget)
        theta[i] += take
        budget -= take
    return math.sqrt(float(np.dot(theta, u2)))


def test_box_norm_equal_bounds_is_scaled_l2() -> None:
    value, cert = box_norm([3.0, 4.0], BoxParams(a=1.0, b=1.0, c=2.0))
    assert value == pytest.approx(5.0)
    np.testing.assert_allclose(cert.theta, [1.0, 1.0])


def test_box_norm_interior_solution() -> None:
    value, cert = box_norm([1.0, 1.0], BoxParams(a=0.5, b=1.0, c=1.5))
    assert value == pytest.approx(math.sqrt(8.0 / 3.0), rel=1e-12)
    np.testing.assert_allclose(cert.theta, [0.75, 0.75])
    assert (cert.q, cert.ell) == (0, 0)


def test_box_norm_empty_middle_segment() -> None:
    value, cert = box_norm([2.0, 0.1], BoxParams(a=0.5, b=1.0, c=1.5))
    assert value == pytest.approx(math.sqrt(4.02), rel=1e-12)
    np.testing.assert_allclose(cert.theta, [1.0, 0.5])
    assert (cert.q, cert.ell) == (1, 1)
    assert cert.p_res == 0.0


def test_box_norm_full_budget_uses_upper_bound() -> None:
    w = np.array([1.0, -2.0, 2.0])
    value, cert = box_norm(w, BoxParams(a=0.25, b=4.0, c=12.0))
    assert value == pytest.approx(3.0 / 2.0)
    np.testing.assert_allclose(cert.theta, [4.0, 4.0, 4.0])


def test_box_norm_zero_vector() -> None:
    value, cert = box_norm(np.zeros(4), BoxParams(a=0.5, b=1.0, c=3.0))
    assert value == 0.0
    np.testing.assert_allclose(cert.theta, [0.75] * 4)


def test_box_norm_certificate_is_feasible(rng: np.random.Generator) -> None:
    for _ in range(200):
        d = int(rng.integers(1, 12))
        params = random_box(d, rng)
        w = rng.standard_normal(d) * rng.uniform(0.1, 10.0)
        value, cert = box_norm(w, params)
        theta = cert.theta
        assert np.all(theta >= params.a - 1e-12)
        assert np.all(theta <= params.b + 1e-12)
        assert theta.sum() == pytest.approx(params.c, rel=1e-9)
        assert cert.q + cert.ell <= d
        assert value**2 == pytest.approx(theta_objective(w, theta), rel=1e-10)
        # theta follows the ordering of |w|
        order = np.argsort(-np.abs(w), kind="stable")
        assert np.all(np.diff(theta[order]) <= 1e-12)


def test_box_norm_matches_enumeration(rng: np.random.Generator) -> None:
    for _ in range(300):
        d = int(rng.integers(1, 7))
        params = random_box(d, rng)
        w = rng.standard_normal(d)
        value, _ = box_norm(w, params)
        assert value == pytest.approx(box_norm_by_enumeration(w, params), rel=1e-9)


def test_box_norm_matches_direct_minimization(rng: np.random.Generator) -> None:
    for _ in range(30):
        d = int(rng.integers(2, 7))
        params = random_box(d, rng)
        w = rng.standard_normal(d)
        value, _ = box_norm(w, params)
        assert value == pytest.approx(box_norm_by_minimize(w, params), rel=1e-5)


def test_box_norm_non_integer_rho_with_zeros() -> None:
    params = BoxParams.from_k(0.2, 1.0, 1.5, 4)
    assert params.rho(4) == pytest.approx(1.5)
    assert params.k(4) == 1
    w = np.array([0.0, 3.0, 0.0, -1.0])
    value, cert = box_norm(w, params)
    assert value == pytest.approx(box_norm_by_enumeration(w, params), rel=1e-10)
    # zero entries sit at the lower bound
    np.testing.assert_allclose(cert.theta[[0, 2]], [0.2, 0.2])


def test_box_norm_rejects_budget_outside_box() -> None:
    with pytest.raises(ParameterError):
        box_norm([1.0, 2.0, 3.0], BoxParams(a=1.0, b=2.0, c=10.0))
    with pytest.raises(ParameterError):
        box_norm([1.0, 2.0, 3.0], BoxParams(a=1.0, b=2.0, c=2.0))


def test_box_params_validation() -> None:
    with pytest.raises(ParameterError):
        BoxParams(a=0.0, b=1.0, c=1.0)
    with pytest.raises(ParameterError):
        BoxParams(a=2.0, b=1.0, c=1.0)
    with pytest.raises(ParameterError):
        BoxParams(a=0.5, b=1.0, c=float("nan"))
    with pytest.raises(ParameterError):
        BoxParams.from_k(0.5, 1.0, 4.0, 3)


def test_from_k_snaps_integer_k() -> None:
    params = BoxParams.from_k(0.1, 0.7, 3.0, 10)
    assert params.k(10) == 3
    assert params.is_integer_k(10)


def test_from_k_keeps_integer_k_as_a_approaches_b() -> None:
    for gap in (1e-6, 1e-9, 1e-12):
        params = BoxParams.from_k(1.0 - gap, 1.0, 2.0, 5)
        assert params.is_integer_k(5)
        assert params.k(5) == 2
    assert not BoxParams.from_k(1.0 - 1e-6, 1.0, 2.5, 5).is_integer_k(5)
    assert BoxParams.from_k(1.0 - 1e-6, 1.0, 2.5, 5).k(5) == 2


def test_non_finite_input_raises() -> None:
    with pytest.raises(InputError):
        box_norm([1.0, float("inf")], BoxParams(a=0.5, b=1.0, c=1.5))
    with pytest.raises(InputError):
        k_support_norm(np.ones((2, 2)), 1)


def test_k_support_examples() -> None:
    assert k_support_norm([1.0, -2.0, 3.0], 1)[0] == pytest.approx(6.0)
    assert k_support_norm([1.0, 1.0, 1.0], 3)[0] == pytest.approx(math.sqrt(3.0))
    value, q = k_support_norm([2.0, 1.0, 0.5], KSupportParams(2))
    assert value == pytest.approx(2.5)
    assert q == 1


def test_k_support_special_cases(rng: np.random.Generator) -> None:
    for _ in range(100):
        d = int(rng.integers(1, 20))
        w = rng.standard_normal(d)
        l1 = float(np.abs(w).sum())
        l2 = float(np.linalg.norm(w))
        assert abs(k_support_norm(w, 1)[0] - l1) <= 1e-10 * l1
        assert abs(k_support_norm(w, d)[0] - l2) <= 1e-10 * l2


def test_k_support_matches_direct_minimization(rng: np.random.Generator) -> None:
    for _ in range(20):
        d = int(rng.integers(2, 7))
        k = int(rng.integers(1, d + 1))
        w = rng.standard_normal(d)
        assert k_support_norm(w, k)[0] == pytest.approx(k_support_by_minimize(w, k), rel=1e-5)


def test_k_support_rejects_bad_k() -> None:
    with pytest.raises(ParameterError):
        k_support_norm([1.0, 2.0], 3)
    with pytest.raises(ParameterError):
        KSupportParams(0)


def test_dual_box_norm_examples() -> None:
    assert dual_box_norm([1.0, 1.0, 1.0], BoxParams(a=0.5, b=1.0, c=2.0)) == pytest.approx(math.sqrt(2.0))
    assert dual_box_norm([1.0, 0.0, 0.0], BoxParams(a=0.5, b=1.0, c=1.75)) == pytest.approx(
        math.sqrt(0.75)
    )
    u = np.array([0.3, -1.2, 2.0])
    assert dual_box_norm(u, BoxParams(a=2.0, b=2.0, c=6.0)) == pytest.approx(
        math.sqrt(2.0) * float(np.linalg.norm(u))
    )


def test_dual_box_norm_matches_greedy_supremum(rng: np.random.Generator) -> None:
    for _ in range(200):
        d = int(rng.integers(1, 10))
        params = random_box(d, rng)
        u = rng.standard_normal(d)
        assert dual_box_norm(u, params) == pytest.approx(_dual_by_greedy(u, params), rel=1e-10)


def test_dual_pairing_inequality(rng: np.random.Generator) -> None:
    for _ in range(200):
        d = int(rng.integers(1, 10))
        params = random_box(d, rng)
        u = rng.standard_normal(d)
        w = rng.standard_normal(d)
        assert box_dual_pairing_gap(u, w, params) >= -1e-10


def test_dual_is_attained_on_the_unit_ball(rng: np.random.Generator) -> None:
    d = 4
    params = BoxParams.from_k(0.3, 1.0, 2.0, d)
    u = rng.standard_normal(d)
    samples = rng.standard_normal((10_000, d))
    best = 0.0
    for w in samples:
        value, _ = box_norm(w, params)
        best = max(best, float(np.dot(u, w)) / value)
    dual = dual_box_norm(u, params)
    assert best <= dual + 1e-10
    assert best >= 0.98 * dual


def test_dual_box_approaches_dual_k_support(rng: np.random.Generator) -> None:
    for k in (1, 2, 3):
        u = rng.standard_normal(5)
        params = BoxParams.from_k(1e-10, 1.0, float(k), 5)
        assert dual_box_norm(u, params) == pytest.approx(dual_k_support_norm(u, k), rel=1e-6)


def test_dual_k_support_examples() -> None:
    assert dual_k_support_norm([3.0, -4.0, 1.0], 2) == pytest.approx(5.0)
    assert dual_k_support_norm([1.0, 1.0], 2) == pytest.approx(math.sqrt(2.0))
    assert dual_k_support_norm([0.2, -7.0, 0.1], 1) == pytest.approx(7.0)


def test_dual_ksup_q_examples() -> None:
    u = [3.0, -4.0, 1.0]
    assert dual_ksup_q_norm(u, 2, 1.0) == pytest.approx(7.0)
    assert dual_ksup_q_norm(u, 2, 2.0) == pytest.approx(5.0)
    assert dual_ksup_q_norm(u, 3, math.inf) == pytest.approx(4.0)
    with pytest.raises(ParameterError):
        dual_ksup_q_norm(u, 2, 0.5)
    with pytest.raises(ParameterError):
        dual_ksup_q_norm(u, 4, 2.0)


def test_ksup_inf_examples() -> None:
    assert ksup_inf_norm([1.0, 1.0, 1.0, 1.0], 2) == pytest.approx(2.0)
    assert ksup_inf_norm([5.0, 0.0, 0.0], 2) == pytest.approx(5.0)
    assert ksup_inf_norm([0.0, 0.0], 1) == 0.0


def test_ksup_inf_and_one_pair_with_their_duals(rng: np.random.Generator) -> None:
    for _ in range(100):
        d = int(rng.integers(2, 9))
        k = int(rng.integers(1, d + 1))
        u = rng.standard_normal(d)
        w = rng.standard_normal(d)
        assert float(np.dot(u, w)) <= ksup_inf_norm(w, k) * dual_ksup_q_norm(u, k, 1.0) + 1e-10
        assert float(np.dot(u, w)) <= ksup_one_norm(w, k) * dual_ksup_q_norm(u, k, math.inf) + 1e-10


def test_norms_are_symmetric_gauges(rng: np.random.Generator) -> None:
    params = BoxParams.from_k(0.2, 1.5, 2.0, 6)
    w = rng.standard_normal(6)
    perm = rng.permutation(6)
    signs = rng.choice([-1.0, 1.0], size=6)
    v = signs * w[perm]
    assert box_norm(v, params)[0] == pytest.approx(box_norm(w, params)[0], abs=1e-12)
    assert k_support_norm(v, 3)[0] == pytest.approx(k_support_norm(w, 3)[0], abs=1e-12)
    assert dual_box_norm(v, params) == pytest.approx(dual_box_norm(w, params), abs=1e-12)


def test_polyhedral_dual_examples() -> None:
    eye = VertexSet.from_arrays(np.eye(3))
    assert polyhedral_dual_norm([2.0, -3.0, 1.0], eye) == pytest.approx(3.0)
    pairs = VertexSet.from_groups(list(itertools.combinations(range(3), 2)), 3)
    assert polyhedral_dual_norm([3.0, -4.0, 1.0], pairs) == pytest.approx(5.0)
    single = VertexSet.from_arrays([np.ones(3)])
    assert polyhedral_dual_norm([1.0, 2.0, 2.0], single) == pytest.approx(3.0)


def test_polyhedral_dual_equals_dual_k_support(rng: np.random.Generator) -> None:
    for d in range(1, 7):
        for k in range(1, d + 1):
            vs = VertexSet.from_groups(list(itertools.combinations(range(d), k)), d)
            u = rng.standard_normal(d)
            assert polyhedral_dual_norm(u, vs) == pytest.approx(dual_k_support_norm(u, k), rel=1e-12)


def test_vertex_set_validation() -> None:
    with pytest.raises(ParameterError):
        VertexSet(())
    with pytest.raises(ParameterError):
        VertexSet.from_arrays([[1.0, 0.0]])
    with pytest.raises(ParameterError):
        VertexSet.from_arrays([[1.0, -1.0]])
    with pytest.raises(ParameterError):
        polyhedral_dual_norm([1.0, 2.0], VertexSet.from_arrays([[1.0, 1.0, 1.0]]))


def test_overlap_oracle_examples() -> None:
    assert overlap_group_lasso_oracle([1.0, 1.0], [[0], [1]]) == pytest.approx(2.0, abs=1e-6)
    groups = list(itertools.combinations(range(3), 2))
    assert overlap_group_lasso_oracle([2.0, 1.0, 0.5], groups) == pytest.approx(2.5, abs=1e-5)
    assert overlap_group_lasso_oracle([0.0, 3.0, 4.0], [[0, 1], [1, 2]]) == pytest.approx(5.0, abs=1e-5)


def test_overlap_oracle_is_the_k_support_norm(rng: np.random.Generator) -> None:
    d = 5
    for k in (1, 2, 3):
        groups = list(itertools.combinations(range(d), k))
        w = rng.standard_normal(d)
        assert overlap_group_lasso_oracle(w, groups) == pytest.approx(
            k_support_norm(w, k)[0], rel=1e-4
        )


def test_overlap_oracle_logs_solver_status(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.DEBUG, logger="boxnorm.vecnorm"):
        overlap_group_lasso_oracle([2.0, 1.0, 0.5], list(itertools.combinations(range(3), 2)))
    records = [r for r in caplog.records if r.getMessage() == "overlap oracle solved"]
    assert len(records) == 1
    record = records[0]
    assert isinstance(record.status, str) and record.status  # type: ignore[attr-defined]
    assert record.nit >= 1  # type: ignore[attr-defined]
    assert 0.0 <= record.violation <= 1e-6  # type: ignore[attr-defined]
    assert record.groups == 3  # type: ignore[attr-defined]


def test_overlap_oracle_limits() -> None:
    with pytest.raises(ScaleError):
        overlap_group_lasso_oracle(np.ones(9), [list(range(9))])
    with pytest.raises(ParameterError):
        overlap_group_lasso_oracle([1.0, 1.0, 1.0], [[0, 1]])


def test_breakpoint_solver_hits_budget(rng: np.random.Generator) -> None:
    abs_w = np.abs(rng.standard_normal(20))
    theta, alpha = solve_breakpoints(abs_w, lo=0.1, hi=1.0, c=7.3)
    assert theta.sum() == pytest.approx(7.3, rel=1e-10)
    np.testing.assert_allclose(theta, np.clip(alpha * abs_w, 0.1, 1.0))


def test_breakpoint_debug_checks(monkeypatch: pytest.MonkeyPatch, rng: np.random.Generator) -> None:
    monkeypatch.setenv("BN_DEBUG_CHECKS", "1")
    w = rng.standard_normal(15)
    params = BoxParams.from_k(0.1, 1.0, 4.0, 15)
    value, _ = box_norm(w, params)
    assert value == pytest.approx(box_norm_by_enumeration(w, params), rel=1e-9)
