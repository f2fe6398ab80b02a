import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import fo_argmax, grid_argmax, omega_grid, omega_plain
from regmdp.errors import DomainError, SupportError, UnsupportedRegularizer
from regmdp.regularizers import (
    ANCHOR_FLOOR,
    Regularizer,
    bregman_radius,
    bregman_value,
    conjugate_value,
    greedy_distribution,
    omega_gradient,
    omega_value,
    simplex_project,
)

KINDS = ["negative_entropy", "kl_uniform", "tsallis"]
LN2 = math.log(2.0)


def _interior(rng, A, size=None):
    return rng.dirichlet(np.ones(A), size=size)


# ------------------------------------------------------------------ examples


def test_entropy_uniform():
    assert omega_value(Regularizer.entropy(), np.array([0.5, 0.5])) == pytest.approx(-LN2, abs=1e-15)


def test_tsallis_uniform():
    assert omega_value(Regularizer.tsallis(), np.array([0.5, 0.5])) == pytest.approx(-0.25, abs=1e-15)


def test_kl_uniform_vertex():
    assert omega_value(Regularizer.kl_uniform(), np.array([1.0, 0, 0, 0])) == pytest.approx(math.log(4), abs=1e-15)


def test_entropy_zero_entries_contribute_nothing():
    assert omega_value(Regularizer.entropy(), np.array([1.0, 0.0])) == 0.0


def test_negative_probability_rejected():
    with pytest.raises(DomainError):
        omega_value(Regularizer.entropy(), np.array([1.1, -0.1]))


def test_unnormalized_rejected():
    with pytest.raises(DomainError):
        omega_value(Regularizer.tsallis(), np.array([0.3, 0.3]))


def test_unknown_kind():
    with pytest.raises(UnsupportedRegularizer):
        Regularizer("renyi")


def test_negative_scale_rejected():
    with pytest.raises(DomainError):
        Regularizer("entropy", -1.0)


def test_aliases():
    assert Regularizer("entropy").kind == "negative_entropy"
    assert Regularizer("kl").kind == "kl_uniform"


def test_conjugate_entropy_symmetric():
    assert conjugate_value(Regularizer.entropy(), np.array([0.0, 0.0])) == pytest.approx(LN2, abs=1e-15)


def test_conjugate_entropy_log_sum_exp():
    expected = math.log(math.e + 1.0)  # 1.313261687518223
    assert conjugate_value(Regularizer.entropy(), np.array([1.0, 0.0])) == pytest.approx(expected, abs=1e-14)
    _, grid_value, _ = grid_argmax(lambda P: P @ np.array([1.0, 0.0]) - omega_grid("negative_entropy", P), 2, h=1e-4)
    assert grid_value == pytest.approx(expected, abs=1e-8)


def test_conjugate_tsallis():
    # maximizer [0.75, 0.25]: 0.375 - 0.5 * (0.625 - 1) = 0.5625
    assert conjugate_value(Regularizer.tsallis(), np.array([0.5, 0.0])) == pytest.approx(0.5625, abs=1e-15)


def test_conjugate_kl_uniform_is_mellowmax():
    q = np.array([0.3, -1.2, 2.0])
    mellow = math.log(np.mean(np.exp(q)))
    assert conjugate_value(Regularizer.kl_uniform(), q) == pytest.approx(mellow, abs=1e-14)


def test_conjugate_non_finite_rejected():
    with pytest.raises(DomainError):
        conjugate_value(Regularizer.entropy(), np.array([np.inf, 0.0]))
    with pytest.raises(DomainError):
        greedy_distribution(Regularizer.tsallis(), np.array([np.nan, 0.0]))


def test_greedy_examples():
    np.testing.assert_allclose(greedy_distribution(Regularizer.entropy(), np.zeros(2)), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(
        greedy_distribution(Regularizer.entropy(), np.array([math.log(3), 0.0])), [0.75, 0.25], atol=1e-15
    )
    np.testing.assert_array_equal(greedy_distribution(Regularizer.tsallis(), np.array([2.0, 0.0])), [1.0, 0.0])


def test_greedy_tsallis_vertex_confirmed_by_grid():
    _, _, p = grid_argmax(lambda P: P @ np.array([2.0, 0.0]) - omega_grid("tsallis", P), 2)
    np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-6)


def test_hard_max_lowest_index_tie_break():
    reg = Regularizer.hard_max()
    np.testing.assert_array_equal(greedy_distribution(reg, np.array([1.0, 3.0, 3.0])), [0, 1, 0])
    assert conjugate_value(reg, np.array([1.0, 3.0, 3.0])) == 3.0


def test_small_scale_approaches_max():
    q = np.array([0.2, 1.7, 1.1])
    for kind in KINDS:
        assert conjugate_value(Regularizer(kind, 1e-6), q) == pytest.approx(1.7, abs=1e-4)


def test_simplex_project_examples():
    np.testing.assert_allclose(simplex_project(np.array([0.5, 0.0])), [0.75, 0.25], atol=1e-15)
    np.testing.assert_array_equal(simplex_project(np.array([2.0, 0.0])), [1.0, 0.0])


def test_simplex_project_idempotent():
    rng = np.random.default_rng(4)
    for A in (1, 2, 3, 7):
        p = _interior(rng, A)
        np.testing.assert_allclose(simplex_project(p), p, atol=1e-15)


def test_simplex_project_matches_tsallis_greedy_and_minimizes_distance():
    rng = np.random.default_rng(5)
    for _ in range(200):
        z = rng.normal(size=4) * 2
        p = simplex_project(z)
        np.testing.assert_array_equal(p, greedy_distribution(Regularizer.tsallis(), z))
        assert p.min() >= 0 and p.sum() == pytest.approx(1.0, abs=1e-12)
        # any other simplex point is at least as far from z
        others = _interior(rng, 4, size=500)
        assert np.all(np.sum((others - z) ** 2, axis=1) >= np.sum((p - z) ** 2) - 1e-12)


def test_broadcasting_over_states():
    rng = np.random.default_rng(9)
    q = rng.normal(size=(6, 3))
    for kind in KINDS:
        reg = Regularizer(kind, 0.7)
        batch = greedy_distribution(reg, q)
        rows = np.array([greedy_distribution(reg, row) for row in q])
        np.testing.assert_allclose(batch, rows, atol=1e-15)
        np.testing.assert_allclose(conjugate_value(reg, q), [conjugate_value(reg, row) for row in q], atol=1e-15)


# ---------------------------------------------------------------- bounds


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("A", [2, 3, 5])
def test_bounds_contain_samples_vertices_and_uniform(kind, A):
    rng = np.random.default_rng(A)
    reg = Regularizer(kind, 1.3)
    lo, hi = reg.bounds(A)
    pts = np.vstack([_interior(rng, A, 500), np.eye(A), np.full((1, A), 1.0 / A)])
    vals = omega_value(reg, pts)
    assert np.all(vals >= lo - 1e-12) and np.all(vals <= hi + 1e-12)
    # both constants are attained (uniform point and vertex)
    assert min(vals) == pytest.approx(lo, abs=1e-12)
    assert max(vals) == pytest.approx(hi, abs=1e-12)


def test_bound_constants():
    assert Regularizer.entropy().bounds(4) == pytest.approx((-math.log(4), 0.0))
    assert Regularizer.kl_uniform().bounds(4) == pytest.approx((0.0, math.log(4)))
    assert Regularizer.tsallis().bounds(4) == pytest.approx(((0.25 - 1) / 2, 0.0))
    assert Regularizer.kl_uniform(0.5).bounds(2) == pytest.approx((0.0, 0.5 * LN2))
    anchored = Regularizer.entropy().anchored(np.full(4, 0.25))
    assert anchored.bounds(4) == pytest.approx((0.0, math.log(4)))


@pytest.mark.parametrize("kind", KINDS)
def test_omega_matches_plain_formula(kind):
    rng = np.random.default_rng(1)
    for p in _interior(rng, 5, 50):
        assert omega_value(Regularizer(kind, 0.4), p) == pytest.approx(omega_plain(kind, p, 0.4), abs=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_strong_convexity_midpoint(kind):
    rng = np.random.default_rng(2)
    reg = Regularizer(kind)
    p, p2 = _interior(rng, 4, 300), _interior(rng, 4, 300)
    gap = 0.5 * omega_value(reg, p) + 0.5 * omega_value(reg, p2) - omega_value(reg, 0.5 * (p + p2))
    # 1-strong convexity in the l1 (entropy) or l2 (Tsallis) norm gives gap >= |p - p'|^2 / 8
    norm = np.sum(np.abs(p - p2), axis=1) if kind != "tsallis" else np.linalg.norm(p - p2, axis=1)
    assert np.all(gap >= norm**2 / 8 - 1e-12)
    assert np.all(gap > 0)


# ------------------------------------------------------------ properties


q_vectors = hnp.arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20))


@settings(max_examples=200, deadline=None)
@given(q=q_vectors, c=st.floats(-50, 50), kind=st.sampled_from(KINDS), scale=st.sampled_from([0.1, 1.0, 3.0]))
def test_distributivity(q, c, kind, scale):
    reg = Regularizer(kind, scale)
    assert abs(conjugate_value(reg, q + c) - conjugate_value(reg, q) - c) <= 1e-10 * max(1.0, abs(c))
    np.testing.assert_allclose(greedy_distribution(reg, q + c), greedy_distribution(reg, q), atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(q=q_vectors, data=st.data(), kind=st.sampled_from(KINDS))
def test_monotonicity(q, data, kind):
    bump = data.draw(hnp.arrays(np.float64, q.shape, elements=st.floats(0, 5)))
    reg = Regularizer(kind)
    assert conjugate_value(reg, q) <= conjugate_value(reg, q + bump) + 1e-12


@settings(max_examples=200, deadline=None)
@given(q=q_vectors, kind=st.sampled_from(KINDS), scale=st.sampled_from([0.0, 0.5, 2.0]))
def test_conjugate_sandwich(q, kind, scale):
    reg = Regularizer(kind, scale)
    lo, hi = reg.bounds(len(q))
    value = conjugate_value(reg, q)
    assert q.max() - hi - 1e-10 <= value <= q.max() - lo + 1e-10


@settings(max_examples=200, deadline=None)
@given(q=q_vectors, kind=st.sampled_from(KINDS), scale=st.sampled_from([0.05, 1.0, 4.0]))
def test_fenchel_consistency(q, kind, scale):
    reg = Regularizer(kind, scale)
    p = greedy_distribution(reg, q)
    assert p.min() >= 0 and abs(p.sum() - 1) <= 1e-12
    assert abs(p @ q - omega_value(reg, p) - conjugate_value(reg, q)) <= 1e-10 * max(1.0, np.abs(q).max())


@pytest.mark.parametrize("kind", KINDS)
def test_greedy_matches_first_order_oracle(kind):
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = rng.normal(size=5) * 3
        np.testing.assert_allclose(greedy_distribution(Regularizer(kind, 0.8), q), fo_argmax(kind, q, 0.8), atol=1e-10)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("A", [2, 3])
def test_grid_oracle_equivalence(kind, A):
    rng = np.random.default_rng(10 + A)
    reg = Regularizer(kind)
    for _ in range(20):
        q = rng.normal(size=A) * 2
        step_value, _, p = grid_argmax(lambda P: P @ q - omega_grid(reg.kind, P), A, refine=1)
        assert abs(conjugate_value(reg, q) - step_value) <= 1e-3
        np.testing.assert_allclose(greedy_distribution(reg, q), p, atol=1e-3)


# ------------------------------------------------------------------ Bregman


def test_kl_example():
    assert bregman_value(Regularizer.entropy(), np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(LN2)


def test_quadratic_example():
    assert bregman_value(Regularizer.tsallis(), np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)


def test_divergence_zero_iff_equal():
    rng = np.random.default_rng(6)
    for base in (Regularizer.entropy(), Regularizer.tsallis()):
        p = _interior(rng, 4, 100)
        assert np.all(np.abs(bregman_value(base, p, p)) <= 1e-12)
        other = _interior(rng, 4, 100)
        assert np.all(bregman_value(base, p, other) > 0)


def test_kl_support_error():
    with pytest.raises(SupportError):
        bregman_value(Regularizer.entropy(), np.array([0.5, 0.5]), np.array([1.0, 0.0]))


def test_bregman_regularizer_is_zero_at_anchor():
    rng = np.random.default_rng(8)
    for kind in KINDS:
        anchor = _interior(rng, 3)
        reg = Regularizer(kind, 0.6).anchored(anchor)
        assert omega_value(reg, anchor) == pytest.approx(0.0, abs=1e-15)
        assert np.all(omega_value(reg, _interior(rng, 3, 50)) >= 0)


def test_kl_and_kl_uniform_generate_the_same_divergence():
    rng = np.random.default_rng(12)
    p, a = _interior(rng, 4), _interior(rng, 4)
    assert bregman_value(Regularizer.entropy(), p, a) == pytest.approx(bregman_value(Regularizer.kl_uniform(), p, a))


def test_anchor_floored_and_renormalized():
    reg = Regularizer.entropy().anchored(np.array([1.0, 0.0]))
    assert reg.anchor.min() == pytest.approx(ANCHOR_FLOOR)
    assert reg.anchor.sum() == pytest.approx(1.0, abs=1e-15)
    # quadratic anchors keep their zeros
    assert Regularizer.tsallis().anchored(np.array([1.0, 0.0])).anchor[1] == 0.0


def test_anchored_kl_closed_forms_match_generic_oracle():
    rng = np.random.default_rng(13)
    for _ in range(50):
        anchor, q = _interior(rng, 4), rng.normal(size=4) * 2
        reg = Regularizer.entropy().anchored(anchor)
        weights = anchor * np.exp(q)
        closed_greedy = weights / weights.sum()
        oracle = fo_argmax("negative_entropy", q, anchor=anchor, bregman=True)
        np.testing.assert_allclose(greedy_distribution(reg, q), closed_greedy, atol=1e-12)
        np.testing.assert_allclose(closed_greedy, oracle, atol=1e-8)
        oracle_value = oracle @ q - bregman_value(Regularizer.entropy(), oracle, anchor)
        assert conjugate_value(reg, q) == pytest.approx(math.log(weights.sum()), abs=1e-12)
        assert math.log(weights.sum()) == pytest.approx(oracle_value, abs=1e-8)


def test_anchored_kl_example():
    reg = Regularizer.entropy().anchored(np.array([0.75, 0.25]))
    np.testing.assert_allclose(greedy_distribution(reg, np.array([0.0, math.log(3)])), [0.5, 0.5], atol=1e-15)


def test_anchored_quadratic_matches_oracle():
    rng = np.random.default_rng(14)
    for _ in range(50):
        anchor, q = _interior(rng, 4), rng.normal(size=4)
        reg = Regularizer.tsallis(0.5).anchored(anchor)
        oracle = fo_argmax("tsallis", q, 0.5, anchor=anchor, bregman=True)
        np.testing.assert_allclose(greedy_distribution(reg, q), oracle, atol=1e-9)


def test_bregman_constant_q_returns_anchor():
    anchor = np.array([0.2, 0.3, 0.5])
    for kind in KINDS:
        reg = Regularizer(kind).anchored(anchor)
        np.testing.assert_allclose(greedy_distribution(reg, np.full(3, 4.2)), anchor, atol=1e-12)


@pytest.mark.parametrize("base", [Regularizer.entropy(), Regularizer.tsallis()])
def test_three_point_identity(base):
    rng = np.random.default_rng(15)
    for _ in range(200):
        p, p_next, p_prev = _interior(rng, 4, 3)
        lhs = (omega_gradient(base, p_prev) - omega_gradient(base, p_next)) @ (p - p_next)
        rhs = bregman_value(base, p, p_next) - bregman_value(base, p, p_prev) + bregman_value(base, p_next, p_prev)
        assert abs(lhs - rhs) <= 1e-9


def test_radius_examples():
    assert bregman_radius(Regularizer.entropy(), np.full(4, 0.25)) == pytest.approx(math.log(4))
    assert bregman_radius(Regularizer.entropy(), np.full(2, 0.5)) == pytest.approx(LN2)
    assert bregman_radius(Regularizer.tsallis(), np.array([1.0, 0.0])) == pytest.approx(1.0)


def test_radius_is_the_supremum():
    rng = np.random.default_rng(16)
    for base in (Regularizer.entropy(), Regularizer.tsallis()):
        anchor = _interior(rng, 3, 4)
        radius = bregman_radius(base, anchor)
        samples = _interior(rng, 3, 2000)
        vals = np.array([bregman_value(base, samples, a) for a in anchor])
        assert vals.max() <= radius + 1e-12
        vertex_vals = np.array([bregman_value(base, np.eye(3), a) for a in anchor])
        assert vertex_vals.max() == pytest.approx(radius, abs=1e-12)


def test_radius_needs_base_regularizer():
    with pytest.raises(UnsupportedRegularizer):
        bregman_radius(Regularizer.entropy().anchored(np.full(2, 0.5)), np.full(2, 0.5))
