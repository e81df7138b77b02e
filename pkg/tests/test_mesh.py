import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfac.mesh import (
    AdaptiveParams,
    TimeMesh,
    adaptive_next_step,
    check_assg,
    concat_mesh,
    graded_mesh,
    random_tail_mesh,
    uniform_mesh,
)


def test_graded_nodes():
    np.testing.assert_array_equal(graded_mesh(1.0, 2, 2.0).nodes, [0.0, 0.25, 1.0])


def test_graded_gamma_one_is_uniform():
    m = graded_mesh(1.0, 4, 1.0)
    np.testing.assert_allclose(m.steps, 0.25, rtol=0, atol=1e-16)
    np.testing.assert_array_equal(m.nodes, uniform_mesh(1.0, 4).nodes)
    assert m.rho_max == pytest.approx(1.0)


def test_graded_probe_first_step():
    m = graded_mesh(0.1, 64, 3.0)
    assert m.steps[0] == pytest.approx(0.1 / 64**3, rel=1e-14)
    assert m.steps[0] == pytest.approx(3.8e-7, rel=0.01)
    assert m.T == 0.1


@pytest.mark.parametrize("args", [(1.0, 0, 2.0), (1.0, 4, 0.5), (0.0, 4, 1.0)])
def test_graded_rejects(args):
    with pytest.raises(ValueError):
        graded_mesh(*args)


def test_mesh_invariants_enforced():
    with pytest.raises(ValueError):
        TimeMesh(np.array([0.0, 0.5, 0.5]))
    with pytest.raises(ValueError):
        TimeMesh(np.array([0.1, 0.5]))
    m = graded_mesh(1.0, 3, 2.0)
    with pytest.raises(ValueError):
        m.nodes[1] = 0.3  # read-only


def test_ratios_definition():
    m = TimeMesh(np.array([0.0, 1.0, 3.0, 4.0]))
    np.testing.assert_allclose(m.ratios, [0.5, 2.0])
    assert m.rho_max == 2.0
    assert m.tau_max == 2.0 and m.tau_min == 1.0


def test_random_tail_sums_exactly():
    steps = random_tail_mesh(0.1, 100.0, 500, seed=3)
    assert steps.size == 500 and np.all(steps > 0)
    assert math.fsum(steps) == pytest.approx(99.9, rel=0, abs=4 * np.spacing(100.0))


def test_random_tail_single_step():
    np.testing.assert_allclose(random_tail_mesh(0.25, 1.0, 1, seed=0), [0.75])


def test_random_tail_deterministic():
    a = random_tail_mesh(0.0, 1.0, 64, seed=42)
    b = random_tail_mesh(0.0, 1.0, 64, seed=42)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, random_tail_mesh(0.0, 1.0, 64, seed=43))


def test_random_tail_rejects():
    with pytest.raises(ValueError):
        random_tail_mesh(1.0, 1.0, 3, 0)
    with pytest.raises(ValueError):
        random_tail_mesh(0.0, 1.0, 0, 0)


def test_concat():
    m = concat_mesh(graded_mesh(1.0, 2, 2.0), [1.0])
    np.testing.assert_array_equal(m.nodes, [0.0, 0.25, 1.0, 2.0])
    head = graded_mesh(1.0, 2, 2.0)
    assert concat_mesh(head, []) is head


def test_concat_closes_at_T():
    head = graded_mesh(0.1, 64, 3.0)
    m = concat_mesh(head, random_tail_mesh(0.1, 100.0, 500, seed=1), end=100.0)
    assert m.T == 100.0
    assert m.N == 564
    with pytest.raises(ValueError):
        concat_mesh(head, [-1.0])


@pytest.mark.parametrize(
    "change, tau_max, expected",
    [(0.0, 0.1, 0.1), (0.01, 1.0, 0.05), (10.0, 0.1, 1e-3)],
)
def test_adaptive_examples(change, tau_max, expected):
    p = AdaptiveParams(tol=0.15, beta=200.0, tau_min=1e-3, tau_max=tau_max)
    assert adaptive_next_step(change, p) == pytest.approx(expected, rel=1e-15)


def test_adaptive_params_validate():
    with pytest.raises(ValueError):
        AdaptiveParams(0.0, 1.0, 1e-3, 1.0)
    with pytest.raises(ValueError):
        AdaptiveParams(1.0, -1.0, 1e-3, 1.0)
    with pytest.raises(ValueError):
        AdaptiveParams(1.0, 1.0, 1.0, 1e-3)
    with pytest.raises(ValueError):
        adaptive_next_step(-1.0, AdaptiveParams(1.0, 1.0, 1e-3, 1.0))


@given(
    c1=st.floats(0.0, 1e3),
    c2=st.floats(0.0, 1e3),
    tol=st.floats(1e-3, 10.0),
    beta=st.floats(0.0, 1e4),
)
def test_adaptive_monotone_and_bounded(c1, c2, tol, beta):
    p = AdaptiveParams(tol, beta, 1e-3, 0.5)
    lo, hi = sorted((c1, c2))
    a, b = adaptive_next_step(lo, p), adaptive_next_step(hi, p)
    assert p.tau_min <= b <= a <= p.tau_max


@settings(max_examples=50)
@given(
    T0=st.floats(1e-3, 10.0),
    N0=st.integers(1, 300),
    gamma=st.floats(1.0, 5.0),
    N1=st.integers(1, 200),
    seed=st.integers(0, 2**32),
)
def test_constructed_meshes_valid(T0, N0, gamma, N1, seed):
    T = T0 * 3.0
    m = concat_mesh(graded_mesh(T0, N0, gamma), random_tail_mesh(T0, T, N1, seed), end=T)
    assert np.all(np.diff(m.nodes) > 0)
    assert m.T == T
    assert abs(math.fsum(m.steps) - T) <= 4 * np.spacing(T) * m.N


def test_assg_graded_holds():
    for gamma in (1.0, 2.0, 3.0):
        m = graded_mesh(1.0, 128, gamma)
        assert check_assg(m, gamma, C_gamma=2.0**gamma * gamma + 1.0).holds


def test_assg_uniform():
    rep = check_assg(uniform_mesh(1.0, 50), 1.0, 2.0)
    assert rep.holds and rep.worst_k is None


def test_assg_ratio_violation():
    m = TimeMesh(np.array([0.0, 0.1, 0.5, 0.6]))  # t_2 = 5 t_1
    rep = check_assg(m, 1.0, 2.0)
    assert not rep.holds and rep.worst_k == 2
    with pytest.raises(ValueError):
        check_assg(m, 1.0, 0.0)
