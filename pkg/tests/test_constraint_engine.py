"""Constraint algorithm on the transverse split: pointwise solves,
generation bookkeeping, stabilized dynamics and termination states."""

import numpy as np
import pytest

import jetflow.constraint_engine as eng
import jetflow.expr_core as ec
import jetflow.jet_geometry as jg

import _support as sup


def scalar(fn, arity, name="f"):
    return ec.ScalarField(fn, arity, name=name)


# ---------------------------------------------------------------------------
# split identities and pointwise solves


def test_split_forms_identities(qv_system):
    prob = jg.dynamical_problem(qv_system)
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = list(rng.normal(size=5))
        w = np.asarray(prob.omega(x), dtype=float)
        g = np.asarray(prob.gamma(x), dtype=float)
        Y = np.asarray(prob.Y(x), dtype=float)
        assert np.max(np.abs(Y @ w)) < 1e-12
        assert abs(float(g @ Y)) < 1e-12
        assert np.max(np.abs(w + w.T)) < 1e-12


def test_solve_pointwise_on_and_off_the_set(qv_system):
    prob = jg.dynamical_problem(qv_system)
    sol = eng.solve_pointwise(prob, [0.0] * 5)
    assert np.allclose(sol.X, [1.0, 0.0, 0.0, 0.0, 0.0], atol=1e-10)
    assert sol.residual < 1e-12
    assert sol.nullspace.shape[1] == 2
    # off the primary set the linear system is inconsistent
    with pytest.raises(eng.NoSolutionAtPoint) as err:
        eng.solve_pointwise(prob, [0.0, 0.0, 0.0, 0.5, 0.0])
    assert err.value.residual > 1e-3


def test_first_generation_qv(qv_system):
    prob = jg.dynamical_problem(qv_system)
    kept, dropped, kernel = eng.first_generation(prob)
    assert len(kept) == 1 and len(dropped) == 1
    assert kernel.count == 2
    chi = kept[0]
    assert chi.name == "chi[1][0]"
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = list(rng.normal(size=5))
        # the surviving first-generation function cuts exactly {v1 = 0}
        assert abs(chi(x)) == pytest.approx(abs(x[3]), rel=1e-12)


# ---------------------------------------------------------------------------
# full runs on the bundled systems


def test_run_qv(qv_run):
    rep = qv_run
    assert rep.termination == "final"
    assert rep.generations == 1
    assert rep.levels[0].descriptions == ["chi[1][0]"]
    assert rep.levels[0].added_rank == 1
    assert rep.cumulative_rank == 1
    assert len(rep.levels[0].dropped) == 1
    sol = rep.solution
    assert sol.determined_count == 1
    assert len(sol.gauge_fields) == 1
    gauge = np.asarray([ec.Dual(c, 0.0).a if isinstance(c, ec.Dual) else c
                        for c in sol.gauge_fields[0]([0.0] * 5)])
    assert np.allclose(np.abs(gauge), [0.0, 0.0, 0.0, 0.0, 1.0],
                       atol=1e-10)
    assert sol.tangency_residual < 1e-8
    for x in rep.samples[:5]:
        X = np.asarray(sol.X_fn(list(x)), dtype=float)
        assert abs(X[0] - 1.0) < 1e-10
        assert abs(X[1]) < 1e-8 and abs(X[3]) < 1e-8
    rec = rep.levels[0].crosscheck
    assert rec is not None and rec["points"] >= 1
    assert rec["max_complement"] <= 1e-8


def test_run_qv_dynamics_residual_and_samples(qv_run):
    lvl = qv_run.levels[0]
    assert lvl.dynamics_residual < 1e-8
    for x in lvl.samples:
        assert abs(x[3]) < 1e-8    # projected onto {v1 = 0}


def test_run_affine_empty_tower(affine_run):
    rep = affine_run
    assert rep.termination == "final"
    assert rep.generations == 0 and rep.levels == []
    assert rep.constraints == []
    sol = rep.solution
    assert sol.determined_count == 0
    assert len(sol.gauge_fields) == 2
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = list(rng.normal(size=5))
        X = np.asarray(sol.X_fn(x), dtype=float)
        want = [1.0, x[2] / 2.0, -x[1] / 2.0, 0.0, 0.0]
        assert np.max(np.abs(X - want)) < 1e-10


def test_run_qv_time_absorbs_transport_drift(qv_time_system):
    # the lone constraint generates a derivative that the kernel
    # directions absorb; no spurious second generation may appear
    rep = eng.run(jg.dynamical_problem(qv_time_system))
    assert rep.termination == "final"
    assert rep.generations == 1
    assert rep.levels[0].descriptions == ["chi[1][0]"]
    chi = rep.constraints[0]
    rng = np.random.default_rng(10)
    for _ in range(10):
        x = list(rng.normal(size=5))
        x[0] = 1.0 + 0.2 * x[0]    # stay near the t = 1 branch
        # the frozen kernel normalization gives chi = v1 or chi = t v1
        val = abs(chi(x))
        assert min(abs(val - abs(x[3])),
                   abs(val - abs(x[0] * x[3]))) < 1e-9
    sol = rep.solution
    assert sol.determined_count == 1
    assert len(sol.gauge_fields) == 1
    for x in rep.samples[:5]:
        X = np.asarray(sol.X_fn(list(x)), dtype=float)
        want = [1.0, 0.0, -x[2] / x[0], 0.0]
        assert np.max(np.abs(X[:4] - want)) < 1e-8


def test_run_regular_no_constraints(regular_run):
    rep = regular_run
    assert rep.termination == "final"
    assert rep.levels == []
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = list(rng.normal(size=3))
        X = np.asarray(rep.solution.X_fn(x), dtype=float)
        assert np.allclose(X, [1.0, x[2], 0.0], atol=1e-10)


# ---------------------------------------------------------------------------
# projection and rank guards


def test_gauss_newton_project():
    f = scalar(lambda x: x[3], 5)
    x0 = [0.2, 0.4, 0.6, 0.8, 1.0]
    x = eng.gauss_newton_project([f], x0)
    assert x is not None
    assert abs(x[3]) < 1e-10
    # the step is the minimum-norm one: other coordinates stay put
    kept = [0, 1, 2, 4]
    assert np.allclose([x[i] for i in kept], [x0[i] for i in kept],
                       atol=1e-12)
    assert np.allclose(eng.gauss_newton_project([], x0), x0, atol=0.0)
    infeasible = scalar(lambda x: x[1] * x[1] + 1.0, 5)
    assert eng.gauss_newton_project([infeasible], x0) is None


def test_rank_drift_guard():
    f = scalar(lambda x: x[1] * x[2], 5)
    generic = [0.0, 0.3, 0.4, 0.0, 0.0]
    degenerate = [0.0, 0.0, 0.0, 0.0, 0.0]
    assert eng._rank_at_samples([f], [generic], 1e-9) == 1
    with pytest.raises(eng.RankDrift):
        eng._rank_at_samples([f], [generic, degenerate], 1e-9)


def test_run_is_deterministic(qv_system):
    a = eng.run(jg.dynamical_problem(qv_system))
    b = eng.run(jg.dynamical_problem(qv_system))
    assert [l.descriptions for l in a.levels] == \
        [l.descriptions for l in b.levels]
    assert a.samples == b.samples
    xa = a.solution.X_fn(list(a.samples[0]))
    xb = b.solution.X_fn(list(b.samples[0]))
    assert xa == xb


def test_infeasible_constraint_terminates_empty():
    # constant nonzero gamma pairing: the candidate function has an
    # empty zero set, so the projection sweep comes back empty
    sys1 = jg.LagrangianSystem(1, "v1 + q1", seed=[0.0, 0.0, 0.0])
    rep = eng.run(jg.dynamical_problem(sys1))
    assert rep.termination == "empty"
    assert rep.solution is None
