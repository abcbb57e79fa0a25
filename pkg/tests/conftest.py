"""Session-scoped fixtures: the bundled example systems and the analyses
that several test modules share."""

import pytest

import jetflow.constraint_engine as eng
import jetflow.hamiltonian_side as hs
import jetflow.jet_geometry as jg
import jetflow.sode_analysis as sa

QV = "0.5*v1^2 + q2*v1"
QV_TIME = "0.5*v1^2 + t*q2*v1"
AFFINE = "q2*v1 - q1*v2 - ((q1)^2 + (q2)^2)/2"
REGULAR = "0.5*v1^2"

QV_SEED = [0.0, 0.0, 0.0, 0.0, 0.0]
QV_TIME_SEED = [1.0, 0.1, 0.7, 0.0, 0.0]
AFFINE_SEED = [0.0, 1.0, 2.0, 1.0, -0.5]
REGULAR_SEED = [0.0, 0.0, 1.0]


@pytest.fixture(scope="session")
def qv_system():
    return jg.LagrangianSystem(2, QV, seed=list(QV_SEED))


@pytest.fixture(scope="session")
def qv_time_system():
    return jg.LagrangianSystem(2, QV_TIME, seed=list(QV_TIME_SEED))


@pytest.fixture(scope="session")
def affine_system():
    return jg.LagrangianSystem(2, AFFINE, seed=list(AFFINE_SEED))


@pytest.fixture(scope="session")
def regular_system():
    return jg.LagrangianSystem(1, REGULAR, seed=list(REGULAR_SEED))


@pytest.fixture(scope="session")
def qv_run(qv_system):
    return eng.run(jg.dynamical_problem(qv_system))


@pytest.fixture(scope="session")
def affine_run(affine_system):
    return eng.run(jg.dynamical_problem(affine_system))


@pytest.fixture(scope="session")
def regular_run(regular_system):
    return eng.run(jg.dynamical_problem(regular_system))


@pytest.fixture(scope="session")
def qv_el(qv_system):
    return sa.euler_lagrange_algorithm(qv_system)


@pytest.fixture(scope="session")
def qv_time_el(qv_time_system):
    return sa.euler_lagrange_algorithm(qv_time_system)


@pytest.fixture(scope="session")
def affine_el(affine_system):
    return sa.euler_lagrange_algorithm(affine_system)


@pytest.fixture(scope="session")
def qv_ham(qv_system):
    return hs.hamiltonian_algorithm(qv_system)


@pytest.fixture(scope="session")
def qv_time_ham(qv_time_system):
    return hs.hamiltonian_algorithm(qv_time_system)


@pytest.fixture(scope="session")
def affine_ham(affine_system):
    return hs.hamiltonian_algorithm(affine_system)


def make_context(system, analysis, Y_E=None):
    """Canonical space, classification and Dirac context for a system,
    assembled the same way the command line driver does it."""
    import jetflow.cli as cli

    chart = analysis.chart
    space = hs.build_canonical_space(system.n, Y_E=Y_E)
    primaries = list(chart.primaries)
    finals = [cli._lift(chart, f) for f in analysis.constraint_fields]
    start = list(chart.legendre(list(system.seed)))
    cls = hs.classify_constraints(space, primaries, finals, start)
    ctx = hs.DiracContext(space, cls) if cls.second_class else None
    return space, cls, ctx


@pytest.fixture(scope="session")
def qv_context(qv_system, qv_ham):
    return make_context(qv_system, qv_ham)


@pytest.fixture(scope="session")
def qv_time_context(qv_time_system, qv_time_ham):
    return make_context(qv_time_system, qv_time_ham)


@pytest.fixture(scope="session")
def affine_context(affine_system, affine_ham):
    return make_context(affine_system, affine_ham)
