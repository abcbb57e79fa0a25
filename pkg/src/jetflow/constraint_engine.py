"""Constraint algorithm for a closed 2-form Omega with time covector eta.

Given a transport field Y with eta(Y) = 1, the 2-form splits as

    gamma = i(Y) Omega,      omega = Omega - eta ^ gamma,

and the dynamics problem  i(X) Omega = 0, i(X) eta = 1  becomes

    i(X) omega = -gamma,     i(X) eta = 1.                      (*)

Solvability of (*) at a point is the pairing condition
<eta - gamma, Z> = 0 for every Z in ker omega (intersect) ker eta, which
seeds the first constraint generation.  Later generations come from the
derivative of the previous generation along the current particular
solution; an independent characterization through orthogonal complements
of the constraint set is evaluated numerically as a cross-check.  The
run terminates when a generation adds no Jacobian rank at any sample
(two consecutive identical cumulative ranks), when the constraint set
exhausts the chart dimension, or when it becomes infeasible.

All chart-wide fields built here (kernel bases, particular solutions,
stability coefficients) are frozen-pivot constructions: rank decisions
happen once at an on-manifold anchor point, after which every field is a
rational function of form components and admits exact dual-number
directional derivatives.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import expr_core as ec
from . import precosym as pre

__all__ = [
    "RankDrift", "SingularStabilityMatrix", "InconsistentCharacterizations",
    "NoSolutionAtPoint", "GeometricProblem", "ConstraintLevel",
    "DynamicsSolution", "AlgorithmReport", "PointSolution",
    "split_forms", "solve_pointwise", "first_generation", "next_generation",
    "stability_solve", "run", "gauss_newton_project",
]

SOLVE_TOL = 1e-9
RESIDUAL_TOL = 1e-8
PROJ_TOL = 1e-10
CLOSED_TOL = 1e-7
ZERO_DROP_TOL = 1e-10
SAMPLE_COUNT = 20
SAMPLE_SIGMA = 0.1
ZERO_CLOUD_COUNT = 100
ZERO_CLOUD_SIGMA = 0.5


class RankDrift(ArithmeticError):
    """A frozen-pivot basis stopped satisfying its defining rows; the
    relevant rank is not constant over the sampled region."""


class SingularStabilityMatrix(ArithmeticError):
    """The stability system for the undetermined coefficients lost the
    regularity its construction assumes."""


class InconsistentCharacterizations(AssertionError):
    """Derivative-generated and complement-generated constraints of one
    generation disagree on where they vanish."""


class NoSolutionAtPoint(ValueError):
    """The pointwise dynamics system (*) is inconsistent at the point."""

    def __init__(self, residual):
        super().__init__("pointwise system inconsistent "
                         "(residual %.3e)" % residual)
        self.residual = residual


def _pmap(fn, items):
    workers = os.environ.get("JETFLOW_THREADS", "")
    try:
        workers = int(workers)
    except ValueError:
        workers = 1
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# splitting and pointwise solving


def split_forms(Omega, eta, Y):
    """Evaluators for gamma = i(Y) Omega and omega = Omega - eta ^ gamma.

    Convention: (eta ^ gamma)[i][j] = eta_i gamma_j - eta_j gamma_i.
    Both evaluators accept dual-number points.
    """
    def gamma_fn(x):
        return pre.contract(Y(x), Omega(x))

    def omega_fn(x):
        Om = Omega(x)
        g = pre.contract(Y(x), Om)
        d = len(g)
        return [[Om[i][j] - (eta[i] * g[j] - eta[j] * g[i])
                 for j in range(d)] for i in range(d)]

    return gamma_fn, omega_fn


class GeometricProblem:
    """A chart, a closed 2-form, the time covector and a transport field.

    On construction the split forms are built and the structural
    identities checked: eta(Y) = 1, i(Y) gamma = 0, i(Y) omega = 0 at the
    seed, and closedness of Omega by central finite differences at a few
    sample points.
    """

    def __init__(self, dim, Omega, eta=None, Y=None, seed=None, rng_seed=0,
                 tol_rank=pre.TOL_RANK, name="problem"):
        self.dim = dim
        self.Omega = Omega
        self.eta = tuple(eta) if eta is not None else \
            tuple([1.0] + [0.0] * (dim - 1))
        if Y is None:
            def Y(x, _d=dim):
                return [1.0] + [0.0] * (_d - 1)
        self.Y = Y
        self.seed = [float(s) for s in (seed if seed is not None
                                        else [0.0] * dim)]
        self.tol_rank = tol_rank
        self.name = name
        self.gamma, self.omega = split_forms(Omega, self.eta, Y)

        ss = np.random.SeedSequence(rng_seed)
        kids = ss.spawn(3)
        self.rng_seed = rng_seed
        self._rng_zero = np.random.default_rng(kids[0])
        self._rng_samples = np.random.default_rng(kids[1])
        self._rng_multistart = np.random.default_rng(kids[2])
        self.zero_cloud = self._cloud(self._rng_zero, ZERO_CLOUD_COUNT,
                                      ZERO_CLOUD_SIGMA)
        self.base_cloud = self._cloud(self._rng_samples, SAMPLE_COUNT,
                                      SAMPLE_SIGMA)
        self._validate()

    def _cloud(self, rng, count, sigma):
        pts = [list(self.seed)]
        for _ in range(count - 1):
            pts.append(list(np.asarray(self.seed)
                            + rng.normal(0.0, sigma, self.dim)))
        return pts

    def _validate(self):
        x = self.seed
        if abs(pre.pair(self.eta, self.Y(x)) - 1.0) > 1e-9:
            raise ValueError("transport field fails eta(Y) = 1 at seed")
        g = self.gamma(x)
        w = self.omega(x)
        Yx = self.Y(x)
        scale = max(1.0, max(abs(c) for row in self.Omega(x) for c in row))
        if abs(pre.pair(g, Yx)) > 1e-9 * scale:
            raise ValueError("split violates i(Y) gamma = 0")
        if max(abs(c) for c in pre.contract(Yx, w)) > 1e-9 * scale:
            raise ValueError("split violates i(Y) omega = 0")
        worst = 0.0
        for x in self.base_cloud[:3]:
            worst = max(worst, self._closedness_residual(x))
        if worst > CLOSED_TOL * scale:
            raise ValueError("Omega fails the closedness check "
                             "(residual %.3e)" % worst)

    def _closedness_residual(self, x, h=1e-5):
        d = self.dim
        partials = []
        for k in range(d):
            xp = list(x)
            xm = list(x)
            xp[k] += h
            xm[k] -= h
            Mp = np.asarray(self.Omega(xp), dtype=float)
            Mm = np.asarray(self.Omega(xm), dtype=float)
            partials.append((Mp - Mm) / (2.0 * h))
        worst = 0.0
        for i in range(d):
            for j in range(i + 1, d):
                for k in range(j + 1, d):
                    c = (partials[i][j][k] + partials[j][k][i]
                         + partials[k][i][j])
                    worst = max(worst, abs(float(c)))
        return worst

    def stacked_matrix(self, x):
        """(dim+1) x dim matrix of the system (*): omega-transpose rows
        then the eta row."""
        w = self.omega(x)
        d = self.dim
        rows = [[w[i][j] for i in range(d)] for j in range(d)]
        rows.append(list(self.eta))
        return rows

    def stacked_rhs(self, x):
        g = self.gamma(x)
        return [-c for c in g] + [1.0]


class PointSolution:
    def __init__(self, X, nullspace, residual):
        self.X = X
        self.nullspace = nullspace
        self.residual = residual


def solve_pointwise(problem, x, tol=SOLVE_TOL):
    """Minimal-norm solution of (*) at one float point.

    Returns the solution plus the solution freedom ker omega (int) ker
    eta; raises NoSolutionAtPoint when the least-squares residual shows
    the system inconsistent there.
    """
    A = np.asarray(problem.stacked_matrix(x), dtype=float)
    b = np.asarray(problem.stacked_rhs(x), dtype=float)
    X, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
    res = float(np.max(np.abs(A @ X - b)))
    scale = max(1.0, float(np.max(np.abs(A))), float(np.max(np.abs(b))))
    if res > tol * scale:
        raise NoSolutionAtPoint(res)
    null = pre.svd_nullspace(A, problem.tol_rank)
    return PointSolution(X, null, res)


# ---------------------------------------------------------------------------
# Gauss-Newton projection onto a constraint zero set


def _constraint_jacobian(fields, x):
    rows = []
    for f in fields:
        rows.append(f.gradient(list(x)))
    return np.asarray(rows, dtype=float)


def gauss_newton_project(fields, x0, max_iter=50, tol=PROJ_TOL,
                         damping=0.5, max_halvings=25):
    """Project a point onto the joint zero set of the fields.

    Full Gauss-Newton steps with halving line search; returns None when
    the iteration fails to reach the tolerance.
    """
    if not fields:
        return np.asarray(x0, dtype=float)
    x = np.asarray(x0, dtype=float)
    vals = np.asarray([f(list(x)) for f in fields], dtype=float)
    norm = float(np.max(np.abs(vals)))
    for _ in range(max_iter):
        if norm <= tol:
            return x
        J = _constraint_jacobian(fields, x)
        step, _, _, _ = np.linalg.lstsq(J, -vals, rcond=None)
        lam = 1.0
        for _ in range(max_halvings):
            xn = x + lam * step
            try:
                vn = np.asarray([f(list(xn)) for f in fields], dtype=float)
            except (ec.DomainError, pre.LinAlgDegeneracy):
                lam *= damping
                continue
            nn = float(np.max(np.abs(vn)))
            if nn < norm:
                x, vals, norm = xn, vn, nn
                break
            lam *= damping
        else:
            return None
    return x if norm <= tol else None


def _project_multistart(fields, x0, rng, tries=20, sigma=SAMPLE_SIGMA):
    x = gauss_newton_project(fields, x0)
    if x is not None:
        return x
    for _ in range(tries - 1):
        start = np.asarray(x0) + rng.normal(0.0, sigma, len(x0))
        x = gauss_newton_project(fields, start)
        if x is not None:
            return x
    return None


# ---------------------------------------------------------------------------
# chart-wide solution and kernel fields


class _ParticularSolution:
    """Frozen-pivot particular solution field of the system (*).

    Pivots are chosen at an on-manifold anchor where (*) is consistent;
    free components are set to zero, making the field the normalized
    particular solution used for derivative-generated constraints.
    """

    def __init__(self, problem, anchor, tol):
        A0 = np.asarray(problem.stacked_matrix(anchor), dtype=float)
        r = pre.svd_rank(A0, tol)
        self.rows, self.cols = pre.pivot_rows_cols(A0, r)
        self.free = [j for j in range(problem.dim) if j not in self.cols]
        self.problem = problem
        self.rank = r

    def __call__(self, x):
        A = self.problem.stacked_matrix(x)
        b = self.problem.stacked_rhs(x)
        sub = [[A[i][j] for j in self.cols] for i in self.rows]
        rhs = [b[i] for i in self.rows]
        z = pre.gauss_solve(sub, rhs)
        X = [0.0] * self.problem.dim
        for idx, j in enumerate(self.cols):
            X[j] = z[idx]
        return X

    def residual(self, x):
        A = np.asarray(self.problem.stacked_matrix(x), dtype=float)
        b = np.asarray(self.problem.stacked_rhs(x), dtype=float)
        X = np.asarray([pre.core(c) for c in self(x)], dtype=float)
        return float(np.max(np.abs(A @ X - b)))


class _KernelFields:
    """Frozen-pivot basis fields of ker omega (int) ker eta."""

    def __init__(self, problem, tol):
        self._fpk = pre.FrozenPivotKernel(problem.stacked_matrix,
                                          problem.seed, tol=tol)
        self.count = self._fpk.nullity

    def __call__(self, x):
        return self._fpk.basis(x)

    def field(self, j):
        def Z(x, _j=j):
            return self._fpk.basis(x)[_j]
        return Z


# ---------------------------------------------------------------------------
# constraint generations


class ConstraintLevel:
    """One generation: the new constraint fields it contributed, rank
    bookkeeping at the level's samples, and verification residuals."""

    def __init__(self, generation, new_fields, dropped, samples,
                 added_rank, cumulative_rank, dynamics_residual,
                 crosscheck=None):
        self.generation = generation
        self.new_fields = new_fields
        self.dropped = dropped
        self.samples = samples
        self.added_rank = added_rank
        self.cumulative_rank = cumulative_rank
        self.dynamics_residual = dynamics_residual
        self.crosscheck = crosscheck

    @property
    def descriptions(self):
        return [f.name for f in self.new_fields]


def _drop_identically_zero(problem, fields):
    kept, dropped = [], []
    for f in fields:
        worst = 0.0
        for x in problem.zero_cloud:
            try:
                worst = max(worst, abs(pre.core(f(x))))
            except (ec.DomainError, pre.LinAlgDegeneracy):
                worst = np.inf
                break
            if worst > ZERO_DROP_TOL:
                break
        if worst <= ZERO_DROP_TOL:
            dropped.append(f)
        else:
            kept.append(f)
    return kept, dropped


def first_generation(problem, kernel=None, tol=None):
    """Constraints <eta - gamma, Z_j> over the kernel basis fields,
    with identically-zero candidates dropped."""
    tol = tol if tol is not None else problem.tol_rank
    if kernel is None:
        kernel = _KernelFields(problem, tol)
    fields = []
    for j in range(kernel.count):
        Zj = kernel.field(j)

        def chi(x, _Z=Zj, _p=problem):
            Z = _Z(x)
            g = _p.gamma(x)
            return pre.pair(_p.eta, Z) - pre.pair(g, Z)

        fields.append(ec.ScalarField(chi, problem.dim,
                                     name="chi[1][%d]" % j))
    kept, dropped = _drop_identically_zero(problem, fields)
    return kept, dropped, kernel


def next_generation(problem, current_fields, X_fn, generation,
                    cumulative=None, samples=None, kernel=None, tol=None,
                    crosscheck=True):
    """Non-absorbable consistency conditions of the cumulative set.

    The drift L_X chi of a constraint along the particular solution can
    be cancelled by re-choosing the solution inside the kernel exactly
    when it lies in the column space of M[j][k] = L_{Z_k} chi_j, so only
    the left-null combinations of M survive as new constraints; the
    absorbable rows instead determine kernel coefficients at the final
    stability solve.  With an empty kernel this reduces to the plain
    derivatives L_X chi.

    Returns (kept, dropped, crosscheck_record).
    """
    tol = tol if tol is not None else problem.tol_rank
    cumulative = list(cumulative) if cumulative is not None else \
        list(current_fields)
    anchor = list(samples[0]) if samples else list(problem.seed)

    lies = []
    for f in cumulative:
        def lx(x, _f=f, _X=X_fn):
            return _f.eval_dual(x, _X(x))[1]
        lies.append(ec.ScalarField(lx, problem.dim,
                                   name="L_X(%s)" % f.name))

    kernel_fields = [kernel.field(j) for j in range(kernel.count)] \
        if kernel is not None else []
    if kernel_fields:
        M0 = np.asarray(
            [[f.eval_dual(anchor, [pre.core(c) for c in Z(anchor)])[1]
              for Z in kernel_fields] for f in cumulative], dtype=float)
        combos = pre.svd_nullspace(M0.T, max(tol, 1e-8))
        candidates = []
        for g in range(combos.shape[1]):
            u = combos[:, g]

            def cand(x, _u=u, _l=lies):
                val = 0.0
                for ci, li in zip(_u, _l):
                    val = val + ci * li(x)
                return val

            candidates.append(ec.ScalarField(
                cand, problem.dim,
                name="consist[%d][%d]" % (generation, g)))
    else:
        candidates = lies
    kept, dropped = _drop_identically_zero(problem, candidates)

    record = None
    if crosscheck:
        record = _crosscheck_generation(problem, cumulative, kept,
                                        samples or [problem.seed], tol)
    return kept, dropped, record


def _complement_constraint_values(problem, cumulative, x, tol):
    """Values <eta - gamma, Z> for Z spanning the orthogonal complement
    of the cumulative zero set's tangent at a float point."""
    x = list(x)
    d = problem.dim
    if cumulative:
        J = _constraint_jacobian(cumulative, x)
        tangent = pre.svd_nullspace(J, tol)
    else:
        tangent = np.eye(d)
    p = pre.PrecoPoint(problem.eta,
                       np.asarray([[pre.core(c) for c in row]
                                   for row in problem.omega(x)]))
    K = pre.Subspace(list(tangent.T), ambient_dim=d)
    perp = pre.orthogonal_complement(p, K, tol)
    g = np.asarray(problem.gamma(x), dtype=float)
    em = np.asarray(problem.eta, dtype=float) - g
    return [float(em @ perp.basis[:, k]) for k in range(perp.dim)], perp


def _crosscheck_generation(problem, cumulative, new_fields, samples, tol):
    """Compare derivative-generated and complement-generated constraints.

    At points projected onto the full new zero set both families must
    vanish, and their Jacobian stacks over the cumulative set must agree
    in rank at the samples.
    """
    all_fields = cumulative + new_fields
    rng = np.random.default_rng(problem.rng_seed + 17)
    record = {"points": 0, "max_new_value": 0.0, "max_complement": 0.0,
              "rank_agree": True}
    for x0 in samples[:5]:
        x = _project_multistart(all_fields, x0, rng, tries=5)
        if x is None:
            continue
        comp_vals, perp = _complement_constraint_values(
            problem, cumulative, x, tol)
        worst_comp = max((abs(v) for v in comp_vals), default=0.0)
        worst_new = max((abs(pre.core(f(list(x)))) for f in new_fields),
                        default=0.0)
        record["points"] += 1
        record["max_new_value"] = max(record["max_new_value"], worst_new)
        record["max_complement"] = max(record["max_complement"], worst_comp)
        if worst_comp <= 1e-8 and worst_new > 1e-6:
            raise InconsistentCharacterizations(
                "derivative constraint %.3e at a complement-clean point"
                % worst_new)
    if cumulative and new_fields and samples:
        x = list(samples[0])
        Jc = _constraint_jacobian(cumulative, x)
        Jn = _constraint_jacobian(cumulative + new_fields, x)
        record["rank_b"] = pre.svd_rank(Jn, tol)
        record["rank_cumulative"] = pre.svd_rank(Jc, tol)
    return record


# ---------------------------------------------------------------------------
# stability of the final dynamics


class DynamicsSolution:
    """Final dynamics on the terminal constraint set.

    X_fn = particular + determined kernel combination; gauge_fields span
    the kernel directions left free by tangency.
    """

    def __init__(self, X_fn, particular, kernel_fields, gauge_fields,
                 determined_count, tangency_residual):
        self.X_fn = X_fn
        self.particular = particular
        self.kernel_fields = kernel_fields
        self.gauge_fields = gauge_fields
        self.determined_count = determined_count
        self.tangency_residual = tangency_residual

    def __call__(self, x):
        return self.X_fn(x)


def stability_solve(problem, cumulative, kernel, anchor, samples=None,
                    tol=None):
    """Fix kernel coefficients so the solution is tangent to the final
    constraint set.

    For cumulative constraints chi_j, tangency reads
    0 = L_{X0} chi_j + f^k L_{Z_k} chi_j.  The linear system in f is
    solved with pivots frozen at the anchor; kernel combinations
    annihilated by the system stay free (gauge).
    """
    tol = tol if tol is not None else problem.tol_rank
    particular = _ParticularSolution(problem, anchor, tol)
    kernel_fields = [kernel.field(j) for j in range(kernel.count)]
    if not cumulative or kernel.count == 0:
        # no tangency conditions to impose: every kernel direction is gauge
        res = _tangency_residual(problem, cumulative, particular,
                                 samples or [anchor])
        return DynamicsSolution(particular, particular, kernel_fields,
                                kernel_fields, 0, res)

    def stab_matrix(x):
        Zs = kernel(x)
        return [[f.eval_dual(x, Z)[1] for Z in Zs] for f in cumulative]

    def stab_rhs(x):
        Xp = particular(x)
        return [f.eval_dual(x, Xp)[1] for f in cumulative]

    M0 = np.asarray(stab_matrix(list(anchor)), dtype=float)
    rank = pre.svd_rank(M0, max(tol, 1e-8))
    rows, cols = pre.pivot_rows_cols(M0, rank)
    gauge_combos = pre.svd_nullspace(M0, max(tol, 1e-8))

    def f_coeffs(x):
        M = stab_matrix(x)
        b = stab_rhs(x)
        if rank == 0:
            return [0.0] * kernel.count
        sub = [[M[i][j] for j in cols] for i in rows]
        rhs = [-b[i] for i in rows]
        try:
            z = pre.gauss_solve(sub, rhs)
        except pre.LinAlgDegeneracy as exc:
            raise SingularStabilityMatrix(str(exc)) from None
        f = [0.0] * kernel.count
        for idx, j in enumerate(cols):
            f[j] = z[idx]
        return f

    def X_final(x):
        X = particular(x)
        f = f_coeffs(x)
        Zs = kernel(x)
        out = list(X)
        for k in range(kernel.count):
            for i in range(problem.dim):
                out[i] = out[i] + f[k] * Zs[k][i]
        return out

    gauge_fields = []
    for g in range(gauge_combos.shape[1]):
        combo = gauge_combos[:, g]

        def G(x, _c=combo, _k=kernel):
            Zs = _k(x)
            return [sum(_c[j] * Zs[j][i] for j in range(len(Zs)))
                    for i in range(problem.dim)]

        gauge_fields.append(G)

    res = _tangency_residual(problem, cumulative,
                             X_final, samples or [anchor])
    return DynamicsSolution(X_final, particular, kernel_fields,
                            gauge_fields, rank, res)


def _tangency_residual(problem, cumulative, X_fn, samples):
    def at_point(x):
        Xx = [pre.core(c) for c in X_fn(list(x))]
        return max((abs(f.eval_dual(list(x), Xx)[1]) for f in cumulative),
                   default=0.0)

    return max(_pmap(at_point, samples), default=0.0)


# ---------------------------------------------------------------------------
# the full run


class AlgorithmReport:
    def __init__(self, problem, levels, termination, solution,
                 constraints, samples, warnings):
        self.problem = problem
        self.levels = levels
        self.termination = termination
        self.solution = solution
        self.constraints = constraints
        self.samples = samples
        self.warnings = warnings

    @property
    def generations(self):
        return len(self.levels)

    @property
    def cumulative_rank(self):
        return self.levels[-1].cumulative_rank if self.levels else 0


def _rank_at_samples(fields, samples, tol):
    if not fields:
        return 0
    ranks = set(_pmap(
        lambda x: pre.svd_rank(_constraint_jacobian(fields, x), tol),
        samples))
    if len(ranks) != 1:
        raise RankDrift("constraint Jacobian rank varies over samples: %s"
                        % sorted(ranks))
    return ranks.pop()


def run(problem, max_generations=None, crosscheck=True):
    """Run the constraint algorithm to termination.

    Termination states: 'final' (stable set with tangent dynamics),
    'empty' (constraints infeasible), 'zero_dimensional' (constraints
    exhaust the chart), 'max_generations'.
    """
    tol = problem.tol_rank
    if max_generations is None:
        max_generations = problem.dim + 1
    warnings = []
    levels = []
    kernel = _KernelFields(problem, tol)
    kept, dropped, kernel = first_generation(problem, kernel, tol)
    cumulative = []
    samples = [list(x) for x in problem.base_cloud]
    generation = 1
    current = kept
    termination = None

    while True:
        if not current:
            # nothing new survives the zero test: the set has stabilized
            termination = "final"
            break
        new_cumulative = cumulative + current
        projected = []
        for x0 in samples:
            x = _project_multistart(new_cumulative, x0,
                                    problem._rng_multistart)
            if x is not None:
                projected.append(list(x))
        if not projected:
            termination = "empty"
            levels.append(ConstraintLevel(
                generation, current, dropped, [], 0,
                len(new_cumulative), np.inf))
            break
        prev_rank = _rank_at_samples(cumulative, projected, tol) \
            if cumulative else 0
        new_rank = _rank_at_samples(new_cumulative, projected, tol)
        added = new_rank - prev_rank

        anchor = projected[0]
        particular = _ParticularSolution(problem, anchor, tol)
        dyn_res = max(_pmap(particular.residual, projected))

        record = None
        if added == 0:
            # two consecutive cumulative ranks agree: stable set reached
            levels.append(ConstraintLevel(generation, [], current + dropped,
                                          projected, 0, prev_rank, dyn_res,
                                          record))
            termination = "final"
            samples = projected
            break

        cumulative = new_cumulative
        samples = projected
        if new_rank >= problem.dim:
            levels.append(ConstraintLevel(generation, current, dropped,
                                          projected, added, new_rank,
                                          dyn_res, record))
            termination = "zero_dimensional"
            break

        nxt, nxt_dropped, record = next_generation(
            problem, current, particular, generation + 1,
            cumulative=cumulative, samples=projected, kernel=kernel,
            tol=tol, crosscheck=crosscheck)
        levels.append(ConstraintLevel(generation, current, dropped,
                                      projected, added, new_rank, dyn_res,
                                      record))
        current, dropped = nxt, nxt_dropped
        generation += 1
        if generation > max_generations:
            termination = "max_generations"
            warnings.append("generation limit reached before stabilization")
            break

    solution = None
    if termination == "final":
        anchor = samples[0] if samples else list(problem.seed)
        solution = stability_solve(problem, cumulative, kernel, anchor,
                                   samples, tol)
        if solution.tangency_residual > RESIDUAL_TOL * 10:
            warnings.append("final tangency residual %.3e"
                            % solution.tangency_residual)
    elif termination == "zero_dimensional":
        warnings.append("constraints exhaust the chart dimension; no "
                        "dynamics on a zero-dimensional set")

    return AlgorithmReport(problem, levels, termination, solution,
                           cumulative, samples, warnings)
