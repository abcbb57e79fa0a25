"""Second-order dynamics: existence of solutions whose integral curves
are holonomic (velocities equal to the time derivatives of positions).

The search runs on the velocity chart with the second-order transport
D = d/dt + v d/dq.  Writing a candidate solution as X = D + V with V
vertical, the dynamics equation i(X) Omega_L = 0 becomes a linear
system for V whose solvability conditions are scalar constraints: one
for every kernel direction of the velocity Hessian.  Their basis fields
are

    M_j = w^rho d/dq^rho - D(w^rho) d/dv^rho,

with w a Hessian kernel vector; the first-generation constraints are
psi_j = <i(D) Omega_L, M_j>.  Later generations collect the parts of
the time derivative of the constraint stack that no vertical kernel
adjustment can absorb; the absorption solve is the same one that fixes
the undetermined coefficients of the final field.

A separate entry point builds, from any solution field of the dynamics
problem, the submanifold on which the field can be corrected by kernel
verticals to a second-order field, cut out by xi_j = A^{f_j} - v^{f_j}
with A the position components of the field and f_j its free Hessian
columns.
"""

import numpy as np

from . import expr_core as ec
from . import precosym as pre
from . import jet_geometry as jg
from . import constraint_engine as eng

__all__ = [
    "NotProjectable", "ELReport", "euler_lagrange_algorithm",
    "SODESubmanifold", "sode_submanifold", "projectability_test",
    "fl_generation_check",
]

PROJ_TOL = 1e-8


class NotProjectable(ValueError):
    """The position components of the candidate field vary along the
    Hessian kernel fibers, so no second-order correction exists."""


def _lie(field, vec_fn):
    """Scalar field x -> dF(X(x)), smooth in x and dual-safe."""

    def g(x, _f=field, _v=vec_fn):
        return _f.eval_dual(x, _v(x))[1]

    return ec.ScalarField(g, field.arity, name="L[%s]" % field.name)


def _embed_vertical(system, w):
    u = [0.0] * system.dim
    for r in range(system.n):
        u[1 + system.n + r] = w[r]
    return u


class _MixedBasis:
    """The non-vertical solvability test fields M_j."""

    def __init__(self, system, kfl, D):
        self.system = system
        self.kfl = kfl
        self.D = D

    def field(self, j):
        n = self.system.n

        def M(x, _j=j):
            w = self.kfl.vertical(x)[_j]
            Dx = self.D(x)
            out = [0.0] * self.system.dim
            for r in range(n):
                out[1 + r] = w[r]
            for r in range(n):
                comp = lambda y, _r=r: self.kfl.vertical(y)[_j][_r]
                dw = ec.eval_dual(comp, x, Dx)[1]
                out[1 + n + r] = -dw
            return out

        return M


class _VerticalParticular:
    """Frozen-pivot vertical part V of X = D + V with i(X) Omega = 0.

    Free vertical components are zero, which normalizes the field used
    to generate the next constraint generation.
    """

    def __init__(self, system, forms, D, anchor, tol):
        self.system = system
        self.forms = forms
        self.D = D
        A0 = np.asarray(self._matrix(anchor), dtype=float)
        r = pre.svd_rank(A0, tol)
        self.rows, self.cols = pre.pivot_rows_cols(A0, r)
        self.rank = r

    def _matrix(self, x):
        n = self.system.n
        W = self.forms.omega(x)
        return [[W[1 + n + rho][j] for rho in range(n)]
                for j in range(self.system.dim)]

    def _rhs(self, x):
        g = pre.contract(self.D(x), self.forms.omega(x))
        return [-c for c in g]

    def vertical(self, x):
        n = self.system.n
        A = self._matrix(x)
        b = self._rhs(x)
        if self.rank == 0:
            return [0.0] * n
        sub = [[A[i][j] for j in self.cols] for i in self.rows]
        z = pre.gauss_solve(sub, [b[i] for i in self.rows])
        V = [0.0] * n
        for k, j in enumerate(self.cols):
            V[j] = z[k]
        return V

    def __call__(self, x):
        Dx = self.D(x)
        V = self.vertical(x)
        out = list(Dx)
        for r in range(self.system.n):
            out[1 + self.system.n + r] = out[1 + self.system.n + r] + V[r]
        return out

    def residual(self, x):
        A = np.asarray(self._matrix(x), dtype=float)
        b = np.asarray(self._rhs(x), dtype=float)
        V = np.asarray([pre.core(c) for c in self.vertical(x)], dtype=float)
        return float(np.max(np.abs(A @ V - b))) if A.size else 0.0


class ELReport:
    """Tower of second-order constraints with the final corrected field.

    levels mirror the general algorithm's bookkeeping; X_final is the
    absorbed field D + V + f W, gauge_fields the kernel verticals left
    free by the absorption.
    """

    def __init__(self, system, levels, termination, constraints, X_final,
                 gauge_fields, samples, tangency_residual, warnings,
                 projectability=None):
        self.system = system
        self.levels = levels
        self.termination = termination
        self.constraints = constraints
        self.X_final = X_final
        self.gauge_fields = gauge_fields
        self.samples = samples
        self.tangency_residual = tangency_residual
        self.warnings = warnings
        self.projectability = projectability or {}

    @property
    def generations(self):
        return [lv for lv in self.levels if lv.new_fields]

    def tags(self):
        """dynamical for fiberwise-constant constraints, sode otherwise."""
        return {name: ("dynamical" if verdict == "projectable" else "sode")
                for name, verdict in self.projectability.items()}


def _zero_drop(fields, cloud, tol=eng.ZERO_DROP_TOL):
    kept, dropped = [], []
    for f in fields:
        worst = 0.0
        for x in cloud:
            try:
                worst = max(worst, abs(pre.core(f(list(x)))))
            except (ec.DomainError, pre.LinAlgDegeneracy):
                worst = np.inf
                break
            if worst > tol:
                break
        (dropped if worst <= tol else kept).append(f)
    return kept, dropped


def _rank_at(fields, samples, tol):
    if not fields:
        return 0
    ranks = {pre.svd_rank(np.asarray([f.gradient(list(x)) for f in fields],
                                     dtype=float), tol)
             for x in samples}
    if len(ranks) != 1:
        raise eng.RankDrift(
            "constraint Jacobian rank varies over samples: %s"
            % sorted(ranks))
    return ranks.pop()


def euler_lagrange_algorithm(system, rng_seed=0, tol=pre.TOL_RANK,
                             max_generations=None):
    """Run the second-order constraint tower to termination."""
    forms = jg.build_forms(system)
    kfl = jg.ker_fl_basis(system, tol=tol)
    D = jg.second_order_connection(system)
    mixed = _MixedBasis(system, kfl, D)
    dim = system.dim
    if max_generations is None:
        max_generations = dim + 1

    ss = np.random.SeedSequence(rng_seed)
    kids = ss.spawn(3)
    rng_zero = np.random.default_rng(kids[0])
    rng_samples = np.random.default_rng(kids[1])
    rng_multistart = np.random.default_rng(kids[2])

    def cloud(rng, count, sigma):
        pts = [list(system.seed)]
        for _ in range(count - 1):
            pts.append(list(np.asarray(system.seed)
                            + rng.normal(0.0, sigma, dim)))
        return pts

    zero_cloud = cloud(rng_zero, eng.ZERO_CLOUD_COUNT, eng.ZERO_CLOUD_SIGMA)
    samples = cloud(rng_samples, eng.SAMPLE_COUNT, eng.SAMPLE_SIGMA)

    def gamma_D(x):
        return pre.contract(D(x), forms.omega(x))

    psi = []
    for j in range(kfl.m):
        Mj = mixed.field(j)

        def p(x, _M=Mj):
            return pre.pair(gamma_D(x), _M(x))

        psi.append(ec.ScalarField(p, dim, name="psi[1][%d]" % j))
    current, dropped = _zero_drop(psi, zero_cloud)

    kernel_fields = [
        (lambda x, _j=j: _embed_vertical(system, kfl.vertical(x)[_j]))
        for j in range(kfl.m)
    ]

    levels, warnings = [], []
    cumulative = []
    generation = 1
    termination = None
    X_f = None

    def absorption(cum, X_fn, anchor):
        """Tangency solve over the kernel verticals; returns the left
        null combos (unabsorbable row combinations) and the frozen
        coefficient solver."""
        if not cum or not kernel_fields:
            return np.zeros((len(cum), 0)), None
        M0 = np.asarray([[_lie(f, Z)(list(anchor)) for Z in kernel_fields]
                         for f in cum], dtype=float)
        r = pre.svd_rank(M0, max(tol, 1e-8))
        left_null = pre.svd_nullspace(M0.T, max(tol, 1e-8))
        rows, cols = (pre.pivot_rows_cols(M0, r) if r else ([], []))

        def coeffs(x):
            if not rows:
                return [0.0] * len(kernel_fields)
            M = [[_lie(cum[i], kernel_fields[j])(x) for j in cols]
                 for i in rows]
            b = [_lie(cum[i], X_fn)(x) for i in rows]
            z = pre.gauss_solve(M, [-bi for bi in b])
            f = [0.0] * len(kernel_fields)
            for k, j in enumerate(cols):
                f[j] = z[k]
            return f

        return left_null, coeffs

    while True:
        if not current:
            termination = "final"
            break
        new_cumulative = cumulative + current
        projected = []
        for x0 in samples:
            x = eng._project_multistart(new_cumulative, x0, rng_multistart)
            if x is not None:
                projected.append(list(x))
        if not projected:
            termination = "empty"
            levels.append(eng.ConstraintLevel(
                generation, current, dropped, [], 0,
                len(new_cumulative), np.inf))
            break
        prev_rank = _rank_at(cumulative, projected, tol)
        new_rank = _rank_at(new_cumulative, projected, tol)
        added = new_rank - prev_rank
        anchor = projected[0]
        X_f = _VerticalParticular(system, forms, D, anchor, tol)
        dyn_res = max(X_f.residual(x) for x in projected)

        if added == 0:
            levels.append(eng.ConstraintLevel(
                generation, [], current + dropped, projected, 0,
                prev_rank, dyn_res))
            termination = "final"
            samples = projected
            break
        cumulative = new_cumulative
        samples = projected
        levels.append(eng.ConstraintLevel(generation, current, dropped,
                                          projected, added, new_rank,
                                          dyn_res))
        if new_rank >= dim:
            termination = "zero_dimensional"
            break

        left_null, _ = absorption(cumulative, X_f, anchor)
        candidates = []
        lies = [_lie(f, X_f) for f in cumulative]
        for g in range(left_null.shape[1]):
            combo = left_null[:, g]

            def cand(x, _c=combo, _l=lies):
                val = 0.0
                for ci, li in zip(_c, _l):
                    val = val + ci * li(x)
                return val

            candidates.append(ec.ScalarField(
                cand, dim, name="psi[%d][%d]" % (generation + 1, g)))
        current, dropped = _zero_drop(candidates, zero_cloud)
        generation += 1
        if generation > max_generations:
            termination = "max_generations"
            warnings.append("generation limit reached before stabilization")
            break

    X_final, gauge, tangency = None, list(kernel_fields), 0.0
    if termination == "final":
        anchor = samples[0] if samples else list(system.seed)
        if X_f is None:
            X_f = _VerticalParticular(system, forms, D, anchor, tol)
        left_null, coeffs = absorption(cumulative, X_f, anchor)
        if coeffs is None:
            X_final = X_f
        else:
            def X_final(x, _Xf=X_f, _c=coeffs):
                out = list(_Xf(x))
                f = _c(x)
                for k, Z in enumerate(kernel_fields):
                    Zx = Z(x)
                    for i in range(dim):
                        out[i] = out[i] + f[k] * Zx[i]
                return out

            M0 = np.asarray([[_lie(f, Z)(list(anchor))
                              for Z in kernel_fields] for f in cumulative],
                            dtype=float)
            combos = pre.svd_nullspace(M0, max(tol, 1e-8))
            gauge = []
            for g in range(combos.shape[1]):
                cvec = combos[:, g]

                def G(x, _c=cvec):
                    out = [0.0] * dim
                    for k, Z in enumerate(kernel_fields):
                        Zx = Z(x)
                        for i in range(dim):
                            out[i] = out[i] + _c[k] * Zx[i]
                    return out

                gauge.append(G)
        for x in samples:
            Xx = [pre.core(c) for c in X_final(list(x))]
            for f in cumulative:
                tangency = max(tangency,
                               abs(f.eval_dual(list(x), Xx)[1]))
        if tangency > eng.RESIDUAL_TOL * 10:
            warnings.append("final tangency residual %.3e" % tangency)

    projectability = {}
    for lv in levels:
        pts = lv.samples if lv.samples else [list(system.seed)]
        for f in lv.new_fields:
            projectability[f.name] = _fiber_verdict(system, kfl, f, pts,
                                                    PROJ_TOL)

    return ELReport(system, levels, termination, cumulative, X_final,
                    gauge, samples, tangency, warnings, projectability)


def _fiber_verdict(system, kfl, constraint, points, tol):
    worst = 0.0
    for x in points:
        for j in range(kfl.m):
            W = _embed_vertical(system, kfl.vertical(list(x))[j])
            worst = max(worst, abs(constraint.eval_dual(list(x), W)[1]))
    return "projectable" if worst <= tol else "not_projectable"


def projectability_test(constraint, system, kfl=None, samples=None,
                        tol=PROJ_TOL, rng_seed=7):
    """Fiberwise constancy of a constraint on its own zero set.

    Samples are drawn near the system seed and projected onto the zero
    set of the constraint; the verdict is "projectable" when every
    Hessian kernel direction annihilates the constraint there.
    """
    if kfl is None:
        kfl = jg.ker_fl_basis(system)
    if kfl.m == 0:
        return "projectable"
    if samples is None:
        rng = np.random.default_rng(rng_seed)
        samples = []
        for _ in range(20):
            x0 = list(np.asarray(system.seed)
                      + rng.normal(0.0, 0.5, system.dim))
            x = eng.gauss_newton_project([constraint], x0)
            if x is not None:
                samples.append(list(x))
        if not samples:
            raise ValueError("could not reach the zero set of %s"
                             % constraint.name)
    return _fiber_verdict(system, kfl, constraint, samples, tol)


# ---------------------------------------------------------------------------
# second-order submanifold of a given solution field


class SODESubmanifold:
    """Cut functions and corrected field of the second-order locus."""

    def __init__(self, system, kfl, xi, field, base_field):
        self.system = system
        self.kfl = kfl
        self.xi = xi
        self.field = field
        self.base_field = base_field

    def pairing_defect(self, points):
        """max |d xi_j (W_i) + delta_ij| over the points."""
        worst = 0.0
        for x in points:
            for i in range(self.kfl.m):
                W = _embed_vertical(self.system,
                                    self.kfl.vertical(list(x))[i])
                for j, f in enumerate(self.xi):
                    val = f.eval_dual(list(x), W)[1]
                    worst = max(worst,
                                abs(val + (1.0 if i == j else 0.0)))
        return worst


def sode_submanifold(system, X_fn, kfl=None, samples=None, tol=PROJ_TOL):
    """Second-order locus of a dynamics solution field.

    The position components A^rho of the field must be constant along
    the Hessian kernel fibers (checked on samples); the locus is cut by
    xi_j = A^{f_j} - v^{f_j} over the free columns f_j, and the
    corrected field X + (L_X xi_j) W_j is tangent there and second
    order on it.
    """
    if kfl is None:
        kfl = jg.ker_fl_basis(system)
    n = system.n
    if samples is None:
        rng = np.random.default_rng(77)
        samples = [list(system.seed)]
        for _ in range(19):
            samples.append(list(np.asarray(system.seed)
                                + rng.normal(0.0, 0.5, system.dim)))

    drift = 0.0
    for x in samples:
        for j in range(kfl.m):
            W = _embed_vertical(system, kfl.vertical(list(x))[j])
            for rho in range(n):
                comp = lambda y, _r=rho: X_fn(y)[1 + _r]
                drift = max(drift, abs(ec.eval_dual(comp, list(x), W)[1]))
    if drift > tol:
        raise NotProjectable("position components drift %.3e along the "
                             "kernel fibers" % drift)

    xi = []
    for j, fj in enumerate(kfl.free_cols):
        def cut(x, _f=fj):
            return X_fn(x)[1 + _f] - x[1 + n + _f]

        xi.append(ec.ScalarField(cut, system.dim, name="xiS[%d]" % j))

    lies = [_lie(f, X_fn) for f in xi]

    def X_S(x):
        out = list(X_fn(x))
        for j in range(kfl.m):
            W = kfl.vertical(x)[j]
            lj = lies[j](x)
            for r in range(n):
                out[1 + n + r] = out[1 + n + r] + lj * W[r]
        return out

    return SODESubmanifold(system, kfl, xi, X_S, X_fn)


# ---------------------------------------------------------------------------
# image of the second-order locus under the fiber derivative


def fl_generation_check(el_report, analysis, tol=PROJ_TOL):
    """The fiber derivative must map each second-order constraint level
    into the matching momentum-side constraint level.

    Returns per-generation maxima of the momentum constraints evaluated
    on the image of the level samples.
    """
    chart = analysis.chart
    ham_levels = [lv for lv in analysis.report.levels if lv.new_fields]
    out = []
    ham_cum = []
    for i, lv in enumerate(el_report.generations):
        if i < len(ham_levels):
            ham_cum = ham_cum + list(ham_levels[i].new_fields)
        worst = 0.0
        for x in lv.samples:
            y = chart.intrinsic_of(chart.legendre(list(x)))
            for f in ham_cum:
                worst = max(worst, abs(pre.core(f(y))))
        out.append(worst)
    return {"per_generation": out,
            "ok": all(w <= tol for w in out)}
