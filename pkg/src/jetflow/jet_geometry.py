"""Velocity phase space of a time-dependent Lagrangian.

Chart convention throughout: coordinates (t, q1..qn, v1..vn) in that slot
order, eta = dt as a constant covector.  The Cartan 1-form of a
Lagrangian L(t, q, v) is

    theta_L = (dL/dv^r) dq^r - (v^r dL/dv^r - L) dt

and omega_L = -d theta_L.  Expanding the exterior derivative gives the
closed-form component blocks used here (H = v-Hessian of L, second
partials written as operators):

    omega_L[q_a, q_b] = d2L/dq^b dv^a - d2L/dq^a dv^b
    omega_L[q_b, v_a] = H[a, b]
    omega_L[v_a, t]   = sum_s v^s H[a, s]
    omega_L[q_a, t]   = sum_s v^s d2L/dq^a dv^s - dL/dq^a + d2L/dt dv^a

The fibre derivative (Legendre map) sends (t, q, v) to (t, q, p = dL/dv);
its kernel directions are vertical and controlled by the v-Hessian.
"""

import numpy as np

from . import expr_core as ec
from . import precosym as pre

__all__ = [
    "PivotDegeneracy", "LagrangianSystem", "LagrangianForms", "build_forms",
    "canonical_endomorphism", "is_sode", "legendre_map", "LegendreMap",
    "ker_fl_basis", "KerFLBasis", "second_order_connection",
    "time_connection",
]

RANK_SAMPLE_COUNT = 100
RANK_SAMPLE_SIGMA = 0.5


class PivotDegeneracy(ArithmeticError):
    """Frozen Hessian pivot block too ill-conditioned to trust."""


def _sample_cloud(seed_point, rng, count, sigma):
    pts = [list(seed_point)]
    for _ in range(count - 1):
        pts.append(list(np.asarray(seed_point)
                        + rng.normal(0.0, sigma, len(seed_point))))
    return pts


class LagrangianSystem:
    """A Lagrangian in closed form together with its chart and seed point.

    All first and second partials in (t, q, v) are built symbolically at
    construction.  The v-Hessian rank is classified at the seed and
    checked for constancy on a deterministic sample cloud; a varying rank
    is rejected because every frozen-pivot construction downstream
    assumes one rank branch.
    """

    def __init__(self, n, lagrangian, seed=None, rng_seed=0,
                 tol=pre.TOL_RANK):
        self.n = n
        self.table = ec.SymbolTable.lagrangian(n)
        if isinstance(lagrangian, str):
            self.L = ec.parse(lagrangian, self.table)
        else:
            self.L = lagrangian
        self.dim = 2 * n + 1
        if seed is None:
            seed = [0.0] * self.dim
        self.seed = [float(s) for s in seed]
        if len(self.seed) != self.dim:
            raise ValueError("seed needs %d coordinates" % self.dim)
        self.rng_seed = rng_seed

        names = self.table.names
        self.qnames = names[1:n + 1]
        self.vnames = names[n + 1:]
        self.dLdv = [ec.diff(self.L, v) for v in self.vnames]
        self.dLdq = [ec.diff(self.L, q) for q in self.qnames]
        self.hess = [[ec.diff(self.dLdv[r], self.vnames[s])
                      for s in range(n)] for r in range(n)]
        self.d2Ldqdv = [[ec.diff(self.dLdv[r], self.qnames[s])
                         for s in range(n)] for r in range(n)]
        self.d2Ldtdv = [ec.diff(self.dLdv[r], "t") for r in range(n)]
        # energy v . dL/dv - L
        e = ec.neg(self.L)
        for r in range(n):
            e = ec.add(e, ec.mul(ec.Var(self.vnames[r], n + 1 + r),
                                 self.dLdv[r]))
        self.energy = e

        self.hessian_rank = pre.svd_rank(self.hessian_at(self.seed), tol)
        self.corank = n - self.hessian_rank
        self.regular = self.corank == 0
        self._check_rank_constancy(tol)

    def hessian_at(self, x):
        return [[self.hess[r][s].ev(x) for s in range(self.n)]
                for r in range(self.n)]

    def _check_rank_constancy(self, tol):
        rng = np.random.default_rng(self.rng_seed)
        seen = set()
        for x in _sample_cloud(self.seed, rng, RANK_SAMPLE_COUNT,
                               RANK_SAMPLE_SIGMA):
            seen.add(pre.svd_rank(self.hessian_at(x), tol))
        if seen != {self.hessian_rank}:
            raise ValueError(
                "v-Hessian rank is not constant near the seed "
                "(observed ranks %s); the analysis needs a single rank "
                "branch" % sorted(seen))

    def lagrangian_value(self, x):
        return self.L.ev(x)

    def __repr__(self):
        kind = "regular" if self.regular else "singular(corank=%d)" % \
            self.corank
        return "LagrangianSystem(n=%d, %s)" % (self.n, kind)


class LagrangianForms:
    """Cartan forms of a system: theta (degree 1), omega (degree 2), and
    the constant time covector eta = dt."""

    def __init__(self, system, theta, omega):
        self.system = system
        self.theta = theta
        self.omega = omega
        self.eta = tuple([1.0] + [0.0] * (system.dim - 1))


def build_forms(system):
    """Cartan 1- and 2-forms as evaluators over the (t, q, v) chart."""
    n = system.n
    dim = system.dim
    Z = ec.Const(0.0)

    theta_comp = [None] * dim
    # dt coefficient: L - v . dL/dv = -energy
    theta_comp[0] = ec.neg(system.energy)
    for r in range(n):
        theta_comp[1 + r] = system.dLdv[r]
    for r in range(n):
        theta_comp[1 + n + r] = Z

    omega_comp = [[Z for _ in range(dim)] for _ in range(dim)]

    def put(i, j, e):
        omega_comp[i][j] = e
        omega_comp[j][i] = ec.neg(e)

    for a in range(n):
        # q_a vs t
        acc = ec.sub(system.d2Ldtdv[a], system.dLdq[a])
        for s in range(n):
            acc = ec.add(acc, ec.mul(ec.Var(system.vnames[s], 1 + n + s),
                                     system.d2Ldqdv[s][a]))
        put(1 + a, 0, acc)
        # v_a vs t
        acc = Z
        for s in range(n):
            acc = ec.add(acc, ec.mul(ec.Var(system.vnames[s], 1 + n + s),
                                     system.hess[a][s]))
        put(1 + n + a, 0, acc)
        # v_a vs q_b
        for b in range(n):
            put(1 + n + a, 1 + b, ec.neg(system.hess[a][b]))
    for a in range(n):
        for b in range(a + 1, n):
            put(1 + a, 1 + b,
                ec.sub(system.d2Ldqdv[a][b], system.d2Ldqdv[b][a]))

    def theta_fn(x):
        return [c.ev(x) for c in theta_comp]

    def omega_fn(x):
        return [[omega_comp[i][j].ev(x) for j in range(dim)]
                for i in range(dim)]

    theta = ec.FormField(theta_fn, dim, 1, name="theta_L")
    omega = ec.FormField(omega_fn, dim, 2, name="omega_L")
    return LagrangianForms(system, theta, omega)


def canonical_endomorphism(system):
    """The vertical endomorphism J = (dq^r - v^r dt) (x) d/dv^r.

    Returns a callable (point, vector) -> vector; the image is vertical
    with v-components X^{q_r} - v^r X^t.
    """
    n = system.n

    def J(x, X):
        out = [0.0] * system.dim
        for r in range(n):
            out[1 + n + r] = X[1 + r] - x[1 + n + r] * X[0]
        return out

    return J


def is_sode(system, X_fn, points, tol=1e-9):
    """True when J(X) = 0 and dt(X) = 1 at every given point."""
    J = canonical_endomorphism(system)
    for x in points:
        X = X_fn(x)
        if abs(pre.core(X[0]) - 1.0) > tol:
            return False
        if any(abs(pre.core(c)) > tol for c in J(x, X)):
            return False
    return True


class LegendreMap:
    """Fibre derivative (t, q, v) -> (t, q, p = dL/dv), plus the extended
    version that prepends the time-conjugate momentum p0 = L - v.dL/dv."""

    def __init__(self, system):
        self.system = system

    def __call__(self, x):
        n = self.system.n
        out = [x[i] for i in range(n + 1)]
        out.extend(d.ev(x) for d in self.system.dLdv)
        return out

    def extended(self, x):
        n = self.system.n
        out = [x[i] for i in range(n + 1)]
        out.append(-self.system.energy.ev(x))
        out.extend(d.ev(x) for d in self.system.dLdv)
        return out

    def jacobian(self, x):
        """Tangent matrix rows = target components, columns = (t, q, v)."""
        n = self.system.n
        dim = self.system.dim
        Jm = [[0.0] * dim for _ in range(dim)]
        Jm[0][0] = 1.0
        for r in range(n):
            Jm[1 + r][1 + r] = 1.0
        for r in range(n):
            Jm[1 + n + r][0] = self.system.d2Ldtdv[r].ev(x)
            for s in range(n):
                Jm[1 + n + r][1 + s] = self.system.d2Ldqdv[r][s].ev(x)
                Jm[1 + n + r][1 + n + s] = self.system.hess[r][s].ev(x)
        return Jm


def legendre_map(system):
    return LegendreMap(system)


class KerFLBasis:
    """Vertical kernel fields of the fibre derivative.

    The corank-many basis fields W_j(x) live in the v-Hessian kernel with
    frozen pivots: W_j = e(free_j) + sum_i c_i e(pivot_i) in the vertical
    slots.  Pivot choice happens once at the system seed.
    """

    def __init__(self, system, tol=pre.TOL_RANK, cond_limit=1e6):
        self.system = system
        try:
            self._kernel = pre.FrozenPivotKernel(
                lambda x: [[system.hess[r][s].ev(x)
                            for s in range(system.n)]
                           for r in range(system.n)],
                system.seed, tol=tol, cond_limit=cond_limit)
        except pre.LinAlgDegeneracy as exc:
            raise PivotDegeneracy(str(exc)) from None
        self.m = self._kernel.nullity
        self.pivot_cols = list(self._kernel.cols)
        self.free_cols = list(self._kernel.free)

    def vertical(self, x):
        """Kernel vectors in the n-dimensional v-space."""
        return self._kernel.basis(x)

    def __call__(self, x):
        """Kernel vectors embedded as vertical chart vectors."""
        n = self.system.n
        out = []
        for w in self._kernel.basis(x):
            u = [0.0] * self.system.dim
            for r in range(n):
                u[1 + n + r] = w[r]
            out.append(u)
        return out


def ker_fl_basis(system, tol=pre.TOL_RANK, cond_limit=1e6):
    return KerFLBasis(system, tol=tol, cond_limit=cond_limit)


def second_order_connection(system):
    """Default second-order transport field d/dt + v^r d/dq^r."""
    n = system.n

    def Y(x):
        out = [1.0] + [0.0] * (2 * n)
        for r in range(n):
            out[1 + r] = x[1 + n + r]
        return out

    return Y


def time_connection(dim):
    """Plain time transport d/dt on any chart with t in slot 0."""

    def Y(x):
        return [1.0] + [0.0] * (dim - 1)

    return Y


def dynamical_problem(system, forms=None, Y=None, rng_seed=0, name=None):
    """Constraint-algorithm input for the velocity chart.

    Default transport is plain d/dt; pass the second-order connection or
    any other eta-normalized field to change the split.
    """
    from . import constraint_engine as eng
    if forms is None:
        forms = build_forms(system)
    if Y is None:
        Y = time_connection(system.dim)
    return eng.GeometricProblem(system.dim, forms.omega, eta=forms.eta,
                                Y=Y, seed=system.seed, rng_seed=rng_seed,
                                name=name or "lagrangian")
