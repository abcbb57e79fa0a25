"""Pointwise linear algebra for a (possibly degenerate) pair (eta, omega).

At a single point the structure is a covector eta and an antisymmetric
matrix omega on a finite-dimensional space V.  The central object is the
flat map

    flat(v) = i(v) omega + (eta . v) eta ,

with the index convention (i(v) omega)_j = sum_i v^i omega_ij.  When flat
is invertible the pair is called cosymplectic at the point and carries a
Reeb vector R = flat^-1(eta), a sharp map, Hamiltonian and evolution
vectors, and projector splits along a distribution.  When flat is
degenerate only the complement machinery applies.

Everything here is exact linear algebra at one point; smooth dependence
across a chart is handled by freezing pivots at a seed point
(:class:`FrozenPivotKernel`) so that nearby points reuse one branch of
the rank decision.
"""

import numpy as np
import scipy.linalg

__all__ = [
    "NotCosymplectic", "SplitFails", "LinAlgDegeneracy",
    "PrecoPoint", "Subspace",
    "flat_map", "orthogonal_complement", "reeb", "poisson_sharp",
    "hamiltonian_and_evolution", "dirac_split",
    "gauss_solve", "gauss_inv", "svd_rank", "svd_nullspace",
    "pivot_rows_cols", "FrozenPivotKernel",
    "core", "pair", "contract",
]

TOL_RANK = 1e-9


class NotCosymplectic(ValueError):
    """The flat map is singular (or its solution violates the Reeb
    identities), so cosymplectic-only operations are unavailable."""


class SplitFails(ValueError):
    """The requested distribution and its sharp-complement do not span."""


class LinAlgDegeneracy(ArithmeticError):
    """A frozen-pivot elimination hit a pivot too small to trust."""


# ---------------------------------------------------------------------------
# generic elimination, safe for dual-number entries


def core(x):
    """Innermost float of a scalar that may be a nested dual number."""
    while hasattr(x, "a"):
        x = x.a
    return x


def pair(alpha, v):
    """Covector-vector pairing sum_j alpha_j v^j (dual-safe)."""
    total = 0.0
    for a, b in zip(alpha, v):
        total = total + a * b
    return total


def contract(v, W):
    """(i(v) omega)_j = sum_i v^i W[i][j] (dual-safe)."""
    n = len(W[0])
    out = []
    for j in range(n):
        s = 0.0
        for i, vi in enumerate(v):
            s = s + vi * W[i][j]
        out.append(s)
    return out


def gauss_solve(A, b):
    """Solve a small dense square system by partial-pivot elimination.

    Entries may be floats or dual numbers; pivots are compared by their
    float cores, so the branch taken is the one of the underlying point.
    """
    n = len(A)
    if n == 0:
        return []
    M = [list(A[i]) + [b[i]] for i in range(n)]
    scale = max(abs(core(M[i][j])) for i in range(n) for j in range(n))
    if scale == 0.0:
        raise LinAlgDegeneracy("zero matrix in square solve")
    for k in range(n):
        p = max(range(k, n), key=lambda i: abs(core(M[i][k])))
        if abs(core(M[p][k])) <= 1e-13 * scale:
            raise LinAlgDegeneracy("pivot %d below threshold" % k)
        if p != k:
            M[k], M[p] = M[p], M[k]
        for i in range(k + 1, n):
            f = M[i][k] / M[k][k]
            for j in range(k, n + 1):
                M[i][j] = M[i][j] - f * M[k][j]
    x = [0.0] * n
    for k in range(n - 1, -1, -1):
        s = M[k][n]
        for j in range(k + 1, n):
            s = s - M[k][j] * x[j]
        x[k] = s / M[k][k]
    return x


def gauss_inv(A):
    """Inverse of a small dense matrix via n right-hand sides (dual-safe)."""
    n = len(A)
    cols = []
    for j in range(n):
        e = [0.0] * n
        e[j] = 1.0
        cols.append(gauss_solve(A, e))
    return [[cols[j][i] for j in range(n)] for i in range(n)]


# ---------------------------------------------------------------------------
# numeric rank decisions (float points only)


def svd_rank(M, tol=TOL_RANK):
    """Rank with the relative singular-value cutoff tol * sigma_max."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def svd_nullspace(M, tol=TOL_RANK):
    """Orthonormal kernel basis as matrix columns (possibly 0 columns)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows, cols = M.shape
    if M.size == 0 or not np.any(M):
        return np.eye(cols)
    u, s, vt = np.linalg.svd(M)
    r = int(np.sum(s > tol * s[0])) if s.size else 0
    return vt[r:].T.copy()


def pivot_rows_cols(M, rank, cond_limit=None):
    """Deterministic pivot rows/columns for a rank-``rank`` matrix.

    QR with column pivoting on M^T picks the rows, then on the selected
    rows picks the columns.  Both lists come back sorted so downstream
    bases do not depend on the internal pivot order.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rank == 0:
        return [], []
    _, _, prow = scipy.linalg.qr(M.T, pivoting=True)
    rows = sorted(int(i) for i in prow[:rank])
    _, _, pcol = scipy.linalg.qr(M[rows, :], pivoting=True)
    cols = sorted(int(j) for j in pcol[:rank])
    block = M[np.ix_(rows, cols)]
    if cond_limit is not None:
        c = np.linalg.cond(block)
        if not np.isfinite(c) or c > cond_limit:
            raise LinAlgDegeneracy(
                "pivot block condition %.3g exceeds %.3g" % (c, cond_limit))
    return rows, cols


class FrozenPivotKernel:
    """Smooth kernel basis of a matrix field x -> M(x).

    Rank and pivots are decided once, at the seed point.  At any other
    point the same pivot rows and columns parametrise the kernel: each
    non-pivot column index f carries one basis vector with u_f = 1 and
    pivot entries from an r x r solve.  The construction is a rational
    function of the matrix entries, hence dual-number transparent.
    """

    def __init__(self, matrix_fn, seed, tol=TOL_RANK, cond_limit=None):
        self._fn = matrix_fn
        M0 = np.atleast_2d(np.asarray(
            [[core(v) for v in row] for row in matrix_fn(seed)], dtype=float))
        self.shape = M0.shape
        self.rank = svd_rank(M0, tol)
        self.rows, self.cols = pivot_rows_cols(M0, self.rank, cond_limit)
        self.free = [j for j in range(self.shape[1]) if j not in self.cols]
        self.nullity = len(self.free)
        self.tol = tol

    def basis(self, x):
        """Kernel basis vectors at x, one per frozen free column."""
        M = self._fn(x)
        d = self.shape[1]
        out = []
        if self.rank == 0:
            for f in self.free:
                u = [0.0] * d
                u[f] = 1.0
                out.append(u)
            return out
        A = [[M[i][j] for j in self.cols] for i in self.rows]
        for f in self.free:
            rhs = [-M[i][f] for i in self.rows]
            z = gauss_solve(A, rhs)
            u = [0.0] * d
            u[f] = 1.0
            for idx, j in enumerate(self.cols):
                u[j] = z[idx]
            out.append(u)
        return out

    def residual(self, x):
        """Largest |M(x) u| over the basis at a float point; a drift of
        the true rank away from the frozen one shows up here."""
        M = np.atleast_2d(np.asarray(
            [[core(v) for v in row] for row in self._fn(x)], dtype=float))
        worst = 0.0
        for u in self.basis(x):
            r = M @ np.asarray([core(c) for c in u])
            worst = max(worst, float(np.max(np.abs(r))) if r.size else 0.0)
        return worst


# ---------------------------------------------------------------------------
# subspaces


class Subspace:
    """Linear subspace given by a spanning set; kept as an orthonormal
    basis so membership and equality are stable projections."""

    def __init__(self, vectors, ambient_dim=None, tol=TOL_RANK):
        vecs = [np.asarray(v, dtype=float) for v in vectors]
        if vecs:
            self.ambient_dim = vecs[0].size
            V = np.column_stack(vecs)
            u, s, _ = np.linalg.svd(V, full_matrices=False)
            r = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
            self.basis = u[:, :r].copy()
        else:
            if ambient_dim is None:
                raise ValueError("empty spanning set needs ambient_dim")
            self.ambient_dim = ambient_dim
            self.basis = np.zeros((ambient_dim, 0))

    @property
    def dim(self):
        return self.basis.shape[1]

    def project(self, v):
        v = np.asarray(v, dtype=float)
        return self.basis @ (self.basis.T @ v)

    def contains(self, v, tol=1e-8):
        v = np.asarray(v, dtype=float)
        scale = max(1.0, float(np.linalg.norm(v)))
        return float(np.linalg.norm(v - self.project(v))) <= tol * scale

    def equals(self, other, tol=1e-8):
        """Mutual-projection test: each basis vector of one lies in the
        other to within tol."""
        if self.ambient_dim != other.ambient_dim or self.dim != other.dim:
            return False
        for k in range(self.dim):
            if not other.contains(self.basis[:, k], tol):
                return False
        for k in range(other.dim):
            if not self.contains(other.basis[:, k], tol):
                return False
        return True

    def intersection(self, other, tol=TOL_RANK):
        """Kernel of [A | -B] read back through the A block."""
        if self.dim == 0 or other.dim == 0:
            return Subspace([], ambient_dim=self.ambient_dim)
        stacked = np.hstack([self.basis, -other.basis])
        null = svd_nullspace(stacked, tol)
        vecs = [self.basis @ null[:self.dim, k] for k in range(null.shape[1])]
        vecs = [v for v in vecs if np.linalg.norm(v) > tol]
        return Subspace(vecs, ambient_dim=self.ambient_dim)

    def __repr__(self):
        return "Subspace(dim=%d, ambient=%d)" % (self.dim, self.ambient_dim)


# ---------------------------------------------------------------------------
# structure points and operations


class PrecoPoint:
    """Linear data (eta, omega) at one point, with optional Reeb vector.

    Validates antisymmetry of omega and, when R is supplied, the
    identities i(R) omega = 0 and eta(R) = 1.
    """

    def __init__(self, eta, omega, R=None, tol=1e-9):
        self.eta = np.asarray(eta, dtype=float)
        self.omega = np.asarray(omega, dtype=float)
        self.dim = self.eta.size
        if self.omega.shape != (self.dim, self.dim):
            raise ValueError("omega shape %r does not match eta size %d"
                             % (self.omega.shape, self.dim))
        scale = max(1.0, float(np.max(np.abs(self.omega))))
        if float(np.max(np.abs(self.omega + self.omega.T))) > tol * scale:
            raise ValueError("omega is not antisymmetric to tolerance")
        self.R = None
        if R is not None:
            R = np.asarray(R, dtype=float)
            if float(np.max(np.abs(R @ self.omega))) > tol * scale * 10:
                raise ValueError("i(R) omega != 0")
            if abs(float(self.eta @ R) - 1.0) > tol * 10:
                raise ValueError("eta(R) != 1")
            self.R = R

    def flat_matrix(self):
        """Matrix B with B v = flat(v)."""
        return self.omega.T + np.outer(self.eta, self.eta)


def flat_map(p, v):
    """flat(v) = i(v) omega + (eta . v) eta as a covector array."""
    v = np.asarray(v, dtype=float)
    return v @ p.omega + float(p.eta @ v) * p.eta


def orthogonal_complement(p, K, tol=TOL_RANK):
    """K-perp = annihilated directions of flat(K).

    v lies in K-perp iff <flat(k), v> = 0 for every k in K, equivalently
    (i(v) omega - (i(v) eta) eta) restricted to K vanishes.
    """
    if K.dim == 0:
        return Subspace(list(np.eye(p.dim)), ambient_dim=p.dim)
    # rows negligible against the structure scale are flat images of
    # radical directions; a relative SVD cutoff alone cannot drop them
    scale = max(1.0, float(np.max(np.abs(p.omega))),
                float(np.max(np.abs(p.eta))))
    rows = [flat_map(p, K.basis[:, k]) for k in range(K.dim)]
    rows = [r for r in rows if float(np.linalg.norm(r)) > tol * scale]
    if not rows:
        return Subspace(list(np.eye(p.dim)), ambient_dim=p.dim)
    return Subspace(list(svd_nullspace(np.vstack(rows), tol).T),
                    ambient_dim=p.dim)


def reeb(p, tol=TOL_RANK):
    """Reeb vector flat^-1(eta); raises NotCosymplectic when flat is
    singular or the solution fails i(R) omega = 0, eta(R) = 1."""
    B = p.flat_matrix()
    if svd_rank(B, tol) < p.dim:
        raise NotCosymplectic("flat map is singular at this point")
    R = np.linalg.solve(B, p.eta)
    scale = max(1.0, float(np.max(np.abs(p.omega))))
    if float(np.max(np.abs(R @ p.omega))) > 1e-8 * scale * max(
            1.0, float(np.linalg.norm(R))):
        raise NotCosymplectic("flat solution violates i(R) omega = 0")
    if abs(float(p.eta @ R) - 1.0) > 1e-8:
        raise NotCosymplectic("flat solution violates eta(R) = 1")
    return R


def poisson_sharp(p, alpha, tol=TOL_RANK):
    """sharp(alpha): unique u with flat(u) = alpha - alpha(R) eta; it
    automatically satisfies eta(u) = 0."""
    alpha = np.asarray(alpha, dtype=float)
    R = p.R if p.R is not None else reeb(p, tol)
    B = p.flat_matrix()
    if svd_rank(B, tol) < p.dim:
        raise NotCosymplectic("flat map is singular at this point")
    u = np.linalg.solve(B, alpha - float(alpha @ R) * p.eta)
    return u


def hamiltonian_and_evolution(p, dF, tol=TOL_RANK):
    """Hamiltonian vector X_F = sharp(dF) and evolution vector
    E_F = R + X_F for the differential dF at the point."""
    R = p.R if p.R is not None else reeb(p, tol)
    X = poisson_sharp(PrecoPoint(p.eta, p.omega, R=R), dF, tol)
    return X, R + X


def dirac_split(p, D, tol=TOL_RANK, proj_tol=1e-10):
    """Oblique projectors (P, Q) for V = D (+) flat^{-1}(D-ann).

    D-ann is the annihilator of D; its preimages under the full flat
    isomorphism must complement D, otherwise SplitFails.  P projects
    onto D along those preimages.  The bivector sharp is unsuitable
    here: it annihilates the reference covector, so it cannot recover
    the transverse direction of a horizontal distribution.
    """
    if D.dim == 0:
        raise SplitFails("cannot split along a zero distribution")
    ann = svd_nullspace(D.basis.T, tol)
    B = p.omega.T + np.outer(p.eta, p.eta)
    try:
        comp = np.linalg.solve(B, ann) if ann.shape[1] else ann
    except np.linalg.LinAlgError:
        raise SplitFails("flat map is not invertible at the point") \
            from None
    U = D.basis
    M = np.hstack([U, comp]) if comp.shape[1] else U
    if M.shape[1] != p.dim or svd_rank(M, tol) < p.dim:
        raise SplitFails("distribution and sharp complement do not span")
    Minv = np.linalg.inv(M)
    P = U @ Minv[:D.dim, :]
    Q = np.eye(p.dim) - P
    if float(np.max(np.abs(P @ P - P))) > proj_tol * max(
            1.0, float(np.max(np.abs(P)))):
        raise SplitFails("projector fails idempotency tolerance")
    return P, Q
