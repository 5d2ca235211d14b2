"""Reduced-rank spatial basis from the Moran operator of an adjacency graph.

The latent spatial effect is expanded on the leading eigenvectors of
M = P A P, where A is the boundary-sharing adjacency of the finest support
and P projects onto the orthogonal complement of the covariate columns.
This confines the random effect to spatial patterns not already explained
by the covariates.

Alongside the basis Psi, this module precomputes the spectral pieces the
covariance prior needs: the graph Laplacian Q = diag(A1) - A, the
eigendecomposition Psi'QPsi = PhiQ diag(LambdaQ) PhiQ', and the Givens
angles of PhiQ in a fixed canonical order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .errors import DataError, NonOrthogonalMatrixError, NumericalError, RankDeficiencyError

#: Relative threshold below which an eigenvalue counts as non-positive.
POSITIVE_EIG_RELTOL = 1e-10
#: Max allowed deviation of an "orthogonal" input from orthogonality.
ORTHOGONALITY_TOL = 1e-8
#: Eigenvalue gaps below this are treated as ties for deterministic ordering.
EIG_TIE_TOL = 1e-12

_SECTION_MAGIC = b"MBAS"
_SECTION_VERSION = 1


@dataclass(frozen=True)
class CovariateMatrix:
    """Design matrix of site-level covariates on the finest support.

    Parameters
    ----------
    X : ndarray, shape (n1, p)
        One row per source unit, in support order.
    labels : tuple of str, optional
        Column labels; generated as ``x0, x1, ...`` when omitted.
    """

    X: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.ndim != 2:
            raise DataError("covariate matrix must be two-dimensional")
        n, p = X.shape
        if n < p:
            raise DataError(f"covariate matrix has more columns ({p}) than rows ({n})")
        labels = tuple(self.labels) if self.labels else tuple(f"x{k}" for k in range(p))
        if len(labels) != p:
            raise DataError("number of column labels does not match the number of columns")
        sv = np.linalg.svd(X, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise RankDeficiencyError(
                f"covariate matrix is numerically rank deficient (singular values {sv[0]:.3g} .. {sv[-1]:.3g})"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def intercept(cls, n):
        """Intercept-only design (a single column of ones)."""
        return cls(np.ones((n, 1)), labels=("intercept",))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


def _projector_complement(X):
    """Orthogonal projector onto the complement of col(X), via thin SVD."""
    U, sv, _ = np.linalg.svd(X, full_matrices=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficiencyError("covariate cross-product is numerically singular")
    n = X.shape[0]
    return np.eye(n) - U @ U.T


def moran_operator(adjacency, X):
    """Moran operator M = P A P with P = I - X(X'X)^{-1}X'.

    Parameters
    ----------
    adjacency : ndarray, shape (n1, n1)
        Symmetric 0/1 boundary-sharing matrix.
    X : CovariateMatrix or ndarray
        Full-column-rank design matrix.

    Returns
    -------
    ndarray
        The symmetric projected adjacency.
    """
    A = np.asarray(adjacency, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DataError("adjacency must be square")
    if not np.allclose(A, A.T):
        raise DataError("adjacency must be symmetric")
    Xmat = X.X if isinstance(X, CovariateMatrix) else np.atleast_2d(np.asarray(X, dtype=float))
    if Xmat.shape[0] != A.shape[0]:
        raise DataError("adjacency and covariate matrix sizes disagree")
    P = _projector_complement(Xmat)
    M = P @ A @ P
    return (M + M.T) / 2.0


def graph_laplacian(adjacency):
    """Graph Laplacian Q = diag(A 1) - A."""
    A = np.asarray(adjacency, dtype=float)
    return np.diag(A.sum(axis=1)) - A


def rank_from_positive_count(n_positive, fraction=0.10):
    """Basis rank rule: smallest integer covering ``fraction`` of the
    positive spectrum, never below 1.

    The small subtraction guards against binary round-up of exact products
    (e.g. fraction * count = 84.000...01).
    """
    if n_positive < 1:
        raise NumericalError("operator has no positive eigenvalues")
    if not 0 < fraction <= 1:
        raise DataError(f"fraction must lie in (0, 1], got {fraction!r}")
    return max(1, math.ceil(fraction * n_positive - 1e-9))


def _fix_column_signs(V):
    """First entry of each column with magnitude > 1e-12 made positive."""
    V = V.copy()
    for k in range(V.shape[1]):
        col = V[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            V[:, k] = -col
    return V


def _order_descending_with_ties(values, vectors):
    """Sort eigenpairs by descending eigenvalue; break near-ties (gap below
    ``EIG_TIE_TOL``) lexicographically on the sign-fixed eigenvectors so the
    result is deterministic."""
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    start = 0
    while start < len(values):
        stop = start + 1
        while stop < len(values) and values[stop - 1] - values[stop] < EIG_TIE_TOL:
            stop += 1
        if stop - start > 1:
            cols = sorted(range(start, stop), key=lambda k: vectors[:, k].tobytes())
            vectors[:, start:stop] = vectors[:, cols]
            values[start:stop] = values[cols]
        start = stop
    return values, vectors


def _eigh_descending(S):
    vals, vecs = eigh((S + S.T) / 2.0)
    vecs = _fix_column_signs(vecs)
    return _order_descending_with_ties(vals, vecs)


@dataclass(frozen=True, eq=False)
class MoranBasis:
    """Reduced-rank spatial basis and the spectral pieces of its prior.

    Fields
    ------
    Psi : ndarray, shape (n1, r)
        Orthonormal eigenvectors of the Moran operator for its r largest
        eigenvalues.
    r : int
        Basis rank.
    Q : ndarray, shape (n1, n1)
        Graph Laplacian of the source adjacency.
    PhiQ : ndarray, shape (r, r)
        Orthogonal eigenvectors of Psi'QPsi.
    LambdaQ : ndarray, shape (r,)
        Corresponding eigenvalues, descending, clipped at zero.
    g_angles : ndarray, shape (r(r-1)/2,)
        Givens angles of PhiQ in canonical (i<j) row-major order.
    eigenvalues : ndarray, shape (r,)
        The retained Moran-operator eigenvalues (descending).
    """

    Psi: np.ndarray
    r: int
    Q: np.ndarray
    PhiQ: np.ndarray
    LambdaQ: np.ndarray
    g_angles: np.ndarray
    eigenvalues: np.ndarray = field(default=None)

    @property
    def n1(self):
        return self.Psi.shape[0]

    def validate(self):
        """Check the orthonormality/spectral invariants; raise on violation."""
        r = self.r
        if self.Psi.shape[1] != r:
            raise NumericalError("basis rank disagrees with Psi shape")
        gram = self.Psi.T @ self.Psi
        if np.max(np.abs(gram - np.eye(r))) > ORTHOGONALITY_TOL:
            raise NonOrthogonalMatrixError("basis columns are not orthonormal")
        S = self.Psi.T @ self.Q @ self.Psi
        recon = self.PhiQ @ np.diag(self.LambdaQ) @ self.PhiQ.T
        if np.max(np.abs(recon - S)) > ORTHOGONALITY_TOL * max(1.0, np.max(np.abs(S))):
            raise NumericalError("spectral factors do not reproduce Psi'QPsi")
        R = givens_reconstruct(self.g_angles, r)
        sign = np.sign(np.sum(R * self.PhiQ, axis=0))
        sign[sign == 0] = 1.0
        if np.max(np.abs(R * sign - self.PhiQ)) > 1e-10 * max(1.0, np.max(np.abs(self.PhiQ))):
            raise NumericalError("Givens angles do not reproduce PhiQ up to column signs")

    # -- binary section ---------------------------------------------------
    def to_bytes(self):
        """Serialize as a self-describing binary section (magic, version,
        JSON header with shapes and SHA-256 checksums, row-major doubles)."""
        arrays = {
            "Psi": self.Psi,
            "Q": self.Q,
            "PhiQ": self.PhiQ,
            "LambdaQ": self.LambdaQ,
            "g_angles": self.g_angles,
            "eigenvalues": self.eigenvalues,
        }
        header = {"n1": int(self.n1), "r": int(self.r), "arrays": {}}
        payloads = []
        for name in sorted(arrays):
            arr = arrays[name]
            buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            header["arrays"][name] = {
                "shape": list(np.asarray(arr).shape),
                "sha256": hashlib.sha256(buf).hexdigest(),
            }
            payloads.append(buf)
        head = json.dumps(header, sort_keys=True).encode()
        out = [_SECTION_MAGIC, _SECTION_VERSION.to_bytes(4, "little"),
               len(head).to_bytes(8, "little"), head]
        out.extend(payloads)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob):
        if blob[:4] != _SECTION_MAGIC:
            raise DataError("not a basis section (bad magic)")
        version = int.from_bytes(blob[4:8], "little")
        if version != _SECTION_VERSION:
            raise DataError(f"unsupported basis section version {version}")
        hlen = int.from_bytes(blob[8:16], "little")
        header = json.loads(blob[16:16 + hlen].decode())
        offset = 16 + hlen
        arrays = {}
        for name in sorted(header["arrays"]):
            meta = header["arrays"][name]
            shape = tuple(meta["shape"])
            nbytes = int(np.prod(shape)) * 8 if shape else 8
            raw = blob[offset:offset + nbytes]
            if hashlib.sha256(raw).hexdigest() != meta["sha256"]:
                raise DataError(f"basis section array {name!r} failed its checksum")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            offset += nbytes
        return cls(
            Psi=arrays["Psi"],
            r=int(header["r"]),
            Q=arrays["Q"],
            PhiQ=arrays["PhiQ"],
            LambdaQ=arrays["LambdaQ"],
            g_angles=arrays["g_angles"],
            eigenvalues=arrays["eigenvalues"],
        )


def build_basis(M, adjacency=None, fraction=0.10, r=None):
    """Extract the reduced-rank basis from a Moran operator.

    Parameters
    ----------
    M : ndarray
        Symmetric operator whose leading eigenvectors form the basis.
    adjacency : ndarray, optional
        Source adjacency, used for the graph Laplacian Q.  When omitted, Q
        is the zero matrix (acceptable only for basis-only workflows; the
        covariance prior requires a nonzero Laplacian).
    fraction : float
        Fraction of the positive spectrum to retain (default 0.10).
    r : int, optional
        Explicit rank override; bypasses the fraction rule.

    Returns
    -------
    MoranBasis
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DataError("operator must be a square matrix")
    if not np.allclose(M, M.T, atol=1e-8 * max(1.0, np.max(np.abs(M)))):
        raise DataError("operator must be symmetric")
    n1 = M.shape[0]
    vals, vecs = _eigh_descending(M)
    vmax = np.max(np.abs(vals)) if vals.size else 0.0
    n_positive = int(np.sum(vals > POSITIVE_EIG_RELTOL * vmax)) if vmax > 0 else 0
    if n_positive == 0:
        raise NumericalError("operator has no positive eigenvalues")
    if r is None:
        r = rank_from_positive_count(n_positive, fraction)
    r = int(r)
    if not 1 <= r <= n1:
        raise DataError(f"basis rank {r} outside valid range 1..{n1}")
    Psi = vecs[:, :r]
    retained = vals[:r]
    if adjacency is None:
        Q = np.zeros((n1, n1))
    else:
        Q = graph_laplacian(adjacency)
    Svals, Svecs = _eigh_descending(Psi.T @ Q @ Psi)
    LambdaQ = np.clip(Svals, 0.0, None)
    angles = givens_extract(Svecs)
    basis = MoranBasis(
        Psi=Psi, r=r, Q=Q, PhiQ=Svecs, LambdaQ=LambdaQ,
        g_angles=angles, eigenvalues=retained,
    )
    basis.validate()
    return basis


def moran_basis(adjacency, X, fraction=0.10, r=None):
    """Convenience pipeline: Moran operator, then basis extraction."""
    M = moran_operator(adjacency, X)
    return build_basis(M, adjacency=adjacency, fraction=fraction, r=r)


def _pair_order(r):
    return [(i, j) for i in range(r - 1) for j in range(i + 1, r)]


def givens_extract(Phi):
    """Givens angles of an orthogonal matrix in canonical order.

    Peels rotations in the fixed order (1,2),(1,3),...,(1,r),(2,3),...,
    (r-1,r); the rotator product in that order reproduces ``Phi`` up to a
    diagonal +/-1 sign matrix on the right.  Angles lie in (-pi/2, pi/2].
    """
    T = np.array(Phi, dtype=float, copy=True)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DataError("expected a square matrix")
    r = T.shape[0]
    if np.max(np.abs(T.T @ T - np.eye(r))) > ORTHOGONALITY_TOL:
        raise NonOrthogonalMatrixError("matrix is not orthogonal within tolerance")
    angles = np.empty(r * (r - 1) // 2)
    for k, (i, j) in enumerate(_pair_order(r)):
        theta = math.atan2(T[j, i], T[i, i])
        if theta > math.pi / 2:
            theta -= math.pi
        elif theta <= -math.pi / 2:
            theta += math.pi
        c, s = math.cos(theta), math.sin(theta)
        row_i = c * T[i] + s * T[j]
        row_j = -s * T[i] + c * T[j]
        T[i], T[j] = row_i, row_j
        angles[k] = theta
    off = T - np.diag(np.diag(T))
    if np.max(np.abs(off)) > 1e-6:
        raise NonOrthogonalMatrixError("rotation peeling left a non-diagonal residual")
    return angles


def givens_reconstruct(angles, r):
    """Rotator product O(1,2)O(1,3)...O(r-1,r) for the given angles."""
    angles = np.asarray(angles, dtype=float)
    expected = r * (r - 1) // 2
    if angles.shape != (expected,):
        raise DataError(f"expected {expected} angles for r={r}, got {angles.shape}")
    R = np.eye(r)
    for (i, j), theta in zip(_pair_order(r), angles):
        c, s = math.cos(theta), math.sin(theta)
        col_i = c * R[:, i] + s * R[:, j]
        col_j = -s * R[:, i] + c * R[:, j]
        R[:, i], R[:, j] = col_i, col_j
    return R


def rotate_coordinates(angles, r, vec):
    """Apply the transposed rotator product to a vector: returns Phi' v
    for Phi = givens_reconstruct(angles, r), without forming Phi."""
    v = np.array(vec, dtype=float, copy=True)
    for (i, j), theta in zip(_pair_order(r), angles):
        c, s = math.cos(theta), math.sin(theta)
        vi = c * v[i] + s * v[j]
        vj = -s * v[i] + c * v[j]
        v[i], v[j] = vi, vj
    return v
