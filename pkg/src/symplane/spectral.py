"""Point-cloud graph Laplacian and its low generalized eigenpairs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.sparse.csgraph import connected_components

from .geometry import PointCloud, knn_graph

DEFAULT_NEIGHBORS = 12
DEFAULT_K = 100
DENSE_MAX = 600


class DisconnectedGraphError(ValueError):
    def __init__(self, n_components: int):
        super().__init__(
            f"kNN graph has {n_components} connected components; increase neighbors"
        )
        self.n_components = n_components


class EigenConvergenceError(RuntimeError):
    def __init__(self, msg: str, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    """Sparse Laplacian ``L`` with diagonal mass ``mass`` (L phi = lambda M phi)."""

    L: sp.csr_matrix
    mass: np.ndarray

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @classmethod
    def from_weights(cls, W, mass=None) -> LaplacianPair:
        W = sp.csr_matrix(W, dtype=float)
        deg = np.asarray(W.sum(axis=1)).ravel()
        L = (sp.diags(deg) - W).tocsr()
        m = np.ones(W.shape[0]) if mass is None else np.asarray(mass, dtype=float)
        return cls(L, m)

    def check(self, tol: float = 1e-10) -> None:
        L = self.L
        if abs(L - L.T).max() > 1e-12:
            raise AssertionError("L not symmetric")
        if np.max(np.abs(np.asarray(L.sum(axis=1)).ravel())) > tol:
            raise AssertionError("row sums of L are not zero")
        off = L - sp.diags(L.diagonal())
        if off.nnz and off.max() > 0:
            raise AssertionError("positive off-diagonal entry")
        if np.any(self.mass <= 0):
            raise AssertionError("non-positive mass")


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    mass: np.ndarray

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    def first_nonzero(self, eps: float = 1e-8) -> float:
        nz = self.eigenvalues[self.eigenvalues > eps]
        if nz.size == 0:
            raise ValueError("spectrum has no eigenvalue above the zero threshold")
        return float(nz[0])


def auto_bandwidth(dists: np.ndarray, neighbors: int) -> float:
    """t = mean squared distance to the ceil(neighbors/2)-th neighbor."""
    j = math.ceil(neighbors / 2) - 1
    return float(np.mean(dists[:, j] ** 2))


def build_laplacian(cloud: PointCloud, neighbors: int = DEFAULT_NEIGHBORS, bandwidth="auto") -> LaplacianPair:
    """Symmetric kNN heat-kernel graph Laplacian with degree-proportional mass.

    An edge exists if either endpoint lists the other among its ``neighbors``
    nearest points. Weights are exp(-d^2 / 4t) with t = bandwidth^2; the mass
    is the weighted degree rescaled so that trace(M) = n.
    """
    n = len(cloud)
    if neighbors < 1 or n <= neighbors:
        raise ValueError(f"need 1 <= neighbors < n (neighbors={neighbors}, n={n})")
    idx, dist = knn_graph(cloud.points, neighbors, cloud.tree)
    if bandwidth == "auto" or bandwidth is None:
        t = auto_bandwidth(dist, neighbors)
    else:
        t = float(bandwidth) ** 2
    if not t > 0:
        raise ValueError("bandwidth must be positive (duplicate points?)")

    rows = np.repeat(np.arange(n), neighbors)
    cols = idx.ravel()
    d2 = dist.ravel() ** 2
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    keep = lo != hi
    lo, hi, d2 = lo[keep], hi[keep], d2[keep]
    order = np.lexsort((hi, lo))
    lo, hi, d2 = lo[order], hi[order], d2[order]
    first = np.ones(lo.shape[0], dtype=bool)
    first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    lo, hi, d2 = lo[first], hi[first], d2[first]
    w = np.exp(-d2 / (4.0 * t))

    W = sp.coo_matrix((np.r_[w, w], (np.r_[lo, hi], np.r_[hi, lo])), shape=(n, n)).tocsr()
    ncomp, _ = connected_components(W, directed=False)
    if ncomp > 1:
        raise DisconnectedGraphError(ncomp)
    deg = np.asarray(W.sum(axis=1)).ravel()
    L = (sp.diags(deg) - W).tocsr()
    L.sort_indices()
    mass = deg * (n / deg.sum())
    return LaplacianPair(L, mass)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive.

    Entries within a relative 1e-9 of the column maximum count as tied and
    the lowest index wins, so rounding noise cannot flip the choice.
    """
    a = np.abs(vecs)
    piv = np.argmax(a >= a.max(axis=0) * (1.0 - 1e-9), axis=0)
    s = np.sign(vecs[piv, np.arange(vecs.shape[1])])
    s[s == 0] = 1.0
    return vecs * s


def lanczos_largest(apply, n: int, k: int, rng: np.random.Generator,
                    tol: float = 1e-12, max_iter: int | None = None, chunk: int = 20):
    """Largest ``k`` eigenpairs of a symmetric operator, full reorthogonalization.

    The Krylov basis grows until every wanted Ritz pair satisfies
    |beta_m s_mi| <= tol * |theta_i|. Returns (theta, vectors, converged).
    """
    max_iter = min(n, max_iter if max_iter is not None else 30 * k)
    cap = min(max_iter + 1, max(2 * k + chunk, 64))
    Q = np.zeros((cap, n))
    alpha = np.zeros(max_iter)
    beta = np.zeros(max_iter)
    q = rng.standard_normal(n)
    Q[0] = q / np.linalg.norm(q)
    m = 0
    theta = S = None
    converged = False
    while m < max_iter:
        stop = min(max_iter, m + chunk) if m >= k else min(max_iter, k + chunk)
        for j in range(m, stop):
            w = apply(Q[j])
            alpha[j] = Q[j] @ w
            # two passes of classical Gram-Schmidt (DGKS)
            w -= Q[: j + 1].T @ (Q[: j + 1] @ w)
            w -= Q[: j + 1].T @ (Q[: j + 1] @ w)
            beta[j] = np.linalg.norm(w)
            if j + 1 >= Q.shape[0]:
                Q = np.vstack([Q, np.zeros((min(Q.shape[0], max_iter + 1 - Q.shape[0]), n))])
            if beta[j] <= 1e-14 * max(1.0, abs(alpha[j])):
                # invariant subspace found: restart with a fresh orthogonal vector
                r = rng.standard_normal(n)
                r -= Q[: j + 1].T @ (Q[: j + 1] @ r)
                r -= Q[: j + 1].T @ (Q[: j + 1] @ r)
                Q[j + 1] = r / np.linalg.norm(r)
                beta[j] = 0.0
            else:
                Q[j + 1] = w / beta[j]
        m = stop
        T = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
        theta, S = np.linalg.eigh(T)
        theta, S = theta[::-1], S[:, ::-1]
        if m >= k:
            bound = np.abs(beta[m - 1] * S[m - 1, :k])
            if np.all(bound <= tol * np.abs(theta[:k])):
                converged = True
                break
    kk = min(k, m)
    vecs = Q[:m].T @ S[:, :kk]
    return theta[:kk], vecs, converged


def solve_eigens(lap: LaplacianPair, k: int = DEFAULT_K, seed: int = 0,
                 method: str = "auto", dense_max: int = DENSE_MAX,
                 residual_tol: float = 1e-8) -> SpectralBasis:
    """First ``k`` eigenpairs of L phi = lambda M phi, M-orthonormal, ascending.

    ``method`` is "dense", "lanczos" or "auto" (dense up to ``dense_max``
    points). Lanczos runs on the shift-inverted symmetrized operator
    (M^-1/2 L M^-1/2 + delta I)^-1 with a sparse LU factorization.
    """
    n = lap.n
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n (k={k}, n={n})")
    m_isqrt = 1.0 / np.sqrt(lap.mass)
    Dm = sp.diags(m_isqrt)
    Ls = (Dm @ lap.L @ Dm).tocsc()
    Ls = (Ls + Ls.T) * 0.5
    if method == "auto":
        method = "dense" if n <= dense_max else "lanczos"

    if method == "dense":
        vals, Y = scipy.linalg.eigh(Ls.toarray(), subset_by_index=[0, k - 1])
    elif method == "lanczos":
        delta = 1e-3 * float(np.mean(Ls.diagonal())) + 1e-300
        A = (Ls + delta * sp.eye(n)).tocsc()
        lu = sla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                      options=dict(SymmetricMode=True))
        rng = np.random.default_rng(seed)
        theta, Y, _ = lanczos_largest(lu.solve, n, k, rng)
        # Rayleigh-Ritz on the original operator
        Y, _ = np.linalg.qr(Y)
        H = Y.T @ (Ls @ Y)
        vals, S = np.linalg.eigh((H + H.T) * 0.5)
        Y = Y @ S
    else:
        raise ValueError(f"unknown method {method!r}")

    Phi = _fix_signs(Y * m_isqrt[:, None])
    order = np.argsort(vals, kind="stable")
    vals, Phi = vals[order], Phi[:, order]
    res = eigen_residuals(lap, vals, Phi)
    if np.max(res) > residual_tol:
        raise EigenConvergenceError(
            f"eigensolver did not converge: max scaled residual {np.max(res):.3e}", res
        )
    vals = np.where(np.abs(vals) < 1e-14, 0.0, vals)
    return SpectralBasis(vals, Phi, lap.mass.copy())


def eigen_residuals(lap: LaplacianPair, vals, Phi) -> np.ndarray:
    R = lap.L @ Phi - (lap.mass[:, None] * Phi) * vals[None, :]
    return np.linalg.norm(R, axis=0) / np.maximum(vals, 1.0)


def save_basis(path, lap: LaplacianPair, basis: SpectralBasis) -> None:
    """Dump L (COO triplets), M, Phi and lambda to an .npz container."""
    L = lap.L.tocoo()
    np.savez_compressed(
        path, L_row=L.row, L_col=L.col, L_data=L.data, mass=lap.mass,
        eigenvalues=basis.eigenvalues, eigenfunctions=basis.eigenfunctions,
    )


def save_basis_csv(path, basis: SpectralBasis) -> None:
    """First row: eigenvalues; following rows: mass then Phi for each point."""
    k = basis.k
    header = "mass," + ",".join(f"phi{j}" for j in range(k))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        fh.write("lambda," + ",".join(repr(float(x)) for x in basis.eigenvalues) + "\n")
        body = np.column_stack([basis.mass, basis.eigenfunctions])
        np.savetxt(fh, body, delimiter=",", fmt="%.17g")
