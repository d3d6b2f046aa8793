"""Symmetry-aware keypoint cost matrix and mirror-pair selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp

from .descriptors import HksDescriptor, SignVector
from .geometry import CorrespondenceSet

DEFAULT_PENALTY = 1000.0
MAX_PAIRS = 50
GREEDY_ABOVE = 500


class InfeasibleMatchingError(ValueError):
    def __init__(self, wanted: int, feasible: int):
        super().__init__(f"requested {wanted} pairs but at most {feasible} are feasible")
        self.wanted = wanted
        self.feasible = feasible


@dataclass(frozen=True, eq=False)
class MatchCost:
    """Symmetric a x a cost matrix; the diagonal holds +inf (forbidden)."""

    matrix: np.ndarray
    penalty_b: float = DEFAULT_PENALTY

    def __post_init__(self):
        A = np.array(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 2:
            raise ValueError("cost matrix must be square with a >= 2")
        np.fill_diagonal(A, np.inf)
        if not np.array_equal(A, A.T):
            raise ValueError("cost matrix must be symmetric")
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class MatchParams:
    q: int
    penalty_b: float = DEFAULT_PENALTY
    spatial_guard: float | None = None
    method: str = "auto"

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if not self.penalty_b > 0:
            raise ValueError("penalty_b must be positive")


def default_q(a: int) -> int:
    return min(a // 2, MAX_PAIRS)


def build_cost_matrix(hks, signs, penalty_b: float = DEFAULT_PENALTY) -> MatchCost:
    """a_ij = ||h_i - h_j|| + psi(||s_i - s_j||), psi(0) = b and 0 otherwise."""
    H = np.asarray([h.values if isinstance(h, HksDescriptor) else h for h in hks], dtype=float)
    S = np.asarray([s.signs if isinstance(s, SignVector) else s for s in signs], dtype=float)
    if H.shape[0] != S.shape[0]:
        raise ValueError("descriptor and sign lists differ in length")
    if H.shape[0] < 2:
        raise ValueError("need at least two keypoints")
    sq = np.sum(H * H, axis=1)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * H @ H.T, 0.0))
    # exact differences for near-duplicates where the expansion cancels badly
    close = D < 1e-6 * np.sqrt(np.maximum(sq[:, None], sq[None, :]))
    if np.any(close):
        ii, jj = np.nonzero(close)
        D[ii, jj] = np.linalg.norm(H[ii] - H[jj], axis=1)
    D = np.maximum(D, D.T)
    same = np.all(S[:, None, :] == S[None, :, :], axis=2)
    return MatchCost(D + np.where(same, penalty_b, 0.0), penalty_b)


def feasible_edges(cost: MatchCost, params: MatchParams, positions=None):
    """Upper-triangle candidate pairs (i, j, cost), lexicographically ordered."""
    A = cost.matrix
    iu, ju = np.triu_indices(cost.size, 1)
    c = A[iu, ju]
    ok = np.isfinite(c) & (c < params.penalty_b)
    if params.spatial_guard is not None:
        if positions is None:
            raise ValueError("spatial_guard needs keypoint positions")
        P = np.asarray(positions, dtype=float)
        ok &= np.linalg.norm(P[iu] - P[ju], axis=1) >= params.spatial_guard
    return iu[ok], ju[ok], c[ok]


def max_matching_size(a: int, iu, ju) -> int:
    import networkx as nx

    g = nx.Graph()
    g.add_nodes_from(range(a))
    g.add_edges_from(zip(iu.tolist(), ju.tolist()))
    return len(nx.max_weight_matching(g, maxcardinality=True))


def _solve_exact(a: int, q: int, iu, ju, c):
    E = c.shape[0]
    inc = sp.coo_matrix(
        (np.ones(2 * E), (np.r_[iu, ju], np.r_[np.arange(E), np.arange(E)])), shape=(a, E)
    ).tocsr()
    res = milp(
        c,
        integrality=np.ones(E),
        bounds=Bounds(0, 1),
        constraints=[LinearConstraint(inc, 0, 1), LinearConstraint(np.ones((1, E)), q, q)],
        options={"mip_rel_gap": 0.0, "presolve": True},
    )
    if res.status != 0 or res.x is None:
        return None
    return np.flatnonzero(res.x > 0.5)


def _solve_greedy(a: int, q: int, iu, ju, c):
    order = np.lexsort((ju, iu, c))
    used = np.zeros(a, dtype=bool)
    pick = []
    for e in order:
        i, j = iu[e], ju[e]
        if not used[i] and not used[j]:
            used[i] = used[j] = True
            pick.append(e)
            if len(pick) == q:
                break
    return np.asarray(pick, dtype=np.int64)


def solve_matching(cost: MatchCost, params: MatchParams, positions=None) -> CorrespondenceSet:
    """q disjoint pairs of minimum total cost among the feasible pairs.

    Pairs whose cost reaches ``penalty_b`` (identical sign vectors) or, with a
    spatial guard, that lie closer than the guard radius are never selected.
    The exact route solves the 0/1 program with HiGHS; ``method="greedy"``
    (the default above 500 keypoints) takes cheapest disjoint pairs in order.
    """
    a = cost.size
    q = params.q
    if q > a // 2:
        raise ValueError(f"q={q} exceeds floor(a/2)={a // 2}")
    iu, ju, c = feasible_edges(cost, params, positions)
    method = params.method
    if method == "auto":
        method = "greedy" if a > GREEDY_ABOVE else "exact"
    if method == "exact":
        sel = _solve_exact(a, q, iu, ju, c) if c.size else None
    elif method == "greedy":
        sel = _solve_greedy(a, q, iu, ju, c)
    else:
        raise ValueError(f"unknown method {method!r}")
    if sel is None or sel.size != q:
        raise InfeasibleMatchingError(q, max_matching_size(a, iu, ju))
    sel = sel[np.lexsort((ju[sel], iu[sel]))]
    return CorrespondenceSet(np.column_stack([iu[sel], ju[sel]]), c[sel])


def nearest_feasible(cost: MatchCost, per_row: int) -> np.ndarray:
    """For every keypoint, its ``per_row`` cheapest feasible partners as (i, j) rows."""
    A = cost.matrix
    out = []
    for i in range(cost.size):
        row = A[i]
        order = np.argsort(row, kind="stable")[:per_row]
        out.extend((i, int(j)) for j in order if row[j] < cost.penalty_b)
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def write_correspondence_csv(path, corrs: CorrespondenceSet) -> None:
    costs = corrs.costs if corrs.costs is not None else np.full(len(corrs), np.nan)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j,cost\n")
        for (i, j), cc in zip(corrs.pairs.tolist(), costs.tolist()):
            fh.write(f"{i},{j},{cc!r}\n")
