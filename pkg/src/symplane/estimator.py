"""Robust L2E estimation of a reflection plane from putative mirror pairs.

The plane is (v, w) with unit normal v; a pair (x, x') is explained by
x' = (I - 2vv^T)x + 2wv + noise. The L2E criterion maximized here is

    f(v, w) = 2 / (n (2 pi s^2)^(3/2)) * sum_i exp(-f_i(v, w) / (2 s^2))

with f_i the squared residual of pair i. v lives on the unit sphere and is
updated by Riemannian L-BFGS; w by a scalar quasi-Newton iteration. The two
alternate until neither moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import CorrespondenceSet, SymmetryPlane, reflect_point

DEFAULT_SIGMA = 0.05
DEFAULT_ANNEAL = (0.2, 0.7, 0.02)


class InitializationError(ValueError):
    pass


class AmbiguousPlaneError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PairStatistics:
    """Per-pair quantities: C_i = x_i x'_i^T, m_i = (x_i + x'_i)/2, d_i = |x_i - x'_i|^2."""

    x: np.ndarray
    xp: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1, 3)
        xp = np.array(self.xp, dtype=float).reshape(-1, 3)
        if x.shape != xp.shape:
            raise ValueError("pair endpoints differ in count")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xp))):
            raise ValueError("pair coordinates must be finite")
        for a in (x, xp):
            a.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xp", xp)

    @classmethod
    def from_correspondences(cls, points, corrs: CorrespondenceSet) -> PairStatistics:
        pts = np.asarray(points, dtype=float)
        return cls(pts[corrs.pairs[:, 0]], pts[corrs.pairs[:, 1]])

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def C(self) -> np.ndarray:
        return self.x[:, :, None] * self.xp[:, None, :]

    @cached_property
    def m(self) -> np.ndarray:
        return 0.5 * (self.x + self.xp)

    @cached_property
    def s(self) -> np.ndarray:
        return self.x + self.xp

    @cached_property
    def d(self) -> np.ndarray:
        return np.sum((self.x - self.xp) ** 2, axis=1)

    def subset(self, idx) -> PairStatistics:
        return PairStatistics(self.x[idx], self.xp[idx])


@dataclass(frozen=True)
class EstimatorParams:
    sigma: float = DEFAULT_SIGMA
    anneal: tuple[float, float, float] | None = None
    outer_max: int = 50
    tol_angle: float = 1e-4
    tol_omega: float = 1e-6
    seed: int = 0
    inner_max: int = 200
    rga_trim: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.anneal is not None:
            start, decay, floor = self.anneal
            if not (start > 0 and 0 < decay < 1 and floor > 0):
                raise ValueError("anneal needs start > 0, 0 < decay < 1, floor > 0")
        if not (self.tol_angle > 0 and self.tol_omega > 0):
            raise ValueError("tolerances must be positive")
        if self.outer_max < 1:
            raise ValueError("outer_max must be >= 1")

    def sigma_schedule(self):
        if self.anneal is None:
            while True:
                yield self.sigma
        start, decay, floor = self.anneal
        s = start
        while True:
            yield s
            s = max(floor, s * decay)


@dataclass
class EstimateDiagnostics:
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list)
    sigma_trace: list[float] = field(default_factory=list)
    grad_norm: float = float("nan")
    init_vector: np.ndarray | None = None
    init_method: str = ""
    residual_norms: np.ndarray | None = None
    converged: bool = False
    line_search_failed: bool = False

    def report(self) -> str:
        from .io import format_value

        rows = [
            ("iterations", self.iterations),
            ("converged", self.converged),
            ("line_search_failed", self.line_search_failed),
            ("grad_norm", self.grad_norm),
            ("init_method", self.init_method),
            ("init_vector", self.init_vector if self.init_vector is not None else []),
            ("objective_trace", self.objective_trace),
            ("sigma_trace", self.sigma_trace),
        ]
        if self.residual_norms is not None:
            rows.append(("residual_median", float(np.median(self.residual_norms))))
        return "".join(f"{k}={format_value(v)}\n" for k, v in rows)


# ---------------------------------------------------------------- objective


def residual(x, xp, plane_or_v, omega: float | None = None) -> np.ndarray:
    """r = x' - (I - 2vv^T)x - 2wv (row-wise for arrays)."""
    if isinstance(plane_or_v, SymmetryPlane):
        plane = plane_or_v
    else:
        plane = SymmetryPlane(plane_or_v, omega)
    return np.asarray(xp, dtype=float) - reflect_point(x, plane)


def f_components(stats: PairStatistics, v, omega: float) -> np.ndarray:
    """f_i = 4 v^T C_i v + |x_i - x'_i|^2 - 4w v^T(x_i + x'_i) + 4w^2."""
    v = np.asarray(v, dtype=float)
    px = stats.x @ v
    pxp = stats.xp @ v
    return 4.0 * px * pxp + stats.d - 4.0 * omega * (px + pxp) + 4.0 * omega * omega


def f_component(x, xp, v, omega: float) -> float:
    return float(f_components(PairStatistics([x], [xp]), v, omega)[0])


def _norm_const(n: int, sigma: float) -> float:
    return 2.0 / (n * (2.0 * math.pi * sigma * sigma) ** 1.5)


def l2e_objective(stats: PairStatistics, v, omega: float, sigma: float) -> float:
    fi = f_components(stats, v, omega)
    return _norm_const(len(stats), sigma) * float(np.sum(np.exp(-fi / (2.0 * sigma * sigma))))


def euclidean_grad_v(stats: PairStatistics, v, omega: float, sigma: float) -> np.ndarray:
    """sum_i (8w m_i - 4(C_i + C_i^T)v) e_i / (n s^2 (2 pi s^2)^(3/2))."""
    v = np.asarray(v, dtype=float)
    e = np.exp(-f_components(stats, v, omega) / (2.0 * sigma * sigma))
    # (C_i + C_i^T) v = x_i (x'_i . v) + x'_i (x_i . v)
    cv = stats.x * (stats.xp @ v)[:, None] + stats.xp * (stats.x @ v)[:, None]
    terms = (8.0 * omega * stats.m - 4.0 * cv) * e[:, None]
    n = len(stats)
    return terms.sum(axis=0) / (n * sigma**2 * (2.0 * math.pi * sigma**2) ** 1.5)


def riemannian_grad_v(egrad, v) -> np.ndarray:
    """Tangent projection x - (x^T v) v."""
    egrad = np.asarray(egrad, dtype=float)
    v = np.asarray(v, dtype=float)
    return egrad - (egrad @ v) * v


def grad_omega(stats: PairStatistics, v, omega: float, sigma: float) -> float:
    """(4/n) sum_i (v^T(x_i + x'_i) - 2w) e_i / (s^2 (2 pi s^2)^(3/2))."""
    v = np.asarray(v, dtype=float)
    e = np.exp(-f_components(stats, v, omega) / (2.0 * sigma * sigma))
    t = (stats.s @ v - 2.0 * omega) * e
    n = len(stats)
    return 4.0 / n * float(np.sum(t)) / (sigma**2 * (2.0 * math.pi * sigma**2) ** 1.5)


def closed_form_omega(stats: PairStatistics, v) -> float:
    return float(np.mean(stats.m @ np.asarray(v, dtype=float)))


# log-domain versions used by the optimizers; the maximizer is unchanged and
# the weights never underflow
def _log_f_and_weights(stats, v, omega, sigma):
    z = -f_components(stats, v, omega) / (2.0 * sigma * sigma)
    zmax = float(np.max(z))
    w = np.exp(z - zmax)
    tot = float(np.sum(w))
    return math.log(_norm_const(len(stats), sigma)) + zmax + math.log(tot), w / tot


def _log_grad_v(stats, v, omega, sigma):
    logf, w = _log_f_and_weights(stats, v, omega, sigma)
    cv = stats.x * (stats.xp @ v)[:, None] + stats.xp * (stats.x @ v)[:, None]
    g = ((8.0 * omega * stats.m - 4.0 * cv) * w[:, None]).sum(axis=0) / (2.0 * sigma * sigma)
    return logf, riemannian_grad_v(g, v)


def _log_grad_omega(stats, v, omega, sigma):
    logf, w = _log_f_and_weights(stats, v, omega, sigma)
    g = float(np.sum((stats.s @ v - 2.0 * omega) * w)) * 2.0 / (sigma * sigma)
    return logf, g


# --------------------------------------------------------------- optimizers


def _retract(v, d):
    u = v + d
    return u / np.linalg.norm(u)


@dataclass
class _Result:
    value: object
    trace: list
    iterations: int
    grad_norm: float
    line_search_failed: bool = False


def optimize_v(stats: PairStatistics, v0, omega: float, sigma: float,
               max_iter: int = 200, grad_tol: float = 1e-10, memory: int = 5,
               armijo: float = 1e-4, max_halvings: int = 50) -> _Result:
    """Maximize f(., w) over the unit sphere by Riemannian L-BFGS.

    Directions come from the two-loop recursion on projected gradients, with
    the memory re-projected onto the current tangent space (projection vector
    transport). Steps use Armijo backtracking and the retraction
    (v + a d)/|v + a d|. ``grad_tol`` applies to the Riemannian gradient of
    log f. Returns the final unit vector and the objective trace.
    """
    v = np.asarray(v0, dtype=float)
    v = v / np.linalg.norm(v)
    F, g = _log_grad_v(stats, v, omega, sigma)
    trace = [math.exp(F)]
    S, Y = [], []
    it = 0
    failed = False
    while it < max_iter and np.linalg.norm(g) >= grad_tol:
        # minimize phi = -log f; its gradient is -g
        gam = -g
        qv = gam.copy()
        S = [riemannian_grad_v(s, v) for s in S]
        Y = [riemannian_grad_v(y, v) for y in Y]
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ qv)
            alphas.append(a)
            qv -= a * y
        if S:
            qv *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        else:
            qv *= min(1.0, 0.1 / np.linalg.norm(gam))
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            rho = 1.0 / (y @ s)
            b = rho * (y @ qv)
            qv += (a - b) * s
        d = riemannian_grad_v(-qv, v)
        slope = g @ d
        if not slope > 0:
            S, Y = [], []
            d = g * min(1.0, 0.1 / np.linalg.norm(g))
            slope = g @ d
        step = 1.0
        for _ in range(max_halvings):
            v_new = _retract(v, step * d)
            F_new, g_new = _log_grad_v(stats, v_new, omega, sigma)
            if F_new >= F + armijo * step * slope:
                break
            step *= 0.5
        else:
            failed = True
            break
        s_vec = riemannian_grad_v(step * d, v_new)
        y_vec = -g_new - riemannian_grad_v(-g, v_new)
        if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        moved = np.linalg.norm(v_new - v)
        v, F, g = v_new, F_new, g_new
        trace.append(math.exp(F))
        it += 1
        if moved < 1e-15:
            break
    return _Result(v, trace, it, float(np.linalg.norm(g)), failed)


def optimize_omega(stats: PairStatistics, v, omega0: float, sigma: float,
                   max_iter: int = 100, armijo: float = 1e-4, max_halvings: int = 50) -> _Result:
    """Maximize f(v, .) by a scalar secant quasi-Newton iteration.

    The curvature of log f is seeded with the single-Gaussian value -4/s^2
    and then updated by secants while it stays negative; Armijo backtracking
    guarantees ascent.
    """
    v = np.asarray(v, dtype=float)
    w = float(omega0)
    if not math.isfinite(w):
        raise ValueError("omega0 must be finite")
    h0 = -4.0 / (sigma * sigma)
    F, g = _log_grad_omega(stats, v, w, sigma)
    trace = [math.exp(F)]
    h = h0
    it = 0
    failed = False
    while it < max_iter and g != 0.0:
        d = -g / h
        step = 1.0
        for _ in range(max_halvings):
            w_new = w + step * d
            F_new, g_new = _log_grad_omega(stats, v, w_new, sigma)
            if F_new >= F + armijo * step * g * d:
                break
            step *= 0.5
        else:
            failed = True
            break
        dw = w_new - w
        if dw != 0.0:
            sec = (g_new - g) / dw
            h = sec if sec < 0 else h0
        w, F, g = w_new, F_new, g_new
        trace.append(math.exp(F))
        it += 1
        if abs(dw) <= 4e-16 * max(1.0, abs(w)):
            break
    return _Result(w, trace, it, abs(g), failed)


# ------------------------------------------------------------ initialization


def _grassmann_direction(X: np.ndarray, max_iter: int = 100) -> np.ndarray:
    """Leading direction by the Grassmann average of the lines through X."""
    norms = np.linalg.norm(X, axis=1)
    ok = norms > 0
    X, norms = X[ok], norms[ok]
    if X.shape[0] == 0:
        raise InitializationError("no nonzero vectors to average")
    U = X / norms[:, None]
    # start from the leading principal axis
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    q = vt[0]
    signs = None
    for _ in range(max_iter):
        new_signs = np.where(U @ q >= 0, 1.0, -1.0)
        if signs is not None and np.array_equal(new_signs, signs):
            break
        signs = new_signs
        avg = (norms * signs) @ U
        nrm = np.linalg.norm(avg)
        if nrm == 0:
            break
        q = avg / nrm
    return q


def init_v_rga(midpoints, trim: float = 0.5, max_outer: int = 50) -> np.ndarray:
    """Robust normal of the plane spanned by pair midpoints.

    Two Grassmann-average directions (the second after deflating the first)
    span the robust midpoint plane; the normal is their cross product. Each
    round keeps the ``1 - trim`` fraction of midpoints closest to the current
    plane, recenters on their mean and repeats until the kept set is stable.
    """
    M = np.asarray(midpoints, dtype=float).reshape(-1, 3)
    if M.shape[0] < 3:
        raise InitializationError("need at least 3 midpoints")
    n_keep = max(3, int(math.ceil((1.0 - trim) * M.shape[0])))
    keep = np.arange(M.shape[0])
    normal = None
    for _ in range(max_outer):
        sub = M[keep]
        center = sub.mean(axis=0)
        X = sub - center
        sv = np.linalg.svd(X, compute_uv=False)
        if sv[1] <= 1e-10 * max(sv[0], 1e-300):
            raise InitializationError("midpoints are collinear")
        q1 = _grassmann_direction(X)
        X2 = X - np.outer(X @ q1, q1)
        q2 = _grassmann_direction(X2)
        q2 = q2 - (q2 @ q1) * q1
        q2 /= np.linalg.norm(q2)
        normal = np.cross(q1, q2)
        normal /= np.linalg.norm(normal)
        r = np.abs((M - center) @ normal)
        new_keep = np.sort(np.argsort(r, kind="stable")[:n_keep])
        if np.array_equal(new_keep, keep):
            break
        keep = new_keep
    return normal


def init_v_pca(midpoints) -> np.ndarray:
    """Smallest principal axis of the midpoint second-moment matrix."""
    M = np.asarray(midpoints, dtype=float).reshape(-1, 3)
    S = M.T @ M / M.shape[0]
    _, vecs = np.linalg.eigh(S)
    return vecs[:, 0]


# ----------------------------------------------------------------- baselines


def mle_estimate(stats: PairStatistics) -> SymmetryPlane:
    """Least-squares plane: smallest eigenvector of sym(sum_i x_i x'_i^T)."""
    if len(stats) < 3:
        raise ValueError("need at least 3 pairs")
    H = stats.x.T @ stats.xp
    Hs = 0.5 * (H + H.T)
    vals, vecs = np.linalg.eigh(Hs)
    if vals[1] - vals[0] <= 1e-10 * max(1.0, float(np.max(np.abs(vals)))):
        raise AmbiguousPlaneError("smallest eigenvalue is repeated; plane ambiguous")
    v = vecs[:, 0]
    return SymmetryPlane(v, closed_form_omega(stats, v))


def fibonacci_hemisphere(count: int) -> np.ndarray:
    """``count`` nearly uniform unit vectors with positive z."""
    i = np.arange(count)
    z = (i + 0.5) / count
    r = np.sqrt(1.0 - z * z)
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def brute_force_plane(stats: PairStatistics, directions: int = 10000, omega_steps: int = 200,
                      sigma: float = DEFAULT_SIGMA, block: int = 32) -> SymmetryPlane:
    """Exhaustive argmax of f over a direction grid times an offset grid.

    Directions form a Fibonacci hemisphere; offsets are ``omega_steps``
    uniform values over the range of v.x for all pair endpoints. Since
    f(v, w) <= c * sum_i exp(-min_w f_i / 2s^2) for every w, any direction
    whose bound is below the incumbent is skipped; the result equals a full
    scan. Exact ties go to the lowest (direction, offset) index.
    """
    if directions < 16 or omega_steps < 16:
        raise ValueError("grid counts must be >= 16")
    V = fibonacci_hemisphere(directions)
    n = len(stats)
    two_s2 = 2.0 * sigma * sigma
    const = _norm_const(n, sigma)
    PX = stats.x @ V.T  # (n, D)
    PXP = stats.xp @ V.T
    A = 4.0 * PX * PXP + stats.d[:, None]
    B = PX + PXP
    # min over w of a - 4wb + 4w^2 is a - b^2, reached at w = b/2
    lower = np.maximum(A - B * B, 0.0)
    bound = const * np.exp(-lower / two_s2).sum(axis=0)
    lo = np.minimum(PX.min(axis=0), PXP.min(axis=0))
    hi = np.maximum(PX.max(axis=0), PXP.max(axis=0))
    frac = np.linspace(0.0, 1.0, omega_steps)

    order = np.argsort(-bound, kind="stable")
    best = (-1.0, directions, omega_steps)
    for start in range(0, directions, block):
        idx = order[start:start + block]
        live = bound[idx] >= best[0] * (1.0 - 1e-12)
        if not np.any(live):
            break
        idx = idx[live]
        W = lo[idx, None] + (hi - lo)[idx, None] * frac[None, :]  # (b, S)
        Fi = (A[:, idx, None] - 4.0 * W[None] * B[:, idx, None] + 4.0 * W[None] ** 2)
        vals = const * np.exp(-Fi / two_s2).sum(axis=0)  # (b, S)
        for r, d in enumerate(idx):
            j = int(np.argmax(vals[r]))
            cand = (float(vals[r, j]), int(d), j)
            if cand[0] > best[0] or (cand[0] == best[0] and cand[1:] < best[1:]):
                best = cand
    _, d, j = best
    return SymmetryPlane(V[d], lo[d] + (hi[d] - lo[d]) * frac[j])


# ---------------------------------------------------------------- top level


def _angle(a, b) -> float:
    return math.acos(min(1.0, abs(float(np.dot(a, b)))))


def _initial_normal(stats: PairStatistics, params: EstimatorParams, cloud_points=None):
    if len(stats) < 3:
        diff = stats.x - stats.xp
        ref = diff[np.argmax(np.linalg.norm(diff, axis=1))]
        if np.linalg.norm(ref) == 0:
            raise InitializationError("pairs coincide; no direction information")
        aligned = diff * np.where(diff @ ref >= 0, 1.0, -1.0)[:, None]
        v = aligned.sum(axis=0)
        return v / np.linalg.norm(v), "pair-difference"
    try:
        return init_v_rga(stats.m, params.rga_trim), "rga"
    except InitializationError:
        pts = stats.m if cloud_points is None else np.asarray(cloud_points, dtype=float)
        X = pts - pts.mean(axis=0)
        _, vecs = np.linalg.eigh(X.T @ X)
        sig = params.sigma if params.anneal is None else params.anneal[0]
        scores = []
        for c in range(3):
            u = vecs[:, c]
            scores.append(l2e_objective(stats, u, closed_form_omega(stats, u), sig))
        return vecs[:, int(np.argmax(scores))], "cloud-pca"


def estimate_plane(stats: PairStatistics, params: EstimatorParams | None = None,
                   cloud_points=None, v0=None, omega0: float | None = None,
                   ) -> tuple[SymmetryPlane, EstimateDiagnostics]:
    """Alternate w- and v-updates of the L2E objective until both settle.

    The start normal comes from ``init_v_rga`` on the pair midpoints (with a
    cloud-PCA fallback), or from ``v0`` when given; the start offset is the
    least-squares value unless ``omega0`` is given. With ``params.anneal`` the
    bandwidth shrinks geometrically each outer round down to its floor, and
    convergence is only declared once the floor is reached.
    """
    params = params or EstimatorParams()
    if len(stats) == 0:
        raise ValueError("no correspondences")
    diag = EstimateDiagnostics()
    if v0 is None:
        v, diag.init_method = _initial_normal(stats, params, cloud_points)
    else:
        v, diag.init_method = np.asarray(v0, dtype=float) / np.linalg.norm(v0), "given"
    diag.init_vector = v.copy()
    omega = closed_form_omega(stats, v) if omega0 is None else float(omega0)
    schedule = params.sigma_schedule()
    sigma = next(schedule)
    final_sigma = params.sigma if params.anneal is None else params.anneal[2]
    for it in range(params.outer_max):
        ro = optimize_omega(stats, v, omega, sigma, max_iter=params.inner_max)
        rv = optimize_v(stats, v, ro.value, sigma, max_iter=params.inner_max)
        diag.line_search_failed |= ro.line_search_failed or rv.line_search_failed
        d_angle = _angle(v, rv.value)
        d_omega = abs(ro.value - omega) if np.dot(v, rv.value) >= 0 else abs(ro.value + omega)
        v, omega = rv.value, ro.value
        diag.objective_trace.append(l2e_objective(stats, v, omega, sigma))
        diag.sigma_trace.append(sigma)
        diag.iterations = it + 1
        at_floor = sigma <= final_sigma * (1 + 1e-12) if params.anneal else True
        if at_floor and d_angle < params.tol_angle and d_omega < params.tol_omega:
            diag.converged = True
            break
        sigma = next(schedule)
    # final w at the final v keeps the two updates consistent
    omega = optimize_omega(stats, v, omega, sigma, max_iter=params.inner_max).value
    diag.grad_norm = float(np.linalg.norm(
        riemannian_grad_v(euclidean_grad_v(stats, v, omega, sigma), v)))
    plane = SymmetryPlane(v, omega)
    diag.residual_norms = np.linalg.norm(residual(stats.x, stats.xp, plane), axis=1)
    return plane, diag
