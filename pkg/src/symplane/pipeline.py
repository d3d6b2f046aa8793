"""End-to-end plane detection: normalize, spectrum, keypoints, matches, L2E fit."""

from __future__ import annotations

import io as _io
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import descriptors, estimator, matching, refine, spectral
from .geometry import CorrespondenceSet, PointCloud, SymmetryPlane, normalize_cloud
from .io import format_value

STAGES = ("normalize", "filter", "laplacian", "eigens", "keypoints", "descriptors", "matching", "estimate", "refine")


@dataclass(frozen=True)
class DetectConfig:
    """Every tunable of the detector; ``None`` means "derive from the data"."""

    seed: int = 0
    neighbors: int = spectral.DEFAULT_NEIGHBORS
    k_eig: int = spectral.DEFAULT_K
    eig_method: str = "auto"
    p_times: int = descriptors.DEFAULT_P
    k_signs: int = descriptors.DEFAULT_KS
    iss_radius: float | None = None
    iss_gamma21: float = descriptors.DEFAULT_GAMMA
    iss_gamma32: float = descriptors.DEFAULT_GAMMA
    max_keypoints: int = descriptors.MAX_KEYPOINTS
    q: int | None = None
    penalty_b: float = matching.DEFAULT_PENALTY
    spatial_guard: float | None = None
    match_method: str = "auto"
    sigma: float = estimator.DEFAULT_SIGMA
    anneal: tuple[float, float, float] | None = None
    outer_max: int = 50
    tol_angle: float = 1e-4
    tol_omega: float = 1e-6
    outlier_filter: bool = True
    refine: bool = True
    pca_hypotheses: bool = True
    pair_hypotheses: int = 12
    hypothesis_neighbors: int = 10
    vote_hypotheses: int = 6
    refine_sigma: float = 0.02

    def __post_init__(self):
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if self.k_eig < 2:
            raise ValueError("k_eig must be >= 2")
        if self.p_times < 2:
            raise ValueError("p_times must be >= 2")
        if not 1 <= self.k_signs < self.k_eig:
            raise ValueError("need 1 <= k_signs < k_eig")
        if self.q is not None and self.q < 1:
            raise ValueError("q must be >= 1")
        if self.iss_radius is not None and not self.iss_radius > 0:
            raise ValueError("iss_radius must be positive")
        if self.max_keypoints < 2:
            raise ValueError("max_keypoints must be >= 2")
        # the estimator and matcher validate the rest
        self.estimator_params()
        matching.MatchParams(q=1, penalty_b=self.penalty_b)

    def estimator_params(self) -> estimator.EstimatorParams:
        return estimator.EstimatorParams(
            sigma=self.sigma, anneal=self.anneal, outer_max=self.outer_max,
            tol_angle=self.tol_angle, tol_omega=self.tol_omega, seed=self.seed,
        )

    @classmethod
    def field_types(cls) -> dict[str, str]:
        return {f.name: str(f.type) for f in fields(cls)}

    def with_overrides(self, **kw) -> DetectConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(eq=False)
class DetectionResult:
    plane: SymmetryPlane
    plane_normalized: SymmetryPlane
    normalization: object
    keypoints: list
    correspondences: CorrespondenceSet
    diagnostics: estimator.EstimateDiagnostics
    timing: dict[str, float] = field(default_factory=dict)
    config: DetectConfig | None = None
    n_points: int = 0
    eigenvalues: np.ndarray | None = None
    n_filtered: int = 0
    refine_info: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged

    @property
    def wall_time(self) -> float:
        return self.timing.get("total", float("nan"))


def detect(cloud: PointCloud, config: DetectConfig | None = None) -> DetectionResult:
    """Detect the dominant reflection plane of ``cloud``.

    Correspondences are indices into ``cloud``; the plane is reported both in
    the input frame and in the normalized frame (centroid at the origin, unit
    bounding-box diagonal) where sigma and the tolerances apply.
    """
    cfg = config or DetectConfig()
    timing = {}
    t_start = t0 = time.perf_counter()

    def lap(name):
        nonlocal t0
        t1 = time.perf_counter()
        timing[name] = t1 - t0
        t0 = t1

    full, tf = normalize_cloud(cloud)
    lap("normalize")
    keep = np.arange(len(full))
    if cfg.outlier_filter:
        keep = refine.filter_outliers(full.points, k=cfg.neighbors)
    ncloud = full.subset(keep)
    lap("filter")
    L = spectral.build_laplacian(ncloud, cfg.neighbors)
    lap("laplacian")
    k = min(cfg.k_eig, len(ncloud) - 1)
    basis = spectral.solve_eigens(L, k, seed=cfg.seed, method=cfg.eig_method)
    lap("eigens")
    kps = descriptors.detect_iss_keypoints(
        ncloud, radius=cfg.iss_radius, gamma21=cfg.iss_gamma21, gamma32=cfg.iss_gamma32,
        max_keypoints=cfg.max_keypoints,
    )
    if len(kps) < 2:
        raise descriptors.NoKeypointsError(f"only {len(kps)} keypoint(s); need at least 2")
    idx = np.array([kp.index for kp in kps])
    lap("keypoints")
    H, _ = descriptors.hks_matrix(basis, idx, cfg.p_times)
    S = descriptors.sign_matrix(basis, idx, cfg.k_signs)
    cost = matching.build_cost_matrix(H, S, cfg.penalty_b)
    lap("descriptors")
    q = cfg.q if cfg.q is not None else matching.default_q(len(kps))
    params = matching.MatchParams(q=q, penalty_b=cfg.penalty_b, spatial_guard=cfg.spatial_guard,
                                  method=cfg.match_method)
    kc = matching.solve_matching(cost, params, positions=ncloud.points[idx])
    local = CorrespondenceSet(idx[kc.pairs], kc.costs, disjoint=True)
    corrs = CorrespondenceSet(keep[local.pairs], kc.costs, disjoint=True)
    lap("matching")
    stats = estimator.PairStatistics.from_correspondences(ncloud.points, local)
    plane_n, diag = estimator.estimate_plane(stats, cfg.estimator_params(), cloud_points=ncloud.points)
    lap("estimate")
    refine_info = {}
    if cfg.refine:
        cands = [plane_n]
        if cfg.pair_hypotheses > 0:
            hyp_pairs = local.pairs
            if cfg.hypothesis_neighbors > 0:
                hyp_pairs = np.vstack([hyp_pairs, idx[matching.nearest_feasible(cost, cfg.hypothesis_neighbors)]])
            cands += refine.bisector_planes(ncloud.points, hyp_pairs, cfg.pair_hypotheses,
                                            cfg.refine_sigma, ncloud.tree)
        if cfg.vote_hypotheses > 0:
            cands += refine.keypoint_vote_planes(ncloud.points, idx, cfg.vote_hypotheses)
        if cfg.pca_hypotheses:
            cands += refine.pca_planes(ncloud.points)
        plane_n, refine_info = refine.select_and_refine(
            ncloud.points, cands, sigma=cfg.refine_sigma, tree=ncloud.tree)
    lap("refine")
    # report keypoints in the caller's frame and indexing
    kps = [descriptors.Keypoint(int(keep[kp.index]), cloud.points[keep[kp.index]].copy(), kp.saliency)
           for kp in kps]
    timing["total"] = time.perf_counter() - t_start
    return DetectionResult(
        plane=tf.plane_inverse(plane_n), plane_normalized=plane_n, normalization=tf,
        keypoints=kps, correspondences=corrs, diagnostics=diag, timing=timing, config=cfg,
        n_points=len(cloud), eigenvalues=basis.eigenvalues, n_filtered=len(cloud) - len(keep),
        refine_info=refine_info,
    )


# ------------------------------------------------------------- result files


def format_result(res: DetectionResult, inline_timing: bool = False) -> str:
    """Render the result file body.

    Wall-clock times differ between runs, so by default the [timing] section
    lists only the stage order; ``inline_timing`` writes the seconds too.
    """
    out = _io.StringIO()
    w = out.write
    w("[plane]\n")
    for key, val in (
        ("normal", res.plane.normal), ("offset", res.plane.offset),
        ("normal_normalized", res.plane_normalized.normal),
        ("offset_normalized", res.plane_normalized.offset),
        ("norm_centroid", res.normalization.centroid), ("norm_scale", res.normalization.scale),
        ("n_points", res.n_points),
    ):
        w(f"{key}={format_value(val)}\n")
    w("\n[diagnostics]\n")
    w(res.diagnostics.report())
    w(f"keypoints={len(res.keypoints)}\n")
    w(f"pairs={len(res.correspondences)}\n")
    w(f"filtered_points={res.n_filtered}\n")
    if res.refine_info:
        w(f"refine_candidates={len(res.refine_info['candidate_scores'])}\n")
        w(f"refine_chosen={res.refine_info['chosen']}\n")
        w(f"refine_fine_rounds={res.refine_info['fine_rounds']}\n")
        w(f"refine_candidate_scores={format_value(res.refine_info['candidate_scores'])}\n")
    if res.config is not None:
        for k, v in asdict(res.config).items():
            w(f"config_{k}={'none' if v is None else format_value(v)}\n")
    w("\n[timing]\n")
    w(f"stages={' '.join(STAGES)}\n")
    if inline_timing:
        for s in (*STAGES, "total"):
            w(f"{s}={format_value(res.timing.get(s, math.nan))}\n")
    w("\n[correspondences]\n")
    w("i,j,cost\n")
    costs = res.correspondences.costs
    if costs is None:
        costs = np.full(len(res.correspondences), math.nan)
    for (i, j), c in zip(res.correspondences.pairs.tolist(), costs.tolist()):
        w(f"{i},{j},{c!r}\n")
    return out.getvalue()


def format_timing(res: DetectionResult) -> str:
    return "".join(f"{s}={format_value(res.timing.get(s, math.nan))}\n" for s in (*STAGES, "total"))


def write_result(path, res: DetectionResult, inline_timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_result(res, inline_timing))


def read_result(path) -> dict:
    """Parse a result file into {section: {key: value}} plus a ``pairs`` array."""
    sections: dict = {}
    current = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = {}
                continue
            if current == "correspondences":
                if line.startswith("i,"):
                    continue
                i, j, c = line.split(",")
                rows.append((int(i), int(j), float(c)))
            elif current is not None and "=" in line:
                k, v = line.split("=", 1)
                sections[current][k] = v
    sections["pairs"] = np.array([(i, j) for i, j, _ in rows], dtype=np.int64).reshape(-1, 2)
    sections["costs"] = np.array([c for _, _, c in rows], dtype=float)
    return sections


def plane_from_result(parsed: dict) -> SymmetryPlane:
    from .io import floats

    p = parsed["plane"]
    return SymmetryPlane(floats(p["normal"]), float(p["offset"]))
