"""Lift a 2D detection to 3D: pick a prototype and fit its camera to keypoints.

For every candidate prototype the camera parameters are fitted by bounded
nonlinear least squares (scipy's trust-region reflective solver) on the
reprojection error of the pooled keypoints; the prototype with the lowest
mean reprojection error wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    DivergedBehindCamera,
    MissingPriors,
    NoVisibleKeypoints,
    TooFewCorrespondences,
)
from .geometry import (
    DEFAULT_FOCAL,
    EPS_DEPTH,
    BBox,
    CameraPose,
    project_points,
    project_points_jacobian,
    to_camera,
)
from .regression import predict
from .spatial import pool_keypoints, select_component_guided

log = logging.getLogger(__name__)

STRATEGIES = ("guided", "best-objective")
ROBUST = ("l2", "l1-smooth")


@dataclass(frozen=True)
class Correspondence:
    name: str
    x: float
    y: float
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite keypoint {self.name}")
        if not (self.weight >= 0):
            raise ValueError("correspondence weight must be >= 0")


@dataclass(frozen=True)
class ClassPriors:
    elevation: float
    distance: float

    def __post_init__(self):
        if not -90.0 <= self.elevation < 90.0:
            raise ValueError(f"prior elevation out of range: {self.elevation}")
        if not self.distance > 0:
            raise ValueError(f"prior distance must be > 0: {self.distance}")


@dataclass(frozen=True)
class LiftConfig:
    focal: float = DEFAULT_FOCAL
    robust: str = "l2"
    huber_delta: float = 5.0
    restart_offsets: tuple = (0.0, 15.0, -15.0)
    theta_limit: float = 45.0
    distance_range: tuple = (0.5, 10.0)
    translation_margin: float = 2.0
    gtol: float = 1e-8
    xtol: float = 1e-10
    max_iter: int = 200
    use_scores: bool = False


@dataclass
class PoseBounds:
    """Box constraints on the camera, in degrees / world units / pixels.

    Azimuth is always free; it wraps after the fit.
    """

    elevation: tuple = (-90.0, 90.0)
    theta: tuple = (-45.0, 45.0)
    distance: tuple = (1e-3, np.inf)
    tx: tuple = (-np.inf, np.inf)
    ty: tuple = (-np.inf, np.inf)

    @classmethod
    def from_config(cls, cfg: LiftConfig, prior_distance, image_size=None):
        b = cls(theta=(-cfg.theta_limit, cfg.theta_limit),
                distance=(cfg.distance_range[0] * prior_distance,
                          cfg.distance_range[1] * prior_distance))
        if image_size is not None:
            w, h = image_size
            m = cfg.translation_margin
            b.tx = (-m * w, (1 + m) * w)
            b.ty = (-m * h, (1 + m) * h)
        return b

    def arrays(self):
        e_hi = min(math.radians(self.elevation[1]), math.nextafter(math.pi / 2, 0.0))
        lb = np.array([-np.inf, math.radians(self.elevation[0]), math.radians(self.theta[0]),
                       self.distance[0], self.tx[0], self.ty[0]])
        ub = np.array([np.inf, e_hi, math.radians(self.theta[1]),
                       self.distance[1], self.tx[1], self.ty[1]])
        return lb, ub


@dataclass
class PoseFit:
    pose: CameraPose
    residual: float
    converged: bool
    cost: float
    initial_cost: float
    initial_residual: float
    nfev: int = 0


@dataclass
class Detection:
    image_id: str
    cls: str
    bbox: BBox
    score: float = 1.0
    id: str | int | None = None
    azimuth: float | None = None  # external viewpoint estimate, if any


@dataclass
class LiftResult:
    detection: Detection
    prototype_id: str
    pose: CameraPose
    residual: float
    converged: bool
    component_id: int
    correspondences: list
    reprojections: dict  # name -> (u, v)
    pooled: dict = field(default_factory=dict)  # name -> KeypointCandidate
    azimuth_estimate: float | None = None

    def to_dict(self):
        det = self.detection
        return {
            "image_id": det.image_id,
            "detection_id": det.id,
            "class": det.cls,
            "bbox": det.bbox.as_list(),
            "score": det.score,
            "prototype_id": self.prototype_id,
            "component_id": self.component_id,
            "pose": self.pose.to_dict(),
            "azimuth": self.pose.azimuth,
            "azimuth_estimate": self.azimuth_estimate,
            "residual": self.residual,
            "converged": self.converged,
            "keypoints": [
                {"name": c.name, "x": c.x, "y": c.y,
                 "score": self.pooled[c.name].score if c.name in self.pooled else None,
                 "reprojection": list(self.reprojections[c.name])}
                for c in self.correspondences
            ],
        }


def _huber_scale(n, delta):
    """Per-correspondence factor g(n) with g(n)^2 n^2 = 2 huber(n), and g'(n)."""
    g = np.ones_like(n)
    dg = np.zeros_like(n)
    big = n > delta
    if np.any(big):
        nb = n[big]
        s = np.sqrt(2.0 * delta * nb - delta * delta)
        g[big] = s / nb
        dg[big] = delta / (s * nb) - s / nb ** 2
    return g, dg


class _Problem:
    """Stacked reprojection residuals for one prototype/correspondence set."""

    def __init__(self, X, uv, weights, focal, robust="l2", delta=5.0):
        self.X, self.uv, self.focal = X, uv, focal
        self.sw = np.sqrt(weights)
        self.robust, self.delta = robust, delta

    def diffs(self, p):
        return project_points(p, self.X, self.focal, min_depth=EPS_DEPTH) - self.uv

    def residuals(self, p):
        d = self.diffs(p)
        if self.robust == "l1-smooth":
            g, _ = _huber_scale(np.linalg.norm(d, axis=1), self.delta)
            d = d * g[:, None]
        return (d * self.sw[:, None]).ravel()

    def jacobian(self, p):
        J = project_points_jacobian(p, self.X, self.focal, min_depth=EPS_DEPTH)
        if self.robust == "l1-smooth":
            d = self.diffs(p)
            n = np.linalg.norm(d, axis=1)
            g, dg = _huber_scale(n, self.delta)
            dn = np.einsum("ni,nij->nj", d, J) / np.where(n > 0, n, 1.0)[:, None]
            J = g[:, None, None] * J + (dg[:, None] * d)[:, :, None] * dn[:, None, :]
        return (J * self.sw[:, None, None]).reshape(-1, 6)

    def cost(self, p):
        r = self.residuals(p)
        return 0.5 * float(r @ r)

    def mean_distance(self, p):
        n = np.linalg.norm(self.diffs(p), axis=1)
        w = self.sw ** 2
        return float(np.sum(w * n) / np.sum(w))

    def all_behind(self, p):
        return bool(np.all(to_camera(p, self.X)[:, 2] <= EPS_DEPTH))


def _solve(problem, p0, free, lb, ub, cfg):
    p0 = np.clip(p0, lb, ub)
    if not np.any(free):
        return p0, True, 0

    def full(q):
        p = p0.copy()
        p[free] = q
        return p

    res = least_squares(
        lambda q: problem.residuals(full(q)),
        p0[free],
        jac=lambda q: problem.jacobian(full(q))[:, free],
        bounds=(lb[free], ub[free]),
        method="trf",
        x_scale="jac",
        gtol=cfg.gtol,
        xtol=cfg.xtol,
        ftol=1e-15,
        max_nfev=cfg.max_iter,
    )
    p = full(res.x)
    if problem.cost(p) > problem.cost(p0):
        # trf only accepts descending steps; guard the invariant anyway
        return p0, False, res.nfev
    return p, res.status > 0, res.nfev


def _setup(proto, corrs, cfg):
    if len(corrs) < 3:
        raise TooFewCorrespondences(f"need >= 3 correspondences, got {len(corrs)}")
    usable = [c for c in corrs if c.name in proto.keypoints3d]
    if not usable:
        raise NoVisibleKeypoints(f"no correspondence names on prototype {proto.id!r}")
    if len(usable) < 3:
        raise TooFewCorrespondences(
            f"only {len(usable)} correspondences match prototype {proto.id!r}")
    X = proto.keypoint_array([c.name for c in usable])
    uv = np.array([[c.x, c.y] for c in usable], dtype=float)
    w = np.array([c.weight for c in usable], dtype=float)
    if not np.any(w > 0):
        raise TooFewCorrespondences("all correspondence weights are zero")
    return _Problem(X, uv, w, cfg.focal, cfg.robust, cfg.huber_delta), usable


def fit_pose(proto, corrs, init: CameraPose, bounds: PoseBounds | None = None,
             config: LiftConfig | None = None) -> PoseFit:
    """Bounded least-squares camera fit of ``proto`` to 2D correspondences.

    Restarts from the azimuth offsets in ``config.restart_offsets`` and
    keeps the lowest objective. ``residual`` is the weighted mean pixel
    distance between keypoints and reprojections.
    """
    cfg = config or LiftConfig(focal=init.focal)
    if cfg.robust not in ROBUST:
        raise ValueError(f"unknown robust mode {cfg.robust!r}")
    problem, _ = _setup(proto, corrs, cfg)
    bounds = bounds or PoseBounds(theta=(-cfg.theta_limit, cfg.theta_limit))
    lb, ub = bounds.arrays()
    p_init = np.clip(init.to_vector(), lb, ub)
    free = np.ones(6, dtype=bool)

    best = None
    for off in cfg.restart_offsets:
        p0 = p_init.copy()
        p0[0] += math.radians(off)
        p, conv, nfev = _solve(problem, p0, free, lb, ub, cfg)
        if problem.all_behind(p):
            continue
        cost = problem.cost(p)
        if best is None or cost < best[1]:
            best = (p, cost, conv, nfev)
    if best is None:
        raise DivergedBehindCamera(f"all restarts for prototype {proto.id!r} "
                                   "ended with every keypoint behind the camera")
    p, cost, conv, nfev = best
    init_cost = problem.cost(p_init)
    # the reported residual must never be worse than the starting point's
    if cost > init_cost or problem.mean_distance(p) > problem.mean_distance(p_init):
        p, cost, conv = p_init, init_cost, False
    return PoseFit(CameraPose.from_vector(p, cfg.focal), problem.mean_distance(p), conv,
                   cost, init_cost, problem.mean_distance(p_init), nfev)


def init_pose(azimuth_estimate, priors: ClassPriors, proto, corrs,
              bounds: PoseBounds | None = None, config: LiftConfig | None = None) -> CameraPose:
    """Initial camera from the viewpoint estimate and class priors.

    Angles come from the estimate (azimuth), the class mean (elevation) and
    zero (in-plane rotation). Distance and translation are then fitted with
    the angles held fixed, starting from the prior distance and the
    keypoint centroid.
    """
    if priors is None:
        raise MissingPriors("no class priors available")
    cfg = config or LiftConfig()
    problem, usable = _setup(proto, corrs, cfg)
    w = np.array([c.weight for c in usable])
    cx = float(np.sum(w * [c.x for c in usable]) / np.sum(w))
    cy = float(np.sum(w * [c.y for c in usable]) / np.sum(w))
    start = CameraPose(azimuth_estimate, priors.elevation, 0.0, priors.distance, (cx, cy), cfg.focal)
    bounds = bounds or PoseBounds.from_config(cfg, priors.distance)
    lb, ub = bounds.arrays()
    free = np.array([False, False, False, True, True, True])
    p, _, _ = _solve(problem, start.to_vector(), free, lb, ub, cfg)
    return CameraPose.from_vector(p, cfg.focal)


def _lift_component(det, model, cid, candidates, registry, priors, azimuth, cfg, image_size):
    pooled = pool_keypoints(model, cid, det.bbox, candidates)
    if not pooled:
        raise NoVisibleKeypoints(f"no keypoint candidates inside any region of component {cid}")
    if azimuth is None:
        azimuth = model.component(cid).azimuth_center
    corrs = [Correspondence(n, c.x, c.y, c.score if cfg.use_scores else 1.0)
             for n, c in pooled.items()]
    bounds = PoseBounds.from_config(cfg, priors.distance, image_size)
    best, last_err = None, None
    for proto in registry.prototypes(det.cls):
        try:
            init = init_pose(azimuth, priors, proto, corrs, bounds, cfg)
            fit = fit_pose(proto, corrs, init, bounds, cfg)
        except (TooFewCorrespondences, NoVisibleKeypoints, DivergedBehindCamera) as exc:
            last_err = exc
            continue
        if best is None or fit.residual < best[1].residual:
            best = (proto, fit)
    if best is None:
        raise last_err
    proto, fit = best
    used = [c for c in corrs if c.name in proto.keypoints3d]
    uv = project_points(fit.pose.to_vector(), proto.keypoint_array([c.name for c in used]),
                        cfg.focal, min_depth=EPS_DEPTH)
    return LiftResult(det, proto.id, fit.pose, fit.residual, fit.converged, cid, used,
                      {c.name: (float(u), float(v)) for c, (u, v) in zip(used, uv)},
                      pooled)


def lift(detection: Detection, candidates, model, registry, priors, strategy="guided",
         regressor=None, features=None, config: LiftConfig | None = None,
         image_size=None) -> LiftResult:
    """Full 3D hypothesis for one detection.

    Parameters
    ----------
    candidates : list of KeypointCandidate
        Keypoint proposals for the detection's image.
    model : SpatialModel
        Spatial model of the detection's class.
    priors : ClassPriors or dict
        Class priors, or a mapping class -> ClassPriors.
    strategy : {"guided", "best-objective"}
        ``guided`` picks the spatial component nearest to the viewpoint
        estimate; ``best-objective`` runs every component and keeps the
        lowest residual.
    regressor, features :
        Optional azimuth regressor and this detection's feature vector. When
        absent, ``detection.azimuth`` serves as the viewpoint estimate.
    """
    cfg = config or LiftConfig()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if isinstance(priors, dict):
        if detection.cls not in priors:
            raise MissingPriors(f"no priors for class {detection.cls!r}")
        priors = priors[detection.cls]
    if priors is None:
        raise MissingPriors(f"no priors for class {detection.cls!r}")
    registry.prototypes(detection.cls)  # NoProtoForClass early

    estimate = detection.azimuth
    if regressor is not None and features is not None:
        estimate = predict(regressor, features)

    if strategy == "guided":
        if estimate is None:
            raise ValueError("guided lifting needs a viewpoint estimate")
        cids = [select_component_guided(model, estimate)]
    else:
        cids = [c.id for c in model.components]

    best, last_err = None, None
    for cid in cids:
        try:
            res = _lift_component(detection, model, cid, candidates, registry, priors,
                                  estimate, cfg, image_size)
        except (TooFewCorrespondences, NoVisibleKeypoints, DivergedBehindCamera) as exc:
            last_err = exc
            continue
        if best is None or res.residual < best.residual:
            best = res
    if best is None:
        raise last_err
    best.azimuth_estimate = estimate
    return best
