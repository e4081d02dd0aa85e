"""Viewpoint-conditioned star model relating keypoints to the object box.

Offsets are measured from the box center and normalized by box width and
height. For a keypoint with mean offset ``m`` and extent ``x`` the search
region on a test box is the axis-aligned rectangle

    center + m * size  +/-  x * size

with inclusive borders.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCluster, InsufficientData, ParseError, UnknownComponent
from .geometry import BBox, azimuth_error, circular_mean

log = logging.getLogger(__name__)

FORMAT = "spatial/1"
DEFAULT_KAPPA = 2.0
EXTENT_FLOOR = 0.05


@dataclass(frozen=True)
class KeypointCandidate:
    name: str
    x: float
    y: float
    score: float
    image_id: str | None = None

    @property
    def position(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class SpatialAnnotation:
    """One training instance: its box, azimuth and visible 2D keypoints."""

    bbox: BBox
    azimuth: float
    keypoints: dict  # name -> (x, y); only visible ones


@dataclass
class KeypointStats:
    offset: tuple[float, float]
    std: tuple[float, float]
    extent: tuple[float, float]
    visibility: float


@dataclass
class SpatialComponent:
    id: int
    azimuth_center: float
    keypoints: dict = field(default_factory=dict)  # name -> KeypointStats
    size: int = 0

    def region(self, name, box: BBox):
        """Absolute ``(x0, y0, x1, y1)`` search rectangle, or None if never visible."""
        st = self.keypoints.get(name)
        if st is None or st.visibility <= 0:
            return None
        cx, cy = box.center
        mx = cx + st.offset[0] * box.width
        my = cy + st.offset[1] * box.height
        hx, hy = st.extent[0] * box.width, st.extent[1] * box.height
        return (mx - hx, my - hy, mx + hx, my + hy)


@dataclass
class SpatialModel:
    cls: str
    components: list
    kappa: float = DEFAULT_KAPPA
    floor: float = EXTENT_FLOOR

    def component(self, cid) -> SpatialComponent:
        for c in self.components:
            if c.id == cid:
                return c
        raise UnknownComponent(f"class {self.cls!r} has no component {cid!r}")

    def to_dict(self):
        return {
            "class": self.cls,
            "kappa": self.kappa,
            "floor": self.floor,
            "components": [
                {
                    "id": c.id,
                    "azimuth_center": c.azimuth_center,
                    "size": c.size,
                    "keypoints": {
                        n: {"offset": list(s.offset), "std": list(s.std),
                            "extent": list(s.extent), "visibility": s.visibility}
                        for n, s in c.keypoints.items()
                    },
                }
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d):
        comps = []
        for c in d["components"]:
            kps = {n: KeypointStats(tuple(s["offset"]), tuple(s["std"]), tuple(s["extent"]),
                                    float(s["visibility"]))
                   for n, s in c["keypoints"].items()}
            comps.append(SpatialComponent(int(c["id"]), float(c["azimuth_center"]), kps,
                                          int(c.get("size", 0))))
        return cls(d["class"], comps, float(d.get("kappa", DEFAULT_KAPPA)),
                   float(d.get("floor", EXTENT_FLOOR)))


def circular_kmeans(azimuths, C, max_iter=100, history=None):
    """k-means on the circle with equally spaced deterministic seeds.

    Points go to the center with the smallest angular distance (lowest index
    on ties); centers move to the circular mean of their members. The
    objective ``sum(1 - cos(delta))`` is non-increasing under both steps.
    Per-iteration objectives are appended to ``history`` when given.

    Returns ``(centers, labels)``.
    """
    az = np.asarray(azimuths, dtype=float) % 360.0
    if C < 1:
        raise ValueError("need at least one cluster")
    centers = np.arange(C) * (360.0 / C)
    labels = None
    for _ in range(max_iter):
        dist = np.abs(az[:, None] - centers[None, :]) % 360.0
        dist = np.minimum(dist, 360.0 - dist)
        new = np.argmin(dist, axis=1)
        if history is not None:
            history.append(float(np.sum(1.0 - np.cos(np.radians(dist[np.arange(len(az)), new])))))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(C):
            members = az[labels == k]
            if len(members) == 0:
                raise EmptyCluster(f"cluster {k} (center {centers[k]:.1f}) is empty; reduce C")
            centers[k] = circular_mean(members)
    return centers, labels


def fit_spatial(annotations, C, kappa=DEFAULT_KAPPA, cls="", floor=EXTENT_FLOOR, names=None):
    """Learn per-component keypoint offset statistics.

    Parameters
    ----------
    annotations : list of SpatialAnnotation
    C : int
        Number of viewpoint components.
    kappa : float
        Region half-extent in units of offset standard deviation.
    names : list of str, optional
        Keypoint vocabulary; defaults to every name seen in the annotations.
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    if not annotations:
        raise InsufficientData("no annotations to fit a spatial model")
    if names is None:
        names = []
        for a in annotations:
            names.extend(n for n in a.keypoints if n not in names)
    centers, labels = circular_kmeans([a.azimuth for a in annotations], C)
    comps = []
    for k in range(C):
        members = [a for a, lab in zip(annotations, labels) if lab == k]
        comp = SpatialComponent(k, float(centers[k]), size=len(members))
        for name in names:
            offs = np.array([
                ((a.keypoints[name][0] - a.bbox.center[0]) / a.bbox.width,
                 (a.keypoints[name][1] - a.bbox.center[1]) / a.bbox.height)
                for a in members if name in a.keypoints
            ]).reshape(-1, 2)
            vis = len(offs) / len(members)
            if len(offs) == 0:
                log.info("class %s component %d: keypoint %s never visible", cls, k, name)
                comp.keypoints[name] = KeypointStats((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), 0.0)
                continue
            mean, std = offs.mean(axis=0), offs.std(axis=0)
            extent = np.maximum(kappa * std, floor)
            comp.keypoints[name] = KeypointStats(tuple(mean.tolist()), tuple(std.tolist()),
                                                 tuple(extent.tolist()), vis)
        comps.append(comp)
    return SpatialModel(cls, comps, float(kappa), float(floor))


def pool_keypoints(model: SpatialModel, component_id, box: BBox, candidates):
    """Strongest candidate per keypoint name inside its search region.

    Candidates are compared only against others of the same name; on equal
    scores the earliest one wins. Names with no candidate inside are absent.
    """
    comp = model.component(component_id)
    best = {}
    for cand in candidates:
        reg = comp.region(cand.name, box)
        if reg is None:
            continue
        if not (reg[0] <= cand.x <= reg[2] and reg[1] <= cand.y <= reg[3]):
            continue
        cur = best.get(cand.name)
        if cur is None or cand.score > cur.score:
            best[cand.name] = cand
    return best


def select_component_guided(model: SpatialModel, azimuth):
    """Component whose center is circularly closest to ``azimuth``; lowest id on ties."""
    if not model.components:
        raise UnknownComponent("spatial model has no components")
    return min(model.components, key=lambda c: (azimuth_error(c.azimuth_center, azimuth), c.id)).id


def save_spatial(models, path, config=None):
    d = {"format": FORMAT, "models": [m.to_dict() for m in models]}
    if config is not None:
        d["config"] = config
    Path(path).write_text(json.dumps(d, indent=1))


def load_spatial(path):
    """Read a spatial model file; returns ``{class: SpatialModel}``."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read spatial model {path}: {exc}") from exc
    if d.get("format") != FORMAT:
        raise ParseError(f"{path}: expected format {FORMAT!r}, found {d.get('format')!r}")
    try:
        models = [SpatialModel.from_dict(m) for m in d["models"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return {m.cls: m for m in models}
