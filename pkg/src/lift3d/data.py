"""Dataset, detection and candidate files plus the run configuration.

Dataset directory layout::

    images.json    [{id, width, height, file}]
    objects.jsonl  {image_id, class, bbox, azimuth, elevation, theta, distance,
                    difficult, keypoints: {name: {x, y, visible}},
                    mask?: relative PBM path, prototype?: prototype id}
    classes.json   optional {class: [keypoint names]}
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DanglingReference, SchemaError
from .geometry import BBox, normalize_azimuth, normalize_theta
from .lifting import ClassPriors, Detection, LiftConfig
from .metrics import GroundTruthObject, ScoredPrediction
from .prototypes import read_pbm, write_pbm
from .spatial import KeypointCandidate, SpatialAnnotation

log = logging.getLogger(__name__)

KEYPOINT_BOX_FRACTION = 0.30


@dataclass(frozen=True)
class ImageInfo:
    id: str
    width: int
    height: int
    file: str | None = None


@dataclass
class Dataset:
    images: dict  # id -> ImageInfo
    objects: list  # GroundTruthObject
    vocabulary: dict = field(default_factory=dict)  # class -> [keypoint names]

    def classes(self):
        seen = []
        for o in self.objects:
            if o.cls not in seen:
                seen.append(o.cls)
        return seen

    def objects_of(self, cls):
        return [o for o in self.objects if o.cls == cls]

    def priors(self):
        """Per-class mean elevation and mean distance of the ground truth."""
        out = {}
        for cls in self.classes():
            objs = self.objects_of(cls)
            dists = [o.distance for o in objs if o.distance is not None]
            if not dists:
                log.warning("class %s has no distance annotations; no priors", cls)
                continue
            out[cls] = ClassPriors(float(np.mean([o.elevation for o in objs])), float(np.mean(dists)))
        return out

    def spatial_annotations(self, cls):
        return [
            SpatialAnnotation(o.bbox, o.azimuth,
                              {n: (x, y) for n, (x, y, vis) in o.keypoints.items() if vis})
            for o in self.objects_of(cls) if not o.difficult
        ]


def keypoint_box(kp, obj_box: BBox, fraction=KEYPOINT_BOX_FRACTION) -> BBox:
    """Square centered on ``kp`` whose area is ``fraction`` of the object box area.

    The square is not clipped to the image.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    half = math.sqrt(fraction * obj_box.area) / 2.0
    x, y = float(kp[0]), float(kp[1])
    return BBox(x - half, y - half, x + half, y + half)


def _field(rec, name, path, kind=None):
    if name not in rec:
        raise SchemaError("missing field", path, name)
    v = rec[name]
    if kind is not None and not isinstance(v, kind):
        raise SchemaError(f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}",
                          path, name)
    return v


def _bbox(v, path, name="bbox"):
    try:
        return BBox(*[float(x) for x in v])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid box {v!r}: {exc}", path, name) from None


def read_jsonl(path):
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except ValueError as exc:
                raise SchemaError(f"invalid JSON: {exc}", f"{path}:{n}") from None
    return out


def write_jsonl(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")


def _angle(rec, name, where, normalize):
    v = float(_field(rec, name, where, (int, float)))
    n = normalize(v)
    if n != v:
        log.warning("%s: %s %.6g normalized to %.6g", where, name, v, n)
    return n


def parse_object(rec, where="object", vocabulary=None, base=None, load_masks=True):
    cls = _field(rec, "class", where, str)
    kps = {}
    for name, kp in (rec.get("keypoints") or {}).items():
        if vocabulary is not None and cls in vocabulary and name not in vocabulary[cls]:
            raise SchemaError(f"keypoint {name!r} not in vocabulary of class {cls!r}", where, "keypoints")
        try:
            kps[name] = (float(kp["x"]), float(kp["y"]), bool(kp.get("visible", True)))
        except (KeyError, TypeError, ValueError):
            raise SchemaError(f"malformed keypoint {name!r}", where, "keypoints") from None
    elev = float(rec.get("elevation", 0.0))
    if not -90.0 <= elev < 90.0:
        raise SchemaError(f"elevation {elev} outside [-90, 90)", where, "elevation")
    mask = rec.get("mask")
    if mask is not None and load_masks and base is not None:
        mask = read_pbm(Path(base) / mask)
    dist = rec.get("distance")
    return GroundTruthObject(
        image_id=str(_field(rec, "image_id", where)),
        cls=cls,
        bbox=_bbox(_field(rec, "bbox", where), where),
        azimuth=_angle(rec, "azimuth", where, normalize_azimuth) if "azimuth" in rec else 0.0,
        elevation=elev,
        theta=_angle(rec, "theta", where, normalize_theta) if "theta" in rec else 0.0,
        distance=None if dist is None else float(dist),
        keypoints=kps,
        difficult=bool(rec.get("difficult", False)),
        mask=mask,
        prototype_id=rec.get("prototype"),
        id=rec.get("id"),
    )


def load_dataset(path, load_masks=True) -> Dataset:
    """Read and validate a dataset directory."""
    path = Path(path)
    try:
        raw_images = json.loads((path / "images.json").read_text())
    except (OSError, ValueError) as exc:
        raise SchemaError(f"cannot read images.json: {exc}", path / "images.json") from None
    images = {}
    for n, im in enumerate(raw_images):
        where = f"{path / 'images.json'}[{n}]"
        iid = str(_field(im, "id", where))
        w, h = _field(im, "width", where, int), _field(im, "height", where, int)
        if w <= 0 or h <= 0:
            raise SchemaError("image dimensions must be positive", where, "width")
        images[iid] = ImageInfo(iid, w, h, im.get("file"))
    vocab = None
    if (path / "classes.json").is_file():
        vocab = {k: list(v) for k, v in json.loads((path / "classes.json").read_text()).items()}
    objects = []
    for n, rec in enumerate(read_jsonl(path / "objects.jsonl")):
        where = f"{path / 'objects.jsonl'}:{n + 1}"
        obj = parse_object(rec, where, vocab, path, load_masks)
        if obj.image_id not in images:
            raise DanglingReference(f"{where}: unknown image id {obj.image_id!r}")
        if obj.id is None:
            obj.id = n
        objects.append(obj)
    return Dataset(images, objects, vocab or {})


def save_dataset(ds: Dataset, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "images.json").write_text(json.dumps([asdict(im) for im in ds.images.values()], indent=1))
    if ds.vocabulary:
        (path / "classes.json").write_text(json.dumps(ds.vocabulary, indent=1))
    recs = []
    for n, o in enumerate(ds.objects):
        rec = {
            "id": o.id if o.id is not None else n,
            "image_id": o.image_id,
            "class": o.cls,
            "bbox": o.bbox.as_list(),
            "azimuth": o.azimuth,
            "elevation": o.elevation,
            "theta": o.theta,
            "distance": o.distance,
            "difficult": o.difficult,
            "keypoints": {k: {"x": x, "y": y, "visible": vis} for k, (x, y, vis) in o.keypoints.items()},
        }
        if o.prototype_id is not None:
            rec["prototype"] = o.prototype_id
        if o.mask is not None:
            (path / "masks").mkdir(exist_ok=True)
            rel = f"masks/{rec['id']}.pbm"
            write_pbm(path / rel, o.mask)
            rec["mask"] = rel
        recs.append(rec)
    write_jsonl(path / "objects.jsonl", recs)


def detection_to_dict(d: Detection):
    rec = {"id": d.id, "image_id": d.image_id, "class": d.cls, "bbox": d.bbox.as_list(), "score": d.score}
    if d.azimuth is not None:
        rec["azimuth"] = d.azimuth
    return rec


def load_detections(path):
    dets = []
    for n, rec in enumerate(read_jsonl(path)):
        where = f"{path}:{n + 1}"
        az = rec.get("azimuth")
        dets.append(Detection(
            image_id=str(_field(rec, "image_id", where)),
            cls=_field(rec, "class", where, str),
            bbox=_bbox(_field(rec, "bbox", where), where),
            score=float(_field(rec, "score", where, (int, float))),
            id=rec.get("id", n),
            azimuth=None if az is None else normalize_azimuth(az),
        ))
    return dets


def save_detections(path, dets):
    write_jsonl(path, [detection_to_dict(d) for d in dets])


def candidate_to_dict(c: KeypointCandidate):
    return {"image_id": c.image_id, "name": c.name, "x": c.x, "y": c.y, "score": c.score}


def load_candidates(path):
    out = []
    for n, rec in enumerate(read_jsonl(path)):
        where = f"{path}:{n + 1}"
        c = KeypointCandidate(str(_field(rec, "name", where)),
                              float(_field(rec, "x", where, (int, float))),
                              float(_field(rec, "y", where, (int, float))),
                              float(_field(rec, "score", where, (int, float))),
                              str(_field(rec, "image_id", where)))
        if not (math.isfinite(c.x) and math.isfinite(c.y)):
            raise SchemaError("non-finite position", where, "x")
        out.append(c)
    return out


def save_candidates(path, cands):
    write_jsonl(path, [candidate_to_dict(c) for c in cands])


def load_predictions(path):
    """Scored boxes from detections or lift records; azimuth may come from a fitted pose."""
    preds = []
    for n, rec in enumerate(read_jsonl(path)):
        where = f"{path}:{n + 1}"
        az = rec.get("azimuth")
        if az is None and isinstance(rec.get("pose"), dict):
            az = rec["pose"].get("azimuth")
        if az is None:
            az = rec.get("azimuth_estimate")
        preds.append(ScoredPrediction(
            image_id=str(_field(rec, "image_id", where)),
            cls=_field(rec, "class", where, str),
            bbox=_bbox(_field(rec, "bbox", where), where),
            score=float(_field(rec, "score", where, (int, float))),
            azimuth=None if az is None else normalize_azimuth(az),
            id=rec.get("detection_id", rec.get("id", n)),
        ))
    return preds


@dataclass
class RunConfig:
    """Every knob of a run; serialized next to each output."""

    focal: float = 3000.0
    kappa: float = 2.0
    components: int = 8
    penalty: str = "ridge"
    lam: float = 1.0
    l1_ratio: float = 0.5
    fit_intercept: bool = True
    standardize: bool = True
    unwrap_mode: str = "raw"
    cd_tol: float = 1e-8
    cd_max_iter: int = 100_000
    strategy: str = "guided"
    robust: str = "l2"
    huber_delta: float = 5.0
    theta_limit: float = 45.0
    gtol: float = 1e-8
    xtol: float = 1e-10
    max_iter: int = 200
    use_scores: bool = False
    ap_mode: str = "allpoints"
    seed: int = 0
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        checks = [
            (self.focal > 0, "focal must be > 0"),
            (self.kappa > 0, "kappa must be > 0"),
            (self.components >= 1, "components must be >= 1"),
            (self.penalty in ("ridge", "lasso", "elastic-net"), f"bad penalty {self.penalty!r}"),
            (self.lam >= 0, "lambda must be >= 0"),
            (0 <= self.l1_ratio <= 1, "l1_ratio must be in [0, 1]"),
            (self.unwrap_mode in ("raw", "recenter"), f"bad unwrap mode {self.unwrap_mode!r}"),
            (self.strategy in ("guided", "best-objective"), f"bad strategy {self.strategy!r}"),
            (self.robust in ("l2", "l1-smooth"), f"bad robust mode {self.robust!r}"),
            (self.huber_delta > 0, "huber_delta must be > 0"),
            (0 < self.theta_limit <= 180, "theta_limit must be in (0, 180]"),
            (self.ap_mode in ("allpoints", "11pt"), f"bad ap mode {self.ap_mode!r}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def lift_config(self) -> LiftConfig:
        return LiftConfig(focal=self.focal, robust=self.robust, huber_delta=self.huber_delta,
                          theta_limit=self.theta_limit, gtol=self.gtol, xtol=self.xtol,
                          max_iter=self.max_iter, use_scores=self.use_scores)

    def to_dict(self):
        return {"format": "runconfig/1", **asdict(self)}

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k != "format"}
        return cls(**d)
