"""Synthetic scenes with exact ground truth, for tests and pipeline smoke runs.

Every scene holds one object: a registry prototype seen from a random camera.
Detections are the ground-truth boxes; keypoint candidates are the projected
3D keypoints plus optional Gaussian noise and random distractors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, ImageInfo, save_candidates, save_dataset, save_detections
from .geometry import DEFAULT_FOCAL, BBox, CameraPose, project_points
from .lifting import Detection
from .metrics import GroundTruthObject
from .prototypes import Prototype, PrototypeRegistry, render_silhouette
from .regression import write_feature_index, write_features
from .spatial import KeypointCandidate

_BOX_FACES = np.array([
    [0, 1, 2], [0, 2, 3],  # bottom
    [4, 6, 5], [4, 7, 6],  # top
    [0, 4, 5], [0, 5, 1],
    [1, 5, 6], [1, 6, 2],
    [2, 6, 7], [2, 7, 3],
    [3, 7, 4], [3, 4, 0],
])


def _box(x0, x1, y0, y1, z0, z1):
    v = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]], dtype=float)
    return v, _BOX_FACES.copy()


def unit_cube(cls="cube", pid="unit"):
    """Axis-aligned unit cube centered at the origin with its 8 corners as keypoints."""
    v, f = _box(-0.5, 0.5, -0.5, 0.5, -0.5, 0.5)
    names = ["c000", "c100", "c110", "c010", "c001", "c101", "c111", "c011"]
    return Prototype(cls, pid, v, f, dict(zip(names, v)))


CAR_SHAPES = {
    # length, width, body height, cabin length, cabin height, cabin x-offset
    "sedan": (4.4, 1.8, 0.8, 2.2, 0.6, -0.2),
    "suv": (4.6, 1.9, 1.1, 3.2, 0.8, -0.5),
    "hatchback": (3.8, 1.7, 0.8, 2.4, 0.7, -0.6),
}

_CORNER_TAGS = ["rl", "fl", "fr", "rr"]  # rear/front x left/right, box order


def box_car(cls, pid, length, width, body_h, cabin_l, cabin_h, cabin_x):
    """Two stacked boxes (body + cabin) with 12 named corner keypoints."""
    body_v, body_f = _box(-length / 2, length / 2, -width / 2, width / 2, 0.0, body_h)
    cw = width * 0.9
    cab_v, cab_f = _box(cabin_x - cabin_l / 2, cabin_x + cabin_l / 2, -cw / 2, cw / 2,
                        body_h, body_h + cabin_h)
    vertices = np.vstack([body_v, cab_v])
    faces = np.vstack([body_f, cab_f + 8])
    kps = {}
    for i, tag in enumerate(_CORNER_TAGS):
        kps[f"body_bottom_{tag}"] = body_v[i]
        kps[f"body_top_{tag}"] = body_v[4 + i]
        kps[f"roof_{tag}"] = cab_v[4 + i]
    c = vertices.mean(axis=0)
    return Prototype(cls, pid, vertices - c, faces, {k: v - c for k, v in kps.items()})


def car_registry(shapes=("sedan", "suv", "hatchback"), cls="car"):
    return PrototypeRegistry([box_car(cls, s, *CAR_SHAPES[s]) for s in shapes])


@dataclass(frozen=True)
class SynthBounds:
    """Uniform sampling ranges for synthetic cameras."""

    elevation: tuple = (0.0, 30.0)
    theta: tuple = (-10.0, 10.0)
    distance: tuple = (30.0, 50.0)
    # principal point jitter as a fraction of the image size around its center
    translation_jitter: float = 0.1


@dataclass
class SyntheticScenes:
    dataset: Dataset
    detections: list
    candidates: list
    features: np.ndarray
    feature_index: list
    poses: list = field(default_factory=list)
    prototype_ids: list = field(default_factory=list)


def gen_synthetic(registry: PrototypeRegistry, n_scenes, sigma=0.0, seed=0, *,
                  image_size=(800, 600), focal=DEFAULT_FOCAL, bounds=SynthBounds(),
                  distractors=0, feature_dim=4, feature_noise=0.0, render_masks=True):
    """Generate ``n_scenes`` single-object scenes.

    Features are ``[azimuth + noise, uniform nuisance...]`` so a linear
    regressor can recover the viewpoint. The same seed always yields the same
    scenes.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if len(registry) == 0:
        raise ValueError("registry is empty")
    rng = np.random.default_rng(seed)
    protos = list(registry)
    W, H = image_size
    images, objects, dets, cands = {}, [], [], []
    feats, index, poses, pids = [], [], [], []
    for i in range(n_scenes):
        proto = protos[rng.integers(len(protos))]
        jit = bounds.translation_jitter
        pose = CameraPose(
            rng.uniform(0.0, 360.0),
            rng.uniform(*bounds.elevation),
            rng.uniform(*bounds.theta),
            rng.uniform(*bounds.distance),
            (W / 2 + rng.uniform(-jit, jit) * W, H / 2 + rng.uniform(-jit, jit) * H),
            focal,
        )
        p = pose.to_vector()
        iid = f"synth{i:05d}"
        images[iid] = ImageInfo(iid, W, H)
        bbox = BBox.from_points(project_points(p, proto.vertices, focal))
        names = list(proto.keypoints3d)
        uv = project_points(p, proto.keypoint_array(names), focal)
        mask = render_silhouette(proto, pose, W, H) if render_masks else None
        objects.append(GroundTruthObject(
            iid, proto.cls, bbox, pose.azimuth, pose.elevation, pose.theta, pose.distance,
            {n: (float(u), float(v), True) for n, (u, v) in zip(names, uv)},
            mask=mask, prototype_id=proto.id, id=i,
        ))
        dets.append(Detection(iid, proto.cls, bbox, 1.0, i))
        noisy = uv + rng.normal(0.0, sigma, uv.shape) if sigma > 0 else uv
        for n, (u, v) in zip(names, noisy):
            cands.append(KeypointCandidate(n, float(u), float(v), 1.0, iid))
        for _ in range(distractors):
            cands.append(KeypointCandidate(
                names[rng.integers(len(names))],
                float(rng.uniform(bbox.xmin - bbox.width / 2, bbox.xmax + bbox.width / 2)),
                float(rng.uniform(bbox.ymin - bbox.height / 2, bbox.ymax + bbox.height / 2)),
                float(rng.uniform(0.0, 0.5)), iid))
        phi = np.empty(feature_dim)
        phi[0] = pose.azimuth + (rng.normal(0.0, feature_noise) if feature_noise > 0 else 0.0)
        phi[1:] = rng.uniform(-1.0, 1.0, feature_dim - 1)
        feats.append(phi)
        index.append({"row": i, "image_id": iid, "detection_id": i, "class": proto.cls,
                      "azimuth": pose.azimuth})
        poses.append(pose)
        pids.append(proto.id)
    vocab = {c: registry.vocabulary(c) for c in registry.classes()}
    return SyntheticScenes(Dataset(images, objects, vocab), dets, cands,
                           np.array(feats).reshape(n_scenes, feature_dim), index, poses, pids)


def write_synthetic(scenes: SyntheticScenes, out_dir):
    """Write the dataset directory and the detection, candidate and feature files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(scenes.dataset, out / "dataset")
    save_detections(out / "detections.jsonl", scenes.detections)
    save_candidates(out / "candidates.jsonl", scenes.candidates)
    write_features(out / "features.bin", scenes.features)
    write_feature_index(out / "features.json", scenes.feature_index)
    return out
