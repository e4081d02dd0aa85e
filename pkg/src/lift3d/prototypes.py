"""3D CAD prototypes: OBJ/keypoint loading, the per-class registry and
silhouette rasterization into binary masks.

Masks are ``(height, width)`` boolean numpy arrays; pixel ``(col, row)``
samples the image point ``(col, row)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyClass, MissingKeypointFile, NoProtoForClass, ParseError
from .geometry import EPS_DEPTH, CameraPose, project_points, to_camera

log = logging.getLogger(__name__)

CENTERING_TOL = 1e-3


@dataclass
class Prototype:
    cls: str
    id: str
    vertices: np.ndarray
    faces: np.ndarray
    keypoints3d: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.keypoints3d = {str(k): np.asarray(v, dtype=float).reshape(3)
                            for k, v in self.keypoints3d.items()}
        if len(self.faces) == 0:
            raise ParseError(f"prototype {self.id!r} has no faces")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise ParseError(f"prototype {self.id!r}: face index out of range "
                             f"(vertex count {len(self.vertices)})")
        if not np.all(np.isfinite(self.vertices)):
            raise ParseError(f"prototype {self.id!r}: non-finite vertex")

    @property
    def diameter(self):
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def is_centered(self, tol=CENTERING_TOL):
        return float(np.linalg.norm(self.vertices.mean(axis=0))) <= tol * self.diameter

    def recentered(self) -> "Prototype":
        c = self.vertices.mean(axis=0)
        return Prototype(self.cls, self.id, self.vertices - c, self.faces,
                         {k: v - c for k, v in self.keypoints3d.items()})

    def keypoint_array(self, names):
        return np.array([self.keypoints3d[n] for n in names], dtype=float).reshape(-1, 3)


class PrototypeRegistry:
    """Ordered prototypes per class. Treat as read-only once built."""

    def __init__(self, prototypes=()):
        self._by_class: dict[str, list[Prototype]] = {}
        for p in prototypes:
            self._by_class.setdefault(p.cls, []).append(p)

    def classes(self):
        return list(self._by_class)

    def prototypes(self, cls) -> list[Prototype]:
        try:
            return list(self._by_class[cls])
        except KeyError:
            raise NoProtoForClass(f"no prototypes for class {cls!r}") from None

    def get(self, cls, proto_id) -> Prototype:
        for p in self.prototypes(cls):
            if p.id == proto_id:
                return p
        raise NoProtoForClass(f"class {cls!r} has no prototype {proto_id!r}")

    def vocabulary(self, cls):
        names = []
        for p in self.prototypes(cls):
            names.extend(n for n in p.keypoints3d if n not in names)
        return names

    def __len__(self):
        return sum(len(v) for v in self._by_class.values())

    def __iter__(self):
        for protos in self._by_class.values():
            yield from protos


def load_obj(path):
    """Read ``v`` and ``f`` records of an OBJ file; polygons are fan-triangulated.

    Face tokens may carry ``/vt/vn`` suffixes, which are ignored. Negative
    (relative) indices are resolved against the vertices read so far.
    """
    vertices, faces = [], []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read mesh {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
                if len(vertices[-1]) != 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) < 3:
                    raise ValueError("face needs at least 3 vertices")
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return np.array(vertices, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def save_obj(path, vertices, faces):
    with open(path, "w") as f:
        for v in vertices:
            f.write("v {!r} {!r} {!r}\n".format(*(float(x) for x in v)))
        for tri in faces:
            f.write("f {} {} {}\n".format(*(int(i) + 1 for i in tri)))


def load_keypoints(path):
    path = Path(path)
    if not path.is_file():
        raise MissingKeypointFile(f"keypoint file not found: {path}")
    try:
        raw = json.loads(path.read_text())
        kps = {str(k): [float(x) for x in v] for k, v in raw.items()}
    except (ValueError, TypeError, AttributeError) as exc:
        raise ParseError(f"malformed keypoint file {path}: {exc}") from exc
    for k, v in kps.items():
        if len(v) != 3:
            raise ParseError(f"{path}: keypoint {k!r} needs 3 coordinates")
    return kps


def load_registry(manifest_path) -> PrototypeRegistry:
    """Load every prototype listed in a JSON manifest.

    The manifest is a list of ``{class, id, mesh, keypoints}`` entries with
    paths relative to the manifest's directory. Off-center meshes are shifted
    so their vertex centroid sits at the origin.
    """
    manifest_path = Path(manifest_path)
    try:
        entries = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not isinstance(entries, list):
        raise ParseError(f"{manifest_path}: manifest must be a JSON list")
    if not entries:
        raise EmptyClass(f"{manifest_path}: manifest lists no prototypes")
    base = manifest_path.parent
    protos = []
    for n, entry in enumerate(entries):
        try:
            cls, pid, mesh, kp = entry["class"], str(entry["id"]), entry["mesh"], entry["keypoints"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{manifest_path}: entry {n} missing field {exc}") from exc
        if not cls:
            raise EmptyClass(f"{manifest_path}: entry {n} has an empty class")
        vertices, faces = load_obj(base / mesh)
        proto = Prototype(cls, pid, vertices, faces, load_keypoints(base / kp))
        if not proto.is_centered():
            log.warning("prototype %s/%s is not origin-centered; recentering", cls, pid)
            proto = proto.recentered()
        protos.append(proto)
    ids = [(p.cls, p.id) for p in protos]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{manifest_path}: duplicate prototype ids")
    return PrototypeRegistry(protos)


def save_registry(registry: PrototypeRegistry, directory) -> Path:
    """Write OBJ + keypoint files and a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for p in registry:
        stem = f"{p.cls}_{p.id}"
        save_obj(directory / f"{stem}.obj", p.vertices, p.faces)
        (directory / f"{stem}.kp.json").write_text(
            json.dumps({k: v.tolist() for k, v in p.keypoints3d.items()}, indent=1))
        entries.append({"class": p.cls, "id": p.id, "mesh": f"{stem}.obj",
                        "keypoints": f"{stem}.kp.json"})
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=1))
    return manifest


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize_triangles(tris, width, height):
    """Fill 2D triangles (T, 3, 2) into a boolean mask.

    A pixel is set when its center lies inside or on the boundary of a
    triangle. Zero-area triangles cover nothing.
    """
    mask = np.zeros((height, width), dtype=bool)
    for (ax, ay), (bx, by), (cx, cy) in np.asarray(tris, dtype=float):
        area = _edge(ax, ay, bx, by, cx, cy)
        if area == 0 or not np.isfinite(area):
            continue
        x0 = max(int(np.ceil(min(ax, bx, cx))), 0)
        x1 = min(int(np.floor(max(ax, bx, cx))), width - 1)
        y0 = max(int(np.ceil(min(ay, by, cy))), 0)
        y1 = min(int(np.floor(max(ay, by, cy))), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        px, py = np.meshgrid(np.arange(x0, x1 + 1, dtype=float),
                             np.arange(y0, y1 + 1, dtype=float))
        w0 = _edge(bx, by, cx, cy, px, py)
        w1 = _edge(cx, cy, ax, ay, px, py)
        w2 = _edge(ax, ay, bx, by, px, py)
        if area > 0:
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        else:
            inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
        mask[y0:y1 + 1, x0:x1 + 1] |= inside
    return mask


def projected_triangles(proto: Prototype, pose: CameraPose):
    """Image-space triangles of ``proto`` with every vertex in front of the camera."""
    p = pose.to_vector()
    depth = to_camera(p, proto.vertices)[:, 2]
    keep = np.all(depth[proto.faces] > EPS_DEPTH, axis=1)
    if not keep.any():
        return np.zeros((0, 3, 2))
    # clamped projection only touches vertices whose triangles are dropped
    uv = project_points(p, proto.vertices, pose.focal, min_depth=EPS_DEPTH)
    return uv[proto.faces[keep]]


def render_silhouette(proto: Prototype, pose: CameraPose, width, height) -> np.ndarray:
    """Binary silhouette of ``proto`` seen from ``pose``.

    All faces are drawn (no back-face culling). Triangles with any vertex
    behind the camera are dropped whole rather than clipped.
    """
    if width <= 0 or height <= 0:
        raise ValueError("mask dimensions must be positive")
    return rasterize_triangles(projected_triangles(proto, pose), int(width), int(height))


def write_pbm(path, mask):
    """Write a binary PBM (P4); foreground pixels are stored as 1 bits."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P4\n{w} {h}\n".encode("ascii"))
        f.write(np.packbits(mask, axis=1).tobytes())


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PBM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P4":
        raise ParseError(f"{path}: not a binary PBM (P4) file")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1  # single whitespace before raster
    row_bytes = (w + 7) // 8
    raw = np.frombuffer(data, dtype=np.uint8, count=row_bytes * h, offset=pos)
    return np.unpackbits(raw.reshape(h, row_bytes), axis=1)[:, :w].astype(bool)
