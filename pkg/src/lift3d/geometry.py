"""Object-centric pinhole camera, projection and angle helpers.

Conventions
-----------
World frame: Z up, the object sits at the origin. The camera always looks
at the origin from distance ``D``. With ``azimuth = 0`` and ``elevation = 0``
the camera sits on the -Y axis looking along +Y. Azimuth rotates the camera
counterclockwise about world Z (seen from above), elevation lifts it above
the ground plane and ``theta`` rolls it about the optical axis.

Camera frame: x right, y down, z forward (depth). A world point ``X`` maps to

    X_cam = R @ X + (0, 0, D),   R = R_roll(theta) @ R_tilt(e) @ R_pan(a)

with ``R_pan(a) = Rz(-a)``, ``R_tilt(e) = B @ Rx(e)`` and
``R_roll(theta) = Rz(theta)``, where ``B`` permutes world axes onto the
camera axes for the reference view (world X -> x, world -Z -> y,
world Y -> z). Pixels follow

    u = focal * x / z + tx,   v = focal * y / z + ty

so the world origin always lands on the translation ``(tx, ty)``. Pixel
``(col, row)`` has its center at image coordinate ``(col, row)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import BehindCamera

DEFAULT_FOCAL = 3000.0
EPS_DEPTH = 1e-6

# largest float strictly below 90, the open end of the elevation range
_ELEVATION_MAX = math.nextafter(90.0, 0.0)

# reference view: world X -> cam x, world -Z -> cam y, world Y -> cam z
_BASE = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def normalize_azimuth(a):
    """Wrap degrees into [0, 360)."""
    a = float(a) % 360.0
    # -1e-17 % 360 rounds to 360.0
    return 0.0 if a >= 360.0 else a


def normalize_theta(t):
    """Wrap degrees into [-180, 180)."""
    t = (float(t) + 180.0) % 360.0 - 180.0
    return -180.0 if t >= 180.0 else t


def clamp_elevation(e):
    return min(max(float(e), -90.0), _ELEVATION_MAX)


@dataclass(frozen=True)
class CameraPose:
    """Six camera parameters plus the fixed focal length.

    Angles are in degrees, ``distance`` in world units and ``translation``
    in pixels. Angles are normalized on construction, so ``dataclasses.replace``
    keeps the invariants too.
    """

    azimuth: float
    elevation: float
    theta: float
    distance: float
    translation: tuple[float, float] = (0.0, 0.0)
    focal: float = DEFAULT_FOCAL

    def __post_init__(self):
        if not (math.isfinite(self.distance) and self.distance > 0):
            raise ValueError(f"distance must be > 0, got {self.distance}")
        if not (math.isfinite(self.focal) and self.focal > 0):
            raise ValueError(f"focal must be > 0, got {self.focal}")
        tx, ty = (float(v) for v in self.translation)
        for name, value in (("azimuth", self.azimuth), ("elevation", self.elevation),
                            ("theta", self.theta), ("tx", tx), ("ty", ty)):
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        object.__setattr__(self, "azimuth", normalize_azimuth(self.azimuth))
        object.__setattr__(self, "elevation", clamp_elevation(self.elevation))
        object.__setattr__(self, "theta", normalize_theta(self.theta))
        object.__setattr__(self, "distance", float(self.distance))
        object.__setattr__(self, "translation", (tx, ty))
        object.__setattr__(self, "focal", float(self.focal))

    def replace(self, **changes) -> "CameraPose":
        return replace(self, **changes)

    def to_vector(self) -> np.ndarray:
        """Optimizer parameterization ``(a, e, theta)`` in radians, then ``D, tx, ty``."""
        return np.array([
            math.radians(self.azimuth), math.radians(self.elevation), math.radians(self.theta),
            self.distance, self.translation[0], self.translation[1],
        ])

    @classmethod
    def from_vector(cls, p, focal=DEFAULT_FOCAL) -> "CameraPose":
        return cls(math.degrees(p[0]), math.degrees(p[1]), math.degrees(p[2]),
                   float(p[3]), (float(p[4]), float(p[5])), focal)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["translation"] = list(self.translation)
        return d

    @classmethod
    def from_dict(cls, d) -> "CameraPose":
        return cls(d["azimuth"], d["elevation"], d["theta"], d["distance"],
                   tuple(d.get("translation", (0.0, 0.0))), d.get("focal", DEFAULT_FOCAL))


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate box {vals}")
        for name, v in zip(("xmin", "ymin", "xmax", "ymax"), vals):
            object.__setattr__(self, name, float(v))

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)

    def as_list(self):
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    @classmethod
    def from_points(cls, pts) -> "BBox":
        pts = np.asarray(pts, dtype=float)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return cls(lo[0], lo[1], hi[0], hi[1])


def _rz(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rz_d(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def _rx(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rx_d(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def rotation_matrix(a, e, theta):
    """World-to-camera rotation for angles given in radians."""
    return _rz(theta) @ _BASE @ _rx(e) @ _rz(-a)


def rotation_from_pose(pose: CameraPose) -> np.ndarray:
    return rotation_matrix(math.radians(pose.azimuth), math.radians(pose.elevation),
                           math.radians(pose.theta))


def camera_center(pose: CameraPose) -> np.ndarray:
    """Camera position in world coordinates."""
    a, e = math.radians(pose.azimuth), math.radians(pose.elevation)
    return pose.distance * np.array([math.cos(e) * math.sin(a),
                                     -math.cos(e) * math.cos(a),
                                     math.sin(e)])


def to_camera(params, points):
    """Camera-frame coordinates of ``points`` (N, 3) under a parameter vector."""
    R = rotation_matrix(params[0], params[1], params[2])
    pc = np.asarray(points, dtype=float) @ R.T
    pc[:, 2] += params[3]
    return pc


def project_points(params, points, focal=DEFAULT_FOCAL, min_depth=None):
    """Vectorized projection of (N, 3) points to (N, 2) pixels.

    ``params`` is the vector of :meth:`CameraPose.to_vector`. When
    ``min_depth`` is given, depths are clamped from below instead of checked,
    which keeps an optimizer's residuals finite on degenerate poses.
    """
    pc = to_camera(params, points)
    z = pc[:, 2] if min_depth is None else np.maximum(pc[:, 2], min_depth)
    uv = focal * pc[:, :2] / z[:, None]
    uv[:, 0] += params[4]
    uv[:, 1] += params[5]
    return uv


def project_points_jacobian(params, points, focal=DEFAULT_FOCAL, min_depth=None):
    """Jacobian of :func:`project_points`, shape (N, 2, 6).

    Columns follow the parameter vector: azimuth, elevation, theta (radians),
    distance, tx, ty. Where depth is clamped the depth derivative is dropped.
    """
    a, e, t = params[0], params[1], params[2]
    X = np.asarray(points, dtype=float)
    Rroll, Rtilt, Rpan = _rz(t), _BASE @ _rx(e), _rz(-a)
    dR = (
        -(Rroll @ Rtilt @ _rz_d(-a)),
        Rroll @ _BASE @ _rx_d(e) @ Rpan,
        _rz_d(t) @ Rtilt @ Rpan,
    )
    pc = X @ (Rroll @ Rtilt @ Rpan).T
    pc[:, 2] += params[3]
    z = pc[:, 2]
    clamped = np.zeros(len(X), dtype=bool)
    if min_depth is not None:
        clamped = z < min_depth
        z = np.maximum(z, min_depth)
    # d(u, v)/d(x, y, z) in the camera frame
    dproj = np.zeros((len(X), 2, 3))
    dproj[:, 0, 0] = focal / z
    dproj[:, 1, 1] = focal / z
    dproj[:, 0, 2] = np.where(clamped, 0.0, -focal * pc[:, 0] / z ** 2)
    dproj[:, 1, 2] = np.where(clamped, 0.0, -focal * pc[:, 1] / z ** 2)
    J = np.zeros((len(X), 2, 6))
    for k, dRk in enumerate(dR):
        J[:, :, k] = np.einsum("nij,nj->ni", dproj, X @ dRk.T)
    J[:, :, 3] = dproj[:, :, 2]
    J[:, 0, 4] = 1.0
    J[:, 1, 5] = 1.0
    return J


def project(pose: CameraPose, X) -> np.ndarray:
    """Project one world point to pixel coordinates.

    Raises
    ------
    BehindCamera
        If the point's camera-frame depth is not above ``EPS_DEPTH``.
    """
    X = np.asarray(X, dtype=float).reshape(1, 3)
    p = pose.to_vector()
    z = to_camera(p, X)[0, 2]
    if z <= EPS_DEPTH:
        raise BehindCamera(f"point {X[0].tolist()} has camera depth {z:.3g}")
    return project_points(p, X, pose.focal)[0]


def azimuth_error(a1, a2):
    """Circular distance in degrees, in [0, 180]."""
    d = abs(float(a1) - float(a2)) % 360.0
    return min(d, 360.0 - d)


def circular_mean(angles, weights=None):
    """Mean direction of angles in degrees, returned in [0, 360)."""
    r = np.radians(np.asarray(angles, dtype=float))
    w = np.ones_like(r) if weights is None else np.asarray(weights, dtype=float)
    return normalize_azimuth(math.degrees(math.atan2(np.sum(w * np.sin(r)), np.sum(w * np.cos(r)))))


def iou(b1: BBox, b2: BBox) -> float:
    iw = min(b1.xmax, b2.xmax) - max(b1.xmin, b2.xmin)
    ih = min(b1.ymax, b2.ymax) - max(b1.ymin, b2.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (b1.area + b2.area - inter)
