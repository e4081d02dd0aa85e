"""Linear azimuth regressors (ridge, lasso, elastic net) on precomputed features.

The fitted objective is

    ||y - X w - b||^2 + lam * (alpha * ||w||_1 + (1 - alpha) * ||w||_2^2)

with ``alpha = 1`` for lasso and ``alpha = 0`` for ridge, so the elastic net
reduces exactly to the other two at its endpoints. ``X`` is standardized per
column when ``standardize`` is set and ``b`` is an unpenalized intercept.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonConvergence, ParseError, SingularSystem
from .geometry import circular_mean, normalize_azimuth

log = logging.getLogger(__name__)

PENALTIES = ("ridge", "lasso", "elastic-net")
FEATURE_MAGIC = b"LFT3FEAT"


@dataclass(frozen=True)
class Regressor:
    penalty: str
    lam: float
    l1_ratio: float
    weights: np.ndarray
    intercept: float
    mean: np.ndarray
    std: np.ndarray
    cls: str | None = None
    # circular mean subtracted from targets in "recenter" mode, else 0
    center: float = 0.0
    unwrap_mode: str = "raw"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self):
        return len(self.weights)

    def raw_output(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} features, got {X.shape[1]}")
        return ((X - self.mean) / self.std) @ self.weights + self.intercept + self.center

    def to_dict(self):
        return {
            "format": "regressor/1",
            "penalty": self.penalty,
            "lambda": self.lam,
            "l1_ratio": self.l1_ratio,
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "class": self.cls,
            "unwrap_mode": self.unwrap_mode,
            "center": self.center,
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            w = np.asarray(d["weights"], dtype=float)
            if len(w) != d["dim"]:
                raise ParseError("weights length does not match dim")
            return cls(d["penalty"], float(d["lambda"]), float(d["l1_ratio"]), w,
                       float(d["intercept"]),
                       np.asarray(d["standardization"]["mean"], dtype=float),
                       np.asarray(d["standardization"]["std"], dtype=float),
                       d.get("class"), float(d.get("center", 0.0)), d.get("unwrap_mode", "raw"))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed regressor: {exc}") from exc


def predict(reg: Regressor, phi) -> float:
    """Azimuth in [0, 360) for a single feature vector."""
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.shape[0] != reg.dim:
        raise DimensionMismatch(f"expected {reg.dim} features, got {phi.shape[0]}")
    return normalize_azimuth(reg.raw_output(phi)[0])


def objective(X, y, w, b, lam, l1_ratio):
    r = y - X @ w - b
    return float(r @ r + lam * (l1_ratio * np.abs(w).sum() + (1 - l1_ratio) * w @ w))


def kkt_violation(X, y, w, b, lam, l1_ratio):
    """Largest subgradient optimality violation over the coordinates of ``w``."""
    g = -2.0 * X.T @ (y - X @ w - b) + 2.0 * lam * (1 - l1_ratio) * w
    l1 = lam * l1_ratio
    return float(np.max(np.where(w != 0, np.abs(g + l1 * np.sign(w)),
                                 np.maximum(np.abs(g) - l1, 0.0)), initial=0.0))


def _ridge(X, y, lam):
    A = X.T @ X + lam * np.eye(X.shape[1])
    if lam == 0 and np.linalg.matrix_rank(A) < X.shape[1]:
        raise SingularSystem("rank-deficient design with lambda=0")
    try:
        return np.linalg.solve(A, X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def _coordinate_descent(X, y, lam, l1_ratio, tol, max_iter):
    n, d = X.shape
    w = np.zeros(d)
    r = y.copy()
    z = np.einsum("ij,ij->j", X, X)
    l1, l2 = lam * l1_ratio, lam * (1 - l1_ratio)
    for it in range(max_iter):
        moved = False
        for j in range(d):
            if z[j] == 0.0:
                continue
            rho = X[:, j] @ r + z[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - l1 / 2.0, 0.0) / (z[j] + l2)
            if new != w[j]:
                r -= X[:, j] * (new - w[j])
                w[j] = new
                moved = True
        # a sweep that changes nothing is a fixed point at machine precision
        if not moved or kkt_violation(X, y, w, 0.0, lam, l1_ratio) <= tol:
            return w, it + 1
    raise NonConvergence(f"coordinate descent did not converge in {max_iter} sweeps")


def train(X, y, penalty="ridge", lam=1.0, l1_ratio=0.5, *, fit_intercept=True,
          standardize=True, unwrap_mode="raw", tol=1e-8, max_iter=100_000, cls=None,
          solver="auto") -> Regressor:
    """Fit an azimuth regressor.

    Parameters
    ----------
    X : array (n, d)
        Feature vectors.
    y : array (n,)
        Target azimuths in degrees.
    penalty : {"ridge", "lasso", "elastic-net"}
    lam : float
        Regularization strength on the (standardized) weights.
    l1_ratio : float
        Elastic-net mix; ignored for ridge and lasso.
    unwrap_mode : {"raw", "recenter"}
        ``raw`` regresses degrees as given. ``recenter`` shifts targets to
        ``(-180, 180]`` around their circular mean first.
    solver : {"auto", "cd"}
        ``auto`` solves pure L2 problems in closed form; ``cd`` always uses
        coordinate descent.
    """
    if penalty not in PENALTIES:
        raise ValueError(f"unknown penalty {penalty!r}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise DimensionMismatch(f"{X.shape[0]} feature rows vs {y.shape[0]} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite features or targets")
    alpha = {"ridge": 0.0, "lasso": 1.0}.get(penalty, float(l1_ratio))
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("l1_ratio must be in [0, 1]")

    center = 0.0
    if unwrap_mode == "recenter":
        center = circular_mean(y)
        y = (y - center + 180.0) % 360.0 - 180.0
    elif unwrap_mode != "raw":
        raise ValueError(f"unknown unwrap mode {unwrap_mode!r}")

    d = X.shape[1]
    mean, std = np.zeros(d), np.ones(d)
    if standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0] = 1.0
    Xs = (X - mean) / std
    y_off = 0.0
    if fit_intercept:
        x_off = Xs.mean(axis=0)
        Xs = Xs - x_off
        y_off = y.mean()
    yc = y - y_off

    if solver not in ("auto", "cd"):
        raise ValueError(f"unknown solver {solver!r}")
    if alpha == 0.0 and solver == "auto":
        w = _ridge(Xs, yc, lam)
    else:
        w, sweeps = _coordinate_descent(Xs, yc, lam, alpha, tol, max_iter)
        log.debug("%s converged in %d sweeps", penalty, sweeps)
    b = y_off - (x_off @ w if fit_intercept else 0.0)
    return Regressor(penalty, float(lam), alpha, w, float(b), mean, std, cls, center, unwrap_mode)


def select_lambda(X, y, lambdas, penalty="ridge", l1_ratio=0.5, folds=5, seed=0, **kw):
    """Pick the lambda with the lowest k-fold mean squared azimuth error.

    Errors are circular (wrapped) so a prediction of 359 for a target of 1
    costs 2 degrees. Returns ``(best_lambda, {lambda: cv_error})``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    folds = min(folds, len(y))
    order = np.random.default_rng(seed).permutation(len(y))
    splits = np.array_split(order, folds)
    scores = {}
    for lam in lambdas:
        errs = []
        for k in range(folds):
            test = splits[k]
            trn = np.concatenate([s for i, s in enumerate(splits) if i != k])
            reg = train(X[trn], y[trn], penalty, lam, l1_ratio, **kw)
            pred = reg.raw_output(X[test]) % 360.0
            diff = np.abs(pred - y[test]) % 360.0
            errs.append(np.minimum(diff, 360.0 - diff) ** 2)
        scores[float(lam)] = float(np.mean(np.concatenate(errs)))
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores


def save_regressor(reg: Regressor, path, config=None):
    d = reg.to_dict()
    if config is not None:
        d["config"] = config
    Path(path).write_text(json.dumps(d, indent=1))


def load_regressor(path) -> Regressor:
    try:
        return Regressor.from_dict(json.loads(Path(path).read_text()))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_features(path, X):
    """Little-endian ``LFT3FEAT`` header + u32 count + u32 dim + float32 rows."""
    X = np.atleast_2d(np.asarray(X, dtype="<f4"))
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC + struct.pack("<II", *X.shape))
        f.write(X.tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != FEATURE_MAGIC:
        raise ParseError(f"{path}: bad feature-file magic")
    n, d = struct.unpack_from("<II", data, 8)
    expected = 16 + 4 * n * d
    if len(data) != expected:
        raise ParseError(f"{path}: expected {expected} bytes for {n}x{d}, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(n, d).astype(float)


def write_feature_index(path, rows):
    """Sidecar index: one ``{row, image_id, detection_id, azimuth?}`` record per row."""
    Path(path).write_text(json.dumps(list(rows), indent=1))


def read_feature_index(path):
    try:
        rows = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for i, r in enumerate(rows):
        if r.get("row", i) != i:
            raise ParseError(f"{path}: index entry {i} has row {r.get('row')}")
    return rows
