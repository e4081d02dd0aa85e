"""Command line entry point: one subcommand per pipeline stage or metric."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    RunConfig,
    load_candidates,
    load_dataset,
    load_detections,
    load_predictions,
    read_jsonl,
    save_detections,
    write_jsonl,
)
from .errors import Lift3DError
from .geometry import CameraPose
from .lifting import lift
from .metrics import (
    aavp,
    app,
    avp_binned,
    gt_keypoints,
    match,
    match_and_pr,
    seg_accuracy,
)
from .prototypes import load_registry, render_silhouette, save_registry, write_pbm
from .regression import (
    load_regressor,
    predict,
    read_feature_index,
    read_features,
    save_regressor,
    select_lambda,
    train,
)
from .spatial import fit_spatial, load_spatial, save_spatial
from .synthetic import car_registry, gen_synthetic, write_synthetic

log = logging.getLogger("lift3d")


def _threads():
    try:
        return max(1, int(os.environ.get("LIFT3D_THREADS", "")))
    except ValueError:
        return os.cpu_count() or 1


def _config(args, **paths) -> RunConfig:
    fields = RunConfig.__dataclass_fields__
    kw = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    kw["paths"] = {k: str(v) for k, v in paths.items() if v is not None}
    return RunConfig(**kw)


def _write_config(path, cfg: RunConfig):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _default_registry(dataset):
    return Path(dataset) / "registry" / "manifest.json"


def _regressors(paths):
    out = {}
    for p in paths or ():
        reg = load_regressor(p)
        out[reg.cls] = reg
    return out


def _regressor_for(regs, cls):
    return regs.get(cls, regs.get(None))


def _feature_lookup(features, index):
    if not features:
        return {}
    X = read_features(features)
    rows = read_feature_index(index)
    if len(rows) != len(X):
        raise Lift3DError(f"{index} lists {len(rows)} rows but {features} holds {len(X)}")
    return {(str(r["image_id"]), r["detection_id"]): X[i] for i, r in enumerate(rows)}


# --- subcommands ---------------------------------------------------------------

def cmd_gen_synth(args):
    out = Path(args.out)
    if args.registry:
        registry, manifest = load_registry(args.registry), args.registry
    else:
        registry = car_registry()
        manifest = None
    scenes = gen_synthetic(registry, args.n, args.sigma, args.seed, focal=args.focal or 3000.0,
                           distractors=args.distractors, feature_dim=args.feature_dim,
                           feature_noise=args.feature_noise, render_masks=not args.no_masks)
    write_synthetic(scenes, out)
    save_registry(registry, out / "dataset" / "registry")
    _write_config(out / "run_config.json", _config(args, out=out, registry=manifest))
    log.info("wrote %d scenes to %s", args.n, out)


def cmd_fit_spatial(args):
    ds = load_dataset(args.dataset, load_masks=False)
    classes = args.classes or ds.classes()
    models = []
    for cls in classes:
        names = ds.vocabulary.get(cls)
        models.append(fit_spatial(ds.spatial_annotations(cls), args.components, args.kappa, cls,
                                  names=names))
    cfg = _config(args, dataset=args.dataset, out=args.out)
    save_spatial(models, args.out, cfg.to_dict())


def cmd_train_regressor(args):
    X = read_features(args.features)
    rows = read_feature_index(args.index)
    keep = [i for i, r in enumerate(rows) if r.get("azimuth") is not None
            and (args.cls is None or r.get("class") == args.cls)]
    if not keep:
        raise Lift3DError("no labeled rows to train on")
    y = np.array([rows[i]["azimuth"] for i in keep], dtype=float)
    X = X[keep]
    kw = dict(fit_intercept=not args.no_intercept, standardize=not args.no_standardize,
              unwrap_mode=args.unwrap_mode, tol=args.cd_tol)
    lam = args.lam
    extra = {}
    if args.lambda_grid:
        grid = [float(v) for v in args.lambda_grid.split(",")]
        lam, scores = select_lambda(X, y, grid, args.penalty, args.l1_ratio, args.folds, args.seed, **kw)
        extra["cv_scores"] = {str(k): v for k, v in scores.items()}
        log.info("selected lambda=%g", lam)
    reg = train(X, y, args.penalty, lam, args.l1_ratio, cls=args.cls, **kw)
    args.lam = lam
    cfg = _config(args, features=args.features, index=args.index, out=args.out)
    d = cfg.to_dict()
    d.update(extra)
    save_regressor(reg, args.out, d)


def cmd_predict_viewpoint(args):
    regs = _regressors(args.regressor)
    feats = _feature_lookup(args.features, args.index)
    dets = load_detections(args.detections)
    for d in dets:
        reg = _regressor_for(regs, d.cls)
        phi = feats.get((d.image_id, d.id))
        if reg is None or phi is None:
            log.warning("no regressor or features for detection %s/%s", d.image_id, d.id)
            continue
        d.azimuth = predict(reg, phi)
    save_detections(args.out, dets)
    _write_config(f"{args.out}.config.json", _config(args, detections=args.detections, out=args.out))


def cmd_lift(args):
    cfg = _config(args, dataset=args.dataset, detections=args.detections,
                  candidates=args.candidates, spatial=args.spatial, out=args.out)
    ds = load_dataset(args.dataset, load_masks=False)
    registry = load_registry(args.registry or _default_registry(args.dataset))
    spatial = load_spatial(args.spatial)
    priors = ds.priors()
    regs = _regressors(args.regressor)
    feats = _feature_lookup(args.features, args.index)
    dets = load_detections(args.detections)
    cands = {}
    for c in load_candidates(args.candidates):
        cands.setdefault(c.image_id, []).append(c)
    lcfg = cfg.lift_config()

    def one(det):
        rec = {"image_id": det.image_id, "detection_id": det.id, "class": det.cls,
               "bbox": det.bbox.as_list(), "score": det.score}
        try:
            if det.cls not in spatial:
                raise Lift3DError(f"no spatial model for class {det.cls!r}")
            im = ds.images.get(det.image_id)
            res = lift(det, cands.get(det.image_id, []), spatial[det.cls], registry, priors,
                       cfg.strategy, _regressor_for(regs, det.cls),
                       feats.get((det.image_id, det.id)), lcfg,
                       None if im is None else (im.width, im.height))
            return res.to_dict()
        except (Lift3DError, ValueError) as exc:
            log.warning("lift failed for %s/%s: %s", det.image_id, det.id, exc)
            rec["azimuth_estimate"] = det.azimuth
            rec["error"] = {"type": type(exc).__name__, "message": str(exc)}
            return rec

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        records = list(pool.map(one, dets))
    write_jsonl(args.out, records)
    _write_config(f"{args.out}.config.json", cfg)


def _mask_for(rec, registry, size):
    if "pose" not in rec or rec.get("prototype_id") is None:
        return np.zeros((size[1], size[0]), dtype=bool)
    proto = registry.get(rec["class"], rec["prototype_id"])
    return render_silhouette(proto, CameraPose.from_dict(rec["pose"]), *size)


def cmd_render_mask(args):
    ds = load_dataset(args.dataset, load_masks=False)
    registry = load_registry(args.registry or _default_registry(args.dataset))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for n, rec in enumerate(read_jsonl(args.lifts)):
        im = ds.images[str(rec["image_id"])]
        mask = _mask_for(rec, registry, (im.width, im.height))
        write_pbm(out / f"{rec['image_id']}_{rec.get('detection_id', n)}.pbm", mask)


def _by_class(items):
    out = {}
    for it in items:
        out.setdefault(it.cls, []).append(it)
    return out


def cmd_eval(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _config(args, dataset=args.dataset, predictions=args.lifts, out=out)
    ds = load_dataset(args.dataset, load_masks=args.metric == "seg")
    summary = []

    if args.metric == "app":
        preds = load_candidates(args.candidates)
        curves = app(preds, gt_keypoints(ds.objects), args.H, args.P, cfg.ap_mode)
        for name, c in curves.items():
            _write_csv(out / f"app_{name}.csv", ["recall", "precision"], zip(c.recall, c.precision))
            summary.append(("app", name, c.ap))
        if curves:
            summary.append(("app", "mean", float(np.mean([c.ap for c in curves.values()]))))
    else:
        preds = _by_class(load_predictions(args.lifts))
        gts = _by_class(ds.objects)
        classes = list(gts)
        values = {}
        registry = recs = None
        if args.metric == "seg":
            registry = load_registry(args.registry or _default_registry(args.dataset))
            recs = {(str(r["image_id"]), r.get("detection_id")): r for r in read_jsonl(args.lifts)}
        for cls in classes:
            p, g = preds.get(cls, []), gts[cls]
            if args.metric == "ap":
                c = match_and_pr(p, g, ap_mode=cfg.ap_mode)
                _write_csv(out / f"ap_{cls}.csv", ["recall", "precision"], zip(c.recall, c.precision))
                values.setdefault("ap", []).append((cls, c.ap))
            elif args.metric == "avp":
                for V in args.views:
                    c = avp_binned(p, g, V, ap_mode=cfg.ap_mode)
                    _write_csv(out / f"avp{V}_{cls}.csv", ["recall", "precision"],
                               zip(c.recall, c.precision))
                    values.setdefault(f"avp{V}", []).append((cls, c.ap))
            elif args.metric == "aavp":
                grid, curve, score = aavp(p, g, ap_mode=cfg.ap_mode)
                _write_csv(out / f"aavp_{cls}.csv", ["D", "avp"], zip(grid, curve))
                values.setdefault("aavp", []).append((cls, score))
                values.setdefault("ap", []).append((cls, match_and_pr(p, g, ap_mode=cfg.ap_mode).ap))
            elif args.metric == "seg":
                order, matched = match(p, g)
                owner = {j: p[i] for i, j in zip(order, matched) if j is not None}
                rows = []
                for j, gt in enumerate(g):
                    if gt.difficult or gt.mask is None:
                        continue
                    if args.aligned_only and gt.prototype_id is None:
                        continue
                    im = ds.images[gt.image_id]
                    pred = owner.get(j)
                    rec = recs.get((pred.image_id, pred.id)) if pred is not None else None
                    mask = (_mask_for(rec, registry, (im.width, im.height)) if rec is not None
                            else np.zeros_like(gt.mask))
                    rows.append((gt.image_id, gt.id, seg_accuracy(mask, gt.mask, gt.bbox)))
                _write_csv(out / f"seg_{cls}.csv", ["image_id", "object_id", "accuracy"], rows)
                if rows:
                    values.setdefault("seg", []).append((cls, float(np.mean([r[2] for r in rows]))))
        for metric, per_class in values.items():
            summary.extend((metric, cls, v) for cls, v in per_class)
            summary.append((metric, "mean", float(np.mean([v for _, v in per_class]))))

    _write_csv(out / "summary.csv", ["metric", "class", "value"], summary)
    _write_config(out / "run_config.json", cfg)
    for metric, cls, v in summary:
        if cls == "mean":
            print(f"{metric}\t{v:.6f}")


# --- argument parsing ---------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="lift3d", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset with exact ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--registry", help="prototype manifest (default: built-in box cars)")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--focal", type=float)
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--feature-dim", type=int, default=4)
    p.add_argument("--feature-noise", type=float, default=0.0)
    p.add_argument("--no-masks", action="store_true")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("fit-spatial", help="fit the viewpoint-conditioned spatial model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--components", type=int, default=8)
    p.add_argument("--kappa", type=float, default=2.0)
    p.add_argument("--classes", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_spatial)

    p = sub.add_parser("train-regressor", help="train a continuous azimuth regressor")
    p.add_argument("--features", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--penalty", choices=["ridge", "lasso", "elastic-net"], default="ridge")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--lambda-grid", help="comma separated lambdas for k-fold selection")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--l1-ratio", type=float, default=0.5)
    p.add_argument("--unwrap-mode", choices=["raw", "recenter"], default="raw")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--cd-tol", type=float, default=1e-8)
    p.add_argument("--class", dest="cls")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_regressor)

    p = sub.add_parser("predict-viewpoint", help="attach regressed azimuths to detections")
    p.add_argument("--features", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--regressor", action="append", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_viewpoint)

    p = sub.add_parser("lift", help="lift detections to 3D prototypes and poses")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--spatial", required=True)
    p.add_argument("--registry", help="prototype manifest (default: <dataset>/registry/manifest.json)")
    p.add_argument("--regressor", action="append")
    p.add_argument("--features")
    p.add_argument("--index")
    p.add_argument("--strategy", choices=["guided", "best-objective"], default="guided")
    p.add_argument("--robust", choices=["l2", "l1-smooth"], default="l2")
    p.add_argument("--focal", type=float)
    p.add_argument("--theta-limit", type=float)
    p.add_argument("--use-scores", action="store_true", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("render-mask", help="render lifted silhouettes to PBM files")
    p.add_argument("--dataset", required=True)
    p.add_argument("--lifts", required=True)
    p.add_argument("--registry")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_mask)

    p = sub.add_parser("eval", help="evaluate predictions")
    p.add_argument("metric", choices=["ap", "avp", "aavp", "app", "seg"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--lifts", "--predictions", dest="lifts")
    p.add_argument("--candidates", help="keypoint candidates (app)")
    p.add_argument("--registry", help="prototype manifest (seg)")
    p.add_argument("--views", type=lambda s: [int(v) for v in s.split(",")], default=[4, 8, 16, 24])
    p.add_argument("--ap-mode", choices=["allpoints", "11pt"], default="allpoints")
    p.add_argument("--H", type=float, default=100.0)
    p.add_argument("--P", type=float, default=25.0)
    p.add_argument("--all-objects", dest="aligned_only", action="store_false",
                   help="seg: include objects without a ground-truth prototype")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval":
        needs = {"app": "candidates"}.get(args.metric, "lifts")
        if getattr(args, needs) is None:
            print(json.dumps({"error": "UsageError", "message": f"eval {args.metric} needs --{needs}"}),
                  file=sys.stderr)
            return 2
    try:
        args.func(args)
    except (Lift3DError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
