import json

import pytest

from lift3d.cli import main
from lift3d.data import read_jsonl

from scenes import read_summary, run_pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("run"), n=12, seed=5)


def test_chain_outputs(pipeline):
    lifts = read_jsonl(pipeline / "lifts.jsonl")
    assert len(lifts) == 12 and not any("error" in r for r in lifts)
    assert {"prototype_id", "pose", "residual", "component_id", "keypoints"} <= set(lifts[0])
    cfg = json.loads((pipeline / "lifts.jsonl.config.json").read_text())
    assert cfg["format"] == "runconfig/1" and cfg["strategy"] == "guided"
    model = json.loads((pipeline / "model.json").read_text())
    assert model["format"] == "regressor/1" and model["penalty"] == "ridge"
    assert json.loads((pipeline / "spatial.json").read_text())["config"]["kappa"] == 3.0


def test_eval_files(pipeline):
    aavp_dir = pipeline / "eval" / "aavp"
    lines = (aavp_dir / "aavp_car.csv").read_text().splitlines()
    assert lines[0] == "D,avp" and len(lines) == 182
    s = read_summary(aavp_dir / "summary.csv")
    assert s[("aavp", "mean")] == 1.0 and s[("ap", "mean")] == 1.0
    avp = read_summary(pipeline / "eval" / "avp" / "summary.csv")
    assert {m for m, _ in avp} == {"avp4", "avp8", "avp16", "avp24"}
    assert read_summary(pipeline / "eval" / "app" / "summary.csv")[("app", "mean")] == 1.0
    assert read_summary(pipeline / "eval" / "seg" / "summary.csv")[("seg", "mean")] >= 0.98


def test_render_mask(pipeline, tmp_path):
    code = main(["render-mask", "--dataset", str(pipeline / "synth" / "dataset"),
                 "--lifts", str(pipeline / "lifts.jsonl"), "--out", str(tmp_path)])
    assert code == 0
    assert len(list(tmp_path.glob("*.pbm"))) == 12


def test_predict_viewpoint(pipeline, tmp_path):
    syn = pipeline / "synth"
    out = tmp_path / "det.jsonl"
    code = main(["predict-viewpoint", "--features", str(syn / "features.bin"), "--index",
                 str(syn / "features.json"), "--regressor", str(pipeline / "model.json"),
                 "--detections", str(syn / "detections.jsonl"), "--out", str(out)])
    assert code == 0
    truth = {o["image_id"]: o["azimuth"] for o in read_jsonl(syn / "dataset" / "objects.jsonl")}
    for d in read_jsonl(out):
        err = abs(d["azimuth"] - truth[d["image_id"]]) % 360
        assert min(err, 360 - err) < 1e-3


def test_lambda_grid(pipeline, tmp_path):
    syn = pipeline / "synth"
    code = main(["train-regressor", "--features", str(syn / "features.bin"), "--index",
                 str(syn / "features.json"), "--lambda-grid", "1e-6,10,1000", "--folds", "3",
                 "--out", str(tmp_path / "m.json")])
    assert code == 0
    assert json.loads((tmp_path / "m.json").read_text())["lambda"] == 1e-6


def test_error_exit(tmp_path, capsys):
    code = main(["fit-spatial", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "s.json")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "SchemaError"


def test_eval_needs_input(tmp_path, capsys):
    assert main(["eval", "ap", "--dataset", str(tmp_path), "--out", str(tmp_path)]) == 2
    assert "UsageError" in capsys.readouterr().err


def test_failed_lift_is_recorded(pipeline, tmp_path):
    syn = pipeline / "synth"
    (tmp_path / "c.jsonl").write_text("")
    code = main(["lift", "--dataset", str(syn / "dataset"), "--detections", str(syn / "detections.jsonl"),
                 "--candidates", str(tmp_path / "c.jsonl"), "--spatial", str(pipeline / "spatial.json"),
                 "--regressor", str(pipeline / "model.json"), "--features", str(syn / "features.bin"),
                 "--index", str(syn / "features.json"), "--out", str(tmp_path / "l.jsonl")])
    assert code == 0
    recs = read_jsonl(tmp_path / "l.jsonl")
    assert all(r["error"]["type"] == "NoVisibleKeypoints" for r in recs)
