import json
import os
import pathlib
import tempfile

import pytest

import apricot


def workdir(name):
    root = pathlib.Path(os.environ.get("APRICOT_TEST_TMP", tempfile.gettempdir()))
    path = root / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def test_default_model_size():
    assert apricot.param_count() == 141513


def test_config_overrides_and_errors():
    cfg = apricot.default_config(overrides=["train.epochs=3"], seed=5)
    assert cfg["train"]["epochs"] == 3
    assert cfg["seed"] == 5
    assert cfg["model"]["seed"] == 5
    with pytest.raises(apricot.PipelineError, match="synth.bogus"):
        apricot.resolve_config(overrides=["synth.bogus=1"])


def test_statistics():
    assert apricot.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert apricot.auroc([0.1, 0.2], [1, 1]) is None
    threshold, j = apricot.youden_threshold([0.2, 0.6, 0.7, 0.9], [0, 0, 1, 1])
    assert threshold == 0.7 and j == 1.0
    x, y = apricot.isotonic_fit([0.1, 0.2, 0.3], [1, 0, 1])
    assert y == sorted(y)
    assert apricot.brier([1.0, 0.0], [1, 0]) == 0.0
    u, p = apricot.wilcoxon_ranksum([1, 2], [3, 4])
    assert u == 0.0 and abs(p - 1 / 3) < 1e-12


def test_decide_status():
    names = apricot.head_names()
    assert len(names) == 9
    bits = [False] * 9
    assert apricot.decide_status(bits) == apricot.decide_status([False] * 9)
    bits[names.index("deceased")] = True
    bits[names.index("unstable")] = True
    assert apricot.decide_status(bits) == "deceased"


def test_stage_order_and_tiny_pipeline():
    out = workdir("tiny")
    with pytest.raises(apricot.PipelineError, match="train first"):
        apricot.run_stage("eval", str(out / "empty"))
    overrides = [
        "synth.n_patients=30",
        "train.epochs=1",
        "eval.bootstrap_iterations=5",
        "attribute.samples=2",
        "attribute.steps=4",
    ]
    apricot.run_stage("pipeline", str(out / "run"), overrides=overrides, seed=3, force=True)
    report = json.loads((out / "run" / "eval" / "report.json").read_text())
    assert set(report) == set(apricot.head_names())
    assert (out / "run" / "analyze" / "status_confusion.csv").exists()
