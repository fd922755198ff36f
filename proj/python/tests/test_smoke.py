import json

import numpy as np
import pytest

import guidefree as gf


def test_version():
    assert gf.__version__ == "0.1.0"


def test_canonical_optimum():
    cond = np.array([[0.7, 0.1], [0.2, 0.2], [0.1, 0.7]])
    q = gf.mclr_optimum(cond, [0.5, 0.5], 0, 1.0, 1e-9)
    assert np.allclose(q, [5 / 6, 1 / 6, 0.0], atol=1e-6)


def test_ccdpo_optimum_with_self_reference():
    cond = np.array([[0.7, 0.1], [0.2, 0.2], [0.1, 0.7]])
    q = np.array(gf.ccdpo_optimum(cond, [0.5, 0.5], cond, 0, 1.0))
    expected = np.array([0.49 / 0.4, 0.04 / 0.2, 0.01 / 0.4])
    assert np.allclose(q, expected / expected.sum(), atol=1e-14)


def test_world_metrics():
    x, labels = gf.sample_world(separation=1.0, n=4000, seed=1)
    assert x.shape == (4000, 2)
    assert 0.9 < gf.bayes_accuracy(x, labels, 1.0) < 1.0
    assert gf.frechet_distance(x, x) < 1e-12


def test_verify_reports_json():
    passed, report = gf.verify("theorem1", problems=5)
    assert passed
    assert json.loads(report)["suite"] == "theorem1"
    strict, _ = gf.verify("theorem1", problems=5, tolerance=0.0)
    assert not strict


def test_train_and_sample(tmp_path):
    config = {
        "version": 1,
        "seed": 2,
        "name": "py",
        "model": {"hidden_layers": 1, "width": 8, "embed_dim": 2},
        "schedule": {"steps": 6},
        "train": {"iterations": 10, "checkpoint_every": 5, "batch_size": 16},
        "eval": {"samples_per_class": 32, "truth_per_class": 32},
    }
    run = gf.train(json.dumps(config), str(tmp_path / "run"))
    assert [r["iteration"] for r in run["records"]] == [0, 5, 10]
    ckpt = str(tmp_path / "run" / run["checkpoints"][-1])
    a = gf.sample(ckpt, n=8, steps=6, seed=4, out_dir=str(tmp_path / "a"))
    b = gf.sample(ckpt, n=8, steps=6, seed=4, out_dir=str(tmp_path / "b"))
    assert sorted(a) == [0, 1]
    assert np.array_equal(a[0], b[0])


def test_bad_config_raises():
    with pytest.raises(ValueError):
        gf.train('{"version": 1}', "/tmp/never")
