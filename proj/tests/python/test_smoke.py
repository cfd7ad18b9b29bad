import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

import o2o_lab as o2o

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def test_metric_values():
    assert o2o.stability([0.5, 0.3, 0.7], 0.5) == pytest.approx(-0.2, abs=1e-15)
    assert o2o.plasticity([0.5, 0.3, 0.7]) == pytest.approx(0.4, abs=1e-15)
    d = o2o.decompose([0.4, 0.2, 0.8], 0.5)
    assert d["prior"] + d["stability"] + d["plasticity"] == pytest.approx(d["final"], abs=1e-12)
    assert o2o.iqm([1, 2, 3, 4]) == 2.5
    with pytest.raises(ValueError):
        o2o.iqm([1, 2])


def test_statistics_match_scipy():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = rng.normal(0.5, rng.uniform(0.01, 0.3), rng.integers(2, 60))
        b = rng.normal(0.5, rng.uniform(0.01, 0.3), rng.integers(2, 60))
        ref = stats.ttest_ind(a, b, equal_var=False)
        got = o2o.welch_two_sided(list(a), list(b))
        assert got["t"] == pytest.approx(ref.statistic, rel=1e-9)
        assert got["p"] == pytest.approx(ref.pvalue, abs=1e-9)
    for t, dof in [(2.042, 30.0), (-1.3, 4.5), (0.0, 2.0)]:
        assert o2o.student_t_cdf(t, dof) == pytest.approx(stats.t.cdf(t, dof), abs=1e-10)


def test_published_regimes_and_matrix():
    assert o2o.tost_classify((0.451, 0.002, 10), (0.271, 0.135, 202))["label"] == "Superior"
    assert o2o.tost_classify((0.657, 0.059, 10), (1.0, 0.0, 846))["label"] == "Inferior"
    m = o2o.confusion_matrix([[24, 2, 1], [6, 2, 3], [2, 4, 19]])
    assert (m["correct"], m["opposite"], m["total"]) == (45, 3, 63)
    assert m["summary"].startswith("correct 45/63 (71%), opposite mismatches 3/63 (5%)")


def test_network_gradients():
    net = o2o.DenseNet([3, 5, 2], hidden="tanh", output="linear", seed=2)
    x = np.random.default_rng(0).normal(size=(4, 3))
    g = np.ones((4, 2))
    dw, db, dx = net.backward(x, g)
    h = 1e-6
    w = [m.copy() for m in net.weights]
    w[0][1, 2] += h
    up = o2o.DenseNet([3, 5, 2], hidden="tanh", output="linear", seed=2)
    up.weights = w
    numeric = (up.forward(x).sum() - net.forward(x).sum()) / h
    assert dw[0][1, 2] == pytest.approx(numeric, rel=1e-4)
    assert dx.shape == (4, 3)


def test_dataset_mix():
    per_traj, n = o2o.dataset_returns(
        "pendulum",
        [{"behavior": {"kind": "expert"}, "n_traj": 10}, {"behavior": {"kind": "uniform_random"}, "n_traj": 10}],
        3,
    )
    assert len(per_traj) == 20 and n == 20 * 200
    assert np.mean(per_traj) == pytest.approx(0.5, abs=0.1)


def test_finetune_warmup_schedule():
    log = o2o.finetune(
        "pendulum",
        [{"behavior": {"kind": "expert"}, "n_traj": 2}],
        1,
        {"hidden": [8, 8], "batch": 16},
        20,
        0.4,
        {"method": "warmup", "total_env_steps": 300, "warmup_steps": 100, "eval_every": 100, "eval_episodes": 1},
        5,
    )
    assert log["counters"]["first_update_step"] == 101
    assert [p["step"] for p in log["curve"]] == [0, 100, 200, 300]


def test_pipeline_is_deterministic(tmp_path):
    config = json.loads((CONFIGS / "smoke.json").read_text())
    outputs = []
    for i in range(2):
        config["output_dir"] = str(tmp_path / f"run{i}")
        outputs.append(o2o.run(config))
    assert json.dumps(outputs[0], sort_keys=True) == json.dumps(outputs[1], sort_keys=True)
    assert outputs[0]["complete"]
    assert o2o.config_hash(config) == outputs[0]["config_hash"]
    m = o2o.matrix([config])
    assert m["confusion"]["total"] == len(m["settings"])
    with pytest.raises(FileNotFoundError):
        o2o.classify(dict(config, output_dir=str(tmp_path / "empty")))
