from __future__ import annotations

import filecmp
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from feedlab import cli
from feedlab.config import load_config, parse_config
from feedlab.errors import ConfigurationError

BASE_CONFIG = {
    "seed": 404,
    "out_dir": "OVERRIDDEN",
    "ecosystem": {
        "n_users": 300,
        "mean_degree": 10.0,
        "rewire_prob": 0.1,
        "ticks": 25,
    },
    "timeline": {"u": 14, "w": 7},
    "bucket_edges": [0, 1, 2, 5, 10, 25],
    "model": {"family": "logistic", "l2_grid": [1.0, 10.0]},
    "ranking": {"policy": "pcreate_param", "alpha": 0.7, "alpha_grid": [1.0, 0.5],
                "sweep_seeds": 1},
    "experiment": {"mode": "consumer", "ticks": 14, "measurement_ticks": 7,
                   "n_egos": 10, "min_alters": 5, "split": 0.5},
}


def _write_config(tmp_path, overrides=None, name="run.yaml"):
    doc = json.loads(json.dumps(BASE_CONFIG))  # deep copy
    for dotted, value in (overrides or {}).items():
        node = doc
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        if value is _DELETE:
            node.pop(parts[-1], None)
        else:
            node[parts[-1]] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


class _Delete:
    pass


_DELETE = _Delete()


def _run(args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One fully executed pipeline shared by the read-only CLI tests."""
    tmp = tmp_path_factory.mktemp("cli")
    cfg_path = _write_config(tmp)
    out = tmp / "run1"
    assert _run(["simulate", "--config", cfg_path, "--out", out]) == 0
    assert _run(["train", "--config", cfg_path, "--out", out]) == 0
    assert _run(["estimate", "--config", cfg_path, "--out", out]) == 0
    return tmp, cfg_path, out


# -- config parsing -----------------------------------------------------------------


def test_missing_required_key_named(tmp_path):
    path = _write_config(tmp_path, {"seed": _DELETE})
    with pytest.raises(ConfigurationError, match="seed"):
        load_config(path)
    path2 = _write_config(tmp_path, {"ecosystem.n_users": _DELETE}, name="run2.yaml")
    with pytest.raises(ConfigurationError, match="n_users"):
        load_config(path2)


def test_unknown_key_rejected_by_name(tmp_path):
    path = _write_config(tmp_path, {"ecosystem.n_uzers": 5})
    with pytest.raises(ConfigurationError, match="n_uzers"):
        load_config(path)


def test_missing_key_is_config_exit_code(tmp_path):
    path = _write_config(tmp_path, {"seed": _DELETE})
    assert _run(["simulate", "--config", path, "--out", tmp_path / "x"]) == cli.EXIT_CONFIG


def test_bad_mode_rejected():
    with pytest.raises(ConfigurationError, match="mode"):
        parse_config({**BASE_CONFIG, "experiment": {"mode": "quantum"}})


# -- simulate -------------------------------------------------------------------------


def test_simulate_writes_consistent_artifacts(pipeline_dir):
    _, _, out = pipeline_dir
    log_lines = (out / "eventlog.jsonl").read_text().strip().splitlines()
    assert log_lines[0].startswith("# feedlab-eventlog-v1 seed=")
    pop_lines = (out / "population.csv").read_text().strip().splitlines()
    assert len(pop_lines) == 2 + 300  # header comment + column row + rows
    graph_lines = (out / "graph.csv").read_text().strip().splitlines()
    n_edges = len(graph_lines) - 2
    assert n_edges > 300 * 8  # mean degree 10 +- fraction


def test_simulate_refuses_overwrite(pipeline_dir):
    tmp, cfg_path, out = pipeline_dir
    assert _run(["simulate", "--config", cfg_path, "--out", out]) == cli.EXIT_CONFIG
    assert _run(["simulate", "--config", cfg_path, "--out", out, "--overwrite"]) == 0


def test_simulate_rerun_identical_files(pipeline_dir, tmp_path):
    tmp, cfg_path, out = pipeline_dir
    out2 = tmp_path / "rerun"
    assert _run(["simulate", "--config", cfg_path, "--out", out2]) == 0
    for name in ("eventlog.jsonl", "population.csv", "graph.csv"):
        assert filecmp.cmp(out / name, out2 / name, shallow=False), name


# -- train / estimate -------------------------------------------------------------------


def test_train_outputs_eval_report_rows(pipeline_dir):
    _, _, out = pipeline_dir
    lines = (out / "eval_report.csv").read_text().strip().splitlines()
    assert lines[1] == "segmentation,segment,auroc,auprc,n"
    segments = {line.split(",")[1] for line in lines[2:] if line.startswith("activity,")}
    assert {"all_users", "daily", "weekly", "monthly"} <= segments
    assert (out / "model.json").exists()


def test_estimate_snapshot_row_per_user_and_deterministic(pipeline_dir, tmp_path):
    tmp, cfg_path, out = pipeline_dir
    snap = (out / "snapshot.csv").read_text().strip().splitlines()
    assert len(snap) == 2 + 300

    out2 = tmp_path / "estimate_rerun"
    out2.mkdir()
    for name in ("eventlog.jsonl", "population.csv", "graph.csv", "model.json"):
        (out2 / name).write_bytes((out / name).read_bytes())
    assert _run(["estimate", "--config", cfg_path, "--out", out2]) == 0
    assert filecmp.cmp(out / "snapshot.csv", out2 / "snapshot.csv", shallow=False)


def test_snapshot_validates_against_independent_refit(pipeline_dir):
    _, cfg_path, out = pipeline_dir
    cfg = load_config(cfg_path)
    from feedlab.datagen import TimelineConfig, user_features
    from feedlab.ecosystem.events import eventlog_from_jsonl
    from feedlab.ecosystem.population import population_from_csv
    from feedlab.models.common import load_model
    from feedlab.sensitivity import LevelGrid, fit_exp_decay, level_deltas, snapshot_from_csv

    curves, grid = snapshot_from_csv(out / "snapshot.csv")
    log = eventlog_from_jsonl(out / "eventlog.jsonl")
    population = population_from_csv(out / "population.csv")
    model = load_model(out / "model.json")
    timeline = TimelineConfig(t=log.n_ticks - cfg.w, u=cfg.u, w=cfg.w)
    features = dict(user_features(log, timeline, cfg.bucket_edges, population))

    rng = np.random.default_rng(1)
    for uid in rng.choice(len(population), size=10, replace=False):
        c = curves[int(uid)]
        assert c.user_id == int(uid)
        deltas = level_deltas(model, features[int(uid)], grid)
        b, tau, rss, clamped = fit_exp_decay(grid, deltas)
        assert np.allclose(c.deltas, deltas, atol=1e-12)
        assert c.b == pytest.approx(b, abs=1e-12)
        assert c.tau == pytest.approx(tau, abs=1e-12)
        assert c.clamped_levels == clamped


def test_corrupt_model_is_data_error(pipeline_dir, tmp_path):
    tmp, cfg_path, out = pipeline_dir
    broken = tmp_path / "broken"
    broken.mkdir()
    for name in ("eventlog.jsonl", "population.csv", "graph.csv"):
        (broken / name).write_bytes((out / name).read_bytes())
    (broken / "model.json").write_text('{"format": "feedlab-model-v1", "family": "logistic"}')
    assert _run(["estimate", "--config", cfg_path, "--out", broken]) == cli.EXIT_DATA


def test_missing_input_is_data_error(tmp_path):
    cfg_path = _write_config(tmp_path)
    empty = tmp_path / "empty"
    assert _run(["train", "--config", cfg_path, "--out", empty]) == cli.EXIT_DATA


# -- experiment / report ---------------------------------------------------------------------


def test_experiment_consumer_mode_emits_effect_table(pipeline_dir):
    tmp, cfg_path, out = pipeline_dir
    assert _run(["experiment", "--config", cfg_path, "--out", out]) == 0
    lines = (out / "effects.csv").read_text().strip().splitlines()
    assert lines[0].startswith("# feedlab-effects-v1")
    assert lines[1] == "metric,delta_pct,p_value,label"
    metrics = [line.split(",")[0] for line in lines[2:]]
    assert "feed_viral_actions" in metrics and "feed_interactions" in metrics
    summary = json.loads((out / "effects_summary.json").read_text())
    assert summary["mode"] == "consumer"
    assert {e["metric"] for e in summary["effects"]} == set(metrics)


def test_experiment_ego_mode_emits_creator_table(pipeline_dir, tmp_path):
    tmp, cfg_path, out = pipeline_dir
    ego_cfg = _write_config(tmp_path, {"experiment.mode": "ego"}, name="ego.yaml")
    out_ego = tmp_path / "ego_out"
    out_ego.mkdir()
    for name in ("eventlog.jsonl", "population.csv", "graph.csv", "model.json", "snapshot.csv"):
        (out_ego / name).write_bytes((out / name).read_bytes())
    assert _run(["experiment", "--config", ego_cfg, "--out", out_ego]) == 0
    lines = (out_ego / "effects.csv").read_text().strip().splitlines()
    metrics = [line.split(",")[0] for line in lines[2:]]
    assert "retained_creator" in metrics and "contributors" not in metrics
    assert "contributor_with_response" in metrics


def test_experiment_sweep_mode(pipeline_dir, tmp_path):
    tmp, cfg_path, out = pipeline_dir
    sweep_cfg = _write_config(tmp_path, {"experiment.mode": "sweep", "experiment.ticks": 10,
                                         "experiment.measurement_ticks": 5}, name="sweep.yaml")
    out_sweep = tmp_path / "sweep_out"
    out_sweep.mkdir()
    for name in ("eventlog.jsonl", "population.csv", "graph.csv", "snapshot.csv"):
        (out_sweep / name).write_bytes((out / name).read_bytes())
    assert _run(["experiment", "--config", sweep_cfg, "--out", out_sweep]) == 0
    lines = (out_sweep / "sweep.csv").read_text().strip().splitlines()
    assert len(lines) == 2 + 2  # two alpha rows
    assert lines[1].startswith("alpha,policy,consumer_ctr")


def test_report_outputs_plot_data(pipeline_dir):
    tmp, cfg_path, out = pipeline_dir
    assert _run(["report", "--config", cfg_path, "--out", out, "--overwrite"]) == 0
    fb_lines = (out / "report_creation_vs_feedback.csv").read_text().strip().splitlines()
    assert fb_lines[1] == "feedback_level,n,mean_p,ci_lo,ci_hi"
    assert len(fb_lines) >= 3

    # Wald interval hand-check on the first bucket row
    level, n, mean_p, ci_lo, ci_hi = fb_lines[2].split(",")
    n, mean_p = int(n), float(mean_p)
    half = 1.96 * np.sqrt(mean_p * (1 - mean_p) / n)
    assert float(ci_lo) == pytest.approx(max(0.0, mean_p - half), abs=1e-12)
    assert float(ci_hi) == pytest.approx(min(1.0, mean_p + half), abs=1e-12)

    box_lines = (out / "report_sensitivity_boxplot.csv").read_text().strip().splitlines()
    assert box_lines[1] == "cohort,n,whisker_lo,q1,median,q3,whisker_hi"
    cohorts = {line.split(",")[0] for line in box_lines[2:]}
    assert {"daily", "weekly", "monthly"} <= cohorts


def test_report_includes_alpha_curve_when_sweep_present(pipeline_dir, tmp_path):
    tmp, cfg_path, out = pipeline_dir
    target = tmp_path / "report_sweep"
    target.mkdir()
    for name in ("eventlog.jsonl", "population.csv", "snapshot.csv"):
        (target / name).write_bytes((out / name).read_bytes())
    (target / "sweep.csv").write_text(
        "# feedlab-sweep-v1\n"
        "alpha,policy,consumer_ctr,viral_actions,feedback_gini,top_quartile_feedback_share,seeds_used\n"
        "1.0,pcreate_param,0.21,100.0,0.5,0.3,5\n"
        "0.5,pcreate_param,0.2,98.0,0.48,0.36,5\n"
    )
    assert _run(["report", "--config", cfg_path, "--out", target]) == 0
    alpha_lines = (target / "report_alpha_tradeoff.csv").read_text().strip().splitlines()
    assert alpha_lines[1] == "alpha,consumer_ctr,top_quartile_feedback_share"
    assert alpha_lines[2] == "1.0,0.21,0.3"
    assert alpha_lines[3] == "0.5,0.2,0.36"


@pytest.mark.slow
def test_consumer_aa_batch_mostly_neutral(pipeline_dir, tmp_path):
    # A/A: treatment and control both consumer-only; at least 90% of metric
    # labels across seeds must be Neutral.
    tmp, cfg_path, out = pipeline_dir
    aa_cfg = _write_config(tmp_path, {"ranking.policy": "consumer_only",
                                      "ranking.alpha": 1.0,
                                      "experiment.control_policy": "consumer_only"},
                           name="aa.yaml")
    labels = []
    for seed in range(20):
        run_dir = tmp_path / f"aa_{seed}"
        run_dir.mkdir()
        for name in ("eventlog.jsonl", "population.csv", "graph.csv", "model.json",
                     "snapshot.csv"):
            (run_dir / name).write_bytes((out / name).read_bytes())
        assert _run(["experiment", "--config", aa_cfg, "--out", run_dir,
                     "--seed", 9000 + seed]) == 0
        lines = (run_dir / "effects.csv").read_text().strip().splitlines()
        labels += [line.split(",")[-1] for line in lines[2:]]
    neutral = sum(1 for lb in labels if lb == "Neutral")
    assert neutral / len(labels) >= 0.9
