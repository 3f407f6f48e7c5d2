"""Staged pipeline driver: simulate | train | estimate | experiment | report.

Each command reads only its declared input files from the run directory and
writes its declared outputs, mirroring the offline-flow / online-ranking split:
`estimate` freezes a utility snapshot that is the sole creator-side input the
ranking stages consume.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments, lab, ranking
from .config import RunConfig, load_config
from .datagen import TimelineConfig, collect_examples
from .ecosystem.events import eventlog_from_jsonl, eventlog_to_jsonl
from .ecosystem.graph import graph_from_csv, graph_to_csv
from .ecosystem.population import ACTIVITY_ORDER, population_from_csv, population_to_csv
from .errors import ConfigurationError, ContractError, DataError, FeedlabError
from .models.common import load_model, save_model
from .models.evaluate import report_to_csv
from .seeds import spawn_seed
from .sensitivity import snapshot_from_csv, snapshot_to_csv

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONTRACT = 4

FILES = {
    "log": "eventlog.jsonl",
    "graph": "graph.csv",
    "population": "population.csv",
    "model": "model.json",
    "eval": "eval_report.csv",
    "snapshot": "snapshot.csv",
    "effects": "effects.csv",
    "summary": "effects_summary.json",
    "sweep": "sweep.csv",
    "fig_feedback": "report_creation_vs_feedback.csv",
    "fig_boxplot": "report_sensitivity_boxplot.csv",
    "fig_alpha": "report_alpha_tradeoff.csv",
}


def _out_path(out_dir: Path, key: str, overwrite: bool) -> Path:
    path = out_dir / FILES[key]
    if path.exists() and not overwrite:
        raise ConfigurationError(f"output file exists (use --overwrite): {path}")
    return path


def _in_path(out_dir: Path, key: str) -> Path:
    path = out_dir / FILES[key]
    if not path.exists():
        raise DataError(f"required input file missing: {path}")
    return path


def _world_from_files(cfg: RunConfig, out_dir: Path) -> lab.World:
    """Rebuild the world from stage artifacts; affinities rederive from the seed."""
    graph = graph_from_csv(_in_path(out_dir, "graph"))
    population = population_from_csv(_in_path(out_dir, "population"))
    rng = np.random.default_rng(spawn_seed(cfg.seed, "affinity"))
    affinity = rng.normal(cfg.world.sim.affinity_mean, cfg.world.sim.affinity_sd, graph.n_edges)
    return lab.World(config=cfg.world, graph=graph, population=population,
                     affinity=affinity, seed=cfg.seed)


def cmd_simulate(cfg: RunConfig, out_dir: Path, overwrite: bool) -> None:
    paths = {k: _out_path(out_dir, k, overwrite) for k in ("log", "graph", "population")}
    world = lab.build_world(cfg.world, cfg.seed)
    log = lab.run_policy_sim(world, lab.bootstrap_policy(), cfg.sim_ticks,
                             spawn_seed(cfg.seed, "base-sim"))
    eventlog_to_jsonl(log, paths["log"])
    graph_to_csv(world.graph, paths["graph"])
    population_to_csv(world.population, paths["population"])
    print(f"simulate: {len(log)} events over {log.n_ticks} ticks -> {out_dir}")


def cmd_train(cfg: RunConfig, out_dir: Path, overwrite: bool) -> None:
    model_path = _out_path(out_dir, "model", overwrite)
    eval_path = _out_path(out_dir, "eval", overwrite)
    log = eventlog_from_jsonl(_in_path(out_dir, "log"))
    population = population_from_csv(_in_path(out_dir, "population"))

    timeline = TimelineConfig(t=log.n_ticks - cfg.w, u=cfg.u, w=cfg.w)
    examples = collect_examples(log, timeline, cfg.bucket_edges, population)
    from .datagen import split_dataset
    train, valid, test = split_dataset(examples, cfg.model.split_ratios,
                                       spawn_seed(cfg.seed, "split"))
    if cfg.model.family == "logistic":
        from .models.logistic import train_logistic
        model = train_logistic(train, valid, list(cfg.model.l2_grid),
                               use_interactions=cfg.model.use_interactions)
    else:
        from .models.gbt import train_gbt
        model = train_gbt(train, valid, cfg.model.gbt)

    from .models.evaluate import segment_eval
    reports = [segment_eval(model, test, "activity"), segment_eval(model, test, "contribution")]
    save_model(model, model_path)
    report_to_csv(reports, eval_path)
    all_row = reports[0].row("all_users")
    print(f"train: {cfg.model.family} on {len(train)} examples; "
          f"test AUROC={all_row.auroc:.3f} AUPRC={all_row.auprc:.3f}")


def cmd_estimate(cfg: RunConfig, out_dir: Path, overwrite: bool) -> None:
    snapshot_path = _out_path(out_dir, "snapshot", overwrite)
    log = eventlog_from_jsonl(_in_path(out_dir, "log"))
    population = population_from_csv(_in_path(out_dir, "population"))
    model = load_model(_in_path(out_dir, "model"))

    from .datagen import user_features
    from .sensitivity import LevelGrid, build_snapshot
    timeline = TimelineConfig(t=log.n_ticks - cfg.w, u=cfg.u, w=cfg.w)
    features = user_features(log, timeline, cfg.bucket_edges, population)
    grid = LevelGrid.from_bucket_edges(cfg.bucket_edges)
    curves = build_snapshot(model, features, grid)
    snapshot_to_csv(curves, grid, model, snapshot_path)
    print(f"estimate: wrote {len(curves)} sensitivity curves -> {snapshot_path}")


def _policies_for_experiment(cfg: RunConfig, out_dir: Path, world: lab.World):
    log = eventlog_from_jsonl(_in_path(out_dir, "log"))
    snapshot = ranking.UtilitySnapshot.from_csv(_in_path(out_dir, "snapshot"))
    predictor = ranking.train_feedback_model(log, world.graph, world.population,
                                             ea_window=cfg.world.sim.ea_window_ticks)
    treatment = ranking.make_policy(cfg.ranking.policy, cfg.ranking.alpha, predictor, snapshot)
    control = ranking.make_policy(cfg.experiment.control_policy, cfg.experiment.control_alpha,
                                  predictor, snapshot)
    return treatment, control, predictor, snapshot


def cmd_experiment(cfg: RunConfig, out_dir: Path, overwrite: bool) -> None:
    exp = cfg.experiment
    world = _world_from_files(cfg, out_dir)

    if exp.mode == "sweep":
        sweep_path = _out_path(out_dir, "sweep", overwrite)
        log = eventlog_from_jsonl(_in_path(out_dir, "log"))
        snapshot = ranking.UtilitySnapshot.from_csv(_in_path(out_dir, "snapshot"))
        predictor = ranking.train_feedback_model(log, world.graph, world.population,
                                                 ea_window=cfg.world.sim.ea_window_ticks)
        from .sensitivity import snapshot_from_csv as _load
        artifacts = lab.Artifacts(model=None, timeline=None, edges=cfg.bucket_edges,
                                  grid=None, curves=[], snapshot=snapshot, predictor=predictor)
        rows = ranking.sweep_alpha(world, artifacts, cfg.ranking.policy, cfg.ranking.alpha_grid,
                                   ticks=exp.ticks, measurement_ticks=exp.measurement_ticks,
                                   n_seeds=cfg.ranking.sweep_seeds,
                                   base_seed=spawn_seed(cfg.seed, "sweep"))
        ranking.sweep_to_csv(rows, sweep_path)
        print(f"experiment[sweep]: {len(rows)} alpha rows -> {sweep_path}")
        return

    effects_path = _out_path(out_dir, "effects", overwrite)
    summary_path = _out_path(out_dir, "summary", overwrite)
    treatment, control, _, _ = _policies_for_experiment(cfg, out_dir, world)

    if exp.mode == "consumer":
        result = experiments.run_consumer_ab(world, treatment, control, exp.split,
                                             exp.ticks, spawn_seed(cfg.seed, "consumer-ab"),
                                             measurement_ticks=exp.measurement_ticks)
        metrics = ("feed_viral_actions", "feed_viral_actor", "feed_interactions",
                   "contributions", "public_contributor")
        treat_samples, control_samples = result.treat, result.control
    else:
        clusters = experiments.select_ego_clusters(world.graph, exp.n_egos, exp.min_alters,
                                                   exp.max_overlap,
                                                   spawn_seed(cfg.seed, "ego-select"))
        armed = experiments.assign_treatments(clusters, spawn_seed(cfg.seed, "ego-arms"))
        result = experiments.run_ego_experiment(world, armed, treatment, control,
                                                ticks=exp.ticks,
                                                measurement_ticks=exp.measurement_ticks,
                                                seed=spawn_seed(cfg.seed, "ego-sim"),
                                                effect_multiplier=exp.effect_multiplier)
        metrics = ("contributions", "public_contributor", "contributor_with_response",
                   "retained_creator", "feed_viral_actions")
        treat_samples, control_samples = result.treat, result.control

    estimates = [experiments.delta_effect(treat_samples, control_samples, m) for m in metrics]
    experiments.effects_to_csv(estimates, effects_path, mode=exp.mode)
    experiments.effects_summary_json(estimates, summary_path, mode=exp.mode, seeds=[cfg.seed])
    labeled = ", ".join(f"{e.metric}={e.label}" for e in estimates)
    print(f"experiment[{exp.mode}]: {labeled}")


def cmd_report(cfg: RunConfig, out_dir: Path, overwrite: bool) -> None:
    log = eventlog_from_jsonl(_in_path(out_dir, "log"))
    population = population_from_csv(_in_path(out_dir, "population"))

    # Observed creation rate vs feedback bucket, with a Wald 95% interval.
    timeline = TimelineConfig(t=log.n_ticks - cfg.w, u=cfg.u, w=cfg.w)
    examples = collect_examples(log, timeline, cfg.bucket_edges, population)
    fig_path = _out_path(out_dir, "fig_feedback", overwrite)
    with open(fig_path, "w", encoding="utf-8") as f:
        f.write("# feedlab-report-feedback-v1\n")
        f.write("feedback_level,n,mean_p,ci_lo,ci_hi\n")
        for level in range(1, cfg.bucket_edges.n_levels + 1):
            labels = [ex.label for ex in examples if ex.features.a_bucket == level]
            if not labels:
                continue
            n = len(labels)
            p = float(np.mean(labels))
            half = float(1.96 * np.sqrt(p * (1.0 - p) / n))
            f.write(f"{level},{n},{p!r},{max(0.0, p - half)!r},{min(1.0, p + half)!r}\n")

    # Sensitivity box-plot data per activity cohort from the snapshot.
    snap_path = out_dir / FILES["snapshot"]
    if snap_path.exists():
        curves, _grid = snapshot_from_csv(snap_path)
        box_path = _out_path(out_dir, "fig_boxplot", overwrite)
        delta1 = {c.user_id: float(c.deltas[0]) for c in curves}
        with open(box_path, "w", encoding="utf-8") as f:
            f.write("# feedlab-report-boxplot-v1\n")
            f.write("cohort,n,whisker_lo,q1,median,q3,whisker_hi\n")
            for level in ACTIVITY_ORDER:
                vals = np.array([delta1[p.user_id] for p in population.profiles
                                 if p.activity_level is level and p.user_id in delta1])
                if vals.size == 0:
                    continue
                qs = np.quantile(vals, [0.05, 0.25, 0.5, 0.75, 0.95])
                f.write(f"{level.value},{vals.size}," + ",".join(repr(float(q)) for q in qs) + "\n")

    # Alpha trade-off curve from a prior sweep run, if present.
    sweep_path = out_dir / FILES["sweep"]
    if sweep_path.exists():
        alpha_path = _out_path(out_dir, "fig_alpha", overwrite)
        with open(sweep_path, "r", encoding="utf-8") as src, open(alpha_path, "w", encoding="utf-8") as dst:
            src.readline()
            src.readline()
            dst.write("# feedlab-report-alpha-v1\n")
            dst.write("alpha,consumer_ctr,top_quartile_feedback_share\n")
            for line in src:
                parts = line.strip().split(",")
                if len(parts) >= 6:
                    dst.write(f"{parts[0]},{parts[2]},{parts[5]}\n")
    print(f"report: plot data written -> {out_dir}")


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feedlab",
                                     description="Content-ecosystem lab pipeline")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="YAML run config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
    parser.add_argument("--overwrite", action="store_true",
                        help="allow clobbering existing outputs")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = RunConfig(**{**cfg.__dict__, "seed": args.seed})
        out_dir = Path(args.out if args.out is not None else cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out_dir, args.overwrite)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractError as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FeedlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
