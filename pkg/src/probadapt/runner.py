"""Experiment pipelines: single runs, ablation grids, and report files.

Every run writes two files into its output directory:

* ``epochs.csv`` with the frozen header
  ``epoch,target_acc,l_cls,l_cpa,l_cgi,lambda2,lambda3,eta``
* ``summary.json`` with deterministic fields only (wall time stays in the
  in-memory record so reruns are byte-identical)

Files are written atomically (temp file then rename). The environment
variable ``PROBADAPT_OUTPUT_ROOT`` reroots relative output paths.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import ExperimentConfig, config_hash
from .data import make_pretrain_task, make_uda_pair
from .errors import ContractViolationError, TrainingDivergedError
from .model import fig1_analog, heldout_accuracy, pretrain
from .trainer import TrainReport, train

OUTPUT_ROOT_ENV = "PROBADAPT_OUTPUT_ROOT"

EPOCHS_HEADER = "epoch,target_acc,l_cls,l_cpa,l_cgi,lambda2,lambda3,eta"

COMPONENT_GRID = (
    # (name, lambda2 on, lambda3 on, penalty updates backbone)
    ("cls_only", False, False, False),
    ("cls_cpa", True, False, False),
    ("cls_cgi_backbone", False, True, True),
    ("cls_cpa_cgi_backbone", True, True, True),
    ("cls_cgi_head", False, True, False),
    ("cls_cpa_cgi_head", True, True, False),
)

PDA_THRESHOLD_SWEEP = (0, 1, 2, 5, 10, 14, 20, 30)

GRID_AXES = ("beta_variant", "penalty_variant", "components", "pda_threshold")


@dataclass
class RunRecord:
    mode: str
    seed: int
    config_hash: str
    status: str
    out_dir: Path
    report: TrainReport | None = None
    summary: dict = field(default_factory=dict)
    wall_time: float = 0.0


def resolve_out_dir(cfg: ExperimentConfig, *extra: str) -> Path:
    out = Path(cfg.outputs)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    for part in extra:
        out = out / part
    return out


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_epochs_csv(path: Path, report: TrainReport) -> None:
    lines = [EPOCHS_HEADER]
    for r in report.epochs:
        lines.append(",".join([str(r.epoch), repr(r.target_acc), repr(r.l_cls),
                               repr(r.l_cpa), repr(r.l_cgi), repr(r.lambda2),
                               repr(r.lambda3), repr(r.eta)]))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_epochs_csv(path: Path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != EPOCHS_HEADER:
        raise ContractViolationError(f"unexpected epochs.csv header in {path}")
    cols = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        row = dict(zip(cols, parts))
        rows.append({k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()})
    return rows


def write_summary(path: Path, summary: dict) -> None:
    _atomic_write(path, json.dumps(summary, sort_keys=True, indent=2) + "\n")


def read_summary(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def summary_metrics(summary: dict) -> dict:
    """Summary minus run-identity fields; used to compare runs across modes."""
    drop = {"mode", "config_hash", "pda_threshold"}
    return {k: v for k, v in summary.items() if k not in drop}


def _pretrained_model(cfg: ExperimentConfig):
    task = make_pretrain_task(cfg.generator_spec())
    params = pretrain(task, cfg.task_classes, cfg.pretrain_epochs, cfg.pretrain_lr,
                      cfg.seed, batch_size=cfg.batch_size,
                      momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    return params, heldout_accuracy(params, task)


def _train_summary(cfg: ExperimentConfig, report: TrainReport, pretrain_acc: float,
                   status: str = "complete") -> dict:
    return {
        "status": status,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "epochs_completed": len(report.epochs),
        "pretrain_heldout_accuracy": pretrain_acc,
        "final_target_accuracy": report.final_target_accuracy,
        "feature_distance": report.feature_distance,
        "probability_distance": report.probability_distance,
        "probability_distance_smaller": report.probability_distance < report.feature_distance,
    }


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None) -> RunRecord:
    """Execute one mode pipeline and write its report files.

    The ablation modes delegate to :func:`run_grid` and return the aggregate
    record. Divergence produces a record with status "incomplete" instead of
    raising; config errors raise before anything is written.
    """
    if cfg.mode == "ablation_beta":
        return _grid_aggregate(cfg, run_grid(cfg, "beta_variant"))
    if cfg.mode == "ablation_penalty":
        return _grid_aggregate(cfg, run_grid(cfg, "penalty_variant"))
    if cfg.mode == "ablation_components":
        return _grid_aggregate(cfg, run_grid(cfg, "components"))

    if cfg.mode not in ("uda", "baseline", "pda", "fig1"):
        raise ContractViolationError(f"unknown mode {cfg.mode!r}")

    out = resolve_out_dir(cfg) if out_dir is None else out_dir
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    record = RunRecord(mode=cfg.mode, seed=cfg.seed, config_hash=config_hash(cfg),
                       status="complete", out_dir=out)

    try:
        params, pretrain_acc = _pretrained_model(cfg)
        pair = make_uda_pair(cfg.generator_spec())
        if cfg.mode == "fig1":
            distances = fig1_analog(params, pair.source, pair.target, cfg.seed)
            summary = {
                "status": "complete",
                "mode": cfg.mode,
                "seed": cfg.seed,
                "config_hash": record.config_hash,
                "pretrain_heldout_accuracy": pretrain_acc,
                "feature_distance": distances["feature_distance"],
                "probability_distance": distances["probability_distance"],
                "probability_distance_smaller":
                    distances["probability_distance"] < distances["feature_distance"],
            }
            report = TrainReport()
        else:
            if cfg.mode == "baseline":
                schedule = cfg.schedule_config(lambda2_a=0.0, lambda3_a=0.0)
            else:
                schedule = cfg.schedule_config()
            report, _ = train(params, pair, schedule,
                              cfg.train_config(with_pda=(cfg.mode == "pda")))
            summary = _train_summary(cfg, report, pretrain_acc)
            if cfg.mode == "pda":
                summary["pda_threshold"] = cfg.pda_threshold
            record.report = report
    except TrainingDivergedError as exc:
        record.status = "incomplete"
        summary = {
            "status": "incomplete",
            "mode": cfg.mode,
            "seed": cfg.seed,
            "config_hash": record.config_hash,
            "error": str(exc),
        }
        report = TrainReport()

    write_epochs_csv(out / "epochs.csv", report)
    write_summary(out / "summary.json", summary)
    record.summary = summary
    record.wall_time = time.perf_counter() - started
    return record


def _grid_points(cfg: ExperimentConfig, axis: str):
    """(name, config) pairs for one ablation axis; all share the base seed."""
    from dataclasses import replace

    if axis == "beta_variant":
        for variant in ("constant_half", "exp_neg_entropy", "max_prob", "exp_neg_kl"):
            yield variant, replace(cfg, mode="uda", beta_variant=variant)
    elif axis == "penalty_variant":
        for variant in ("GE", "CGE", "GI", "CGI_noreg", "CGI"):
            yield variant, replace(cfg, mode="uda", penalty_variant=variant)
    elif axis == "components":
        for name, use_cpa, use_cgi, backbone in COMPONENT_GRID:
            yield name, replace(cfg, mode="uda",
                                lambda2_a=cfg.lambda2_a if use_cpa else 0.0,
                                lambda3_a=cfg.lambda3_a if use_cgi else 0.0,
                                cgi_updates_backbone=backbone)
    elif axis == "pda_threshold":
        for threshold in PDA_THRESHOLD_SWEEP:
            yield f"t{threshold}", replace(cfg, mode="pda", pda_threshold=threshold)
    else:
        raise ContractViolationError(f"unknown grid axis {axis!r}")


def run_grid(cfg: ExperimentConfig, axis: str) -> list[RunRecord]:
    """One run per grid point under ``<outputs>/<axis>/<point>/``.

    A failing point is recorded as failed and the grid continues. Writes an
    aggregated ``grid_summary.csv`` next to the per-point directories.
    """
    records = []
    base = resolve_out_dir(cfg, axis)
    for name, point_cfg in _grid_points(cfg, axis):
        out = base / name
        try:
            rec = run_experiment(point_cfg, out_dir=out)
        except Exception as exc:  # keep sweeping; mark the point
            rec = RunRecord(mode=point_cfg.mode, seed=point_cfg.seed,
                            config_hash=config_hash(point_cfg), status="failed",
                            out_dir=out, summary={"status": "failed", "error": str(exc)})
        rec.summary = dict(rec.summary, grid_point=name)
        records.append(rec)
    lines = ["point,status,final_target_accuracy"]
    for rec in records:
        acc = rec.summary.get("final_target_accuracy", "")
        lines.append(f"{rec.summary.get('grid_point')},{rec.status},"
                     f"{repr(acc) if acc != '' else ''}")
    base.mkdir(parents=True, exist_ok=True)
    _atomic_write(base / "grid_summary.csv", "\n".join(lines) + "\n")
    return records


def read_grid_summary(path: Path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "point,status,final_target_accuracy":
        raise ContractViolationError(f"unexpected grid summary header in {path}")
    rows = []
    for ln in lines[1:]:
        point, status, acc = ln.split(",")
        rows.append({"point": point, "status": status,
                     "final_target_accuracy": float(acc) if acc else None})
    return rows


def _grid_aggregate(cfg: ExperimentConfig, records: list[RunRecord]) -> RunRecord:
    status = "complete" if all(r.status == "complete" for r in records) else "incomplete"
    return RunRecord(mode=cfg.mode, seed=cfg.seed, config_hash=config_hash(cfg),
                     status=status, out_dir=resolve_out_dir(cfg),
                     summary={"status": status,
                              "points": [r.summary.get("grid_point") for r in records]})
