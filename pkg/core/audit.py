"""
Run registry helpers: audit entries, run lifecycle and epoch records.

Every helper adds to an existing session; the caller commits.
"""

import json
from datetime import datetime, timezone
from typing import Optional

from core.models import AuditLog, EpochRecord, RunStatus, TrainingRun


def log_audit(session, run_id, action: str, details: str = None):
    """Add an AuditLog entry to an existing session (caller commits)."""
    entry = AuditLog(
        run_id=run_id,
        action=action,
        details=details,
    )
    session.add(entry)


def start_run(session, command: str, cfg, checkpoint_path: Optional[str] = None) -> TrainingRun:
    """Register a running invocation; flushes so the run id is available."""
    run = TrainingRun(
        command=command,
        variant=cfg.variant,
        seed=cfg.seed,
        config_hash=cfg.config_hash(),
        config_json=json.dumps(cfg.model_dump(mode="json"), sort_keys=True),
        checkpoint_path=checkpoint_path,
    )
    session.add(run)
    session.flush()
    log_audit(session, run.id, "run_started", f"{command} variant={cfg.variant} seed={cfg.seed}")
    return run


def record_epoch(session, run: TrainingRun, record: dict) -> None:
    session.add(EpochRecord(
        run_id=run.id,
        epoch=record["epoch"],
        loss_total=record["loss_total"],
        loss_rec=record["loss_rec"],
        loss_cl=record["loss_cl"],
        loss_tucker=record["loss_tucker"],
        loss_reg=record["loss_reg"],
        val_recall_20=record.get("val_recall@20"),
    ))


def finish_run(session, run: TrainingRun, best_val_recall: Optional[float] = None,
               test_metrics: Optional[dict] = None, error: Optional[str] = None) -> None:
    """Mark a run completed (or failed when error is given)."""
    run.status = RunStatus.FAILED if error else RunStatus.COMPLETED
    run.best_val_recall = best_val_recall
    run.test_metrics_json = json.dumps(test_metrics, sort_keys=True) if test_metrics is not None else None
    run.error = error
    run.finished_at = datetime.now(timezone.utc)
    log_audit(session, run.id, "run_failed" if error else "run_completed", error)


def list_runs(session, limit: int = 50) -> list[dict]:
    """Most recent runs first, as JSON-ready dicts."""
    runs = session.query(TrainingRun).order_by(TrainingRun.id.desc()).limit(limit).all()
    return [
        {
            "id": r.id,
            "command": r.command,
            "variant": r.variant,
            "seed": r.seed,
            "config_hash": r.config_hash[:12],
            "status": r.status.value,
            "best_val_recall@20": r.best_val_recall,
            "epochs": len(r.epochs),
            "checkpoint": r.checkpoint_path,
            "started_at": r.started_at.isoformat() if r.started_at else None,
        }
        for r in runs
    ]
