"""
Database models for the SPARK run registry

Tables:
- TrainingRun: One CLI invocation that trains or evaluates a model
- EpochRecord: Per-epoch loss breakdown and validation recall
- AuditLog: Registry audit trail
"""

from datetime import datetime, timezone
from sqlalchemy import (
    Column, Integer, String, Float, DateTime, Text,
    ForeignKey, Enum as SQLEnum
)
from sqlalchemy.orm import relationship, declarative_base
import enum

Base = declarative_base()


class RunStatus(enum.Enum):
    """Lifecycle of a registered run"""
    RUNNING   = "running"
    COMPLETED = "completed"
    FAILED    = "failed"


class TrainingRun(Base):
    """A recorded train / ablate / sweep / eval invocation"""
    __tablename__ = "training_runs"

    id = Column(Integer, primary_key=True)
    command = Column(String(50), nullable=False)
    variant = Column(String(50), nullable=False)
    seed = Column(Integer, nullable=False)
    config_hash = Column(String(64), nullable=False)
    config_json = Column(Text, nullable=False)
    status = Column(SQLEnum(RunStatus), nullable=False, default=RunStatus.RUNNING)
    best_val_recall = Column(Float, nullable=True)
    test_metrics_json = Column(Text, nullable=True)
    checkpoint_path = Column(String(500), nullable=True)
    error = Column(Text, nullable=True)
    started_at = Column(DateTime, default=lambda: datetime.now(timezone.utc))
    finished_at = Column(DateTime, nullable=True)

    # Relationships
    epochs = relationship("EpochRecord", back_populates="run", order_by="EpochRecord.epoch")
    audit_logs = relationship("AuditLog", back_populates="run")


class EpochRecord(Base):
    """One line of the epoch log"""
    __tablename__ = "epoch_records"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("training_runs.id"), nullable=False)
    epoch = Column(Integer, nullable=False)
    loss_total = Column(Float, nullable=False)
    loss_rec = Column(Float, nullable=False)
    loss_cl = Column(Float, nullable=False)
    loss_tucker = Column(Float, nullable=False)
    loss_reg = Column(Float, nullable=False)
    val_recall_20 = Column(Float, nullable=True)

    run = relationship("TrainingRun", back_populates="epochs")


class AuditLog(Base):
    """Registry audit trail"""
    __tablename__ = "audit_logs"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("training_runs.id"), nullable=True)
    action = Column(String(100), nullable=False)
    details = Column(Text, nullable=True)
    timestamp = Column(DateTime, default=lambda: datetime.now(timezone.utc))

    # Relationships
    run = relationship("TrainingRun", back_populates="audit_logs")
