"""
Training of the SPARK recommender.

Handles:
- The composite objective (recommendation + contrastive + KG + L2)
- Epoch loop with Adam, uniform negative items and KG batches
- Optional KG pretraining phase
- fit(): epoch log lines, periodic and best-validation checkpoints
- grad_check(): autograd against central finite differences
"""

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from core.checkpoint import best_path, save_checkpoint
from core.config import TrainConfig, build_config
from core.data_ingest import InteractionDataset, KnowledgeGraph, _kg_from_triples
from core.errors import ConfigError, EmptyBatchError, EmptyDatasetError, NonFiniteError, ShapeMismatchError
from core.eval_metrics import evaluate_ranking
from core.kg_tucker import iter_triple_batches, sample_negative_triples
from core.model import SparkModel
from core.svd_init import SvdFactors
from core.utils import seed_everything

logger = logging.getLogger(__name__)

NEGATIVE_ATTEMPTS = 100
VAL_CUTOFF = 20
GRAD_CHECK_FLOOR = 1e-3


# ── State ─────────────────────────────────────────────────────────────────────

@dataclass(eq=False)
class ModelState:
    """Model, optimizer and loop counters of one run."""
    model: SparkModel
    optimizer: torch.optim.Optimizer
    cfg: TrainConfig
    epoch: int = 0
    step: int = 0
    best_val_recall: float = -1.0
    history: list = field(default_factory=list)


@dataclass(eq=False)
class TrainingData:
    ds: InteractionDataset
    kg: KnowledgeGraph
    observed: set
    user_positives: list[set]

    @classmethod
    def build(cls, ds: InteractionDataset, kg: KnowledgeGraph) -> "TrainingData":
        positives = [set(items.tolist()) for items in ds.positives("train")]
        return cls(ds=ds, kg=kg, observed=kg.triple_set(), user_positives=positives)


@dataclass
class TrainBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray
    kg_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    kg_neg: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        params,
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )


def build_state(cfg: TrainConfig, ds: InteractionDataset, kg: KnowledgeGraph,
                factors: Optional[SvdFactors] = None, svd_cache_dir: Optional[str] = None) -> ModelState:
    """Seed everything, build the model and its optimizer."""
    seed_everything(cfg.seed, cfg.threads, cfg.deterministic)
    model = SparkModel(cfg, ds, kg, factors=factors, svd_cache_dir=svd_cache_dir)
    logger.info("Model built: variant=%s, %d parameters", cfg.variant, model.parameter_count())
    return ModelState(model=model, optimizer=make_optimizer(model.parameters(), cfg), cfg=cfg)


# ── Loss terms ────────────────────────────────────────────────────────────────

def bpr_rec_loss(scores_pos: torch.Tensor, scores_neg: torch.Tensor) -> torch.Tensor:
    """
    Mean of -log sigmoid(s_pos - s_neg).

    Raises:
        EmptyBatchError: No pairs
        ShapeMismatchError: Different lengths
    """
    scores_pos = torch.as_tensor(scores_pos)
    scores_neg = torch.as_tensor(scores_neg)
    if scores_pos.shape != scores_neg.shape:
        raise ShapeMismatchError(f"bpr_rec_loss: {tuple(scores_pos.shape)} vs {tuple(scores_neg.shape)}")
    if scores_pos.numel() == 0:
        raise EmptyBatchError("bpr_rec_loss: empty batch")
    return F.softplus(-(scores_pos - scores_neg)).mean()


def l2_regularization(params) -> torch.Tensor:
    """Sum of squared entries over the given tensors."""
    params = list(params)
    if not params:
        return torch.zeros((), dtype=torch.float64)
    return sum(p.pow(2).sum() for p in params)


def total_loss(state: ModelState, batch: TrainBatch, cfg: TrainConfig) -> tuple[torch.Tensor, dict[str, float]]:
    """
    Weighted composite loss of one batch.

    Returns:
        (total, breakdown) where breakdown maps rec/cl/tucker/reg/total to floats

    Raises:
        NonFiniteError: A term (named in the error) is NaN or infinite
    """
    model = state.model
    prop = model.propagate()
    pos = model.score_pairs(prop, batch.users, batch.pos_items, "train")
    neg = model.score_pairs(prop, batch.users, batch.neg_items, "train")
    terms: dict[str, torch.Tensor] = {"rec": bpr_rec_loss(pos, neg)}
    zero = terms["rec"].new_zeros(())

    lam_cl = cfg.effective_lambda_cl
    terms["cl"] = model.contrastive_loss(prop, np.unique(batch.pos_items)) if lam_cl > 0 else zero
    has_kg = len(batch.kg_pos) > 0
    terms["tucker"] = model.kg_loss(batch.kg_pos, batch.kg_neg) if cfg.lambda_tucker > 0 and has_kg else zero
    terms["reg"] = l2_regularization(model.regularized_parameters()) if cfg.lambda_reg > 0 else zero

    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise NonFiniteError(name, f"value {value.item()}")

    total = (terms["rec"] + lam_cl * terms["cl"]
             + cfg.lambda_tucker * terms["tucker"] + cfg.lambda_reg * terms["reg"])
    breakdown = {name: float(value.detach()) for name, value in terms.items()}
    breakdown["total"] = float(total.detach())
    return total, breakdown


# ── Sampling ──────────────────────────────────────────────────────────────────

def sample_negative_item(user_positives: set, num_items: int, rng: np.random.Generator) -> int:
    """Uniform item outside the user's train positives (accepted after 100 tries)."""
    item = int(rng.integers(num_items))
    for _ in range(NEGATIVE_ATTEMPTS - 1):
        if item not in user_positives:
            break
        item = int(rng.integers(num_items))
    return item


def make_batch(rows: np.ndarray, data: TrainingData, cfg: TrainConfig,
               rng: np.random.Generator) -> TrainBatch:
    """Pair each positive with one negative item and draw a KG batch."""
    users = rows[:, 0].astype(np.int64)
    pos = rows[:, 1].astype(np.int64)
    neg = np.array([sample_negative_item(data.user_positives[u], data.ds.num_items, rng) for u in users],
                   dtype=np.int64)
    batch = TrainBatch(users=users, pos_items=pos, neg_items=neg)
    triples = data.kg.triples
    if len(triples) and cfg.lambda_tucker > 0:
        size = min(cfg.effective_kg_batch_size, len(triples))
        kg_pos = triples[rng.choice(len(triples), size=size, replace=False)]
        batch.kg_pos = kg_pos
        batch.kg_neg = sample_negative_triples(data.kg, kg_pos, rng, data.observed)
    return batch


# ── Loops ─────────────────────────────────────────────────────────────────────

def check_finite(model: nn.Module) -> None:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise NonFiniteError(name, "parameter became non-finite after an optimizer step")


def train_epoch(state: ModelState, data: TrainingData, cfg: TrainConfig,
                progress: bool = False) -> tuple[ModelState, dict[str, float]]:
    """
    One pass over shuffled train pairs.

    With learning_rate 0 the parameters stay fixed and only the optimizer
    step counters advance; batch-norm running statistics still track the
    batches seen, as in any train-mode forward pass.

    Returns:
        (state, mean per-term losses)

    Raises:
        ConfigError: Negative learning rate
        EmptyDatasetError: No train pairs
        NonFiniteError: A loss term or a parameter went non-finite
    """
    if cfg.learning_rate < 0:
        raise ConfigError(f"learning_rate must be >= 0, got {cfg.learning_rate}")
    train = data.ds.train
    if len(train) == 0:
        raise EmptyDatasetError("train split is empty")
    for group in state.optimizer.param_groups:
        group["lr"] = cfg.learning_rate

    rng = np.random.default_rng([cfg.seed, state.epoch])
    torch.manual_seed(cfg.seed + state.epoch)
    order = rng.permutation(len(train))
    state.model.train()

    sums: dict[str, float] = defaultdict(float)
    num_batches = 0
    starts = range(0, len(order), cfg.batch_size)
    for start in tqdm(starts, desc=f"epoch {state.epoch + 1}", leave=False,
                      disable=None if progress else True):
        batch = make_batch(train[order[start:start + cfg.batch_size]], data, cfg, rng)
        state.optimizer.zero_grad(set_to_none=True)
        loss, parts = total_loss(state, batch, cfg)
        loss.backward()
        state.optimizer.step()
        state.step += 1
        check_finite(state.model)
        for key, value in parts.items():
            sums[key] += value
        num_batches += 1

    state.epoch += 1
    means = {key: value / num_batches for key, value in sums.items()}
    logger.debug("Epoch %d: %s", state.epoch, means)
    return state, means


def kg_pretrain(state: ModelState, data: TrainingData, cfg: TrainConfig,
                epochs: Optional[int] = None, progress: bool = False) -> list[float]:
    """
    Train the KG scorer alone for a number of epochs.

    Uses its own Adam over the Tucker tensors so the joint optimizer's moments
    start clean. Returns the mean loss of every epoch.
    """
    epochs = cfg.kg_pretrain_epochs if epochs is None else epochs
    kg = data.kg
    if epochs <= 0:
        return []
    if kg.num_triples == 0:
        logger.warning("KG holds no triples; skipping KG pretraining")
        return []

    tucker = state.model.tucker
    optimizer = make_optimizer(tucker.parameters(), cfg)
    tucker.train()
    losses = []
    for epoch in range(epochs):
        rng = np.random.default_rng([cfg.seed, 1_000_000 + epoch])
        torch.manual_seed(cfg.seed + 1_000_000 + epoch)
        total, count = 0.0, 0
        for pos in tqdm(iter_triple_batches(kg.triples, cfg.effective_kg_batch_size, rng),
                        desc=f"kg epoch {epoch + 1}", leave=False, disable=None if progress else True):
            neg = sample_negative_triples(kg, pos, rng, data.observed)
            optimizer.zero_grad(set_to_none=True)
            loss = state.model.kg_loss(pos, neg, "train")
            if not torch.isfinite(loss):
                raise NonFiniteError("tucker", "during KG pretraining")
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            count += 1
        losses.append(total / count)
        logger.info("KG pretrain epoch %d/%d: loss %.6f", epoch + 1, epochs, losses[-1])
    return losses


def epoch_record(epoch: int, losses: dict[str, float], val_recall: float) -> dict:
    return {
        "epoch": epoch,
        "loss_total": losses["total"],
        "loss_rec": losses["rec"],
        "loss_cl": losses["cl"],
        "loss_tucker": losses["tucker"],
        "loss_reg": losses["reg"],
        f"val_recall@{VAL_CUTOFF}": val_recall,
    }


def fit(state: ModelState, data: TrainingData, cfg: TrainConfig, log_path=None, checkpoint_path=None,
        on_epoch: Optional[Callable[[dict], None]] = None, progress: bool = False) -> list[dict]:
    """
    Joint training from state.epoch up to cfg.epochs.

    Args:
        log_path: File receiving one JSON object per epoch (truncated first)
        checkpoint_path: Periodic checkpoint location; the best-validation
            checkpoint goes next to it with a ".best" suffix
        on_epoch: Called with every epoch record

    Returns:
        Epoch records of this call
    """
    config_hash = cfg.config_hash()
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8", newline="\n")

    records = []
    try:
        while state.epoch < cfg.epochs:
            _, losses = train_epoch(state, data, cfg, progress=progress)
            report = evaluate_ranking(state.model, data.ds, "val", cutoffs=[VAL_CUTOFF],
                                      tail_fraction=cfg.tail_fraction)
            val_recall = report.recall[VAL_CUTOFF]
            record = epoch_record(state.epoch, losses, val_recall)
            state.history.append(record)
            records.append(record)
            logger.info("Epoch %d/%d: loss %.6f, val recall@%d %.4f",
                        state.epoch, cfg.epochs, losses["total"], VAL_CUTOFF, val_recall)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()

            improved = val_recall > state.best_val_recall
            if improved:
                state.best_val_recall = val_recall
            if checkpoint_path is not None:
                if improved:
                    save_checkpoint(state, best_path(checkpoint_path), config_hash)
                if state.epoch % cfg.checkpoint_every == 0 or state.epoch == cfg.epochs:
                    save_checkpoint(state, checkpoint_path, config_hash)
            if on_epoch is not None:
                on_epoch(record)
    finally:
        if log_file is not None:
            log_file.close()
    return records


# ── Gradient verification ─────────────────────────────────────────────────────

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def failing(self) -> list[str]:
        return [name for name, err in self.errors.items() if err >= self.tolerance]

    def to_dict(self) -> dict:
        return {
            "errors": dict(self.errors),
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def grad_check(state: ModelState, batch: TrainBatch, cfg: TrainConfig, tolerance: float = 1e-4,
               step: float = 1e-5, gradient_hook: Optional[Callable[[dict], dict]] = None) -> GradCheckReport:
    """
    Compare autograd gradients of total_loss with central differences.

    Every evaluation restores the module buffers and reseeds torch, so the
    dropout masks and normalization statistics are identical across calls.
    The error of a tensor is ||a - n|| / max(||a||, ||n||, GRAD_CHECK_FLOOR),
    so gradients with norm below the floor are compared in absolute terms.

    Args:
        gradient_hook: Optional map applied to the analytic gradients before
            comparison (fault injection)
    """
    model = state.model
    if any(p.dtype != torch.float64 for p in model.parameters()):
        logger.warning("grad_check outside double precision; errors will be inflated")
    saved = {name: buf.detach().clone() for name, buf in model.named_buffers()}
    buffers = dict(model.named_buffers())
    seed = cfg.seed

    def evaluate() -> torch.Tensor:
        with torch.no_grad():
            for name, buf in buffers.items():
                buf.copy_(saved[name])
        torch.manual_seed(seed)
        loss, _ = total_loss(state, batch, cfg)
        return loss

    params = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    model.zero_grad(set_to_none=True)
    evaluate().backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in params
    }
    model.zero_grad(set_to_none=True)
    if gradient_hook is not None:
        analytic = gradient_hook(analytic)

    errors = {}
    with torch.no_grad():
        for name, p in params:
            flat = p.data.view(-1)
            numeric = torch.zeros_like(flat)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                flat[idx] = original + step
                f_plus = evaluate().item()
                flat[idx] = original - step
                f_minus = evaluate().item()
                flat[idx] = original
                numeric[idx] = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)
            scale = max(a.norm().item(), numeric.norm().item(), GRAD_CHECK_FLOOR)
            errors[name] = (a - numeric).norm().item() / scale
        for name, buf in buffers.items():
            buf.copy_(saved[name])

    report = GradCheckReport(errors=errors, tolerance=tolerance)
    logger.info("grad_check: %d tensors, max relative error %.3e", len(errors), report.max_error)
    return report


# ── Toy problem ───────────────────────────────────────────────────────────────

TOY_PAIRS = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 0)]
TOY_TRIPLES = [(0, 0, 4), (1, 0, 4), (2, 1, 5), (3, 1, 5), (0, 1, 5), (4, 1, 5)]


def toy_config(**overrides) -> TrainConfig:
    """4 users, 4 items, 6 entities, d = d_e = 8, L = 2, double precision."""
    values = dict(
        entity_dim=8, core_dim=4, embed_dim=8, svd_rank=3, num_layers=2,
        batch_size=8, kg_batch_size=6, epochs=2, kg_pretrain_epochs=1, seed=7, threads=1,
    )
    values.update(overrides)
    return build_config(values)


def build_toy_state(**overrides) -> tuple[ModelState, TrainingData, TrainBatch]:
    """Toy model, its data and one deterministic batch covering every pair and triple."""
    cfg = toy_config(**overrides)
    ds = InteractionDataset.from_pairs(TOY_PAIRS, num_users=4, num_items=4)
    kg = _kg_from_triples(np.asarray(TOY_TRIPLES, dtype=np.int64), ds.num_items)
    state = build_state(cfg, ds, kg)
    data = TrainingData.build(ds, kg)
    rng = np.random.default_rng(cfg.seed)
    pairs = ds.train
    batch = TrainBatch(
        users=pairs[:, 0].copy(),
        pos_items=pairs[:, 1].copy(),
        neg_items=(pairs[:, 1] + 2) % ds.num_items,
        kg_pos=kg.triples.copy(),
        kg_neg=sample_negative_triples(kg, kg.triples, rng, data.observed),
    )
    return state, data, batch
