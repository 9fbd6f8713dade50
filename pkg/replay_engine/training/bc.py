"""Behavioral cloning: epochs over shuffled expert steps with checkpoints and loss curves."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from replay_engine.config.settings import ExperimentConfig, config_hash
from replay_engine.exceptions import CheckpointError, TrainingError
from replay_engine.models.checkpoint import Checkpoint, save_checkpoint
from replay_engine.models.params import ModelParams, init_params
from replay_engine.training.allreduce import allreduce_mean
from replay_engine.training.expert import ExpertDataset
from replay_engine.training.losses import bc_loss
from replay_engine.training.optimizer import Adam

logger = logging.getLogger(__name__)

BC_CURVE_COLUMNS = ["epoch", "step", "loss", "ce_accel", "ce_steer", "value_mse"]
CURVES_NAME = "curves.csv"
FINAL_NAME = "bc.ckpt"


@dataclass
class BcResult:
    params: ModelParams
    history: pd.DataFrame
    checkpoints: List[Path] = field(default_factory=list)
    final_checkpoint: Optional[Path] = None


def dataset_loss(
    params: ModelParams,
    dataset: ExpertDataset,
    config: ExperimentConfig,
    chunk: int = 4096,
) -> Dict[str, float]:
    """BC loss terms averaged over the whole dataset."""
    totals = {"loss": 0.0, "ce_accel": 0.0, "ce_steer": 0.0, "value_mse": 0.0}
    for start in range(0, dataset.size, chunk):
        rows = np.arange(start, min(start + chunk, dataset.size))
        part = dataset.rows(rows)
        _, _, stats = bc_loss(
            params, part.obs, part.actions, part.returns, config.model, config.train.bc.value_loss_scale
        )
        for key in totals:
            totals[key] += stats[key] * len(rows) / dataset.size
    return totals


def _epoch_order(seed: int, epoch: int, size: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(size)


def _worker_step(
    params: ModelParams,
    dataset: ExpertDataset,
    shards: List[np.ndarray],
    config: ExperimentConfig,
    pool: Optional[ThreadPoolExecutor],
) -> Tuple[np.ndarray, Dict[str, float]]:
    """Per-worker gradients, rescaled by shard size and averaged by all-reduce."""
    total = sum(len(s) for s in shards)

    def work(rows: np.ndarray):
        part = dataset.rows(rows)
        return bc_loss(params, part.obs, part.actions, part.returns, config.model, config.train.bc.value_loss_scale)

    results = list(pool.map(work, shards)) if pool is not None else [work(s) for s in shards]
    scale = [len(s) * len(shards) / total for s in shards]
    grad = allreduce_mean([g.flat * w for (_, g, _), w in zip(results, scale)])
    stats = {key: sum(r[2][key] * len(s) / total for r, s in zip(results, shards)) for key in BC_CURVE_COLUMNS[2:]}
    return grad, stats


def run_bc(
    config: ExperimentConfig,
    dataset: ExpertDataset,
    out_dir: Union[str, Path],
    resume: Optional[Checkpoint] = None,
    max_epochs: Optional[int] = None,
) -> BcResult:
    """Train the policy and value heads to imitate the logged expert.

    Args:
        config: Experiment config; train.bc holds the hyperparameters
        dataset: Expert rows from build_expert_dataset
        out_dir: Directory for checkpoints/ and curves.csv
        resume: BC checkpoint to continue from (optimizer state required)
        max_epochs: Stop after this epoch number instead of train.bc.epochs

    Returns:
        BcResult with final parameters, per-step history and checkpoint paths

    Raises:
        TrainingError: On an empty dataset
        CheckpointError: If resume lacks optimizer state or is not a BC checkpoint
    """
    bc = config.train.bc
    if dataset.size == 0:
        raise TrainingError("cannot run behavioral cloning on an empty dataset")
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    digest = config_hash(config)

    if resume is None:
        params = init_params(config.model, config.actions, seed=config.train.seed, dtype=np.float32)
        optimizer = Adam(params.num_params, bc.lr, config.train.optimizer, dtype=np.float32)
        first_epoch, step = 1, 0
    else:
        if resume.meta.get("phase") != "bc" or resume.optimizer_state is None:
            raise CheckpointError("resuming BC needs a BC checkpoint with optimizer state")
        params = resume.params.astype(np.float32)
        optimizer = Adam(params.num_params, bc.lr, config.train.optimizer, dtype=np.float32)
        optimizer.load_state_dict(resume.optimizer_state)
        first_epoch, step = int(resume.meta["epoch"]) + 1, int(resume.meta["step"])
        logger.info(f"Resuming BC after epoch {first_epoch - 1} (step {step})")

    last_epoch = bc.epochs if max_epochs is None else min(max_epochs, bc.epochs)
    rows: List[Dict[str, float]] = []
    checkpoints: List[Path] = []
    pool = ThreadPoolExecutor(max_workers=bc.num_workers, thread_name_prefix="bc-worker") if bc.num_workers > 1 else None
    logger.info(
        f"BC: {dataset.size} steps, batch {bc.batch_size}, {bc.num_workers} worker(s), "
        f"epochs {first_epoch}..{last_epoch}"
    )
    try:
        for epoch in range(first_epoch, last_epoch + 1):
            order = _epoch_order(config.train.seed, epoch, dataset.size)
            for start in range(0, dataset.size, bc.batch_size):
                batch_rows = order[start:start + bc.batch_size]
                shards = [s for s in np.array_split(batch_rows, bc.num_workers) if len(s)]
                grad, stats = _worker_step(params, dataset, shards, config, pool)
                optimizer.step(params, ModelParams(params.index, grad))
                step += 1
                rows.append({"epoch": epoch, "step": step, **stats})
            logger.info(
                f"BC epoch {epoch}: loss={rows[-1]['loss']:.4f} "
                f"ce_accel={rows[-1]['ce_accel']:.4f} ce_steer={rows[-1]['ce_steer']:.4f}"
            )
            if epoch % bc.checkpoint_every == 0 or epoch == last_epoch:
                path = save_checkpoint(
                    ckpt_dir / f"bc_epoch{epoch:03d}.ckpt", params, config.model, config.actions, digest,
                    meta={"phase": "bc", "epoch": epoch, "step": step, "policy_version": 0},
                    optimizer_state=optimizer.state_dict(),
                )
                checkpoints.append(path)
    finally:
        if pool is not None:
            pool.shutdown()

    history = pd.DataFrame(rows, columns=BC_CURVE_COLUMNS)
    curves = out_dir / CURVES_NAME
    out_dir.mkdir(parents=True, exist_ok=True)
    append = resume is not None and curves.exists()
    history.to_csv(curves, mode="a" if append else "w", header=not append, index=False)

    final = None
    if last_epoch >= first_epoch:
        final = save_checkpoint(
            out_dir / FINAL_NAME, params, config.model, config.actions, digest,
            meta={"phase": "bc", "epoch": last_epoch, "step": step, "policy_version": 0},
            optimizer_state=optimizer.state_dict(),
        )
    return BcResult(params=params, history=history, checkpoints=checkpoints, final_checkpoint=final)
