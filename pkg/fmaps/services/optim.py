"""Direct optimization of per-vertex feature matrices through Differentiable ZoomOut.

The features play the role a feature extractor would: they are free
parameters updated by torch's Adam on the orthogonality / consistency /
Laplacian objective, with gradients from zoomout.loss_gradients.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd
import torch

from fmaps.models.errors import DimensionMismatch, NonFiniteLoss
from fmaps.models.geometry import EigenBasis
from fmaps.models.maps import DescriptorSet
from fmaps.models.schemas import LossWeights, OptimConfig
from fmaps.services.descriptors import normalize_l2
from fmaps.services.zoomout import (
    LossResult,
    RefinementTrace,
    consistency_loss,
    differentiable_zoomout,
    laplacian_commutativity_loss,
    loss_gradients,
    orthogonality_loss,
)

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["step", "total", "orth", "consist", "lap"]

StepHook = Callable[[int, np.ndarray, np.ndarray, LossResult], None]


@dataclass
class OptimResult:
    F1: np.ndarray
    F2: np.ndarray
    trace: RefinementTrace
    history: list[dict] = field(default_factory=list)


def initial_features(
    init: tuple[DescriptorSet, DescriptorSet],
    basis1: EigenBasis,
    basis2: EigenBasis,
    p: int,
    unit_rows: bool = False,
):
    """First p columns of the L2-normalized descriptors on each shape.

    With unit_rows every row is also scaled to unit length, which leaves a
    row-normalized soft map unchanged and puts Adam's step size on the
    scale of the normalized features.
    """
    d1, d2 = init
    if d1.q != d2.q:
        raise DimensionMismatch(f"descriptor counts differ: {d1.q} vs {d2.q}")
    if d1.q < p:
        raise DimensionMismatch(f"need at least p={p} descriptors, got {d1.q}")
    F1 = normalize_l2(d1, basis1.areas).values[:, :p].copy()
    F2 = normalize_l2(d2, basis2.areas).values[:, :p].copy()
    if unit_rows:
        for F in (F1, F2):
            norms = np.linalg.norm(F, axis=1, keepdims=True)
            F /= np.where(norms > 0, norms, 1.0)
    return F1, F2


def _record(step: int, weights: LossWeights, orth: float, consist: float, lap: float) -> dict:
    total = weights.w_orth * orth + weights.w_consist * consist + weights.w_lap * lap
    return {"step": step, "total": float(total), "orth": orth, "consist": consist, "lap": lap}


def _weights(config: OptimConfig, step: int) -> LossWeights:
    return LossWeights(w_orth=config.w_orth, w_consist=config.consist.weight(step), w_lap=config.w_lap)


def optimize_features(
    basis1: EigenBasis,
    basis2: EigenBasis,
    init: tuple[DescriptorSet, DescriptorSet],
    config: Optional[OptimConfig] = None,
    on_step: Optional[StepHook] = None,
    **tiles,
) -> OptimResult:
    """Run Adam on the features and return them with the final trace and loss history.

    history[s] holds the losses of the features before update s; the last
    record (step == config.steps) is the loss of the returned features.
    on_step receives copies of the features together with the gradient used.
    """
    config = config or OptimConfig()
    F1, F2 = initial_features(init, basis1, basis2, config.feature_dim, unit_rows=config.zoomout.normalize_features)
    # the tensors share memory with F1 and F2, so Adam updates them in place
    params = [torch.from_numpy(F1).requires_grad_(), torch.from_numpy(F2).requires_grad_()]
    adam = torch.optim.Adam(params, lr=config.learning_rate, betas=config.betas, eps=config.eps)
    history: list[dict] = []

    for step in range(config.steps):
        weights = _weights(config, step)
        result = loss_gradients(
            F1, F2, basis1, basis2, config.zoomout, weights,
            stop_gradient_refined=config.stop_gradient_refined, **tiles,
        )
        record = {"step": step, "total": result.value, **result.breakdown}
        finite = np.isfinite(result.value) and np.all(np.isfinite(result.dF1)) and np.all(np.isfinite(result.dF2))
        if not finite:
            history.append(record)
            raise NonFiniteLoss(f"loss diverged at step {step}", history=history)
        history.append(record)

        if on_step is not None:
            on_step(step, F1.copy(), F2.copy(), result)
        if step % config.log_every == 0:
            logger.info(
                "step %d: total=%.6e orth=%.3e consist=%.3e lap=%.3e (w_consist=%.2e)",
                step, result.value, record["orth"], record["consist"], record["lap"], weights.w_consist,
            )
        for param, grad in zip(params, (result.dF1, result.dF2)):
            param.grad = torch.from_numpy(np.ascontiguousarray(grad, dtype=np.float64))
        adam.step()

    C_init, C_refined, trace = differentiable_zoomout(F1, F2, basis1, basis2, config.zoomout, **tiles)
    final = _record(
        config.steps,
        _weights(config, config.steps),
        orthogonality_loss(C_init),
        consistency_loss(C_init, C_refined),
        laplacian_commutativity_loss(C_init, basis1.evals, basis2.evals),
    )
    if not np.isfinite(final["total"]):
        history.append(final)
        raise NonFiniteLoss(f"loss diverged after {config.steps} steps", history=history)
    history.append(final)
    logger.info("optimization finished: total=%.6e after %d steps", final["total"], config.steps)
    return OptimResult(F1=F1, F2=F2, trace=trace, history=history)


def history_to_frame(history: list[dict]) -> pd.DataFrame:
    return pd.DataFrame(history, columns=HISTORY_COLUMNS)


def write_history(path: Union[str, Path], history: list[dict]) -> None:
    history_to_frame(history).to_csv(path, index=False)
