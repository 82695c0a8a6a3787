"""Entraînement d'un étage: perte supervisée masquée + terme adverse, Adam"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from ..errors import DimensionError, TrainingError
from ..utils.runtime import ordered_map
from .nn import (DEPTH, DiscriminatorParams, GeneratorParams, ParamSet, Tape, discriminator_backward,
                 discriminator_forward, generator_backward, generator_forward, init_params)
from .patching import central_slice, iter_subvolumes
from .projector import Volume3D

logger = logging.getLogger("sparse-ct.training")

LAMBDA_FLOOR = 1e-8
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=40, ge=1)
    batch_size: int = Field(default=6, ge=1)
    disc_every: int = Field(default=10, ge=1)
    lr_g: float = Field(default=1e-3, gt=0)
    lr_d: float = Field(default=1e-4, gt=0)
    seed: int = 0
    depth: int = Field(default=DEPTH, ge=1)
    spatial_crop: Optional[int] = Field(default=None, ge=3)


@dataclass
class TrainingExample:
    sub: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    z_center: int


@dataclass
class StageCheckpoint:
    """Paramètres entraînés d'un étage et leur provenance"""

    stage_index: int
    gen: GeneratorParams
    disc: DiscriminatorParams
    config: TrainConfig
    intensity_scale: float = 1.0
    g_losses: List[float] = field(default_factory=list)
    d_losses: List[float] = field(default_factory=list)
    mse_history: List[float] = field(default_factory=list)


def masked_mse(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Moyenne de (pred - gt)² sur les pixels du masque"""
    pred, gt, mask = np.asarray(pred), np.asarray(gt), np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise DimensionError(f"formes incompatibles: {pred.shape}, {gt.shape}, masque {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise TrainingError("masque vide: MSE masquée indéfinie")
    diff = pred[mask].astype(np.float64) - gt[mask]
    return float(np.sum(diff * diff)) / count


def lambda_schedule(r: float) -> float:
    """λ = 10^⌊log10 r⌋, plancher 1e-8"""
    if not r > 0:
        raise TrainingError(f"terme MSE r > 0 attendu pour le calcul de λ, reçu {r}")
    if r < LAMBDA_FLOOR:
        return LAMBDA_FLOOR
    return 10.0 ** math.floor(math.log10(r))


def _sum_params(grads: Sequence[ParamSet]) -> ParamSet:
    total = grads[0].copy()
    for g in grads[1:]:
        for acc, t in zip(total.tensors(), g.tensors()):
            acc += t
    return total


def generator_loss(gen: GeneratorParams, disc: DiscriminatorParams,
                   batch: Sequence[TrainingExample]) -> Tuple[float, GeneratorParams, Dict[str, float]]:
    """L_G = -λ·mean D(G(s)) + mean MSE_masquée(G(s), gt), λ gelé pendant la rétropropagation"""
    size = len(batch)

    def forward(example: TrainingExample):
        g_tape, d_tape = Tape(), Tape()
        out = generator_forward(gen, example.sub, g_tape)
        score = discriminator_forward(disc, out, d_tape)
        return out, score, g_tape, d_tape, masked_mse(out, example.target, example.mask)

    passes = ordered_map(forward, batch)
    r = float(np.mean([p[4] for p in passes]))
    lam = lambda_schedule(r) if r > 0 else LAMBDA_FLOOR
    adversarial = float(np.mean([p[1] for p in passes]))
    loss = -lam * adversarial + r

    def backward(item):
        example, (out, _, g_tape, d_tape, _) = item
        _, d_input = discriminator_backward(disc, d_tape, -lam / size)
        count = int(example.mask.sum())
        upstream = d_input + (2.0 / (size * count)) * (out - example.target) * example.mask
        return generator_backward(gen, g_tape, upstream.astype(out.dtype, copy=False))

    grads = ordered_map(backward, list(zip(batch, passes)))
    return loss, _sum_params(grads), {"mse": r, "lambda": lam, "adversarial": adversarial}


def discriminator_loss(disc: DiscriminatorParams, gen: GeneratorParams,
                       batch: Sequence[TrainingExample]) -> Tuple[float, DiscriminatorParams]:
    """L_D = mean D(G(s))² + mean (D(gt) - 1)², générateur figé"""
    size = len(batch)

    def one(example: TrainingExample):
        fake = generator_forward(gen, example.sub)
        fake_tape, real_tape = Tape(), Tape()
        d_fake = discriminator_forward(disc, fake, fake_tape)
        d_real = discriminator_forward(disc, example.target, real_tape)
        g_fake, _ = discriminator_backward(disc, fake_tape, 2.0 * d_fake / size)
        g_real, _ = discriminator_backward(disc, real_tape, 2.0 * (d_real - 1.0) / size)
        return d_fake ** 2 + (d_real - 1.0) ** 2, _sum_params([g_fake, g_real])

    results = ordered_map(one, batch)
    loss = float(sum(r[0] for r in results)) / size
    return loss, _sum_params([r[1] for r in results])


class Adam:
    """Moments adaptatifs (β1=0.9, β2=0.999, ε=1e-8)"""

    def __init__(self, params: ParamSet, lr: float):
        self.lr = lr
        self.step_count = 0
        self.m = [np.zeros_like(t) for t in params.tensors()]
        self.v = [np.zeros_like(t) for t in params.tensors()]

    def step(self, params: ParamSet, grads: ParamSet) -> ParamSet:
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - ADAM_BETA1 ** t
        correction2 = 1.0 - ADAM_BETA2 ** t
        updated = []
        for p, g, m, v in zip(params.tensors(), grads.tensors(), self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            updated.append((p - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(p.dtype))
        return params.from_tensors(updated)


def intensity_scale(gt: Volume3D, roi: np.ndarray) -> float:
    values = np.asarray(gt.data)[np.asarray(roi, dtype=bool)]
    peak = float(values.max()) if values.size else 0.0
    return peak if peak > 0 else 1.0


def build_examples(stage_input: Volume3D, gt: Volume3D, roi: np.ndarray, depth: int = DEPTH,
                   spatial_crop: Optional[int] = None, scale: float = 1.0) -> List[TrainingExample]:
    """Un exemple par centre z valide; les coupes dont la ROI est vide sont écartées"""
    if stage_input.shape != gt.shape or gt.shape != np.shape(roi):
        raise DimensionError(f"entrée {stage_input.shape}, vérité {gt.shape}, ROI {np.shape(roi)} incompatibles")
    roi = np.asarray(roi, dtype=bool)
    inputs = Volume3D(data=np.asarray(stage_input.data, dtype=np.float32) / np.float32(scale), voxel=stage_input.voxel)
    targets = Volume3D(data=np.asarray(gt.data, dtype=np.float32) / np.float32(scale), voxel=gt.voxel)
    masks = Volume3D(data=roi.astype(np.float32), voxel=gt.voxel)

    examples = []
    skipped = 0
    for sub, tgt, msk in zip(iter_subvolumes(inputs, depth, spatial_crop),
                             iter_subvolumes(targets, depth, spatial_crop),
                             iter_subvolumes(masks, depth, spatial_crop)):
        mask2d = central_slice(msk) > 0
        if not mask2d.any():
            skipped += 1
            continue
        examples.append(TrainingExample(sub=np.ascontiguousarray(sub.data), target=np.ascontiguousarray(central_slice(tgt)),
                                        mask=mask2d, z_center=sub.z_center))
    if skipped:
        logger.info(f"{skipped} centres sans ROI écartés de l'entraînement")
    if not examples:
        raise TrainingError("aucun sous-volume d'entraînement valide (ROI vide)")
    return examples


def mean_masked_mse(gen: GeneratorParams, examples: Sequence[TrainingExample]) -> float:
    values = ordered_map(lambda e: masked_mse(generator_forward(gen, e.sub), e.target, e.mask), examples)
    return float(np.mean(values))


def train_stage(stage_input: Volume3D, gt: Volume3D, roi: np.ndarray, cfg: TrainConfig = TrainConfig(),
                stage_index: int = 1, progress: bool = True) -> StageCheckpoint:
    """Entraîne le générateur et le discriminateur d'un étage sur (entrée d'étage -> vérité terrain)"""
    scale = intensity_scale(gt, roi)
    examples = build_examples(stage_input, gt, roi, cfg.depth, cfg.spatial_crop, scale)
    gen, disc = init_params(cfg.seed)
    opt_g, opt_d = Adam(gen, cfg.lr_g), Adam(disc, cfg.lr_d)
    rng = np.random.default_rng(cfg.seed)

    n = len(examples)
    batches_per_epoch = -(-n // cfg.batch_size)
    logger.info(f"Étage {stage_index}: {n} exemples, {batches_per_epoch} lots/époque, "
                f"{cfg.epochs} époques (seed {cfg.seed}, échelle {scale:.4g})")

    g_losses: List[float] = []
    d_losses: List[float] = []
    mse_history: List[float] = []
    step = 0
    bar = tqdm(range(cfg.epochs), desc=f"étage {stage_index}", disable=None if progress else True)
    for epoch in bar:
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = [examples[i] for i in order[start:start + cfg.batch_size]]
            try:
                loss, grads, info = generator_loss(gen, disc, batch)
                if not (math.isfinite(loss) and grads.is_finite()):
                    raise TrainingError("perte ou gradient du générateur non fini", batch=step)
                gen = opt_g.step(gen, grads)
                g_losses.append(loss)
                mse_history.append(info["mse"])

                if (step + 1) % cfg.disc_every == 0:
                    d_loss, d_grads = discriminator_loss(disc, gen, batch)
                    if not (math.isfinite(d_loss) and d_grads.is_finite()):
                        raise TrainingError("perte ou gradient du discriminateur non fini", batch=step)
                    disc = opt_d.step(disc, d_grads)
                    d_losses.append(d_loss)
            except DimensionError as e:
                raise TrainingError(e.message, batch=step) from None
            logger.debug(f"lot {step}: L_G={loss:.6g} mse={info['mse']:.6g} λ={info['lambda']:.0e}")
            step += 1
        bar.set_postfix(mse=f"{np.mean(mse_history[-batches_per_epoch:]):.4g}")

    if not (gen.is_finite() and disc.is_finite()):
        raise TrainingError("paramètres non finis en fin d'entraînement")
    logger.info(f"Étage {stage_index}: MSE finale {mse_history[-1]:.6g}, {len(d_losses)} mises à jour du discriminateur")
    return StageCheckpoint(stage_index=stage_index, gen=gen, disc=disc, config=cfg, intensity_scale=scale,
                           g_losses=g_losses, d_losses=d_losses, mse_history=mse_history)
