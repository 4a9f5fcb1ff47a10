"""Training objectives.

All functions take torch tensors and return scalar tensors on the autograd
graph. Probability maps end in a size-2 axis: ``(pos, neg)`` for the
classification head, ``(source, target)`` for the discriminator. Every
probability is clamped to ``[EPS, 1 - EPS]`` before a log.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .errors import ContractViolationError, InvalidArgumentError, TrainingDivergenceError

EPS = 1e-12
SOURCE, TARGET = 0, 1


@dataclass(frozen=True)
class LossWeights:
    lambda_loc: float = 1.0
    lambda_cls: float = 1.0
    lambda_ent: float = 0.1
    lambda_adv: float = 0.001

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {value}")


def _log(p):
    return torch.log(p.clamp(EPS, 1.0 - EPS))


def location_loss(pred_points, target_points, scale: float = 1.0):
    """Mean Euclidean distance between matched predictions and their targets.

    Points are ``(N, 2)`` pixel coordinates; ``scale`` multiplies the
    distance (``1 / stride`` gives a loss in stride units). With no matches
    the loss is an exact zero that still depends on ``pred_points`` so the
    caller can backpropagate unconditionally.
    """
    if pred_points.shape != target_points.shape:
        raise InvalidArgumentError(f"shape mismatch {tuple(pred_points.shape)} vs {tuple(target_points.shape)}")
    if pred_points.shape[0] == 0:
        return pred_points.sum() * 0.0
    dist = torch.linalg.vector_norm(pred_points - target_points, dim=-1)
    return dist.mean() * scale


def classification_loss(cls_map, cls_targets):
    """Cross entropy averaged over every slot (positive and negative)."""
    if cls_map.shape != cls_targets.shape:
        raise InvalidArgumentError(f"shape mismatch {tuple(cls_map.shape)} vs {tuple(cls_targets.shape)}")
    per_slot = -(cls_targets * _log(cls_map)).sum(-1)
    return per_slot.mean()


def entropy_map(cls_map):
    """Binary entropy per slot in bits, so values lie in [0, 1]."""
    return -(cls_map * _log(cls_map)).sum(-1) / math.log(2.0)


def entropy_loss(cls_map):
    return entropy_map(cls_map).mean()


def _spatial_nll(log_p, normalize):
    # log_p: (..., W', H'); sum over the spatial grid, mean over any batch axes.
    nll = -log_p.sum(dim=(-2, -1))
    if normalize:
        nll = nll / (log_p.shape[-2] * log_p.shape[-1])
    return nll.mean()


def discriminator_loss(domain_map, z: int, normalize: bool = False):
    """Negative log-likelihood of the true domain ``z`` summed over discriminator cells.

    ``domain_map`` is ``(..., W', H', 2)`` with channel 0 the source
    probability. ``normalize`` divides by ``W' * H'``.
    """
    if z not in (SOURCE, TARGET):
        raise InvalidArgumentError(f"domain label must be 0 or 1, got {z!r}")
    return _spatial_nll(_log(domain_map[..., z]), normalize)


def adversarial_loss(domain_map, domain: str = "target", normalize: bool = False):
    """Penalise the discriminator for recognising target predictions as target.

    Only defined for target-domain samples; pass ``domain`` so misuse is
    caught.
    """
    if domain != "target":
        raise ContractViolationError(f"adversarial loss is defined on target samples only, got {domain!r}")
    return _spatial_nll(_log(domain_map[..., SOURCE]), normalize)


def main_objective(loc, cls, ent_src, ent_tgt, adv, w: LossWeights):
    components = {"L_loc": loc, "L_cls": cls, "L_ent_X": ent_src, "L_ent_Y": ent_tgt, "L_adv": adv}
    values = {k: float(torch.as_tensor(v).detach()) for k, v in components.items()}
    for name, value in values.items():
        if not math.isfinite(value):
            raise TrainingDivergenceError(name, values)
    return (
        w.lambda_loc * loc
        + w.lambda_cls * cls
        + w.lambda_ent * (ent_src + ent_tgt)
        + w.lambda_adv * adv
    )


def discriminator_objective(dis_src, dis_tgt):
    return dis_src + dis_tgt
