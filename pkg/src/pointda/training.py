"""Alternating main/discriminator optimisation and the loss-ablation harness.

Each step consumes one source batch and one target batch:

1. main update: supervised matching losses on the source batch, entropy on
   both batches, adversarial loss on the target batch through a frozen
   discriminator;
2. discriminator update on detached predictions of both batches.

Checkpoint layout (``torch.save`` of a dict, ``format_version`` 1)::

    format          "pointda-checkpoint"
    format_version  1
    step            completed steps
    config          resolved config dict
    config_hash     Config.hash() of the above
    model           PointProposalNet state_dict
    discriminator   DomainDiscriminator state_dict
    opt_main        Adam state_dict
    opt_dis         Adam state_dict
    rng             numpy PCG64 bit-generator state
    samplers        {"source": {...}, "target": {...}} epoch-sampler states
    best            {"step", "source_mae"} best source-eval record
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import LOSS_FLAGS, Config
from .data import PointDataset, Sample, augment, to_tensor_batch
from .errors import ConfigError, InvalidArgumentError, TrainingDivergenceError
from .evaluation import MetricsRecord, evaluate, write_metrics_csv
from .geometry import decode_points
from .losses import (
    SOURCE,
    TARGET,
    adversarial_loss,
    classification_loss,
    discriminator_loss,
    discriminator_objective,
    entropy_loss,
    location_loss,
    main_objective,
)
from .matching import match_image
from .network import DomainDiscriminator, PointProposalNet, concat_predictions

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pointda-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class StepLog:
    step: int
    L_loc: float
    L_cls: float
    L_ent_X: float
    L_ent_Y: float
    L_adv: float
    L_dis_X: float
    L_dis_Y: float
    total_main: float
    total_dis: float


LOSS_HEADER = [f.name for f in fields(StepLog)]


class EpochSampler:
    """Endless index stream: shuffled passes over ``n`` items."""

    def __init__(self, n: int):
        if n < 1:
            raise InvalidArgumentError("cannot sample from an empty dataset")
        self.n = n
        self.perm: list[int] = []
        self.pos = 0

    def take(self, k: int, rng: np.random.Generator) -> list[int]:
        out = []
        while len(out) < k:
            if self.pos >= len(self.perm):
                self.perm = rng.permutation(self.n).tolist()
                self.pos = 0
            out.append(self.perm[self.pos])
            self.pos += 1
        return out

    def state_dict(self) -> dict:
        return {"n": self.n, "perm": list(self.perm), "pos": self.pos}

    def load_state_dict(self, state: dict) -> None:
        self.n, self.perm, self.pos = state["n"], list(state["perm"]), state["pos"]


@dataclass
class TrainState:
    model: PointProposalNet
    disc: DomainDiscriminator
    opt_main: torch.optim.Optimizer
    opt_dis: torch.optim.Optimizer
    rng: np.random.Generator
    samplers: dict = field(default_factory=dict)
    step: int = 0
    best: dict = field(default_factory=dict)


def init_state(cfg: Config) -> TrainState:
    torch.manual_seed(cfg.seed)
    backbone = cfg.model.backbone()
    model = PointProposalNet(backbone)
    disc = DomainDiscriminator(backbone.slots_per_cell, backbone.disc_channels)
    return TrainState(
        model=model,
        disc=disc,
        opt_main=torch.optim.Adam(model.parameters(), lr=cfg.train.lr_main),
        opt_dis=torch.optim.Adam(disc.parameters(), lr=cfg.train.lr_dis),
        rng=np.random.default_rng(cfg.seed),
    )


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def _zero():
    return torch.zeros(())


def _f(t) -> float:
    return float(t.detach())


def train_step(state: TrainState, src_batch: Sequence[Sample], tgt_batch: Sequence[Sample], cfg: Config) -> StepLog:
    if any(s.points is None for s in src_batch):
        raise InvalidArgumentError("source batch must be labeled")
    if any(s.points is not None for s in tgt_batch):
        raise InvalidArgumentError("target batch must not carry labels")
    enabled = set(cfg.train.enabled_losses)
    lc = cfg.loss
    model, disc = state.model, state.disc
    model.train()
    disc.train()

    # Main network update; discriminator frozen.
    _set_requires_grad(disc, False)
    x_src = to_tensor_batch([s.image for s in src_batch])
    x_tgt = to_tensor_batch([s.image for s in tgt_batch])
    maps_src = model(x_src)
    maps_tgt = model(x_tgt)
    grid = model.grid_for(x_src.shape[2], x_src.shape[3])
    points_src = decode_points(maps_src.offsets, grid)
    scale = 1.0 / grid.stride if lc.loc_units == "stride" else 1.0

    loc_terms, cls_terms = [], []
    for b, sample in enumerate(src_batch):
        targets = match_image(
            points_src[b].detach(), maps_src.cls[b].detach(), sample.points, grid, lc.match_dist_weight, lc.match_reachable_only
        )
        if len(targets.slot_indices):
            pred = points_src[b].reshape(-1, 2)[torch.from_numpy(targets.slot_indices)]
            tgt = torch.from_numpy(targets.loc_points).to(pred.dtype)
            loc_terms.append(location_loss(pred, tgt, scale))
        cls_t = torch.from_numpy(targets.cls).to(maps_src.cls.dtype)
        cls_terms.append(classification_loss(maps_src.cls[b], cls_t))
    l_loc = torch.stack(loc_terms).mean() if loc_terms else points_src.sum() * 0.0
    l_cls = torch.stack(cls_terms).mean()
    l_ent_x = entropy_loss(maps_src.cls) if "ent_src" in enabled else _zero()
    l_ent_y = entropy_loss(maps_tgt.cls) if "ent_tgt" in enabled else _zero()
    if "adv" in enabled:
        l_adv = adversarial_loss(disc(concat_predictions(maps_tgt)), "target", lc.normalize_dis_loss)
    else:
        l_adv = _zero()
    total = main_objective(l_loc, l_cls, l_ent_x, l_ent_y, l_adv, lc.weights())
    state.opt_main.zero_grad(set_to_none=True)
    total.backward()
    state.opt_main.step()
    _set_requires_grad(disc, True)

    # Discriminator update on detached predictions.
    d_src = disc(concat_predictions(maps_src.detach()))
    d_tgt = disc(concat_predictions(maps_tgt.detach()))
    l_dis_x = discriminator_loss(d_src, SOURCE, lc.normalize_dis_loss)
    l_dis_y = discriminator_loss(d_tgt, TARGET, lc.normalize_dis_loss)
    total_dis = discriminator_objective(l_dis_x, l_dis_y)
    if not math.isfinite(_f(total_dis)):
        raise TrainingDivergenceError("total_dis", {"L_dis_X": _f(l_dis_x), "L_dis_Y": _f(l_dis_y)})
    state.opt_dis.zero_grad(set_to_none=True)
    total_dis.backward()
    state.opt_dis.step()

    state.step += 1
    return StepLog(
        step=state.step,
        L_loc=_f(l_loc),
        L_cls=_f(l_cls),
        L_ent_X=_f(l_ent_x),
        L_ent_Y=_f(l_ent_y),
        L_adv=_f(l_adv),
        L_dis_X=_f(l_dis_x),
        L_dis_Y=_f(l_dis_y),
        total_main=_f(total),
        total_dis=_f(total_dis),
    )


def recombine(log: StepLog, cfg: Config) -> float:
    """Weighted sum of logged main-loss components, for consistency checks."""
    w = cfg.loss.weights()
    return (
        w.lambda_loc * log.L_loc
        + w.lambda_cls * log.L_cls
        + w.lambda_ent * (log.L_ent_X + log.L_ent_Y)
        + w.lambda_adv * log.L_adv
    )


def next_batches(state: TrainState, source: PointDataset, target: PointDataset, cfg: Config):
    for name, ds in (("source", source), ("target", target)):
        if name not in state.samplers:
            state.samplers[name] = EpochSampler(len(ds))
    aug = cfg.train.aug()
    src_idx = state.samplers["source"].take(cfg.train.batch_source, state.rng)
    tgt_idx = state.samplers["target"].take(cfg.train.batch_target, state.rng)
    src = [augment(source[i], aug, state.rng) for i in src_idx]
    tgt = [augment(target[i], aug, state.rng) for i in tgt_idx]
    return src, tgt


def save_checkpoint(state: TrainState, cfg: Config, path) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "step": state.step,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "model": state.model.state_dict(),
        "discriminator": state.disc.state_dict(),
        "opt_main": state.opt_main.state_dict(),
        "opt_dis": state.opt_dis.state_dict(),
        "rng": state.rng.bit_generator.state,
        "samplers": {k: v.state_dict() for k, v in state.samplers.items()},
        "best": dict(state.best),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"{path} is not a pointda checkpoint")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    return payload


def load_checkpoint(path, cfg: Config | None = None) -> tuple[TrainState, Config]:
    """Restore a full training state; ``cfg`` defaults to the config stored in the file."""
    from .config import _build

    payload = read_checkpoint(path)
    if cfg is None:
        problems: list[str] = []
        cfg = _build(Config, payload["config"], "", problems)
        if problems:
            raise ConfigError(problems)
    elif cfg.hash() != payload["config_hash"]:
        raise ConfigError(f"{path}: checkpoint config hash {payload['config_hash']} != run config {cfg.hash()}")
    state = init_state(cfg)
    state.model.load_state_dict(payload["model"])
    state.disc.load_state_dict(payload["discriminator"])
    state.opt_main.load_state_dict(payload["opt_main"])
    state.opt_dis.load_state_dict(payload["opt_dis"])
    state.rng.bit_generator.state = payload["rng"]
    for name, s in payload["samplers"].items():
        sampler = EpochSampler(s["n"])
        sampler.load_state_dict(s)
        state.samplers[name] = sampler
    state.step = payload["step"]
    state.best = dict(payload["best"])
    return state, cfg


def _truncate_csv(path: Path, max_step: int) -> None:
    if not path.exists():
        return
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return
    col = rows[0].index("step")
    kept = [rows[0]] + [r for r in rows[1:] if int(r[col]) <= max_step]
    with path.open("w", newline="") as fh:
        csv.writer(fh).writerows(kept)


@dataclass
class TrainResult:
    state: TrainState
    history: list[StepLog]
    evals: list[MetricsRecord]
    out_dir: Path

    def final(self, split: str) -> MetricsRecord | None:
        recs = [r for r in self.evals if r.split == split]
        return recs[-1] if recs else None


def _run_evals(state, cfg, eval_sets, out_dir, name) -> list[MetricsRecord]:
    recs = [evaluate(state.model, ds, cfg.eval.threshold, step=state.step, name=name) for ds in eval_sets]
    write_metrics_csv(out_dir / "metrics.csv", recs, append=True)
    for rec in recs:
        logger.info("step %d %s mae=%.3f mse=%.3f H=%.3f", rec.step, rec.split, rec.mae, rec.mse, rec.mean_entropy)
        if rec.split == "source_eval":
            if not state.best or rec.mae < state.best["source_mae"]:
                state.best = {"step": rec.step, "source_mae": rec.mae}
                save_checkpoint(state, cfg, out_dir / "best.pt")
    return recs


def train(
    cfg: Config,
    source: PointDataset,
    target: PointDataset,
    out_dir,
    eval_sets: Sequence[PointDataset] = (),
    resume: bool = False,
    stop_at: int | None = None,
    name: str = "",
) -> TrainResult:
    """Run ``cfg.train.steps`` steps, writing ``losses.csv``, ``metrics.csv``,
    ``last.pt`` and ``best.pt`` into ``out_dir``.

    ``eval_sets`` are labeled splits scored at step 0, every
    ``eval_interval`` steps and at the end. The best checkpoint is chosen on
    source-domain MAE only. ``stop_at`` halts after that step as an
    interruption would; a later call with ``resume=True`` continues from
    ``last.pt`` and produces the same CSVs as an uninterrupted run.
    """
    if cfg.train.steps <= 0:
        raise ConfigError(f"train.steps must be > 0, got {cfg.train.steps}")
    if target.labeled:
        raise InvalidArgumentError("adaptation data must be the unlabeled target split")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loss_csv = out / "losses.csv"
    if resume:
        state, _ = load_checkpoint(out / "last.pt", cfg)
        _truncate_csv(loss_csv, state.step)
        _truncate_csv(out / "metrics.csv", state.step)
    else:
        state = init_state(cfg)
        for stale in (loss_csv, out / "metrics.csv"):
            stale.unlink(missing_ok=True)
    name = name or out.name
    evals: list[MetricsRecord] = []
    if state.step == 0 and eval_sets:
        evals += _run_evals(state, cfg, eval_sets, out, name)

    history: list[StepLog] = []
    new_file = not loss_csv.exists()
    t0 = time.perf_counter()
    with loss_csv.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(LOSS_HEADER)
        while state.step < cfg.train.steps:
            src, tgt = next_batches(state, source, target, cfg)
            log = train_step(state, src, tgt, cfg)
            history.append(log)
            writer.writerow([repr(v) for v in asdict(log).values()])
            step = state.step
            if step % 100 == 0:
                fh.flush()
                logger.debug("step %d total=%.4f (%.1fs)", step, log.total_main, time.perf_counter() - t0)
            if eval_sets and (step % cfg.train.eval_interval == 0 or step == cfg.train.steps):
                evals += _run_evals(state, cfg, eval_sets, out, name)
            if step % cfg.train.checkpoint_interval == 0 or step == cfg.train.steps:
                save_checkpoint(state, cfg, out / "last.pt")
            if stop_at is not None and step >= stop_at:
                save_checkpoint(state, cfg, out / "last.pt")
                break
    return TrainResult(state, history, evals, out)


ABLATION_ROWS = [
    ("supervised", []),
    ("ent_src", ["ent_src"]),
    ("ent_tgt", ["ent_tgt"]),
    ("ent_src+ent_tgt", ["ent_src", "ent_tgt"]),
    ("adv", ["adv"]),
    ("ent_src+ent_tgt+adv", ["ent_src", "ent_tgt", "adv"]),
]
ABLATION_HEADER = ["components", "source_mae", "source_mse", "adapted_mae", "adapted_mse", "status"]


def run_ablation(
    base: Config,
    source: PointDataset,
    target: PointDataset,
    source_eval: PointDataset,
    target_eval: PointDataset,
    out_dir,
    rows: Sequence[tuple[str, list[str]]] = ABLATION_ROWS,
) -> list[dict]:
    """Train one model per loss combination (shared seed) and tabulate final errors.

    ``source_*`` columns score the source domain, ``adapted_*`` the target.
    A failing row is recorded with its error and the remaining rows still run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = []
    for label, flags in rows:
        unknown = set(flags) - set(LOSS_FLAGS)
        row = {"components": label}
        try:
            if unknown:
                raise ConfigError(f"unknown loss flags {sorted(unknown)}")
            cfg = base.replace(train=_with_losses(base, flags))
            result = train(cfg, source, target, out / label, eval_sets=[source_eval, target_eval], name=label)
            src_rec = result.final("source_eval")
            tgt_rec = result.final("target_eval")
            row.update(
                source_mae=src_rec.mae,
                source_mse=src_rec.mse,
                adapted_mae=tgt_rec.mae,
                adapted_mse=tgt_rec.mse,
                status="ok",
            )
        except Exception as exc:  # recorded per row; the report is still written
            logger.exception("ablation row %s failed", label)
            row.update(source_mae="", source_mse="", adapted_mae="", adapted_mse="", status=f"error: {exc}")
        report.append(row)
        write_ablation_report(out / "ablation_report.csv", report)
    return report


def _with_losses(cfg: Config, flags: list[str]):
    from dataclasses import replace

    return replace(cfg.train, enabled_losses=list(flags))


def write_ablation_report(path, report: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_HEADER)
        writer.writeheader()
        writer.writerows(report)
