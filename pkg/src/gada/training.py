"""Single-optimizer GADA training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import OptState, backward, sgd_step, zero_grad
from .metrics import EvalReport, evaluate_scenario
from .model import GadaModel, init_model
from .objective import Batch, LossBreakdown, adversarial_eta, total_loss
from .synth import Scenario

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Non-finite loss; ``log`` holds the records of the completed steps."""

    def __init__(self, message: str, log: list[dict] | None = None):
        super().__init__(message)
        self.log = log or []


@dataclass
class TrainConfig:
    seed: int
    steps: int = 2000
    lambda1: float = 2.0
    lambda2: float = 3.2
    lambda3: float = 4.0
    gamma: float = 0.7
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 16
    full_batch_size: int = 32
    eval_interval: int = 200
    d_local: int = 32
    d_sem: int = 16
    hgr_layers: int = 1
    use_hgr: bool = True
    detach_attention: bool = True
    eta_max: float = 0.02
    warmup_frac: float = 0.1

    def validate(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.seed is None:
            raise ValueError("an explicit seed is required")


@dataclass
class TrainResult:
    model: GadaModel
    log: list[dict] = field(default_factory=list)
    report: EvalReport | None = None


def build_model(scenario: Scenario, cfg: TrainConfig) -> GadaModel:
    return init_model(
        scenario.hierarchy,
        scenario.mask,
        d_in=scenario.config.d_in,
        d_local=cfg.d_local,
        d_sem=cfg.d_sem,
        hgr_layers=cfg.hgr_layers,
        seed=cfg.seed,
        use_hgr=cfg.use_hgr,
        detach_attention=cfg.detach_attention,
    )


def _record(step: int, lb: LossBreakdown) -> dict:
    rec = {
        "step": step,
        "l_shared": lb.l_shared,
        "l_k1": lb.l_k1,
        "l_k2": lb.l_k2,
        "l_adv": lb.l_adv,
        "total": lb.total,
        "scf_keep_rate": lb.scf_keep_rate,
    }
    if lb.scf_total_nonshared:
        rec["scf_keep_rate_nonshared"] = lb.scf_kept_nonshared / lb.scf_total_nonshared
    return rec


def train(scenario: Scenario, cfg: TrainConfig, model: GadaModel | None = None) -> TrainResult:
    """Run ``cfg.steps`` SGD steps on the joint objective.

    Each step draws a shared-source, a full-source and a target batch from a
    seeded generator, so equal configs reproduce bitwise. The target is
    evaluated every ``eval_interval`` steps and after the last one.
    """
    cfg.validate()
    model = model or build_model(scenario, cfg)
    rng = np.random.default_rng([cfg.seed, 7])
    opt = OptState(cfg.lr, cfg.momentum, cfg.weight_decay)
    params = model.parameters()

    shared_idx = np.flatnonzero(scenario.source_is_shared)
    all_idx = np.arange(len(scenario.source_y))
    tgt_idx = np.arange(len(scenario.target_x))
    if len(shared_idx) == 0:
        raise ValueError("scenario has no shared source samples")

    result = TrainResult(model)
    for step in range(cfg.steps):
        sh = rng.choice(shared_idx, cfg.batch_size)
        fu = rng.choice(all_idx, cfg.full_batch_size)
        tg = rng.choice(tgt_idx, cfg.batch_size)
        lb = total_loss(
            Batch(scenario.source_x[sh], scenario.source_y[sh]),
            Batch(scenario.source_x[fu], scenario.source_y[fu]),
            Batch(scenario.target_x[tg]),
            model,
            cfg.lambda1,
            cfg.lambda2,
            cfg.lambda3,
            cfg.gamma,
            eta=adversarial_eta(step, cfg.steps, cfg.eta_max, cfg.warmup_frac),
        )
        for term in ("l_shared", "l_k1", "l_k2", "l_adv", "total"):
            if not math.isfinite(getattr(lb, term)):
                raise TrainingDiverged(f"step {step}: loss term {term} = {getattr(lb, term)}", result.log)
        zero_grad(params)
        grads = backward(lb.graph)
        sgd_step(params, [grads.get(p) for p in params], opt)

        rec = _record(step, lb)
        if (step + 1) % cfg.eval_interval == 0 or step + 1 == cfg.steps:
            report = evaluate_scenario(model, scenario)
            rec["target_acc"] = report.accuracy
            rec["target_macro_f1"] = report.macro_f1
            result.report = report
            log.debug("step %d acc %.4f f1 %.4f", step, report.accuracy, report.macro_f1)
        result.log.append(rec)

    if result.report is None:
        result.report = evaluate_scenario(model, scenario)
    return result
