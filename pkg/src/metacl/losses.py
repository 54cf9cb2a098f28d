"""Composite training loss and the discriminator's objective.

The learner minimizes

    L = CE(current + memory) + lam1 * L2(logits, stored logits)
      + lam2 * CE(memory) + lam3 * L_align

where L_align pushes the discriminator's read of the shared features toward
task-indistinguishability without touching the discriminator weights. The
discriminator separately minimizes CE over {fake=0, task 1..K} plus its own
dark-replay term on stored discriminator logits, without touching the
feature path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    l2_distance,
    no_grad,
    slice_cols,
    soft_cross_entropy,
    softmax_cross_entropy,
)
from .errors import ConfigurationError, ContractError, MemoryConsistencyError

GENERATOR_MODES = ("uniform-confusion", "negative-ce")


@dataclass(frozen=True)
class LossWeights:
    """Trade-off constants; all must be non-negative."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.03

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class AdversarialConfig:
    """Noise model and the direction of the feature-alignment objective.

    fake_fraction scales how many noise rows accompany a real batch of size B
    (1.0 keeps the fake/real counts equal).
    """

    noise_mean: float = 0.0
    noise_std: float = 1.0
    generator_mode: str = "uniform-confusion"
    fake_fraction: float = 1.0

    def __post_init__(self):
        if self.generator_mode not in GENERATOR_MODES:
            raise ConfigurationError(
                f"generator_mode must be one of {GENERATOR_MODES}")
        if self.noise_std <= 0:
            raise ConfigurationError("noise_std must be positive")
        if self.fake_fraction <= 0:
            raise ConfigurationError("fake_fraction must be positive")


def noise_batch(cfg, rng, n, dim):
    """Fresh Gaussian pseudo-inputs in data space, labeled task 0 by callers."""
    return rng.normal(cfg.noise_mean, cfg.noise_std, size=(n, dim))


def _grouped(batch, memory):
    """Stack current-batch rows and memory entries into per-task arrays."""
    xs, ys = {}, {}
    if batch is not None and len(batch.x) > 0:
        t = batch.task_id
        xs.setdefault(t, []).append(np.asarray(batch.x, dtype=np.float64))
        ys.setdefault(t, []).append(np.asarray(batch.y, dtype=np.int64))
    for e in memory:
        xs.setdefault(e.t, []).append(np.asarray(e.x, dtype=np.float64)[None, :])
        ys.setdefault(e.t, []).append(np.asarray([e.y], dtype=np.int64))
    return {t: (np.concatenate(xs[t]), np.concatenate(ys[t])) for t in xs}


def ce_loss(model, batch, memory=()):
    """Mean cross-entropy over current plus memory samples.

    Each sample's logits come from the head of its own task, so the mean is
    taken across heads, weighted by per-task sample counts.
    """
    groups = _grouped(batch, memory)
    n_total = sum(len(y) for _, y in groups.values())
    if n_total == 0:
        raise ContractError("ce_loss needs at least one sample")
    total = None
    for t in sorted(groups):
        x, y = groups[t]
        part = softmax_cross_entropy(model.logits(x, t), y) * (len(y) / n_total)
        total = part if total is None else total + part
    return total


def derpp_loss(model, memory, weights):
    """Dark-replay term: lam1 * mean L2 to stored logits + lam2 * mean CE.

    Memory entries must carry classifier-logit snapshots whose width matches
    the current head of their task.
    """
    memory = list(memory)
    if not memory:
        return Tensor(0.0)
    by_task = {}
    for e in memory:
        if e.h is None:
            raise MemoryConsistencyError("memory entry lacks a logit snapshot")
        by_task.setdefault(e.t, []).append(e)
    n_total = len(memory)
    l2_total, ce_total = None, None
    for t in sorted(by_task):
        entries = by_task[t]
        width = model.heads.output_dim(t)
        for e in entries:
            if e.h.shape != (width,):
                raise MemoryConsistencyError(
                    f"stored logits for task {t} have shape {e.h.shape}, "
                    f"head expects ({width},)")
        x = np.stack([e.x for e in entries])
        h = np.stack([e.h for e in entries])
        y = np.array([e.y for e in entries], dtype=np.int64)
        logits = model.logits(x, t)
        frac = len(entries) / n_total
        l2_part = l2_distance(logits, Tensor(h)) * frac
        ce_part = softmax_cross_entropy(logits, y) * frac
        l2_total = l2_part if l2_total is None else l2_total + l2_part
        ce_total = ce_part if ce_total is None else ce_total + ce_part
    return weights.lambda1 * l2_total + weights.lambda2 * ce_total


def adversarial_generator_loss(model, batch, memory=(), cfg=None):
    """Feature-alignment objective; gradient reaches the extractor only.

    uniform-confusion (default): CE between the frozen discriminator's read
    of the shared features and the uniform distribution over the real task
    labels 1..K; its minimum over the real-label simplex is ln K.
    negative-ce: the negated discriminator CE on true task labels.

    With fewer than two seen tasks there is nothing to confuse; returns 0.
    """
    cfg = cfg or AdversarialConfig()
    k = model.n_seen
    if k < 2:
        return Tensor(0.0)
    groups = _grouped(batch, memory)
    if not groups:
        raise ContractError("alignment loss needs at least one sample")
    x_all = np.concatenate([groups[t][0] for t in sorted(groups)])
    t_all = np.concatenate(
        [np.full(len(groups[t][0]), t, dtype=np.int64) for t in sorted(groups)])
    logits = model.discriminate(model.extract(x_all), k, freeze=True)
    if cfg.generator_mode == "uniform-confusion":
        target = np.zeros((len(x_all), model.k_max + 1))
        target[:, 1:k + 1] = 1.0 / k
        return soft_cross_entropy(logits, target)
    return -softmax_cross_entropy(logits, t_all)


def discriminator_loss(model, x, task_labels, memory, weights, cfg=None):
    """CE over {fake=0, task 1..K} plus dark replay on stored disc logits.

    ``x`` must mix real rows (labeled by true task) with fresh noise rows
    (labeled 0). Features are computed under no_grad, so only discriminator
    weights receive gradient.
    """
    task_labels = np.asarray(task_labels, dtype=np.int64)
    if x is None or len(x) == 0:
        raise ContractError("discriminator batch is empty")
    if not np.any(task_labels == 0):
        raise ContractError("discriminator batch contains no noise samples")
    k = model.n_seen
    with no_grad():
        feats = model.extract(x).data
    loss = softmax_cross_entropy(model.discriminate(Tensor(feats), k), task_labels)

    memory = list(memory)
    if not memory:
        return loss
    by_width = {}
    for e in memory:
        if e.h_disc is None:
            raise MemoryConsistencyError(
                "memory entry lacks a discriminator-logit snapshot")
        width = e.h_disc.shape[0]
        if width > k + 1:
            raise MemoryConsistencyError(
                f"stored discriminator logits have width {width}, "
                f"only {k + 1} classes exist")
        by_width.setdefault(width, []).append(e)
    n_total = len(memory)
    l2_total, ce_total = None, None
    for width in sorted(by_width):
        entries = by_width[width]
        xm = np.stack([e.x for e in entries])
        hd = np.stack([e.h_disc for e in entries])
        t = np.array([e.t for e in entries], dtype=np.int64)
        with no_grad():
            feats_m = model.extract(xm).data
        logits_m = model.discriminate(Tensor(feats_m), k)
        frac = len(entries) / n_total
        l2_part = l2_distance(slice_cols(logits_m, width), Tensor(hd)) * frac
        ce_part = softmax_cross_entropy(logits_m, t) * frac
        l2_total = l2_part if l2_total is None else l2_total + l2_part
        ce_total = ce_part if ce_total is None else ce_total + ce_part
    return loss + weights.lambda1 * l2_total + weights.lambda2 * ce_total


def total_loss(model, batch, memory, weights, cfg=None):
    """The learner's full objective: CE + dark replay + lam3 * alignment."""
    loss = ce_loss(model, batch, memory)
    loss = loss + derpp_loss(model, memory, weights)
    if weights.lambda3 != 0:
        loss = loss + weights.lambda3 * adversarial_generator_loss(
            model, batch, memory, cfg)
    return loss
