"""Training loop: per-step loss assembly, optimization, metrics, checkpoints.

One training step runs, in order: supervised loss on weakly augmented
labeled images; threshold update and selection mask from weak-view
probabilities on unlabeled images; the thresholded consistency loss on
strong views; the reconstruction loss over every image in the step; the
synthetic-data loss on the mixed union of labeled data and the clean set;
then one weighted total and one backward pass. Ablation flags skip
disabled branches entirely, so the baseline configuration computes
exactly the supervised-plus-consistency objective.

All randomness is derived per (seed, stream, iteration, sample id), which
makes any iteration replayable in isolation: a resumed run continues
bit-for-bit where the interrupted one left off.
"""

from __future__ import annotations

import json
import time
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

from .augment import strong_augment, weak_augment
from .autodiff import Tensor
from .checkpoint import Checkpoint, config_to_plain, load_checkpoint, save_checkpoint
from .data import (
    STREAM_LABELED_BATCH,
    STREAM_UNLABELED_BATCH,
    LabeledBatch,
    UnlabeledBatch,
    batch_for_iteration,
    one_hot,
)
from .errors import ConfigurationError, NumericError
from .losses import batch_cross_entropy, make_bundle, total_loss
from .mae import mae_forward
from .model import ModelConfig, classify, init_params, lift, predict_probs
from .optim import AdamW, lr_at
from .sdt import build_synthetic_batch, select_clean_set
from .thresholds import init_state, selection_mask, update_state

# per-purpose RNG stream tags (batch streams use 100/101, see data.py)
STREAM_WEAK_LABELED = 1
STREAM_WEAK_UNLABELED = 2
STREAM_STRONG_UNLABELED = 3
STREAM_SDT = 4
STREAM_MAE_LABELED = 5
STREAM_MAE_UNLABELED = 6


def stream_rng(seed, stream, iteration, sample_id=0):
    return np.random.default_rng((seed, stream, iteration, int(sample_id)))


@dataclass(frozen=True)
class TrainerConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    total_iterations: int = 3000
    eval_every: int = 250
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_frac: float = 0.05
    batch_labeled: int = 8
    batch_unlabeled: int = 12
    lambda_u: float = 1.0
    lambda_mae: float = 0.01
    lambda_sdt: float = 0.5
    mask_ratio: float = 0.3
    normalize_pixels: bool = False
    threshold_mode: str = "maskmatch"
    threshold_momentum: float = 0.999
    fixed_threshold: float = 0.95
    update_before_mask: bool = True
    disable_mae: bool = False
    disable_sdt: bool = False
    sdt_mode: str = "sdt"  # "sdt" | "mixup_only"
    seed: int = 0
    checkpoint_every: int = 1000  # periodic checkpoints; 0 disables

    def __post_init__(self):
        if self.total_iterations < 0:
            raise ConfigurationError("total_iterations must be >= 0")
        if self.batch_labeled < 1 or self.batch_unlabeled < 1:
            raise ConfigurationError("batch sizes must be positive")
        if min(self.lambda_u, self.lambda_mae, self.lambda_sdt) < 0:
            raise ConfigurationError("loss coefficients must be >= 0")
        if self.sdt_mode not in ("sdt", "mixup_only"):
            raise ConfigurationError(f"unknown sdt_mode {self.sdt_mode!r}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigurationError("mask_ratio must be in (0, 1)")


@dataclass(frozen=True)
class UtilizationRecord:
    iteration: int
    actual: float        # fraction of unlabeled samples touching any loss term
    theoretical: float   # multiplicity-counted fraction, up to 3.0
    pass_count: int
    clean_count: int


def compute_utilization(batch_unlabeled, mask, clean_count, mae_enabled,
                        iteration=0):
    """Per-iteration unlabeled-data utilization bookkeeping.

    With the reconstruction branch on, every sample contributes at least
    once, so actual utilization is 1; otherwise it is the threshold pass
    rate. Theoretical utilization counts one sample once per loss term it
    feeds (reconstruction, consistency, synthetic).
    """
    mask = np.asarray(mask)
    pass_count = int(mask.sum())
    if clean_count > batch_unlabeled:
        raise ValueError("clean_count cannot exceed the unlabeled batch size")
    actual = 1.0 if mae_enabled else pass_count / batch_unlabeled
    mae_count = batch_unlabeled if mae_enabled else 0
    theoretical = (mae_count + pass_count + clean_count) / batch_unlabeled
    return UtilizationRecord(iteration=iteration, actual=actual,
                             theoretical=theoretical, pass_count=pass_count,
                             clean_count=int(clean_count))


@dataclass
class StepResult:
    bundle: object
    state: object
    utilization: UtilizationRecord
    grads: dict


def _augment_batch(images, ids, seed, stream, iteration, transform, policy=None):
    views = [transform(img, stream_rng(seed, stream, iteration, sid), policy)
             for img, sid in zip(images, ids)]
    return np.stack(views)


def train_step(params, labeled, unlabeled, state, config, iteration):
    """One full loss assembly and backward pass; parameters are not mutated."""
    mc = config.model
    seed = config.seed
    b_u = len(unlabeled.images)
    l_ids = labeled.ids if labeled.ids is not None else np.arange(len(labeled.images))

    weak_labeled = _augment_batch(labeled.images, l_ids, seed,
                                  STREAM_WEAK_LABELED, iteration, weak_augment)
    weak_unlabeled = _augment_batch(unlabeled.images, unlabeled.ids, seed,
                                    STREAM_WEAK_UNLABELED, iteration, weak_augment)

    weak_probs = predict_probs(params, mc, weak_unlabeled)
    if state.adaptive and config.update_before_mask:
        state = update_state(state, weak_probs)
    mask, pseudo = selection_mask(weak_probs, state)
    if state.adaptive and not config.update_before_mask:
        state = update_state(state, weak_probs)
    pass_count = int(mask.sum())

    tensors = lift(params, requires_grad=True)
    zero = Tensor(np.asarray(0.0, dtype=mc.np_dtype))

    if config.disable_mae:
        loss_mae = zero
    else:
        mae_images = np.concatenate([weak_labeled, weak_unlabeled], axis=0)
        rngs = [stream_rng(seed, STREAM_MAE_LABELED, iteration, sid) for sid in l_ids]
        rngs += [stream_rng(seed, STREAM_MAE_UNLABELED, iteration, sid)
                 for sid in unlabeled.ids]
        loss_mae = mae_forward(tensors, mc, mae_images, config.mask_ratio,
                               config.normalize_pixels, rngs)

    synthetic = None
    clean_count = 0
    if not config.disable_sdt:
        clean = select_clean_set(weak_unlabeled, mask, pseudo, unlabeled.ids)
        clean_count = len(clean)
        synthetic = build_synthetic_batch(weak_labeled, labeled.labels, clean,
                                          stream_rng(seed, STREAM_SDT, iteration))
    mixup_only = not config.disable_sdt and config.sdt_mode == "mixup_only"

    # the supervised, consistency, and synthetic terms all classify images,
    # so they share one batched forward; per-term weight vectors pick their
    # rows back out of the joint cross-entropy
    b_l = len(labeled.images)
    segments = [(weak_labeled, np.asarray(labeled.labels),
                 "s", np.full(b_l, 1.0 / b_l))]
    if mixup_only:
        # synthetic batch replaces the thresholded consistency term outright
        n = len(synthetic)
        segments.append((synthetic.images, synthetic.labels,
                         "u", np.full(n, 1.0 / n)))
    else:
        if pass_count > 0:
            strong_unlabeled = _augment_batch(unlabeled.images, unlabeled.ids, seed,
                                              STREAM_STRONG_UNLABELED, iteration,
                                              strong_augment)
            segments.append((strong_unlabeled, pseudo, "u", mask / b_u))
        if synthetic is not None:
            n = len(synthetic)
            segments.append((synthetic.images, synthetic.labels,
                             "sdt", np.full(n, 1.0 / n)))

    probs = classify(tensors, mc, np.concatenate([s[0] for s in segments]))
    ce = batch_cross_entropy(probs, np.concatenate([s[1] for s in segments]))
    losses = {"s": zero, "u": zero, "sdt": zero}
    offset = 0
    total_rows = ce.data.shape[0]
    for images, _, term, weights in segments:
        w = np.zeros(total_rows, dtype=ce.data.dtype)
        w[offset : offset + len(images)] = weights
        losses[term] = (ce * Tensor(w)).sum()
        offset += len(images)
    loss_s, loss_u, loss_sdt = losses["s"], losses["u"], losses["sdt"]

    total = total_loss(loss_s, loss_u, loss_mae, loss_sdt,
                       config.lambda_u, config.lambda_mae, config.lambda_sdt)
    total.backward()
    grads = {name: t.grad for name, t in tensors.items()
             if t.requires_grad and t.grad is not None}

    bundle = make_bundle(loss_s.data, loss_u.data, loss_mae.data, loss_sdt.data,
                         config.lambda_u, config.lambda_mae, config.lambda_sdt,
                         pass_count)
    utilization = compute_utilization(b_u, mask, clean_count,
                                      not config.disable_mae, iteration)
    return StepResult(bundle=bundle, state=state, utilization=utilization,
                      grads=grads)


def evaluate(params, model_config, images, labels, chunk=256):
    """Top-1 error rate on raw (unaugmented) images; ties break to low index."""
    if len(images) == 0:
        raise ValueError("test pool is empty")
    probs = predict_probs(params, model_config, images, chunk=chunk)
    predictions = probs.argmax(axis=1)
    return float(1.0 - (predictions == np.asarray(labels)).mean())


@dataclass
class TrainResult:
    params: dict
    threshold_state: object
    records: list
    final_error: float | None
    coefficient_check: dict


def _coefficient_check(records, config):
    """Diagnostic for the reconstruction coefficient: compare it against the
    converged ratio (mean supervised + weighted consistency) / mean
    reconstruction over the final decile of iterations."""
    tail = records[-max(1, len(records) // 10):]
    mean_s = float(np.mean([r["loss_s"] for r in tail])) if tail else 0.0
    mean_u = float(np.mean([r["loss_u"] for r in tail])) if tail else 0.0
    mean_mae = float(np.mean([r["loss_mae"] for r in tail])) if tail else 0.0
    if config.disable_mae or mean_mae == 0.0:
        return {"applicable": False, "lambda_mae": config.lambda_mae,
                "ratio": None, "ok": True}
    ratio = (mean_s + config.lambda_u * mean_u) / mean_mae
    return {"applicable": True, "lambda_mae": config.lambda_mae,
            "ratio": ratio, "ok": bool(config.lambda_mae < ratio)}


def run_training(config, pools, metrics_path=None, checkpoint_dir=None,
                 resume_from=None):
    """Run the optimization loop; returns final parameters and metrics records.

    Metrics are flushed line by line (JSON object per iteration) when
    ``metrics_path`` is given, so aborted runs keep partial logs. With
    ``resume_from`` pointing at a checkpoint, iterations continue from the
    stored counter and reproduce an uninterrupted run exactly.
    """
    mc = config.model
    n_l = len(pools.labeled_images)
    n_u = len(pools.unlabeled_images)
    if config.batch_labeled > n_l:
        raise ConfigurationError(f"batch_labeled {config.batch_labeled} exceeds "
                                 f"labeled pool {n_l}")
    if config.batch_unlabeled > n_u:
        raise ConfigurationError(f"batch_unlabeled {config.batch_unlabeled} exceeds "
                                 f"unlabeled pool {n_u}")
    if pools.num_classes != mc.num_classes:
        raise ConfigurationError(f"pools have {pools.num_classes} classes, "
                                 f"model expects {mc.num_classes}")

    optimizer = AdamW(beta1=config.beta1, beta2=config.beta2,
                      weight_decay=config.weight_decay)
    if resume_from is not None:
        expect = {k: v.shape for k, v in init_params(mc, seed=config.seed).items()}
        ckpt = load_checkpoint(resume_from, expect_param_shapes=expect)
        params = ckpt.params
        optimizer.load_state_dict(ckpt.optimizer)
        state = ckpt.threshold_state
        start = ckpt.iteration
    else:
        params = init_params(mc, seed=config.seed)
        state = init_state(mc.num_classes, config.threshold_mode,
                           config.threshold_momentum, config.fixed_threshold)
        start = 0

    total = config.total_iterations
    warmup = int(round(config.warmup_frac * total))
    records = []
    writer = open(metrics_path, "a" if resume_from else "w") if metrics_path else None

    def emit(record):
        records.append(record)
        if writer:
            writer.write(json.dumps(record) + "\n")
            writer.flush()

    def checkpoint_to(path, iteration):
        save_checkpoint(path, Checkpoint(
            iteration=iteration, seed=config.seed, params=params,
            optimizer=optimizer.state_dict(), threshold_state=state,
            trainer_config=config_to_plain(config)))

    def run_iteration(it):
        nonlocal state, final_error
        t0 = time.perf_counter()
        l_idx = batch_for_iteration(n_l, config.batch_labeled, config.seed,
                                    it, STREAM_LABELED_BATCH)
        u_idx = batch_for_iteration(n_u, config.batch_unlabeled, config.seed,
                                    it, STREAM_UNLABELED_BATCH)
        labeled = LabeledBatch(
            images=pools.labeled_images[l_idx],
            labels=one_hot(pools.labeled_labels[l_idx], pools.num_classes),
            ids=pools.labeled_ids[l_idx])
        unlabeled = UnlabeledBatch(images=pools.unlabeled_images[u_idx],
                                   ids=pools.unlabeled_ids[u_idx])
        try:
            result = train_step(params, labeled, unlabeled, state, config, it)
        except NumericError as exc:
            emit({"iter": it, "error": f"non_finite_loss: {exc}"})
            raise
        state = result.state
        optimizer.step(params, result.grads, lr_at(it, config.lr, warmup, total))

        bundle = result.bundle
        util = result.utilization
        record = {
            "iter": it,
            "loss_s": bundle.loss_s,
            "loss_u": bundle.loss_u,
            "loss_mae": bundle.loss_mae,
            "loss_sdt": bundle.loss_sdt,
            "loss_total": bundle.total,
            "tau_global": float(state.tau_global),
            "pass_rate": util.pass_count / config.batch_unlabeled,
            "util_actual": util.actual,
            "util_theoretical": util.theoretical,
        }
        is_last = it + 1 == total
        if (config.eval_every > 0 and (it + 1) % config.eval_every == 0) or is_last:
            final_error = evaluate(params, mc, pools.test_images, pools.test_labels)
            record["error_rate"] = final_error
        record["wall_ms"] = (time.perf_counter() - t0) * 1e3
        emit(record)

        if checkpoint_dir and config.checkpoint_every > 0 \
                and (it + 1) % config.checkpoint_every == 0:
            checkpoint_to(f"{checkpoint_dir}/ckpt_{it + 1:06d}.mmck", it + 1)

    final_error = None
    blas_cap = threadpool_limits(limits=1, user_api="blas") \
        if threadpool_limits else nullcontext()
    try:
        with blas_cap:
            for it in range(start, total):
                run_iteration(it)
        if checkpoint_dir:
            checkpoint_to(f"{checkpoint_dir}/checkpoint.mmck", total)
    finally:
        if writer:
            writer.close()

    return TrainResult(params=params, threshold_state=state, records=records,
                       final_error=final_error,
                       coefficient_check=_coefficient_check(records, config))
