"""Self-adaptive class-specific confidence thresholds for pseudo-labeling.

A global threshold tracks the mean top-1 confidence of the model on
weakly augmented unlabeled batches via an exponential moving average;
per-class local statistics track mean class probabilities. The effective
threshold for class ``c`` is the global value scaled by the normalized
local statistic, so the most-confident class always sits exactly at the
global threshold.

Three modes:

* ``maskmatch``  - adaptive, initialized at 1.0 so no pseudo-label can
  pass until the model has earned some confidence.
* ``freematch``  - adaptive, initialized at ``1/C``.
* ``fixed``      - constant threshold for every class, never updated.

State is kept in float64 regardless of model dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError

MODES = ("maskmatch", "freematch", "fixed")


@dataclass(frozen=True)
class ThresholdState:
    mode: str
    tau_global: float
    nu_local: np.ndarray  # [C] float64
    momentum: float
    iteration: int = 0
    fixed_value: float = 0.95

    @property
    def num_classes(self):
        return int(self.nu_local.shape[0])

    @property
    def adaptive(self):
        return self.mode != "fixed"


def init_state(num_classes, mode="maskmatch", momentum=0.999, fixed_value=0.95):
    """Build the iteration-0 threshold state for the given mode."""
    if num_classes < 2:
        raise ConfigurationError("num_classes must be >= 2")
    if not 0.0 < momentum < 1.0:
        raise ConfigurationError("momentum must be in (0, 1)")
    if mode not in MODES:
        raise ConfigurationError(f"unknown threshold mode {mode!r}")
    if mode == "maskmatch":
        tau, nu = 1.0, np.ones(num_classes, dtype=np.float64)
    elif mode == "freematch":
        tau = 1.0 / num_classes
        nu = np.full(num_classes, 1.0 / num_classes, dtype=np.float64)
    else:
        if not 0.0 < fixed_value <= 1.0:
            raise ConfigurationError("fixed threshold must be in (0, 1]")
        tau = fixed_value
        nu = np.full(num_classes, fixed_value, dtype=np.float64)
    return ThresholdState(mode=mode, tau_global=tau, nu_local=nu,
                          momentum=momentum, iteration=0, fixed_value=fixed_value)


def update_state(state, probs):
    """EMA update from one batch of weak-view probabilities ``[B, C]``.

    ``fixed`` mode is a no-op. Statistics are the batch mean of the top-1
    probability (global) and the batch mean of each class probability
    (local), blended with momentum ``m``.
    """
    if state.mode == "fixed":
        return state
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("probs must be a nonempty [B, C] array")
    m = state.momentum
    tau = m * state.tau_global + (1.0 - m) * float(p.max(axis=1).mean())
    nu = m * state.nu_local + (1.0 - m) * p.mean(axis=0)
    return replace(state, tau_global=tau, nu_local=nu, iteration=state.iteration + 1)


def class_thresholds(state):
    """Per-class thresholds: normalized local statistic times the global value."""
    if state.mode == "fixed":
        return np.full(state.num_classes, state.fixed_value, dtype=np.float64)
    return (state.nu_local / state.nu_local.max()) * state.tau_global


def selection_mask(probs, state):
    """Confidence mask and hard pseudo-labels for a batch of probabilities.

    ``mask[i]`` is 1 iff the top-1 probability strictly exceeds the
    threshold of its argmax class (ties break to the lowest class index).
    Pseudo-labels are one-hot argmax rows for every sample; callers use
    the mask to decide which ones count.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("probs must be [B, C]")
    thr = class_thresholds(state)
    top_class = p.argmax(axis=1)
    top_prob = p[np.arange(p.shape[0]), top_class]
    mask = (top_prob > thr[top_class]).astype(np.int64)
    pseudo = np.zeros_like(p)
    pseudo[np.arange(p.shape[0]), top_class] = 1.0
    return mask, pseudo
