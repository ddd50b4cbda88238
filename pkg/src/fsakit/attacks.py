"""Gradient-sign attacks and the frequency/spatial consistency (FSA) wrapper.

Six base methods share one update skeleton: take a method-specific gradient,
move every pixel by alpha times its sign, then project back into the eps-ball
around the clean image and into [0, 1].

With ``fsa=True`` each iteration becomes a two-phase update. The method's
gradient is signed twice, once directly (spatial view) and once after
:func:`fsakit.frequency.frequency_pullback` (frequency view). Pixels where
the two signed steps agree move first; the gradient is then re-evaluated at
that intermediate point and only the disagreeing pixels move, using the
fresh direction. Each pixel moves at most once per iteration, so the
per-step budget is identical to the base attack's.

With the orthonormal DCT the two views agree everywhere by construction and
the wrapper reproduces the base attack bit for bit; the non-orthonormal
``scaled`` mode is where the mask carries information.

Randomness (DI-FGSM transforms, PGD inits) is drawn from dedicated streams
seeded by (config seed, image index, step, phase), so batched and per-image
runs see the same draws and reruns are exactly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frequency import DctMode, frequency_pullback
from .model import Classifier, LabeledImage, forward, input_gradient
from .tensor_ops import as_f64, conv2d_batch, sign

__all__ = [
    "METHODS",
    "AttackConfig",
    "MomentumState",
    "AttackResult",
    "BatchAttackOutcome",
    "gaussian_kernel",
    "translation_smooth",
    "diverse_input_transform",
    "spatial_step",
    "frequency_step",
    "consistency_mask",
    "fsa_step",
    "attack_batch",
    "run_attack",
]

METHODS = ("FGSM", "IFGSM", "MIFGSM", "DIFGSM", "TIFGSM", "PGD")
_RAW_GRADIENT_METHODS = frozenset({"FGSM", "IFGSM", "PGD"})


@dataclass(frozen=True)
class AttackConfig:
    """Immutable description of one attack run.

    alpha defaults to eps / steps so the accumulated step budget matches the
    ball radius. Method names are case-insensitive and hyphens are ignored
    ("I-FGSM" == "ifgsm").
    """

    method: str
    eps: float
    steps: int = 5
    alpha: float | None = None
    fsa: bool = False
    dct_mode: DctMode = DctMode.SCALED
    mi_decay: float = 1.0
    di_prob: float = 0.5
    ti_kernel_size: int = 7
    pgd_random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        method = str(self.method).upper().replace("-", "").replace("_", "")
        if method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "dct_mode", DctMode(self.dct_mode))
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        alpha = self.eps / self.steps if self.alpha is None else float(self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if alpha < 0 or alpha > self.eps or (alpha == 0 and self.eps > 0):
            raise ValueError(f"alpha must satisfy 0 < alpha <= eps (got alpha={alpha}, eps={self.eps})")
        if self.mi_decay < 0:
            raise ValueError(f"mi_decay must be >= 0, got {self.mi_decay}")
        if not 0.0 <= self.di_prob <= 1.0:
            raise ValueError(f"di_prob must lie in [0, 1], got {self.di_prob}")
        if self.ti_kernel_size < 1 or self.ti_kernel_size % 2 == 0:
            raise ValueError(f"ti_kernel_size must be a positive odd integer, got {self.ti_kernel_size}")
        if int(self.seed) < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))


@dataclass
class MomentumState:
    """Accumulated l1-normalized gradient for MI-FGSM (zeros before step 0)."""

    g_acc: np.ndarray | None = None


@dataclass
class AttackResult:
    """Outcome of attacking a single image."""

    adversarial: np.ndarray
    clean_pred: int
    adv_pred: int
    success: bool
    linf: float
    mask_ones_fraction_per_step: list = field(default_factory=list)


@dataclass
class BatchAttackOutcome:
    """Vectorized outcome for a batch; arrays are indexed by image."""

    adversarial: np.ndarray
    clean_pred: np.ndarray
    adv_pred: np.ndarray
    success: np.ndarray
    linf: np.ndarray
    mask_fractions: np.ndarray | None  # [steps, B] for FSA runs, else None
    trace: list | None = None


def _stream(seed: int, image_index: int, step: int, phase: int) -> np.random.Generator:
    """Independent RNG stream per (run seed, image, step, phase)."""
    return np.random.default_rng((seed, image_index, step, phase))


def gaussian_kernel(size: int) -> np.ndarray:
    """Normalized 2-D Gaussian with sigma = size / 6, summing exactly to 1."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    sigma = size / 6.0
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(offsets**2) / (2.0 * sigma**2))
    kern = np.outer(w, w)
    return kern / kern.sum()


def translation_smooth(g, kernel_size: int) -> np.ndarray:
    """Depthwise Gaussian smoothing of a gradient, preserving shape.

    kernel_size == 1 is the exact identity. Each channel of each image is
    convolved with the same normalized Gaussian, zero-padded so constant
    regions away from the border are preserved.
    """
    g = as_f64(g)
    if g.ndim < 2:
        raise ValueError(f"expected at least [H, W], got shape {g.shape}")
    if kernel_size == 1:
        return g.copy()
    kern = gaussian_kernel(kernel_size)
    lead = g.shape[:-2]
    flat = g.reshape(-1, 1, g.shape[-2], g.shape[-1])
    out = conv2d_batch(flat, kern[None, None], None, stride=1, padding=kernel_size // 2)
    return out.reshape(*lead, g.shape[-2], g.shape[-1])


def diverse_input_transform(x, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Random resize-and-pad used by DI-FGSM; output shape equals input shape.

    With probability 1 - prob the image is returned unchanged. Otherwise it
    is shrunk by a factor drawn from [0.9, 1.0] (nearest neighbor) and pasted
    onto a zero canvas at a uniformly random offset. Draw order: gate, scale
    factor, row offset, column offset.
    """
    x = as_f64(x)
    if x.ndim != 3:
        raise ValueError(f"expected a single image [C, H, W], got shape {x.shape}")
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"prob must lie in [0, 1], got {prob}")
    if prob == 0.0 or rng.uniform() >= prob:
        return x.copy()
    _, h, w = x.shape
    factor = rng.uniform(0.9, 1.0)
    h2 = max(1, int(round(h * factor)))
    w2 = max(1, int(round(w * factor)))
    rows = np.minimum((np.arange(h2) * h // h2), h - 1)
    cols = np.minimum((np.arange(w2) * w // w2), w - 1)
    resized = x[:, rows][:, :, cols]
    top = int(rng.integers(0, h - h2 + 1))
    left = int(rng.integers(0, w - w2 + 1))
    out = np.zeros_like(x)
    out[:, top : top + h2, left : left + w2] = resized
    return out


def _project(x: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    """Clamp the perturbation into the eps-ball, then pixels into [0, 1]."""
    x = np.clip(x, x0 - eps, x0 + eps)
    return np.clip(x, 0.0, 1.0)


def _method_gradient(model, x, labels, cfg, state, step, phase, indices):
    """The gradient each method signs: raw, momentum, diverse-input, or smoothed.

    phase 0 is the main step (MI-FGSM commits its accumulator advance here);
    phase 1 is the FSA refinement at the intermediate point, which combines
    the fresh gradient with the already-advanced accumulator without storing
    a second advance.
    """
    method = cfg.method
    if method in _RAW_GRADIENT_METHODS:
        return input_gradient(model, x, labels)
    if method == "TIFGSM":
        return translation_smooth(input_gradient(model, x, labels), cfg.ti_kernel_size)
    if method == "DIFGSM":
        transformed = np.stack(
            [
                diverse_input_transform(x[i], cfg.di_prob, _stream(cfg.seed, int(indices[i]), step + 1, phase))
                for i in range(x.shape[0])
            ]
        )
        return input_gradient(model, transformed, labels)
    # MI-FGSM: accumulate per-image l1-normalized gradients.
    raw = input_gradient(model, x, labels)
    norm = np.abs(raw).sum(axis=(1, 2, 3), keepdims=True)
    contrib = raw / np.where(norm > 0.0, norm, 1.0)
    if state.g_acc is None:
        state.g_acc = np.zeros_like(raw)
    if phase == 0:
        state.g_acc = cfg.mi_decay * state.g_acc + contrib
        return state.g_acc
    return cfg.mi_decay * state.g_acc + contrib


def consistency_mask(step_a, step_b) -> np.ndarray:
    """1.0 where two signed steps agree exactly, else 0.0."""
    a = as_f64(step_a)
    b = as_f64(step_b)
    if a.shape != b.shape:
        raise ValueError(f"step shapes differ: {a.shape} vs {b.shape}")
    return (a == b).astype(np.float64)


def attack_batch(
    model: Classifier,
    pixels,
    labels,
    cfg: AttackConfig,
    *,
    image_indices=None,
    record_trace: bool = False,
) -> BatchAttackOutcome:
    """Run one attack configuration over a batch of images in lockstep.

    Images never interact: gradients, masks, projections, and random draws
    are all per image, so batching is purely a throughput device.
    """
    x0 = as_f64(pixels)
    if x0.ndim != 4:
        raise ValueError(f"expected a batch [B, C, H, W], got shape {x0.shape}")
    if x0.min() < 0.0 or x0.max() > 1.0:
        raise ValueError("attack inputs must lie in [0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    n = x0.shape[0]
    if image_indices is None:
        image_indices = np.arange(n)
    indices = np.asarray(image_indices, dtype=np.int64)

    clean_pred = forward(model, x0).argmax(axis=-1)

    x = x0.copy()
    if cfg.method == "PGD" and cfg.pgd_random_start:
        for i in range(n):
            noise = _stream(cfg.seed, int(indices[i]), 0, 0).uniform(-cfg.eps, cfg.eps, size=x0.shape[1:])
            x[i] = x[i] + noise
        x = _project(x, x0, cfg.eps)

    state = MomentumState()
    alpha = cfg.alpha
    mask_fractions = np.empty((cfg.steps, n)) if cfg.fsa else None
    trace = [] if record_trace else None

    for t in range(cfg.steps):
        grad = _method_gradient(model, x, labels, cfg, state, t, 0, indices)
        step_spatial = alpha * sign(grad)
        if cfg.fsa:
            step_freq = alpha * sign(frequency_pullback(grad, cfg.dct_mode))
            mask = consistency_mask(step_spatial, step_freq)
            mask_fractions[t] = mask.mean(axis=(1, 2, 3))
            x_mid = x + mask * step_spatial
            if mask.all():
                # The complement mask is identically zero; phase 2 would be a no-op.
                x = x_mid
            else:
                grad_mid = _method_gradient(model, x_mid, labels, cfg, state, t, 1, indices)
                x = x_mid + (1.0 - mask) * (alpha * sign(grad_mid))
        else:
            x = x + step_spatial
        x = _project(x, x0, cfg.eps)
        if record_trace:
            trace.append(x.copy())

    adv_pred = forward(model, x).argmax(axis=-1)
    success = adv_pred != labels
    linf = np.abs(x - x0).max(axis=(1, 2, 3)) if x.size else np.zeros(n)
    return BatchAttackOutcome(x, clean_pred, adv_pred, success, linf, mask_fractions, trace)


def run_attack(model: Classifier, image: LabeledImage, cfg: AttackConfig, *, image_index: int = 0) -> AttackResult:
    """Attack a single labeled image and report the outcome.

    A clean eps=0 run returns the image unchanged and succeeds only if the
    model already misclassifies it. image_index selects the RNG streams used
    for stochastic methods (the batched evaluator numbers images 0..N-1).
    """
    out = attack_batch(
        model, image.pixels[None], np.array([image.label]), cfg, image_indices=np.array([image_index])
    )
    fractions = [float(v) for v in out.mask_fractions[:, 0]] if out.mask_fractions is not None else []
    return AttackResult(
        adversarial=out.adversarial[0],
        clean_pred=int(out.clean_pred[0]),
        adv_pred=int(out.adv_pred[0]),
        success=bool(out.success[0]),
        linf=float(out.linf[0]),
        mask_ones_fraction_per_step=fractions,
    )


# ---------------------------------------------------------------------------
# Single-image step primitives. run_attack/attack_batch share their logic;
# they are exposed for tests and for building custom loops.
# ---------------------------------------------------------------------------


def _single(model, x, y, cfg, state, step, phase, image_index):
    x = as_f64(x)
    if x.ndim != 3:
        raise ValueError(f"expected a single image [C, H, W], got shape {x.shape}")
    state = state if state is not None else MomentumState()
    grad = _method_gradient(model, x[None], np.array([int(y)]), cfg, state, step, phase, np.array([image_index]))
    return grad[0]


def spatial_step(model, x, y, cfg: AttackConfig, state: MomentumState | None = None, *, step: int = 0, image_index: int = 0):
    """alpha * sign of the method's processed gradient at x.

    For MI-FGSM this advances the accumulator held in state, mirroring what
    one iteration of the full attack does.
    """
    return cfg.alpha * sign(_single(model, x, y, cfg, state, step, 0, image_index))


def frequency_step(model, x, y, cfg: AttackConfig, state: MomentumState | None = None, *, step: int = 0, image_index: int = 0):
    """alpha * sign of the same gradient mapped through the frequency pullback.

    Under DctMode.ORTHO the pullback is the identity, so this equals
    spatial_step exactly; under DctMode.SCALED the two can disagree.
    """
    grad = _single(model, x, y, cfg, state, step, 0, image_index)
    return cfg.alpha * sign(frequency_pullback(grad, cfg.dct_mode))


def fsa_step(model, x, y, cfg: AttackConfig, state: MomentumState | None = None, *, step: int = 0, image_index: int = 0):
    """One two-phase consistency update of a single image (no projection).

    Phase 1 moves the pixels whose spatial and frequency steps agree; phase 2
    re-evaluates the gradient at the intermediate point and moves the rest.
    The returned point differs from x by at most alpha per pixel.
    """
    x = as_f64(x)
    state = state if state is not None else MomentumState()
    grad = _single(model, x, y, cfg, state, step, 0, image_index)
    d = cfg.alpha * sign(grad)
    f = cfg.alpha * sign(frequency_pullback(grad, cfg.dct_mode))
    mask = consistency_mask(d, f)
    x_mid = x + mask * d
    if mask.all():
        return x_mid
    grad_mid = _single(model, x_mid, y, cfg, state, step, 1, image_index)
    return x_mid + (1.0 - mask) * (cfg.alpha * sign(grad_mid))
