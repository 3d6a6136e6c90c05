"""Projected-gradient attacks on the depth map that feeds the bokeh renderer.

Three variants share one loop and differ only in how the perturbation
``delta`` is turned into the change applied to the depth map:

* ``gda``     applied = delta
* ``dp-gda``  applied = delta * (1 - D)      (no change where D == 1)
* ``sm-gda``  applied = smooth(delta, l)     (gradient smoothed the same way)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .fusion import FusionEstimator, render, render_grad
from .raster import as_depth

VARIANTS = ("gda", "dp-gda", "sm-gda")
DEFAULT_EPS = {"gda": 0.0005, "dp-gda": 0.0005, "sm-gda": 0.04}


@dataclass(frozen=True)
class AttackConfig:
    variant: str = "gda"
    epsilon: float | None = None
    iterations: int = 50
    step_size: float | None = None
    smooth_kernel: int = 3
    smooth_mode: str = "box"
    target: int | None = None
    early_stop: bool = False
    dry_run: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown attack variant {self.variant!r}")
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", DEFAULT_EPS[self.variant])
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon / self.iterations * 2.5)
        if not self.step_size > 0:
            raise ValidationError("step size must be > 0")
        if self.smooth_kernel < 1 or self.smooth_kernel % 2 == 0:
            raise ValidationError(f"smoothing kernel must be odd, got {self.smooth_kernel}")
        if self.smooth_mode not in ("box", "gaussian"):
            raise ValidationError(f"unknown smoothing mode {self.smooth_mode!r}")


@dataclass
class AttackReport:
    variant: str
    eps: float
    label: int
    loss_trace: list = field(default_factory=list)
    init_class: int = -1
    final_class: int = -1
    delta: np.ndarray | None = None
    applied: np.ndarray | None = None
    adv_depth: np.ndarray | None = None
    adv_image: np.ndarray | None = None

    @property
    def iters(self) -> int:
        return len(self.loss_trace)

    @property
    def success(self) -> bool:
        return self.final_class != self.label

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "eps": self.eps,
            "iters": self.iters,
            "loss_trace": [float(x) for x in self.loss_trace],
            "init_class": int(self.init_class),
            "final_class": int(self.final_class),
            "success": bool(self.success),
        }


def smooth(delta: np.ndarray, l: int, mode: str = "box") -> np.ndarray:
    """l x l neighbourhood average with replicate borders; ``l = 1`` is the identity."""
    if l < 1 or l % 2 == 0:
        raise ValidationError(f"smoothing kernel must be odd, got {l}")
    x = np.asarray(delta, dtype=np.float64)
    if l == 1:
        return x.copy()
    if mode == "box":
        return ndimage.uniform_filter(x, size=l, mode="nearest")
    sigma = l / 4
    return ndimage.gaussian_filter(x, sigma=sigma, mode="nearest", truncate=(l // 2) / sigma)


def pgd_step(d: np.ndarray, delta: np.ndarray, grad: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Sign ascent step, projected onto the epsilon box and onto d + delta in [0, 1]."""
    new = np.clip(delta + cfg.step_size * np.sign(grad), -cfg.epsilon, cfg.epsilon)
    return np.clip(new, -d, 1.0 - d)


def _applied(variant: str, d, delta, cfg: AttackConfig):
    if variant == "gda":
        return delta
    if variant == "dp-gda":
        return delta * (1.0 - d)
    a = smooth(delta, cfg.smooth_kernel, cfg.smooth_mode)
    # averaging cannot leave the box; the clip only absorbs rounding
    return np.clip(a, -cfg.epsilon, cfg.epsilon)


def _pull_back(variant: str, d, grad, cfg: AttackConfig):
    if variant == "gda":
        return grad
    if variant == "dp-gda":
        return grad * (1.0 - d)
    return smooth(grad, cfg.smooth_kernel, cfg.smooth_mode)


def run_attack(img, templates, d, est: FusionEstimator | None, clf, cfg: AttackConfig,
               label: int | None = None, *, preprocess=None, normalize: bool = False,
               monitor: Callable | None = None) -> AttackReport:
    """Untargeted attack maximising the classifier's loss on ``label``.

    ``d`` is the map the renderer blends with; with ``preprocess`` set it
    is the raw map and the remap is part of the differentiated graph.
    ``monitor(i, attacked_depth, applied)`` is called for every iterate.
    """
    label = cfg.target if label is None else label
    if label is None:
        raise ValidationError("attack needs a true label (cfg.target or label=)")
    est = est or FusionEstimator.identity()
    d = as_depth(d)
    variant = cfg.variant
    delta = np.zeros_like(d)
    report = AttackReport(variant=variant, eps=float(cfg.epsilon), label=int(label))

    def forward(delta):
        a = _applied(variant, d, delta, cfg)
        d_att = np.clip(d + a, 0.0, 1.0)
        out, tape = render(img, templates, d_att, est, preprocess=preprocess, normalize=normalize)
        return a, d_att, out, tape

    steps = 0 if cfg.dry_run else cfg.iterations
    for i in range(steps):
        a, d_att, out, tape = forward(delta)
        if monitor is not None:
            monitor(i, d_att, a)
        loss, g_img, logits = clf.loss_grad(out, label)
        report.loss_trace.append(loss)
        if i == 0:
            report.init_class = int(np.argmax(logits))
        if cfg.early_stop and int(np.argmax(logits)) != label:
            break
        inside = (tape.output >= 0.0) & (tape.output <= 1.0)
        g_d, _ = render_grad(tape, g_img * inside)
        delta = pgd_step(d, delta, _pull_back(variant, d, g_d, cfg), cfg)

    a, d_att, out, _ = forward(delta)
    if monitor is not None:
        monitor(len(report.loss_trace), d_att, a)
    report.final_class = clf.predict(out)
    if not report.loss_trace:
        report.init_class = report.final_class
    report.delta, report.applied, report.adv_depth, report.adv_image = delta, a, d_att, out
    return report


def _run_variant(variant):
    def attack(img, templates, d, est, clf, cfg: AttackConfig, label=None, **kw):
        if cfg.variant != variant:
            raise ValidationError(f"config variant {cfg.variant!r} passed to the {variant} attack")
        return run_attack(img, templates, d, est, clf, cfg, label, **kw)
    attack.__name__ = "attack_" + variant.replace("-", "")
    attack.__doc__ = f"Run the {variant} attack; see :func:`run_attack`."
    return attack


attack_gda = _run_variant("gda")
attack_dpgda = _run_variant("dp-gda")
attack_smgda = _run_variant("sm-gda")


def total_variation(x: np.ndarray) -> float:
    """Anisotropic total variation of a 2-D map."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.abs(np.diff(x, axis=0)).sum() + np.abs(np.diff(x, axis=1)).sum())
