"""Fusion-weight estimation, the blending renderer and its adjoint.

The renderer computes

    out = W_A * (I * D) + sum_i W_B[i] * (T_i * (1 - D))

where ``T_i`` are blur templates and the weights come from the depth map
alone. ``render`` records everything ``render_grad`` needs on a tape; the
templates are constants of the backward pass.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .depth import SLCurve, preprocess_depth_grad
from .errors import FormatError, ValidationError
from .raster import as_depth, as_image, check_pair, clamp01
from .template import BlurTemplate, make_templates

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"DBSW"
VARIANT_IDS = {"identity": 0, "learned": 1}
HIDDEN = 8


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class FusionEstimator:
    """Maps a depth map to N+1 nonnegative fusion weights.

    The learned variant is a 2-layer conv net: ``r x r`` conv to ``hidden``
    tanh units, then a 1x1 conv to ``n_out`` softplus outputs. Output
    channels are ``W_B[0..N-1]`` followed by ``W_A``.
    """

    variant: str = "identity"
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    receptive_field: int = 5
    hidden: int = HIDDEN
    n_out: int = 0

    def __post_init__(self):
        if self.variant not in VARIANT_IDS:
            raise ValidationError(f"unknown estimator variant {self.variant!r}")
        params = np.array(self.params, dtype=np.float64).ravel()
        params.flags.writeable = False
        object.__setattr__(self, "params", params)
        if self.variant == "identity":
            if params.size:
                raise ValidationError("identity estimator takes no parameters")
            return
        r = self.receptive_field
        if r < 1 or r % 2 == 0:
            raise ValidationError(f"receptive field must be odd, got {r}")
        if params.size != self.n_params_for(r, self.hidden, self.n_out):
            raise ValidationError(
                f"parameter vector length mismatch: got {params.size}, "
                f"architecture needs {self.n_params_for(r, self.hidden, self.n_out)}"
            )

    @staticmethod
    def n_params_for(r: int, hidden: int, n_out: int) -> int:
        return r * r * hidden + hidden + hidden * n_out + n_out

    @property
    def n_params(self) -> int:
        return self.params.size

    @classmethod
    def identity(cls) -> "FusionEstimator":
        return cls()

    @classmethod
    def learned(cls, n_templates: int, receptive_field: int = 5, hidden: int = HIDDEN,
                seed: int = 0) -> "FusionEstimator":
        if n_templates < 1:
            raise ValidationError("need at least one template")
        rng = np.random.default_rng(seed)
        r, n_out = receptive_field, n_templates + 1
        w1 = rng.normal(0.0, 1.0 / r, size=(r * r, hidden))
        b1 = rng.normal(0.0, 0.1, size=hidden)
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, n_out))
        b2 = np.zeros(n_out)
        params = np.concatenate([w1.ravel(), b1, w2.ravel(), b2])
        return cls("learned", params, r, hidden, n_out)

    def with_params(self, params) -> "FusionEstimator":
        return FusionEstimator(self.variant, params, self.receptive_field, self.hidden, self.n_out)

    def unpack(self):
        r, h, n = self.receptive_field, self.hidden, self.n_out
        p = self.params
        i = 0
        w1 = p[i:i + r * r * h].reshape(r * r, h); i += r * r * h
        b1 = p[i:i + h]; i += h
        w2 = p[i:i + h * n].reshape(h, n); i += h * n
        b2 = p[i:i + n]
        return w1, b1, w2, b2


@dataclass(frozen=True)
class WeightMaps:
    wb: list
    wa: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack(list(self.wb) + [self.wa], axis=2)


def _patches(d: np.ndarray, r: int) -> np.ndarray:
    padded = np.pad(d, r // 2, mode="edge")
    win = sliding_window_view(padded, (r, r))
    return win.reshape(d.shape[0], d.shape[1], r * r)


def _patches_adjoint(g: np.ndarray, r: int) -> np.ndarray:
    h, w = g.shape[:2]
    p = r // 2
    acc = np.zeros((h + 2 * p, w + 2 * p))
    for idx in range(r * r):
        i, j = divmod(idx, r)
        acc[i:i + h, j:j + w] += g[:, :, idx]
    if p:
        # fold replicated borders back onto the edge pixels
        acc[p] += acc[:p].sum(axis=0)
        acc[p + h - 1] += acc[p + h:].sum(axis=0)
        acc = acc[p:p + h]
        acc[:, p] += acc[:, :p].sum(axis=1)
        acc[:, p + w - 1] += acc[:, p + w:].sum(axis=1)
        acc = acc[:, p:p + w]
    return acc


def _phi_forward(est: FusionEstimator, d: np.ndarray, n: int):
    h, w = d.shape
    if est.variant == "identity":
        return np.ones((h, w, n + 1)), None
    if est.n_out != n + 1:
        raise ValidationError(
            f"parameter vector length mismatch: estimator emits {est.n_out} maps, "
            f"{n + 1} required for {n} templates"
        )
    w1, b1, w2, b2 = est.unpack()
    patches = _patches(d, est.receptive_field)
    hidden = np.tanh(patches @ w1 + b1)
    z = hidden @ w2 + b2
    return _softplus(z), (patches, hidden, z)


def _phi_backward(est: FusionEstimator, cache, g_maps: np.ndarray):
    if est.variant == "identity":
        return np.zeros(g_maps.shape[:2]), np.zeros(0)
    patches, hidden, z = cache
    w1, _, w2, _ = est.unpack()
    r = est.receptive_field
    gz = g_maps * _sigmoid(z)
    g_w2 = np.einsum("ijh,ijn->hn", hidden, gz)
    g_b2 = gz.sum(axis=(0, 1))
    g_hidden = gz @ w2.T
    g_pre = g_hidden * (1.0 - hidden * hidden)
    g_w1 = np.einsum("ijp,ijh->ph", patches, g_pre)
    g_b1 = g_pre.sum(axis=(0, 1))
    g_patches = g_pre @ w1.T
    g_d = _patches_adjoint(g_patches, r)
    return g_d, np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


def estimate_weights(est: FusionEstimator, d: np.ndarray, n: int) -> WeightMaps:
    if n < 1:
        raise ValidationError("need at least one template")
    maps, _ = _phi_forward(est, as_depth(d), n)
    return WeightMaps(wb=[maps[:, :, i] for i in range(n)], wa=maps[:, :, n])


@dataclass
class RenderTape:
    """Buffers recorded by :func:`render`; consumed by one :func:`render_grad`."""

    image: np.ndarray
    templates: np.ndarray  # (N, H, W, 3)
    depth_input: np.ndarray  # map passed to render
    depth: np.ndarray  # map actually blended (preprocessed if requested)
    estimator: FusionEstimator
    raw_weights: np.ndarray  # (H, W, N+1) before normalisation
    weights: np.ndarray
    phi_cache: object
    preprocess: SLCurve | None
    normalize: bool
    output: np.ndarray  # unclamped
    consumed: bool = False

    def replay(self) -> np.ndarray:
        return _blend(self.image, self.templates, self.depth, self.weights)


def _blend(img, tstack, d, weights):
    n = tstack.shape[0]
    d3 = d[:, :, None]
    out = weights[:, :, n, None] * (img * d3)
    for i in range(n):
        out = out + weights[:, :, i, None] * (tstack[i] * (1.0 - d3))
    return out


def _template_stack(templates, shape) -> np.ndarray:
    arrays = [t.image if isinstance(t, BlurTemplate) else np.asarray(t, dtype=np.float64)
              for t in templates]
    if not arrays:
        raise ValidationError("render needs at least one template (N >= 1)")
    for a in arrays:
        if a.shape != shape:
            raise ValidationError(f"template shape {a.shape} != image shape {shape}")
    return np.stack(arrays, axis=0)


def render(img, templates, d, est: FusionEstimator | None = None, *,
           preprocess: SLCurve | None = None, normalize: bool = False):
    """Blend ``img`` with its blur templates under depth ``d``.

    With ``preprocess`` set, ``d`` is the raw map and the squaring + SL
    remap happens inside the differentiated graph. Returns the clamped
    image and the tape.
    """
    est = est or FusionEstimator.identity()
    img = as_image(img)
    d_in = as_depth(d)
    check_pair(img, d_in)
    tstack = _template_stack(templates, img.shape)
    n = tstack.shape[0]
    d_used = preprocess(d_in * d_in) if preprocess is not None else d_in
    raw_w, cache = _phi_forward(est, d_used, n)
    weights = raw_w / raw_w.sum(axis=2, keepdims=True) if normalize else raw_w
    out = _blend(img, tstack, d_used, weights)
    tape = RenderTape(img, tstack, d_in, d_used, est, raw_w, weights, cache,
                      preprocess, normalize, out)
    return clamp01(out), tape


def render_grad(tape: RenderTape, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of the unclamped render output w.r.t. the input map and φ's parameters."""
    if tape.consumed:
        raise ValidationError("render tape already consumed")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != tape.output.shape:
        raise ValidationError(f"upstream shape {g.shape} != tape shape {tape.output.shape}")
    tape.consumed = True
    img, ts, d, w = tape.image, tape.templates, tape.depth, tape.weights
    n = ts.shape[0]
    d3 = d[:, :, None]

    g_w = np.empty(w.shape)
    g_w[:, :, n] = np.sum(g * img * d3, axis=2)
    mix = w[:, :, n, None] * img
    for i in range(n):
        g_w[:, :, i] = np.sum(g * ts[i] * (1.0 - d3), axis=2)
        mix = mix - w[:, :, i, None] * ts[i]
    g_d = np.sum(g * mix, axis=2)

    if tape.normalize:
        s = tape.raw_weights.sum(axis=2, keepdims=True)
        g_w = (g_w - np.sum(g_w * w, axis=2, keepdims=True)) / s
    g_phi_d, g_params = _phi_backward(tape.estimator, tape.phi_cache, g_w)
    g_d = g_d + g_phi_d
    if tape.preprocess is not None:
        g_d = preprocess_depth_grad(tape.depth_input, g_d, tape.preprocess)
    return g_d, g_params


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    epochs: int = 200
    seed: int = 0
    ks: tuple = (37,)
    gamma: float = 2.2
    preprocess: SLCurve | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")


def _prepare(dataset, cfg: TrainConfig):
    prepared = []
    for item in dataset:
        img, d, target = item[:3]
        img = as_image(img)
        templates = item[3] if len(item) > 3 else make_templates(img, cfg.ks, cfg.gamma)
        prepared.append((img, as_depth(d), as_image(target, "target"), templates))
    return prepared


def mean_l1(est: FusionEstimator, dataset, cfg: TrainConfig) -> float:
    """Mean absolute error of the emitted render against each target."""
    losses = []
    for img, d, target, templates in _prepare(dataset, cfg):
        out, _ = render(img, templates, d, est, preprocess=cfg.preprocess)
        losses.append(np.mean(np.abs(out - target)))
    return float(np.mean(losses))


def train_fusion(est: FusionEstimator, dataset, cfg: TrainConfig,
                 history: list | None = None) -> FusionEstimator:
    """Fit φ with per-sample Adam steps on the L1 render loss.

    Dataset items are ``(image, depth, target)`` or
    ``(image, depth, target, templates)``. Per-epoch mean L1 is appended to
    ``history`` when given.
    """
    if est.variant == "identity":
        raise ValidationError("identity estimator has no parameters to train")
    data = _prepare(dataset, cfg)
    if not data:
        raise ValidationError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    params = est.params.copy()
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in rng.permutation(len(data)):
            img, d, target, templates = data[idx]
            cur = est.with_params(params)
            _, tape = render(img, templates, d, cur, preprocess=cfg.preprocess)
            diff = tape.output - target
            losses.append(np.mean(np.abs(diff)))
            _, grad = render_grad(tape, np.sign(diff) / diff.size)
            step += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
            m_hat = m / (1 - cfg.beta1 ** step)
            v_hat = v / (1 - cfg.beta2 ** step)
            params = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        epoch_loss = float(np.mean(losses))
        log.debug("epoch %d mean L1 %.6f", epoch, epoch_loss)
        if history is not None:
            history.append(epoch_loss)
    return est.with_params(params)


# --------------------------------------------------------------- file I/O


def save_estimator(est: FusionEstimator, path) -> None:
    header = WEIGHTS_MAGIC + struct.pack("<II", VARIANT_IDS[est.variant], est.n_params)
    Path(path).write_bytes(header + est.params.astype("<f4").tobytes())


def _infer_architecture(count: int, hidden: int = HIDDEN):
    matches = []
    for r in range(1, 32, 2):
        rest = count - (r * r * hidden + hidden)
        if rest > 0 and rest % (hidden + 1) == 0 and 2 <= rest // (hidden + 1) <= 17:
            matches.append((r, rest // (hidden + 1)))
    if len(matches) != 1:
        raise FormatError(f"cannot infer estimator architecture from {count} parameters")
    return matches[0]


def load_estimator(path) -> FusionEstimator:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such estimator file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: header mismatch (expected DBSW)")
    variant_id, count = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * count:
        raise FormatError(f"{path}: parameter count {count} does not match payload")
    params = np.frombuffer(raw[12:], dtype="<f4").astype(np.float64)
    if variant_id == 0:
        if count:
            raise FormatError(f"{path}: identity estimator with {count} parameters")
        return FusionEstimator.identity()
    if variant_id != 1:
        raise FormatError(f"{path}: unknown variant id {variant_id}")
    r, n_out = _infer_architecture(count)
    return FusionEstimator("learned", params, r, HIDDEN, n_out)
