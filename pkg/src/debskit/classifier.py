"""Differentiable classifiers the attacks run against.

``ToyClassifier`` is a 16x16 area-downsample followed by one linear layer
and softmax. ``OracleClassifier`` forwards every query to a cooperating
process through files in an exchange directory, which is how a real
pretrained network is plugged in.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.special import log_softmax, softmax

from .errors import FormatError, OracleTimeout, ValidationError
from .raster import load_grad3, save_image

GRID = 16


class Classifier:
    """Interface: logits and the cross-entropy gradient w.r.t. the image."""

    n_classes: int

    def logits(self, img: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss_grad(self, img: np.ndarray, label: int) -> tuple[float, np.ndarray, np.ndarray]:
        """Return ``(cross_entropy, d_loss/d_img, logits)``."""
        raise NotImplementedError

    def predict(self, img: np.ndarray) -> int:
        return int(np.argmax(self.logits(img)))


@lru_cache(maxsize=32)
def area_matrix(n_in: int, n_out: int = GRID) -> np.ndarray:
    """Row i averages the input interval covered by output cell i."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.arange(n_in)
    m = np.clip(np.minimum(edges[1:, None], lo + 1) - np.maximum(edges[:-1, None], lo), 0, None)
    m = m / m.sum(axis=1, keepdims=True)
    m.flags.writeable = False
    return m


def cross_entropy(logits: np.ndarray, label: int) -> float:
    return float(-log_softmax(logits)[label])


@dataclass(frozen=True)
class ToyClassifier(Classifier):
    weights: np.ndarray  # (n_classes, GRID * GRID * 3)
    bias: np.ndarray  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.bias.size

    def features(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        rh, rw = area_matrix(img.shape[0]), area_matrix(img.shape[1])
        rows = np.tensordot(rh, img, axes=(1, 0))  # (GRID, W, 3)
        return np.tensordot(rows, rw, axes=(1, 1)).transpose(0, 2, 1).ravel()

    def logits(self, img):
        return self.weights @ self.features(img) + self.bias

    def loss_grad(self, img, label):
        img = np.asarray(img, dtype=np.float64)
        z = self.logits(img)
        p = softmax(z)
        p[label] -= 1.0
        g_feat = (self.weights.T @ p).reshape(GRID, GRID, 3)
        rh, rw = area_matrix(img.shape[0]), area_matrix(img.shape[1])
        cols = np.tensordot(g_feat, rw, axes=(1, 0))  # (GRID, 3, W)
        g_img = np.tensordot(rh, cols, axes=(0, 0)).transpose(0, 2, 1)
        return cross_entropy(z, label), g_img, z


def fit_softmax(features: np.ndarray, labels: np.ndarray, n_classes: int,
                l2: float = 1e-3, max_iter: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial logistic regression by L-BFGS; deterministic."""
    n, dim = features.shape
    onehot = np.eye(n_classes)[labels]

    def objective(theta):
        w = theta[:n_classes * dim].reshape(n_classes, dim)
        b = theta[n_classes * dim:]
        z = features @ w.T + b
        lp = log_softmax(z, axis=1)
        loss = -np.sum(onehot * lp) / n + 0.5 * l2 * np.sum(w * w)
        g = (np.exp(lp) - onehot) / n
        gw = g.T @ features + l2 * w
        return loss, np.concatenate([gw.ravel(), g.sum(axis=0)])

    theta0 = np.zeros(n_classes * dim + n_classes)
    res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter})
    w = res.x[:n_classes * dim].reshape(n_classes, dim)
    return w, res.x[n_classes * dim:]


def toy_classifier_build(seed: int = 0, n_train: int = 600, l2: float = 1e-3, **scene_kw) -> ToyClassifier:
    """Train the toy classifier on freshly generated all-in-focus scenes."""
    from .scenes import make_suite

    suite = make_suite(n_train, seed=seed, **scene_kw)
    probe = ToyClassifier(np.zeros((1, GRID * GRID * 3)), np.zeros(1))
    feats = np.stack([probe.features(s.image) for s in suite])
    labels = np.array([s.label for s in suite])
    n_classes = int(labels.max()) + 1
    w, b = fit_softmax(feats, labels, n_classes, l2=l2)
    return ToyClassifier(w, b)


class OracleClassifier(Classifier):
    """File-exchange bridge to an external scorer.

    Per query: ``query.png`` and ``label.txt`` are written; the cooperating
    process answers with ``logits.txt`` (whitespace-separated floats) and
    ``grad.dbsk`` (DBK3 container, H x W x 3 gradient of the cross-entropy
    loss w.r.t. the image). Queries are strictly sequential.
    """

    def __init__(self, directory, timeout: float = 30.0, poll: float = 0.01,
                 n_classes: int | None = None):
        self.dir = Path(directory)
        self.timeout = timeout
        self.poll = poll
        self._n_classes = n_classes
        self._last: tuple[bytes, int, np.ndarray, np.ndarray] | None = None

    @property
    def n_classes(self) -> int:
        return self._n_classes or 0

    def _query(self, img: np.ndarray, label: int):
        img = np.asarray(img, dtype=np.float64)
        key = img.tobytes()
        if self._last is not None and self._last[0] == key and self._last[1] == label:
            return self._last[2], self._last[3]
        self.dir.mkdir(parents=True, exist_ok=True)
        grad_path = self.dir / "grad.dbsk"
        logits_path = self.dir / "logits.txt"
        for stale in (grad_path, logits_path):
            stale.unlink(missing_ok=True)
        (self.dir / "label.txt").write_text(f"{int(label)}\n")
        # the responder triggers on query.png, so it appears last and atomically
        tmp = self.dir / "query.tmp.png"
        save_image(img, tmp)
        tmp.replace(self.dir / "query.png")

        deadline = time.monotonic() + self.timeout
        while not (grad_path.exists() and logits_path.exists()):
            if time.monotonic() > deadline:
                raise OracleTimeout(f"no answer in {self.dir} after {self.timeout} s")
            time.sleep(self.poll)
        try:
            logits = np.array([float(t) for t in logits_path.read_text().split()])
        except ValueError as exc:
            raise FormatError(f"{logits_path}: malformed logits") from exc
        if logits.size == 0 or not np.all(np.isfinite(logits)):
            raise FormatError(f"{logits_path}: empty or non-finite logits")
        grad = load_grad3(grad_path)
        if grad.shape != img.shape:
            raise FormatError(f"{grad_path}: gradient shape {grad.shape} != image shape {img.shape}")
        if not np.all(np.isfinite(grad)):
            raise FormatError(f"{grad_path}: gradient contains NaN or inf")
        if self._n_classes is None:
            self._n_classes = logits.size
        if not 0 <= label < logits.size:
            raise ValidationError(f"label {label} outside the oracle's {logits.size} classes")
        self._last = (key, label, logits, grad)
        return logits, grad

    def logits(self, img):
        return self._query(img, 0)[0]

    def loss_grad(self, img, label):
        logits, grad = self._query(img, label)
        return cross_entropy(logits, label), grad, logits
