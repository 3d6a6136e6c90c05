from __future__ import annotations

import threading
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import log_softmax, softmax

from debskit.classifier import (GRID, OracleClassifier, ToyClassifier, area_matrix, cross_entropy,
                                toy_classifier_build)
from debskit.errors import FormatError, OracleTimeout
from debskit.raster import load_image, save_grad3
from debskit.scenes import SceneConfig, make_scene, make_suite
from oracles import central_diff, rel_err


def test_area_matrix_rows():
    m = area_matrix(40)
    assert m.shape == (GRID, 40)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    np.testing.assert_allclose(area_matrix(32)[0, :2], 0.5)


def test_toy_adjoint_matches_fd(rng):
    w = rng.normal(size=(3, GRID * GRID * 3))
    clf = ToyClassifier(w, rng.normal(size=3))
    img = rng.uniform(size=(16, 16, 3))
    loss, g, z = clf.loss_grad(img, 1)
    assert loss == pytest.approx(cross_entropy(z, 1))
    idx = [(0, 0, 0), (5, 7, 1), (15, 15, 2), (9, 3, 0)]
    fd = [central_diff(lambda x: clf.loss_grad(x, 1)[0], img, i) for i in idx]
    assert rel_err([g[i] for i in idx], fd) <= 1e-3


def test_toy_features_are_area_means(rng):
    clf = ToyClassifier(np.zeros((1, GRID * GRID * 3)), np.zeros(1))
    img = rng.uniform(size=(64, 64, 3))
    f = clf.features(img).reshape(GRID, GRID, 3)
    np.testing.assert_allclose(f[2, 3], img[8:12, 12:16].mean(axis=(0, 1)))


def test_toy_build_deterministic_and_accurate():
    a = toy_classifier_build(seed=3)
    b = toy_classifier_build(seed=3)
    assert a.weights.tobytes() == b.weights.tobytes()
    held = make_suite(60, seed=4242)
    acc = np.mean([a.predict(s.image) == s.label for s in held])
    assert acc >= 0.9


def test_scene_suite_properties():
    suite = make_suite(7, seed=5)
    assert [s.label for s in suite] == [0, 1, 2, 0, 1, 2, 0]
    for s in suite:
        assert s.image.shape == (64, 64, 3) and s.depth.shape == (64, 64)
        assert (s.depth == 1.0).any() and s.depth.min() >= 0
    again = make_suite(7, seed=5)
    assert all(np.array_equal(x.image, y.image) for x, y in zip(suite, again))
    extra = make_scene(np.random.default_rng(0), 4, SceneConfig(n_classes=5))
    assert extra.label == 4


class Responder(threading.Thread):
    """Plays the external scorer: a fixed linear model over the decoded query."""

    def __init__(self, folder: Path, weights, mode="ok", answers=1):
        super().__init__(daemon=True)
        self.folder, self.weights, self.mode, self.answers = folder, weights, mode, answers
        self.labels = []

    def run(self):
        q = self.folder / "query.png"
        for _ in range(self.answers):
            while not q.exists():
                time.sleep(0.002)
            img = load_image(q)
            label = int((self.folder / "label.txt").read_text())
            q.unlink()
            self.labels.append(label)
            z = self.weights @ img.mean(axis=(0, 1))
            p = softmax(z)
            p[label] -= 1.0
            grad = np.broadcast_to(self.weights.T @ p / (img.shape[0] * img.shape[1]), img.shape)
            if self.mode == "nan":
                grad = grad.copy()
                grad[0, 0, 0] = np.nan
            if self.mode == "shape":
                grad = grad[:2]
            save_grad3(grad, self.folder / "grad.dbsk")
            text = "1.0 oops" if self.mode == "garbled" else " ".join(f"{v:.17g}" for v in z)
            (self.folder / "logits.txt").write_text(text)


def test_oracle_round_trip(tmp_path, rng):
    w = rng.normal(size=(4, 3))
    resp = Responder(tmp_path, w, answers=2)
    resp.start()
    clf = OracleClassifier(tmp_path, timeout=10)
    img = rng.uniform(size=(8, 8, 3))
    loss, grad, z = clf.loss_grad(img, 2)
    quant = np.rint(img * 255) / 255
    np.testing.assert_allclose(z, w @ quant.mean(axis=(0, 1)), atol=1e-12)
    assert loss == pytest.approx(-log_softmax(z)[2])
    assert grad.shape == img.shape and clf.n_classes == 4
    # cached: no new query for the same image and label
    assert clf.loss_grad(img, 2)[0] == loss
    clf.loss_grad(img, 1)
    resp.join(5)
    assert resp.labels == [2, 1]


def test_oracle_timeout(tmp_path, rng):
    clf = OracleClassifier(tmp_path, timeout=0.2)
    t0 = time.monotonic()
    with pytest.raises(OracleTimeout):
        clf.loss_grad(rng.uniform(size=(4, 4, 3)), 0)
    assert time.monotonic() - t0 < 5


@pytest.mark.parametrize("mode", ["nan", "shape", "garbled"])
def test_oracle_bad_answers(tmp_path, rng, mode):
    Responder(tmp_path, rng.normal(size=(3, 3)), mode=mode).start()
    with pytest.raises(FormatError):
        OracleClassifier(tmp_path, timeout=10).loss_grad(rng.uniform(size=(6, 6, 3)), 0)


def test_attack_through_oracle(tmp_path, rng):
    from debskit.attack import AttackConfig, run_attack
    from debskit.template import make_template
    w = rng.normal(size=(3, 3))
    Responder(tmp_path, w, answers=4).start()
    img = rng.uniform(size=(10, 10, 3))
    d = rng.uniform(size=(10, 10))
    rep = run_attack(img, [make_template(img, 3)], d, None, OracleClassifier(tmp_path, timeout=10),
                     AttackConfig("gda", epsilon=0.02, iterations=3), 0)
    assert rep.iters == 3
