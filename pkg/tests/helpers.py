"""Shared scene builders and checks that need the package."""

from __future__ import annotations

import numpy as np

from debskit.depth import DEFAULT_SL
from debskit.fusion import FusionEstimator, render, render_grad
from debskit.template import make_template
from oracles import rel_err

FD_STEP = 1e-4


def grad_check(seed: int, variant: str, preprocess: bool, normalize: bool = False,
               size: int = 16, n_templates: int = 1) -> tuple[float, float]:
    """Max relative error of the depth and parameter adjoints against central differences."""
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.05, 0.95, size=(size, size, 3))
    d = rng.uniform(0.1, 0.9, size=(size, size))
    templates = [make_template(img, k).image for k in (3, 5, 7)[:n_templates]]
    up = rng.normal(size=(size, size, 3))
    est = (FusionEstimator.learned(n_templates, 3, seed=seed) if variant == "learned"
           else FusionEstimator.identity())
    curve = DEFAULT_SL if preprocess else None

    def loss(dd, e=est):
        _, tape = render(img, templates, dd, e, preprocess=curve, normalize=normalize)
        return float(np.sum(up * tape.output))

    _, tape = render(img, templates, d, est, preprocess=curve, normalize=normalize)
    g_d, g_p = render_grad(tape, up)

    fd_d = np.empty_like(d)
    flat = d.ravel()
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += FD_STEP
        xm[i] -= FD_STEP
        fd_d.flat[i] = (loss(xp.reshape(d.shape)) - loss(xm.reshape(d.shape))) / (2 * FD_STEP)
    err_d = rel_err(g_d, fd_d, floor=1e-3 * max(np.max(np.abs(fd_d)), 1e-12))

    err_p = 0.0
    if est.n_params:
        fd_p = np.empty(est.n_params)
        for i in range(est.n_params):
            pp, pm = est.params.copy(), est.params.copy()
            pp[i] += FD_STEP
            pm[i] -= FD_STEP
            fd_p[i] = (loss(d, est.with_params(pp)) - loss(d, est.with_params(pm))) / (2 * FD_STEP)
        err_p = rel_err(g_p, fd_p, floor=1e-3 * max(np.max(np.abs(fd_p)), 1e-12))
    return err_d, err_p
