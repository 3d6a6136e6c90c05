"""``debskit`` command-line entry point.

Exit codes: 0 success, 1 invalid arguments or values, 2 unreadable,
unwritable or malformed files (and oracle timeouts).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .attack import VARIANTS, AttackConfig, run_attack
from .classifier import OracleClassifier, toy_classifier_build
from .depth import SLCurve, preprocess_depth, refocus_map
from .errors import DebskitError, FormatError, ValidationError
from .fusion import (FusionEstimator, TrainConfig, load_estimator, mean_l1, render,
                     save_estimator, train_fusion)
from .metrics import compare
from .raster import load_depth, load_image, save_depth, save_gray, save_image
from .refine import refined_template
from .template import _check_odd, make_template

ORDERS = ("refocus-first", "preprocess-first")


@dataclass(frozen=True)
class PipelineConfig:
    ks: tuple = (37,)
    gamma: float = 2.2
    sl_center: float = 0.5
    sl_slope: float = 15.0
    threshold: float = 0.6
    refine: bool = True
    preprocess: bool = True
    estimator: str = "identity"
    m: float | None = None
    order: str = "refocus-first"
    seed: int = 0

    def __post_init__(self):
        ks = tuple(int(k) for k in np.atleast_1d(self.ks))
        if not ks:
            raise ValidationError("--k: at least one kernel size is required")
        for k in ks:
            _check_odd(k, "--k")
        object.__setattr__(self, "ks", ks)
        if not self.gamma > 1:
            raise ValidationError(f"--gamma must be > 1, got {self.gamma}")
        if not self.sl_slope > 0:
            raise ValidationError(f"--sl-slope must be > 0, got {self.sl_slope}")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError(f"--threshold must lie in (0, 1), got {self.threshold}")
        if self.m is not None and not 0.0 <= self.m <= 1.0:
            raise ValidationError(f"--m must lie in [0, 1], got {self.m}")
        if self.order not in ORDERS:
            raise ValidationError(f"--order must be one of {', '.join(ORDERS)}")

    @property
    def curve(self) -> SLCurve:
        return SLCurve(self.sl_center, self.sl_slope)

    def load_estimator(self) -> FusionEstimator:
        if self.estimator == "identity":
            return FusionEstimator.identity()
        return load_estimator(self.estimator)


def blend_inputs(img, d_raw, cfg: PipelineConfig):
    """Depth map for the blend, the preprocessing left to the renderer, and the templates."""
    d = d_raw
    curve = cfg.curve if cfg.preprocess else None
    if cfg.m is not None:
        if cfg.order == "preprocess-first" and curve is not None:
            d = refocus_map(preprocess_depth(d, curve), cfg.m)
            curve = None
        else:
            d = refocus_map(d, cfg.m)
    if cfg.refine:
        templates = [refined_template(img, d, k, cfg.gamma, cfg.threshold) for k in cfg.ks]
    else:
        templates = [make_template(img, k, cfg.gamma) for k in cfg.ks]
    return d, curve, templates


def render_file(img, d_raw, cfg: PipelineConfig, est: FusionEstimator | None = None):
    est = est or cfg.load_estimator()
    d, curve, templates = blend_inputs(img, d_raw, cfg)
    out, _ = render(img, templates, d, est, preprocess=curve)
    return out


# ------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _add_pipeline(p):
    p.add_argument("--k", type=int, nargs="+", default=[37], help="disk kernel size(s), odd")
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--sl-center", type=float, default=0.5)
    p.add_argument("--sl-slope", type=float, default=15.0)
    p.add_argument("--threshold", type=float, default=0.6, help="focus-mask threshold")
    p.add_argument("--no-refine", action="store_true", help="plain templates, no erosion refinement")
    p.add_argument("--no-preprocess", action="store_true", help="blend with the raw depth map")
    p.add_argument("--m", type=float, default=None, help="refocus level: blend with |m - D|")
    p.add_argument("--order", choices=ORDERS, default="refocus-first",
                   help="whether refocusing happens before or after preprocessing")


def _pipeline(args, **extra) -> PipelineConfig:
    return PipelineConfig(
        ks=tuple(args.k), gamma=args.gamma, sl_center=args.sl_center,
        sl_slope=args.sl_slope, threshold=args.threshold, refine=not args.no_refine,
        preprocess=not args.no_preprocess, m=args.m, order=args.order, **extra,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="debskit", description="Depth-guided bokeh rendering and depth attacks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("template", help="blur template of an image")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=37)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--out", required=True)
    p.add_argument("--refined", action="store_true", help="erosion-refined template (needs --depth)")
    p.add_argument("--depth")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--erode-k", type=int, default=None)
    p.add_argument("--literal-sum", action="store_true",
                   help="add the two partial templates instead of selecting by the mask")
    p.add_argument("--dump-intermediates", metavar="DIR")

    p = sub.add_parser("depth-prep", help="square + SL remap of a depth map")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sl-center", type=float, default=0.5)
    p.add_argument("--sl-slope", type=float, default=15.0)

    p = sub.add_parser("refocus", help="|m - D| focus shift")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="bokeh render of an image")
    p.add_argument("--input", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--estimator", default="identity", help="DBSW file or 'identity'")
    _add_pipeline(p)

    p = sub.add_parser("train", help="fit a learned fusion estimator")
    p.add_argument("--pairs", required=True, help="JSON array of {input, depth, target}")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--receptive-field", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_pipeline(p)

    p = sub.add_parser("attack", help="adversarial depth perturbation")
    p.add_argument("--variant", choices=VARIANTS, default="gda")
    p.add_argument("--input", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--smooth-kernel", type=int, default=3)
    p.add_argument("--smooth-mode", choices=("box", "gaussian"), default="box")
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--attack-raw", action="store_true",
                   help="perturb the raw map, differentiating through preprocessing")
    p.add_argument("--classifier", default="toy", help="'toy' or 'oracle:<dir>'")
    p.add_argument("--oracle-timeout", type=float, default=30.0)
    p.add_argument("--label", type=int, default=None,
                   help="true class (default: the classifier's call on the input image)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimator", default="identity")
    p.add_argument("--report")
    p.add_argument("--out")
    p.add_argument("--out-depth")
    _add_pipeline(p)

    p = sub.add_parser("metrics", help="PSNR and SSIM of two images as JSON")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)

    p = sub.add_parser("batch", help="render every job of a JSON manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--summary", help="write the summary here instead of standard output")
    p.add_argument("--estimator", default="identity")
    _add_pipeline(p)

    p = sub.add_parser("demo", help="regenerate the toy figure suite")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=96)
    return parser


# ------------------------------------------------------------ commands


def cmd_template(args) -> None:
    img = load_image(args.input)
    if args.refined or args.dump_intermediates:
        if not args.depth:
            raise ValidationError("--depth is required with --refined")
        d = load_depth(args.depth, like=img)
        steps = {} if args.dump_intermediates else None
        t = refined_template(img, d, args.k, args.gamma, args.threshold, erode_k=args.erode_k,
                             literal_sum=args.literal_sum, intermediates=steps)
        if steps is not None:
            _dump_steps(steps, Path(args.dump_intermediates))
    else:
        t = make_template(img, args.k, args.gamma)
    save_image(t.image, args.out)


def _dump_steps(steps: dict, folder: Path) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    for name, arr in steps.items():
        path = folder / f"{name}.png"
        (save_gray if arr.ndim == 2 else save_image)(np.clip(arr, 0.0, 1.0), path)


def cmd_depth_prep(args) -> None:
    save_depth(preprocess_depth(load_depth(args.inp), SLCurve(args.sl_center, args.sl_slope)), args.out)


def cmd_refocus(args) -> None:
    save_depth(refocus_map(load_depth(args.inp), args.m), args.out)


def cmd_render(args) -> None:
    cfg = _pipeline(args, estimator=args.estimator)
    img = load_image(args.input)
    d = load_depth(args.depth, like=img)
    save_image(render_file(img, d, cfg), args.out)


def _read_json(path, what: str):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such {what} file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {what} is not valid JSON ({exc.msg})") from exc


def cmd_train(args) -> None:
    cfg = _pipeline(args)
    pairs = _read_json(args.pairs, "pairs manifest")
    if not isinstance(pairs, list) or not pairs:
        raise ValidationError(f"{args.pairs}: expected a non-empty JSON array")
    base = Path(args.pairs).parent
    dataset, curve = [], None
    for i, job in enumerate(pairs):
        missing = {"input", "depth", "target"} - set(job) if isinstance(job, dict) else {"input"}
        if missing:
            raise ValidationError(f"{args.pairs}: entry {i} lacks {sorted(missing)}")
        img = load_image(base / job["input"])
        d_raw = load_depth(base / job["depth"], like=img)
        target = load_image(base / job["target"])
        d, curve, templates = blend_inputs(img, d_raw, cfg)
        dataset.append((img, d, target, templates))
    if args.epochs < 0:
        raise ValidationError("--epochs must be >= 0")
    tcfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed, ks=cfg.ks,
                       gamma=cfg.gamma, preprocess=curve)
    est = FusionEstimator.learned(len(cfg.ks), args.receptive_field, seed=args.seed)
    history: list = []
    est = train_fusion(est, dataset, tcfg, history)
    save_estimator(est, args.out)
    print(json.dumps({"epochs": args.epochs, "final_l1": mean_l1(est, dataset, tcfg)}))


def _classifier(choice: str, seed: int, timeout: float):
    if choice == "toy":
        return toy_classifier_build(seed=seed)
    if choice.startswith("oracle:") and len(choice) > len("oracle:"):
        return OracleClassifier(choice[len("oracle:"):], timeout=timeout)
    raise ValidationError(f"--classifier must be 'toy' or 'oracle:<dir>', got {choice!r}")


def cmd_attack(args) -> None:
    cfg = _pipeline(args, estimator=args.estimator)
    acfg = AttackConfig(variant=args.variant, epsilon=args.eps, iterations=args.iters,
                        step_size=args.step_size, smooth_kernel=args.smooth_kernel,
                        smooth_mode=args.smooth_mode, early_stop=args.early_stop)
    img = load_image(args.input)
    d_raw = load_depth(args.depth, like=img)
    est = cfg.load_estimator()
    clf = _classifier(args.classifier, args.seed, args.oracle_timeout)
    d, curve, templates = blend_inputs(img, d_raw, cfg)
    if curve is not None and not args.attack_raw:
        # attack the map that the weights are computed from
        d, curve = preprocess_depth(d, curve), None
    label = clf.predict(img) if args.label is None else args.label
    report = run_attack(img, templates, d, est, clf, acfg, label, preprocess=curve)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_json(), indent=2) + "\n")
    if args.out:
        save_image(report.adv_image, args.out)
    if args.out_depth:
        save_depth(report.adv_depth, args.out_depth)
    print(json.dumps({k: v for k, v in report.to_json().items() if k != "loss_trace"}))


def cmd_metrics(args) -> None:
    print(json.dumps(compare(load_image(args.a), load_image(args.b)).to_dict()))


# --------------------------------------------------------------- batch

_OVERRIDES = {"k": "ks", "ks": "ks", "gamma": "gamma", "sl_center": "sl_center",
              "sl_slope": "sl_slope", "threshold": "threshold", "refine": "refine",
              "preprocess": "preprocess", "estimator": "estimator", "m": "m", "order": "order"}


def _job_config(base: PipelineConfig, job: dict, i: int) -> PipelineConfig:
    over = job.get("overrides") or {}
    if not isinstance(over, dict):
        raise ValidationError(f"job {i}: overrides must be an object")
    unknown = set(over) - set(_OVERRIDES)
    if unknown:
        raise ValidationError(f"job {i}: unknown override(s) {sorted(unknown)}")
    try:
        return replace(base, **{_OVERRIDES[k]: v for k, v in over.items()})
    except (ValidationError, TypeError) as exc:
        raise ValidationError(f"job {i}: {exc}") from exc


def plan_batch(jobs, base: PipelineConfig, root: Path) -> list:
    """Validate the whole manifest before anything runs."""
    if not isinstance(jobs, list):
        raise ValidationError("manifest must be a JSON array of jobs")
    plan, outs = [], set()
    for i, job in enumerate(jobs):
        if not isinstance(job, dict):
            raise ValidationError(f"job {i}: expected an object")
        missing = {"input", "depth", "out"} - set(job)
        if missing:
            raise ValidationError(f"job {i}: missing {sorted(missing)}")
        out = (root / job["out"]).resolve()
        if out in outs:
            raise ValidationError(f"job {i}: duplicate out path {job['out']}")
        outs.add(out)
        target = root / job["target"] if job.get("target") else None
        plan.append((i, root / job["input"], root / job["depth"], target, out,
                     _job_config(base, job, i)))
    return plan


def _run_job(entry) -> dict:
    i, inp, depth, target, out, cfg = entry
    rec = {"index": i, "out": str(out)}
    try:
        img = load_image(inp)
        result = render_file(img, load_depth(depth, like=img), cfg)
        save_image(result, out)
        if target is not None:
            rec["metrics"] = compare(result, load_image(target)).to_dict()
        rec["status"] = "ok"
    except (DebskitError, OSError, ValueError) as exc:
        rec["status"] = "failed"
        rec["error"] = str(exc)
    return rec


def worker_count() -> int:
    raw = os.environ.get("DEBSKIT_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"DEBSKIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"DEBSKIT_THREADS must be a positive integer, got {raw!r}")
    return n


def run_batch(jobs, base: PipelineConfig, root: Path = Path(".")) -> dict:
    plan = plan_batch(jobs, base, root)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        records = list(pool.map(_run_job, plan))
    failed = sum(r["status"] != "ok" for r in records)
    return {"jobs": records, "succeeded": len(records) - failed, "failed": failed}


def cmd_batch(args) -> None:
    base = _pipeline(args, estimator=args.estimator)
    jobs = _read_json(args.manifest, "manifest")
    summary = run_batch(jobs, base, Path(args.manifest).parent)
    text = json.dumps(summary, indent=2) + "\n"
    if args.summary:
        Path(args.summary).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- demo


def demo_scene(seed: int, size: int = 96):
    """Textured background with small bright lights, a shaded ball in front."""
    rng = np.random.default_rng(seed)
    n = size
    yy, xx = np.mgrid[0:n, 0:n] / n
    img = 0.15 + 0.2 * np.stack([xx, yy, 1 - xx], axis=2)
    img = img + rng.uniform(-0.05, 0.05, size=(n, n, 3))
    for _ in range(max(4, n // 8)):
        y, x = rng.integers(0, n, size=2)
        img[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2] = rng.uniform(0.85, 1.0, size=3)
    depth = 0.05 + 0.25 * yy
    cy, cx = n * rng.uniform(0.4, 0.6, size=2)
    r = n * 0.2
    dist = np.hypot(yy * n - cy, xx * n - cx)
    inside = dist <= r
    ball = rng.uniform(0.5, 0.9, size=3) * (1.0 - 0.4 * (dist / r) ** 2)[:, :, None]
    img = np.where(inside[:, :, None], ball, img)
    depth = np.where(inside, 0.9 + 0.1 * (1 - dist / r), depth)
    return np.clip(img, 0.0, 1.0), np.clip(depth, 0.0, 1.0)


def cmd_demo(args) -> None:
    if args.size < 16:
        raise ValidationError("--size must be >= 16")
    root = Path(args.out)
    img, d = demo_scene(args.seed, args.size)
    for sub in ("templates", "refocus", "degree", "refine"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_image(img, root / "input.png")
    save_depth(d, root / "depth.dbsk")
    save_gray(d, root / "depth.png")

    for k in (13, 21, 29, 37):
        save_image(make_template(img, k).image, root / "templates" / f"k{k:02d}.png")
    base = PipelineConfig(seed=args.seed)
    for name, m in (("foreground", 0.0), ("background", 1.0)):
        save_image(render_file(img, d, replace(base, m=m)), root / "refocus" / f"{name}.png")
    for k in (13, 37, 69):
        save_image(render_file(img, d, replace(base, ks=(k,))), root / "degree" / f"k{k:02d}.png")
    steps: dict = {}
    refined_template(img, d, 37, intermediates=steps)
    _dump_steps(steps, root / "refine")

    files = sorted(str(p.relative_to(root)) for p in root.rglob("*")
                   if p.is_file() and p.name != "index.json")
    index = {"seed": args.seed, "size": args.size, "config": asdict(base), "files": files}
    (root / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


COMMANDS = {
    "template": cmd_template, "depth-prep": cmd_depth_prep, "refocus": cmd_refocus,
    "render": cmd_render, "train": cmd_train, "attack": cmd_attack, "metrics": cmd_metrics,
    "batch": cmd_batch, "demo": cmd_demo,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"debskit: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError, DebskitError) as exc:
        print(f"debskit: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
