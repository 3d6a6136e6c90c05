"""Depth-guided bokeh rendering and adversarial depth perturbations."""

from .attack import (AttackConfig, AttackReport, attack_dpgda, attack_gda, attack_smgda,
                     run_attack, smooth, total_variation)
from .classifier import OracleClassifier, ToyClassifier, toy_classifier_build
from .depth import SLCurve, focus_mask, preprocess_depth, refocus_map
from .errors import DebskitError, FormatError, OracleTimeout, ValidationError
from .fusion import (FusionEstimator, RenderTape, TrainConfig, WeightMaps, estimate_weights,
                     load_estimator, render, render_grad, save_estimator, train_fusion)
from .metrics import MetricReport, psnr, ssim
from .raster import load_depth, load_image, save_depth, save_image
from .refine import StructuringElement, erode, refined_template
from .template import BlurTemplate, DiskKernel, disk_kernel, make_template, make_templates

__version__ = "0.1.0"
