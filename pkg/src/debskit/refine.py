"""Erosion refinement of blur templates.

Bright in-focus content bleeds into the surrounding blur when the whole
image is blurred. The refined template blurs a copy of the image whose
focus region has been eroded from the outside in, and takes its
out-of-focus pixels from that copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .depth import focus_mask
from .errors import ValidationError
from .raster import as_image, check_pair, clamp01, hadamard
from .template import BlurTemplate, _check_odd, disk_support, make_template


@dataclass(frozen=True)
class StructuringElement:
    size: int
    footprint: np.ndarray

    @classmethod
    def disk(cls, k: int) -> "StructuringElement":
        return cls(size=_check_odd(k), footprint=disk_support(k))


def erode(img: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Per-channel min filter over the footprint, replicate borders."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        return ndimage.grey_erosion(x, footprint=se.footprint, mode="nearest")
    return np.stack(
        [ndimage.grey_erosion(x[:, :, c], footprint=se.footprint, mode="nearest")
         for c in range(x.shape[2])],
        axis=2,
    )


def refined_template(
    img: np.ndarray,
    d_raw: np.ndarray,
    k: int,
    g: float = 2.2,
    t: float = 0.6,
    *,
    erode_k: int | None = None,
    literal_sum: bool = False,
    intermediates: dict | None = None,
) -> BlurTemplate:
    """Blur template with the focus region kept from leaking outwards.

    ``literal_sum`` adds the two partial templates instead of selecting
    between them by the mask. Pass a dict as ``intermediates`` to collect
    the eight intermediate products (keys ``"1_mask"`` .. ``"8_refined"``).
    """
    img = as_image(img)
    check_pair(img, d_raw)
    erode_k = k if erode_k is None else erode_k
    _check_odd(erode_k, "erode_k")

    mask = focus_mask(d_raw, t)
    outside = 1.0 - mask
    oof = hadamard(img, outside)
    whitened = np.where(mask[:, :, None] == 1.0, 1.0, img)
    eroded = erode(whitened, StructuringElement.disk(erode_k))
    focus_part = hadamard(eroded, mask)
    composed = clamp01(focus_part + oof)
    t_p = make_template(composed, k, g).image
    t_b = make_template(img, k, g).image
    t_p_outside = hadamard(t_p, outside)
    if literal_sum:
        out = t_b + t_p_outside
    else:
        out = hadamard(t_b, mask) + t_p_outside
    out = clamp01(out)
    out.flags.writeable = False

    if intermediates is not None:
        intermediates.update({
            "1_mask": mask,
            "2_out_of_focus": oof,
            "3_eroded": eroded,
            "4_focus_part": focus_part,
            "5_template_composed": t_p,
            "6_template_plain": t_b,
            "7_template_composed_masked": t_p_outside,
            "8_refined": out,
        })
    return BlurTemplate(image=out, kernel_size=int(k), gamma=float(g))


def refined_templates(img, d_raw, ks, g: float = 2.2, t: float = 0.6, **kw) -> list[BlurTemplate]:
    ks = list(ks)
    if not ks:
        raise ValidationError("at least one kernel size is required")
    return [refined_template(img, d_raw, k, g, t, **kw) for k in ks]
