"""Image / depth-map containers, elementwise helpers and file I/O.

Images are ``(H, W, 3)`` float64 arrays in [0, 1]; depth maps and binary
masks are ``(H, W)`` float64 arrays. Values are converted to and from
integer pixel codes only at the I/O boundary.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import FormatError, ValidationError

DEPTH_MAGIC = b"DBSK"
GRAD_MAGIC = b"DBK3"


def as_image(data, name: str = "image") -> np.ndarray:
    """Validate ``data`` as an image and return it as a read-only float64 array."""
    img = np.array(data, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"{name}: expected shape (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValidationError(f"{name}: zero-dimension image")
    if not np.all(np.isfinite(img)):
        raise ValidationError(f"{name}: non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError(f"{name}: values out of range [0, 1]")
    img.flags.writeable = False
    return img


def as_depth(data, name: str = "depth") -> np.ndarray:
    """Validate ``data`` as a depth map in [0, 1]."""
    d = np.array(data, dtype=np.float64)
    if d.ndim != 2:
        raise ValidationError(f"{name}: expected shape (H, W), got {d.shape}")
    if d.shape[0] < 1 or d.shape[1] < 1:
        raise ValidationError(f"{name}: zero-dimension map")
    if not np.all(np.isfinite(d)):
        raise ValidationError(f"{name}: non-finite values")
    if d.min() < 0.0 or d.max() > 1.0:
        raise ValidationError(f"{name}: values out of range [0, 1]")
    d.flags.writeable = False
    return d


def as_mask(data, name: str = "mask") -> np.ndarray:
    m = as_depth(data, name)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValidationError(f"{name}: binary mask must contain only 0 and 1")
    return m


def check_pair(img: np.ndarray, d: np.ndarray) -> None:
    if img.shape[:2] != d.shape[:2]:
        raise ValidationError(
            f"dimension mismatch: image {img.shape[:2]} vs map {d.shape[:2]}"
        )


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product; a 2-D ``b`` is broadcast across the channels of ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or a.shape[:2] != b.shape:
        raise ValidationError(
            f"dimension mismatch: {a.shape} vs {b.shape}"
        )
    if a.ndim == 3:
        return a * b[:, :, None]
    return a * b


def pad_replicate(x: np.ndarray, margin: int) -> np.ndarray:
    """Pad both spatial axes by ``margin`` pixels, replicating the edge."""
    if margin < 0:
        raise ValidationError(f"margin must be >= 0, got {margin}")
    x = np.asarray(x)
    if margin == 0:
        return x.copy()
    widths = [(margin, margin), (margin, margin)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, widths, mode="edge")


def unpad(x: np.ndarray, margin: int) -> np.ndarray:
    if margin < 0:
        raise ValidationError(f"margin must be >= 0, got {margin}")
    x = np.asarray(x)
    h, w = x.shape[:2]
    if h <= 2 * margin or w <= 2 * margin:
        raise ValidationError(f"margin {margin} too large for {h}x{w} image")
    if margin == 0:
        return x.copy()
    return x[margin:h - margin, margin:w - margin].copy()


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


# ---------------------------------------------------------------- images


def _read_ppm(raw: bytes, path: Path) -> np.ndarray:
    # P6 header: magic, width, height, maxval separated by whitespace, comments allowed
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace before raster
    if fields[0] != b"P6":
        raise FormatError(f"{path}: unsupported container (only binary P6 PPM)")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PPM header") from exc
    if width < 1 or height < 1:
        raise FormatError(f"{path}: zero-dimension image")
    if maxval == 255:
        dtype = np.dtype("u1")
    elif maxval == 65535:
        dtype = np.dtype(">u2")
    else:
        raise FormatError(f"{path}: unsupported bit depth (maxval {maxval})")
    count = width * height * 3
    body = raw[pos:pos + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise FormatError(f"{path}: truncated PPM raster")
    data = np.frombuffer(body, dtype=dtype).reshape(height, width, 3)
    return data.astype(np.float64) / maxval


def _png_bit_depth(raw: bytes) -> int:
    # IHDR is always the first chunk; bit depth sits at byte 24
    return raw[24] if len(raw) > 25 and raw[12:16] == b"IHDR" else 8


def _read_png16(path: Path) -> np.ndarray:
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise FormatError(
            f"{path}: 16-bit PNG needs opencv-python (pip install debskit[png16])"
        ) from exc
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None or data.ndim != 3 or data.shape[2] != 3:
        raise FormatError(f"{path}: only 16-bit RGB PNG is supported")
    return data[:, :, ::-1].astype(np.float64) / 65535.0


def load_image(path) -> np.ndarray:
    """Read an 8/16-bit RGB PNG or P6 PPM into a float image in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"P6":
        return as_image(_read_ppm(raw, path), str(path))
    if raw[:8] != b"\x89PNG\r\n\x1a\n":
        raise FormatError(f"{path}: unsupported container (expected PNG or P6 PPM)")
    if _png_bit_depth(raw) == 16:
        return as_image(_read_png16(path), str(path))
    with PILImage.open(path) as im:
        if im.mode not in ("RGB", "L", "P", "RGBA"):
            raise FormatError(f"{path}: unsupported pixel mode {im.mode}")
        data = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise FormatError(f"{path}: zero-dimension image")
    return as_image(data, str(path))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write an image as 8-bit PNG, or P6 PPM when the suffix is ``.ppm``."""
    img = as_image(img)
    path = Path(path)
    codes = to_uint8(img)
    if path.suffix.lower() == ".ppm":
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        path.write_bytes(header + codes.tobytes())
        return
    PILImage.fromarray(codes, mode="RGB").save(path, format="PNG", optimize=False)


def save_gray(x: np.ndarray, path) -> None:
    """Save a single-channel map in [0, 1] as an RGB PNG (for inspection)."""
    x = np.asarray(x, dtype=np.float64)
    save_image(np.repeat(np.clip(x, 0.0, 1.0)[:, :, None], 3, axis=2), path)


# ----------------------------------------------------------- raw floats


def _write_raw(path, magic: bytes, dims: tuple[int, ...], data: np.ndarray) -> None:
    header = magic + struct.pack("<" + "I" * len(dims), *dims)
    Path(path).write_bytes(header + np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_raw(path, magic: bytes, ndims: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    raw = path.read_bytes()
    head = 4 + 4 * ndims
    if len(raw) < head or raw[:4] != magic:
        raise FormatError(f"{path}: header mismatch (expected {magic.decode()})")
    dims = struct.unpack("<" + "I" * ndims, raw[4:head])
    if any(n == 0 for n in dims):
        raise FormatError(f"{path}: zero dimension in header")
    count = int(np.prod(dims))
    if len(raw) != head + 4 * count:
        raise FormatError(
            f"{path}: dimension mismatch, header says {dims} "
            f"but payload holds {(len(raw) - head) // 4} scalars"
        )
    return np.frombuffer(raw[head:], dtype="<f4").reshape(dims)


def save_depth(d: np.ndarray, path) -> None:
    d = as_depth(d)
    _write_raw(path, DEPTH_MAGIC, d.shape, d)


def load_depth(path, like: np.ndarray | None = None) -> np.ndarray:
    """Read a DBSK map; ``like`` optionally pins the expected spatial size."""
    data = _read_raw(path, DEPTH_MAGIC, 2)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite depth value")
    if data.min() < 0.0 or data.max() > 1.0:
        raise FormatError(f"{path}: depth value out of range [0, 1]")
    d = as_depth(data, str(path))
    if like is not None and np.shape(like)[:2] != d.shape:
        raise ValidationError(
            f"{path}: dimension mismatch with image ({d.shape} vs {np.shape(like)[:2]})"
        )
    return d


save_mask = save_depth


def load_mask(path) -> np.ndarray:
    return as_mask(load_depth(path), str(path))


def save_grad3(g: np.ndarray, path) -> None:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 3 or g.shape[2] != 3:
        raise ValidationError(f"gradient must be (H, W, 3), got {g.shape}")
    _write_raw(path, GRAD_MAGIC, g.shape, g)


def load_grad3(path) -> np.ndarray:
    g = _read_raw(path, GRAD_MAGIC, 3)
    if g.shape[2] != 3:
        raise FormatError(f"{path}: expected 3 channels, got {g.shape[2]}")
    return g.astype(np.float64)
