"""File formats: PFM float maps, PGM masks, binary PLY clouds, flat configs.

All binary formats are written little-endian with fixed headers so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

_PLY_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {count}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property uchar red\n"
    "property uchar green\n"
    "property uchar blue\n"
    "end_header\n"
)

_PLY_VERTEX_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
    ]
)


def write_pfm(path: str | Path, data: np.ndarray) -> None:
    """Write a 2-D float array as a grayscale PFM (scale -1.0, little-endian).

    Rows are stored bottom-up per the format; NaN entries pass through and
    conventionally mark invalid pixels.
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"PFM export needs a 2-D array, got shape {data.shape}")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a grayscale PFM back into a float32 array (top-down rows)."""
    with open(path, "rb") as fh:
        magic = _next_token(fh)
        if magic != b"Pf":
            raise ValueError(
                f"{path}: expected grayscale PFM magic 'Pf', got {magic!r}"
            )
        w = int(_next_token(fh))
        h = int(_next_token(fh))
        scale = float(_next_token(fh))
        if w <= 0 or h <= 0:
            raise ValueError(f"{path}: bad PFM dimensions {w}x{h}")
        endian = "<" if scale < 0 else ">"
        raw = fh.read(w * h * 4)
    if len(raw) != w * h * 4:
        raise ValueError(f"{path}: truncated PFM payload")
    data = np.frombuffer(raw, dtype=f"{endian}f4").reshape(h, w)
    return np.flipud(data).astype(np.float32)


def write_pgm_mask(path: str | Path, mask: np.ndarray) -> None:
    """Write a boolean mask as binary PGM: 255 where true, 0 elsewhere."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    payload = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(payload.tobytes())


def read_pgm_mask(path: str | Path) -> np.ndarray:
    """Read a binary PGM as a boolean mask (nonzero means true)."""
    with open(path, "rb") as fh:
        magic = _next_token(fh)
        if magic != b"P5":
            raise ValueError(f"{path}: expected binary PGM magic 'P5', got {magic!r}")
        w = int(_next_token(fh))
        h = int(_next_token(fh))
        maxval = int(_next_token(fh))
        if maxval <= 0 or maxval > 255:
            raise ValueError(f"{path}: unsupported PGM maxval {maxval}")
        raw = fh.read(w * h)
    if len(raw) != w * h:
        raise ValueError(f"{path}: truncated PGM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w) > 0


def _next_token(fh: io.BufferedReader) -> bytes:
    """Next whitespace-delimited header token, skipping # comment lines."""
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            if token:
                return token
            raise ValueError("unexpected end of file in header")
        if ch == b"#" and not token:
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def write_ply(
    path: str | Path, positions: np.ndarray, colors: np.ndarray
) -> None:
    """Write a point cloud as binary little-endian PLY.

    positions is (N, 3) in mm; colors is (N, 3) uint8 RGB. The header is
    fixed, so equal inputs give byte-identical files.
    """
    positions = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if positions.shape[0] != colors.shape[0]:
        raise ValueError(
            f"positions ({positions.shape[0]}) and colors "
            f"({colors.shape[0]}) counts differ"
        )
    vertices = np.empty(positions.shape[0], dtype=_PLY_VERTEX_DTYPE)
    vertices["x"] = positions[:, 0]
    vertices["y"] = positions[:, 1]
    vertices["z"] = positions[:, 2]
    vertices["red"] = colors[:, 0]
    vertices["green"] = colors[:, 1]
    vertices["blue"] = colors[:, 2]
    with open(path, "wb") as fh:
        fh.write(_PLY_HEADER.format(count=positions.shape[0]).encode("ascii"))
        fh.write(vertices.tobytes())


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a binary PLY written by write_ply (or the same schema).

    Returns (positions (N, 3) float32, colors (N, 3) uint8). Rejects files
    whose vertex layout differs from x/y/z float + red/green/blue uchar.
    """
    with open(path, "rb") as fh:
        header_lines = []
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: PLY header never terminated")
            text = line.decode("ascii", errors="replace").strip()
            header_lines.append(text)
            if text == "end_header":
                break
        payload = fh.read()

    if not header_lines or header_lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    count = None
    properties = []
    fmt_ok = False
    for text in header_lines[1:]:
        if text.startswith("comment") or text == "end_header" or not text:
            continue
        if text.startswith("format"):
            fmt_ok = text == "format binary_little_endian 1.0"
        elif text.startswith("element"):
            parts = text.split()
            if parts[1] != "vertex":
                raise ValueError(f"{path}: unsupported PLY element {parts[1]!r}")
            count = int(parts[2])
        elif text.startswith("property"):
            properties.append(tuple(text.split()[1:]))
    if not fmt_ok:
        raise ValueError(f"{path}: PLY must be format binary_little_endian 1.0")
    if count is None:
        raise ValueError(f"{path}: PLY header missing vertex element")
    expected = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ]
    if properties != expected:
        raise ValueError(
            f"{path}: unsupported vertex layout {properties}; "
            f"expected {expected}"
        )
    if len(payload) < count * _PLY_VERTEX_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated PLY payload")
    vertices = np.frombuffer(
        payload[: count * _PLY_VERTEX_DTYPE.itemsize], dtype=_PLY_VERTEX_DTYPE
    )
    positions = np.stack(
        [vertices["x"], vertices["y"], vertices["z"]], axis=1
    ).astype(np.float32)
    colors = np.stack(
        [vertices["red"], vertices["green"], vertices["blue"]], axis=1
    ).astype(np.uint8)
    return positions, colors


def read_config(path: str | Path) -> dict[str, str]:
    """Parse a flat key=value UTF-8 config file.

    Blank lines and lines whose first non-space character is '#' are
    ignored. Keys and values are whitespace-stripped; a repeated key keeps
    the last occurrence. Lines without '=' raise ValueError naming the line.
    """
    result: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(
                    f"{path}:{lineno}: expected key=value, got {line!r}"
                )
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            result[key] = value.strip()
    return result


def write_config(path: str | Path, values: dict[str, object]) -> None:
    """Write a flat key=value config file, keys in insertion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            fh.write(f"{key} = {value}\n")


def load_grayscale(path: str | Path) -> np.ndarray:
    """Load an image as float32 grayscale normalized to [0, 1]."""
    with Image.open(path) as img:
        gray = img.convert("F") if img.mode == "F" else img.convert("L")
        data = np.asarray(gray, dtype=np.float32)
    if data.max() > 1.0:
        data = data / 255.0
    return data


def load_color(path: str | Path) -> np.ndarray:
    """Load an image as (H, W, 3) uint8 RGB."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_grayscale_png(path: str | Path, data: np.ndarray) -> None:
    """Save a [0, 1] float image as 8-bit grayscale PNG."""
    data = np.asarray(data, dtype=np.float64)
    quantized = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path)
