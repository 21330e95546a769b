"""File I/O: images (PNG, PFM), audio (WAV), multichannel CSV, kernels,
checkpoints.

Images are carried as linear-light float buffers: 8-bit PNGs are decoded
from sRGB on load and re-encoded on save (the round trip is exact on 8-bit
values); HDR data uses PFM (32-bit floats, rows bottom-to-top, scale sign
giving the byte order -- files are written little-endian).  Audio is 16-bit
PCM mono WAV normalized to [-1, 1].  Multichannel 1D signals use CSV with a
leading time column; the original time axis is returned as sidecar metadata
so exports can restore it.

Readers raise :class:`~nfconv.errors.ParseError` (with a byte offset where
that makes sense) instead of crashing on malformed input.
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputShapeError, ParseError, ValidationError
from .fields import GridField
from .integral_training import (
    MlpCheckpoint,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
)
from .kernels import DiracMixture, mixture_from_dict, mixture_to_dict

__all__ = [
    "ImageBuffer",
    "AudioBuffer",
    "read_png",
    "write_png",
    "read_pfm",
    "write_pfm",
    "read_image",
    "write_image",
    "read_wav",
    "write_wav",
    "read_csv_signal",
    "write_csv_signal",
    "read_kernel_json",
    "write_kernel_json",
    "read_checkpoint",
    "write_checkpoint",
    "read_frame_directory",
]


@dataclass
class ImageBuffer:
    """Linear-light image: values shape (height, width, channels)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] not in (1, 3):
            raise InputShapeError(f"image values need shape (H, W, 1|3), got {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError("image dimensions must be >= 1")
        if not np.isfinite(v).all():
            raise ValidationError("image values must be finite")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def to_field(self) -> GridField:
        return GridField(self.values)


@dataclass
class AudioBuffer:
    """Mono audio normalized to [-1, 1]."""

    rate: int
    samples: np.ndarray

    def __post_init__(self):
        if self.rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.rate}")
        s = np.asarray(self.samples, dtype=np.float64).ravel()
        if not np.isfinite(s).all():
            raise ValidationError("audio samples must be finite")
        self.samples = s

    def to_field(self) -> GridField:
        return GridField(self.samples[:, None])


def _srgb_decode(u: np.ndarray) -> np.ndarray:
    c = u / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_encode(lin: np.ndarray) -> np.ndarray:
    lin = np.clip(lin, 0.0, 1.0)
    c = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * lin ** (1.0 / 2.4) - 0.055)
    return np.clip(np.rint(c * 255.0), 0, 255).astype(np.uint8)


def read_png(path) -> ImageBuffer:
    """Load an 8-bit PNG and decode sRGB to linear light."""
    try:
        with Image.open(path) as img:
            mode = "L" if img.mode in ("L", "I;16", "1") else "RGB"
            arr = np.asarray(img.convert(mode))
    except (OSError, SyntaxError, ValueError) as exc:
        raise ParseError(f"cannot decode PNG {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageBuffer(_srgb_decode(arr.astype(np.float64)))


def write_png(path, image: ImageBuffer) -> None:
    """Encode linear light to sRGB and save as 8-bit PNG."""
    u8 = _srgb_encode(image.values)
    if image.channels == 1:
        Image.fromarray(u8[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def _read_pfm_token(data: bytes, offset: int):
    end = offset
    while end < len(data) and data[end:end + 1] not in b" \t\n\r":
        end += 1
    if end == offset or end >= len(data):
        raise ParseError("truncated PFM header", offset=offset)
    return data[offset:end], end + 1


def read_pfm(path) -> ImageBuffer:
    """Load a PFM image (float32; scale sign selects the byte order)."""
    data = Path(path).read_bytes()
    magic, offset = _read_pfm_token(data, 0)
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise ParseError(f"bad PFM magic {magic!r}", offset=0)
    wtok, offset = _read_pfm_token(data, offset)
    htok, offset = _read_pfm_token(data, offset)
    stok, offset = _read_pfm_token(data, offset)
    try:
        width, height = int(wtok), int(htok)
        scale = float(stok)
    except ValueError as exc:
        raise ParseError(f"bad PFM dimensions/scale: {exc}", offset=offset) from exc
    if width < 1 or height < 1 or scale == 0:
        raise ParseError("bad PFM dimensions or zero scale", offset=offset)
    count = width * height * channels
    payload = data[offset:offset + 4 * count]
    if len(payload) != 4 * count:
        raise ParseError(f"truncated PFM payload: need {4 * count} bytes, "
                         f"have {len(payload)}", offset=offset)
    dtype = "<f4" if scale < 0 else ">f4"
    vals = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    vals = vals.reshape(height, width, channels)[::-1]  # rows are bottom-up
    vals = vals * abs(scale)
    if not np.isfinite(vals).all():
        raise ParseError("non-finite PFM samples", offset=offset)
    return ImageBuffer(vals.copy())


def write_pfm(path, image: ImageBuffer) -> None:
    """Save as little-endian PFM (scale -1.0), rows bottom-to-top."""
    if image.channels == 3:
        header = b"PF\n"
    else:
        header = b"Pf\n"
    body = np.ascontiguousarray(image.values[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{image.width} {image.height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(body)


def read_image(path) -> ImageBuffer:
    """Dispatch on extension: .png (sRGB->linear) or .pfm (linear)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return read_png(path)
    if suffix == ".pfm":
        return read_pfm(path)
    raise ValidationError(f"unsupported image extension {suffix!r}")


def write_image(path, image: ImageBuffer) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        write_png(path, image)
    elif suffix == ".pfm":
        write_pfm(path, image)
    else:
        raise ValidationError(f"unsupported image extension {suffix!r}")


def read_wav(path) -> AudioBuffer:
    """Load 16-bit PCM mono WAV, normalized by 1/32768."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise ValidationError("only mono WAV is supported")
            if fh.getsampwidth() != 2:
                raise ValidationError("only 16-bit PCM WAV is supported")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise ParseError(f"malformed WAV {path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(rate=rate, samples=samples)


def write_wav(path, audio: AudioBuffer) -> None:
    """Save as 16-bit PCM mono WAV; samples are clipped to [-1, 1]."""
    q = np.clip(np.rint(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(audio.rate)
        fh.writeframes(q.tobytes())


def read_csv_signal(path):
    """Load a (time, ch1..chD) CSV as a 1D grid field plus sidecar metadata.

    The time column is assumed uniform; its range is returned in the
    metadata so exports can restore it.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        width = None
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and not _all_floats(row)):
                continue  # header or blank line
            if width is None:
                width = len(row)
                if width < 2:
                    raise ParseError(f"line {lineno}: need time plus at least one channel")
            if len(row) != width:
                raise ParseError(f"line {lineno}: ragged row with {len(row)} fields, expected {width}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
    if not rows:
        raise ParseError("CSV contains no data rows")
    arr = np.array(rows, dtype=np.float64)
    meta = {"time_start": float(arr[0, 0]), "time_end": float(arr[-1, 0]),
            "samples": int(arr.shape[0])}
    return GridField(arr[:, 1:]), meta


def _all_floats(row) -> bool:
    try:
        [float(v) for v in row]
        return True
    except ValueError:
        return False


def write_csv_signal(path, field: GridField, meta: dict | None = None) -> None:
    """Inverse of :func:`read_csv_signal` for 1D multichannel grids."""
    if field.din != 1:
        raise ValidationError("CSV export needs a 1D grid field")
    n = field.resolution[0]
    meta = meta or {}
    t0 = meta.get("time_start", 0.0)
    t1 = meta.get("time_end", 1.0)
    times = np.linspace(t0, t1, n) if n > 1 else np.array([t0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for t, row in zip(times, field.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_kernel_json(path) -> DiracMixture:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed kernel JSON {path}: {exc}", offset=exc.pos) from exc
    return mixture_from_dict(doc)


def write_kernel_json(path, m: DiracMixture) -> None:
    with open(path, "w") as fh:
        json.dump(mixture_to_dict(m), fh, indent=2)
        fh.write("\n")


def read_checkpoint(path) -> MlpCheckpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


def write_checkpoint(path, ckpt: MlpCheckpoint) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))


def read_frame_directory(path) -> GridField:
    """Load a directory of numbered PFM/PNG frames as a (t, y, x) video grid."""
    frames = sorted(p for p in Path(path).iterdir()
                    if p.suffix.lower() in (".pfm", ".png"))
    if not frames:
        raise ValidationError(f"no .pfm/.png frames in {path}")
    stack = [read_image(p).values for p in frames]
    shapes = {a.shape for a in stack}
    if len(shapes) != 1:
        raise ValidationError(f"frames disagree on shape: {sorted(shapes)}")
    return GridField(np.stack(stack, axis=0))
