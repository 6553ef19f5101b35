"""Image and video containers: binary PPM/PGM, PAM (P7) sprites, YUV4MPEG2."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import (DimensionError, FrameTruncationError, InputFormatError,
                     UnsupportedFormatError)
from .window import Frame, to_luma

MAX_DIM = 16384
Y4M_MAGIC = b"YUV4MPEG2"
Y4M_COLORSPACES = ("420", "420jpeg", "420mpeg2", "mono")
DEFAULT_FPS = Fraction(25, 1)


# ---------------------------------------------------------------------------
# PNM


def _pnm_tokens(data: bytes, count: int, name: str) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise InputFormatError(f"{name}: truncated PNM header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos:pos + 1].isspace():
        raise InputFormatError(f"{name}: malformed PNM header")
    return tokens, pos + 1


def decode_pnm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Decode binary P6/P5 (maxval 255) into an (H, W, 3) uint8 array."""
    magic = data[:2]
    if magic not in (b"P6", b"P5"):
        raise InputFormatError(f"{name}: not a binary PPM/PGM file (magic {magic!r})")
    tokens, pos = _pnm_tokens(data, 4, name)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise InputFormatError(f"{name}: non-numeric PNM header field") from None
    if not (1 <= w <= MAX_DIM and 1 <= h <= MAX_DIM):
        raise InputFormatError(f"{name}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise UnsupportedFormatError(f"{name}: maxval {maxval} unsupported (need 255)")
    channels = 3 if magic == b"P6" else 1
    size = w * h * channels
    if len(data) - pos < size:
        raise InputFormatError(f"{name}: truncated pixel data")
    px = np.frombuffer(data, dtype=np.uint8, count=size, offset=pos).reshape(h, w, channels)
    if channels == 1:
        px = np.repeat(px, 3, axis=2)
    return px.copy()


def encode_ppm(pixels: np.ndarray) -> bytes:
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    h, w = gray.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(gray, dtype=np.uint8).tobytes()


def read_pnm(path) -> np.ndarray:
    path = Path(path)
    return decode_pnm(path.read_bytes(), path.name)


def write_ppm(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(pixels))


def read_frame_dir(path, fps: Fraction = DEFAULT_FPS) -> Iterator[Frame]:
    """Yield frames from the .ppm/.pgm files of a directory in filename order."""
    path = Path(path)
    if not path.is_dir():
        raise InputFormatError(f"{path}: not a directory")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
    dims = None
    for index, f in enumerate(files):
        px = read_pnm(f)
        if dims is None:
            dims = px.shape
        elif px.shape != dims:
            raise DimensionError(
                f"{f.name}: frame is {px.shape[1]}x{px.shape[0]}, expected {dims[1]}x{dims[0]}")
        yield Frame(index, _timestamp(index, fps), px)


def _timestamp(index: int, fps: Fraction) -> int:
    return int(index * 1_000_000 * fps.denominator // fps.numerator)


# ---------------------------------------------------------------------------
# PAM


def decode_pam(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Decode a P7 RGB_ALPHA file into an (H, W, 4) uint8 array."""
    if not data.startswith(b"P7\n"):
        raise InputFormatError(f"{name}: not a PAM file")
    end = data.find(b"ENDHDR\n")
    if end < 0:
        raise InputFormatError(f"{name}: PAM header has no ENDHDR")
    fields = {}
    for line in data[3:end].decode("ascii", "replace").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    try:
        w, h = int(fields["WIDTH"]), int(fields["HEIGHT"])
        depth, maxval = int(fields["DEPTH"]), int(fields["MAXVAL"])
    except (KeyError, ValueError):
        raise InputFormatError(f"{name}: PAM header missing WIDTH/HEIGHT/DEPTH/MAXVAL") from None
    if depth != 4 or maxval != 255 or fields.get("TUPLTYPE", "RGB_ALPHA") != "RGB_ALPHA":
        raise UnsupportedFormatError(f"{name}: only 8-bit RGB_ALPHA PAM is supported")
    if not (1 <= w <= MAX_DIM and 1 <= h <= MAX_DIM):
        raise InputFormatError(f"{name}: bad PAM dimensions {w}x{h}")
    pos = end + len(b"ENDHDR\n")
    size = w * h * 4
    if len(data) - pos < size:
        raise InputFormatError(f"{name}: truncated PAM payload")
    return np.frombuffer(data, np.uint8, size, pos).reshape(h, w, 4).copy()


def encode_pam(rgba: np.ndarray) -> bytes:
    h, w, _ = rgba.shape
    head = f"P7\nWIDTH {w}\nHEIGHT {h}\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n"
    return head.encode("ascii") + np.ascontiguousarray(rgba, dtype=np.uint8).tobytes()


def read_pam(path) -> np.ndarray:
    path = Path(path)
    return decode_pam(path.read_bytes(), path.name)


# ---------------------------------------------------------------------------
# Y4M


@dataclass(frozen=True)
class Y4MHeader:
    width: int
    height: int
    fps: Fraction
    colorspace: str = "420jpeg"
    extra: tuple[str, ...] = ()

    @property
    def chroma_shape(self) -> tuple[int, int]:
        return (self.height + 1) // 2, (self.width + 1) // 2

    @property
    def frame_size(self) -> int:
        y = self.width * self.height
        if self.colorspace == "mono":
            return y
        ch, cw = self.chroma_shape
        return y + 2 * ch * cw

    def encode(self) -> bytes:
        parts = [Y4M_MAGIC.decode(), f"W{self.width}", f"H{self.height}",
                 f"F{self.fps.numerator}:{self.fps.denominator}", *self.extra,
                 f"C{self.colorspace}"]
        return (" ".join(parts) + "\n").encode("ascii")


_INT = re.compile(r"[0-9]+\Z")


def parse_y4m_header(line: bytes) -> Y4MHeader:
    if not line.startswith(Y4M_MAGIC + b" ") and line != Y4M_MAGIC:
        raise InputFormatError(f"bad Y4M magic {line[:9]!r}")
    try:
        text = line.decode("ascii")
    except UnicodeDecodeError:
        raise InputFormatError("Y4M header is not ASCII") from None
    width = height = None
    fps = DEFAULT_FPS
    colorspace = "420jpeg"
    extra = []
    for tok in text.split(" ")[1:]:
        if not tok:
            raise InputFormatError("Y4M header has an empty parameter")
        key, val = tok[0], tok[1:]
        if key in "WH":
            if not _INT.match(val):
                raise InputFormatError(f"Y4M header: bad {key} value {val!r}")
            n = int(val)
            if not 1 <= n <= MAX_DIM:
                raise InputFormatError(f"Y4M header: {key}{n} out of range 1..{MAX_DIM}")
            width, height = (n, height) if key == "W" else (width, n)
        elif key == "F":
            num, sep, den = val.partition(":")
            if not (sep and _INT.match(num) and _INT.match(den)) or int(num) == 0 \
                    or int(den) == 0:
                raise InputFormatError(f"Y4M header: bad frame rate {val!r}")
            fps = Fraction(int(num), int(den))
        elif key == "C":
            if val not in Y4M_COLORSPACES:
                raise UnsupportedFormatError(f"unsupported Y4M colorspace C{val}")
            colorspace = val
        elif key in "IAX":
            extra.append(tok)
        else:
            raise InputFormatError(f"Y4M header: unknown parameter {tok!r}")
    if width is None or height is None:
        raise InputFormatError("Y4M header must give both W and H")
    return Y4MHeader(width, height, fps, colorspace, tuple(extra))


def yuv420_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """BT.601 full-range inverse with nearest-neighbour chroma upsampling."""
    h, w = y.shape
    u = np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    v = np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    yf = y.astype(np.float64)
    rgb = np.stack([yf + 1.402 * v,
                    yf - 0.344136 * u - 0.714136 * v,
                    yf + 1.772 * u], axis=-1)
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def rgb_to_yuv420(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BT.601 full-range forward transform; chroma is the 2x2 block mean."""
    f = rgb.astype(np.float64)
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    v = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    h, w = y.shape
    ph, pw = h + h % 2, w + w % 2

    def sub(c):
        c = np.pad(c, ((0, ph - h), (0, pw - w)), mode="edge")
        return c.reshape(ph // 2, 2, pw // 2, 2).mean(axis=(1, 3))

    def q(c):
        return np.clip(np.floor(c + 0.5), 0, 255).astype(np.uint8)

    return q(y), q(sub(u)), q(sub(v))


@dataclass
class Y4MReader:
    header: Y4MHeader
    stream: BinaryIO

    def __iter__(self) -> Iterator[Frame]:
        hd = self.header
        index = 0
        while True:
            marker = self.stream.readline(4096)
            if not marker:
                return
            if not (marker.startswith(b"FRAME") and marker.endswith(b"\n")):
                raise FrameTruncationError(
                    f"frame {index}: expected FRAME marker, got {marker[:16]!r}", index)
            payload = self.stream.read(hd.frame_size)
            if len(payload) != hd.frame_size:
                raise FrameTruncationError(
                    f"frame {index}: truncated payload ({len(payload)} of "
                    f"{hd.frame_size} bytes)", index)
            buf = np.frombuffer(payload, dtype=np.uint8)
            y = buf[:hd.width * hd.height].reshape(hd.height, hd.width)
            if hd.colorspace == "mono":
                rgb = np.repeat(y[..., None], 3, axis=2)
            else:
                ch, cw = hd.chroma_shape
                off = hd.width * hd.height
                u = buf[off:off + ch * cw].reshape(ch, cw)
                v = buf[off + ch * cw:].reshape(ch, cw)
                rgb = yuv420_to_rgb(y, u, v)
            yield Frame(index, _timestamp(index, hd.fps), rgb, (hd.colorspace, payload))
            index += 1


def parse_y4m(stream: BinaryIO) -> tuple[int, int, Fraction, Y4MReader]:
    line = stream.readline(4096)
    if not line.endswith(b"\n"):
        raise InputFormatError("Y4M header line is missing or unterminated")
    header = parse_y4m_header(line[:-1])
    return header.width, header.height, header.fps, Y4MReader(header, stream)


def parse_y4m_bytes(data: bytes):
    return parse_y4m(io.BytesIO(data))


class Y4MWriter:
    def __init__(self, stream: BinaryIO, width: int, height: int,
                 fps: Fraction = DEFAULT_FPS, colorspace: str = "420jpeg"):
        self.stream = stream
        self.header = Y4MHeader(width, height, fps, colorspace)
        stream.write(self.header.encode())

    def write(self, frame: Frame) -> None:
        self.stream.write(b"FRAME\n")
        src = frame.source
        if src is not None and src[0] == self.header.colorspace and not frame.augmented:
            # untouched frame: pass the source planes through unchanged
            self.stream.write(src[1])
            return
        if self.header.colorspace == "mono":
            self.stream.write(to_luma(frame.pixels).tobytes())
            return
        y, u, v = rgb_to_yuv420(frame.pixels)
        self.stream.write(y.tobytes() + u.tobytes() + v.tobytes())
