"""Frame augmentation: emoji sprites floated above faces, or a text label."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .detect import BoundingBox
from .errors import ConfigError
from .media import read_pam
from .model_io import CLASS_LABELS
from .tensor import bilinear_resize
from .window import Frame

GAP = 4
TEXT_SCALE = 2
TEXT_PAD = 2

# 5x7 glyphs, one string per row, '#' = ink
_GLYPHS_SRC = {
    "A": (" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"),
    "B": ("#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "),
    "C": (" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "),
    "D": ("#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "),
    "E": ("#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"),
    "F": ("#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "),
    "G": (" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"),
    "H": ("#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"),
    "I": (" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    "J": ("  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "),
    "K": ("#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"),
    "L": ("#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"),
    "M": ("#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"),
    "N": ("#   #", "#   #", "##  #", "# # #", "#  ##", "#   #", "#   #"),
    "O": (" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "),
    "P": ("#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "),
    "Q": (" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"),
    "R": ("#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"),
    "S": (" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "),
    "T": ("#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "),
    "U": ("#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "),
    "V": ("#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "),
    "W": ("#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "),
    "X": ("#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"),
    "Y": ("#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "),
    "Z": ("#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"),
    "0": (" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "),
    "1": ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    "2": (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    "3": ("#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "),
    "4": ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    "5": ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    "6": ("  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "),
    "7": ("#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "),
    "8": (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    "9": (" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "),
    "%": ("##   ", "##  #", "   # ", "  #  ", " #   ", "#  ##", "   ##"),
    " ": ("     ",) * 7,
}
GLYPHS = {ch: np.array([[c == "#" for c in row] for row in rows], dtype=bool)
          for ch, rows in _GLYPHS_SRC.items()}


@dataclass
class OverlayConfig:
    mode: str = "emoji"
    sprite_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("emoji", "text"):
            raise ConfigError(f"overlay mode must be 'emoji' or 'text', got {self.mode!r}")
        if self.mode == "emoji":
            missing = [c for c in CLASS_LABELS if c not in self.sprite_map]
            if missing:
                raise ConfigError(f"emoji mode needs a sprite for every class; missing {missing}")


def load_sprites(sprite_map: Mapping[str, str], base: Path | None = None) -> dict[str, np.ndarray]:
    sprites = {}
    for label, path in sprite_map.items():
        p = Path(path)
        if base is not None and not p.is_absolute():
            p = base / p
        if not p.is_file():
            raise ConfigError(f"sprite for {label!r} not found: {p}")
        sprites[label] = read_pam(p)
    return sprites


def alpha_blend(bg: np.ndarray, sprite: np.ndarray, at: tuple[int, int]) -> None:
    """Composite an RGBA sprite onto an RGB image in place, clipping at the edges."""
    x, y = at
    sh, sw = sprite.shape[:2]
    bh, bw = bg.shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + sw, bw), min(y + sh, bh)
    if x0 >= x1 or y0 >= y1:
        return
    fg = sprite[y0 - y:y1 - y, x0 - x:x1 - x].astype(np.uint32)
    a = fg[..., 3:4]
    region = bg[y0:y1, x0:x1]
    out = (a * fg[..., :3] + (255 - a) * region.astype(np.uint32) + 127) // 255
    region[...] = out.astype(np.uint8)


def _anchor(box: BoundingBox, w: int, h: int, frame_w: int) -> tuple[int, int]:
    x = box.x + (box.w - w) // 2
    x = min(max(x, 0), max(frame_w - w, 0))
    y = max(0, box.y - h - GAP)
    return x, y


def scale_sprite(sprite: np.ndarray, width: int) -> np.ndarray:
    sh, sw = sprite.shape[:2]
    height = max(1, int(math.floor(sh * width / sw + 0.5)))
    if (height, width) == (sh, sw):
        return sprite
    f = bilinear_resize(np.ascontiguousarray(sprite, dtype=np.float32), height, width)
    return np.clip(np.floor(f + np.float32(0.5)), 0, 255).astype(np.uint8)


def place_emoji(frame: Frame, box: BoundingBox, label: str,
                sprites: Mapping[str, np.ndarray]) -> None:
    if label not in sprites:
        raise ConfigError(f"no sprite configured for class {label!r}")
    sprite = scale_sprite(sprites[label], box.w)
    at = _anchor(box, sprite.shape[1], sprite.shape[0], frame.width)
    alpha_blend(frame.pixels, sprite, at)
    frame.augmented = True


def format_label(label: str, confidence: float) -> str:
    pct = int(math.floor(100.0 * float(confidence) + 0.5))
    return f"{label.upper()} {pct}%"


def render_text(text: str) -> np.ndarray:
    """Boolean ink mask for ``text`` at 2x scale, one blank column between glyphs."""
    cols = []
    for i, ch in enumerate(text):
        if ch not in GLYPHS:
            raise ConfigError(f"character {ch!r} has no glyph")
        if i:
            cols.append(np.zeros((7, 1), dtype=bool))
        cols.append(GLYPHS[ch])
    mask = np.concatenate(cols, axis=1)
    return mask.repeat(TEXT_SCALE, axis=0).repeat(TEXT_SCALE, axis=1)


def place_text(frame: Frame, box: BoundingBox, label: str, confidence: float) -> None:
    ink = render_text(format_label(label, confidence))
    bh, bw = ink.shape[0] + 2 * TEXT_PAD, ink.shape[1] + 2 * TEXT_PAD
    x, y = _anchor(box, bw, bh, frame.width)
    px = frame.pixels
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + bw, frame.width), min(y + bh, frame.height)
    if x0 >= x1 or y0 >= y1:
        return
    band = px[y0:y1, x0:x1]
    band //= 2
    full = np.zeros((bh, bw), dtype=bool)
    full[TEXT_PAD:TEXT_PAD + ink.shape[0], TEXT_PAD:TEXT_PAD + ink.shape[1]] = ink
    band[full[y0 - y:y1 - y, x0 - x:x1 - x]] = 255
    frame.augmented = True
