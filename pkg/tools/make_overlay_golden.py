"""Regenerate the committed overlay golden images under tests/data/overlay.

Both images are produced by straightforward per-pixel loops (not the library
renderer) so the tests compare two independent implementations. Inspect the
PPMs before committing.
"""

from pathlib import Path

import numpy as np

from aegis.media import encode_ppm, read_pam
from aegis.overlay import GLYPHS

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "data" / "overlay"
SPRITE = ROOT / "src" / "aegis" / "data" / "sprites" / "happiness.pam"

FRAME_SHAPE = (120, 200, 3)
EMOJI_BOX = (60, 50, 16, 16)  # box width == sprite width, so no scaling
TEXT_BOX = (60, 50, 30, 20)
TEXT = "SURPRISE 67%"


def base_frame() -> np.ndarray:
    r = np.random.default_rng(314)
    yy, xx = np.mgrid[0:FRAME_SHAPE[0], 0:FRAME_SHAPE[1]]
    img = np.stack([xx % 256, yy * 2 % 256, (xx + yy) % 256], axis=-1)
    return np.clip(img + r.integers(-20, 21, FRAME_SHAPE), 0, 255).astype(np.uint8)


def blend_oracle(frame, sprite, x0, y0):
    out = frame.copy()
    for j in range(sprite.shape[0]):
        for i in range(sprite.shape[1]):
            y, x = y0 + j, x0 + i
            if 0 <= y < out.shape[0] and 0 <= x < out.shape[1]:
                a = int(sprite[j, i, 3])
                for c in range(3):
                    out[y, x, c] = (a * int(sprite[j, i, c])
                                    + (255 - a) * int(frame[y, x, c]) + 127) // 255
    return out


def emoji_golden():
    sprite = read_pam(SPRITE)
    bx, by, bw, _ = EMOJI_BOX
    sh, sw = sprite.shape[:2]
    x = bx + (bw - sw) // 2
    y = max(0, by - sh - 4)
    return blend_oracle(base_frame(), sprite, x, y)


def text_golden():
    frame = base_frame()
    cols = 6 * len(TEXT) - 1
    bw, bh = 2 * cols + 4, 2 * 7 + 4
    bx, by, bwid, _ = TEXT_BOX
    x0 = min(max(bx + (bwid - bw) // 2, 0), frame.shape[1] - bw)
    y0 = max(0, by - bh - 4)
    out = frame.copy()
    for j in range(bh):
        for i in range(bw):
            out[y0 + j, x0 + i] = frame[y0 + j, x0 + i] // 2
    for n, ch in enumerate(TEXT):
        glyph = GLYPHS[ch]
        for gy in range(7):
            for gx in range(5):
                if glyph[gy, gx]:
                    px = x0 + 2 + 2 * (6 * n + gx)
                    py = y0 + 2 + 2 * gy
                    out[py:py + 2, px:px + 2] = 255
    return out


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "base.ppm").write_bytes(encode_ppm(base_frame()))
    (OUT / "emoji_golden.ppm").write_bytes(encode_ppm(emoji_golden()))
    (OUT / "text_golden.ppm").write_bytes(encode_ppm(text_golden()))


if __name__ == "__main__":
    main()
