"""Regenerate the bundled placeholder emoji sprites (16x16 RGBA PAM files)."""

from pathlib import Path

import numpy as np

from aegis.media import encode_pam
from aegis.model_io import CLASS_LABELS

SIZE = 16
OUT = Path(__file__).resolve().parents[1] / "src" / "aegis" / "data" / "sprites"

FACE = {
    "anger": (230, 70, 40),
    "disgust": (140, 190, 60),
    "fear": (170, 180, 240),
    "happiness": (255, 210, 40),
    "sadness": (110, 160, 230),
    "surprise": (255, 190, 80),
    "neutral": (235, 200, 120),
}

# mouth rows as (row, first col, last col) spans
MOUTH = {
    "anger": [(11, 5, 10), (12, 4, 4), (12, 11, 11)],
    "disgust": [(11, 4, 7), (12, 8, 11)],
    "fear": [(11, 6, 9), (12, 5, 10), (13, 6, 9)],
    "happiness": [(10, 4, 4), (10, 11, 11), (11, 5, 10), (12, 6, 9)],
    "sadness": [(11, 6, 9), (12, 5, 5), (12, 10, 10)],
    "surprise": [(10, 7, 8), (11, 6, 9), (12, 6, 9), (13, 7, 8)],
    "neutral": [(11, 5, 10)],
}


def sprite(label: str) -> np.ndarray:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    d = np.hypot(yy - 7.5, xx - 7.5)
    img = np.zeros((SIZE, SIZE, 4), dtype=np.uint8)
    inside = d <= 7.5
    img[inside, :3] = FACE[label]
    img[inside, 3] = 255
    edge = inside & (d > 6.8)
    img[edge, 3] = 160
    ink = (40, 30, 20)
    for r, c in ((5, 5), (5, 10), (6, 5), (6, 10)):
        img[r, c, :3] = ink
    for r, c0, c1 in MOUTH[label]:
        img[r, c0:c1 + 1, :3] = ink
    return img


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for label in CLASS_LABELS:
        (OUT / f"{label}.pam").write_bytes(encode_pam(sprite(label)))


if __name__ == "__main__":
    main()
