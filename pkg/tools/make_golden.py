"""Regenerate the committed golden run under tests/data/golden.

The input is a 10-frame 64x64 sequence on a black ground with two textured
bright 8x8 squares (the detector fixture): one drifts diagonally through all
frames, the other appears at frame 3 and vanishes after frame 7. The expected
outputs are produced by running the pipeline once with the seed-42 t=3 model;
inspect them before committing.
"""

import hashlib
import json
import shutil
import tempfile
from pathlib import Path

import numpy as np

from aegis.media import encode_ppm
from aegis.model_io import gen_fixture
from aegis.pipeline import execute, load_config

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "data" / "golden"
CASCADE = ROOT / "src" / "aegis" / "data" / "square_cascade.json"

CONFIG = {
    "model_path": "model.tcvn",
    "cascade_path": "cascade.json",
    "t": 3,
    "scan": {"scale_factor": 1.25, "step": 1, "min_neighbors": 0},
    "overlay": {"mode": "emoji"},
    "input": {"frames": "input"},
    "output": {"frames": "out/frames", "predictions": "out/predictions.jsonl"},
    "mode": "deterministic_file",
}


def face_patch(rng: np.random.Generator) -> np.ndarray:
    px = rng.integers(180, 241, size=(8, 8, 1))
    tint = rng.integers(-12, 13, size=(8, 8, 3))
    return np.clip(px + tint, 0, 255).astype(np.uint8)


def make_frames() -> list[np.ndarray]:
    rng = np.random.default_rng(20201)
    frames = []
    for k in range(10):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        x, y = 8 + 2 * k, 14 + k
        img[y:y + 8, x:x + 8] = face_patch(rng)
        if 3 <= k <= 7:
            img[40:48, 46:54] = face_patch(rng)
        frames.append(img)
    return frames


def main() -> None:
    inp = GOLDEN / "input"
    if GOLDEN.exists():
        shutil.rmtree(GOLDEN)
    inp.mkdir(parents=True)
    for k, img in enumerate(make_frames()):
        (inp / f"frame_{k:03d}.ppm").write_bytes(encode_ppm(img))
    shutil.copy(CASCADE, GOLDEN / "cascade.json")
    (GOLDEN / "config.json").write_text(json.dumps(CONFIG, indent=2) + "\n")

    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp) / "golden"
        shutil.copytree(GOLDEN, work)
        gen_fixture(42, 3, work / "model.tcvn")
        digest = hashlib.sha256((work / "model.tcvn").read_bytes()).hexdigest()
        execute(load_config(work / "config.json"))
        shutil.copytree(work / "out", GOLDEN / "expected")
    (GOLDEN / "model.sha256").write_text(digest + "\n")


if __name__ == "__main__":
    main()
