import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from aegis.media import encode_ppm
from aegis.model_io import gen_fixture

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"


@pytest.fixture(scope="session")
def seed42_model(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("model") / "seed42_t3.tcvn"
    gen_fixture(42, 3, path)
    return path


@pytest.fixture
def golden_workdir(tmp_path, seed42_model) -> Path:
    """A scratch copy of the golden input with the seed-42 model in place."""
    work = tmp_path / "golden"
    shutil.copytree(GOLDEN, work, ignore=shutil.ignore_patterns("expected"))
    shutil.copy(seed42_model, work / "model.tcvn")
    return work


def write_bench_input(work: Path, model: Path, frames: int = 8) -> Path:
    """240x320 frames with one drifting 32x32 face; returns the config path."""
    rng = np.random.default_rng(240320)
    inp = work / "input"
    inp.mkdir(parents=True)
    for k in range(frames):
        img = rng.integers(0, 30, (240, 320, 3)).astype(np.uint8)
        x, y = 120 + 4 * k, 90 + 2 * k
        img[y:y + 32, x:x + 32] = rng.integers(190, 231, (32, 32, 1))
        (inp / f"frame_{k:03d}.ppm").write_bytes(encode_ppm(img))
    cfg = {"model_path": str(model), "t": 3, "input": {"frames": "input"},
           "output": {"frames": "out", "predictions": "out/p.jsonl"},
           "scan": {"scale_factor": 1.25, "step": 2, "min_neighbors": 0}}
    path = work / "bench.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def bench_config(tmp_path, seed42_model) -> Path:
    return write_bench_input(tmp_path / "bench", seed42_model)
