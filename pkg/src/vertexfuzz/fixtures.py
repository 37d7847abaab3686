"""Seeded desk-scale attack targets: small ReLU networks on 8x8 grey images.

Weights and pixels come from the LCG64 stream, so the files are fully
determined by the seed. First-layer weights are zero-mean patterns that
are constant over 2x2 pixel blocks, plus a little per-pixel noise, which
gives the networks the spatial smoothness real image classifiers have. Images are coarse 4x4 patterns
upsampled to 8x8 with integer noise; each image is labelled with the
network's own prediction so every image starts correctly classified.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vertexfuzz.backends import FeedForwardModel, Layer, dumps_model
from vertexfuzz.core import InputVector
from vertexfuzz.harness import Dataset, dumps_dataset
from vertexfuzz.rng import LCG64, MASK64

FIXTURE_SEED = 2020
SIDE = 8
HIDDEN = 16
CLASSES = 10
IMAGES = 16
MODELS = 2

BLOCK = 2
WEIGHT_NOISE = 0.1
PIXEL_NOISE = 12
PATTERN_LOW, PATTERN_HIGH = 88.0, 168.0
INPUT_SCALE = 1 / 32
OUTPUT_SCALE = 1.0

# sha256 of each generated file for FIXTURE_SEED
PINNED_CHECKSUMS: dict[str, str] = {
    "fixture0.dsimg": "b90f5315a08ca7c2007791c469421f4a8f4b9858402246c455c8a25d89900af6",
    "fixture0.dsmodel": "4cd5c9b341b086be6538d844c6284ec1522cd86bfdd7261225cf5cc8c37cb452",
    "fixture1.dsimg": "41e4e0bb00ef35cf31dd2a97ca44f501572d842a4327d3f31b2e14c466302fd9",
    "fixture1.dsmodel": "ded48e6247809e73aee147f91ab0def0bffeeeb9b8f4685a6a40d379d3ef30ad",
}


@dataclass(frozen=True)
class Fixture:
    name: str
    model: FeedForwardModel
    dataset: Dataset


def _stream(seed: int, index: int, purpose: int) -> LCG64:
    return LCG64((seed * 0x9E3779B97F4A7C15 + index * 0xBF58476D1CE4E5B9 + purpose) & MASK64)


def fixture_model(seed: int, index: int) -> FeedForwardModel:
    rng = _stream(seed, index, 1)
    n = SIDE * SIDE
    blocks = SIDE // BLOCK
    w1 = np.empty((HIDDEN, n))
    for h in range(HIDDEN):
        coarse = np.array(rng.uniforms(blocks * blocks, -1.0, 1.0)).reshape(blocks, blocks)
        coarse -= coarse.mean()  # insensitive to uniform brightness shifts
        fine = np.kron(coarse, np.ones((BLOCK, BLOCK)))
        noise = np.array(rng.uniforms(n, -WEIGHT_NOISE, WEIGHT_NOISE)).reshape(SIDE, SIDE)
        w1[h] = (fine + noise).reshape(-1) * INPUT_SCALE
    # centre each unit on a mid-grey image so roughly half of them are active;
    # fsum keeps the checksum independent of the BLAS summation order
    centre = np.array([-math.fsum(row * 128.0) for row in w1])
    b1 = centre + np.array(rng.uniforms(HIDDEN, -1.0, 1.0))
    w2 = np.array(rng.uniforms(CLASSES * HIDDEN, -1.0, 1.0)).reshape(CLASSES, HIDDEN) * OUTPUT_SCALE
    b2 = np.array(rng.uniforms(CLASSES, -0.5, 0.5))
    return FeedForwardModel(
        (Layer(w1, b1, "relu"), Layer(w2, b2, "identity")),
        post="logsoftmax",
    )


def fixture_images(seed: int, index: int, count: int = IMAGES) -> list[InputVector]:
    rng = _stream(seed, index, 2)
    blocks = SIDE // BLOCK
    out = []
    for _ in range(count):
        coarse = np.array(rng.uniforms(blocks * blocks, PATTERN_LOW, PATTERN_HIGH)).reshape(blocks, blocks)
        img = np.kron(coarse, np.ones((BLOCK, BLOCK)))
        noise = np.array(rng.uniforms(SIDE * SIDE, -PIXEL_NOISE, PIXEL_NOISE)).reshape(SIDE, SIDE)
        img = np.clip(np.round(img + noise), 0, 255)
        out.append(InputVector.from_image(img))
    return out


def fixture_suite(seed: int = FIXTURE_SEED) -> list[Fixture]:
    suite = []
    for index in range(MODELS):
        model = fixture_model(seed, index)
        images = fixture_images(seed, index)
        labels = [int(np.argmax(model.evaluate(x.data))) for x in images]
        suite.append(Fixture(f"fixture{index}", model, Dataset(tuple(images), tuple(labels))))
    return suite


def fixture_files(seed: int = FIXTURE_SEED) -> dict[str, bytes]:
    files = {}
    for fx in fixture_suite(seed):
        files[f"{fx.name}.dsmodel"] = dumps_model(fx.model).encode("utf-8")
        files[f"{fx.name}.dsimg"] = dumps_dataset(fx.dataset)
    return files


def manifest(files: dict[str, bytes]) -> dict[str, str]:
    return {name: hashlib.sha256(blob).hexdigest() for name, blob in sorted(files.items())}


def write_fixtures(outdir, seed: int = FIXTURE_SEED, *, check: bool = True) -> dict[str, str]:
    """Write the fixture models and datasets plus MANIFEST.sha256 and return
    the manifest. With the default seed the checksums must match the pinned
    ones, otherwise ValueError is raised before anything is written."""
    files = fixture_files(seed)
    sums = manifest(files)
    if check and seed == FIXTURE_SEED and PINNED_CHECKSUMS:
        bad = sorted(k for k in sums if PINNED_CHECKSUMS.get(k) != sums[k])
        if bad or set(sums) != set(PINNED_CHECKSUMS):
            raise ValueError(f"fixture checksum mismatch against pinned manifest: {bad or sorted(sums)}")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, blob in files.items():
        (out / name).write_bytes(blob)
    lines = "".join(f"{digest}  {name}\n" for name, digest in sums.items())
    (out / "MANIFEST.sha256").write_text(lines, encoding="utf-8")
    return sums
