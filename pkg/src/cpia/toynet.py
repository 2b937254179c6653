"""A small self-contained image-to-image generator for desk-scale runs.

The layout mirrors a feed-forward style-transfer transformer: two strided
convolutions down, two residual blocks, two nearest-upsample convolutions
back up and a final tanh. Weights are seeded random draws, not trained, so
the output is a deterministic "style" of the input rather than anything
meaningful. At the default 64x64 input the bottleneck activations are
32 x 16 x 16.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .netgraph import NetworkSpec, load_network
from .tensor import TensorArchive

DEFAULT_HOOK = 6
TOY_MANIFEST = "toy_transformer.json"
TOY_WEIGHTS = "toy_transformer.cpia"


def make_toy_network(seed: int = 0, size: int = 64, width: int = 32,
                     n_residual: int = 2) -> tuple[dict, TensorArchive]:
    """Return ``(manifest, weights)`` for the reference toy transformer."""
    rng = np.random.default_rng(seed)
    archive = TensorArchive()
    layers: list[dict] = []
    half = width // 2

    def conv(cin, cout, k=3, stride=1):
        n = len(layers) + 1
        fan_in = cin * k * k
        archive.add(f"l{n}.kernel", rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, k, k)))
        archive.add(f"l{n}.bias", rng.normal(0.0, 0.05, cout))
        layers.append({"kind": "conv2d", "in_channels": cin, "out_channels": cout,
                       "kernel_size": k, "stride": stride, "padding": k // 2,
                       "weights": {"kernel": f"l{n}.kernel", "bias": f"l{n}.bias"}})

    def norm(c):
        n = len(layers) + 1
        archive.add(f"l{n}.gamma", 1.0 + rng.normal(0.0, 0.1, c))
        archive.add(f"l{n}.beta", rng.normal(0.0, 0.1, c))
        layers.append({"kind": "instance_norm", "eps": 1e-5,
                       "weights": {"gamma": f"l{n}.gamma", "beta": f"l{n}.beta"}})

    conv(3, half, stride=2)
    norm(half)
    layers.append({"kind": "relu"})
    conv(half, width, stride=2)
    norm(width)
    layers.append({"kind": "relu"})
    for _ in range(n_residual):
        src = len(layers)
        conv(width, width)
        norm(width)
        layers.append({"kind": "relu"})
        conv(width, width)
        norm(width)
        layers.append({"kind": "add_residual", "from": src})
    layers.append({"kind": "upsample_nearest", "scale": 2})
    conv(width, half)
    norm(half)
    layers.append({"kind": "relu"})
    layers.append({"kind": "upsample_nearest", "scale": 2})
    conv(half, 3)
    layers.append({"kind": "tanh"})

    manifest = {
        "name": "toy_transformer",
        "input_shape": [3, size, size],
        "operable_layers": [2, len(layers) - 3],
        "default_hook": DEFAULT_HOOK,
        "seed": seed,
        "weights": TOY_WEIGHTS,
        "importer_note": "layer indices count primitive layers (conv, norm, activation, "
                         "residual add, upsample), not composite blocks",
        "layers": layers,
    }
    return manifest, archive


def toy_network(seed: int = 0, **kwargs) -> NetworkSpec:
    manifest, archive = make_toy_network(seed, **kwargs)
    return load_network(manifest, archive)


def write_toy_network(directory, seed: int = 0, **kwargs) -> Path:
    """Write manifest and weight archive into ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest, archive = make_toy_network(seed, **kwargs)
    archive.write(directory / TOY_WEIGHTS)
    path = directory / TOY_MANIFEST
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def toy_scene(size: int = 64, seed: int = 0):
    """Synthetic input image plus two object masks.

    Returns ``(image, rois)`` where ``image`` is (3, size, size) in [-1, 1]
    and ``rois`` is a list of ``(label, score, mask)`` with boolean masks:
    a disc ("person") and a square ("dog") that do not overlap.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = np.stack([0.6 * xx - 0.3, 0.4 * yy - 0.2, 0.2 * (xx + yy) - 0.4])
    disc = (yy - 0.35) ** 2 + (xx - 0.3) ** 2 < 0.2 ** 2
    square = (yy > 0.5) & (yy < 0.9) & (xx > 0.55) & (xx < 0.9)
    img[:, disc] = np.array([0.8, 0.1, -0.5])[:, None]
    img[:, square] = np.array([-0.4, 0.7, 0.3])[:, None]
    img += rng.normal(0.0, 0.05, img.shape)
    img = np.clip(img, -1.0, 1.0).astype(np.float32)
    return img, [("person", 0.98, disc), ("dog", 0.91, square)]
