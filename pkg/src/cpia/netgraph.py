"""Minimal feed-forward convolutional network evaluator with a hook point.

A network is an ordered list of primitive layers. Layer ``i`` (1-based)
maps the activation ``Y[i-1]`` to ``Y[i]``; ``Y[0]`` is the network input.
:func:`forward_to` stops after layer ``l`` and :func:`forward_from` resumes
from a (possibly modified) ``Y[l]``, so that::

    forward_from(net, l, phi(forward_to(net, x, l)))

inserts an arbitrary operation ``phi`` after layer ``l``.

Manifest format (JSON)::

    {"name": ..., "input_shape": [C, H, W], "operable_layers": [lo, hi],
     "weights": "relative/path/to/archive", "importer_note": "...",
     "layers": [{"kind": "conv2d", "in_channels": 3, "out_channels": 8,
                 "kernel_size": 3, "stride": 1, "padding": 1,
                 "weights": {"kernel": "name", "bias": "name"}},
                {"kind": "instance_norm", "eps": 1e-5,
                 "weights": {"gamma": "name", "beta": "name"}},
                {"kind": "relu"}, {"kind": "tanh"},
                {"kind": "upsample_nearest", "scale": 2},
                {"kind": "add_residual", "from": 3}]}

``add_residual.from`` names a layer index (0 is the network input) whose
output is added to the current activation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import NetworkError, ShapeError
from .tensor import TensorArchive, as_chw

LAYER_KINDS = ("conv2d", "upsample_nearest", "relu", "tanh", "instance_norm", "add_residual")

__all__ = [
    "LAYER_KINDS",
    "LayerSpec",
    "NetworkSpec",
    "evaluate_layer",
    "forward",
    "forward_from",
    "forward_to",
    "load_network",
]


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    weights: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    weight_refs: dict[str, str] = field(default_factory=dict)

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        C, H, W = in_shape
        if self.kind == "conv2d":
            k, s, p = self.params["kernel_size"], self.params["stride"], self.params["padding"]
            if C != self.params["in_channels"]:
                raise NetworkError(
                    f"shape-chain break: conv2d expects {self.params['in_channels']} "
                    f"input channels, got {C}")
            Ho, Wo = (H + 2 * p - k) // s + 1, (W + 2 * p - k) // s + 1
            if Ho < 1 or Wo < 1:
                raise NetworkError(f"shape-chain break: conv2d output empty for input {in_shape}")
            return (self.params["out_channels"], Ho, Wo)
        if self.kind == "upsample_nearest":
            f = self.params["scale"]
            return (C, H * f, W * f)
        if self.kind == "instance_norm":
            g = self.weights.get("gamma")
            if g is not None and g.shape != (C,):
                raise NetworkError(f"shape-chain break: instance_norm affine for {g.shape[0]} "
                                   f"channels fed {C}")
        return in_shape


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    shapes: tuple[tuple[int, int, int], ...]
    operable_layers: tuple[int, int] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def output_shape(self, l: int | None = None) -> tuple[int, int, int]:
        """Shape of ``Y[l]`` (the final output when ``l`` is None)."""
        return self.shapes[self.n_layers if l is None else l]

    def check_hook(self, l: int) -> int:
        if not isinstance(l, (int, np.integer)) or not 1 <= l <= self.n_layers - 1:
            raise NetworkError(f"hook layer {l} out of range 1..{self.n_layers - 1}")
        return int(l)

    def crossing_residuals(self, l: int) -> list[int]:
        """Residual sources before ``l`` that are consumed after ``l``."""
        out = []
        for i, layer in enumerate(self.layers, start=1):
            if layer.kind == "add_residual" and i > l and layer.params["from"] < l:
                out.append(layer.params["from"])
        return sorted(set(out))


def _layer_from_json(i: int, doc: dict, archive: TensorArchive | None) -> LayerSpec:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise NetworkError(f"layer {i}: missing 'kind'")
    kind = doc["kind"]
    if kind not in LAYER_KINDS:
        raise NetworkError(f"layer {i}: unknown layer kind {kind!r}")
    refs = dict(doc.get("weights", {}) or {})
    params: dict[str, Any] = {}
    if kind == "conv2d":
        try:
            params = {"in_channels": int(doc["in_channels"]), "out_channels": int(doc["out_channels"]),
                      "kernel_size": int(doc["kernel_size"]), "stride": int(doc.get("stride", 1)),
                      "padding": int(doc.get("padding", 0))}
        except KeyError as exc:
            raise NetworkError(f"layer {i}: conv2d missing {exc.args[0]!r}") from None
        if params["stride"] < 1 or params["padding"] < 0 or params["kernel_size"] < 1:
            raise NetworkError(f"layer {i}: invalid conv2d geometry {params}")
        if "kernel" not in refs:
            raise NetworkError(f"layer {i}: conv2d needs a 'kernel' weight ref")
    elif kind == "upsample_nearest":
        params = {"scale": int(doc.get("scale", 2))}
        if params["scale"] < 1:
            raise NetworkError(f"layer {i}: upsample factor must be >= 1")
    elif kind == "instance_norm":
        params = {"eps": float(doc.get("eps", 1e-5))}
        if not params["eps"] > 0:
            raise NetworkError(f"layer {i}: instance_norm eps must be > 0")
    elif kind == "add_residual":
        if "from" not in doc:
            raise NetworkError(f"layer {i}: add_residual needs 'from'")
        params = {"from": int(doc["from"])}
        if not 0 <= params["from"] < i:
            raise NetworkError(f"layer {i}: residual source {params['from']} must precede it")

    weights: dict[str, np.ndarray] = {}
    for role, ref in refs.items():
        if archive is None or ref not in archive:
            raise NetworkError(f"layer {i}: unresolved weight name {ref!r}")
        w = np.asarray(archive[ref], dtype=np.float32)
        if not np.isfinite(w).all():
            raise NetworkError(f"layer {i}: non-finite weights in {ref!r}")
        weights[role] = w

    if kind == "conv2d":
        k = params["kernel_size"]
        want = (params["out_channels"], params["in_channels"], k, k)
        if weights["kernel"].shape != want:
            raise NetworkError(f"layer {i}: kernel shape {weights['kernel'].shape} != {want}")
        b = weights.get("bias")
        if b is not None and b.shape != (params["out_channels"],):
            raise NetworkError(f"layer {i}: bias shape {b.shape} != ({params['out_channels']},)")
    if kind == "instance_norm":
        if ("gamma" in weights) != ("beta" in weights):
            raise NetworkError(f"layer {i}: instance_norm affine needs both gamma and beta")
        if "gamma" in weights and (weights["gamma"].ndim != 1
                                   or weights["gamma"].shape != weights["beta"].shape):
            raise NetworkError(f"layer {i}: instance_norm affine shapes disagree")
    return LayerSpec(kind=kind, params=params, weights=weights, weight_refs=refs)


def load_network(manifest, weights=None) -> NetworkSpec:
    """Build a validated :class:`NetworkSpec`.

    ``manifest`` is a path to a JSON manifest or an already parsed dict.
    ``weights`` is a :class:`TensorArchive` or a path to one; when omitted
    the manifest's ``"weights"`` entry (relative to the manifest file) is used.
    """
    base = None
    if isinstance(manifest, (str, Path)):
        base = Path(manifest).parent
        try:
            manifest = json.loads(Path(manifest).read_text())
        except OSError as exc:
            raise NetworkError(f"cannot read manifest: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise NetworkError(f"manifest does not parse: {exc}") from exc
    if not isinstance(manifest, dict):
        raise NetworkError("manifest must be a JSON object")
    if weights is None and manifest.get("weights"):
        wpath = Path(manifest["weights"])
        if base is not None and not wpath.is_absolute():
            wpath = base / wpath
        weights = wpath
    if isinstance(weights, (str, Path)):
        weights = TensorArchive.read(weights)

    try:
        input_shape = tuple(int(s) for s in manifest["input_shape"])
        layer_docs = manifest["layers"]
    except (KeyError, TypeError, ValueError):
        raise NetworkError("manifest needs 'input_shape' and 'layers'") from None
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise NetworkError(f"input_shape must be (C, H, W), got {input_shape}")
    if not layer_docs:
        raise NetworkError("manifest declares no layers")

    layers = tuple(_layer_from_json(i, d, weights) for i, d in enumerate(layer_docs, start=1))
    shapes = [input_shape]
    for i, layer in enumerate(layers, start=1):
        try:
            out = layer.output_shape(shapes[-1])
        except NetworkError as exc:
            raise NetworkError(f"layer {i}: {exc}") from None
        if layer.kind == "add_residual" and shapes[layer.params["from"]] != out:
            raise NetworkError(f"layer {i}: shape-chain break, residual source "
                               f"{shapes[layer.params['from']]} vs {out}")
        shapes.append(out)

    operable = manifest.get("operable_layers")
    if operable is not None:
        lo, hi = (int(v) for v in operable)
        if not 1 <= lo <= hi <= len(layers) - 1:
            raise NetworkError(f"operable_layers {operable} outside 1..{len(layers) - 1}")
        operable = (lo, hi)
    meta = {k: v for k, v in manifest.items() if k not in ("layers", "input_shape")}
    return NetworkSpec(name=str(manifest.get("name", "network")), input_shape=input_shape,
                       layers=layers, shapes=tuple(shapes), operable_layers=operable, metadata=meta)


# layer kernels; all accumulate in float64 and store float32


def _conv2d(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    k, s, p = layer.params["kernel_size"], layer.params["stride"], layer.params["padding"]
    kernel = layer.weights["kernel"].astype(np.float64)
    C, H, W = x.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (p, p), (p, p)))
    Ho, Wo = (H + 2 * p - k) // s + 1, (W + 2 * p - k) // s + 1
    # cross-correlation: patches[c, i, j, ho, wo] = xp[c, ho*s + i, wo*s + j]
    patches = np.empty((C, k, k, Ho, Wo), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            patches[:, i, j] = xp[:, i: i + s * (Ho - 1) + 1: s, j: j + s * (Wo - 1) + 1: s]
    out = np.tensordot(kernel, patches, axes=([1, 2, 3], [0, 1, 2]))
    bias = layer.weights.get("bias")
    if bias is not None:
        out += bias.astype(np.float64)[:, None, None]
    return out.astype(np.float32)


def _instance_norm(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=(1, 2), keepdims=True)
    var = ((x64 - mean) ** 2).mean(axis=(1, 2), keepdims=True)
    out = (x64 - mean) / np.sqrt(var + layer.params["eps"])
    if "gamma" in layer.weights:
        out = out * layer.weights["gamma"].astype(np.float64)[:, None, None] \
            + layer.weights["beta"].astype(np.float64)[:, None, None]
    return out.astype(np.float32)


def evaluate_layer(layer: LayerSpec, x, residual=None) -> np.ndarray:
    """Apply a single layer to ``x``; ``residual`` feeds ``add_residual``."""
    x = as_chw(x, "layer input")
    if layer.kind == "conv2d":
        if x.shape[0] != layer.params["in_channels"]:
            raise ShapeError(f"conv2d expects {layer.params['in_channels']} channels, got {x.shape[0]}")
        k, p = layer.params["kernel_size"], layer.params["padding"]
        if x.shape[1] + 2 * p < k or x.shape[2] + 2 * p < k:
            raise ShapeError(f"conv2d kernel {k} larger than padded input {x.shape}")
        return _conv2d(x, layer)
    if layer.kind == "relu":
        return np.maximum(x, np.float32(0))
    if layer.kind == "tanh":
        return np.tanh(x.astype(np.float64)).astype(np.float32)
    if layer.kind == "instance_norm":
        g = layer.weights.get("gamma")
        if g is not None and g.shape[0] != x.shape[0]:
            raise ShapeError(f"instance_norm affine for {g.shape[0]} channels fed {x.shape[0]}")
        return _instance_norm(x, layer)
    if layer.kind == "upsample_nearest":
        f = layer.params["scale"]
        return np.repeat(np.repeat(x, f, axis=1), f, axis=2)
    if layer.kind == "add_residual":
        if residual is None:
            raise ShapeError("add_residual needs the source activation")
        r = np.asarray(residual, dtype=np.float32)
        if r.shape != x.shape:
            raise ShapeError(f"residual shape {r.shape} != {x.shape}")
        return (x.astype(np.float64) + r.astype(np.float64)).astype(np.float32)
    raise NetworkError(f"unknown layer kind {layer.kind!r}")


def _check_input(net: NetworkSpec, x) -> np.ndarray:
    x = as_chw(x, "network input")
    if x.shape != net.input_shape:
        raise ShapeError(f"input shape {x.shape} != network input {net.input_shape}")
    return x


def _run(net: NetworkSpec, y: np.ndarray, start: int, stop: int,
         cache: dict[int, np.ndarray]) -> np.ndarray:
    # evaluates layers start+1..stop; cache maps layer index -> output
    needed = {layer.params["from"] for layer in net.layers if layer.kind == "add_residual"}
    for i in range(start + 1, stop + 1):
        layer = net.layers[i - 1]
        res = None
        if layer.kind == "add_residual":
            src = layer.params["from"]
            if src not in cache:
                raise ShapeError(f"layer {i}: residual source {src} not available; "
                                 "pass the cache returned by forward_to")
            res = cache[src]
        y = evaluate_layer(layer, y, res)
        if i in needed:
            cache[i] = y
    return y


def forward(net: NetworkSpec, x) -> np.ndarray:
    """Plain unhooked forward pass, returns ``Y[L]``."""
    x = _check_input(net, x)
    return _run(net, x, 0, net.n_layers, {0: x})


def forward_to(net: NetworkSpec, x, l: int, return_cache: bool = False):
    """Run layers ``1..l`` and return ``Y[l]``.

    With ``return_cache`` the residual-source activations needed to resume
    are returned as well, as ``(y, cache)``.
    """
    l = net.check_hook(l)
    x = _check_input(net, x)
    cache = {0: x}
    y = _run(net, x, 0, l, cache)
    cache[l] = y
    if return_cache:
        return y, cache
    return y


def forward_from(net: NetworkSpec, l: int, y, cache: dict[int, np.ndarray] | None = None
                 ) -> np.ndarray:
    """Resume the forward pass from a replacement ``Y[l]`` and return ``Y[L]``.

    ``cache`` is only required when a residual connection spans layer ``l``.
    Cached entries at or after ``l`` are ignored; ``y`` is authoritative.
    """
    l = net.check_hook(l)
    y = as_chw(y, "hook activation")
    if y.shape != net.output_shape(l):
        raise ShapeError(f"activation shape {y.shape} != layer {l} output {net.output_shape(l)}")
    ctx = {k: v for k, v in (cache or {}).items() if k < l}
    ctx[l] = y
    return _run(net, y, l, net.n_layers, ctx)
