"""Region-ordered painting: ROI ingestion, paint plans, per-step stroking and compositing.

A plan is a list of step images, each the network input masked to one
region. Steps are fed through the network in order; strokes are run at the
hook layer restricted to the step's region and accumulated on a canvas.
The canvas keeps, for every on-bit, the response value it had when it was
stroked. Rendering resumes the network from the canvas response and blends
the result over a background with an opacity that grows with the number of
stroked channels per location.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actionlog import ActionLog
from .exceptions import PlanError, ShapeError
from .imageio import read_mask
from .netgraph import NetworkSpec, forward_from, forward_to
from .stroke import StopCriterion, StrokeParams, run_strokes
from .tensor import as_chw

log = logging.getLogger(__name__)

BACKGROUND_COLORS = {"white": 1.0, "black": -1.0}

__all__ = [
    "CanvasState",
    "PaintPlan",
    "PaintResult",
    "PlanPolicy",
    "Roi",
    "RoiSet",
    "StepImage",
    "composite",
    "load_rois",
    "make_plan",
    "opacity_map",
    "paint",
    "region_to_layer",
    "upsample_bilinear",
]


@dataclass(frozen=True)
class Roi:
    label: str
    score: float
    mask: np.ndarray = field(repr=False)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class RoiSet:
    image_shape: tuple[int, int]
    entries: tuple[Roi, ...] = ()

    def __post_init__(self):
        for r in self.entries:
            if r.mask.shape != tuple(self.image_shape):
                raise PlanError(f"ROI {r.label!r}: mask shape {r.mask.shape} != image "
                                f"{tuple(self.image_shape)}")
            if not 0.0 <= r.score <= 1.0:
                raise PlanError(f"ROI {r.label!r}: score {r.score} out of range [0, 1]")

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_masks(cls, image_shape, items) -> "RoiSet":
        """Build from ``(label, score, mask)`` triples."""
        return cls(tuple(image_shape),
                   tuple(Roi(str(lb), float(s), np.asarray(m, dtype=bool)) for lb, s, m in items))


def load_rois(manifest) -> RoiSet:
    """Read ``{image: {width, height}, rois: [{label, score, mask_file}]}``.

    Mask paths are resolved relative to the manifest.
    """
    path = Path(manifest)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise PlanError(f"cannot read ROI manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PlanError(f"ROI manifest does not parse: {exc}") from exc
    try:
        shape = (int(doc["image"]["height"]), int(doc["image"]["width"]))
        entries = doc.get("rois", [])
    except (KeyError, TypeError, ValueError):
        raise PlanError("ROI manifest needs image.width and image.height") from None
    rois = []
    for e in entries:
        try:
            label, score, mfile = str(e["label"]), float(e["score"]), e["mask_file"]
        except (KeyError, TypeError, ValueError):
            raise PlanError(f"malformed ROI entry {e!r}") from None
        mpath = Path(mfile)
        if not mpath.is_absolute():
            mpath = path.parent / mpath
        try:
            mask = read_mask(mpath)
        except Exception as exc:
            raise PlanError(f"unreadable mask {mpath}: {exc}") from exc
        rois.append(Roi(label, score, mask))
    return RoiSet(shape, tuple(rois))


@dataclass(frozen=True)
class PlanPolicy:
    """How ROIs are ordered into steps.

    ``order``: ``by_score`` (descending), ``by_area_desc`` or ``explicit``
    (``explicit`` lists ROI indices). ``overrides`` is a list of
    ``{"label": ..., "position": "first" | "last"}`` moving every ROI with
    that label to the front or back. ``background`` places the complement
    of all ROIs ``first``, ``last`` or ``skip``s it.
    """

    order: str = "by_score"
    explicit: tuple[int, ...] = ()
    overrides: tuple[dict, ...] = ()
    background: str = "last"

    def validate(self) -> "PlanPolicy":
        if self.order not in ("by_score", "by_area_desc", "explicit"):
            raise PlanError(f"unknown plan order {self.order!r}")
        if self.background not in ("first", "last", "skip"):
            raise PlanError(f"background must be first, last or skip, got {self.background!r}")
        for o in self.overrides:
            if not isinstance(o, dict) or "label" not in o or o.get("position") not in ("first", "last"):
                raise PlanError(f"malformed override {o!r}")
        return self

    def to_dict(self) -> dict:
        return {"order": self.order, "explicit": list(self.explicit),
                "overrides": [dict(o) for o in self.overrides], "background": self.background}

    @classmethod
    def from_dict(cls, d: dict | None) -> "PlanPolicy":
        d = d or {}
        return cls(order=d.get("order", "by_score"), explicit=tuple(d.get("explicit", ())),
                   overrides=tuple(d.get("overrides", ())),
                   background=d.get("background", "last")).validate()


@dataclass(frozen=True)
class StepImage:
    region: np.ndarray = field(repr=False)
    provenance: tuple[str, ...]
    masked_input: np.ndarray | None = field(default=None, repr=False)

    def with_input(self, image) -> "StepImage":
        image = as_chw(image, "input image")
        if image.shape[1:] != self.region.shape:
            raise ShapeError(f"input image {image.shape[1:]} != region {self.region.shape}")
        masked = np.where(self.region[None], image, np.float32(0)).astype(np.float32)
        return StepImage(self.region, self.provenance, masked)


@dataclass(frozen=True)
class PaintPlan:
    steps: tuple[StepImage, ...]
    include_background: bool
    policy: PlanPolicy

    @property
    def labels(self) -> list[str]:
        return ["+".join(s.provenance) for s in self.steps]


def _order_rois(rois: RoiSet, policy: PlanPolicy) -> list[int]:
    idx = list(range(len(rois)))
    ent = rois.entries
    if policy.order == "by_score":
        idx.sort(key=lambda i: (-ent[i].score, -ent[i].area, i))
    elif policy.order == "by_area_desc":
        idx.sort(key=lambda i: (-ent[i].area, -ent[i].score, i))
    else:
        for i in policy.explicit:
            if not 0 <= i < len(rois):
                raise PlanError(f"explicit order references unknown ROI {i}")
        if len(set(policy.explicit)) != len(policy.explicit):
            raise PlanError("explicit order repeats an ROI")
        idx = list(policy.explicit)
    first, last = [], []
    for o in policy.overrides:
        group = first if o["position"] == "first" else last
        for i in idx:
            if ent[i].label == o["label"] and i not in first and i not in last:
                group.append(i)
    middle = [i for i in idx if i not in first and i not in last]
    return first + middle + last


def make_plan(rois: RoiSet, policy: PlanPolicy | None = None, image=None) -> PaintPlan:
    """Order ROIs into step images; ``image`` fills in each step's masked input.

    ROIs with empty masks are dropped. Default ordering is descending score,
    ties by larger area, then input order.
    """
    policy = (policy or PlanPolicy()).validate()
    order = _order_rois(rois, policy)
    steps = []
    for i in order:
        r = rois.entries[i]
        if not r.mask.any():
            log.warning("dropping ROI %d (%s): empty mask", i, r.label)
            continue
        steps.append(StepImage(r.mask.copy(), (r.label,)))
    include_bg = policy.background != "skip"
    if include_bg:
        union = np.zeros(rois.image_shape, dtype=bool)
        for r in rois.entries:
            union |= r.mask
        bg = ~union
        if bg.any():
            step = StepImage(bg, ("background",))
            steps = [step] + steps if policy.background == "first" else steps + [step]
        else:
            include_bg = False
    if not steps:
        raise PlanError("plan has no steps (no ROIs and background skipped)")
    if image is not None:
        steps = [s.with_input(image) for s in steps]
    return PaintPlan(tuple(steps), include_bg, policy)


def _overlap_matrix(n_out: int, n_in: int) -> np.ndarray:
    # A[i, j] = fraction of output cell i covered by input cell j
    edges_out = np.arange(n_out + 1, dtype=np.float64) * (n_in / n_out)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
    return np.clip(hi - lo, 0.0, None) / (n_in / n_out)


def region_to_layer(region, layer_shape: tuple[int, int]) -> np.ndarray:
    """Area-average an image-space mask onto the layer grid, on at coverage >= 0.5.

    A region with any on-pixel yields at least one on layer location.
    """
    region = np.asarray(region, dtype=bool)
    Hl, Wl = layer_shape
    if region.ndim != 2 or min(region.shape) < 1 or Hl < 1 or Wl < 1:
        raise ShapeError("region and layer shape must be positive 2-D")
    A = _overlap_matrix(Hl, region.shape[0])
    B = _overlap_matrix(Wl, region.shape[1])
    cover = A @ region.astype(np.float64) @ B.T
    out = cover >= 0.5
    if region.any() and not out.any():
        out.flat[int(np.argmax(cover))] = True
    return out


def opacity_map(counts, tau: int, gamma: float = 1.0) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if (counts < 0).any() or (counts > tau).any():
        raise ValueError("counts must lie in [0, tau]")
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    return (counts / tau) ** gamma


def _lerp_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_in == n_out:
        return a
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    a0 = np.take(a, i0, axis=axis)
    a1 = np.take(a, i1, axis=axis)
    shape = [1] * a.ndim
    shape[axis] = n_out
    # a0 + t * (a1 - a0) reproduces constant inputs exactly
    return a0 + t.reshape(shape) * (a1 - a0)


def upsample_bilinear(alpha, out_shape: tuple[int, int]) -> np.ndarray:
    """Half-pixel-centred bilinear resize with edge clamping."""
    a = np.asarray(alpha, dtype=np.float64)
    return _lerp_axis(_lerp_axis(a, out_shape[0], 0), out_shape[1], 1)


def composite(raw_output, alpha, background="white") -> np.ndarray:
    """Blend ``alpha * raw + (1 - alpha) * background`` after resizing alpha.

    ``background`` is ``"white"``, ``"black"`` or a (3, H, W) image.
    """
    raw = np.asarray(raw_output, dtype=np.float32)
    if raw.ndim != 3:
        raise ShapeError(f"raw output must be (C, H, W), got {raw.shape}")
    a = upsample_bilinear(alpha, raw.shape[1:])[None]
    if isinstance(background, str):
        if background not in BACKGROUND_COLORS:
            raise ValueError(f"background must be white, black or an image, got {background!r}")
        bg = np.full(raw.shape, BACKGROUND_COLORS[background], dtype=np.float64)
    else:
        bg = np.asarray(background, dtype=np.float64)
        if bg.shape != raw.shape:
            raise ShapeError(f"background shape {bg.shape} != output {raw.shape}")
    return (a * raw.astype(np.float64) + (1.0 - a) * bg).astype(np.float32)


@dataclass
class CanvasState:
    mask: np.ndarray
    response: np.ndarray

    @classmethod
    def empty(cls, shape) -> "CanvasState":
        return cls(np.zeros(shape, dtype=bool), np.zeros(shape, dtype=np.float32))

    @property
    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=0)


@dataclass
class PaintResult:
    image: np.ndarray
    logs: list[ActionLog]
    frames: list[np.ndarray]
    canvas: CanvasState
    step_masks: list[np.ndarray]
    step_labels: list[str]
    stop_reasons: list[str]
    raw_output: np.ndarray | None = None


def paint(net: NetworkSpec, hook: int, plan: PaintPlan, params: StrokeParams,
          stop: StopCriterion | None = None, frame_every: int = 0, image=None,
          background="white", gamma: float = 1.0) -> PaintResult:
    """Run every plan step in order and render the final frame.

    A frame is rendered after every step, and additionally every
    ``frame_every`` actions when it is positive. ``background`` may also be
    ``"input"`` to blend over the network input image.
    """
    hook = net.check_hook(hook)
    stop = stop if stop is not None else StopCriterion()
    if frame_every < 0:
        raise ValueError("frame_every must be >= 0")
    steps = list(plan.steps)
    if image is not None:
        steps = [s.with_input(image) for s in steps]
    for s in steps:
        if s.masked_input is None:
            raise PlanError("plan steps lack inputs; pass image=")
        if s.masked_input.shape != net.input_shape:
            raise ShapeError(f"step input {s.masked_input.shape} != network input {net.input_shape}")
    if isinstance(background, str) and background == "input":
        if image is None:
            raise PlanError("background='input' needs image=")
        background = as_chw(image, "input image")
    layer_shape = net.output_shape(hook)
    canvas = CanvasState.empty(layer_shape)
    tau = params.tau

    frames: list[np.ndarray] = []
    logs: list[ActionLog] = []
    step_masks: list[np.ndarray] = []
    reasons: list[str] = []

    def render(response, counts, cache):
        raw = forward_from(net, hook, response, cache)
        return composite(raw, opacity_map(counts, tau, gamma), background)

    for step in steps:
        y, cache = forward_to(net, step.masked_input, hook, return_cache=True)
        region_l = region_to_layer(step.region, layer_shape[1:])
        before = canvas.mask.copy()
        callback = None
        if frame_every > 0:
            def callback(state, action, y=y, cache=cache, before=before):
                if (action.seq + 1) % frame_every == 0:
                    resp = np.where(state.mask & ~before, y, canvas.response)
                    frames.append(render(resp, state.counts, cache))
        mask, slog = run_strokes(y, params, stop, region=region_l, initial_mask=canvas.mask,
                                 callback=callback)
        new = mask & ~before
        canvas.response = np.where(new, y, canvas.response).astype(np.float32)
        canvas.mask = mask
        logs.append(slog)
        step_masks.append(new)
        reasons.append(slog.stop_reason)
        frames.append(render(canvas.response, canvas.counts, cache))
        last_cache = cache

    final = frames[-1]
    raw = forward_from(net, hook, canvas.response, last_cache)
    return PaintResult(image=final, logs=logs, frames=frames, canvas=canvas,
                       step_masks=step_masks, step_labels=["+".join(s.provenance) for s in steps],
                       stop_reasons=reasons, raw_output=raw)


def plan_from_images(image_shape: Sequence[int], items, policy: PlanPolicy | None = None,
                     image=None) -> PaintPlan:
    """Shortcut: ``make_plan(RoiSet.from_masks(image_shape, items), policy, image)``."""
    return make_plan(RoiSet.from_masks(image_shape, items), policy, image)
