"""Greedy channel stroking over a CHW activation.

Each iteration picks the eligible pixel maximizing ``(1 - G) * Y`` where
``G`` combines a channel-change cost and a Gaussian movement cost centred
on the previous stroke. The picked pixel, plus up to ``p - 1`` other strong
channels at the same location, is extended over a ``(2z+1)``-square box of
neighbours whose response is at least ``m`` times the centre response.
No location ever holds more than ``tau`` on-bits.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass, replace

import numpy as np

from .actionlog import ActionLog, StrokeAction, tensor_checksum
from .channel_ops import COMPARE_MODES, as_mask, compared
from .exceptions import ShapeError
from .tensor import as_chw

COST_MODES = ("continuation", "literal")

__all__ = [
    "COST_MODES",
    "StopCriterion",
    "StrokeParams",
    "StrokeState",
    "channel_cost",
    "combine_costs",
    "movement_cost",
    "neighborhood",
    "penetrate",
    "pick_pixel",
    "run_strokes",
    "selection_weight",
    "stroke_step",
]


@dataclass(frozen=True)
class StrokeParams:
    """Stroke configuration.

    ``sigma=None`` resolves to ``max(H, W) / 4`` at run time.
    ``movement=False`` switches the movement cost off entirely (K = 0).
    Defaults: ``m=0.95`` and ``p=2``; ``z``, ``g_c`` and ``sigma`` defaults are
    conservative choices with no tuning behind them.
    """

    tau: int
    m: float = 0.95
    z: int = 1
    p: int = 2
    g_c: float = 0.5
    sigma: float | None = None
    movement: bool = True
    cost_mode: str = "continuation"
    compare: str = "signed"

    def validate(self, C: int | None = None) -> "StrokeParams":
        if not isinstance(self.tau, (int, np.integer)) or self.tau < 1:
            raise ValueError(f"tau must be a positive integer, got {self.tau!r}")
        if not 0.0 < self.m < 1.0:
            raise ValueError(f"sensitivity m must lie in (0, 1), got {self.m}")
        if not isinstance(self.z, (int, np.integer)) or self.z < 0:
            raise ValueError(f"stroke size z must be a non-negative integer, got {self.z!r}")
        if not isinstance(self.p, (int, np.integer)) or self.p < 1:
            raise ValueError(f"penetration p must be a positive integer, got {self.p!r}")
        if not 0.0 <= self.g_c < 1.0:
            raise ValueError(f"channel cost g_c must lie in [0, 1), got {self.g_c}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.cost_mode not in COST_MODES:
            raise ValueError(f"cost_mode must be one of {COST_MODES}")
        if self.compare not in COMPARE_MODES:
            raise ValueError(f"compare must be one of {COMPARE_MODES}")
        if C is not None:
            if self.tau > C:
                raise ValueError(f"tau={self.tau} exceeds channel count {C}")
            if self.p > C:
                raise ValueError(f"p={self.p} exceeds channel count {C}")
        return self

    def resolved(self, shape: tuple[int, int, int]) -> "StrokeParams":
        if self.sigma is None:
            return replace(self, sigma=max(shape[1], shape[2]) / 4.0)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("tau", "z", "p"):
            d[k] = int(d[k])
        return d


@dataclass(frozen=True)
class StopCriterion:
    """Any combination of stopping rules; the run also stops when no pixel is eligible.

    ``response_ratio``: stop when the picked response falls below
    ``ratio * Y_max``. ``max_strokes``: stop after that many actions.
    ``painted_fraction``: stop once that fraction of region locations holds
    at least one on-bit. All ``None`` means run to exhaustion.
    """

    response_ratio: float | None = 0.1
    max_strokes: int | None = None
    painted_fraction: float | None = None

    def validate(self) -> "StopCriterion":
        if self.response_ratio is not None and not 0.0 < self.response_ratio <= 1.0:
            raise ValueError(f"response_ratio must lie in (0, 1], got {self.response_ratio}")
        if self.max_strokes is not None and (not isinstance(self.max_strokes, (int, np.integer))
                                             or self.max_strokes < 0):
            raise ValueError(f"max_strokes must be a non-negative integer, got {self.max_strokes!r}")
        if self.painted_fraction is not None and not 0.0 < self.painted_fraction <= 1.0:
            raise ValueError(f"painted_fraction must lie in (0, 1], got {self.painted_fraction}")
        return self

    @classmethod
    def exhaustion(cls) -> "StopCriterion":
        return cls(response_ratio=None)

    def to_dict(self) -> dict:
        return asdict(self)


# action costs


def movement_cost(current: tuple[int, int], shape: tuple[int, int], sigma: float) -> np.ndarray:
    """``1 - exp(-d^2 / (2 sigma^2))`` over the H x W grid, 0 at ``current``."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    H, W = shape
    h, w = current
    dh = (np.arange(H, dtype=np.float64) - h) ** 2
    dw = (np.arange(W, dtype=np.float64) - w) ** 2
    d2 = dh[:, None] + dw[None, :]
    # + 0.0 turns the -0.0 at the centre into 0.0
    return -np.expm1(-d2 / (2.0 * sigma * sigma)) + 0.0


def channel_cost(current_channel: int, C: int, g_c: float, mode: str = "continuation") -> np.ndarray:
    """Per-channel cost vector.

    ``continuation`` charges ``g_c`` for switching away from the current
    channel; ``literal`` charges it on the current channel itself.
    """
    if not 0.0 <= g_c < 1.0:
        raise ValueError("g_c must lie in [0, 1)")
    same = np.arange(C) == current_channel
    if mode == "continuation":
        return np.where(same, 0.0, g_c)
    if mode == "literal":
        return np.where(same, g_c, 0.0)
    raise ValueError(f"cost mode must be one of {COST_MODES}, got {mode!r}")


def combine_costs(J: np.ndarray, K: np.ndarray, mode: str = "continuation") -> np.ndarray:
    """Broadcast a (C,) channel cost and an (H, W) movement cost to (C, H, W).

    ``continuation``: ``1 - (1 - J)(1 - K)``. ``literal``: ``J * K``.
    """
    J = np.asarray(J, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if J.ndim != 1 or K.ndim != 2:
        raise ShapeError(f"expected J of shape (C,) and K of shape (H, W), got {J.shape}, {K.shape}")
    if mode == "continuation":
        return 1.0 - (1.0 - J)[:, None, None] * (1.0 - K)[None, :, :]
    if mode == "literal":
        return J[:, None, None] * K[None, :, :]
    raise ValueError(f"cost mode must be one of {COST_MODES}, got {mode!r}")


def selection_weight(y, g, compare: str = "signed") -> np.ndarray:
    y = np.asarray(y)
    g = np.asarray(g, dtype=np.float64)
    if y.shape != g.shape:
        raise ShapeError(f"cost field shape {g.shape} != activation shape {y.shape}")
    return (1.0 - g) * compared(y.astype(np.float64), compare)


def pick_pixel(w, mask, tau: int, region=None) -> tuple[int, int, int] | None:
    """Argmax of ``w`` over pixels that are off at locations below the cap.

    Ties resolve to the lowest ``(c, h, w)`` in row-major order.
    """
    w = np.asarray(w, dtype=np.float64)
    mask = as_mask(mask, w.shape)
    counts = mask.sum(axis=0)
    eligible = ~mask & (counts < tau)[None]
    if region is not None:
        eligible &= as_mask(region, w.shape[1:])[None]
    return _argmax_eligible(w, eligible)


def _argmax_eligible(w: np.ndarray, eligible: np.ndarray) -> tuple[int, int, int] | None:
    if not eligible.any():
        return None
    flat = int(np.argmax(np.where(eligible, w, -np.inf)))
    c, h, ww = np.unravel_index(flat, w.shape)
    return int(c), int(h), int(ww)


def neighborhood(y, pixel: tuple[int, int, int], z: int, m: float,
                 compare: str = "signed") -> list[tuple[int, int, int]]:
    """Pixels on ``pixel``'s channel within the (2z+1) box meeting the ``m`` threshold.

    Row-major order; the centre is always included.
    """
    if not 0.0 < m < 1.0:
        raise ValueError("m must lie in (0, 1)")
    if z < 0:
        raise ValueError("z must be >= 0")
    y = np.asarray(y)
    c, h, w = pixel
    _, H, W = y.shape
    h0, h1 = max(0, h - z), min(H, h + z + 1)
    w0, w1 = max(0, w - z), min(W, w + z + 1)
    score = compared(y[c, h0:h1, w0:w1].astype(np.float64), compare)
    centre = float(compared(np.float64(y[c, h, w]), compare))
    keep = score >= m * centre
    keep[h - h0, w - w0] = True
    hs, ws = np.nonzero(keep)
    return [(c, int(a) + h0, int(b) + w0) for a, b in zip(hs, ws)]


def penetrate(y, mask, location: tuple[int, int], p: int, tau: int, channel: int,
              compare: str = "signed") -> list[int]:
    """Stroking channel followed by up to ``p - 1`` strongest channels still off at ``location``.

    The list is truncated so the location never exceeds ``tau`` on-bits.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    y = np.asarray(y)
    mask = as_mask(mask, y.shape)
    h, w = location
    free = tau - int(mask[:, h, w].sum()) - (0 if mask[channel, h, w] else 1)
    extra = max(0, min(p - 1, free))
    out = [channel]
    if extra:
        score = compared(y[:, h, w].astype(np.float64), compare)
        order = np.argsort(-score, kind="stable")
        for c in order:
            if len(out) > extra:
                break
            c = int(c)
            if c != channel and not mask[c, h, w]:
                out.append(c)
    return out


# the loop


@dataclass
class StrokeState:
    """Mutable run state; owned by exactly one run."""

    mask: np.ndarray
    counts: np.ndarray
    region: np.ndarray
    y_max: float | None
    region_size: int
    last: tuple[int, int, int] | None = None
    n_actions: int = 0
    stop_reason: str | None = None

    @classmethod
    def start(cls, y: np.ndarray, params: StrokeParams, region=None, initial_mask=None
              ) -> "StrokeState":
        C, H, W = y.shape
        if region is None:
            region = np.ones((H, W), dtype=bool)
        else:
            region = as_mask(region, (H, W)).copy()
        if not region.any():
            raise ShapeError("empty region: no location to paint")
        if initial_mask is None:
            mask = np.zeros(y.shape, dtype=bool)
        else:
            mask = as_mask(initial_mask, y.shape).copy()
        counts = mask.sum(axis=0).astype(np.int64)
        if (counts > params.tau).any():
            raise ValueError("initial mask already exceeds tau at some location")
        eligible = ~mask & (counts < params.tau)[None] & region[None]
        score = compared(y.astype(np.float64), params.compare)
        y_max = float(score[eligible].max()) if eligible.any() else None
        return cls(mask=mask, counts=counts, region=region, y_max=y_max,
                   region_size=int(region.sum()))

    def painted_fraction(self) -> float:
        return float(((self.counts > 0) & self.region).sum()) / self.region_size


def cost_field(state: StrokeState, shape: tuple[int, int, int], params: StrokeParams) -> np.ndarray:
    if state.last is None:
        return np.zeros(shape, dtype=np.float64)
    C, H, W = shape
    c, h, w = state.last
    J = channel_cost(c, C, params.g_c, params.cost_mode)
    if params.movement:
        K = movement_cost((h, w), (H, W), params.sigma)
    else:
        K = np.zeros((H, W), dtype=np.float64)
    return combine_costs(J, K, params.cost_mode)


def stroke_step(state: StrokeState, y: np.ndarray, params: StrokeParams, stop: StopCriterion
                ) -> StrokeAction | None:
    """Advance one iteration; returns the action, or None with ``state.stop_reason`` set.

    ``params`` must already be resolved (``sigma`` not None when movement is on).
    """
    G = cost_field(state, y.shape, params)
    weight = selection_weight(y, G, params.compare)
    eligible = ~state.mask & (state.counts < params.tau)[None] & state.region[None]
    pixel = _argmax_eligible(weight, eligible)
    if pixel is None:
        state.stop_reason = "exhausted"
        return None
    c, h, w = pixel
    value = float(compared(np.float64(y[c, h, w]), params.compare))
    if stop.max_strokes is not None and state.n_actions >= stop.max_strokes:
        state.stop_reason = "max_strokes"
        return None
    if stop.response_ratio is not None and value < stop.response_ratio * state.y_max:
        state.stop_reason = "response_ratio"
        return None
    if stop.painted_fraction is not None and state.painted_fraction() >= stop.painted_fraction:
        state.stop_reason = "painted_fraction"
        return None

    channels = penetrate(y, state.mask, (h, w), params.p, params.tau, c, params.compare)
    extended: list[tuple[int, int, int]] = []
    for ch in channels:
        state.mask[ch, h, w] = True
        extended.append((ch, h, w))
    state.counts[h, w] += len(channels)
    if params.z > 0:
        for ch in channels:
            for px in neighborhood(y, (ch, h, w), params.z, params.m, params.compare):
                _, hh, ww = px
                if (hh, ww) == (h, w) or state.mask[px] or not state.region[hh, ww] \
                        or state.counts[hh, ww] >= params.tau:
                    continue
                state.mask[px] = True
                state.counts[hh, ww] += 1
                extended.append(px)

    action = StrokeAction(seq=state.n_actions, pixel=pixel, penetrated=tuple(channels),
                          extended=tuple(extended), y_value=float(y[c, h, w]))
    state.last = pixel
    state.n_actions += 1
    return action


def run_strokes(y, params: StrokeParams, stop: StopCriterion | None = None, region=None,
                initial_mask=None,
                callback: Callable[[StrokeState, StrokeAction], None] | None = None
                ) -> tuple[np.ndarray, ActionLog]:
    """Stroke ``y`` until a stop rule fires.

    ``region`` is an optional (H, W) boolean mask restricting where bits can
    turn on. ``initial_mask`` seeds the run with bits that count towards the
    cap but are not logged. ``callback(state, action)`` is invoked after
    every action. Returns the final mask (initial bits included) and the log.
    """
    y = as_chw(y, "y")
    stop = (stop if stop is not None else StopCriterion()).validate()
    params = params.validate(y.shape[0]).resolved(y.shape)
    state = StrokeState.start(y, params, region, initial_mask)
    log = ActionLog(shape=y.shape, params=params.to_dict(), stop=stop.to_dict(),
                    y_checksum=tensor_checksum(y))
    if state.y_max is None:
        state.stop_reason = "exhausted"
    while state.stop_reason is None:
        action = stroke_step(state, y, params, stop)
        if action is None:
            break
        log.actions.append(action)
        if callback is not None:
            callback(state, action)
    log.stop_reason = state.stop_reason
    return state.mask, log

