"""scikit-learn compatible wrappers.

``fit`` learns a channel mask from an activation; ``transform`` applies the
learned mask. Instances expose ``get_params``/``set_params`` so they plug
into grid searches and pipelines over hyper-parameters.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .channel_ops import apply_mask, channel_flush, coverage
from .exceptions import ShapeError
from .netgraph import NetworkSpec, forward
from .planner import PlanPolicy, RoiSet, make_plan, paint
from .stroke import StopCriterion, StrokeParams, run_strokes
from .tensor import as_chw


class _MaskTransformer(TransformerMixin, BaseEstimator):

    def transform(self, X):
        check_is_fitted(self, "mask_")
        X = as_chw(X, "X")
        if X.shape != self.mask_.shape:
            raise ShapeError(f"X shape {X.shape} != fitted mask {self.mask_.shape}")
        return apply_mask(X, self.mask_)

    def coverage(self, bins: int = 10):
        check_is_fitted(self, "mask_")
        return coverage(self.mask_, bins)


class ChannelFlush(_MaskTransformer):
    """Keep the ``tau`` highest-response channels at every location.

    Parameters
    ----------
    tau : int
        Channels kept per location.
    compare : {"signed", "magnitude"}
        Rank by raw values or by absolute value.
    """

    def __init__(self, tau=1, compare="signed"):
        self.tau = tau
        self.compare = compare

    def fit(self, X, y=None):
        X = as_chw(X, "X")
        self.mask_ = channel_flush(X, self.tau, self.compare)
        self.n_channels_ = X.shape[0]
        return self


class ChannelStroke(_MaskTransformer):
    """Greedy stroke decomposition of an activation.

    Fitted attributes: ``mask_`` (bool, CHW), ``log_`` (:class:`ActionLog`),
    ``stop_reason_``. ``fit`` accepts an optional ``region`` (H, W) mask.
    """

    def __init__(self, tau=1, m=0.95, z=1, p=2, g_c=0.5, sigma=None, movement=True,
                 cost_mode="continuation", compare="signed", response_ratio=0.1,
                 max_strokes=None, painted_fraction=None):
        self.tau = tau
        self.m = m
        self.z = z
        self.p = p
        self.g_c = g_c
        self.sigma = sigma
        self.movement = movement
        self.cost_mode = cost_mode
        self.compare = compare
        self.response_ratio = response_ratio
        self.max_strokes = max_strokes
        self.painted_fraction = painted_fraction

    def stroke_params(self) -> StrokeParams:
        return StrokeParams(tau=self.tau, m=self.m, z=self.z, p=self.p, g_c=self.g_c,
                            sigma=self.sigma, movement=self.movement,
                            cost_mode=self.cost_mode, compare=self.compare)

    def stop_criterion(self) -> StopCriterion:
        return StopCriterion(response_ratio=self.response_ratio, max_strokes=self.max_strokes,
                             painted_fraction=self.painted_fraction)

    def fit(self, X, y=None, region=None):
        X = as_chw(X, "X")
        self.mask_, self.log_ = run_strokes(X, self.stroke_params(), self.stop_criterion(),
                                            region=region)
        self.stop_reason_ = self.log_.stop_reason
        self.n_channels_ = X.shape[0]
        return self


class CPIAPainter(BaseEstimator):
    """Paint an input image region by region through ``network``.

    ``fit(X, rois)`` runs the full pipeline on the input image ``X``
    (C, H, W); ``rois`` is a :class:`RoiSet` (None means one full-frame
    background step). ``predict`` returns the painted frame of the last fit.
    """

    def __init__(self, network: NetworkSpec | None = None, layer=6, tau=1, m=0.95, z=1, p=2,
                 g_c=0.5, sigma=None, movement=True, cost_mode="continuation",
                 compare="signed", response_ratio=0.1, max_strokes=None,
                 painted_fraction=None, policy=None, background="white", gamma=1.0,
                 frame_every=0):
        self.network = network
        self.layer = layer
        self.tau = tau
        self.m = m
        self.z = z
        self.p = p
        self.g_c = g_c
        self.sigma = sigma
        self.movement = movement
        self.cost_mode = cost_mode
        self.compare = compare
        self.response_ratio = response_ratio
        self.max_strokes = max_strokes
        self.painted_fraction = painted_fraction
        self.policy = policy
        self.background = background
        self.gamma = gamma
        self.frame_every = frame_every

    def fit(self, X, rois: RoiSet | None = None):
        if self.network is None:
            raise ValueError("CPIAPainter needs a network")
        X = as_chw(X, "X")
        if rois is None:
            rois = RoiSet(X.shape[1:])
        policy = self.policy if isinstance(self.policy, PlanPolicy) else PlanPolicy.from_dict(self.policy)
        plan = make_plan(rois, policy, X)
        params = StrokeParams(tau=self.tau, m=self.m, z=self.z, p=self.p, g_c=self.g_c,
                              sigma=self.sigma, movement=self.movement,
                              cost_mode=self.cost_mode, compare=self.compare)
        stop = StopCriterion(self.response_ratio, self.max_strokes, self.painted_fraction)
        res = paint(self.network, self.layer, plan, params, stop, frame_every=self.frame_every,
                    image=X, background=self.background, gamma=self.gamma)
        self.plan_ = plan
        self.result_ = res
        self.image_ = res.image
        self.logs_ = res.logs
        self.frames_ = res.frames
        self.mask_ = res.canvas.mask
        return self

    def predict(self, X=None):
        check_is_fitted(self, "image_")
        return self.image_

    def score(self, X, rois: RoiSet | None = None):
        """Negative mean absolute deviation of the painted frame from the plain forward output."""
        check_is_fitted(self, "image_")
        raw = forward(self.network, as_chw(X, "X"))
        return -float(np.mean(np.abs(self.image_.astype(np.float64) - raw)))
