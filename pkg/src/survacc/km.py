"""Product-limit survival estimation, plain and kernel-weighted.

The weighted form supports the 0/1 percentile nearest-neighbor kernel
used by the bivariate survival estimator: conditioning on a marker value
is done by running a Kaplan-Meier restricted to the subjects whose
marker percentile falls inside a window around the anchor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, EstimationError

__all__ = ["StepCurve", "KernelSpec", "kaplan_meier", "conditional_km_nne",
           "cohort_survival", "marker_percentiles", "percentile_of"]


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function over time.

    ``values[k]`` is the function value on ``[times[k], times[k+1])``;
    before the first jump the value is ``initial_value``.
    """

    times: np.ndarray
    values: np.ndarray
    initial_value: float = 1.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if len(times) != len(values):
            raise DataError("times and values must have equal length")
        if np.any(np.diff(times) <= 0):
            raise DataError("jump times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        """Evaluate at ``t`` (scalar or array), right-continuously."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        vals = np.concatenate([[self.initial_value], self.values])
        return vals[np.asarray(idx) + 1] if np.ndim(t) else float(vals[idx + 1])

    def jump_masses(self):
        """Drop of the curve at each jump time (positive for survival)."""
        prev = np.concatenate([[self.initial_value], self.values[:-1]])
        return prev - self.values


@dataclass(frozen=True)
class KernelSpec:
    """Nearest-neighbor smoothing window.

    ``span`` is the half-fraction of the sample per neighborhood: a
    window holds the observations whose percentile (or, for time
    smoothing, scaled time) lies within ``span`` of the anchor, so
    roughly ``2 * span`` of the sample is included.  Windows are
    truncated at the boundaries, never shifted or reflected.
    """

    span: float
    boundary_rule: str = "truncate"

    def __post_init__(self):
        if not 0 < 2 * self.span < 1:
            raise DataError("span must satisfy 0 < 2*span < 1")
        if self.boundary_rule != "truncate":
            raise DataError("only the 'truncate' boundary rule is supported")


def default_span(n):
    """Default marker-percentile span, shrinking with sample size."""
    return 0.04 * n ** (-0.2)


def kaplan_meier(times, events, weights=None):
    """Weighted product-limit estimate of the survival function.

    ``S(t) = prod_{s <= t} (1 - sum(w * 1(Z == s) * d) / sum(w * 1(Z >= s)))``
    over event times ``s``.  Unit weights give the standard estimator.
    Subjects censored at an event time count as at risk there (events
    are processed before censorings).
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    if weights is None:
        weights = np.ones(len(times))
    weights = np.asarray(weights, dtype=float)
    if not (len(times) == len(events) == len(weights)):
        raise DataError("times, events and weights must have equal length")
    if np.any(times < 0):
        raise DataError("negative survival times")
    if np.any(weights < 0):
        raise DataError("negative weights")
    if not weights.any():
        raise DataError("all weights are zero")

    order = np.argsort(times, kind="stable")
    ts, es, ws = times[order], events[order], weights[order]
    # weighted death mass and at-risk mass at each distinct event time
    ev_times, inv = np.unique(ts[es], return_inverse=True)
    death_w = np.zeros(len(ev_times))
    np.add.at(death_w, inv, ws[es])
    # suffix sums of weight over time order give the at-risk mass
    suffix = np.concatenate([np.cumsum(ws[::-1])[::-1], [0.0]])
    first_at = np.searchsorted(ts, ev_times, side="left")
    at_risk = suffix[first_at]
    keep = death_w > 0
    ev_times, death_w, at_risk = ev_times[keep], death_w[keep], at_risk[keep]
    with np.errstate(invalid="ignore"):
        factors = np.where(at_risk > 0, 1.0 - death_w / np.where(at_risk > 0, at_risk, 1.0), 1.0)
    return StepCurve(ev_times, np.cumprod(factors), 1.0)


def marker_percentiles(marker):
    """Empirical percentile of each marker value, ties by average rank."""
    marker = np.asarray(marker, dtype=float)
    if np.any(~np.isfinite(marker)):
        raise DataError("marker values must be finite")
    return rankdata(marker, method="average") / len(marker)


def percentile_of(marker, anchor):
    """Average-rank percentile an ``anchor`` value would take in ``marker``."""
    marker = np.asarray(marker, dtype=float)
    less = np.count_nonzero(marker < anchor)
    equal = np.count_nonzero(marker == anchor)
    return (less + (equal + 1) / 2.0) / len(marker)


def conditional_km_nne(marker, times, events, anchor, kernel):
    """Kaplan-Meier conditional on the marker, via a percentile window.

    The at-risk sample is restricted (through 0/1 weights) to subjects
    whose marker percentile lies strictly within ``kernel.span`` of the
    anchor's percentile, estimating ``S(t | M = anchor)``.  A window
    wide enough to hold the whole sample reduces to the marginal
    estimator.
    """
    marker = np.asarray(marker, dtype=float)
    pct = marker_percentiles(marker)
    center = percentile_of(marker, anchor)
    w = (np.abs(pct - center) < kernel.span).astype(float)
    if not w.any():
        raise EstimationError("empty marker neighborhood around anchor")
    return kaplan_meier(times, events, w)


def cohort_survival(cohort):
    """Kaplan-Meier curve for a counting-process cohort.

    The at-risk count at an event time ``t`` is the number of intervals
    with ``start < t <= stop``; with everyone entering at time zero
    this reduces to the plain estimator.
    """
    ev_times = cohort.event_times()
    start, stop, status = cohort.start, cohort.stop, cohort.status
    order_stop = np.sort(stop)
    order_start = np.sort(start)
    n = len(stop)
    at_risk = (n - np.searchsorted(order_stop, ev_times, side="left")) \
        - (n - np.searchsorted(order_start, ev_times, side="left"))
    is_event = status >= 1
    ev_of = np.searchsorted(ev_times, stop[is_event])
    deaths = np.bincount(ev_of, minlength=len(ev_times))
    factors = 1.0 - deaths / at_risk
    return StepCurve(ev_times, np.cumprod(factors), 1.0)
