"""Cumulative-case / dynamic-control time-dependent ROC curves.

Cases at horizon ``t`` are subjects failing in ``(0, t]``; controls are
subjects event-free beyond ``t``.  Two estimators handle censoring:

* a Kaplan-Meier plug-in using conditional survival on the marker
  subsets ``{M > c}`` / ``{M <= c}`` (simple, but not guaranteed
  monotone, and biased when censoring depends on the marker), and
* a nearest-neighbor estimator of the bivariate survival function
  ``S(c, t) = P(M > c, T > t)`` built from locally weighted
  Kaplan-Meier curves, which is monotone by construction and robust to
  marker-dependent censoring.

The sequential routine re-baselines at a ladder of index times and
reports the window AUC at each, mimicking landmark analysis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import landmark_subset
from .errors import DataError, EstimationError
from .km import KernelSpec, default_span, kaplan_meier, marker_percentiles
from .series import AccuracySeries

__all__ = ["RocCurve", "BivariateSurvival", "cd_roc_km", "cd_roc_nne",
           "bivariate_survival_nne", "sequential_cd_auc"]


@dataclass(frozen=True)
class RocCurve:
    """ROC curve as (FPF, TPF, threshold) triples plus trapezoidal AUC.

    Points are ordered by non-decreasing FPF and include the (0, 0) and
    (1, 1) endpoints (thresholds +/-inf).  Rates are clipped to the
    unit interval; any non-monotone raw values are kept as computed and
    only re-sorted by FPF for the area computation.
    """

    fpf: np.ndarray
    tpf: np.ndarray
    thresholds: np.ndarray
    auc: float

    @classmethod
    def from_rates(cls, thresholds, fpf, tpf):
        """Assemble from per-threshold rates (thresholds descending)."""
        thresholds = np.concatenate([[np.inf], np.asarray(thresholds, float), [-np.inf]])
        fpf = np.clip(np.concatenate([[0.0], np.asarray(fpf, float), [1.0]]), 0.0, 1.0)
        tpf = np.clip(np.concatenate([[0.0], np.asarray(tpf, float), [1.0]]), 0.0, 1.0)
        order = np.argsort(fpf, kind="stable")
        fpf, tpf, thresholds = fpf[order], tpf[order], thresholds[order]
        auc = float(np.trapezoid(tpf, fpf))
        return cls(fpf, tpf, thresholds, auc)

    def __len__(self):
        return len(self.fpf)


def _validate_cd_inputs(marker, times, events, t):
    marker = np.asarray(marker, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    if not (len(marker) == len(times) == len(events)):
        raise DataError("marker, times and events must have equal length")
    if np.any(~np.isfinite(marker)):
        raise DataError("marker values must be finite")
    if t <= 0 or t > times.max():
        raise EstimationError("horizon t must lie within observed follow-up")
    if not np.any(events & (times <= t)):
        raise EstimationError("no events observed in (0, t]")
    if not np.any(times > t):
        raise EstimationError("no subjects remain under observation beyond t")
    return marker, times, events


def cd_roc_km(marker, times, events, t):
    """Kaplan-Meier estimator of the cumulative/dynamic ROC at ``t``.

    For each observed threshold ``c``::

        TPF(c) = (1 - S(t | M > c)) (1 - F(c)) / (1 - S(t))
        FPF(c) = 1 - S(t | M <= c) F(c) / S(t)

    with ``S`` the (conditional) Kaplan-Meier estimate and ``F`` the
    empirical marker distribution.  On uncensored data these reduce
    exactly to the binary confusion-matrix rates for outcome
    ``1(T <= t)``.  Sensitivity and specificity are not guaranteed
    monotone in ``c``; the curve is re-sorted by FPF for the area.
    """
    marker, times, events, = _validate_cd_inputs(marker, times, events, t)
    n = len(marker)
    s_pooled = kaplan_meier(times, events)(t)
    if s_pooled in (0.0, 1.0):
        raise EstimationError("degenerate case/control split at t")

    order = np.argsort(marker, kind="stable")
    ms, zs, ds = marker[order], times[order], events[order]
    uniq = np.unique(ms)
    # position of the first subject with M > c, for each threshold c
    cut = np.searchsorted(ms, uniq, side="right")
    s_above = np.ones(len(uniq))  # S(t | M > c)
    s_below = np.ones(len(uniq))  # S(t | M <= c)
    for s in np.unique(zs[ds & (zs <= t)]):
        at_risk = np.concatenate([[0.0], np.cumsum(zs >= s)])
        death = np.concatenate([[0.0], np.cumsum((zs == s) & ds)])
        n_above = at_risk[-1] - at_risk[cut]
        d_above = death[-1] - death[cut]
        n_below = at_risk[cut]
        d_below = death[cut]
        s_above *= np.where(n_above > 0, 1 - d_above / np.where(n_above > 0, n_above, 1), 1.0)
        s_below *= np.where(n_below > 0, 1 - d_below / np.where(n_below > 0, n_below, 1), 1.0)

    f_c = cut / n
    tpf = (1 - s_above) * (1 - f_c) / (1 - s_pooled)
    fpf = 1 - s_below * f_c / s_pooled
    # thresholds descending so FPF runs from 1 toward 0
    return RocCurve.from_rates(uniq[::-1], fpf[::-1], tpf[::-1])


def _conditional_survival_grid(marker, times, events, horizons, span):
    """``S(t | M = M_i)`` for every subject at each horizon.

    Local Kaplan-Meier curves over percentile windows, vectorized by
    sorting on the marker so each window is a contiguous rank range.
    Returns subject order (by marker) and an array of shape
    ``(len(horizons), n)``.
    """
    order = np.argsort(marker, kind="stable")
    ms, zs, ds = marker[order], times[order], events[order]
    n = len(ms)
    pct = marker_percentiles(ms)
    lo = np.searchsorted(pct, pct - span, side="right")
    hi = np.searchsorted(pct, pct + span, side="left")
    horizons = np.asarray(horizons, dtype=float)
    t_max = horizons.max()
    ev = np.unique(zs[ds & (zs <= t_max)])
    out = np.empty((len(horizons), n))
    surv = np.ones(n)
    pending = np.argsort(horizons, kind="stable")
    p = 0
    for s in ev:
        while p < len(pending) and horizons[pending[p]] < s:
            out[pending[p]] = surv
            p += 1
        at_risk = np.concatenate([[0.0], np.cumsum(zs >= s)])
        death = np.concatenate([[0.0], np.cumsum((zs == s) & ds)])
        n_win = at_risk[hi] - at_risk[lo]
        d_win = death[hi] - death[lo]
        surv = surv * np.where(n_win > 0, 1 - d_win / np.where(n_win > 0, n_win, 1), 1.0)
    for q in pending[p:]:
        out[q] = surv
    return order, ms, out


@dataclass(frozen=True)
class BivariateSurvival:
    """Nearest-neighbor estimate of ``S(c, t) = P(M > c, T > t)``.

    ``values[j, k]`` is the estimate at threshold ``marker_grid[k]``
    and time ``times[j]``; ``marginal[j]`` is ``S(-inf, times[j])``,
    the average of the conditional survival curves.
    """

    marker_grid: np.ndarray
    times: np.ndarray
    values: np.ndarray
    marginal: np.ndarray

    def at(self, c, t):
        j = int(np.flatnonzero(self.times == t)[0])
        if c < self.marker_grid[0]:
            return float(self.marginal[j])
        k = np.searchsorted(self.marker_grid, c, side="right") - 1
        return float(self.values[j, k])


def bivariate_survival_nne(marker, times, events, eval_times, kernel):
    """Build the bivariate survival table over observed marker values.

    ``S(c, t)`` is the average over subjects of the locally-smoothed
    conditional survival, restricted to markers above the threshold:
    ``(1/n) sum_i S(t | M = M_i) 1(M_i > c)``.
    """
    marker = np.asarray(marker, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    _, ms, grid = _conditional_survival_grid(marker, times, events,
                                             eval_times, kernel.span)
    n = len(ms)
    uniq = np.unique(ms)
    cut = np.searchsorted(ms, uniq, side="right")
    suffix = np.concatenate([np.cumsum(grid[:, ::-1], axis=1)[:, ::-1],
                             np.zeros((len(grid), 1))], axis=1)
    values = suffix[:, cut] / n
    marginal = grid.mean(axis=1)
    return BivariateSurvival(uniq, np.asarray(eval_times, float), values, marginal)


def cd_roc_nne(marker, times, events, t, kernel=None):
    """Nearest-neighbor estimator of the cumulative/dynamic ROC at ``t``.

    Uses the bivariate survival estimate ``S_hat(c, t)``::

        TPF(c) = ((1 - F(c)) - S_hat(c, t)) / (1 - S_hat(t))
        FPF(c) = S_hat(c, t) / S_hat(t)

    which are monotone in ``c`` by construction.  ``kernel`` defaults
    to the percentile span ``0.04 * n**-0.2``.
    """
    marker, times, events = _validate_cd_inputs(marker, times, events, t)
    n = len(marker)
    if kernel is None:
        kernel = KernelSpec(default_span(n))
    biv = bivariate_survival_nne(marker, times, events, [t], kernel)
    s_t = biv.marginal[0]
    if s_t in (0.0, 1.0):
        raise EstimationError("degenerate case/control split at t")
    cut = np.searchsorted(np.sort(marker), biv.marker_grid, side="right")
    f_c = cut / n
    s_ct = biv.values[0]
    tpf = ((1 - f_c) - s_ct) / (1 - s_t)
    fpf = s_ct / s_t
    return RocCurve.from_rates(biv.marker_grid[::-1], fpf[::-1], tpf[::-1])


def sequential_cd_auc(cohort, index_times, window, kernel=None,
                      marker_mode="baseline"):
    """Window AUC at a ladder of landmark times.

    At each index time the cohort is re-baselined to the subjects still
    event-free (marker updated or frozen at baseline per
    ``marker_mode``), and the nearest-neighbor cumulative/dynamic AUC
    over the following ``window`` is computed.  With ``kernel=None``
    the span is recomputed from each subset's size.  Landmarks whose
    window holds no event are flagged undefined, not dropped.
    """
    index_times = np.asarray(index_times, dtype=float)
    if window <= 0:
        raise DataError("window must be positive")
    aucs = np.full(len(index_times), np.nan)
    n_cases = np.zeros(len(index_times), dtype=int)
    n_controls = np.zeros(len(index_times), dtype=int)
    for k, s in enumerate(index_times):
        sub = landmark_subset(cohort, s, marker_mode)
        events = sub.status >= 1
        n_cases[k] = int(np.sum(events & (sub.stop <= window)))
        n_controls[k] = int(np.sum(sub.stop > window))
        kern = kernel
        if kern is None and sub.n_subjects:
            kern = KernelSpec(default_span(sub.n_subjects))
        try:
            if sub.n_subjects == 0:
                raise EstimationError("empty landmark subset")
            curve = cd_roc_nne(sub.marker, sub.stop, events, window, kern)
            aucs[k] = curve.auc
        except EstimationError:
            pass  # flagged undefined via NaN
    return AccuracySeries(index_times, aucs, n_cases, n_controls)
