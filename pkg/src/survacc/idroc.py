"""Incident-case / dynamic-control accuracy over the follow-up period.

At each event time the risk set is split into incident cases (events
exactly there) and dynamic controls (members surviving past it).  The
nonparametric path ranks each case against the controls (mean rank
A(t)), smooths the per-time values over nearest-neighbor time windows,
and integrates them into the concordance index.  The semiparametric
path reweights the risk-set marker distribution through a Cox model,
optionally with a time-varying coefficient from smoothed Schoenfeld
residuals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdroc import RocCurve
from .cohort import risk_set_at
from .errors import DataError, EstimationError
from .km import cohort_survival
from .series import AccuracySeries

__all__ = ["mean_rank", "wmr_smooth", "bandwidth_cv", "default_bandwidth_grid",
           "dynamic_tpr", "cox_id_accuracy", "GammaPath", "gamma_t_schoenfeld",
           "CindexResult", "c_index"]


class _RankTree:
    """Fenwick tree over dense marker ranks: counts, prefix sums, k-th."""

    def __init__(self, size):
        self.n = size
        self.tree = np.zeros(size + 1, dtype=np.int64)
        self.total = 0

    def add(self, rank, delta=1):
        i = rank + 1
        while i <= self.n:
            self.tree[i] += delta
            i += i & (-i)
        self.total += delta

    def count_below(self, rank):
        """Number of stored items with rank strictly below ``rank``."""
        i = rank
        s = 0
        while i > 0:
            s += self.tree[i]
            i -= i & (-i)
        return s

    def kth(self, k):
        """Dense rank of the k-th smallest stored item (1-based k)."""
        pos = 0
        rem = k
        bit = 1 << (self.n.bit_length())
        while bit:
            nxt = pos + bit
            if nxt <= self.n and self.tree[nxt] < rem:
                rem -= self.tree[nxt]
                pos = nxt
            bit >>= 1
        return pos  # 0-based dense rank


def _risk_set_sweep(cohort, marker, visit):
    """Run ``visit`` at each event time with the control tree populated.

    Sweeps event times in descending order, maintaining a rank tree of
    the markers of all current controls (at-risk intervals that are not
    cases at the time under visit).  ``visit(t, case_markers, tree,
    values)`` is called once per unique event time; ``values`` maps a
    dense rank back to its marker value.
    """
    values, ranks = np.unique(marker, return_inverse=True)
    tree = _RankTree(len(values))
    ev_times = cohort.event_times()
    is_event = cohort.status >= 1
    by_stop = np.argsort(cohort.stop, kind="stable")[::-1]
    by_start = np.argsort(cohort.start, kind="stable")[::-1]
    in_tree = np.zeros(cohort.n_intervals, dtype=bool)
    add_ptr = 0
    rem_ptr = 0
    out = []
    for t in ev_times[::-1]:
        # controls entering: stop >= t, censored rows first
        deferred = []
        while add_ptr < len(by_stop) and cohort.stop[by_stop[add_ptr]] >= t:
            i = by_stop[add_ptr]
            if is_event[i] and cohort.stop[i] == t:
                deferred.append(i)  # cases at t join only after the visit
            else:
                tree.add(ranks[i])
                in_tree[i] = True
            add_ptr += 1
        # leaving: start >= t means the interval no longer covers t
        while rem_ptr < len(by_start) and cohort.start[by_start[rem_ptr]] >= t:
            i = by_start[rem_ptr]
            if in_tree[i]:
                tree.add(ranks[i], -1)
                in_tree[i] = False
            rem_ptr += 1
        case_rows = np.flatnonzero(is_event & (cohort.stop == t))
        out.append(visit(t, marker[case_rows], ranks[case_rows], tree, values))
        for i in deferred:
            tree.add(ranks[i])
            in_tree[i] = True
    return ev_times, out[::-1]


def _marker_for_mode(cohort, marker_mode):
    if marker_mode == "updated":
        return cohort.marker
    if marker_mode == "baseline":
        return cohort.baseline_marker_per_interval()
    raise DataError(f"unknown marker_mode {marker_mode!r}")


def mean_rank(cohort, marker_mode="baseline"):
    """Mean case percentile A(t) at each event time.

    ``A(t)`` is the fraction of (case, control) pairs in the risk set
    at ``t`` whose case marker is strictly larger; marker ties
    contribute zero.  Event times with no controls are flagged
    undefined.
    """
    marker = _marker_for_mode(cohort, marker_mode)
    if np.any(np.isnan(marker)):
        raise DataError("cohort has intervals without marker values")
    if len(cohort.event_times()) == 0:
        raise DataError("no events in the cohort")

    def visit(t, case_markers, case_ranks, tree, values):
        n_ctrl = tree.total
        d = len(case_markers)
        if n_ctrl == 0:
            return (np.nan, d, 0)
        below = sum(tree.count_below(r) for r in case_ranks)
        return (below / (n_ctrl * d), d, n_ctrl)

    times, rows = _risk_set_sweep(cohort, marker, visit)
    raw = np.array([r[0] for r in rows])
    d = np.array([r[1] for r in rows])
    nc = np.array([r[2] for r in rows])
    return AccuracySeries(times, raw, d, nc)


def _time_windows(times, span):
    """Neighborhood bounds: |t_j - t| < span * (range of times)."""
    h = span * (times[-1] - times[0])
    lo = np.searchsorted(times, times - h, side="right")
    hi = np.searchsorted(times, times + h, side="left")
    return lo, np.maximum(hi, lo + 1)  # window always holds the point itself


def wmr_smooth(series, kernel):
    """Nearest-neighbor time smoothing of a per-event-time series.

    The smoothed value at each series time is the unweighted mean of
    the defined raw values in the window ``|t_j - t| < h`` with
    ``h = span * (time range)``.  The pointwise variance is the
    within-window sample variance divided by the window size.
    """
    if len(series) == 0:
        raise DataError("empty series")
    times = series.times
    lo, hi = _time_windows(times, kernel.span)
    smoothed = np.full(len(series), np.nan)
    variance = np.full(len(series), np.nan)
    raw = series.raw
    ok = series.defined
    for k in range(len(series)):
        vals = raw[lo[k]:hi[k]][ok[lo[k]:hi[k]]]
        if len(vals) == 0:
            continue
        smoothed[k] = vals.mean()
        variance[k] = vals.var(ddof=1) / len(vals) if len(vals) > 1 else 0.0
    return AccuracySeries(times, raw, series.n_cases, series.n_controls,
                          smoothed, variance, series.defined)


def default_bandwidth_grid():
    """Cross-validation span grid 0.055, 0.060, ..., 0.450."""
    return 0.05 + np.arange(1, 81) / 200.0


def bandwidth_cv(series, grid=None):
    """Span minimizing leave-one-out IMSE of the time smoother.

    Each defined point is predicted from its window with the point
    itself removed (falling back to the nearest other defined time when
    the window holds nothing else).  Ties across the grid are broken by
    averaging the tied minimizers.
    """
    if grid is None:
        grid = default_bandwidth_grid()
    grid = np.asarray(grid, dtype=float)
    times, raw, ok = series.times, series.raw, series.defined
    idx = np.flatnonzero(ok)
    if len(idx) < 2:
        raise EstimationError("need at least two defined points for cross-validation")
    imse = np.full(len(grid), np.nan)
    for g, span in enumerate(grid):
        lo, hi = _time_windows(times, span)
        errs = []
        for k in idx:
            win = np.arange(lo[k], hi[k])
            win = win[(win != k) & ok[win]]
            if len(win) == 0:
                others = idx[idx != k]
                dist = np.abs(times[others] - times[k])
                win = others[dist == dist.min()][:1]
            errs.append(raw[win].mean() - raw[k])
        imse[g] = float(np.mean(np.square(errs)))
    if np.all(np.isnan(imse)):
        raise EstimationError("cross-validation criterion undefined on all spans")
    best = np.nanmin(imse)
    return float(grid[imse == best].mean())


def dynamic_tpr(cohort, fpf, marker_mode="baseline", kernel=None):
    """True-positive fraction over time at a fixed false-positive level.

    At each event time the threshold is the empirical ``(1 - fpf)``
    quantile of the risk set's control markers (lower order statistic,
    so at most a ``fpf`` fraction of controls exceeds it); the raw
    value is the fraction of cases strictly above the threshold.
    Smoothed like :func:`wmr_smooth` when a kernel is given.
    """
    if not 0 < fpf < 1:
        raise DataError("fpf must lie strictly between 0 and 1")
    marker = _marker_for_mode(cohort, marker_mode)
    if np.any(np.isnan(marker)):
        raise DataError("cohort has intervals without marker values")

    def visit(t, case_markers, case_ranks, tree, values):
        n_ctrl = tree.total
        d = len(case_markers)
        if n_ctrl == 0 or d == 0:
            return (np.nan, d, n_ctrl)
        k = int(np.ceil((1 - fpf) * n_ctrl))
        threshold = values[tree.kth(k)]
        return (float(np.mean(case_markers > threshold)), d, n_ctrl)

    times, rows = _risk_set_sweep(cohort, marker, visit)
    raw = np.array([r[0] for r in rows])
    d = np.array([r[1] for r in rows])
    nc = np.array([r[2] for r in rows])
    keep = d > 0  # only event times contribute case fractions
    series = AccuracySeries(times[keep], raw[keep], d[keep], nc[keep])
    if kernel is not None:
        series = wmr_smooth(series, kernel)
    return series


@dataclass(frozen=True)
class GammaPath:
    """Time-varying coefficient as a right-continuous step path."""

    times: np.ndarray
    values: np.ndarray

    def at(self, t):
        idx = np.searchsorted(self.times, t, side="right") - 1
        return float(self.values[max(idx, 0)])


def cox_id_accuracy(cohort, gamma, t):
    """Semiparametric incident/dynamic ROC at time ``t``.

    Sensitivity reweights the risk-set marker distribution by
    ``pi_i = exp(M_i * gamma) / sum_j exp(M_j * gamma)``; specificity
    is empirical among the dynamic controls (subjects surviving past
    ``t``).  ``gamma`` may be a scalar or a :class:`GammaPath`, in
    which case its value at ``t`` is used.
    """
    rs = risk_set_at(cohort, t)
    if rs.n_cases + rs.n_controls == 0:
        raise EstimationError("empty risk set")
    if rs.n_controls == 0:
        raise EstimationError("no survivors past t")
    g = gamma.at(t) if isinstance(gamma, GammaPath) else float(gamma)
    if not np.isfinite(g):
        raise DataError("gamma must be finite")
    risk_markers = np.concatenate([rs.case_marker, rs.control_marker])
    eta = risk_markers * g
    eta -= eta.max()
    pi = np.exp(eta)
    pi /= pi.sum()
    thresholds = np.unique(risk_markers)[::-1]
    sens = np.array([pi[risk_markers > c].sum() for c in thresholds])
    fpf = np.array([np.mean(rs.control_marker > c) for c in thresholds])
    return RocCurve.from_rates(thresholds, fpf, sens)


def gamma_t_schoenfeld(fit, cohort, kernel):
    """Time-varying marker coefficient from scaled Schoenfeld residuals.

    The per-event residual is the case marker minus the risk-weighted
    risk-set mean; scaled residuals (offset by the fitted coefficient)
    are smoothed over event times by local linear regression on the
    same nearest-neighbor windows as the accuracy curves.
    """
    if not fit.converged:
        raise EstimationError("base fit did not converge")
    if len(fit.coef) != 1:
        raise DataError("time-varying path requires a single-term fit")
    marker = cohort.marker
    if np.any(np.isnan(marker)):
        raise DataError("cohort has intervals without marker values")
    gamma_hat = float(fit.coef[0])
    info = float(fit.information[0, 0])
    is_event = cohort.status >= 1
    ev_rows = np.flatnonzero(is_event)
    ev_rows = ev_rows[np.argsort(cohort.stop[ev_rows], kind="stable")]
    ev_times = cohort.stop[ev_rows]
    if len(np.unique(ev_times)) < 3:
        raise EstimationError("need at least three event times to smooth")
    resid = np.empty(len(ev_rows))
    for j, row in enumerate(ev_rows):
        t = ev_times[j]
        at_risk = (cohort.start < t) & (cohort.stop >= t)
        m = marker[at_risk]
        w = np.exp((m - m.mean()) * gamma_hat)
        resid[j] = marker[row] - float((m * w).sum() / w.sum())
    scaled = gamma_hat + len(ev_rows) * resid / info

    lo, hi = _time_windows(ev_times, kernel.span)
    smooth = np.empty(len(ev_rows))
    for k in range(len(ev_rows)):
        ts = ev_times[lo[k]:hi[k]]
        ys = scaled[lo[k]:hi[k]]
        if len(np.unique(ts)) < 2:
            smooth[k] = ys.mean()
            continue
        a = np.column_stack([np.ones(len(ts)), ts - ev_times[k]])
        coef, *_ = np.linalg.lstsq(a, ys, rcond=None)
        smooth[k] = coef[0]
    uniq, inv = np.unique(ev_times, return_inverse=True)
    avg = np.zeros(len(uniq))
    np.add.at(avg, inv, smooth)
    avg /= np.bincount(inv)
    return GammaPath(uniq, avg)


@dataclass(frozen=True)
class CindexResult:
    """Concordance index truncated at ``tau``."""

    value: float
    tau: float
    weights_sum: float


def c_index(cohort, marker_mode="baseline", tau=None):
    """Concordance index as a weighted average of mean ranks.

    ``sum over event times t <= tau of A(t) * w(t)`` with raw weights
    ``2 * f(t) * S(t)`` taken from the Kaplan-Meier curve (``f`` the
    jump mass, ``S`` the post-jump value) and normalized to sum to one
    over the included times.  On uncensored tie-free data with ``tau``
    at the last event this equals all-pairs concordance exactly.  With
    updated markers this is the generalized concordance index for a
    time-varying score.
    """
    if tau is None:
        tau = float(cohort.stop.max())
    series = mean_rank(cohort, marker_mode)
    km = cohort_survival(cohort)
    if km(tau) == 1.0:
        raise EstimationError("no events by tau")
    if np.count_nonzero(series.times <= tau) < 2:
        raise DataError("need at least two event times at or before tau")
    f = km.jump_masses()
    s = km.values
    include = (series.times <= tau) & series.defined
    w = 2.0 * f[include] * s[include]
    total = w.sum()
    if total <= 0:
        raise EstimationError("concordance weights vanish before tau")
    w = w / total
    value = float((series.raw[include] * w).sum())
    return CindexResult(value, float(tau), float(w.sum()))
