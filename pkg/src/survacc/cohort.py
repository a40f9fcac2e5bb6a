"""Data model for right-censored survival data with time-varying markers.

A cohort is stored in counting-process ("start/stop") form: each subject
contributes one or more contiguous intervals ``(start, stop]``, each
carrying the marker and covariate values in force on that interval.  A
subject with baseline-only measurements contributes a single interval
``(0, follow_up]``.  Status is an integer cause code: 0 for censoring,
``>= 1`` for an event (cause 1 is the only cause in single-event data).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError

CENSORED = 0

__all__ = [
    "CENSORED",
    "ObservationInterval",
    "Cohort",
    "RiskSet",
    "build_counting_process",
    "risk_set_at",
    "landmark_subset",
    "transplant_censor",
]


@dataclass(frozen=True)
class ObservationInterval:
    """One counting-process row.

    ``status == 0`` means the interval ends by censoring (including
    administrative censoring when a newer measurement supersedes the
    marker value); ``status >= 1`` is an event of that cause.
    """

    subject_id: object
    start: float
    stop: float
    status: int
    marker: float = np.nan
    covariates: dict = field(default_factory=dict)


class Cohort:
    """Immutable collection of observation intervals.

    Intervals are kept sorted by (subject, start).  All arrays are
    aligned per interval and marked read-only, so a cohort can be shared
    freely between concurrent readers.

    Parameters
    ----------
    subject_id, start, stop, status : array_like
        Interval bookkeeping; see module docstring for conventions.
    marker : array_like, optional
        Marker / risk-score value in force on each interval.  Defaults
        to NaN (no marker assigned yet).
    covariates : dict of str -> array_like, optional
        Named covariate columns, aligned per interval.
    time_unit : float
        Days per display unit (used only at I/O boundaries).
    """

    def __init__(self, subject_id, start, stop, status, marker=None,
                 covariates=None, time_unit=365.25, validate=True):
        subject_id = np.asarray(subject_id)
        start = np.asarray(start, dtype=float)
        stop = np.asarray(stop, dtype=float)
        status = np.asarray(status, dtype=int)
        n = len(subject_id)
        if not (len(start) == len(stop) == len(status) == n):
            raise DataError("interval arrays must have equal length")
        if marker is None:
            marker = np.full(n, np.nan)
        marker = np.asarray(marker, dtype=float)
        if len(marker) != n:
            raise DataError("marker length mismatch")
        if time_unit <= 0:
            raise DataError("time_unit must be positive")

        codes, order = _subject_codes(subject_id)
        idx = np.lexsort((start, codes))
        self.subject_id = subject_id[idx]
        self.start = start[idx]
        self.stop = stop[idx]
        self.status = status[idx]
        self.marker = marker[idx]
        self._codes = codes[idx]
        self._subjects = order
        self.covariates = {}
        if covariates:
            for name, col in covariates.items():
                col = np.asarray(col, dtype=float)
                if len(col) != n:
                    raise DataError(f"covariate {name!r} length mismatch")
                self.covariates[name] = col[idx]
        self.time_unit = float(time_unit)
        if validate:
            self._validate()
        for arr in (self.subject_id, self.start, self.stop, self.status,
                    self.marker, self._codes, *self.covariates.values()):
            arr.flags.writeable = False

    def _validate(self):
        if np.any(self.start < 0):
            raise DataError("interval start times must be >= 0")
        if np.any(self.start >= self.stop):
            raise DataError("intervals must satisfy start < stop")
        codes = self._codes
        same = codes[1:] == codes[:-1]
        # within a subject, intervals are contiguous: stop == next start
        if np.any(same & (self.stop[:-1] != self.start[1:])):
            raise DataError("subject intervals must be contiguous")
        # only the final interval of a subject may carry an event
        nonfinal = np.concatenate([same, [False]])
        if np.any(nonfinal & (self.status >= 1)):
            raise DataError("only a subject's final interval may be an event")

    # -- basic shape -------------------------------------------------
    @property
    def n_intervals(self):
        return len(self.start)

    @property
    def n_subjects(self):
        return len(self._subjects)

    @property
    def subject_ids(self):
        """Distinct subject ids, in first-appearance order."""
        return self._subjects

    @property
    def is_baseline(self):
        """True when every subject has a single interval starting at 0."""
        return self.n_intervals == self.n_subjects and not self.start.any()

    def __len__(self):
        return self.n_intervals

    # -- per-subject views -------------------------------------------
    def first_rows(self):
        """Index of each subject's first interval."""
        return np.searchsorted(self._codes, np.arange(self.n_subjects))

    def last_rows(self):
        """Index of each subject's final interval."""
        return np.searchsorted(self._codes, np.arange(self.n_subjects),
                               side="right") - 1

    def intervals(self):
        """Iterate intervals as :class:`ObservationInterval` records."""
        for i in range(self.n_intervals):
            yield ObservationInterval(
                self.subject_id[i], float(self.start[i]), float(self.stop[i]),
                int(self.status[i]), float(self.marker[i]),
                {k: float(v[i]) for k, v in self.covariates.items()})

    def event_times(self, cause=None):
        """Distinct event times, ascending.  ``cause=None`` pools causes."""
        if cause is None:
            mask = self.status >= 1
        else:
            mask = self.status == cause
        return np.unique(self.stop[mask])

    def baseline_marker_per_interval(self):
        """Each interval mapped to its subject's first-interval marker."""
        return self.marker[self.first_rows()][self._codes]

    # -- derived cohorts ----------------------------------------------
    def with_marker(self, values):
        """New cohort with the marker column replaced (same intervals)."""
        values = np.asarray(values, dtype=float)
        if len(values) != self.n_intervals:
            raise DataError("marker length mismatch")
        return Cohort(self.subject_id, self.start, self.stop, self.status,
                      values, dict(self.covariates), self.time_unit,
                      validate=False)

    def select_subjects(self, subject_positions, fresh_ids=False):
        """Cohort made of the listed subjects (repeats allowed).

        ``subject_positions`` indexes into :attr:`subject_ids`.  With
        ``fresh_ids`` each selected subject keeps its full interval
        chain under a new sequential id, which is what subject-level
        resampling needs when a subject is drawn more than once.
        """
        first = self.first_rows()
        last = self.last_rows()
        rows = []
        ids = []
        for new_id, pos in enumerate(subject_positions):
            sl = np.arange(first[pos], last[pos] + 1)
            rows.append(sl)
            ids.append(np.full(len(sl), new_id if fresh_ids else pos))
        rows = np.concatenate(rows) if rows else np.empty(0, dtype=int)
        ids = np.concatenate(ids) if ids else np.empty(0, dtype=int)
        sid = ids if fresh_ids else self.subject_id[rows]
        return Cohort(sid, self.start[rows], self.stop[rows],
                      self.status[rows], self.marker[rows],
                      {k: v[rows] for k, v in self.covariates.items()},
                      self.time_unit, validate=False)

    # -- I/O ------------------------------------------------------------
    def to_frame(self):
        data = {"id": self.subject_id, "start": self.start,
                "stop": self.stop, "status": self.status,
                "marker": self.marker}
        data.update(self.covariates)
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, df, time_unit=365.25):
        required = ["id", "start", "stop", "status"]
        for col in required:
            if col not in df.columns:
                raise DataError(f"cohort table is missing column {col!r}")
        marker = df["marker"].to_numpy(float) if "marker" in df.columns else None
        covs = {c: df[c].to_numpy(float) for c in df.columns
                if c not in required + ["marker"]}
        return cls(df["id"].to_numpy(), df["start"].to_numpy(float),
                   df["stop"].to_numpy(float), df["status"].to_numpy(int),
                   marker, covs, time_unit)


def _subject_codes(subject_id):
    """Integer codes per interval, numbered by first appearance."""
    seen = {}
    codes = np.empty(len(subject_id), dtype=int)
    order = []
    for i, sid in enumerate(subject_id):
        key = sid.item() if hasattr(sid, "item") else sid
        if key not in seen:
            seen[key] = len(order)
            order.append(key)
        codes[i] = seen[key]
    return codes, np.asarray(order)


@dataclass(frozen=True)
class RiskSet:
    """Partition of the subjects under observation at ``eval_time``.

    Cases are intervals ending in an event exactly at the evaluation
    time.  Controls are the remaining at-risk intervals: those spanning
    past the evaluation time, plus event-free subjects censored exactly
    at it (they are known to survive beyond it).
    """

    eval_time: float
    case_ids: np.ndarray
    control_ids: np.ndarray
    case_marker: np.ndarray
    control_marker: np.ndarray
    case_index: np.ndarray
    control_index: np.ndarray

    @property
    def n_cases(self):
        return len(self.case_ids)

    @property
    def n_controls(self):
        return len(self.control_ids)


def risk_set_at(cohort, t, cause=None):
    """Dichotomize the risk set at time ``t`` into cases and controls.

    An interval is at risk at ``t`` when ``start < t <= stop``.  Cases
    are at-risk intervals with an event at ``t`` (optionally restricted
    to one cause code); everything else at risk is a control.  An empty
    risk set is a valid result.
    """
    if t <= 0:
        raise DataError("risk sets are defined for t > 0")
    at_risk = (cohort.start < t) & (cohort.stop >= t)
    if cause is None:
        is_event = cohort.status >= 1
    else:
        is_event = cohort.status == cause
    case = at_risk & (cohort.stop == t) & is_event
    control = at_risk & ~case
    ci = np.flatnonzero(case)
    ki = np.flatnonzero(control)
    return RiskSet(float(t), cohort.subject_id[ci], cohort.subject_id[ki],
                   cohort.marker[ci], cohort.marker[ki], ci, ki)


def landmark_subset(cohort, s, marker_mode="updated"):
    """Re-baseline the cohort at index time ``s``.

    Keeps subjects still event-free and under observation at ``s``
    (their interval containing ``s`` satisfies ``start <= s < stop``)
    and collapses each to a single record with the time origin shifted
    to ``s``.  ``marker_mode="updated"`` takes the marker value in
    force at ``s`` (last observation carried forward); ``"baseline"``
    takes the subject's first-interval value.
    """
    if s < 0:
        raise DataError("landmark time must be >= 0")
    if marker_mode not in ("updated", "baseline"):
        raise DataError(f"unknown marker_mode {marker_mode!r}")
    covering = (cohort.start <= s) & (cohort.stop > s)
    rows = np.flatnonzero(covering)
    codes = cohort._codes[rows]
    last = cohort.last_rows()[codes]
    first = cohort.first_rows()[codes]
    src = rows if marker_mode == "updated" else first
    return Cohort(cohort.subject_id[rows],
                  np.zeros(len(rows)),
                  cohort.stop[last] - s,
                  cohort.status[last],
                  cohort.marker[src],
                  {k: v[src] for k, v in cohort.covariates.items()},
                  cohort.time_unit, validate=False)


_PBC_STATUS = {0: CENSORED, 1: CENSORED, 2: 1}


def transplant_censor(raw_status):
    """Map the PBC three-level status to censored/event.

    Transplant recipients (code 1) are censored at transplantation:
    the models under study predict mortality without transplantation.
    Death (code 2) is the event; code 0 stays censored.
    """
    arr = np.asarray(raw_status)
    out = np.empty(arr.shape, dtype=int)
    it = np.nditer(arr, flags=["multi_index"])
    for v in it:
        code = int(v)
        if code not in _PBC_STATUS:
            raise DataError(f"unknown status code {code!r}")
        out[it.multi_index] = _PBC_STATUS[code]
    if out.shape == ():
        return int(out)
    return out


def build_counting_process(baseline, longitudinal, locf=True, columns=None,
                           value_columns=None, diagnostics=None):
    """Assemble a counting-process cohort from two tables.

    Parameters
    ----------
    baseline : DataFrame
        One row per subject with total follow-up time and terminal
        status (already reduced to 0/1..J cause codes).
    longitudinal : DataFrame
        One row per (subject, measurement day) with the measured values.
    locf : bool
        Last observation carried forward is the only supported rule;
        passing False raises.
    columns : dict, optional
        Column-name overrides: keys ``id``, ``time``, ``status``,
        ``day``.
    value_columns : sequence of str, optional
        Measured columns to carry onto intervals.  Defaults to the
        numeric columns shared by both tables (minus bookkeeping).
    diagnostics : list, optional
        Row-level rejection messages are appended here: measurements
        after follow-up end and duplicate (subject, day) rows are
        rejected individually rather than failing the build.

    Each subject yields one interval per retained measurement epoch;
    only the final interval carries the terminal status.  Subjects with
    no usable longitudinal rows fall back to a single baseline epoch,
    seeded from the baseline row when it carries the value columns.
    """
    if not locf:
        raise DataError("only last-observation-carried-forward is supported")
    cols = {"id": "id", "time": "time", "status": "status", "day": "day"}
    if columns:
        cols.update(columns)
    for key in ("id", "time", "status"):
        if cols[key] not in baseline.columns:
            raise DataError(f"baseline table is missing column {cols[key]!r}")
    for key in ("id", "day"):
        if cols[key] not in longitudinal.columns:
            raise DataError(
                f"longitudinal table is missing column {cols[key]!r}")
    if diagnostics is None:
        diagnostics = []
    if value_columns is None:
        skip = set(cols.values())
        value_columns = [c for c in longitudinal.columns
                         if c not in skip
                         and pd.api.types.is_numeric_dtype(longitudinal[c])]

    base = baseline.set_index(cols["id"], drop=False)
    if base.index.has_duplicates:
        raise DataError("baseline table has duplicate subject ids")
    long_by_subject = dict(iter(longitudinal.groupby(cols["id"], sort=False)))

    sid, start, stop, status = [], [], [], []
    covs = {c: [] for c in value_columns}
    for subject in base.index:
        brow = base.loc[subject]
        follow_up = float(brow[cols["time"]])
        terminal = int(brow[cols["status"]])
        g = long_by_subject.pop(subject, None)
        days, values = [], []
        if g is not None:
            g = g.sort_values(cols["day"])
            seen_days = set()
            for _, row in g.iterrows():
                day = float(row[cols["day"]])
                if day in seen_days:
                    diagnostics.append(
                        f"subject {subject}: duplicate measurement day {day:g} rejected")
                    continue
                seen_days.add(day)
                if day >= follow_up:
                    diagnostics.append(
                        f"subject {subject}: measurement at day {day:g} is at/after "
                        f"follow-up end {follow_up:g}; rejected")
                    continue
                days.append(day)
                values.append({c: float(row[c]) for c in value_columns})
        if not days:
            vals = {c: float(brow[c]) if c in brow.index else np.nan
                    for c in value_columns}
            days, values = [0.0], [vals]
        bounds = days[1:] + [follow_up]
        for i, day in enumerate(days):
            sid.append(subject)
            start.append(day)
            stop.append(bounds[i])
            status.append(terminal if i == len(days) - 1 else CENSORED)
            for c in value_columns:
                covs[c].append(values[i][c])
    for subject in long_by_subject:
        diagnostics.append(
            f"subject {subject}: longitudinal rows with no baseline record; rejected")
    return Cohort(np.asarray(sid), start, stop, status, None, covs)
