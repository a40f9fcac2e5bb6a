"""Per-time accuracy series shared by the estimator modules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = ["AccuracySeries"]


@dataclass(frozen=True)
class AccuracySeries:
    """Accuracy values indexed by time.

    ``raw`` holds the per-time estimate (mean case rank, true-positive
    fraction, or a per-landmark AUC); ``smoothed`` and ``variance`` are
    filled by the nearest-neighbor time smoother.  Entries that are
    undefined on the data (for instance an event time with no controls)
    are kept, flagged False in ``defined``, with NaN values: undefined
    points are never silently dropped.
    """

    times: np.ndarray
    raw: np.ndarray
    n_cases: np.ndarray
    n_controls: np.ndarray
    smoothed: np.ndarray | None = None
    variance: np.ndarray | None = None
    defined: np.ndarray = field(default=None)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        raw = np.asarray(self.raw, dtype=float)
        if len(times) != len(raw):
            raise DataError("times and raw must have equal length")
        if np.any(np.diff(times) <= 0):
            raise DataError("series times must be strictly increasing")
        defined = self.defined
        if defined is None:
            defined = ~np.isnan(raw)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "n_cases", np.asarray(self.n_cases))
        object.__setattr__(self, "n_controls", np.asarray(self.n_controls))
        object.__setattr__(self, "defined", np.asarray(defined, dtype=bool))
        for name in ("smoothed", "variance"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=float))

    def __len__(self):
        return len(self.times)

    def value_at(self, t, which="smoothed"):
        """Linear interpolation of a column at arbitrary times ``t``.

        Interpolates between defined entries and clamps outside their
        range.  ``which`` may be "smoothed" or "raw".
        """
        col = getattr(self, which)
        if col is None:
            raise DataError(f"series has no {which!r} values")
        ok = self.defined & ~np.isnan(col)
        if not ok.any():
            raise DataError("series has no defined entries")
        return np.interp(t, self.times[ok], col[ok])
