"""Cox proportional-hazards fitting on counting-process data.

Newton-Raphson maximum partial likelihood with step-halving, Efron
handling of tied event times, and risk sets driven by the start/stop
structure (an interval is at risk at ``t`` when ``start < t <= stop``).
Covariates are centered at their sample means before fitting, and risk
predictions are relative to those training means, so a subject at the
training means has predicted risk 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .cohort import Cohort
from .errors import DataError, EstimationError

__all__ = ["ModelSpec", "CoxFit", "fit_cox", "predict_risk",
           "kfold_cv_scores", "time_varying_scores"]

_TRANSFORMS = {
    "identity": lambda x: x,
    "log": np.log,
}


@dataclass(frozen=True)
class ModelSpec:
    """Named covariate terms with their transforms.

    ``terms`` is a tuple of (column, transform) pairs; transform is
    "identity" or "log".  The column name "marker" refers to the
    cohort's marker column.
    """

    terms: tuple
    formula: str = "custom"

    def __post_init__(self):
        for name, tr in self.terms:
            if tr not in _TRANSFORMS:
                raise DataError(f"unknown transform {tr!r} for term {name!r}")

    @classmethod
    def five_covariate(cls):
        """Liver prognostic model: log(bili), log(protime), edema, albumin, age."""
        return cls((("bili", "log"), ("protime", "log"), ("edema", "identity"),
                    ("albumin", "identity"), ("age", "identity")),
                   formula="five_covariate")

    @classmethod
    def four_covariate(cls):
        """Five-covariate model with log(bili) omitted."""
        return cls((("protime", "log"), ("edema", "identity"),
                    ("albumin", "identity"), ("age", "identity")),
                   formula="four_covariate")

    @classmethod
    def single_marker(cls):
        return cls((("marker", "identity"),), formula="marker")

    @classmethod
    def from_file(cls, path):
        """Read a key/value model file: one ``column = transform`` per line."""
        terms = []
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(f"malformed model line: {line!r}")
                name, tr = (part.strip() for part in line.split("=", 1))
                terms.append((name, tr))
        if not terms:
            raise DataError(f"model file {path} defines no terms")
        return cls(tuple(terms))

    @property
    def names(self):
        return tuple(f"log({n})" if tr == "log" else n for n, tr in self.terms)

    def design_matrix(self, source):
        """Design matrix for a Cohort or DataFrame, one row per interval."""
        cols = []
        for name, tr in self.terms:
            if isinstance(source, Cohort):
                if name == "marker":
                    x = source.marker
                elif name in source.covariates:
                    x = source.covariates[name]
                else:
                    raise DataError(f"missing covariate {name!r}")
            else:
                if isinstance(source, pd.Series):
                    source = source.to_frame().T
                if isinstance(source, dict):
                    source = pd.DataFrame({k: np.atleast_1d(v)
                                           for k, v in source.items()})
                if name not in source.columns:
                    raise DataError(f"missing covariate {name!r}")
                x = source[name].to_numpy(dtype=float)
            x = np.asarray(x, dtype=float)
            if np.any(~np.isfinite(x)):
                raise DataError(f"non-finite values in covariate {name!r}")
            if tr == "log" and np.any(x <= 0):
                raise DataError(f"log transform of {name!r} requires positive values")
            cols.append(_TRANSFORMS[tr](x))
        return np.column_stack(cols)


@dataclass(frozen=True)
class CoxFit:
    """Fitted Cox model: coefficients plus convergence diagnostics."""

    model: ModelSpec
    names: tuple
    coef: np.ndarray
    means: np.ndarray
    log_partial_likelihood: float
    loglik_null: float
    score: np.ndarray
    score_norm: float
    information: np.ndarray
    iterations: int
    converged: bool
    ties: str

    @property
    def coefficients(self):
        return dict(zip(self.names, self.coef))


class _PartialLikelihood:
    """Per-event-time machinery reused across Newton iterations."""

    def __init__(self, start, stop, event, X, ties):
        self.X = X
        self.n, self.p = X.shape
        self.ties = ties
        ev_times = np.unique(stop[event])
        if len(ev_times) == 0:
            raise DataError("no events in the data")
        self.stop_order = np.argsort(stop, kind="stable")
        self.start_order = np.argsort(start, kind="stable")
        self.stop_pos = np.searchsorted(stop[self.stop_order], ev_times, side="left")
        self.start_pos = np.searchsorted(start[self.start_order], ev_times, side="left")
        # event rows grouped by event time
        ev_rows = np.flatnonzero(event)
        ev_rows = ev_rows[np.argsort(stop[ev_rows], kind="stable")]
        self.event_rows = ev_rows
        self.group_start = np.searchsorted(stop[ev_rows], ev_times, side="left")
        self.group_end = np.searchsorted(stop[ev_rows], ev_times, side="right")
        self.n_times = len(ev_times)

    def _suffix(self, arr, order):
        s = arr[order]
        return np.concatenate([np.cumsum(s[::-1], axis=0)[::-1],
                               np.zeros((1,) + arr.shape[1:])])

    def evaluate(self, beta, derivs=True):
        X = self.X
        eta = X @ beta
        # overflow guard; each event time contributes as many eta terms as
        # log-denominator terms, so a constant shift cancels exactly
        eta -= eta.max()
        w = np.exp(eta)
        wx = w[:, None] * X
        sw_stop = self._suffix(w[:, None], self.stop_order)[:, 0]
        sw_start = self._suffix(w[:, None], self.start_order)[:, 0]
        swx_stop = self._suffix(wx, self.stop_order)
        swx_start = self._suffix(wx, self.start_order)
        if derivs:
            wxx = wx[:, :, None] * X[:, None, :]
            swxx_stop = self._suffix(wxx, self.stop_order)
            swxx_start = self._suffix(wxx, self.start_order)
        ll = 0.0
        g = np.zeros(self.p)
        info = np.zeros((self.p, self.p))
        for j in range(self.n_times):
            rows = self.event_rows[self.group_start[j]:self.group_end[j]]
            d = len(rows)
            WR = sw_stop[self.stop_pos[j]] - sw_start[self.start_pos[j]]
            VR = swx_stop[self.stop_pos[j]] - swx_start[self.start_pos[j]]
            WD = w[rows].sum()
            VD = wx[rows].sum(axis=0)
            if self.ties == "efron" and d > 1:
                ks = np.arange(d) / d
            else:
                ks = np.zeros(d)
            phi = WR - ks * WD
            ll += eta[rows].sum() - np.log(phi).sum()
            if derivs:
                QR = swxx_stop[self.stop_pos[j]] - swxx_start[self.start_pos[j]]
                QD = wxx[rows].sum(axis=0)
                v = VR[None, :] - ks[:, None] * VD[None, :]
                q = QR[None, :, :] - ks[:, None, None] * QD[None, :, :]
                vp = v / phi[:, None]
                g += X[rows].sum(axis=0) - vp.sum(axis=0)
                info += (q / phi[:, None, None]).sum(axis=0) - vp.T @ vp
        if derivs:
            return ll, g, info
        return ll


def fit_cox(cohort, spec, ties="efron", tol=1e-8, max_iter=50):
    """Maximize the partial likelihood on start/stop data.

    Newton-Raphson with step-halving whenever a step would decrease the
    log partial likelihood; convergence when the score's max-norm falls
    below ``tol``.  Efron's approximation handles tied event times
    (``ties="breslow"`` is available for comparison runs).  A singular
    information matrix raises, naming the collinear terms.
    """
    if ties not in ("efron", "breslow"):
        raise DataError(f"unknown tie-handling {ties!r}")
    X = spec.design_matrix(cohort)
    means = X.mean(axis=0)
    Xc = X - means
    event = cohort.status >= 1
    if not event.any():
        raise DataError("no events in the data")
    pl = _PartialLikelihood(cohort.start, cohort.stop, event, Xc, ties)

    beta = np.zeros(pl.p)
    ll, g, info = pl.evaluate(beta)
    loglik_null = ll
    iterations = 0
    converged = bool(np.max(np.abs(g)) < tol)
    while not converged and iterations < max_iter:
        iterations += 1
        step = _newton_step(info, g, spec.names)
        trial = beta + step
        ll_trial = pl.evaluate(trial, derivs=False)
        halvings = 0
        while not np.isfinite(ll_trial) or ll_trial < ll - 1e-12:
            step = step / 2.0
            trial = beta + step
            ll_trial = pl.evaluate(trial, derivs=False)
            halvings += 1
            if halvings > 40:
                break
        if halvings > 40:
            break
        beta = trial
        ll, g, info = pl.evaluate(beta)
        if np.max(np.abs(g)) < tol:
            converged = True
    return CoxFit(spec, spec.names, beta, means, float(ll),
                  float(loglik_null), g, float(np.max(np.abs(g))), info,
                  iterations, converged, ties)


def _newton_step(info, g, names):
    cond = np.linalg.cond(info) if np.all(np.isfinite(info)) else np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise EstimationError(
            "singular information matrix; collinear terms: "
            + ", ".join(_collinear_terms(info, names)))
    return np.linalg.solve(info, g)


def _collinear_terms(info, names):
    from scipy.linalg import qr
    _, r, piv = qr(info, pivoting=True)
    diag = np.abs(np.diag(r))
    bad = diag < diag.max() * 1e-10 if diag.max() > 0 else diag == diag
    return [names[piv[k]] for k in np.flatnonzero(bad)] or list(names)


def predict_risk(fit, covariates):
    """Relative risk ``exp((x - training_means) @ coef)``.

    ``covariates`` may be a mapping, a DataFrame row (or frame), or a
    Cohort; vector inputs return one value per row/interval.
    """
    X = fit.model.design_matrix(covariates)
    out = np.exp((X - fit.means) @ fit.coef)
    return out if out.size > 1 else float(out[0])


def kfold_cv_scores(cohort, spec, k=10, seed=0, ties="efron"):
    """Cross-validated risk scores for a baseline cohort.

    Subjects are assigned to ``k`` folds uniformly by a seeded
    generator (re-drawn while any fold is empty); each subject's score
    comes from the model fit on the other folds.  Scores are a pure
    function of (data, spec, k, seed).
    """
    if not cohort.is_baseline:
        raise DataError("cross-validated scores require a baseline cohort")
    if k < 2:
        raise DataError("k must be >= 2")
    n = cohort.n_subjects
    if k > n:
        raise DataError("more folds than subjects")
    rng = np.random.default_rng(seed)
    while True:
        folds = rng.integers(0, k, size=n)
        if np.bincount(folds, minlength=k).min() > 0:
            break
    scores = np.empty(n)
    for f in range(k):
        train = np.flatnonzero(folds != f)
        test = np.flatnonzero(folds == f)
        sub = cohort.select_subjects(train)
        if not np.any(sub.status >= 1):
            raise EstimationError(f"training split for fold {f} has no events")
        fit = fit_cox(sub, spec, ties=ties)
        X = spec.design_matrix(cohort)[test]
        scores[test] = np.exp((X - fit.means) @ fit.coef)
    return scores


def time_varying_scores(cohort, fit):
    """Score every interval with a baseline-trained fit (LOCF inputs)."""
    if not fit.converged:
        raise EstimationError("fit did not converge; refusing to score")
    return cohort.with_marker(predict_risk(fit, cohort))
