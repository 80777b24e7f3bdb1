"""Regression models and survey scoring.

The linear mixed model is a random-intercept model fit by maximum likelihood
with the variance ratio lambda = var_group / var_residual profiled out. For a
fixed lambda the GLS coefficients and the residual variance have closed
forms via the per-group Woodbury identity, so the fit reduces to a bracketed
one-dimensional search over log lambda in [-12, 12] (natural log). The search
first scans a 101-point grid, then refines around the grid optimum with a
bounded Brent step to 1e-8, which also guarantees the profile is at least as
high as anywhere on the grid.

The logistic model uses iteratively reweighted least squares; p-values in
both models come from the normal approximation (no Satterthwaite degrees of
freedom), which is recorded in the fit notes.

Survey scoring covers the 10-item usability scale, its 25-item
knowledge-practice extension (four subscales), and the six-dimension raw
task-load index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (CompleteSeparation, EmptyInput, IncompleteGroupMap,
                     NonConvergence, OutOfRange, RankDeficientDesign,
                     SingleClassOutcome, WrongItemCount)

NORMAL_APPROX_NOTE = "p-values and CIs use the normal approximation"
SEPARATION_BETA_LIMIT = 15.0


@dataclass(frozen=True)
class RegressionSpec:
    """Model formula: outcome ~ fixed effects + (1 | group).

    Fixed-effect terms are data field names; "a:b" denotes an interaction.
    String-valued fields are treatment coded against their first sorted
    level; numeric fields enter as-is.
    """
    outcome: str
    fixed: tuple[str, ...]
    group: str = "participant"


@dataclass(frozen=True)
class LMMFit:
    names: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    ci: np.ndarray                  # (p, 2)
    sigma2_participant: float
    sigma2_residual: float
    loglik: float
    lam: float
    converged: bool
    notes: tuple[str, ...] = ()

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])


@dataclass(frozen=True)
class LogisticFit:
    names: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    converged: bool
    iterations: int

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])


def _two_sided_p(stat: np.ndarray) -> np.ndarray:
    return np.array([math.erfc(abs(s) / math.sqrt(2.0)) for s in np.atleast_1d(stat)])


def _encode_column(name: str, values: list) -> tuple[list[str], np.ndarray]:
    if all(isinstance(v, (int, float, bool)) and not isinstance(v, str) for v in values):
        return [name], np.asarray(values, dtype=float).reshape(-1, 1)
    levels = sorted({str(v) for v in values})
    cols = []
    names = []
    for level in levels[1:]:
        names.append(f"{name}[{level}]")
        cols.append(np.array([1.0 if str(v) == level else 0.0 for v in values]))
    if not cols:  # single level: no information
        return [], np.zeros((len(values), 0))
    return names, np.column_stack(cols)


def build_design(data: Sequence[Mapping], spec: RegressionSpec) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Design matrix with intercept, treatment coding, and interactions."""
    y = np.asarray([float(row[spec.outcome]) for row in data])
    names = ["(Intercept)"]
    columns = [np.ones((len(data), 1))]
    encoded: dict[str, tuple[list[str], np.ndarray]] = {}

    def encode(term: str) -> tuple[list[str], np.ndarray]:
        if term not in encoded:
            encoded[term] = _encode_column(term, [row[term] for row in data])
        return encoded[term]

    for term in spec.fixed:
        if ":" in term:
            left, right = term.split(":", 1)
            lnames, lcols = encode(left)
            rnames, rcols = encode(right)
            for i, ln in enumerate(lnames):
                for j, rn in enumerate(rnames):
                    names.append(f"{ln}:{rn}")
                    columns.append((lcols[:, i] * rcols[:, j]).reshape(-1, 1))
        else:
            tnames, tcols = encode(term)
            names.extend(tnames)
            columns.append(tcols)

    X = np.hstack(columns)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientDesign("design matrix is rank deficient after encoding")
    return X, names, y


def _group_codes(data: Sequence[Mapping], group: str) -> np.ndarray:
    labels = [str(row[group]) for row in data]
    uniq = {lab: i for i, lab in enumerate(sorted(set(labels)))}
    return np.array([uniq[lab] for lab in labels])


class _ProfiledLMM:
    """Closed-form GLS at fixed lambda using per-group sufficient statistics."""

    def __init__(self, X: np.ndarray, y: np.ndarray, groups: np.ndarray):
        self.X, self.y, self.n, self.p = X, y, X.shape[0], X.shape[1]
        self.group_ids = np.unique(groups)
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        self.xsum = []   # per-group column sums of X
        self.ysum = []
        self.sizes = []
        for g in self.group_ids:
            mask = groups == g
            self.xsum.append(X[mask].sum(axis=0))
            self.ysum.append(float(y[mask].sum()))
            self.sizes.append(int(mask.sum()))
        self.xsum = np.vstack(self.xsum)
        self.ysum = np.asarray(self.ysum)
        self.sizes = np.asarray(self.sizes, dtype=float)

    def fit_at(self, lam: float) -> tuple[np.ndarray, float, float]:
        """(beta, sigma2_residual, loglik) at this variance ratio."""
        c = lam / (1.0 + lam * self.sizes)            # per-group shrinkage
        XtVX = self.XtX - (self.xsum * c[:, None]).T @ self.xsum
        XtVy = self.Xty - self.xsum.T @ (c * self.ysum)
        ytVy = self.yty - float(c @ (self.ysum ** 2))
        beta = np.linalg.solve(XtVX, XtVy)
        rss = ytVy - 2.0 * float(beta @ XtVy) + float(beta @ XtVX @ beta)
        rss = max(rss, 1e-300)
        sigma2 = rss / self.n
        logdet = float(np.sum(np.log1p(lam * self.sizes)))
        loglik = -0.5 * (self.n * math.log(2.0 * math.pi * sigma2) + logdet + self.n)
        return beta, sigma2, loglik

    def cov_beta(self, lam: float, sigma2: float) -> np.ndarray:
        c = lam / (1.0 + lam * self.sizes)
        XtVX = self.XtX - (self.xsum * c[:, None]).T @ self.xsum
        return sigma2 * np.linalg.inv(XtVX)


LOG_LAMBDA_RANGE = (-12.0, 12.0)
PROFILE_GRID_POINTS = 101


def fit_lmm(data: Sequence[Mapping], spec: RegressionSpec, *,
            force_lambda: float | None = None) -> LMMFit:
    """Random-intercept linear mixed model by profiled maximum likelihood.

    force_lambda pins the variance ratio (0.0 reproduces ordinary least
    squares exactly). When every group has a single observation the ratio is
    unidentifiable and the fit falls back to OLS with a note.
    """
    X, names, y = build_design(data, spec)
    groups = _group_codes(data, spec.group)
    if X.shape[0] <= X.shape[1]:
        raise RankDeficientDesign("need more observations than regressors")
    if len(np.unique(groups)) < 2:
        raise ValueError("need at least two grouping levels")
    prof = _ProfiledLMM(X, y, groups)

    notes = [NORMAL_APPROX_NOTE]
    converged = True
    if force_lambda is not None:
        lam = float(force_lambda)
        notes.append(f"lambda forced to {lam:g}")
    elif np.all(prof.sizes == 1.0):
        lam = 0.0
        notes.append("single observation per group: variance ratio "
                     "unidentifiable, ordinary least squares fallback")
    else:
        lo, hi = LOG_LAMBDA_RANGE
        grid = np.linspace(lo, hi, PROFILE_GRID_POINTS)
        values = [prof.fit_at(math.exp(g))[2] for g in grid]
        best = int(np.argmax(values))
        left = grid[max(0, best - 1)]
        right = grid[min(len(grid) - 1, best + 1)]
        res = minimize_scalar(lambda lg: -prof.fit_at(math.exp(lg))[2],
                              bounds=(left, right), method="bounded",
                              options={"xatol": 1e-8})
        if not res.success:
            raise NonConvergence("bracketed profile search failed")
        lam = math.exp(res.x) if -res.fun >= values[best] else math.exp(grid[best])
        if best == len(grid) - 1:
            converged = False
            notes.append("profile optimum at the upper lambda bound")

    beta, sigma2, loglik = prof.fit_at(lam)
    cov = prof.cov_beta(lam, sigma2)
    se = np.sqrt(np.diag(cov))
    t = beta / se
    p = _two_sided_p(t)
    ci = np.column_stack([beta - 1.96 * se, beta + 1.96 * se])
    return LMMFit(
        names=tuple(names), beta=beta, se=se, t=t, p=p, ci=ci,
        sigma2_participant=lam * sigma2, sigma2_residual=sigma2,
        loglik=loglik, lam=lam, converged=converged, notes=tuple(notes),
    )


def profile_loglik(data: Sequence[Mapping], spec: RegressionSpec,
                   lam: float) -> float:
    """Profile log-likelihood at a given variance ratio (for diagnostics)."""
    X, _, y = build_design(data, spec)
    groups = _group_codes(data, spec.group)
    return _ProfiledLMM(X, y, groups).fit_at(lam)[2]


def fit_logistic(data: Sequence[Mapping], spec: RegressionSpec,
                 max_iter: int = 100, tol: float = 1e-10) -> LogisticFit:
    """Binomial logistic regression by iteratively reweighted least squares.

    Flags complete separation when any coefficient magnitude passes 15 during
    the iterations.
    """
    X, names, y = build_design(data, spec)
    if len(set(y.tolist())) < 2:
        raise SingleClassOutcome("outcome has a single class")
    if not set(y.tolist()) <= {0.0, 1.0}:
        raise ValueError("logistic outcome must be binary 0/1")

    beta = np.zeros(X.shape[1])
    converged = False
    H = None
    it = 0
    for it in range(1, max_iter + 1):
        eta = np.clip(X @ beta, -30.0, 30.0)
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        grad = X.T @ (y - mu)
        H = X.T @ (X * w[:, None])
        if float(np.linalg.norm(grad)) < tol:
            converged = True
            break
        beta = beta + np.linalg.solve(H, grad)
        if float(np.max(np.abs(beta))) > SEPARATION_BETA_LIMIT:
            raise CompleteSeparation("coefficient escaped; outcome separated")

    cov = np.linalg.inv(H)
    se = np.sqrt(np.diag(cov))
    z = beta / se
    return LogisticFit(names=tuple(names), beta=beta, se=se, z=z,
                       p=_two_sided_p(z), converged=converged, iterations=it)


def logistic_gradient_and_hessian(data: Sequence[Mapping], spec: RegressionSpec,
                                  beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the log-likelihood at beta (diagnostics)."""
    X, _, y = build_design(data, spec)
    mu = 1.0 / (1.0 + np.exp(-np.clip(X @ beta, -30.0, 30.0)))
    grad = X.T @ (y - mu)
    hess = -(X.T @ (X * (mu * (1.0 - mu))[:, None]))
    return grad, hess


# --- survey scoring -----------------------------------------------------------

SUS_ITEMS = 10
KM_SUS_ITEMS = 25
KM_PRACTICES = ("access", "storage", "sharing", "application")
TLX_DIMENSIONS = ("mental_demand", "physical_demand", "temporal_demand",
                  "performance", "effort", "frustration")


@dataclass(frozen=True)
class SurveyResponse:
    participant: str
    instrument: str                       # sus | km_sus | nasa_tlx
    items: Mapping[int | str, int]
    condition: str = ""


def _check_items(items: Mapping, count: int, lo: int = 1, hi: int = 5) -> None:
    if len(items) != count:
        raise WrongItemCount(f"expected {count} items, got {len(items)}")
    for key, value in items.items():
        if not isinstance(value, int) or not lo <= value <= hi:
            raise OutOfRange(f"item {key!r} = {value!r} outside [{lo}, {hi}]")


def _sus_contribution(item_no: int, value: int) -> int:
    # Odd-numbered statements are positive-tone, even-numbered negative-tone.
    return (value - 1) if item_no % 2 == 1 else (5 - value)


def score_sus(r: SurveyResponse) -> float:
    """Standard 10-item usability score in [0, 100]."""
    items = {int(k): v for k, v in r.items.items()}
    _check_items(items, SUS_ITEMS)
    if set(items) != set(range(1, SUS_ITEMS + 1)):
        raise WrongItemCount("items must be numbered 1..10")
    total = sum(_sus_contribution(i, items[i]) for i in range(1, SUS_ITEMS + 1))
    return total * 2.5


@dataclass(frozen=True)
class KMSUSScores:
    overall: float
    subscales: Mapping[str, float]


def score_km_sus(r: SurveyResponse, groups: Mapping[int, str]) -> KMSUSScores:
    """25-item extension: one usability-style subscale per knowledge
    practice, each scaled to [0, 100], overall = mean of the subscales."""
    items = {int(k): v for k, v in r.items.items()}
    _check_items(items, KM_SUS_ITEMS)
    if set(items) != set(range(1, KM_SUS_ITEMS + 1)):
        raise WrongItemCount("items must be numbered 1..25")
    groups = {int(k): v for k, v in groups.items()}
    if set(groups) != set(range(1, KM_SUS_ITEMS + 1)) or set(groups.values()) != set(KM_PRACTICES):
        raise IncompleteGroupMap(
            "groups must map items 1..25 onto the four knowledge practices")
    subscales = {}
    for practice in KM_PRACTICES:
        members = sorted(i for i, p in groups.items() if p == practice)
        total = sum(_sus_contribution(i, items[i]) for i in members)
        subscales[practice] = total * (100.0 / (4 * len(members)))
    overall = sum(subscales.values()) / len(subscales)
    return KMSUSScores(overall=overall, subscales=subscales)


@dataclass(frozen=True)
class TLXSummary:
    mean: float
    sd: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def score_tlx(responses: Sequence[SurveyResponse]) -> dict[str, TLXSummary]:
    """Raw (unweighted) task-load aggregation per dimension."""
    if not responses:
        raise EmptyInput("no task-load responses")
    for r in responses:
        items = {str(k): v for k, v in r.items.items()}
        if set(items) != set(TLX_DIMENSIONS):
            raise WrongItemCount("each response needs exactly the six dimensions")
        _check_items(items, len(TLX_DIMENSIONS))
    out = {}
    for dim in TLX_DIMENSIONS:
        values = np.array([float(r.items[dim]) for r in responses])
        sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        q1, med, q3 = (float(q) for q in np.percentile(values, [25, 50, 75]))
        out[dim] = TLXSummary(
            mean=float(values.mean()), sd=sd,
            minimum=float(values.min()), q1=q1, median=med, q3=q3,
            maximum=float(values.max()),
        )
    return out


def tlx_table(summary: Mapping[str, TLXSummary]) -> str:
    lines = ["dimension\tmean\tsd\tmin\tq1\tmedian\tq3\tmax"]
    for dim in TLX_DIMENSIONS:
        s = summary[dim]
        lines.append(f"{dim}\t{s.mean:.4f}\t{s.sd:.4f}\t{s.minimum:.4f}"
                     f"\t{s.q1:.4f}\t{s.median:.4f}\t{s.q3:.4f}\t{s.maximum:.4f}")
    return "\n".join(lines) + "\n"


def fit_table(fits: Mapping[str, LMMFit | LogisticFit]) -> str:
    """Delimited fit summary: coefficient, SE, statistic, p, CI bounds."""
    lines = ["model\tterm\tbeta\tse\tstat\tp\tci_low\tci_high"]
    for model_name in sorted(fits):
        fit = fits[model_name]
        stats_col = fit.t if isinstance(fit, LMMFit) else fit.z
        for i, term in enumerate(fit.names):
            lo_hi = (fit.ci[i] if isinstance(fit, LMMFit)
                     else (fit.beta[i] - 1.96 * fit.se[i], fit.beta[i] + 1.96 * fit.se[i]))
            lines.append(
                f"{model_name}\t{term}\t{fit.beta[i]:.6f}\t{fit.se[i]:.6f}"
                f"\t{stats_col[i]:.4f}\t{fit.p[i]:.6f}\t{lo_hi[0]:.6f}\t{lo_hi[1]:.6f}")
    return "\n".join(lines) + "\n"
