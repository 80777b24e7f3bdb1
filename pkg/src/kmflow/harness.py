"""Per-iteration evaluation metrics, condition comparisons, and reports.

Metric definitions:

* retrieval_speed: response timestamp minus the triggering query timestamp.
* time_to_action: first user action after a response, minus the response.
* task_duration: last event minus first event.
* relevant_response_ratio: share of query ratings at or above the usefulness
  threshold (default 2 on the 0-4 scale).
* search_actions: clicks, scrolls and navigations in the session.
* just_enough_responses: queries issued until the first useful response
  (total query count when none was useful).
* capture_efficiency: seconds spent in store-family coded runs divided by the
  rubric quality of the session.
* completion_ratio / completion_quality: straight from annotations.
* failure_rate: not completed, or completed outside the session time limit.
* km_time: summed query -> response -> next-action interval durations.

Comparisons use a random-intercept model for continuous metrics (adding task
as a fixed effect for retrieval speed and quality, and order/task interactions
for the final-iteration quality model) and a logistic model for binary
metrics. Improvement descriptors divide the condition-mean difference by the
baseline mean, phrased per metric ("73% faster", "44% less KM time", ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .coding import CoderConfig, KMCode, code_session_detailed
from .errors import EmptyReport, KmflowError, MissingAnnotation
from .stats import RegressionSpec, fit_lmm, fit_logistic
from .trace import Corpus, Session

USER_ACTIONS = frozenset({"navigation", "scroll", "click", "type", "select",
                          "submit", "query", "popup_click"})
SEARCH_ACTIONS = frozenset({"navigation", "scroll", "click"})
CAPTURE_CODES = frozenset({KMCode.SP1_TypeInteract, KMCode.SP2_SelectType,
                           KMCode.SP3_TypeDriven, KMCode.SP4_OpenType})

SessionKey = tuple[str, str, str]


@dataclass
class Annotations:
    """External ratings: relevance per (participant, task, condition, query
    index), and per-session rubric quality, completion, time limit (seconds)
    and condition order."""
    relevance: dict[tuple[str, str, str, int], int] = field(default_factory=dict)
    quality: dict[SessionKey, float] = field(default_factory=dict)
    completed: dict[SessionKey, bool] = field(default_factory=dict)
    time_limit: dict[SessionKey, float] = field(default_factory=dict)
    order: dict[SessionKey, int] = field(default_factory=dict)

    def __post_init__(self):
        for key, rating in self.relevance.items():
            if not 0 <= rating <= 4:
                raise ValueError(f"relevance rating {rating} outside [0, 4] at {key}")
        for key, q in self.quality.items():
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"quality {q} outside [0, 1] at {key}")

    def session_ratings(self, key: SessionKey) -> list[int]:
        p, t, c = key
        picked = [(i, r) for (pp, tt, cc, i), r in self.relevance.items()
                  if (pp, tt, cc) == key]
        picked.sort()
        return [r for _, r in picked]


def annotations_to_csv(a: Annotations) -> str:
    rows = ["kind,participant,task,condition,key,value"]
    for (p, t, c, i), r in sorted(a.relevance.items()):
        rows.append(f"relevance,{p},{t},{c},{i},{r}")
    for (p, t, c), v in sorted(a.quality.items()):
        rows.append(f"quality,{p},{t},{c},,{v}")
    for (p, t, c), v in sorted(a.completed.items()):
        rows.append(f"completed,{p},{t},{c},,{int(v)}")
    for (p, t, c), v in sorted(a.time_limit.items()):
        rows.append(f"time_limit,{p},{t},{c},,{v}")
    for (p, t, c), v in sorted(a.order.items()):
        rows.append(f"order,{p},{t},{c},,{v}")
    return "\n".join(rows) + "\n"


def annotations_from_csv(text: str) -> Annotations:
    a = Annotations()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    for line in lines[1:]:
        kind, p, t, c, key, value = line.split(",", 5)
        skey = (p, t, c)
        if kind == "relevance":
            a.relevance[(p, t, c, int(key))] = int(value)
        elif kind == "quality":
            a.quality[skey] = float(value)
        elif kind == "completed":
            a.completed[skey] = bool(int(value))
        elif kind == "time_limit":
            a.time_limit[skey] = float(value)
        elif kind == "order":
            a.order[skey] = int(value)
        else:
            raise ValueError(f"unknown annotation kind {kind!r}")
    return a


def apply_session_metadata(corpus: Corpus, annotations: Annotations) -> Corpus:
    """Attach outcome and condition order from annotations to sessions."""
    from dataclasses import replace
    sessions = []
    for s in corpus.sessions:
        outcome = s.outcome
        if s.key in annotations.completed:
            outcome = "pass" if annotations.completed[s.key] else "fail"
        order = annotations.order.get(s.key, s.order_index)
        sessions.append(replace(s, outcome=outcome, order_index=order))
    return Corpus(sessions=tuple(sessions), source=corpus.source,
                  diagnostics=corpus.diagnostics)


@dataclass(frozen=True)
class MetricDef:
    id: str
    unit: str
    lower_is_better: bool
    binary: bool
    better_phrase: str                 # .format(pct=...) or delta phrasing
    delta_phrase: str | None = None    # use absolute difference instead of %


METRICS: dict[str, MetricDef] = {m.id: m for m in [
    MetricDef("retrieval_speed", "seconds", True, False, "{pct}% faster"),
    MetricDef("time_to_action", "seconds", True, False, "{pct}% faster",
              delta_phrase="{delta:.0f} secs faster"),
    MetricDef("relevant_response_ratio", "ratio", False, True, "{pct}% more relevant"),
    MetricDef("search_actions", "count", True, False, "{pct}% fewer actions"),
    MetricDef("task_duration", "seconds", True, False, "{pct}% faster"),
    MetricDef("capture_efficiency", "seconds per quality unit", True, False,
              "{pct}% lower effort"),
    MetricDef("just_enough_responses", "count", True, False, "{pct}% fewer queries"),
    MetricDef("completion_ratio", "ratio", False, True, "{pct}% increase"),
    MetricDef("completion_quality", "score", False, False, "{pct}% better"),
    MetricDef("failure_rate", "ratio", True, True, "{pct}% fewer failures"),
    MetricDef("km_time", "seconds", True, False, "{pct}% less KM time"),
]}

PROFILES: dict[str, tuple[str, ...]] = {
    "iter1": ("retrieval_speed", "time_to_action", "relevant_response_ratio",
              "search_actions", "task_duration", "capture_efficiency",
              "just_enough_responses", "completion_ratio", "completion_quality"),
    "iter2": ("retrieval_speed", "time_to_action", "relevant_response_ratio",
              "search_actions", "task_duration", "capture_efficiency",
              "just_enough_responses", "completion_ratio", "completion_quality"),
    "iter3": ("task_duration", "km_time", "completion_quality", "failure_rate"),
}

# Model formula per metric: F1 = condition only, F2 = condition + task,
# F4 = condition * order + condition * task (final-iteration quality model),
# F3 = logistic on condition.
_F2_METRICS = frozenset({"retrieval_speed", "completion_quality"})


@dataclass(frozen=True)
class MetricResult:
    metric_id: str
    unit: str
    per_session: Mapping[SessionKey, float]
    per_condition: Mapping[str, tuple[float, float, int]]   # mean, sd, n
    error: str | None = None


def _condition_stats(values: Mapping[SessionKey, float]) -> dict[str, tuple[float, float, int]]:
    buckets: dict[str, list[float]] = {}
    for (p, t, c), v in values.items():
        buckets.setdefault(c, []).append(v)
    out = {}
    for cond, vals in sorted(buckets.items()):
        arr = np.asarray(vals, dtype=float)
        sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        out[cond] = (float(arr.mean()), sd, len(arr))
    return out


def _query_chains(session: Session) -> list[tuple[int, int | None, int | None]]:
    """(query idx, response idx, next-user-action idx) triples."""
    chains = []
    events = session.events
    for i, ev in enumerate(events):
        if ev.action != "query":
            continue
        resp = next((j for j in range(i + 1, len(events))
                     if events[j].action == "response"), None)
        action = None
        if resp is not None:
            action = next((j for j in range(resp + 1, len(events))
                           if events[j].action in USER_ACTIONS), None)
        chains.append((i, resp, action))
    return chains


def _capture_seconds(session: Session, coder: CoderConfig) -> float:
    lines = code_session_detailed(session, coder).lines
    total_ms = 0
    run: list = []
    for line in list(lines) + [None]:
        if line is not None and line.code in CAPTURE_CODES:
            run.append(line)
            continue
        if run:
            first = session.events[run[0].span[0]].ts
            last = session.events[run[-1].span[1]].ts
            total_ms += last - first
            run = []
    return total_ms / 1000.0


def compute_metrics(corpus: Corpus, annotations: Annotations, profile: str,
                    coder: CoderConfig | None = None,
                    relevance_threshold: int = 2) -> list[MetricResult]:
    """Compute the profile's metrics; a metric missing its annotations is
    reported with an error marker instead of aborting the rest."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    coder = coder or CoderConfig()
    wanted = PROFILES[profile]
    per_metric: dict[str, dict[SessionKey, float]] = {m: {} for m in wanted}
    missing: dict[str, int] = {m: 0 for m in wanted}

    for s in corpus.sessions:
        if not s.events:
            continue
        key = s.key
        chains = _query_chains(s)
        ratings = annotations.session_ratings(key)

        if "retrieval_speed" in per_metric:
            speeds = [(s.events[r].ts - s.events[q].ts) / 1000.0
                      for q, r, _ in chains if r is not None]
            if speeds:
                per_metric["retrieval_speed"][key] = float(np.mean(speeds))
        if "time_to_action" in per_metric:
            times = [(s.events[a].ts - s.events[r].ts) / 1000.0
                     for _, r, a in chains if r is not None and a is not None]
            if times:
                per_metric["time_to_action"][key] = float(np.mean(times))
        if "task_duration" in per_metric:
            per_metric["task_duration"][key] = (s.events[-1].ts - s.events[0].ts) / 1000.0
        if "search_actions" in per_metric:
            per_metric["search_actions"][key] = float(
                sum(1 for ev in s.events if ev.action in SEARCH_ACTIONS))
        if "relevant_response_ratio" in per_metric:
            if ratings:
                per_metric["relevant_response_ratio"][key] = float(
                    np.mean([r >= relevance_threshold for r in ratings]))
            elif chains:
                missing["relevant_response_ratio"] += 1
        if "just_enough_responses" in per_metric:
            if ratings:
                useful = next((i + 1 for i, r in enumerate(ratings)
                               if r >= relevance_threshold), len(ratings))
                per_metric["just_enough_responses"][key] = float(useful)
            elif chains:
                missing["just_enough_responses"] += 1
        if "capture_efficiency" in per_metric:
            quality = annotations.quality.get(key)
            if quality is None:
                missing["capture_efficiency"] += 1
            elif quality > 0:
                per_metric["capture_efficiency"][key] = (
                    _capture_seconds(s, coder) / quality)
        if "completion_ratio" in per_metric:
            if key in annotations.completed:
                per_metric["completion_ratio"][key] = float(annotations.completed[key])
            else:
                missing["completion_ratio"] += 1
        if "completion_quality" in per_metric:
            if key in annotations.quality:
                per_metric["completion_quality"][key] = annotations.quality[key]
            else:
                missing["completion_quality"] += 1
        if "failure_rate" in per_metric:
            if key in annotations.completed:
                duration = (s.events[-1].ts - s.events[0].ts) / 1000.0
                limit = annotations.time_limit.get(key)
                failed = (not annotations.completed[key]) or (
                    limit is not None and duration > limit)
                per_metric["failure_rate"][key] = float(failed)
            else:
                missing["failure_rate"] += 1
        if "km_time" in per_metric:
            total = 0.0
            for q, r, a in chains:
                if r is None:
                    continue
                end = a if a is not None else r
                total += (s.events[end].ts - s.events[q].ts) / 1000.0
            per_metric["km_time"][key] = total

    results = []
    for metric_id in wanted:
        values = per_metric[metric_id]
        error = None
        if not values:
            error = "MissingAnnotation" if missing[metric_id] else "NoData"
        results.append(MetricResult(
            metric_id=metric_id,
            unit=METRICS[metric_id].unit,
            per_session=values,
            per_condition=_condition_stats(values),
            error=error,
        ))
    return results


def improvement_descriptor(metric_id: str, mean_treatment: float,
                           mean_baseline: float) -> str:
    """Phrase the condition-mean difference the way the result tables do."""
    m = METRICS[metric_id]
    if m.delta_phrase is not None:
        return m.delta_phrase.format(delta=abs(mean_baseline - mean_treatment))
    if mean_baseline == 0:
        return "n/a"
    if m.lower_is_better:
        frac = (mean_baseline - mean_treatment) / mean_baseline
    else:
        frac = (mean_treatment - mean_baseline) / mean_baseline
    pct = int(round(100.0 * frac))
    return m.better_phrase.format(pct=pct)


@dataclass(frozen=True)
class ComparisonRow:
    metric_id: str
    per_condition: Mapping[str, tuple[float, float, int]]
    model: str
    beta: float | None
    stat: float | None
    p: float | None
    ci: tuple[float, float] | None
    improvement: str
    unfit_reason: str | None = None


def _model_rows(metric: MetricResult, corpus: Corpus, treatment: str) -> list[dict]:
    rows = []
    by_key = {s.key: s for s in corpus.sessions}
    for key, value in metric.per_session.items():
        s = by_key[key]
        rows.append({
            "y": value,
            "condition": 1.0 if s.condition == treatment else 0.0,
            "task": s.task_id,
            "order": float(s.order_index),
            "outcome": 1.0 if s.outcome == "pass" else 0.0,
            "participant": s.participant_id,
        })
    return rows


def _relevance_rows(corpus: Corpus, annotations: Annotations, treatment: str,
                    threshold: int) -> list[dict]:
    rows = []
    by_key = {s.key: s for s in corpus.sessions}
    for (p, t, c, _i), rating in sorted(annotations.relevance.items()):
        s = by_key.get((p, t, c))
        if s is None:
            continue
        rows.append({
            "y": 1.0 if rating >= threshold else 0.0,
            "condition": 1.0 if c == treatment else 0.0,
            "task": t,
            "participant": p,
        })
    return rows


def compare_conditions(metrics: Sequence[MetricResult], corpus: Corpus,
                       annotations: Annotations, profile: str,
                       treatment: str, baseline: str,
                       relevance_threshold: int = 2,
                       spec_overrides: Mapping[str, RegressionSpec] | None = None,
                       ) -> list[ComparisonRow]:
    """One comparison row per metric; model failures mark the row unfit."""
    spec_overrides = spec_overrides or {}
    out = []
    for metric in metrics:
        stats_block = dict(beta=None, stat=None, p=None, ci=None)
        unfit = metric.error
        mdef = METRICS[metric.metric_id]

        means = metric.per_condition
        if treatment in means and baseline in means:
            improvement = improvement_descriptor(
                metric.metric_id, means[treatment][0], means[baseline][0])
        else:
            improvement = "n/a"
            unfit = unfit or "missing condition"

        model = "logistic-F3" if mdef.binary else (
            "lmm-F4" if (profile == "iter3" and metric.metric_id == "completion_quality")
            else "lmm-F2" if metric.metric_id in _F2_METRICS
            else "lmm-F1")

        if unfit is None:
            try:
                if mdef.binary:
                    if metric.metric_id == "relevant_response_ratio":
                        rows = _relevance_rows(corpus, annotations, treatment,
                                               relevance_threshold)
                    else:
                        rows = _model_rows(metric, corpus, treatment)
                    spec = spec_overrides.get(metric.metric_id,
                                              RegressionSpec("y", ("condition",)))
                    fit = fit_logistic(rows, spec)
                    i = fit.names.index("condition")
                    stats_block = dict(
                        beta=float(fit.beta[i]), stat=float(fit.z[i]),
                        p=float(fit.p[i]),
                        ci=(float(fit.beta[i] - 1.96 * fit.se[i]),
                            float(fit.beta[i] + 1.96 * fit.se[i])))
                else:
                    rows = _model_rows(metric, corpus, treatment)
                    if metric.metric_id in spec_overrides:
                        spec = spec_overrides[metric.metric_id]
                    elif model == "lmm-F4":
                        spec = RegressionSpec("y", ("condition", "order",
                                                    "condition:order", "task",
                                                    "condition:task"))
                    elif model == "lmm-F2":
                        spec = RegressionSpec("y", ("condition", "task"))
                    else:
                        spec = RegressionSpec("y", ("condition",))
                    fit = fit_lmm(rows, spec)
                    i = fit.names.index("condition")
                    stats_block = dict(
                        beta=float(fit.beta[i]), stat=float(fit.t[i]),
                        p=float(fit.p[i]),
                        ci=(float(fit.ci[i, 0]), float(fit.ci[i, 1])))
            except (KmflowError, ValueError, np.linalg.LinAlgError) as exc:
                unfit = type(exc).__name__

        out.append(ComparisonRow(
            metric_id=metric.metric_id,
            per_condition=means,
            model=model,
            improvement=improvement,
            unfit_reason=unfit,
            **stats_block,
        ))
    return out


# --- report rendering ---------------------------------------------------------

def metrics_table(metrics: Sequence[MetricResult]) -> str:
    lines = ["metric\tunit\tcondition\tmean\tsd\tn"]
    for m in metrics:
        for cond, (mean, sd, n) in sorted(m.per_condition.items()):
            lines.append(f"{m.metric_id}\t{m.unit}\t{cond}\t{mean:.4f}\t{sd:.4f}\t{n}")
        if m.error:
            lines.append(f"{m.metric_id}\t{m.unit}\t-\tunfit({m.error})\t\t")
    return "\n".join(lines) + "\n"


def comparisons_table(rows: Sequence[ComparisonRow], treatment: str,
                      baseline: str) -> str:
    lines = [f"metric\tmodel\t{treatment}_mean\t{treatment}_sd\t{baseline}_mean"
             f"\t{baseline}_sd\tbeta\tstat\tp\tci_low\tci_high\timprovement"]
    for r in rows:
        tmean = r.per_condition.get(treatment, (float("nan"),) * 3)
        bmean = r.per_condition.get(baseline, (float("nan"),) * 3)
        if r.unfit_reason:
            stats_cells = [f"unfit({r.unfit_reason})", "", "", "", ""]
        else:
            stats_cells = [f"{r.beta:.4f}", f"{r.stat:.4f}", f"{r.p:.6f}",
                           f"{r.ci[0]:.4f}", f"{r.ci[1]:.4f}"]
        lines.append("\t".join([
            r.metric_id, r.model,
            f"{tmean[0]:.4f}", f"{tmean[1]:.4f}",
            f"{bmean[0]:.4f}", f"{bmean[1]:.4f}",
            *stats_cells, r.improvement,
        ]))
    return "\n".join(lines) + "\n"


def generate_report(rows: Sequence[ComparisonRow],
                    metrics: Sequence[MetricResult],
                    treatment: str, baseline: str,
                    ena_sections: Mapping[str, str] | None = None) -> dict[str, bytes]:
    """Delimited tables plus one static summary document, all deterministic."""
    if not rows:
        raise EmptyReport("no comparison rows")
    import html as _html

    body = [
        "<!DOCTYPE html>", "<html>", "<head>", '<meta charset="utf-8">',
        "<title>Evaluation report</title>",
        "<style>table{border-collapse:collapse}td,th{border:1px solid #999;"
        "padding:4px 8px;font-family:sans-serif;font-size:13px}</style>",
        "</head>", "<body>",
        "<h1>Condition comparison</h1>",
        "<table>",
        f"<tr><th>Metric</th><th>{_html.escape(treatment)} mean (SD)</th>"
        f"<th>{_html.escape(baseline)} mean (SD)</th>"
        "<th>Statistical Analysis</th><th>CI</th><th>Improvement</th></tr>",
    ]
    for r in rows:
        tmean = r.per_condition.get(treatment)
        bmean = r.per_condition.get(baseline)
        tcell = f"{tmean[0]:.2f} (SD={tmean[1]:.2f})" if tmean else "n/a"
        bcell = f"{bmean[0]:.2f} (SD={bmean[1]:.2f})" if bmean else "n/a"
        if r.unfit_reason:
            stat_cell, ci_cell = f"unfit({_html.escape(r.unfit_reason)})", ""
        else:
            stat_cell = (f"beta = {r.beta:.3f}, p = {r.p:.3f}, "
                         f"stat = {r.stat:.2f} [{r.model}]")
            ci_cell = f"{r.ci[0]:.3f} – {r.ci[1]:.3f}"
        body.append(
            f"<tr><td>{_html.escape(r.metric_id)}</td><td>{tcell}</td>"
            f"<td>{bcell}</td><td>{stat_cell}</td><td>{ci_cell}</td>"
            f"<td>{_html.escape(r.improvement)}</td></tr>")
    body.append("</table>")
    for title, svg in sorted((ena_sections or {}).items()):
        body.append(f"<h2>{_html.escape(title)}</h2>")
        body.append(svg)
    body.extend(["</body>", "</html>"])

    return {
        "report.html": ("\n".join(body) + "\n").encode("utf-8"),
        "comparisons.tsv": comparisons_table(rows, treatment, baseline).encode("utf-8"),
        "metrics.tsv": metrics_table(metrics).encode("utf-8"),
    }
