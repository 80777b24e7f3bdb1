"""Batch pipeline: ingest -> code -> mine -> guides -> networks -> metrics ->
stats -> report, with a digest manifest for reproducibility checks.

Artifacts are written with deterministic bytes (no wall-clock timestamps, no
unordered iteration), so running the same configuration and seed twice yields
byte-identical outputs and manifests. On a stage failure the artifacts
produced so far are kept and the manifest records the failed stage.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import ena as ena_mod
from .coding import CoderConfig, code_corpus, code_session_detailed, coded_lines_to_jsonl
from .errors import ConfigError, KmflowError, PipelineStageError
from .harness import (Annotations, annotations_from_csv, apply_session_metadata,
                      compare_conditions, compute_metrics, generate_report)
from .mining import (MinerConfig, canonical_step_label, edge_list_text,
                     extract_main_flow, mine_dependency_graph,
                     step_log_from_sessions)
from .recommend import PushPolicyConfig
from .repository import build_index, load_documents, save_index
from .shareflow import ShareFlow, build_shareflow, render_scrollytelling, shareflow_to_json
from .simulate import Scenario, simulate_sessions
from .stats import (RegressionSpec, SurveyResponse, fit_lmm, fit_table,
                    score_km_sus, score_sus, score_tlx, tlx_table)
from .trace import Corpus, parse_trace_log, serialize_trace_log, validate_corpus

STAGES = ("ingest", "code", "mine", "shareflow", "ena", "metrics", "stats", "report")
_DATA_DIR = Path(__file__).parent / "data"


@dataclass
class PipelineConfig:
    out_dir: Path
    seed: int = 42
    traces_path: Path | None = None
    scenario_path: Path | None = None
    documents_path: Path | None = None
    surveys_path: Path | None = None
    annotations_path: Path | None = None
    km_sus_groups_path: Path | None = None
    profile: str = "iter3"
    conditions: tuple[str, str] | None = None     # (treatment, baseline)
    strict: bool = False
    coder: CoderConfig = field(default_factory=CoderConfig)
    miner: MinerConfig = field(default_factory=MinerConfig)
    ena_window: int = 40
    policy: PushPolicyConfig = field(default_factory=PushPolicyConfig)

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        base = Path(path).parent

        def resolve(name):
            value = doc.get(name)
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        cfg = cls(
            out_dir=Path(doc.get("out_dir", "out")) if "out_dir" not in overrides else overrides["out_dir"],
            seed=int(doc.get("seed", 42)),
            traces_path=resolve("traces"),
            scenario_path=resolve("scenario"),
            documents_path=resolve("documents"),
            surveys_path=resolve("surveys"),
            annotations_path=resolve("annotations"),
            km_sus_groups_path=resolve("km_sus_groups"),
            profile=doc.get("profile", "iter3"),
            conditions=tuple(doc["conditions"]) if "conditions" in doc else None,
            coder=CoderConfig(**doc.get("coder", {})),
            miner=MinerConfig(**doc.get("miner", {})),
            ena_window=int(doc.get("ena_window", 40)),
            policy=PushPolicyConfig(**doc.get("policy", {})),
        )
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg


def bundled_scenario_path() -> Path:
    return _DATA_DIR / "scenario.json"


def bundled_config(out_dir: Path, seed: int = 42) -> PipelineConfig:
    """Configuration for the sample scenario shipped with the package.

    The miner threshold is relaxed to suit three expert walkthroughs per
    task; the 0.9 default expects transition counts an order of magnitude
    higher."""
    return PipelineConfig(
        out_dir=out_dir,
        seed=seed,
        scenario_path=bundled_scenario_path(),
        documents_path=_DATA_DIR / "documents.jsonl",
        surveys_path=_DATA_DIR / "surveys.csv",
        km_sus_groups_path=_DATA_DIR / "km_sus_groups.json",
        miner=MinerConfig(dependency_threshold=0.7),
    )


@dataclass
class _Artifacts:
    out_dir: Path
    records: list[dict] = field(default_factory=list)

    def write(self, stage: str, name: str, data: bytes) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.records.append({
            "name": name,
            "stage": stage,
            "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data),
        })
        return path


def _load_surveys(path: Path) -> list[SurveyResponse]:
    import csv
    rows = list(csv.DictReader(path.read_text(encoding="utf-8").splitlines()))
    grouped: dict[tuple[str, str, str], dict] = {}
    for row in rows:
        key = (row["participant"], row["instrument"], row.get("condition", ""))
        item = row["item"]
        grouped.setdefault(key, {})[int(item) if item.isdigit() else item] = int(row["value"])
    return [SurveyResponse(participant=p, instrument=i, items=items, condition=c)
            for (p, i, c), items in sorted(grouped.items(),
                                           key=lambda kv: (kv[0][0], kv[0][1], kv[0][2]))]


def run_pipeline(cfg: PipelineConfig, stages: Sequence[str] | None = None) -> dict:
    """Run the batch pipeline; returns the manifest (also written to disk).

    `stages` limits which artifact groups are written; prerequisite results
    are still computed in memory.
    """
    wanted = set(stages or STAGES)
    unknown = wanted - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages: {sorted(unknown)}")
    cfg.out_dir = Path(cfg.out_dir)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    art = _Artifacts(cfg.out_dir)
    manifest: dict = {
        "seed": cfg.seed,
        "profile": cfg.profile,
        "stages": sorted(wanted),
        "artifacts": art.records,
        "failed_stage": None,
    }

    def finish(failed: str | None = None, error: str | None = None) -> dict:
        manifest["failed_stage"] = failed
        if error:
            manifest["error"] = error
        data = (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode("utf-8")
        (cfg.out_dir / "manifest.json").write_bytes(data)
        manifest["sha256"] = hashlib.sha256(data).hexdigest()
        return manifest

    stage = "config"
    try:
        # --- corpus ----------------------------------------------------------
        if cfg.scenario_path is not None:
            if not Path(cfg.scenario_path).exists():
                raise ConfigError(f"scenario: path does not exist: {cfg.scenario_path}")
            scenario = Scenario.from_json(cfg.scenario_path)
            corpus, annotations = simulate_sessions(scenario, cfg.seed)
            conditions = cfg.conditions or scenario.conditions
            profile = cfg.profile or scenario.profile
        elif cfg.traces_path is not None:
            if not Path(cfg.traces_path).exists():
                raise ConfigError(f"traces: path does not exist: {cfg.traces_path}")
            corpus = parse_trace_log(Path(cfg.traces_path).read_bytes(),
                                     strict=cfg.strict, source=str(cfg.traces_path))
            annotations = Annotations()
            if cfg.annotations_path is not None:
                annotations = annotations_from_csv(
                    Path(cfg.annotations_path).read_text(encoding="utf-8"))
            corpus = apply_session_metadata(corpus, annotations)
            if cfg.conditions is None:
                raise ConfigError("conditions: required when loading traces from file")
            conditions = cfg.conditions
            profile = cfg.profile
        else:
            raise ConfigError("traces: either traces or scenario path is required")
        treatment, baseline = conditions

        validation = validate_corpus(corpus)
        art.write("config", "validation.txt", (
            "\n".join(f"{v.kind}\t{'|'.join(v.session_key)}\t{v.detail}"
                      for v in validation.violations) + "\n"
            if validation.violations else "ok\n").encode("utf-8"))
        if cfg.scenario_path is not None:
            art.write("config", "traces.jsonl", serialize_trace_log(corpus))
            art.write("config", "ground_truth.json", (json.dumps(
                {"scenario": str(cfg.scenario_path), "seed": cfg.seed,
                 "effects": {k: dict(v) for k, v in sorted(scenario.effects.items())}},
                indent=1, sort_keys=True) + "\n").encode("utf-8"))

        # --- ingest ----------------------------------------------------------
        stage = "ingest"
        index = None
        if cfg.documents_path is not None:
            docs = load_documents(cfg.documents_path)
            index = build_index(docs)
            if "ingest" in wanted:
                snapshot = cfg.out_dir / "index.json"
                save_index(index, snapshot)
                art.write("ingest", "index.json", snapshot.read_bytes())

        # --- code ------------------------------------------------------------
        stage = "code"
        lines = code_corpus(corpus, cfg.coder)
        if "code" in wanted:
            art.write("code", "coded_lines.jsonl", coded_lines_to_jsonl(lines))

        # --- mine ------------------------------------------------------------
        stage = "mine"
        tasks = sorted({s.task_id for s in corpus.sessions})
        flows: dict[str, list[str]] = {}
        for task in tasks:
            expert_sessions = [s for s in corpus.sessions
                               if s.task_id == task and s.condition == treatment
                               and any(e.expertise == "expert" for e in s.events)]
            if not expert_sessions:
                continue
            log = step_log_from_sessions(expert_sessions)
            graph = mine_dependency_graph(log, cfg.miner)
            flows[task] = extract_main_flow(graph)
            if "mine" in wanted:
                art.write("mine", f"dependency_{task}.tsv",
                          edge_list_text(graph).encode("utf-8"))
                art.write("mine", f"main_flow_{task}.txt",
                          ("\n".join(flows[task]) + "\n").encode("utf-8"))

        # --- shareflow ---------------------------------------------------------
        stage = "shareflow"
        library: list[ShareFlow] = []
        for task, flow in sorted(flows.items()):
            source = next(s for s in sorted(
                (s for s in corpus.sessions
                 if s.task_id == task and s.condition == treatment
                 and any(e.expertise == "expert" for e in s.events)),
                key=lambda s: s.participant_id))
            links = {}
            for ev in source.events:
                label = canonical_step_label(ev)
                if label in flow and label not in links:
                    links[label] = ev.url
            coded = [ln.code.value for ln in code_session_detailed(source, cfg.coder).lines]
            sf = build_shareflow(
                flow, author_id=source.participant_id, task_id=task,
                links=links, coded_labels=coded,
                created_ts=source.events[-1].ts if source.events else 0)
            library.append(sf)
            if "shareflow" in wanted:
                art.write("shareflow", f"shareflow_{sf.id}.json",
                          (shareflow_to_json(sf) + "\n").encode("utf-8"))
                art.write("shareflow", f"shareflow_{sf.id}.html",
                          render_scrollytelling(sf))

        # --- ena ---------------------------------------------------------------
        stage = "ena"
        ena_cfg = ena_mod.ENAConfig(window=cfg.ena_window)
        meta = {s.key: (s.outcome, s.order_index) for s in corpus.sessions}
        vectors = ena_mod.accumulate(lines, ena_cfg, unit_metadata=meta)
        normalized = [ena_mod.normalize_sphere(v) for v in vectors]
        group_of = lambda v: v.unit_key[2]
        space = ena_mod.means_rotation(normalized, (treatment, baseline), group_of,
                                       code_set=ena_cfg.code_set)
        positions = ena_mod.place_nodes(space, normalized, ena_cfg.code_set)
        net_t = ena_mod.mean_network(vectors, treatment, group_of, ena_cfg.code_set)
        net_b = ena_mod.mean_network(vectors, baseline, group_of, ena_cfg.code_set)
        net_diff = ena_mod.subtract_networks(net_t, net_b)
        diagram = ena_mod.network_diagram_svg(
            ena_cfg.code_set, positions, net_diff,
            title=f"Subtracted network: {treatment} - {baseline}")
        if "ena" in wanted:
            art.write("ena", "ena_scores.tsv", ena_mod.scores_table(space).encode("utf-8"))
            art.write("ena", "ena_nodes.tsv",
                      ena_mod.nodes_table(ena_cfg.code_set, positions).encode("utf-8"))
            art.write("ena", f"network_{treatment}.tsv",
                      ena_mod.network_table(net_t).encode("utf-8"))
            art.write("ena", f"network_{baseline}.tsv",
                      ena_mod.network_table(net_b).encode("utf-8"))
            art.write("ena", "network_subtracted.tsv",
                      ena_mod.network_table(net_diff).encode("utf-8"))
            art.write("ena", "network_diagram.svg", diagram.encode("utf-8"))
            # score on the between-group dimension vs. condition/task/order/outcome
            rows = []
            by_key = {s.key: s for s in corpus.sessions}
            for key, score in zip(space.unit_keys, space.scores[:, 0]):
                s = by_key[key]
                rows.append({
                    "mr1": float(score),
                    "condition": 1.0 if s.condition == treatment else 0.0,
                    "task": s.task_id,
                    "order": float(s.order_index),
                    "outcome": 1.0 if s.outcome == "pass" else 0.0,
                    "participant": s.participant_id,
                })
            try:
                fit = fit_lmm(rows, RegressionSpec(
                    "mr1", ("condition", "task", "order", "outcome")))
                art.write("ena", "ena_regression.tsv",
                          fit_table({"mr1_model": fit}).encode("utf-8"))
            except (KmflowError, ValueError) as exc:
                art.write("ena", "ena_regression.tsv",
                          f"unfit({type(exc).__name__})\n".encode("utf-8"))

        # --- metrics -----------------------------------------------------------
        stage = "metrics"
        metrics = compute_metrics(corpus, annotations, profile, cfg.coder)
        comparison_rows = compare_conditions(metrics, corpus, annotations,
                                             profile, treatment, baseline)

        # --- stats -------------------------------------------------------------
        stage = "stats"
        if cfg.surveys_path is not None and Path(cfg.surveys_path).exists():
            responses = _load_surveys(Path(cfg.surveys_path))
            groups = None
            if cfg.km_sus_groups_path is not None and Path(cfg.km_sus_groups_path).exists():
                groups = {int(k): v for k, v in json.loads(
                    Path(cfg.km_sus_groups_path).read_text(encoding="utf-8")).items()}
            score_lines = ["participant\tcondition\tinstrument\tscore"]
            tlx_responses = []
            for r in responses:
                if r.instrument == "sus":
                    score_lines.append(
                        f"{r.participant}\t{r.condition}\tsus\t{score_sus(r):.2f}")
                elif r.instrument == "km_sus" and groups is not None:
                    km = score_km_sus(r, groups)
                    score_lines.append(
                        f"{r.participant}\t{r.condition}\tkm_sus\t{km.overall:.2f}")
                    for practice in sorted(km.subscales):
                        score_lines.append(
                            f"{r.participant}\t{r.condition}\tkm_sus[{practice}]"
                            f"\t{km.subscales[practice]:.2f}")
                elif r.instrument == "nasa_tlx":
                    tlx_responses.append(r)
            if "stats" in wanted:
                art.write("stats", "survey_scores.tsv",
                          ("\n".join(score_lines) + "\n").encode("utf-8"))
                if tlx_responses:
                    art.write("stats", "tlx_summary.tsv",
                              tlx_table(score_tlx(tlx_responses)).encode("utf-8"))

        # --- report ------------------------------------------------------------
        stage = "report"
        if "report" in wanted or "metrics" in wanted:
            bundle = generate_report(comparison_rows, metrics, treatment, baseline,
                                     ena_sections={"Subtracted network": diagram})
            for name, data in sorted(bundle.items()):
                art.write("report", name, data)

    except ConfigError:
        raise
    except KmflowError as exc:
        finish(failed=stage, error=str(exc))
        raise PipelineStageError(stage, exc) from exc
    except Exception as exc:  # keep partial artifacts on unexpected failures too
        finish(failed=stage, error=f"{type(exc).__name__}: {exc}")
        raise PipelineStageError(stage, exc) from exc

    return finish()
