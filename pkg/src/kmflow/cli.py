"""Command-line driver for the batch pipeline and the service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, KmflowError, PipelineStageError
from .pipeline import PipelineConfig, bundled_config, run_pipeline
from .simulate import Scenario, simulate_sessions
from .trace import serialize_trace_log

_STAGE_COMMANDS = {
    "ingest": ("ingest",),
    "code": ("code",),
    "mine": ("code", "mine"),
    "ena": ("ena",),
    "metrics": ("metrics", "report"),
    "stats": ("stats",),
    "report": None,  # full run
}


def _load_config(args) -> PipelineConfig:
    overrides = {}
    if args.out:
        overrides["out_dir"] = Path(args.out)
    if args.config:
        cfg = PipelineConfig.from_json(args.config, **overrides)
    else:
        cfg = bundled_config(Path(args.out or "out"))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.strict:
        cfg.strict = True
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kmflow")
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--strict", action="store_true",
                        help="abort on the first malformed trace line")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("ingest", "code", "mine", "ena", "metrics", "stats", "report"):
        sub.add_parser(name)

    sf = sub.add_parser("shareflow")
    sf_sub = sf.add_subparsers(dest="shareflow_command", required=True)
    sf_sub.add_parser("render")

    sub.add_parser("simulate")
    sub.add_parser("serve")

    args = parser.parse_args(argv)

    try:
        if args.command == "simulate":
            cfg = _load_config(args)
            if cfg.scenario_path is None:
                raise ConfigError("scenario: required for simulate")
            scenario = Scenario.from_json(cfg.scenario_path)
            corpus, annotations = simulate_sessions(scenario, cfg.seed)
            out = Path(cfg.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "traces.jsonl").write_bytes(serialize_trace_log(corpus))
            from .harness import annotations_to_csv
            (out / "annotations.csv").write_text(annotations_to_csv(annotations),
                                                 encoding="utf-8")
            print(f"wrote {len(corpus.sessions)} sessions to {out}")
            return 0

        if args.command == "serve":
            cfg = _load_config(args)
            manifest = run_pipeline(cfg, stages=("code", "mine", "shareflow", "ingest"))
            from .recommend import PushEngine
            from .repository import load_index
            from .service import serve as _serve
            from .shareflow import shareflow_from_json
            out = Path(cfg.out_dir)
            flows = {}
            for path in sorted(out.glob("shareflow_*.json")):
                flow = shareflow_from_json(path.read_text(encoding="utf-8"))
                flows[flow.id] = flow
            index = None
            index_path = out / "index.json"
            if index_path.exists():
                index = load_index(index_path)
            engine = PushEngine(list(flows.values()), policy=cfg.policy,
                                coder=cfg.coder, index=index)
            _serve(engine, flows, state_path=out / "service_state.json")
            return 0

        if args.command == "shareflow":
            stages = ("code", "mine", "shareflow")
        else:
            stages = _STAGE_COMMANDS[args.command]
        cfg = _load_config(args)
        manifest = run_pipeline(cfg, stages=stages)
        print(json.dumps({"out_dir": str(cfg.out_dir),
                          "artifacts": len(manifest["artifacts"]),
                          "sha256": manifest["sha256"]}, indent=1))
        return 0

    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return 2
    except PipelineStageError as exc:
        print(f"{exc.stage}: {exc.cause}", file=sys.stderr)
        return 1
    except KmflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
