"""
Command-line front end.

    python -m app eval --features novel.fvb --base base.fvb --mode inductive --shots 1,5
    python -m app sweep --param beta --values 0.1,0.5,1,2,5,10,20,50,100,200,500 --synthetic spec.json --mode transductive
    python -m app gen-synth --spec spec.json --out synth.fvb
    python -m app validate a.fvb b.fvb --ensemble
    python -m app fmt-spec

Exit codes: 0 success, 1 configuration error, 2 data error. Results go to
stdout (or --out), diagnostics to stderr.
"""
import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from app.core.errors import ConfigError, EngineError
from app.core.logging import setup_logging
from app.features.store import (
    FORMAT_DESCRIPTION,
    check_ensemble,
    load_feature_bank,
    validate_bank,
    write_feature_bank,
    write_manifest,
)
from app.features.synthetic import generate_ensemble
from app.schemas import CSV_COLUMNS, EvalSummary, PipelineConfig, SweepParameter, SyntheticSpec
from app.services import evaluate as evaluator

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_inputs(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--features", action="append", default=[], metavar="PATH", help="FVB1 bank (repeat for several backbones)")
    g.add_argument("--ensemble", nargs="+", metavar="PATH", help="Concatenate these banks (enables E)")
    g.add_argument("--base", action="append", default=[], metavar="PATH", help="Base-class bank for inductive centering, one per backbone")
    g.add_argument("--synthetic", metavar="SPEC.json", help="Evaluate on a generated synthetic bank")
    g.add_argument("--synthetic-backbones", type=int, default=None, metavar="B", help="Synthetic banks to generate (default 1, or the ensemble size)")


def _add_pipeline(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", metavar="JSON", help="Start from a config (a previous output or a bare PipelineConfig)")
    g.add_argument("--mode", choices=["inductive", "transductive"])
    g.add_argument("--ways", type=int)
    g.add_argument("--shots", type=_int_list, help="Shots per class; a list such as 1,5 evaluates each")
    g.add_argument("--queries", type=int)
    g.add_argument("--runs", type=int, dest="n_runs")
    g.add_argument("--seed", type=int, dest="global_seed")
    g.add_argument("--beta", type=float)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--shift-tol", type=float)
    g.add_argument("--views", type=int, help="Average only the first L views")
    g.add_argument("--no-as", action="store_true", help="Use view 0 only")
    g.add_argument("--no-center", action="store_true")
    g.add_argument("--no-normalize", action="store_true")
    g.add_argument("--imbalanced", action="store_true", help="Dirichlet-distributed query counts")
    g.add_argument("--q-total", type=int)
    g.add_argument("--dirichlet-a", type=float)
    g.add_argument("--threads", type=int, help="Workers (default: machine parallelism)")


def _add_output(p: argparse.ArgumentParser, formats: Sequence[str] = ("json", "csv")) -> None:
    g = p.add_argument_group("output")
    g.add_argument("--out", metavar="FILE", help="Write results here instead of stdout")
    g.add_argument("--format", choices=list(formats), default=formats[0])
    g.add_argument("--per-run", action="store_true", help="Keep per-run accuracies in JSON")
    g.add_argument("--timing", action="store_true", help="Include wall time in JSON")
    g.add_argument("--progress", action="store_true")
    g.add_argument("--cache", action="store_true", help="Reuse results from the SQLite result cache")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fewshot", description="Few-shot evaluation engine over extracted feature banks")
    parser.add_argument("--log-level", default=None)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("eval", help="Evaluate one configuration")
    _add_inputs(p)
    _add_pipeline(p)
    _add_output(p)

    p = commands.add_parser("sweep", help="Evaluate over values of beta, views or backbones")
    _add_inputs(p)
    _add_pipeline(p)
    p.add_argument("--param", required=True, choices=[s.value for s in SweepParameter])
    p.add_argument("--values", required=True, type=_float_list)
    _add_output(p, formats=("csv", "json"))

    p = commands.add_parser("ablation", help="Evaluate the Y / ASY / EY / EASY variants")
    _add_inputs(p)
    _add_pipeline(p)
    _add_output(p)

    p = commands.add_parser("gen-synth", help="Write synthetic FVB1 banks")
    p.add_argument("--spec", metavar="SPEC.json", help="SyntheticSpec as JSON; flags below override it")
    p.add_argument("--classes", type=int, dest="n_classes")
    p.add_argument("--dim", type=int)
    p.add_argument("--images", type=int, dest="images_per_class")
    p.add_argument("--views", type=int, dest="n_views")
    p.add_argument("--separation", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--view-noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--backbones", type=int, default=1, help="Banks with shared means and independent noise")
    p.add_argument("--out", required=True, metavar="PATH", help="Output bank (suffixed _<i> when backbones > 1)")

    p = commands.add_parser("validate", help="Check FVB1 banks")
    p.add_argument("paths", nargs="+")
    p.add_argument("--ensemble", action="store_true", help="Also check the banks can be concatenated")

    commands.add_parser("fmt-spec", help="Print the FVB1 byte layout")

    p = commands.add_parser("serve", help="Serve the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e


def _config_from_file(path: str) -> tuple:
    """(config dict, inputs dict) from a previous output or a bare config."""
    document = _read_json(path)
    inputs = document.get("inputs") or {}
    if "results" in document and document["results"]:
        first = document["results"][0]
        return dict(first.get("config") or first.get("summary", {}).get("config") or {}), inputs
    if "config" in document:
        return dict(document["config"]), inputs
    return document, inputs


def build_config(args) -> tuple:
    """(base PipelineConfig without shots, shot list, echoed inputs)."""
    data, inputs = _config_from_file(args.config) if args.config else ({}, {})
    for field in ("mode", "ways", "queries", "n_runs", "global_seed", "beta", "max_iters", "shift_tol", "views"):
        value = getattr(args, field)
        if value is not None:
            data[field] = value
    if args.no_as:
        data["use_as"] = False
    if args.no_center:
        data["use_c"] = False
    if args.no_normalize:
        data["use_h"] = False
    if args.ensemble is not None:
        data["use_e"] = True
    if args.imbalanced or args.q_total is not None or args.dirichlet_a is not None:
        imbalance = dict(data.get("imbalance") or {})
        if args.q_total is not None:
            imbalance["q_total"] = args.q_total
        if args.dirichlet_a is not None:
            imbalance["dirichlet_a"] = args.dirichlet_a
        data["imbalance"] = imbalance

    shots = args.shots or [data.get("shots", 1)]
    data["shots"] = shots[0]
    try:
        config = PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    return config, shots, inputs


def _resolve(args, config: PipelineConfig, echoed: dict) -> tuple:
    features = list(args.ensemble or []) + list(args.features)
    base = list(args.base)
    synthetic = None
    synthetic_path = args.synthetic
    if not features and not synthetic_path and echoed:
        features = list(echoed.get("features") or [])
        base = base or list(echoed.get("base") or [])
        if echoed.get("synthetic"):
            synthetic = SyntheticSpec.model_validate(echoed["synthetic"])
    if synthetic_path:
        try:
            synthetic = SyntheticSpec.model_validate(_read_json(synthetic_path))
        except ValidationError as e:
            raise ConfigError(f"Invalid synthetic spec: {e}") from e

    backbones = args.synthetic_backbones or echoed.get("synthetic_backbones")
    if backbones is None:
        backbones = (config.backbones or 2) if config.use_e else 1
    if config.use_e and synthetic is None and len(features) < 2:
        raise ConfigError("The ensemble step (E) needs at least 2 feature banks (--ensemble a.fvb b.fvb ...)")

    need_base = config.use_c and not config.transductive
    inputs = evaluator.resolve_inputs(features, base, synthetic, backbones, need_base=need_base)
    echo = {
        "features": features,
        "base": base,
        "synthetic": synthetic.model_dump(mode="json") if synthetic else None,
        "synthetic_backbones": backbones if synthetic else None,
    }
    return inputs, echo


def _summary_json(summary: EvalSummary, args) -> dict:
    exclude = set() if args.timing else {"wall_time"}
    return summary.model_dump(mode="json", exclude=exclude, exclude_none=True)


def _csv(rows: List[dict], columns: List[str]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as e:
            raise ConfigError(f"Cannot write {out}: {e}") from e
    else:
        sys.stdout.write(text)


def _document(echo: dict, results: List[dict]) -> str:
    return json.dumps({"inputs": echo, "results": results}, indent=2, ensure_ascii=False) + "\n"


def cmd_eval(args) -> int:
    config, shots, echoed = build_config(args)
    inputs, echo = _resolve(args, config, echoed)
    summaries = []
    for k in shots:
        cfg = evaluator.with_updates(config, shots=k)
        summary, _ = evaluator.evaluate_with_cache(
            inputs.banks, cfg, inputs.base_banks, inputs.pins,
            threads=args.threads, keep_per_run=args.per_run,
            use_cache=args.cache or None, progress=args.progress or None,
        )
        logger.info("RESULT %s %d-shot: %s", cfg.method, k, summary.formatted())
        summaries.append(summary)

    if args.format == "csv":
        _emit(_csv([s.csv_row() for s in summaries], CSV_COLUMNS), args.out)
    else:
        _emit(_document(echo, [_summary_json(s, args) for s in summaries]), args.out)
    return 0


def cmd_sweep(args) -> int:
    config, shots, echoed = build_config(args)
    inputs, echo = _resolve(args, config, echoed)
    parameter = SweepParameter(args.param)
    rows = []
    for k in shots:
        rows.extend(evaluator.sweep(
            parameter, args.values, inputs.banks, evaluator.with_updates(config, shots=k),
            base_banks=inputs.base_banks, pins=inputs.pins, threads=args.threads,
            use_cache=args.cache or None, progress=args.progress or None,
        ))

    if args.format == "csv":
        _emit(_csv([r.csv_row() for r in rows], ["parameter", "value"] + CSV_COLUMNS), args.out)
    else:
        results = [
            {"parameter": r.parameter.value, "value": r.value, "summary": _summary_json(r.summary, args)}
            for r in rows
        ]
        _emit(_document(echo, results), args.out)
    return 0


def cmd_ablation(args) -> int:
    config, shots, echoed = build_config(args)
    inputs, echo = _resolve(args, config, echoed)
    summaries = []
    for k in shots:
        summaries.extend(evaluator.ablation(
            inputs.banks, evaluator.with_updates(config, shots=k),
            base_banks=inputs.base_banks, pins=inputs.pins, threads=args.threads,
            use_cache=args.cache or None, progress=args.progress or None,
        ))
    if args.format == "csv":
        _emit(_csv([s.csv_row() for s in summaries], CSV_COLUMNS), args.out)
    else:
        _emit(_document(echo, [_summary_json(s, args) for s in summaries]), args.out)
    return 0


def cmd_gen_synth(args) -> int:
    data = _read_json(args.spec) if args.spec else {}
    for field in ("n_classes", "dim", "images_per_class", "n_views", "separation", "sigma", "view_noise", "seed"):
        value = getattr(args, field)
        if value is not None:
            data[field] = value
    try:
        spec = SyntheticSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid synthetic spec: {e}") from e

    out = Path(args.out)
    banks = generate_ensemble(spec, args.backbones)
    written = []
    for index, bank in enumerate(banks):
        path = out if len(banks) == 1 else out.with_name(f"{out.stem}_{index}{out.suffix}")
        write_feature_bank(bank, path)
        write_manifest(path, bank.source_id, {c: f"class_{c}" for c in bank.class_ids})
        written.append(str(path))
    sys.stdout.write(json.dumps({"spec": spec.model_dump(mode="json"), "written": written}, indent=2) + "\n")
    return 0


def cmd_validate(args) -> int:
    reports = {}
    banks = []
    failed = False
    for path in args.paths:
        try:
            bank = load_feature_bank(path)
        except EngineError as e:
            reports[path] = {"ok": False, "error": type(e).__name__, "message": str(e)}
            failed = True
            continue
        report = validate_bank(bank)
        reports[path] = {**report.to_dict(), "classes": bank.n_classes, "dim": bank.dim, "n_views": bank.n_views}
        failed = failed or not report.ok
        banks.append(bank)

    document = {"banks": reports}
    if args.ensemble:
        ensemble = check_ensemble(banks)
        document["ensemble"] = ensemble.to_dict()
        failed = failed or not ensemble.ok
    sys.stdout.write(json.dumps(document, indent=2) + "\n")
    return 2 if failed else 0


def cmd_fmt_spec(args) -> int:
    sys.stdout.write(FORMAT_DESCRIPTION)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return 0


COMMANDS = {
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablation": cmd_ablation,
    "gen-synth": cmd_gen_synth,
    "validate": cmd_validate,
    "fmt-spec": cmd_fmt_spec,
    "serve": cmd_serve,
}


def parse_and_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.log_level)
        return COMMANDS[args.command](args)
    except ConfigError as e:
        sys.stderr.write(f"error: {e}\n")
        return e.exit_code
    except EngineError as e:
        sys.stderr.write(f"data error: {type(e).__name__}: {e}\n")
        return e.exit_code


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
