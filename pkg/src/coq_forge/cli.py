"""Command-line pipeline orchestration.

Subcommands: ingest, clean, polish, serialize, stats, eval, pipeline.
Every command streams JSONL and never loads a full corpus into memory.
Data goes only to declared output paths; all diagnostics go to stderr,
so pipes stay clean.

Exit codes: 0 success (skips included), 1 runtime/I-O error, 2 usage or
configuration error, 3 fatal external-service error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import adapters, cleaner, core, metrics, polisher, serializer
from .llm import DEFAULT_API_KEY_ENV, LlmClient, LlmClientConfig, PolishCache, PolishError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_EXTERNAL = 3


class ConfigError(Exception):
    pass


def _log(obj):
    if isinstance(obj, str):
        print(obj, file=sys.stderr)
    else:
        print(json.dumps(obj, ensure_ascii=False), file=sys.stderr)


def _write_report(path, obj):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, ensure_ascii=False, indent=2)


def _load_rules(spec: str) -> cleaner.RuleSet:
    if spec == "default":
        return cleaner.default_rules()
    try:
        return cleaner.load_rules(spec)
    except (OSError, json.JSONDecodeError, cleaner.RuleError) as exc:
        raise ConfigError(f"cannot load rules from {spec}: {exc}") from exc


def _make_client(config_path, cache_dir=None, require_key=True) -> LlmClient:
    try:
        cfg = LlmClientConfig.from_file(config_path)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad client config {config_path}: {exc}") from exc
    if require_key and not os.environ.get(cfg.api_key_env, ""):
        raise ConfigError(
            f"API key environment variable {cfg.api_key_env} is not set"
        )
    cache = PolishCache(cache_dir) if cache_dir else None
    return LlmClient(cfg, cache=cache)


def cmd_ingest(args) -> int:
    counter = core.IngestCounter()
    try:
        stream = adapters.read_corpus(args.input, args.format, counter)
        written = core.write_corpus(stream, args.output)
    except KeyError as exc:
        _log(f"error: {exc.args[0]}")
        return EXIT_CONFIG
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_RUNTIME
    if counter.read == 0:
        _log("warning: input contained no records")
    _log(counter.to_dict())
    _write_report(args.report, {"written": written, **counter.to_dict()})
    return EXIT_OK


def cmd_clean(args) -> int:
    try:
        rules = _load_rules(args.rules)
    except ConfigError as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    report = cleaner.CleaningReport()
    try:
        stream = cleaner.clean_corpus(core.read_native(args.input), rules, report)
        written = core.write_corpus(stream, args.output)
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_RUNTIME
    _log(report.to_dict())
    _write_report(args.report, {"written": written, **report.to_dict()})
    return EXIT_OK


def cmd_polish(args) -> int:
    try:
        client = _make_client(args.client_config, cache_dir=args.cache_dir)
        if args.template == "default":
            template = polisher.default_template()
        else:
            template = polisher.PromptTemplate.from_file(args.template)
    except (ConfigError, polisher.TemplateError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    policy = (
        polisher.POLICY_FINAL if args.policy == "final" else polisher.POLICY_ALL
    )
    checkpoint = polisher.Checkpoint(args.checkpoint) if args.checkpoint else None
    report = polisher.PolishReport()
    resume = checkpoint is not None and bool(checkpoint.done)
    mode = "a" if resume else "w"
    try:
        stream = polisher.polish_corpus(
            core.read_native(args.input),
            client,
            template,
            metrics.get_classifier(args.classifier),
            policy=policy,
            checkpoint=checkpoint,
            report=report,
        )
        with open(args.output, mode, encoding="utf-8") as fh:
            for conv in stream:
                fh.write(json.dumps(conv.to_dict(), ensure_ascii=False) + "\n")
    except PolishError as exc:
        _log(f"external service error ({exc.kind}): {exc}")
        _log(report.to_dict())
        return EXIT_EXTERNAL
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_RUNTIME
    _log(report.to_dict())
    _write_report(args.report, report.to_dict())
    return EXIT_OK


def cmd_serialize(args) -> int:
    try:
        budget = serializer.LengthBudget(args.max_input, args.max_target)
    except ValueError as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    report = serializer.SerializeReport()
    try:
        samples = serializer.serialize_corpus(
            core.read_native(args.input),
            budget,
            final_only=(args.policy == "final"),
            report=report,
        )
        serializer.write_training_file(samples, args.output)
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_RUNTIME
    _log(report.to_dict())
    _write_report(args.report, report.to_dict())
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        stats = core.corpus_stats(
            core.read_native(args.input), metrics.get_classifier(args.classifier)
        )
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_RUNTIME
    payload = stats.to_dict()
    if args.output:
        _write_report(args.output, payload)
    else:
        print(json.dumps(payload, ensure_ascii=False, indent=2))
    _log({"n_conversations": stats.n_conversations})
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        tokenizer = metrics.get_tokenizer(args.tokenizer)
        classifier = metrics.get_classifier(args.classifier)
        variant = {"paper": metrics.PQA_PAPER, "f1": metrics.PQA_F1}[args.pqa_variant]
    except KeyError as exc:
        _log(f"error: unknown option {exc}")
        return EXIT_CONFIG
    try:
        report = metrics.evaluate(
            args.pred,
            args.ref,
            tokenizer=tokenizer,
            classifier=classifier,
            variant=variant,
            dataset=args.dataset,
            model=args.model,
            smooth=args.smooth,
        )
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_RUNTIME
    except (ValueError, json.JSONDecodeError, KeyError) as exc:
        _log(f"error: {exc}")
        return EXIT_RUNTIME
    if report.missing:
        _log(f"warning: {report.missing} reference ids had no prediction")
    print(report.to_table())
    _write_report(args.report, report.to_dict())
    return EXIT_OK


def cmd_pipeline(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _log(f"error: cannot read pipeline config: {exc}")
        return EXIT_CONFIG

    out_dir = Path(cfg.get("output_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = out_dir / "corpus.jsonl"
    cleaned = out_dir / "cleaned.jsonl"
    polished = out_dir / "polished.jsonl"
    train = out_dir / "train.jsonl"

    ns = argparse.Namespace(
        input=cfg["input"],
        format=cfg.get("format", "native"),
        output=str(corpus),
        report=str(out_dir / "ingest_report.json"),
    )
    rc = cmd_ingest(ns)
    if rc:
        return rc

    ns = argparse.Namespace(
        input=str(corpus),
        output=str(cleaned),
        rules=cfg.get("rules", "default"),
        report=str(out_dir / "clean_report.json"),
    )
    rc = cmd_clean(ns)
    if rc:
        return rc

    serialize_input = cleaned
    if not args.skip_polish:
        if "client_config" not in cfg:
            _log("error: pipeline config lacks client_config and --skip-polish not set")
            return EXIT_CONFIG
        ns = argparse.Namespace(
            input=str(cleaned),
            output=str(polished),
            client_config=cfg["client_config"],
            template=cfg.get("template", "default"),
            policy=cfg.get("polish_policy", "all"),
            classifier=cfg.get("classifier", "default"),
            cache_dir=cfg.get("cache_dir", str(out_dir / "polish_cache")),
            checkpoint=cfg.get("checkpoint", str(out_dir / "polish_checkpoint.txt")),
            report=str(out_dir / "polish_report.json"),
        )
        rc = cmd_polish(ns)
        if rc:
            return rc
        serialize_input = polished

    budget = cfg.get("budget", {})
    ns = argparse.Namespace(
        input=str(serialize_input),
        output=str(train),
        max_input=int(budget.get("max_input_units", 1536)),
        max_target=int(budget.get("max_target_units", 512)),
        policy=cfg.get("serialize_policy", "all"),
        report=str(out_dir / "serialize_report.json"),
    )
    rc = cmd_serialize(ns)
    if rc:
        return rc

    ns = argparse.Namespace(
        input=str(serialize_input),
        output=str(out_dir / "stats.json"),
        classifier=cfg.get("classifier", "default"),
    )
    return cmd_stats(ns)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coq-forge",
        description="Corpus construction and evaluation toolkit for "
        "proactive-questioning dialogue models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a benchmark dataset into the native corpus format")
    p.add_argument("--format", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("clean", help="apply the regex cleaning rule set")
    p.add_argument("--rules", default="default", help="'default' or a rule file path")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("polish", help="polish doctor suggestions via an LLM endpoint")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--client-config", dest="client_config", required=True)
    p.add_argument("--template", default="default")
    p.add_argument("--policy", choices=["all", "final"], default="all")
    p.add_argument("--classifier", default="default")
    p.add_argument("--cache-dir", dest="cache_dir", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_polish)

    p = sub.add_parser("serialize", help="emit fine-tuning (input, target) JSONL")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--max-input", dest="max_input", type=int, default=1536)
    p.add_argument("--max-target", dest="max_target", type=int, default=512)
    p.add_argument("--policy", choices=["all", "final"], default="all")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", default=None)
    p.add_argument("--classifier", default="default")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--tokenizer", default="char")
    p.add_argument("--classifier", default="default")
    p.add_argument("--pqa-variant", dest="pqa_variant", choices=["paper", "f1"], default="paper")
    p.add_argument("--smooth", action="store_true")
    p.add_argument("--dataset", default="")
    p.add_argument("--model", default="")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run ingest→clean→polish→serialize→stats")
    p.add_argument("--config", required=True)
    p.add_argument("--skip-polish", dest="skip_polish", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching the exit-code contract
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    except PolishError as exc:
        _log(f"external service error ({exc.kind}): {exc}")
        return EXIT_EXTERNAL
    except KeyError as exc:
        _log(f"error: missing config key {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
