"""Command-line entry point: ``samcheck <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from samcheck import __version__
from samcheck.dataset import DatasetManifest
from samcheck.detectors import LlmDetector
from samcheck.errors import SamcheckError
from samcheck.evaluate import render_table, run_eval
from samcheck.findings import DetectionReport, FindingCategory, group_by_category
from samcheck.gateway import CacheMode, Gateway, ProviderConfig, ResponseCache
from samcheck.inject import RANDOM, Subcategory, inject, write_outcome
from samcheck.miner import DataDrivenDetector, RuleBase, load_corpus, transactions_from
from samcheck.prompt import build_prompt
from samcheck.template import load_template

log = logging.getLogger("samcheck")

ENV_PREFIX = "SAMCHECK_"


@dataclass(frozen=True)
class Setting:
    dest: str
    flag: str
    kind: Callable[[str], Any]
    default: Any
    help: str


SETTINGS = (
    Setting("config", "--config", str, None, "JSON or YAML file with default settings"),
    Setting("endpoint", "--endpoint", str, ProviderConfig.endpoint_url, "chat-completion endpoint URL"),
    Setting("model", "--model", str, ProviderConfig.model_name, "model name sent to the provider"),
    Setting("temperature", "--temperature", float, 0.0, "sampling temperature"),
    Setting("max_tokens", "--max-tokens", int, 4096, "maximum output tokens"),
    Setting("api_key_env", "--api-key-env", str, "OPENAI_API_KEY", "environment variable holding the API key"),
    Setting("cache", "--cache", str, None, "response cache file (JSON lines)"),
    Setting("cache_mode", "--cache-mode", str, "replay", "record, replay or passthrough"),
    Setting("seed", "--seed", int, 0, "random seed"),
    Setting("alpha", "--alpha", float, 0.05, "support fraction for mining"),
    Setting("min_confidence", "--min-confidence", float, 0.95, "minimum rule confidence"),
    Setting("repetitions", "--repetitions", int, 5, "evaluation repetitions"),
    Setting("workers", "--workers", int, 1, "files evaluated in parallel"),
    Setting("rulebase", "--rulebase", str, None, "rulebase file for the data-driven detector"),
    Setting("corpus", "--corpus", str, None, "template directory to mine when no rulebase is given"),
    Setting("out", "--out", str, None, "output file or directory"),
)


def _add_settings(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("settings")
    for s in SETTINGS:
        group.add_argument(s.flag, dest=s.dest, default=argparse.SUPPRESS, help=s.help)
    group.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)


def resolve_settings(args: argparse.Namespace, environ: dict[str, str] | None = None) -> dict[str, Any]:
    """Merge settings with precedence flags > environment > config file > defaults."""
    environ = os.environ if environ is None else environ
    given = vars(args)
    config_path = given.get("config") or environ.get(ENV_PREFIX + "CONFIG")
    from_file: dict[str, Any] = {}
    if config_path:
        try:
            loaded = yaml.safe_load(Path(config_path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise SamcheckError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise SamcheckError(f"config {config_path} must be a mapping")
        from_file = {str(k).replace("-", "_"): v for k, v in loaded.items()}
    out: dict[str, Any] = {}
    for s in SETTINGS:
        if s.dest in given:
            raw = given[s.dest]
        elif ENV_PREFIX + s.dest.upper() in environ:
            raw = environ[ENV_PREFIX + s.dest.upper()]
        elif s.dest in from_file:
            raw = from_file[s.dest]
        else:
            out[s.dest] = s.default
            continue
        try:
            out[s.dest] = s.kind(raw) if raw is not None else None
        except (TypeError, ValueError) as exc:
            raise SamcheckError(f"bad value for {s.flag}: {raw!r}") from exc
    out["verbose"] = given.get("verbose", 0)
    if out["cache_mode"] not in {m.value for m in CacheMode}:
        raise SamcheckError(f"--cache-mode must be one of record, replay, passthrough (got {out['cache_mode']!r})")
    return out


def _provenance(command: str, cfg: dict, extra: dict | None = None) -> dict:
    settings = {k: v for k, v in cfg.items() if k != "verbose"}
    return {"tool": "samcheck", "version": __version__, "command": command, "settings": settings, **(extra or {})}


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _gateway(cfg: dict) -> Gateway:
    provider = ProviderConfig(
        endpoint_url=cfg["endpoint"],
        model_name=cfg["model"],
        temperature=cfg["temperature"],
        max_output_tokens=cfg["max_tokens"],
        credential_env_var=cfg["api_key_env"],
        concurrency=max(1, cfg["workers"]),
    )
    cache_path = cfg["cache"]
    if cfg["cache_mode"] != CacheMode.PASSTHROUGH.value and not cache_path:
        raise SamcheckError(f"--cache is required in {cfg['cache_mode']} mode")
    return Gateway(provider, ResponseCache(cache_path, cfg["cache_mode"]))


def _mine(corpus: str, alpha: float, min_confidence: float) -> tuple[RuleBase, list[str]]:
    docs, warnings = load_corpus(corpus)
    rb = RuleBase.build(transactions_from(docs), alpha, min_confidence, provenance={"corpus": str(corpus)})
    return rb, warnings


def _dd_detector(cfg: dict, alpha: float | None = None) -> DataDrivenDetector:
    if alpha is None and cfg["rulebase"]:
        return DataDrivenDetector(RuleBase.load(cfg["rulebase"]))
    if not cfg["corpus"]:
        raise SamcheckError("the dd detector needs --rulebase or --corpus")
    rb, warnings = _mine(cfg["corpus"], cfg["alpha"] if alpha is None else alpha, cfg["min_confidence"])
    for w in warnings:
        log.warning("skipped corpus file %s", w)
    return DataDrivenDetector(rb)


def _detector(name: str, cfg: dict, alpha: float | None = None):
    if name == "dd":
        return _dd_detector(cfg, alpha)
    return LlmDetector(_gateway(cfg), "SlsDetector" if name == "sls" else "Basic")


def _summary(report: DetectionReport) -> str:
    lines = [f"{report.origin}: {len(report.findings)} finding(s) from {report.detector}"]
    for category, items in group_by_category(report.findings).items():
        heading = category.heading if category is not FindingCategory.UNCATEGORIZED else "Uncategorized"
        lines.append(f"{heading} ({len(items)}):")
        for f in items:
            where = f.aligned_path.dotted() if f.aligned_path else "<unmatched>"
            lines.append(f"  - {where}: {f.mention_text}")
    lines.extend(f"warning: {w}" for w in report.warnings)
    return "\n".join(lines)


# -- commands ----------------------------------------------------------------------


def cmd_detect(args, cfg: dict) -> int:
    doc = load_template(args.template)
    detector = _detector(args.detector, cfg)
    report = detector.detect(doc)
    out = Path(cfg["out"] or f"{Path(args.template).stem}.{args.detector}.report.json")
    _write_json(out, {**report.to_dict(), "provenance": _provenance("detect", cfg, {
        "template": str(args.template), "detector": args.detector, **detector.provenance()})})
    print(_summary(report))
    print(f"report written to {out}")
    return 0


def cmd_mine(args, cfg: dict) -> int:
    rb, warnings = _mine(args.corpus, cfg["alpha"], cfg["min_confidence"])
    rb.provenance.update(_provenance("mine", cfg, {"corpus": str(args.corpus)}))
    out = Path(cfg["out"] or "rulebase.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    rb.save(out)
    for w in warnings:
        print(f"warning: skipped {w}")
    print(f"transactions: {rb.catalog.corpus_size}")
    print(f"frequent itemsets: {rb.provenance['frequent_itemsets']}")
    print(f"rules: {len(rb.rules)}")
    if not rb.rules:
        print("warning: no rules were derived at this support and confidence")
    print(f"rulebase written to {out}")
    return 0


def cmd_inject(args, cfg: dict) -> int:
    doc = load_template(args.template)
    outcome = inject(doc, args.subcategory, cfg["seed"])
    template, truth = write_outcome(outcome, cfg["out"] or ".")
    print(outcome.describe())
    print(f"wrote {template}")
    print(f"wrote {truth}")
    return 0


def _sweep_values(text: str) -> list[float]:
    """Comma-separated percentages ("1,3,5,10" or "1%,3%") as fractions."""
    try:
        return [float(p.strip().rstrip("%")) / 100 for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise SamcheckError(f"bad --alpha-sweep value {text!r}") from exc


def cmd_eval(args, cfg: dict) -> int:
    manifest = DatasetManifest.load(args.manifest)
    runs: list[tuple[str, Any]] = []
    if args.alpha_sweep:
        if args.detector != "dd":
            raise SamcheckError("--alpha-sweep only applies to the dd detector")
        runs = [(f"a{round(a * 100, 4):g}", _detector("dd", cfg, alpha=a)) for a in _sweep_values(args.alpha_sweep)]
    else:
        runs = [("", _detector(args.detector, cfg))]
    base = Path(cfg["out"] or f"eval-{args.detector}.json")
    failed = False
    for tag, detector in runs:
        report = run_eval(manifest, detector, cfg["repetitions"], cfg["seed"], cfg["workers"],
                          provenance=_provenance("eval", cfg, {"manifest": str(args.manifest), **detector.provenance()}))
        out = base.with_name(f"{base.stem}-{tag}{base.suffix}") if tag else base
        _write_json(out, report.to_dict())
        table = render_table(report)
        out.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
        if tag:
            print(f"[{tag}]")
        print(table)
        print(f"report written to {out}")
        failed = failed or bool(report.failures)
    return 1 if failed else 0


def cmd_prompt_dump(args, cfg: dict) -> int:
    doc = load_template(args.template)
    sys.stdout.write(build_prompt(doc.source_text, "SlsDetector" if args.variant == "sls" else "Basic"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_settings(common)
    parser = argparse.ArgumentParser(prog="samcheck", description="Detect misconfigurations in AWS SAM templates.",
                                     parents=[common])
    parser.add_argument("--version", action="version", version=f"samcheck {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", parents=[common], help="analyze one template")
    p.add_argument("template")
    p.add_argument("--detector", choices=("sls", "basic", "dd"), default="sls")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("mine", parents=[common], help="learn a rulebase from a template corpus")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("inject", parents=[common], help="inject one labeled misconfiguration")
    p.add_argument("template")
    p.add_argument("--subcategory", choices=[s.value for s in Subcategory] + [RANDOM], default=RANDOM)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("eval", parents=[common], help="score a detector on a labeled dataset")
    p.add_argument("manifest")
    p.add_argument("--detector", choices=("sls", "basic", "dd"), default="sls")
    p.add_argument("--alpha-sweep", default=None, help="comma-separated alphas, e.g. 1,3,5,10 (percent)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prompt-dump", parents=[common], help="print the prompt sent for a template")
    p.add_argument("template")
    p.add_argument("--variant", choices=("sls", "basic"), default="sls")
    p.set_defaults(func=cmd_prompt_dump)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_settings(args)
        logging.basicConfig(level=logging.WARNING - 10 * min(cfg["verbose"] or 0, 2),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args, cfg)
    except SamcheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
