"""Command line entry point: ``propkit <subcommand> ...``.

Flags override values from ``--config`` (TOML). Every run writes the
effective configuration as ``<output>.config.json`` next to its main output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .bep import export_samples, sample_tree
from .detect import (
    AdapterError,
    Scenario,
    evaluate,
    external_detector_adapter,
    train_baseline,
)
from .enhance import enhance_many, write_transcript
from .gateway import GenConfig, MockExhausted, ReplayMiss, build_gateway
from .ingest import ConfigError, DatasetManifest, ingest, split
from .metrics import (
    HashedBowEmbedder,
    LexiconSentiment,
    RemoteEmbedder,
    RemoteSentiment,
    report,
    write_report,
)
from .prompts import TEMPLATE_IDS, TemplateError
from .tree import read_jsonl, write_jsonl

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("propkit")

SUBCOMMANDS = ("ingest", "split", "bep-sample", "enhance", "eval-prop", "detect")
DEFAULT_K = 30


class PipelineError(RuntimeError):
    def __init__(self, message: str, samples: Optional[list] = None):
        super().__init__(message)
        self.samples = samples or []


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def pick(flag, section: dict, key: str, default=None):
    if flag is not None:
        return flag
    return section.get(key, default)


def write_effective(out: Path, cfg: dict) -> None:
    path = out.with_name(out.name + ".config.json")
    path.write_text(json.dumps(cfg, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _ratio(text) -> tuple[float, float, float]:
    if isinstance(text, (list, tuple)):
        parts = [float(x) for x in text]
    else:
        parts = [float(x) for x in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"ratio needs three comma-separated values, got {text!r}")
    return tuple(parts)


def gen_config(args, cfg: dict, mode: str) -> GenConfig:
    g = cfg.get("generation", {})
    base = GenConfig()
    return GenConfig(
        model_name=pick(args.model, g, "model_name", base.model_name),
        endpoint_url=pick(args.endpoint, g, "endpoint_url", base.endpoint_url),
        temperature=pick(args.temperature, g, "temperature", base.temperature),
        top_p=pick(args.top_p, g, "top_p", base.top_p),
        max_retries=pick(args.max_retries, g, "max_retries", base.max_retries),
        max_new_tokens=g.get("max_new_tokens", base.max_new_tokens),
        timeout=g.get("timeout", base.timeout),
        mode=mode,
        system_prompt=pick(args.system_prompt, g, "system_prompt", base.system_prompt),
        concurrency=pick(args.jobs, g, "concurrency", base.concurrency),
    )


# subcommands


def cmd_ingest(args, cfg: dict) -> int:
    c = cfg.get("ingest", {})
    fmt = pick(args.format, c, "format")
    src = pick(args.input, c, "in")
    out = Path(pick(args.out, c, "out"))
    if not fmt or not src:
        raise ConfigError("ingest needs --format and --in")
    manifest = DatasetManifest(name=pick(args.name, c, "name", Path(src).name), source_format=fmt, path=src)
    trees, rep = ingest(manifest)
    write_jsonl(trees, out)
    rep_path = pick(args.report, c, "report")
    if rep_path:
        Path(rep_path).write_text(json.dumps(rep.to_dict(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    write_effective(out, {"subcommand": "ingest", "name": manifest.name, "format": fmt, "in": src,
                          "out": str(out), "report": rep_path})
    log.info("ingested %d trees (%d comments), dropped %d records", rep.trees, rep.comments, len(rep.dropped))
    return 0


def cmd_split(args, cfg: dict) -> int:
    c = cfg.get("split", {})
    src = pick(args.input, c, "in")
    out_dir = Path(pick(args.out_dir, c, "out_dir", "."))
    ratio = _ratio(pick(args.ratio, c, "ratio", "0.7,0.1,0.2"))
    seed = int(pick(args.seed, c, "seed", cfg.get("seeds", {}).get("split", 13)))
    trees = read_jsonl(src)
    parts = split(trees, ratio, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in parts.items():
        write_jsonl(part, out_dir / f"{name}.jsonl")
    manifest = {name: [t.sample_id for t in part] for name, part in parts.items()}
    split_path = out_dir / "split.json"
    split_path.write_text(json.dumps({"ratio": list(ratio), "seed": seed, "partitions": manifest}, indent=1) + "\n",
                          encoding="utf-8")
    write_effective(split_path, {"subcommand": "split", "in": src, "out_dir": str(out_dir),
                                 "ratio": list(ratio), "seed": seed})
    return 0


def cmd_bep_sample(args, cfg: dict) -> int:
    c = cfg.get("bep", {})
    src = pick(args.input, c, "in")
    out = Path(pick(args.out, c, "out"))
    template = pick(args.template, c, "template", cfg.get("template_id", "P1"))
    samples = []
    for t in read_jsonl(src):
        samples.extend(sample_tree(t, template))
    n = export_samples(samples, out)
    write_effective(out, {"subcommand": "bep-sample", "in": src, "out": str(out), "template": template})
    log.info("wrote %d masked samples", n)
    return 0


def _script(path: Optional[str]):
    if not path:
        return None
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_enhance(args, cfg: dict) -> int:
    c = cfg.get("enhance", {})
    src = pick(args.input, c, "in")
    out = Path(pick(args.out, c, "out"))
    k = int(pick(args.k, c, "k", DEFAULT_K))
    template = pick(args.template, c, "template", cfg.get("template_id", "P1"))
    mode = pick(args.mode, c, "mode", "mock")
    record = pick(args.record, c, "record")
    tdir = pick(args.transcripts, c, "transcripts")
    on_exhaustion = pick(args.on_exhaustion, c, "on_exhaustion", "stop")
    gcfg = gen_config(args, cfg, mode)
    gateway = build_gateway(gcfg, record_dir=record, script=_script(pick(args.script, c, "script")))
    trees = read_jsonl(src)
    enriched, errors = _run_enhance(trees, k, gateway, template, on_exhaustion, args.jobs or 1, tdir)
    write_jsonl(enriched, out)
    write_effective(out, {"subcommand": "enhance", "in": src, "out": str(out), "k": k, "template": template,
                          "record": record, "transcripts": tdir, "on_exhaustion": on_exhaustion,
                          "generation": gcfg.to_dict()})
    if errors:
        raise PipelineError(f"{len(errors)} sample(s) failed to enhance", errors)
    return 0


def _run_enhance(trees, k, gateway, template, on_exhaustion, jobs, tdir):
    """Enhance trees; samples whose backend fails keep their input tree and are reported."""
    errors = []

    def one(t):
        try:
            return enhance_many([t], k, gateway, template, on_exhaustion)[0]
        except (ReplayMiss, MockExhausted) as exc:
            errors.append({"sample_id": t.sample_id, "error": f"{type(exc).__name__}: {exc}"})
            return t, None

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, trees))
    else:
        results = [one(t) for t in trees]
    enriched = []
    for tree, transcript in results:
        enriched.append(tree)
        if tdir and transcript is not None:
            write_transcript(transcript, tdir)
    errors.sort(key=lambda e: e["sample_id"])
    return enriched, errors


def _providers(args, cfg: dict):
    m = cfg.get("metrics", {})
    emb_kind = pick(args.embedding, m, "embedding", "hashed_bow")
    sen_kind = pick(args.sentiment, m, "sentiment", "lexicon")
    if emb_kind == "remote":
        url = pick(args.embedding_url, m, "embedding_url")
        if not url:
            raise ConfigError("remote embedding needs --embedding-url")
        embedder = RemoteEmbedder(url, batch_size=m.get("batch_size", 64))
    else:
        embedder = HashedBowEmbedder(int(m.get("dimension", 256)))
    if sen_kind == "remote":
        url = pick(args.sentiment_url, m, "sentiment_url")
        if not url:
            raise ConfigError("remote sentiment needs --sentiment-url")
        sentiment = RemoteSentiment(url, batch_size=m.get("batch_size", 64))
    else:
        sentiment = LexiconSentiment()
    return embedder, sentiment, {"embedding": emb_kind, "sentiment": sen_kind}


def cmd_eval_prop(args, cfg: dict) -> int:
    c = cfg.get("eval_prop", {})
    original = pick(args.original, c, "original")
    generated = args.generated or c.get("generated", [])
    out_dir = Path(pick(args.out_dir, c, "out_dir", "."))
    methods = {}
    for item in generated:
        name, _, path = item.partition("=")
        if not path:
            raise ConfigError(f"--generated expects NAME=PATH, got {item!r}")
        methods[name] = read_jsonl(path)
    embedder, sentiment, prov = _providers(args, cfg)
    rep = report(read_jsonl(original), methods, embedder, sentiment)
    paths = write_report(rep, out_dir)
    plots = pick(args.plots, c, "plots", True)
    if plots:
        from .plotting import plot_distributions

        plot_distributions(rep, out_dir)
    write_effective(paths[0], {"subcommand": "eval-prop", "original": original, "generated": list(generated),
                               "out_dir": str(out_dir), "plots": bool(plots), **prov})
    return 0


def _enhancer(args, cfg: dict, mode: str):
    if mode == "none":
        return None, None
    gcfg = gen_config(args, cfg, mode)
    gateway = build_gateway(gcfg, record_dir=args.record)
    k = int(args.k if args.k is not None else cfg.get("enhance", {}).get("k", DEFAULT_K))
    template = args.template or cfg.get("template_id", "P1")
    state = {"errors": []}

    def run(trees):
        enriched, errors = _run_enhance(trees, k, gateway, template, "stop", args.jobs or 1, None)
        state["errors"] = errors
        return enriched

    return run, {"k": k, "template": template, "generation": gcfg.to_dict(), "errors": state}


def cmd_detect(args, cfg: dict) -> int:
    c = cfg.get("detect", {})
    train_path = pick(args.train, c, "train")
    test_path = pick(args.test, c, "test")
    out = Path(pick(args.out, c, "out", "detection.json"))
    kind = pick(args.scenario, c, "scenario", "general")
    rho = pick(args.rho, c, "rho")
    scenario = Scenario(
        kind,
        rho=None if rho is None else float(rho),
        source=args.source_name or (Path(train_path).stem if kind == "cross_platform" else None),
        target=args.target_name or (Path(test_path).stem if kind == "cross_platform" else None),
    )
    adapter = pick(args.adapter, c, "adapter")
    model_info = {}
    if adapter:
        detector = external_detector_adapter(adapter)
    else:
        model = train_baseline(read_jsonl(train_path))
        detector = model
        if args.model_out:
            model.save(args.model_out)
        model_info = {"model_out": args.model_out}
    enhance_mode = pick(args.enhance, c, "enhance", "none")
    enhancer, enh_info = _enhancer(args, cfg, enhance_mode)
    try:
        rep = evaluate(detector, read_jsonl(test_path), scenario, enhancer, jobs=args.jobs or 1)
    finally:
        if hasattr(detector, "close"):
            detector.close()
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rep.to_dict(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    eff = {"subcommand": "detect", "train": train_path, "test": test_path, "scenario": scenario.to_dict(),
           "adapter": adapter, "enhance": enhance_mode, "record": args.record, **model_info}
    if enh_info:
        errors = enh_info.pop("errors")["errors"]
        eff.update(enh_info)
        write_effective(out, eff)
        if errors:
            raise PipelineError(f"{len(errors)} sample(s) failed to enhance", errors)
    else:
        write_effective(out, eff)
    return 0


# parser


def _gen_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("generation")
    g.add_argument("--template", choices=TEMPLATE_IDS, help="prompt template (default P1)")
    g.add_argument("--k", type=int, help=f"nodes to generate per tree (default {DEFAULT_K})")
    g.add_argument("--record", help="record store directory (read in replay mode)")
    g.add_argument("--endpoint", help="chat-completions URL for live mode")
    g.add_argument("--model", help="model name sent to the endpoint")
    g.add_argument("--temperature", type=float)
    g.add_argument("--top-p", dest="top_p", type=float)
    g.add_argument("--max-retries", dest="max_retries", type=int)
    g.add_argument("--system-prompt", dest="system_prompt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="propkit", description="Propagation-tree sampling, enhancement and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="TOML config file; flags override its values")
    parser.add_argument("--jobs", type=int, help="cap on concurrent workers")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("ingest", help="parse a cascade dump into canonical JSONL")
    p.add_argument("--format", choices=("pheme_dir", "weibo_json", "canonical_jsonl"))
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--report")
    p.add_argument("--name")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="seeded train/val/test split")
    p.add_argument("--in", dest="input")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--ratio")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("bep-sample", help="emit masked-node fine-tuning samples")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--template", choices=TEMPLATE_IDS)
    p.set_defaults(func=cmd_bep_sample)

    p = sub.add_parser("enhance", help="extend trees with validated generated nodes")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--mode", choices=("live", "mock", "replay"))
    p.add_argument("--transcripts", help="directory for per-sample transcript JSON")
    p.add_argument("--script", help="JSON list (or fingerprint->list map) of mock responses")
    p.add_argument("--on-exhaustion", dest="on_exhaustion", choices=("stop", "abort"))
    _gen_flags(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval-prop", help="structural and semantic propagation metrics")
    p.add_argument("--original")
    p.add_argument("--generated", action="append", metavar="NAME=PATH")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--embedding", choices=("hashed_bow", "remote"))
    p.add_argument("--embedding-url", dest="embedding_url")
    p.add_argument("--sentiment", choices=("lexicon", "remote"))
    p.add_argument("--sentiment-url", dest="sentiment_url")
    p.add_argument("--plots", dest="plots", action="store_true", default=None)
    p.add_argument("--no-plots", dest="plots", action="store_false")
    p.set_defaults(func=cmd_eval_prop)

    p = sub.add_parser("detect", help="train/evaluate a detector under a scenario")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--out")
    p.add_argument("--scenario", choices=("general", "early", "cross_platform"))
    p.add_argument("--rho", type=float)
    p.add_argument("--enhance", choices=("none", "mock", "replay", "live"))
    p.add_argument("--adapter", help="external detector: command line or http(s) URL")
    p.add_argument("--model-out", dest="model_out", help="save the trained baseline here")
    p.add_argument("--source-name", dest="source_name")
    p.add_argument("--target-name", dest="target_name")
    _gen_flags(p)
    p.set_defaults(func=cmd_detect)
    return parser


def run(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.jobs is None and "jobs" in cfg:
            args.jobs = int(cfg["jobs"])
        return args.func(args, cfg)
    except PipelineError as exc:
        _error_report(args.command, str(exc), exc.samples)
        return 1
    except (ConfigError, TemplateError, ValueError, FileNotFoundError, OSError, AdapterError,
            ReplayMiss, MockExhausted) as exc:
        _error_report(args.command, f"{type(exc).__name__}: {exc}", [])
        return 1


def _error_report(command: str, message: str, samples: list) -> None:
    sys.stderr.write(json.dumps({"command": command, "error": message, "samples": samples}, ensure_ascii=False) + "\n")


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
