"""``gada`` command line: gen | train | eval | verify.

Exit codes: 0 success, 1 the requested work failed (divergence, failed
check), 2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff.checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config, with_overrides
from .hierarchy import HierarchyError
from .metrics import dump_embeddings, evaluate_scenario
from .synth import Scenario, ScenarioError, load_scenario, sample_scenario, save_scenario, standard_config
from .training import TrainingDiverged, build_model, train
from .verify import run_suite

class UsageError(Exception):
    pass


def source_digest() -> str:
    """sha256 over the package sources, so a manifest pins the exact code."""
    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for path in sorted(root.rglob("*.py")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig) -> Path:
    header = [
        f"# command = {command}",
        f"# version = {__version__}",
        f"# source_sha256 = {source_digest()}",
        f"# numpy = {np.__version__}",
    ]
    path = out / "manifest.txt"
    # The output location is left out so runs written to different places
    # stay byte-identical; pass --out when replaying a manifest.
    path.write_text("\n".join(header) + "\n" + replace(cfg, out=None).to_text())
    return path


def resolve_scenario(cfg: RunConfig) -> Scenario:
    """A scenario directory if ``cfg.scenario`` names one, else a standard scenario."""
    path = Path(cfg.scenario)
    if path.is_dir():
        if cfg.scenario_overrides:
            raise ConfigError("scenario.* overrides only apply to named scenarios, not directories")
        return load_scenario(path)
    return sample_scenario(standard_config(cfg.scenario, cfg.seed, **cfg.scenario_overrides))


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = with_overrides(
        cfg,
        seed=args.seed,
        out=args.out,
        scenario=getattr(args, "scenario", None),
        steps=getattr(args, "steps", None),
        gamma=getattr(args, "gamma", None),
        lambda1=getattr(args, "lambda1", None),
        lambda2=getattr(args, "lambda2", None),
        lambda3=getattr(args, "lambda3", None),
    )
    if getattr(args, "no_hgr", False):
        cfg.use_hgr = False
    cfg.validate()
    if cfg.out is None:
        raise ConfigError("an output directory is required (set out = DIR in the config or pass --out)")
    return cfg


def cmd_gen(args) -> int:
    cfg = _run_config(args)
    if Path(cfg.scenario).is_dir():
        raise ConfigError(f"gen needs a scenario name, {cfg.scenario!r} is a directory")
    scn = resolve_scenario(cfg)
    out = save_scenario(scn, cfg.out)
    write_manifest(out, "gen", cfg)
    print(f"wrote {cfg.scenario} ({len(scn.source_y)} source, {len(scn.target_y)} target samples) to {out}")
    return 0


def _write_log(path: Path, records: list[dict]) -> None:
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def cmd_train(args) -> int:
    cfg = _run_config(args)
    scn = resolve_scenario(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "train", cfg)
    try:
        result = train(scn, cfg.train_config())
    except TrainingDiverged as e:
        _write_log(out / "log.ndjson", e.log)
        print(f"error: training diverged: {e}", file=sys.stderr)
        return 1
    _write_log(out / "log.ndjson", result.log)
    result.model.save(out / "checkpoint.bin")
    (out / "report.json").write_text(result.report.to_json() + "\n")
    r = result.report
    print(f"accuracy {r.accuracy:.4f} macro-F1 {r.macro_f1:.4f} sparse-F1 {r.sparse_f1:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    if not ckpt.is_file():
        raise UsageError(f"no checkpoint at {ckpt}")
    scn = resolve_scenario(cfg)
    model = build_model(scn, cfg.train_config())
    try:
        model.load(ckpt)
    except (CheckpointError, KeyError, ValueError) as e:
        raise UsageError(f"{ckpt} does not fit this config: {e}") from None
    report = evaluate_scenario(model, scn)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "eval", cfg)
    (out / "report.json").write_text(report.to_json() + "\n")
    if args.embeddings:
        x = np.concatenate([scn.source_x, scn.target_x])
        labels = np.concatenate([scn.source_y, scn.target_y])
        domains = ["source"] * len(scn.source_y) + ["target"] * len(scn.target_y)
        dump_embeddings(model, x, labels, domains, args.embeddings)
    print(f"accuracy {report.accuracy:.4f} macro-F1 {report.macro_f1:.4f} sparse-F1 {report.sparse_f1:.4f}")
    return 0


def cmd_verify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    results = run_suite(args.suite, seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gada", description="Hierarchy-guided adversarial domain adaptation on synthetic scenarios.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log evaluation progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, run=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed (required unless set in the config)")
        p.add_argument("--out", help="output directory")
        if run:
            p.add_argument("--scenario", help="standard scenario name or scenario directory")

    def train_flags(p):
        p.add_argument("--steps", type=int)
        p.add_argument("--no-hgr", action="store_true", help="bypass the HGR layers (plain MDD baseline)")
        p.add_argument("--gamma", type=float)
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
        p.add_argument("--lambda3", type=float)

    p = sub.add_parser("gen", help="write a scenario directory")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train and write log, checkpoint and report")
    common(p)
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the target domain")
    common(p)
    train_flags(p)
    p.add_argument("--checkpoint", help="checkpoint path (default OUT/checkpoint.bin)")
    p.add_argument("--embeddings", help="also dump pooled embeddings to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the self-check suites")
    p.add_argument("suite", nargs="?", default="all", choices=["gradcheck", "ppr", "invariants", "all"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, HierarchyError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
