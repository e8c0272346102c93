"""Command-line entry points: ``tpp <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .datasets import BundleError, SbmSpec, generate_sbm_stream, write_bundle
from .harness import (
    BASELINE_KINDS,
    RunResult,
    bench,
    make_estimator,
    profile_tasks,
    run_ablation,
    run_baseline,
    run_tpp,
    stream_from_config,
)
from .io_utils import atomic_write_bytes, atomic_write_text
from .stream import ORDERINGS
from .verify import run_all

ABLATION_FLAGS = ("prompt_off", "head_off", "task_id_off")
MODE_NAMES = {"ls": "laplacian", "nf": "attribute"}


def _effective_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "adversarial", False):
        cfg = cfg.replace(sbm=SbmSpec.adversarial(seed=cfg.sbm.seed))
    if args.seed is not None:
        # one seed drives both the generator and the splits/training
        cfg = cfg.replace(seed=args.seed, sbm=dataclasses.replace(cfg.sbm, seed=args.seed))
    if args.ordering is not None:
        cfg = cfg.replace(ordering=args.ordering)
    if args.bundle is not None:
        cfg = cfg.replace(bundle=args.bundle)
    return cfg


def _save_result(result: RunResult, out_dir: str, stem: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}_seed{result.seed}.json"
    result.save(path)
    print(f"{result.kind}: AA={result.aa:.4f} AF={_fmt_af(result.af)} -> {path}")
    return path


def _fmt_af(af) -> str:
    return "n/a" if af is None else f"{af:.4f}"


def cmd_synth(args) -> int:
    cfg = _effective_config(args)
    stream, _ = generate_sbm_stream(dataclasses.replace(cfg.sbm, ordering=cfg.ordering))
    b = write_bundle(args.out, stream.full_graph, [t.classes for t in stream])
    g = stream.full_graph
    print(f"wrote {g.n} nodes, {g.num_edges} edges, {len(stream)} tasks to {b.edges.parent}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _effective_config(args)
    stream = stream_from_config(cfg)
    backbone = make_estimator(cfg)._pretrain(stream.tasks[0].graph)
    atomic_write_bytes(Path(args.out), backbone.to_bytes())
    losses = backbone.loss_history
    if losses:
        print(f"contrastive loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    print(f"backbone {backbone.fingerprint()[:16]} -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _effective_config(args)
    _save_result(run_tpp(stream_from_config(cfg), cfg), args.out, "tpp")
    return 0


def cmd_baseline(args) -> int:
    cfg = _effective_config(args)
    if args.oracle:
        cfg = cfg.replace(oracle_task_ids=True)
    result = run_baseline(stream_from_config(cfg), args.kind, cfg)
    _save_result(result, args.out, result.kind)
    return 0


def _parse_flags(raw) -> dict:
    flags = {}
    for item in raw:
        for name in filter(None, item.split(",")):
            if name not in ABLATION_FLAGS:
                raise ValueError(f"unknown ablation flag {name!r}; choose from {', '.join(ABLATION_FLAGS)}")
            flags[name.removesuffix("_off") + "_on"] = False
    return flags


def cmd_ablate(args) -> int:
    cfg = _effective_config(args)
    flags = _parse_flags(args.flags)
    result = run_ablation(stream_from_config(cfg), cfg, **flags)
    stem = "ablate_" + "_".join(sorted(k.removesuffix("_on") for k in flags)) if flags else "ablate_none"
    _save_result(result, args.out, stem)
    return 0


def cmd_profile_tasks(args) -> int:
    cfg = _effective_config(args)
    stream = stream_from_config(cfg)
    modes = ("ls", "nf") if args.mode == "both" else (args.mode,)
    for mode in modes:
        rep = profile_tasks(stream, cfg.smoothing_steps, MODE_NAMES[mode])
        preds = " ".join(map(str, rep.predictions))
        print(f"{mode.upper()} task-ID accuracy: {rep.accuracy:.3f} (predicted {preds})")
    return 0


def cmd_verify(args) -> int:
    checks = run_all(args.graphs, args.seed if args.seed is not None else 0)
    for c in checks:
        if args.verbose or not c.passed:
            print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    cfg = _effective_config(args)
    rows = bench(cfg, tuple(args.sizes))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["phase", "nodes", "edges", "seconds"], lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    print(f"{'phase':<14}{'nodes':>8}{'edges':>9}{'seconds':>11}")
    for r in rows:
        print(f"{r['phase']:<14}{r['nodes']:>8}{r['edges']:>9}{r['seconds']:>11.4f}")
    if args.out:
        atomic_write_text(Path(args.out), buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; unset keys keep their defaults")
    common.add_argument("--seed", type=int, help="overrides the config seed (generator, splits, training)")
    common.add_argument("--ordering", choices=ORDERINGS + ("as_listed",))
    common.add_argument("--bundle", help="dataset bundle directory instead of the SBM generator")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tpp", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic SBM dataset bundle")
    p.add_argument("--out", required=True, help="bundle directory")
    p.add_argument("--adversarial", action="store_true", help="tasks share feature means, differ in structure")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", parents=[common], help="pretrain the backbone on task 1 and save it")
    p.add_argument("--out", required=True, help="backbone file")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", parents=[common], help="full pipeline, writes a RunResult")
    p.add_argument("--out", default="results", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline", parents=[common], help="run a comparison method")
    p.add_argument("--kind", required=True, choices=BASELINE_KINDS)
    p.add_argument("--oracle", action="store_true", help="joint only: score within the true task's classes")
    p.add_argument("--out", default="results", help="output directory")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ablate", parents=[common], help="run with components switched off")
    p.add_argument("--flags", nargs="*", default=[], help=f"any of {', '.join(ABLATION_FLAGS)}")
    p.add_argument("--out", default="results", help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("profile-tasks", parents=[common], help="task-ID accuracy only")
    p.add_argument("--mode", choices=("ls", "nf", "both"), default="both",
                   help="ls: smoothed, degree-corrected prototypes; nf: raw attribute means")
    p.add_argument("--adversarial", action="store_true", help="tasks share feature means, differ in structure")
    p.set_defaults(func=cmd_profile_tasks)

    p = sub.add_parser("verify", parents=[common], help="prototype convergence and separation checks")
    p.add_argument("--graphs", type=int, default=20, help="random graphs per suite")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[common], help="per-phase timing over growing graphs")
    p.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200, 400], help="nodes per class")
    p.add_argument("--out", help="CSV file")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, BundleError, OSError, RuntimeError) as exc:
        print(f"tpp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
