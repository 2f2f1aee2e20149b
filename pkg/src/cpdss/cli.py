"""Command-line entry point: ``cpdss <subcommand> ...``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from .config import load_config
from . import pipeline

log = logging.getLogger("cpdss")


def _thread_limit(deterministic: bool):
    """Cap BLAS threads: 1 under --deterministic, else $CPDSS_THREADS if set."""
    n = 1 if deterministic else os.environ.get("CPDSS_THREADS")
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (keys of the Config dataclass)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics")
    p.add_argument("--out", required=True, help="output directory (or file for generate/evaluate)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpdss", description="SS-conditioned latent graph diffusion for sequences")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse PDBs, assign SS, build graphs and a manifest")
    p.add_argument("in_dir")
    _common(p)

    p = sub.add_parser("train-decoder", help="stage 1: attention pooling + decoder")
    p.add_argument("data_dir", help="output of prepare")
    p.add_argument("--resume", help="stage-1 checkpoint to continue from")
    _common(p)

    p = sub.add_parser("train-diffusion", help="stage 2: EGNN denoiser on frozen latents")
    p.add_argument("data_dir")
    p.add_argument("--stage1", required=True)
    _common(p)

    p = sub.add_parser("generate", help="sample sequences for SS graph templates")
    p.add_argument("graphs", nargs="+", help="graph JSON files")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--n-samples", type=int)
    _common(p)

    p = sub.add_parser("evaluate", help="diversity and SS consistency report")
    p.add_argument("generated", help="JSONL from generate")
    p.add_argument("data_dir", help="prepared conditions (output of prepare)")
    p.add_argument("--mode", choices=["self-consistency", "sidecar"], default="self-consistency")
    p.add_argument("--sidecars", help="directory with <template>_<index>.ss files (sidecar mode)")
    _common(p)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out)
    with _thread_limit(args.deterministic):
        try:
            if args.command == "prepare":
                man = pipeline.prepare(args.in_dir, out, cfg)
                print(json.dumps(man["counts"], sort_keys=True))
            elif args.command == "train-decoder":
                path = pipeline.train_decoder(args.data_dir, cfg, out, resume=args.resume)
                acc = json.loads((out / "stage1_summary.json").read_text())["train_accuracy"]
                print(f"teacher-forced accuracy {acc:.4f}; checkpoint {path}")
            elif args.command == "train-diffusion":
                print(pipeline.train_diffusion(args.data_dir, args.stage1, cfg, out))
            elif args.command == "generate":
                out.parent.mkdir(parents=True, exist_ok=True)
                n = pipeline.generate(args.graphs, args.stage1, args.stage2, cfg, out, args.n_samples)
                print(f"{n} sequences -> {out}")
            elif args.command == "evaluate":
                out.parent.mkdir(parents=True, exist_ok=True)
                report = pipeline.evaluate(args.generated, args.data_dir, cfg, args.mode, args.sidecars)
                out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
                agg = report["aggregate"]
                print(f"ID {agg['id']['mean']:.2f}  ID(no loops) {agg['id_noloop']['mean']:.2f}  "
                      f"Seq.ID {agg['seq_id']['mean']:.2f} -> {out}")
        except pipeline.ConfigMismatch as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
