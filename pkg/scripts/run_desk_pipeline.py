"""Run prepare -> train-decoder -> train-diffusion -> generate -> evaluate on a toy corpus."""

import argparse
import subprocess
import sys
from pathlib import Path

from cpdss.toydata import write_toy_dataset

HERE = Path(__file__).resolve().parent


def run_pipeline(work, config=None, seed: int = 7, n_proteins: int = 20, deterministic: bool = True) -> Path:
    work = Path(work)
    write_toy_dataset(work / "pdb", n=n_proteins, seed=0)
    flags = ["--seed", str(seed)]
    if config:
        flags += ["--config", str(config)]
    if deterministic:
        flags.append("--deterministic")

    def cpdss(*args):
        subprocess.run([sys.executable, "-m", "cpdss.cli", *args, *flags], check=True)

    cpdss("prepare", str(work / "pdb"), "--out", str(work / "data"))
    cpdss("train-decoder", str(work / "data"), "--out", str(work / "stage1"))
    cpdss("train-diffusion", str(work / "data"), "--stage1", str(work / "stage1/stage1.cpds"),
          "--out", str(work / "stage2"))
    graphs = sorted(str(p) for p in (work / "data/graphs").glob("*.json"))
    cpdss("generate", *graphs, "--stage1", str(work / "stage1/stage1.cpds"),
          "--stage2", str(work / "stage2/stage2.cpds"), "--out", str(work / "generated.jsonl"))
    report = work / "report.json"
    cpdss("evaluate", str(work / "generated.jsonl"), str(work / "data"), "--out", str(report))
    return report


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("work_dir")
    ap.add_argument("--config", default=str(HERE.parent / "configs" / "desk.json"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("-n", type=int, default=20)
    a = ap.parse_args()
    print(run_pipeline(a.work_dir, a.config, a.seed, a.n))
