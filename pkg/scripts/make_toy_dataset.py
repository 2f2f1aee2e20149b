"""Write a synthetic PDB corpus (+ .ss sidecars) for desk-scale runs."""

import argparse

from cpdss.toydata import write_toy_dataset

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("-n", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--min-len", type=int, default=8)
    ap.add_argument("--max-len", type=int, default=30)
    a = ap.parse_args()
    ids = write_toy_dataset(a.out_dir, a.n, a.seed, a.min_len, a.max_len)
    print(f"wrote {len(ids)} proteins to {a.out_dir}")
