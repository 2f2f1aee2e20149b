"""Synthetic proteins with class-specific residue alphabets and ideal backbones."""

from __future__ import annotations

import numpy as np

from .geometry import HELIX_PHI_PSI, STRAND_PHI_PSI, build_backbone
from .protio import Protein, find_breaks

# disjoint residue alphabets per SS class (cover all 20)
CLASS_ALPHABET = {"H": "AELKMQR", "E": "VIYFTW", "C": "GPNDSHC"}
SEGMENT_LENGTHS = {"H": (4, 9), "E": (3, 6), "C": (2, 4)}


def random_ss(rng: np.random.Generator, min_len: int, max_len: int) -> str:
    target = int(rng.integers(min_len, max_len + 1))
    while True:
        parts = []
        cls = "C"
        while sum(len(p) for p in parts) < target:
            lo, hi = SEGMENT_LENGTHS[cls]
            parts.append(cls * int(rng.integers(lo, hi + 1)))
            cls = rng.choice(["H", "E"]) if cls == "C" else "C"
        ss = "".join(parts)[:target]
        if len(ss) >= min_len:
            return ss


def toy_protein(pid: str, rng: np.random.Generator, min_len: int = 8, max_len: int = 30) -> Protein:
    ss = random_ss(rng, min_len, max_len)
    aa = "".join(rng.choice(list(CLASS_ALPHABET[c])) for c in ss)
    phi = np.empty(len(ss))
    psi = np.empty(len(ss))
    for i, c in enumerate(ss):
        if c == "H":
            phi[i], psi[i] = HELIX_PHI_PSI
        elif c == "E":
            phi[i], psi[i] = STRAND_PHI_PSI
        else:
            phi[i] = rng.uniform(-160, -60)
            psi[i] = rng.uniform(-40, 170)
    bb = build_backbone(phi, psi)
    return Protein(pid, aa, bb, ss_seq=ss, breaks=find_breaks(bb))


def toy_corpus(n: int = 20, seed: int = 0, min_len: int = 8, max_len: int = 30) -> list[Protein]:
    rng = np.random.default_rng(seed)
    return [toy_protein(f"toy{i:03d}", rng, min_len, max_len) for i in range(n)]


def write_toy_dataset(out_dir, n: int = 20, seed: int = 0, min_len: int = 8, max_len: int = 30) -> list[str]:
    """Write ``<id>.pdb`` plus ``<id>.ss`` sidecar files; returns the ids."""
    from pathlib import Path

    from .protio import write_pdb

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for p in toy_corpus(n, seed, min_len, max_len):
        (out / f"{p.id}.pdb").write_text(write_pdb(p))
        (out / f"{p.id}.ss").write_text(p.ss_seq + "\n")
        ids.append(p.id)
    return ids
