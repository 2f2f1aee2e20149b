"""Sequence-level diversity / consistency metrics and superposition RMSD."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

GAP = "-"


@dataclass
class Alignment:
    aligned1: str
    aligned2: str
    score: int
    matches: int

    @property
    def alignment_length(self) -> int:
        return len(self.aligned1)


def global_align(s1: str, s2: str, match: int = 1, mismatch: int = -1, gap: int = -1) -> Alignment:
    """Needleman-Wunsch with linear gaps; traceback prefers diagonal, then up, then left."""
    if not s1 or not s2:
        raise ValueError("global_align needs two nonempty strings")
    n, m = len(s1), len(s2)
    S = np.zeros((n + 1, m + 1), dtype=np.int64)
    S[:, 0] = gap * np.arange(n + 1)
    S[0, :] = gap * np.arange(m + 1)
    b = np.frombuffer(s2.encode("utf-32-le"), dtype=np.uint32)
    cols = np.arange(m + 1)
    for i in range(1, n + 1):
        a = ord(s1[i - 1])
        prev = S[i - 1]
        best = np.empty(m + 1, dtype=np.int64)
        best[0] = S[i, 0]
        best[1:] = np.maximum(prev[:-1] + np.where(b == a, match, mismatch), prev[1:] + gap)
        # left moves: row[j] = max_k (best[k] + (j - k) * gap), a running max
        S[i] = np.maximum.accumulate(best - cols * gap) + cols * gap
    out1, out2 = [], []
    i, j = n, m
    matches = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            same = s1[i - 1] == s2[j - 1]
            if S[i, j] == S[i - 1, j - 1] + (match if same else mismatch):
                out1.append(s1[i - 1])
                out2.append(s2[j - 1])
                matches += same
                i -= 1
                j -= 1
                continue
        if i > 0 and S[i, j] == S[i - 1, j] + gap:
            out1.append(s1[i - 1])
            out2.append(GAP)
            i -= 1
        else:
            out1.append(GAP)
            out2.append(s2[j - 1])
            j -= 1
    return Alignment("".join(reversed(out1)), "".join(reversed(out2)), int(S[n, m]), matches)


def identity(s1: str, s2: str, **scores) -> float:
    """100 * matches / alignment length under the optimal global alignment."""
    aln = global_align(s1, s2, **scores)
    return 100.0 * aln.matches / aln.alignment_length


def ss_identity(cond_ss: str, gen_ss: str, drop_loops: bool = False, **scores) -> tuple[float, bool]:
    """SS-level identity; returns (percent, empty_flag).

    With ``drop_loops`` coil labels are removed from both strings first; if
    either becomes empty the result is (0.0, True).
    """
    if drop_loops:
        cond_ss = cond_ss.replace("C", "")
        gen_ss = gen_ss.replace("C", "")
    if not cond_ss or not gen_ss:
        return 0.0, True
    return identity(cond_ss, gen_ss, **scores), False


@dataclass(frozen=True)
class SSComposition:
    n_H: int
    n_E: int
    n_C: int

    @classmethod
    def of(cls, ss: str) -> "SSComposition":
        return cls(ss.count("H"), ss.count("E"), ss.count("C"))

    def percentages(self, drop_loops: bool = False) -> tuple[float, ...]:
        counts = (self.n_H, self.n_E) if drop_loops else (self.n_H, self.n_E, self.n_C)
        total = sum(counts)
        if total == 0:
            return tuple(0.0 for _ in counts)
        return tuple(100.0 * c / total for c in counts)


def composition_mse(cond: SSComposition | str, gen: SSComposition | str, drop_loops: bool = False) -> float:
    """Mean squared difference of class percentages (3 classes, or H/E renormalized)."""
    if isinstance(cond, str):
        cond = SSComposition.of(cond)
    if isinstance(gen, str):
        gen = SSComposition.of(gen)
    a = cond.percentages(drop_loops)
    b = gen.percentages(drop_loops)
    return sum((x - y) ** 2 for x, y in zip(a, b)) / len(a)


def diversity_report(samples: list[str], **scores) -> float:
    """Mean pairwise identity over all unordered pairs (lower = more diverse)."""
    if len(samples) < 2:
        raise ValueError("diversity needs at least 2 samples")
    vals = [identity(a, b, **scores) for a, b in itertools.combinations(samples, 2)]
    return math.fsum(vals) / len(vals)


def kabsch_rmsd(A: np.ndarray, B: np.ndarray) -> float:
    """RMSD after optimal rigid superposition of B onto A (reflections excluded)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3:
        raise ValueError(f"kabsch_rmsd needs equal n x 3 arrays, got {A.shape} and {B.shape}")
    if len(A) < 3:
        raise ValueError("kabsch_rmsd needs at least 3 points")
    a = A - A.mean(axis=0)
    b = B - B.mean(axis=0)
    U, S, Vt = np.linalg.svd(b.T @ a)
    sign = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, sign])
    R = U @ D @ Vt
    diff = b @ R - a
    return float(np.sqrt((diff * diff).sum() / len(A)))


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(math.fsum(v) / v.size), float(v.std())
