"""Sequence encoder: per-residue embeddings pooled into per-segment latents."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from . import numcore as nc
from .protio import AA_ALPHABET
from .ssgraph import Segment, segment_ids

# embedder vocabulary: 20 AAs, X, PAD
EMB_VOCAB = AA_ALPHABET + "X"
EMB_PAD = len(EMB_VOCAB)


def encode_residues(aa_seq: str) -> np.ndarray:
    """Residue letters -> embedder token ids (unknown letters map to X)."""
    x = EMB_VOCAB.index("X")
    return np.array([EMB_VOCAB.find(c) if c in EMB_VOCAB else x for c in aa_seq.upper()], dtype=np.int64)


class Embedder(Protocol):
    d: int

    def embed(self, aa_seq: str) -> nc.Tensor: ...


class EncoderBlock(nc.Module):
    """Pre-norm bidirectional self-attention block with rotary positions."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, ffn_mult: int = 4):
        self.ln1 = nc.LayerNorm(d)
        self.attn = nc.MultiHeadAttention(d, n_heads, rng, rope=True)
        self.ln2 = nc.LayerNorm(d)
        self.ffn = nc.MLP([d, ffn_mult * d, d], rng, act=nc.gelu)

    def __call__(self, x: nc.Tensor, mask: np.ndarray | None) -> nc.Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.ln2(x))


class ToyEmbedder(nc.Module):
    """Small trainable stand-in for a pretrained protein language model."""

    def __init__(self, d: int = 64, n_blocks: int = 2, n_heads: int = 4, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.d = d
        self.tok = nc.Embedding(len(EMB_VOCAB) + 1, d, rng)
        self.blocks = [EncoderBlock(d, n_heads, rng) for _ in range(n_blocks)]
        self.ln = nc.LayerNorm(d)

    def embed_batch(self, seqs: list[str]) -> list[nc.Tensor]:
        """Embed a padded batch; returns one ``n_i x d`` tensor per sequence.

        Padding keys are masked, so each output depends only on its own sequence.
        """
        L = max(len(s) for s in seqs)
        ids = np.full((len(seqs), L), EMB_PAD, dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = encode_residues(s)
        mask = np.where(ids == EMB_PAD, -np.inf, 0.0).astype(nc.get_dtype())[:, None, None, :]
        x = self.tok(ids)
        for block in self.blocks:
            x = block(x, mask)
        x = self.ln(x)
        return [x[i, :len(s)] for i, s in enumerate(seqs)]

    def embed(self, aa_seq: str) -> nc.Tensor:
        return self.embed_batch([aa_seq])[0]


class PrecomputedEmbedder:
    """Serves externally computed per-residue embeddings (e.g. from a large PLM)."""

    def __init__(self, table: dict[str, np.ndarray], sequences: dict[str, str]):
        self.table = table
        self.by_seq = {seq: pid for pid, seq in sequences.items()}
        dims = {arr.shape[1] for arr in table.values()}
        if len(dims) > 1:
            raise ValueError(f"inconsistent embedding dims {sorted(dims)}")
        self.d = dims.pop() if dims else 0

    def embed(self, aa_seq: str) -> nc.Tensor:
        return nc.Tensor(self.table[self.by_seq[aa_seq]])

    def embed_batch(self, seqs: list[str]) -> list[nc.Tensor]:
        return [self.embed(s) for s in seqs]


def import_embeddings(path, lengths: dict[str, int], d: int | None = None) -> dict[str, np.ndarray]:
    """Load per-protein embedding arrays from a named-array container and validate shapes."""
    from .checkpoint import load_container

    _, arrays = load_container(path)
    out = {}
    for pid, n in lengths.items():
        if pid not in arrays:
            raise KeyError(f"no embedding for {pid!r}")
        z = arrays[pid]
        if z.ndim != 2 or z.shape[0] != n:
            raise ValueError(f"{pid}: embedding has {z.shape[0] if z.ndim else 0} rows, protein has {n} residues")
        if d is not None and z.shape[1] != d:
            raise ValueError(f"{pid}: embedding dim {z.shape[1]} != configured d {d}")
        out[pid] = z
    return out


def export_embeddings(path, table: dict[str, np.ndarray]) -> None:
    from .checkpoint import save_container

    save_container(path, {"kind": "embeddings"}, table)


class AttnPool(nc.Module):
    """Segment pooling: softmax(conv1d_k1(Z_k)) weighted average of each segment's rows."""

    def __init__(self, d: int, rng: np.random.Generator | None = None):
        self.weight = nc.param(np.zeros((d, 1)))
        self.bias = nc.param(np.zeros(1))
        if rng is not None:
            bound = 1.0 / np.sqrt(d)
            self.weight.data = rng.uniform(-bound, bound, size=(d, 1)).astype(nc.get_dtype())

    def __call__(self, Z: nc.Tensor, segments: list[Segment]) -> nc.Tensor:
        return attention_pool(Z, segments, self.weight, self.bias)


def attention_pool(Z: nc.Tensor, segments: list[Segment], weight: nc.Tensor, bias: nc.Tensor) -> nc.Tensor:
    """``h_k = sum_i softmax_i(conv(Z_k))_i * z_i`` for each segment k -> ``m x d``."""
    seg = segment_ids(segments)
    if len(seg) != Z.shape[0]:
        raise ValueError(f"segments cover {len(seg)} residues but Z has {Z.shape[0]} rows")
    return attention_pool_ids(Z, seg, len(segments), weight, bias)


def attention_pool_ids(Z: nc.Tensor, seg: np.ndarray, m: int, weight: nc.Tensor, bias: nc.Tensor) -> nc.Tensor:
    """Same pooling with explicit per-row segment ids (lets several proteins share one call)."""
    scores = nc.conv1d_k1(Z, weight, bias)  # n x 1
    # per-segment max shift; constant, so it does not enter the gradient
    seg_max = np.full(m, -np.inf)
    np.maximum.at(seg_max, seg, scores.data[:, 0])
    shifted = scores - nc.Tensor(seg_max[seg][:, None], dtype=scores.dtype)
    e = nc.exp(shifted)
    denom = nc.segment_sum(e, seg, m)
    w = e / nc.take_rows(denom, seg)
    return nc.segment_sum(w * Z, seg, m)
