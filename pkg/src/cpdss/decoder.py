"""Autoregressive transformer decoding segment latents into residue sequences."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .protio import AA_ALPHABET

log = logging.getLogger(__name__)

VOCAB = list(AA_ALPHABET) + ["X", "<bos>", "<eos>", "<pad>"]
X_ID = 20
BOS = 21
EOS = 22
PAD = 23
V = len(VOCAB)


def tokenize(seq: str) -> list[int]:
    return [AA_ALPHABET.find(c) if c in AA_ALPHABET else X_ID for c in seq.upper()]


def detokenize(ids) -> str:
    return "".join(VOCAB[i] for i in ids if i <= X_ID)


def rope_apply(x, positions, base: float = 10000.0):
    return nc.rope_apply(nc.as_tensor(x), positions, base)


@dataclass
class GenerationConfig:
    max_len: int = 128
    temperature: float = 1.0
    top_k: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class DecoderBlock(nc.Module):
    def __init__(self, d: int, n_heads: int, ffn_dim: int, rng: np.random.Generator):
        self.ln1 = nc.LayerNorm(d)
        self.self_attn = nc.MultiHeadAttention(d, n_heads, rng, rope=True)
        self.ln2 = nc.LayerNorm(d)
        self.cross_attn = nc.MultiHeadAttention(d, n_heads, rng)
        self.ln3 = nc.LayerNorm(d)
        self.ffn = nc.MLP([d, ffn_dim, d], rng, act=nc.gelu)

    def __call__(self, x, memory, self_mask, cross_mask):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, self_mask)
        x = x + self.cross_attn(self.ln2(x), memory, cross_mask)
        return x + self.ffn(self.ln3(x))


class DecoderModel(nc.Module):
    """Pre-norm decoder: causal RoPE self-attention, cross-attention over latents, FFN.

    With ``memory_positions`` the latent rows get a fixed sinusoidal embedding
    of their segment index before cross-attention, so the decoder can tell
    segment order apart.
    """

    def __init__(self, d: int = 64, n_blocks: int = 2, n_heads: int = 4, ffn_dim: int | None = None,
                 max_len: int = 256, memory_positions: bool = True, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.d, self.max_len, self.memory_positions = d, max_len, memory_positions
        self.tok = nc.Embedding(V, d, rng)
        self.blocks = [DecoderBlock(d, n_heads, ffn_dim or 4 * d, rng) for _ in range(n_blocks)]
        self.ln = nc.LayerNorm(d)
        self.head = nc.Linear(d, V, rng)

    def _memory(self, H: nc.Tensor) -> nc.Tensor:
        if not self.memory_positions:
            return H
        pe = nc.sinusoidal_embedding(np.arange(H.shape[1]), self.d).astype(H.data.dtype)
        return H + nc.Tensor(pe, dtype=H.data.dtype)

    def __call__(self, tokens: np.ndarray, H: nc.Tensor, memory_valid: np.ndarray | None = None) -> nc.Tensor:
        """Logits ``(B, L, V)`` for tokens ``(B, L)`` and latents ``(B, M, d)``."""
        tokens = np.asarray(tokens, dtype=np.int64)
        squeeze = tokens.ndim == 1
        if squeeze:
            tokens = tokens[None]
            H = nc.reshape(H, (1,) + H.shape)
        B, L = tokens.shape
        if H.shape[-1] != self.d:
            raise nc.ShapeError(f"latent dim {H.shape[-1]} != decoder dim {self.d}")
        dtype = nc.get_dtype()
        self_mask = nc.causal_mask(L).astype(dtype)
        cross_mask = None
        if memory_valid is not None:
            cross_mask = np.where(memory_valid, 0.0, -np.inf).astype(dtype)[:, None, None, :]
        x = self.tok(tokens)
        memory = self._memory(H)
        for block in self.blocks:
            x = block(x, memory, self_mask, cross_mask)
        logits = self.head(self.ln(x))
        return logits[0] if squeeze else logits


def make_batch(seqs: list[str], max_len: int):
    """(inputs, targets) id arrays: BOS + seq and seq + EOS, PAD-filled."""
    toks = []
    for s in seqs:
        ids = tokenize(s)
        if len(ids) + 1 > max_len:
            log.warning("sequence of length %d truncated to %d", len(ids), max_len - 1)
            ids = ids[:max_len - 1]
        toks.append(ids)
    L = max(len(t) for t in toks) + 1
    inputs = np.full((len(toks), L), PAD, dtype=np.int64)
    targets = np.full((len(toks), L), PAD, dtype=np.int64)
    for i, ids in enumerate(toks):
        inputs[i, 0] = BOS
        inputs[i, 1:len(ids) + 1] = ids
        targets[i, :len(ids)] = ids
        targets[i, len(ids)] = EOS
    return inputs, targets


def pad_latents(latents: list[nc.Tensor]) -> tuple[nc.Tensor, np.ndarray]:
    """Stack ``m_i x d`` latents into ``(B, M, d)`` plus a validity mask."""
    B = len(latents)
    M = max(h.shape[0] for h in latents)
    d = latents[0].shape[1]
    dtype = latents[0].data.dtype
    rows = nc.concat(list(latents) + [nc.Tensor(np.zeros((1, d)), dtype=dtype)], axis=0)
    zero = rows.shape[0] - 1
    index = np.full((B, M), zero, dtype=np.int64)
    valid = np.zeros((B, M), dtype=bool)
    off = 0
    for b, h in enumerate(latents):
        m = h.shape[0]
        index[b, :m] = np.arange(off, off + m)
        valid[b, :m] = True
        off += m
    out = nc.reshape(nc.take_rows(rows, index.reshape(-1)), (B, M, d))
    return out, valid


def sequence_loss(model: DecoderModel, seqs: list[str], latents: list[nc.Tensor]):
    """Teacher-forced cross-entropy (pad excluded); also returns (correct, total) token counts."""
    inputs, targets = make_batch(seqs, model.max_len)
    H, valid = pad_latents(latents)
    logits = model(inputs, H, valid)
    loss = nc.cross_entropy(logits, targets, pad_id=PAD)
    keep = targets != PAD
    pred = logits.data.argmax(-1)
    correct = int(((pred == targets) & keep).sum())
    return loss, correct, int(keep.sum())


def train_step(model: DecoderModel, opt: nc.AdamW, seqs: list[str], latents: list[nc.Tensor]) -> float:
    opt.zero_grad()
    loss, _, _ = sequence_loss(model, seqs, latents)
    loss.backward()
    for p in opt.params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    opt.step()
    return float(loss.data)


def _sample_next(logits: np.ndarray, cfg: GenerationConfig, rng: np.random.Generator) -> int:
    logits = logits.astype(np.float64).copy()
    logits[[BOS, PAD]] = -np.inf
    if cfg.temperature == 0:
        return int(np.argmax(logits))
    logits /= cfg.temperature
    if cfg.top_k and cfg.top_k < len(logits):
        cut = np.sort(logits)[-cfg.top_k]
        logits[logits < cut] = -np.inf
    p = np.exp(logits - logits.max())
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def generate_batch(model: DecoderModel, latents: list[np.ndarray], cfg: GenerationConfig,
                   rngs: list[np.random.Generator] | None = None) -> list[tuple[str, bool]]:
    """Decode each latent matrix to (sequence, truncated). One RNG per latent."""
    B = len(latents)
    if rngs is None:
        rngs = [np.random.default_rng([cfg.seed, i]) for i in range(B)]
    max_len = min(cfg.max_len, model.max_len - 1)
    dtype = nc.get_dtype()
    H, valid = pad_latents([nc.Tensor(h, dtype=dtype) for h in latents])
    seqs: list[list[int]] = [[] for _ in range(B)]
    done = [False] * B
    tokens = np.full((B, 1), BOS, dtype=np.int64)
    with nc.no_grad():
        for _ in range(max_len):
            logits = model(tokens, H, valid).data[:, -1]
            nxt = np.full((B, 1), PAD, dtype=np.int64)
            for b in range(B):
                if done[b]:
                    continue
                tok = _sample_next(logits[b], cfg, rngs[b])
                if tok == EOS:
                    done[b] = True
                else:
                    seqs[b].append(tok)
                    nxt[b, 0] = tok
            if all(done):
                break
            tokens = np.concatenate([tokens, nxt], axis=1)
    return [(detokenize(s), not d) for s, d in zip(seqs, done)]


def generate(model: DecoderModel, H: np.ndarray, cfg: GenerationConfig,
             rng: np.random.Generator | None = None) -> tuple[str, bool]:
    return generate_batch(model, [np.asarray(H)], cfg, None if rng is None else [rng])[0]
