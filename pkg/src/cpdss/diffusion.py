"""DDPM over segment latents with x0-prediction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from .ssgraph import GraphBatch

ALPHA_BAR_MIN = 1e-4
ALPHA_BAR_MAX = 1.0 - 1e-4


@dataclass
class NoiseSchedule:
    kind: str
    T: int
    alpha_bar: np.ndarray  # T + 1 entries, index t
    raw_alpha_bar: np.ndarray  # before clamping

    @property
    def beta(self) -> np.ndarray:
        """beta[t] = 1 - abar_t / abar_{t-1}; beta[0] = 1 - abar_0."""
        ab = self.alpha_bar
        return np.concatenate([[1.0 - ab[0]], 1.0 - ab[1:] / ab[:-1]])

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def posterior_variance(self) -> np.ndarray:
        ab = self.alpha_bar
        out = np.zeros_like(ab)
        out[1:] = self.beta[1:] * (1.0 - ab[:-1]) / (1.0 - ab[1:])
        return out

    def posterior_coefs(self, t: int) -> tuple[float, float]:
        """Coefficients (c0, ct) with mu = c0 * H0_hat + ct * H_t."""
        ab = self.alpha_bar
        beta = 1.0 - ab[t] / ab[t - 1]
        c0 = np.sqrt(ab[t - 1]) * beta / (1.0 - ab[t])
        ct = np.sqrt(1.0 - beta) * (1.0 - ab[t - 1]) / (1.0 - ab[t])
        return float(c0), float(ct)


def make_schedule(kind: str = "sqrt", T: int = 200) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    t = np.arange(T + 1, dtype=np.float64)
    if kind == "sqrt":
        raw = 1.0 - np.sqrt(t / T + 1e-4)
    elif kind == "linear":
        betas = np.linspace(1e-4, 0.02, T)
        raw = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    elif kind == "cosine":
        s = 0.008
        f = np.cos(((t / T + s) / (1 + s)) * np.pi / 2) ** 2
        raw = f / np.cos((s / (1 + s)) * np.pi / 2) ** 2
    else:
        raise nc.ConfigError(f"unknown noise schedule {kind!r}")
    # affine squash into [min, max]: a hard clip would leave ties in the tails
    ab = ALPHA_BAR_MIN + (ALPHA_BAR_MAX - ALPHA_BAR_MIN) * np.clip(raw, 0.0, 1.0)
    if np.any(np.diff(ab) >= 0):
        raise nc.ConfigError(f"{kind} schedule with T={T} is not strictly decreasing after clamping")
    return NoiseSchedule(kind, T, ab, raw)


def q_sample(H0, t, eps, schedule: NoiseSchedule, node_graph: np.ndarray | None = None):
    """Ht = sqrt(abar_t) H0 + sqrt(1 - abar_t) eps (per-graph t via ``node_graph``)."""
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > schedule.T):
        raise ValueError(f"t out of range [0, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    if ab.ndim and node_graph is not None:
        ab = ab[node_graph]
    if ab.ndim:
        ab = ab[:, None]
    is_tensor = isinstance(H0, nc.Tensor)
    h0 = H0.data if is_tensor else np.asarray(H0)
    e = eps.data if isinstance(eps, nc.Tensor) else np.asarray(eps)
    if e.shape != h0.shape:
        raise ValueError(f"noise shape {e.shape} != latent shape {h0.shape}")
    out = np.sqrt(ab) * h0 + np.sqrt(1.0 - ab) * e
    return nc.Tensor(out, dtype=h0.dtype) if is_tensor else out


Denoiser = Callable[[nc.Tensor, np.ndarray, GraphBatch], nc.Tensor]


def training_loss(denoiser: Denoiser, H0: np.ndarray, batch: GraphBatch, schedule: NoiseSchedule,
                  rng: np.random.Generator) -> nc.Tensor:
    """MSE between denoise(q_sample(H0, t, eps), t) and H0, t ~ U{1..T} per graph."""
    dtype = nc.get_dtype()
    H0 = np.asarray(H0, dtype=dtype)
    t = rng.integers(1, schedule.T + 1, size=batch.n_graphs)
    eps = rng.standard_normal(H0.shape).astype(dtype)
    Ht = q_sample(H0, t, eps, schedule, batch.node_graph).astype(dtype)
    pred = denoiser(nc.Tensor(Ht), t, batch)
    diff = pred - nc.Tensor(H0)
    return nc.mean(diff * diff)


def p_sample(batch: GraphBatch, schedule: NoiseSchedule, denoiser: Denoiser, d: int,
             rngs: list[np.random.Generator]) -> np.ndarray:
    """Ancestral sampling from H_T ~ N(0, I) down to H_0.

    One RNG per graph in the batch, so each graph's sample is independent of
    how graphs are batched together.
    """
    dtype = nc.get_dtype()
    if len(rngs) != batch.n_graphs:
        raise ValueError("need one rng per graph")

    def noise():
        return np.concatenate([r.standard_normal((m, d)) for r, m in zip(rngs, batch.sizes)]).astype(dtype)

    H = noise()
    var = schedule.posterior_variance
    with nc.no_grad():
        for t in range(schedule.T, 0, -1):
            H0_hat = denoiser(nc.Tensor(H), np.full(batch.n_graphs, t), batch).data
            if t == 1:
                # last step lands on the clean prediction (abar before step 1 taken as 1)
                H = H0_hat.astype(dtype)
                break
            c0, ct = schedule.posterior_coefs(t)
            mu = c0 * H0_hat + ct * H
            H = (mu + np.sqrt(var[t]) * noise()).astype(dtype)
    return H


@dataclass
class LatentStats:
    """Per-channel standardization of latents."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, latents: list[np.ndarray], floor: float = 1e-6) -> "LatentStats":
        allrows = np.concatenate(latents).astype(np.float64)
        return cls(allrows.mean(axis=0), np.maximum(allrows.std(axis=0), floor))

    def normalize(self, H: np.ndarray) -> np.ndarray:
        return ((H - self.mean) / self.std).astype(H.dtype)

    def denormalize(self, H: np.ndarray) -> np.ndarray:
        return (H * self.std + self.mean).astype(H.dtype)
