"""E(3)-equivariant graph network used as the latent denoiser."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .ssgraph import GraphBatch, SSGraph


class EgnnLayer(nc.Module):
    """One message-passing layer.

    m_ij = phi_e(h_i, h_j, |x_i - x_j|^2, e_ij)
    x_i' = x_i + mean_j (x_i - x_j) * phi_x(m_ij)
    h_i' = phi_h(h_i, sum_j m_ij)
    """

    def __init__(self, d_h: int, d_m: int, rng: np.random.Generator, coord_init_scale: float = 1e-2):
        self.d_h, self.d_m = d_h, d_m
        self.phi_e = nc.MLP([2 * d_h + 2, d_m, d_m], rng, final_act=True)
        self.phi_x = nc.MLP([d_m, d_m, 1], rng)
        self.phi_x.layers[-1].weight.data *= coord_init_scale
        self.phi_h = nc.MLP([d_h + d_m, d_m, d_h], rng)

    def __call__(self, h: nc.Tensor, x: nc.Tensor, src: np.ndarray, dst: np.ndarray,
                 edge_attr: np.ndarray) -> tuple[nc.Tensor, nc.Tensor]:
        n = h.shape[0]
        if len(src) == 0:
            agg = nc.Tensor(np.zeros((n, self.d_m), dtype=h.data.dtype))
            return self.phi_h(nc.concat([h, agg], axis=1)), x
        diff = nc.take_rows(x, src) - nc.take_rows(x, dst)  # E x 3
        d2 = nc.tsum(diff * diff, axis=1, keepdims=True)
        e = nc.Tensor(np.asarray(edge_attr).reshape(-1, 1), dtype=h.data.dtype)
        m = self.phi_e(nc.concat([nc.take_rows(h, src), nc.take_rows(h, dst), d2, e], axis=1))
        degree = np.bincount(src, minlength=n).astype(h.data.dtype)
        inv_deg = np.where(degree > 0, 1.0 / np.maximum(degree, 1), 0.0).astype(h.data.dtype)
        shift = nc.segment_sum(diff * self.phi_x(m), src, n)
        x_new = x + shift * nc.Tensor(inv_deg[:, None], dtype=h.data.dtype)
        agg = nc.segment_sum(m, src, n)
        h_new = self.phi_h(nc.concat([h, agg], axis=1))
        return h_new, x_new


class EgnnDenoiser(nc.Module):
    """Predicts clean latents H0 from noisy latents, step t and the SS graph.

    Node input is concat(H^t row, one-hot SS type, sinusoidal embedding of t);
    coordinates are moved by the layers but only latents are returned.
    """

    def __init__(self, d: int = 64, d_h: int = 64, n_layers: int = 4, time_dim: int = 64,
                 coord_scale: float = 10.0, seed: int = 0, d_m: int | None = None):
        rng = np.random.default_rng(seed)
        self.d, self.d_h, self.time_dim = d, d_h, time_dim
        self.coord_scale = coord_scale
        self.inp = nc.Linear(d + 3 + time_dim, d_h, rng)
        self.layers = [EgnnLayer(d_h, d_m or d_h, rng) for _ in range(n_layers)]
        self.out = nc.Linear(d_h, d, rng)

    def __call__(self, Ht: nc.Tensor, t, batch: GraphBatch, return_coords: bool = False):
        if Ht.shape != (batch.n_nodes, self.d):
            raise nc.ShapeError(f"denoiser expects {(batch.n_nodes, self.d)} latents, got {Ht.shape}")
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if t.size == 1:
            t_node = np.full(batch.n_nodes, t[0])
        elif t.size == batch.n_graphs:
            t_node = t[batch.node_graph]
        else:
            t_node = t
        dtype = Ht.data.dtype
        temb = nc.sinusoidal_embedding(t_node, self.time_dim).astype(dtype)
        feats = nc.concat([Ht, nc.Tensor(batch.onehot, dtype=dtype), nc.Tensor(temb, dtype=dtype)], axis=1)
        h = self.inp(feats)
        x = nc.Tensor(batch.coords / self.coord_scale, dtype=dtype)
        for layer in self.layers:
            h, x = layer(h, x, batch.src, batch.dst, batch.weights)
        out = self.out(h)
        if return_coords:
            return out, x.data * self.coord_scale
        return out


def denoise(model: EgnnDenoiser, Ht: nc.Tensor, t, graph: SSGraph | GraphBatch, return_coords: bool = False):
    batch = graph if isinstance(graph, GraphBatch) else GraphBatch.from_graphs([graph])
    return model(Ht, t, batch, return_coords=return_coords)
