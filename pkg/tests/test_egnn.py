import numpy as np
import pytest

from cpdss import numcore as nc
from cpdss.egnn import EgnnDenoiser, EgnnLayer, denoise
from cpdss.geometry import random_rotation
from cpdss.ssgraph import GraphBatch, SSGraph, build_knn, edge_features


def silu(x):
    return x / (1 + np.exp(-x))


def mlp_np(layers, x, final_act=False):
    for i, lin in enumerate(layers):
        x = x @ lin.weight.data + lin.bias.data
        if i < len(layers) - 1 or final_act:
            x = silu(x)
    return x


def random_graph(rng, m, k=3):
    coords = rng.standard_normal((m, 3)) * 8
    edges = build_knn(coords, k)
    types = list(rng.choice(list("HEC"), size=m))
    return SSGraph(types, coords, edges, edge_features(edges, coords))


def test_two_node_layer_matches_hand_computation(f64):
    rng = np.random.default_rng(5)
    layer = EgnnLayer(2, 3, rng, coord_init_scale=1.0)
    h = rng.standard_normal((2, 2))
    x = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, -1.0]])
    src, dst = np.array([0, 1]), np.array([1, 0])
    w = np.array([1.0, 1.0])
    h_new, x_new = layer(nc.Tensor(h), nc.Tensor(x), src, dst, w)

    exp_h, exp_x = [], []
    for i, j in ((0, 1), (1, 0)):
        d2 = float(((x[i] - x[j]) ** 2).sum())
        m_ij = mlp_np(layer.phi_e.layers, np.concatenate([h[i], h[j], [d2, 1.0]]), final_act=True)
        coef = mlp_np(layer.phi_x.layers, m_ij)
        exp_x.append(x[i] + (x[i] - x[j]) * coef[0])
        exp_h.append(mlp_np(layer.phi_h.layers, np.concatenate([h[i], m_ij])))
    assert np.allclose(h_new.data, exp_h, atol=1e-12)
    assert np.allclose(x_new.data, exp_x, atol=1e-12)


def test_isolated_node(f64):
    rng = np.random.default_rng(0)
    layer = EgnnLayer(4, 4, rng)
    h = rng.standard_normal((1, 4))
    x = rng.standard_normal((1, 3))
    h_new, x_new = layer(nc.Tensor(h), nc.Tensor(x), np.zeros(0, int), np.zeros(0, int), np.zeros(0))
    assert np.array_equal(x_new.data, x)
    assert np.allclose(h_new.data, mlp_np(layer.phi_h.layers, np.concatenate([h[0], np.zeros(4)])))


def test_zero_coordinate_head_leaves_positions(f64):
    rng = np.random.default_rng(1)
    layer = EgnnLayer(4, 4, rng)
    layer.phi_x.layers[-1].weight.data[:] = 0
    layer.phi_x.layers[-1].bias.data[:] = 0
    g = random_graph(rng, 6)
    x = nc.Tensor(g.coords)
    _, x_new = layer(nc.Tensor(rng.standard_normal((6, 4))), x, g.edges[:, 0], g.edges[:, 1], g.weights)
    assert np.array_equal(x_new.data, g.coords)


def test_denoiser_degenerate_and_deterministic():
    rng = np.random.default_rng(2)
    model = EgnnDenoiser(d=8, d_h=8, n_layers=2, time_dim=8, seed=0)
    g = random_graph(rng, 1)
    H = nc.Tensor(rng.standard_normal((1, 8)))
    out = denoise(model, H, 5, g)
    assert out.shape == (1, 8)
    g = random_graph(rng, 5)
    H = nc.Tensor(rng.standard_normal((5, 8)))
    assert np.array_equal(denoise(model, H, 5, g).data, denoise(model, H, 5, g).data)


def test_denoiser_rejects_wrong_latent_dim():
    model = EgnnDenoiser(d=8, d_h=8, n_layers=1, time_dim=8)
    g = random_graph(np.random.default_rng(0), 3)
    with pytest.raises(nc.ShapeError):
        denoise(model, nc.Tensor(np.zeros((3, 6))), 1, g)


def test_batching_matches_single_graphs(f64):
    rng = np.random.default_rng(3)
    model = EgnnDenoiser(d=6, d_h=8, n_layers=2, time_dim=8, seed=1)
    gs = [random_graph(rng, m) for m in (4, 1, 7)]
    Hs = [rng.standard_normal((g.m, 6)) for g in gs]
    ts = [3, 50, 199]
    batch = GraphBatch.from_graphs(gs)
    out = model(nc.Tensor(np.concatenate(Hs)), np.array(ts), batch).data
    for part, g, H, t in zip(batch.split(out), gs, Hs, ts):
        assert np.allclose(part, denoise(model, nc.Tensor(H), t, g).data, atol=1e-12)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-4), (np.float64, 1e-8)])
def test_rigid_motion_invariance_small(dtype, tol):
    rng = np.random.default_rng(4)
    with nc.precision(dtype):
        model = EgnnDenoiser(d=8, d_h=16, n_layers=3, time_dim=8, seed=2)
        g = random_graph(rng, 9)
        H = nc.Tensor(rng.standard_normal((9, 8)))
        R = random_rotation(rng)
        shift = rng.uniform(-20, 20, 3)
        moved = SSGraph(g.types, g.coords @ R.T + shift, g.edges, g.weights)
        a, xa = denoise(model, H, 17, g, return_coords=True)
        b, xb = denoise(model, H, 17, moved, return_coords=True)
    scale = np.abs(a.data).max()
    assert np.abs(a.data - b.data).max() <= tol * scale
    assert np.abs(xa @ R.T + shift - xb).max() <= tol * max(np.abs(xb).max(), 1.0)
