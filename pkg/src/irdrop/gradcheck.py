"""Finite-difference verification of every differentiable op.

All checks run in float64; relu-family inputs are pushed away from the
kink so central differences stay valid.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .model import IrDropModel, ModelConfig
from .pointcloud import FEATURE_WIDTH, PointCloud, ScaleMeta


def _away_from_zero(rng, shape, margin: float = 0.2) -> np.ndarray:
    x = rng.standard_normal(shape)
    return x + np.sign(x) * margin


def _t(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def _mini_cloud(rng, n: int = 6) -> PointCloud:
    rec = np.zeros((n, FEATURE_WIDTH))
    rec[:, :4] = rng.uniform(0, 1, size=(n, 4))
    rec[:, 4] = rng.uniform(0.1, 1, size=n)
    rec[np.arange(n), 5 + rng.integers(0, 3, size=n)] = 1.0
    rec[:, 8:] = rng.uniform(0.25, 1, size=(n, 2))
    meta = ScaleMeta(bbox=(0, 0, 1000, 1000), value_scales=(1, 1, 1),
                     max_layer=4, net_ids=(1,))
    kinds = rec[:, 5:8].argmax(axis=1)
    return PointCloud(records=rec, meta=meta, source_count=n,
                      net_id_of=np.ones(n, dtype=np.int64), kinds=kinds)


def run_gradcheck(seed: int = 0) -> dict[str, float]:
    """Per-op and end-to-end miniature-model checks; returns max rel errors."""
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}
    h = 1e-6

    a34 = rng.standard_normal((3, 4))
    results["add"] = grad_check(
        lambda t: ad.tsum(ad.add(t, Tensor(a34))), _t(rng.standard_normal((3, 4))), h)
    results["add_bias"] = grad_check(
        lambda t: ad.tsum(ad.add(Tensor(a34, requires_grad=False), t)),
        _t(rng.standard_normal(4)), h)
    results["mul"] = grad_check(
        lambda t: ad.tsum(ad.mul(t, Tensor(a34))), _t(rng.standard_normal((3, 4))), h)
    w45 = Tensor(rng.standard_normal((4, 5)))
    results["matmul"] = grad_check(
        lambda t: ad.tsum(ad.matmul(t, w45)), _t(rng.standard_normal((3, 4))), h)
    results["relu"] = grad_check(
        lambda t: ad.tsum(ad.relu(t)), _t(_away_from_zero(rng, (3, 4))), h)
    results["sigmoid"] = grad_check(
        lambda t: ad.tsum(ad.sigmoid(t)), _t(rng.standard_normal((3, 4))), h)
    mix = Tensor(rng.standard_normal((3, 4)))
    results["softmax"] = grad_check(
        lambda t: ad.tsum(ad.mul(ad.softmax(t, axis=-1), mix)),
        _t(rng.standard_normal((3, 4))), h)
    gamma, beta = _t(rng.standard_normal(4)), _t(rng.standard_normal(4))
    results["layer_norm_x"] = grad_check(
        lambda t: ad.tsum(ad.mul(ad.layer_norm(t, gamma, beta), mix)),
        _t(rng.standard_normal((3, 4))), h)
    results["layer_norm_gamma"] = grad_check(
        lambda t: ad.tsum(ad.mul(ad.layer_norm(_t(a34), t, beta), mix)),
        _t(rng.standard_normal(4)), h)
    tgt = Tensor(rng.standard_normal((3, 4)))
    results["mse_loss"] = grad_check(
        lambda t: ad.mse_loss(t, tgt), _t(rng.standard_normal((3, 4))), h)

    x_img = _t(rng.standard_normal((1, 2, 6, 6)))
    wc = Tensor(rng.standard_normal((3, 2, 3, 3)))
    bc = Tensor(rng.standard_normal(3))
    results["conv2d_x"] = grad_check(
        lambda t: ad.tsum(ad.conv2d(t, wc, bc, padding=1)), x_img, h)
    results["conv2d_w"] = grad_check(
        lambda t: ad.tsum(ad.conv2d(x_img, t, bc, stride=2, padding=1)),
        _t(rng.standard_normal((3, 2, 3, 3))), h)
    wt = Tensor(rng.standard_normal((2, 3, 2, 2)))
    bt = Tensor(rng.standard_normal(3))
    results["transpose_conv2d_x"] = grad_check(
        lambda t: ad.tsum(ad.transpose_conv2d(t, wt, bt)),
        _t(rng.standard_normal((1, 2, 4, 4))), h)
    results["transpose_conv2d_w"] = grad_check(
        lambda t: ad.tsum(ad.transpose_conv2d(x_img, t, bt)),
        _t(rng.standard_normal((2, 3, 2, 2))), h)
    results["max_pool2d"] = grad_check(
        lambda t: ad.tsum(ad.max_pool2d(t)), _t(rng.standard_normal((1, 2, 4, 4))), h)
    mix_up = Tensor(rng.standard_normal((1, 2, 8, 8)))
    results["upsample2_nearest"] = grad_check(
        lambda t: ad.tsum(ad.mul(ad.upsample2_nearest(t), mix_up)),
        _t(rng.standard_normal((1, 2, 4, 4))), h)

    wq = Tensor(rng.standard_normal((4, 4)))
    wk = Tensor(rng.standard_normal((4, 4)))
    wv = Tensor(rng.standard_normal((4, 4)))
    results["attention"] = grad_check(
        lambda t: ad.tsum(ad.attention(t, wq, wk, wv)),
        _t(rng.standard_normal((5, 4))), h)
    x_att = Tensor(rng.standard_normal((5, 4)))
    results["attention_wq"] = grad_check(
        lambda t: ad.tsum(ad.attention(x_att, t, wk, wv)),
        _t(rng.standard_normal((4, 4))), h)

    # end-to-end miniature model
    cfg = ModelConfig(base_channels=2, lnt_embed_dim=8, lnt_layers=1,
                      lnt_heads=2, pool_grid=2, out_side=32)
    model = IrDropModel(cfg, seed=seed, dtype=np.float64)
    cloud = _mini_cloud(rng)
    stack = rng.standard_normal((6, 32, 32))
    target = Tensor(rng.uniform(0, 1, size=(1, 1, 32, 32)))

    def end_to_end(t: Tensor) -> Tensor:
        model.zero_grads()
        return ad.mse_loss(model.forward(t, cloud), target)

    results["model_input"] = grad_check(end_to_end, _t(stack), h, max_coords=24)

    inp = Tensor(stack)

    def via_param(name: str):
        def f(t: Tensor) -> Tensor:
            model.zero_grads()
            model.params[name] = t
            return ad.mse_loss(model.forward(inp, cloud), target)
        return f

    for pname in ("fuse.wq", "lnt.0.h0.wq", "gate0.psi.w", "dec0.conv.w",
                  "enc0.conv1.w", "head.ir.w", "lnt.embed.w"):
        saved = model.params[pname]
        results[f"model_{pname}"] = grad_check(
            via_param(pname), _t(saved.data.copy()), h, max_coords=16)
        model.params[pname] = saved
    return results
