import numpy as np
import pytest

from irdrop import autodiff as ad
from irdrop.autodiff import Tensor
from irdrop.model import IrDropModel, ModelConfig
from irdrop.pointcloud import cap_pointcloud, encode_pointcloud

from conftest import small_grid


TINY = ModelConfig(base_channels=4, lnt_embed_dim=8, lnt_layers=1,
                   lnt_heads=2, pool_grid=4, out_side=32)


def tiny_inputs(seed=0, cfg=TINY):
    rng = np.random.default_rng(seed)
    stack = rng.standard_normal((cfg.in_channels, cfg.out_side,
                                 cfg.out_side)).astype(np.float32)
    pc = cap_pointcloud(encode_pointcloud(small_grid(seed=seed)), 64, seed=0)
    return stack, pc


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(encoder_stages=3)
    with pytest.raises(ValueError):
        ModelConfig(lnt_embed_dim=10, lnt_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(out_side=100)
    assert ModelConfig().stage_channels == (16, 32, 64, 128)
    assert ModelConfig().bottleneck_side == 32


def test_forward_shape_and_nonneg():
    model = IrDropModel(TINY, seed=0)
    stack, pc = tiny_inputs()
    out = model.forward(stack, pc)
    assert out.shape == (1, 1, 32, 32)
    assert out.data.min() >= 0.0


def test_reconstruct_shape():
    model = IrDropModel(TINY, seed=0)
    stack, pc = tiny_inputs()
    out = model.reconstruct(stack, pc)
    assert out.shape == (1, TINY.in_channels, 32, 32)


def test_skip_side_progression():
    model = IrDropModel(TINY, seed=0)
    stack, pc = tiny_inputs()
    skips, tokens, (n, c, s) = model.circuit_encode(model._as_batch(stack))
    assert [sk.shape[2] for sk in skips] == [32, 16, 8, 4]
    assert [sk.shape[1] for sk in skips] == list(TINY.stage_channels)
    assert (n, c, s) == (1, TINY.stage_channels[-1], 2)
    assert tokens.shape == (s * s, c)


def test_lnt_token_shape_and_presence_flag():
    model = IrDropModel(TINY, seed=0)
    _, pc = tiny_inputs()
    tokens = model.lnt_encode(pc)
    assert tokens.shape == (TINY.pool_grid ** 2, TINY.lnt_embed_dim + 1)
    flags = tokens.data[:, -1]
    assert set(np.unique(flags)) <= {0.0, 1.0}
    assert flags.sum() > 0
    # empty bins carry all-zero token rows
    empty = flags == 0.0
    if empty.any():
        assert np.allclose(tokens.data[empty, :-1], 0.0)


def test_lnt_permutation_invariance():
    """Pooled tokens must not depend on record order within a bin."""
    model = IrDropModel(TINY, seed=1)
    _, pc = tiny_inputs(seed=2)
    a = model.lnt_encode(pc).data
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(pc.records))
    from irdrop.pointcloud import PointCloud
    shuffled = PointCloud(records=pc.records[perm], meta=pc.meta,
                          source_count=pc.source_count,
                          net_id_of=pc.net_id_of[perm], kinds=pc.kinds[perm])
    b = model.lnt_encode(shuffled).data
    assert np.abs(a - b).max() <= 1e-6


def test_fuse_residual_identity_with_zero_values():
    model = IrDropModel(TINY, seed=0)
    model.params["fuse.wv"].data[:] = 0.0
    rng = np.random.default_rng(3)
    ct = Tensor(rng.standard_normal((4, TINY.stage_channels[-1]))
                .astype(np.float32))
    nt = Tensor(rng.standard_normal((TINY.pool_grid ** 2,
                                     TINY.lnt_embed_dim + 1))
                .astype(np.float32))
    out = model.fuse(ct, nt)
    assert np.allclose(out.data, ct.data, atol=1e-7)


def test_attention_gate_saturation():
    model = IrDropModel(TINY, seed=0)
    rng = np.random.default_rng(4)
    skip = Tensor(rng.standard_normal((1, 4, 8, 8)).astype(np.float32))
    gating = Tensor(rng.standard_normal((1, 8, 4, 4)).astype(np.float32))
    model.params["gate0.psi.b"].data[:] = 50.0  # gate wide open
    opened = model.attention_gate(0, skip, gating)
    assert np.allclose(opened.data, skip.data, atol=1e-6)
    model.params["gate0.psi.b"].data[:] = -50.0
    model.params["gate0.psi.w"].data[:] = 0.0  # gate fully closed
    closed = model.attention_gate(0, skip, gating)
    assert np.allclose(closed.data, 0.0, atol=1e-12)


def test_disable_lnt_uses_zero_tokens():
    cfg_off = ModelConfig(base_channels=4, lnt_embed_dim=8, lnt_layers=1,
                          lnt_heads=2, pool_grid=4, out_side=32,
                          disable_lnt=True)
    stack, pc = tiny_inputs()
    m_off = IrDropModel(cfg_off, seed=5)
    with_pc = m_off.forward(stack, pc).data
    without_pc = m_off.forward(stack, None).data
    assert np.array_equal(with_pc, without_pc)


def test_encoder_decoder_only_skips_fusion_and_gates():
    cfg_ec = ModelConfig(base_channels=4, lnt_embed_dim=8, lnt_layers=1,
                         lnt_heads=2, pool_grid=4, out_side=32,
                         encoder_decoder_only=True)
    stack, pc = tiny_inputs()
    model = IrDropModel(cfg_ec, seed=6)
    out = model.forward(stack, pc)
    assert out.shape == (1, 1, 32, 32)
    # perturbing fusion weights must not change the output
    model.params["fuse.wv"].data[:] = 99.0
    model.params["gate0.psi.b"].data[:] = 99.0
    out2 = model.forward(stack, pc)
    assert np.array_equal(out.data, out2.data)


def test_batch_greater_than_one_rejected():
    model = IrDropModel(TINY, seed=0)
    bad = np.zeros((2, TINY.in_channels, 32, 32), dtype=np.float32)
    with pytest.raises(ad.ShapeMismatch):
        model.forward(bad, None)
    with pytest.raises(ad.ShapeMismatch):
        model.forward(np.zeros((TINY.in_channels, 16, 16), dtype=np.float32),
                      None)


def test_seed_reproducibility_and_param_count():
    a = IrDropModel(TINY, seed=7)
    b = IrDropModel(TINY, seed=7)
    c = IrDropModel(TINY, seed=8)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data)
               for k in a.params)
    assert a.parameter_count() == sum(t.data.size for t in a.params.values())


def test_load_state_checks():
    a = IrDropModel(TINY, seed=9)
    b = IrDropModel(TINY, seed=10)
    a.load_state(b.params)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    partial = dict(b.params)
    partial.pop("head.ir.w")
    with pytest.raises(ValueError):
        a.load_state(partial)


def test_single_step_descends():
    """One full-model gradient step on a fixed batch lowers the loss."""
    model = IrDropModel(TINY, seed=11, dtype=np.float64)
    rng = np.random.default_rng(12)
    stack = rng.standard_normal((TINY.in_channels, 32, 32))
    target = np.abs(rng.standard_normal((1, 1, 32, 32)))
    _, pc = tiny_inputs(seed=11)

    def loss_value():
        return float(ad.mse_loss(model.forward(stack, pc), target).data)

    before = loss_value()
    loss = ad.mse_loss(model.forward(stack, pc), target)
    model.zero_grads()
    loss.backward()
    lr = 1e-3
    for t in model.params.values():
        if t.grad is not None:
            t.data = t.data - lr * t.grad
    assert loss_value() < before
