"""Multimodal IR-drop prediction network.

Dual-stream architecture: a 4-stage downsampling circuit encoder over the
rasterized channels, a netlist transformer over the attributed point
cloud, cross-attention fusion at the bottleneck, and an upsampling decoder
with attention-gated skip connections and a 1x1 prediction head. A second
1x1 head reconstructs the input channels for stage-1 pretraining.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .pointcloud import FEATURE_WIDTH, PointCloud


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 6
    base_channels: int = 16
    encoder_stages: int = 4
    lnt_embed_dim: int = 64
    lnt_layers: int = 2
    lnt_heads: int = 4
    pool_grid: int = 16
    out_side: int = 512
    disable_lnt: bool = False
    disable_attention_gates: bool = False
    encoder_decoder_only: bool = False

    def __post_init__(self):
        if self.encoder_stages != 4:
            raise ValueError("encoder uses exactly 4 downsampling stages")
        if self.lnt_embed_dim % self.lnt_heads:
            raise ValueError("lnt_embed_dim must divide by lnt_heads")
        if self.out_side % 16:
            raise ValueError("out_side must be divisible by 2**4")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * 2 ** i for i in range(4))

    @property
    def bottleneck_side(self) -> int:
        return self.out_side // 16


class IrDropModel:
    """Parameter container plus define-by-run forward passes."""

    def __init__(self, config: ModelConfig, seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self._rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self._build()

    # ------------------------------------------------------------- params

    def _param(self, name: str, shape, fan_in: int) -> Tensor:
        std = np.sqrt(2.0 / fan_in)
        data = (self._rng.standard_normal(shape) * std).astype(self.dtype)
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def _zeros(self, name: str, shape) -> Tensor:
        t = Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _ones(self, name: str, shape) -> Tensor:
        t = Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _conv(self, name: str, cin: int, cout: int, k: int):
        self._param(f"{name}.w", (cout, cin, k, k), fan_in=cin * k * k)
        self._zeros(f"{name}.b", (cout,))

    def _tconv(self, name: str, cin: int, cout: int):
        self._param(f"{name}.w", (cin, cout, 2, 2), fan_in=cin * 4)
        self._zeros(f"{name}.b", (cout,))

    def _build(self):
        cfg = self.config
        chans = cfg.stage_channels
        cin = cfg.in_channels
        for i, ch in enumerate(chans):
            self._conv(f"enc{i}.conv1", cin, ch, 3)
            self._conv(f"enc{i}.conv2", ch, ch, 3)
            cin = ch
        dprime = chans[-1]

        d = cfg.lnt_embed_dim
        self._param("lnt.embed.w", (FEATURE_WIDTH, d), fan_in=FEATURE_WIDTH)
        self._zeros("lnt.embed.b", (d,))
        hd = d // cfg.lnt_heads
        for l in range(cfg.lnt_layers):
            for h in range(cfg.lnt_heads):
                self._param(f"lnt.{l}.h{h}.wq", (d, hd), fan_in=d)
                self._param(f"lnt.{l}.h{h}.wk", (d, hd), fan_in=d)
                self._param(f"lnt.{l}.h{h}.wv", (d, hd), fan_in=d)
            self._param(f"lnt.{l}.wo", (d, d), fan_in=d)
            self._zeros(f"lnt.{l}.bo", (d,))
            self._ones(f"lnt.{l}.ln.gamma", (d,))
            self._zeros(f"lnt.{l}.ln.beta", (d,))

        dk = d + 1  # pooled tokens carry a bin-presence flag
        self._param("fuse.wq", (dprime, dprime), fan_in=dprime)
        self._param("fuse.wk", (dk, dprime), fan_in=dk)
        self._param("fuse.wv", (dk, dprime), fan_in=dk)

        for i, ch in enumerate(chans):
            gate_in = chans[i + 1] if i < 3 else dprime
            inter = max(ch // 2, 1)
            self._conv(f"gate{i}.wx", ch, inter, 1)
            self._conv(f"gate{i}.wg", gate_in, inter, 1)
            self._conv(f"gate{i}.psi", inter, 1, 1)

        up_in = dprime
        for i in reversed(range(4)):
            ch = chans[i]
            self._tconv(f"dec{i}.up", up_in, ch)
            self._conv(f"dec{i}.conv", 2 * ch, ch, 3)
            up_in = ch
        self._conv("head.ir", chans[0], 1, 1)
        # small positive bias keeps the rectified head alive at init
        self.params["head.ir.b"].data[:] = 0.01
        self._conv("head.recon", chans[0], cfg.in_channels, 1)

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    def load_state(self, params: dict[str, Tensor]):
        if set(params) != set(self.params):
            missing = set(self.params) ^ set(params)
            raise ValueError(f"checkpoint/model mismatch: {sorted(missing)[:5]}")
        for name, t in params.items():
            if t.data.shape != self.params[name].data.shape:
                raise ValueError(f"shape mismatch for {name}")
            self.params[name].data = t.data.astype(self.dtype)

    # ------------------------------------------------------------ encoder

    def circuit_encode(self, stack: Tensor):
        """(N,C,S,S) -> (skips at sides S..S/8, bottleneck tokens T x D')."""
        p = self.params
        x = stack
        skips = []
        for i in range(4):
            x = ad.relu(ad.conv2d(x, p[f"enc{i}.conv1.w"], p[f"enc{i}.conv1.b"],
                                  padding=1))
            x = ad.relu(ad.conv2d(x, p[f"enc{i}.conv2.w"], p[f"enc{i}.conv2.b"],
                                  padding=1))
            skips.append(x)
            x = ad.max_pool2d(x)
        n, c, s, _ = x.shape
        tokens = ad.reshape(x, (n * c, s * s))
        tokens = ad.transpose(tokens)  # (T, D') for batch size 1
        return skips, tokens, (n, c, s)

    # ---------------------------------------------------------------- LNT

    def _pool_matrix(self, pc: PointCloud) -> tuple[np.ndarray, np.ndarray]:
        grid = self.config.pool_grid
        n = len(pc.records)
        bx = np.minimum((pc.records[:, 0] * grid).astype(int), grid - 1)
        by = np.minimum((pc.records[:, 1] * grid).astype(int), grid - 1)
        bins = by * grid + bx
        m = grid * grid
        pool = np.zeros((m, n), dtype=self.dtype)
        counts = np.bincount(bins, minlength=m).astype(self.dtype)
        pool[bins, np.arange(n)] = 1.0
        nonzero = counts > 0
        pool[nonzero] /= counts[nonzero, None]
        return pool, nonzero.astype(self.dtype)

    def lnt_encode(self, pc: PointCloud) -> Tensor:
        """Point cloud -> pooled netlist tokens (pool_grid^2, D+1)."""
        if len(pc.records) == 0:
            raise ValueError("empty point cloud")
        cfg = self.config
        p = self.params
        x = Tensor(pc.records.astype(self.dtype))
        x = ad.add(ad.matmul(x, p["lnt.embed.w"]), p["lnt.embed.b"])
        for l in range(cfg.lnt_layers):
            heads = [ad.attention(x, p[f"lnt.{l}.h{h}.wq"],
                                  p[f"lnt.{l}.h{h}.wk"], p[f"lnt.{l}.h{h}.wv"])
                     for h in range(cfg.lnt_heads)]
            y = ad.add(ad.matmul(ad.concat(heads, axis=1), p[f"lnt.{l}.wo"]),
                       p[f"lnt.{l}.bo"])
            x = ad.layer_norm(ad.add(x, y), p[f"lnt.{l}.ln.gamma"],
                              p[f"lnt.{l}.ln.beta"])
        pool, presence = self._pool_matrix(pc)
        pooled = ad.matmul(Tensor(pool), x)
        flag = Tensor(presence[:, None])
        return ad.concat([pooled, flag], axis=1)

    # -------------------------------------------------------------- fusion

    def fuse(self, circuit_tokens: Tensor, netlist_tokens: Tensor) -> Tensor:
        p = self.params
        y = ad.attention(circuit_tokens, p["fuse.wq"], p["fuse.wk"],
                         p["fuse.wv"], x_kv=netlist_tokens)
        return ad.add(circuit_tokens, y)

    # ------------------------------------------------------------- decoder

    def attention_gate(self, level: int, skip: Tensor, gating: Tensor) -> Tensor:
        """Additive gate: skip * sigmoid(psi(relu(Wx x + Wg up(g))))."""
        p = self.params
        g = ad.upsample2_nearest(gating)
        gx = ad.conv2d(skip, p[f"gate{level}.wx.w"], p[f"gate{level}.wx.b"])
        gg = ad.conv2d(g, p[f"gate{level}.wg.w"], p[f"gate{level}.wg.b"])
        alpha = ad.sigmoid(ad.conv2d(ad.relu(ad.add(gx, gg)),
                                     p[f"gate{level}.psi.w"],
                                     p[f"gate{level}.psi.b"]))
        return ad.mul(skip, alpha)

    def decode(self, fused_tokens: Tensor, skips: list[Tensor],
               bottleneck_shape) -> Tensor:
        """Fused tokens + gated skips -> full-resolution feature map."""
        cfg = self.config
        p = self.params
        n, c, s = bottleneck_shape
        x = ad.reshape(ad.transpose(fused_tokens), (n, c, s, s))
        for i in reversed(range(4)):
            skip = skips[i]
            if not (cfg.disable_attention_gates or cfg.encoder_decoder_only):
                skip = self.attention_gate(i, skip, x)
            x = ad.transpose_conv2d(x, p[f"dec{i}.up.w"], p[f"dec{i}.up.b"])
            x = ad.concat([x, skip], axis=1)
            x = ad.relu(ad.conv2d(x, p[f"dec{i}.conv.w"], p[f"dec{i}.conv.b"],
                                  padding=1))
        return x

    # ------------------------------------------------------------- forward

    def _trunk(self, stack: Tensor, pc: PointCloud | None) -> Tensor:
        cfg = self.config
        skips, circuit_tokens, bshape = self.circuit_encode(stack)
        if not cfg.encoder_decoder_only:
            if cfg.disable_lnt or pc is None:
                m = cfg.pool_grid ** 2
                netlist_tokens = Tensor(
                    np.zeros((m, cfg.lnt_embed_dim + 1), dtype=self.dtype))
            else:
                netlist_tokens = self.lnt_encode(pc)
            circuit_tokens = self.fuse(circuit_tokens, netlist_tokens)
        return self.decode(circuit_tokens, skips, bshape)

    def forward(self, stack: np.ndarray | Tensor,
                pc: PointCloud | None) -> Tensor:
        """(C,S,S) stack + capped cloud -> (1,1,S,S) non-negative IR map."""
        x = self._as_batch(stack)
        feat = self._trunk(x, pc)
        p = self.params
        return ad.relu(ad.conv2d(feat, p["head.ir.w"], p["head.ir.b"]))

    def reconstruct(self, stack: np.ndarray | Tensor,
                    pc: PointCloud | None) -> Tensor:
        """Stage-1 pretraining head: reproduce all C input channels."""
        x = self._as_batch(stack)
        feat = self._trunk(x, pc)
        p = self.params
        return ad.conv2d(feat, p["head.recon.w"], p["head.recon.b"])

    def _as_batch(self, stack) -> Tensor:
        if isinstance(stack, Tensor):
            x = stack
        else:
            x = Tensor(np.asarray(stack, dtype=self.dtype))
        if x.data.ndim == 3:
            x = ad.reshape(x, (1,) + x.shape)
        if x.shape[0] != 1:
            # batching is done by gradient accumulation, one sample per pass
            raise ad.ShapeMismatch("forward", x.shape)
        s = self.config.out_side
        if x.shape[2] != s or x.shape[3] != s:
            raise ad.ShapeMismatch("forward", x.shape, (s, s))
        return x
