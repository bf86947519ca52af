"""Lossless attributed point-cloud encoding of a PDN netlist.

Each element becomes one 10-wide record:

    [x1, y1, x2, y2, value, onehot_R, onehot_I, onehot_V, layer1, layer2]

Coordinates are min-max normalized by the netlist bbox, values per element
kind by a power-of-two scale (so normalize/denormalize are exact in float),
layers by the max layer index. The stored metadata inverts the mapping
exactly; ground terminals are encoded as layer 0 with zero coordinates.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .spice import (Element, ElementKind, GROUND, NodeRef, PdnNetlist,
                    _connectivity_diagnostics)

FEATURE_WIDTH = 10
KIND_ORDER = (ElementKind.RESISTOR, ElementKind.CURRENT_SOURCE,
              ElementKind.VOLTAGE_SOURCE)

_MAGIC = b"PDNC"
_VERSION = 1


class PointCloudError(Exception):
    pass


class CappedCloudNotInvertible(PointCloudError):
    pass


class EmptyCloud(PointCloudError):
    pass


@dataclass(frozen=True)
class ScaleMeta:
    bbox: tuple[int, int, int, int]
    value_scales: tuple[float, float, float]  # per kind, power of two
    max_layer: int
    net_ids: tuple[int, ...]  # distinct net ids, index referenced nowhere yet


@dataclass(frozen=True)
class PointCloud:
    records: np.ndarray  # (N, FEATURE_WIDTH) float64
    meta: ScaleMeta
    source_count: int
    # per-record sidecar needed for exact inversion
    net_id_of: np.ndarray  # (N,) int
    kinds: np.ndarray  # (N,) int index into KIND_ORDER

    @property
    def lossless(self) -> bool:
        return len(self.records) == self.source_count

    def is_via(self, i: int) -> bool:
        r = self.records[i]
        return (self.kinds[i] == 0) and (r[8] != r[9])


def _pow2_scale(max_abs: float) -> float:
    if max_abs <= 0.0:
        return 1.0
    return float(2.0 ** math.ceil(math.log2(max_abs)))


def _norm_coord(v: int, lo: int, span: int) -> float:
    return (v - lo) / span if span else 0.0


def encode_pointcloud(nl: PdnNetlist) -> PointCloud:
    min_x, min_y, max_x, max_y = nl.bbox
    span_x, span_y = max_x - min_x, max_y - min_y
    max_layer = max((n.layer for n in nl.node_index), default=1) or 1

    max_abs = {k: 0.0 for k in KIND_ORDER}
    for e in nl.elements:
        max_abs[e.kind] = max(max_abs[e.kind], abs(e.value))
    scales = tuple(_pow2_scale(max_abs[k]) for k in KIND_ORDER)

    n = len(nl.elements)
    rec = np.zeros((n, FEATURE_WIDTH))
    net_ids = np.zeros(n, dtype=np.int64)
    kinds = np.zeros(n, dtype=np.int64)
    kind_index = {k: i for i, k in enumerate(KIND_ORDER)}
    raw = np.empty((n, 8))
    for i, e in enumerate(nl.elements):
        ki = kind_index[e.kind]
        kinds[i] = ki
        a, b = e.a, e.b
        net_ids[i] = a.net_id if a.layer else b.net_id
        raw[i] = (a.x, a.y, b.x, b.y, e.value / scales[ki], 0.0,
                  a.layer, b.layer)
        rec[i, 5 + ki] = 1.0
    a_ground = raw[:, 6] == 0
    b_ground = raw[:, 7] == 0
    if span_x:
        rec[:, 0] = (raw[:, 0] - min_x) / span_x
        rec[:, 2] = (raw[:, 2] - min_x) / span_x
    if span_y:
        rec[:, 1] = (raw[:, 1] - min_y) / span_y
        rec[:, 3] = (raw[:, 3] - min_y) / span_y
    rec[a_ground, 0:2] = 0.0
    rec[b_ground, 2:4] = 0.0
    rec[:, 4] = raw[:, 4]
    rec[:, 8] = raw[:, 6] / max_layer
    rec[:, 9] = raw[:, 7] / max_layer
    meta = ScaleMeta(bbox=nl.bbox, value_scales=scales, max_layer=max_layer,
                     net_ids=tuple(sorted({int(v) for v in net_ids})))
    return PointCloud(records=rec, meta=meta, source_count=n,
                      net_id_of=net_ids, kinds=kinds)


def _denorm_node(pc: PointCloud, i: int, which: int) -> NodeRef:
    rec = pc.records[i]
    layer = round(rec[8 + which] * pc.meta.max_layer)
    if layer == 0:
        return GROUND
    min_x, min_y, max_x, max_y = pc.meta.bbox
    x = round(rec[0 + 2 * which] * (max_x - min_x)) + min_x
    y = round(rec[1 + 2 * which] * (max_y - min_y)) + min_y
    return NodeRef(net_id=int(pc.net_id_of[i]), layer=layer, x=x, y=y)


def decode_pointcloud(pc: PointCloud) -> PdnNetlist:
    """Invert encode_pointcloud; element names are regenerated canonically."""
    if not pc.lossless:
        raise CappedCloudNotInvertible(
            f"cloud holds {len(pc.records)} of {pc.source_count} records")
    n = len(pc.records)
    min_x, min_y, max_x, max_y = pc.meta.bbox
    span_x, span_y = max_x - min_x, max_y - min_y
    rec = pc.records
    layers = np.rint(rec[:, 8:10] * pc.meta.max_layer).astype(np.int64)
    xs = np.rint(rec[:, [0, 2]] * span_x).astype(np.int64) + min_x
    ys = np.rint(rec[:, [1, 3]] * span_y).astype(np.int64) + min_y
    scales = np.asarray(pc.meta.value_scales)
    values = rec[:, 4] * scales[pc.kinds]

    elements = []
    node_index: dict[NodeRef, int] = {}
    edges: list[tuple[int, int, ElementKind]] = []
    node_cache: dict[tuple[int, int, int, int], NodeRef] = {}
    counters = {k: 0 for k in KIND_ORDER}
    nets = pc.net_id_of
    for i in range(n):
        kind = KIND_ORDER[pc.kinds[i]]
        counters[kind] += 1
        ends = []
        for w in range(2):
            if layers[i, w] == 0:
                ref = GROUND
            else:
                key = (int(nets[i]), int(layers[i, w]),
                       int(xs[i, w]), int(ys[i, w]))
                ref = node_cache.get(key)
                if ref is None:
                    ref = node_cache[key] = NodeRef(*key)
            ends.append(ref)
        a, b = ends
        ia = node_index.setdefault(a, len(node_index))
        ib = node_index.setdefault(b, len(node_index))
        edges.append((ia, ib, kind))
        elements.append(Element(kind=kind, name=f"{kind.value}{counters[kind]}",
                                a=a, b=b, value=float(values[i])))
    xs_ng = [r.x for r in node_index if not r.is_ground]
    ys_ng = [r.y for r in node_index if not r.is_ground]
    bbox = ((min(xs_ng), min(ys_ng), max(xs_ng), max(ys_ng)) if xs_ng
            else (0, 0, 0, 0))
    diags = _connectivity_diagnostics(edges, node_index)
    return PdnNetlist(elements=tuple(elements), node_index=node_index,
                      bbox=bbox, diagnostics=tuple(diags))


def cap_pointcloud(pc: PointCloud, max_points: int, seed: int) -> PointCloud:
    """Deterministic stratified downsample; all voltage sources survive."""
    n = len(pc.records)
    if n <= max_points:
        return pc
    v_idx = np.flatnonzero(pc.kinds == 2)
    other_idx = np.flatnonzero(pc.kinds != 2)
    budget = max(0, max_points - len(v_idx))
    keep = [v_idx]
    if budget and len(other_idx):
        # proportional split between R and I strata, never over budget
        rng = np.random.default_rng(seed)
        r_idx = np.flatnonzero(pc.kinds == 0)
        i_idx = np.flatnonzero(pc.kinds == 1)
        take_r = min(len(r_idx), round(budget * len(r_idx) / len(other_idx)))
        take_i = min(len(i_idx), budget - take_r)
        for stratum, take in ((r_idx, take_r), (i_idx, take_i)):
            if take > 0:
                chosen = rng.choice(stratum, size=take, replace=False)
                keep.append(np.sort(chosen))
    idx = np.sort(np.concatenate(keep))
    return PointCloud(records=pc.records[idx], meta=pc.meta,
                      source_count=pc.source_count,
                      net_id_of=pc.net_id_of[idx], kinds=pc.kinds[idx])


def save_pointcloud(path, pc: PointCloud) -> None:
    """Little-endian binary: magic, version, count, width, float32 records.

    A CSV sidecar (<path>.meta.csv) carries the inversion metadata.
    """
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HII", _VERSION, len(pc.records), FEATURE_WIDTH))
        f.write(pc.records.astype("<f4").tobytes())
    with open(str(path) + ".meta.csv", "w") as f:
        f.write("key,values\n")
        f.write("bbox," + " ".join(str(v) for v in pc.meta.bbox) + "\n")
        f.write("value_scales," + " ".join(repr(v) for v in pc.meta.value_scales) + "\n")
        f.write(f"max_layer,{pc.meta.max_layer}\n")
        f.write(f"source_count,{pc.source_count}\n")
        f.write("net_id_of," + " ".join(str(int(v)) for v in pc.net_id_of) + "\n")
        f.write("kinds," + " ".join(str(int(v)) for v in pc.kinds) + "\n")


def load_pointcloud(path) -> PointCloud:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise PointCloudError(f"{path}: bad magic")
        version, count, width = struct.unpack("<HII", f.read(10))
        if version != _VERSION or width != FEATURE_WIDTH:
            raise PointCloudError(f"{path}: unsupported version/width")
        rec = np.frombuffer(f.read(4 * count * width),
                            dtype="<f4").reshape(count, width).astype(np.float64)
    fields = {}
    with open(str(path) + ".meta.csv") as f:
        next(f)
        for line in f:
            key, vals = line.rstrip("\n").split(",", 1)
            fields[key] = vals.split()
    bbox = tuple(int(v) for v in fields["bbox"])
    meta = ScaleMeta(bbox=bbox,
                     value_scales=tuple(float(v) for v in fields["value_scales"]),
                     max_layer=int(fields["max_layer"][0]),
                     net_ids=())
    net_id_of = np.array([int(v) for v in fields["net_id_of"]], dtype=np.int64)
    kinds = np.array([int(v) for v in fields["kinds"]], dtype=np.int64)
    return PointCloud(records=rec, meta=meta,
                      source_count=int(fields["source_count"][0]),
                      net_id_of=net_id_of, kinds=kinds)
