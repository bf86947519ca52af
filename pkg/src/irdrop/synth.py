"""Deterministic synthetic PDN generator.

Builds orthogonal stripe grids (alternating preferred directions per metal
layer), vias at stripe crossings, voltage pads on the top layer and
current sources on the lowest layer. Stands in for a large external
benchmark corpus at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rasterize import CHANNELS, GridSpec, build_feature_stack, save_channel_csv
from .solver import solve_static
from .spice import PdnNetlist, parse_netlist

NM = 1000  # nanometers per micrometer


class InfeasibleSpec(Exception):
    pass


@dataclass(frozen=True)
class GenSpec:
    side_um: int = 20
    layers: int = 2
    pitches_um: tuple[int, ...] = (2, 4)
    sheet_res: tuple[float, ...] = (0.2, 0.1)  # ohms per um of stripe
    via_res: float = 0.05
    n_current_sources: int = 10
    current_range: tuple[float, float] = (1e-4, 1e-2)  # amperes, log-uniform
    n_voltage_pads: int = 2
    vdd: float = 1.0
    seed: int = 0
    net_id: int = 1
    sparse_half: bool = False  # halve layer-1 track density in the upper half

    def validate(self):
        if not (2 <= self.layers <= 4):
            raise InfeasibleSpec("layers must be in 2..4")
        if len(self.pitches_um) != self.layers or len(self.sheet_res) != self.layers:
            raise InfeasibleSpec("need one pitch and sheet resistance per layer")
        for p in self.pitches_um:
            if p < 1 or self.side_um % p:
                raise InfeasibleSpec(f"pitch {p} must divide side {self.side_um}")
        if self.n_current_sources < 1 or self.n_voltage_pads < 1:
            raise InfeasibleSpec("counts must be >= 1")
        if self.vdd <= 0:
            raise InfeasibleSpec("vdd must be > 0")


def _tracks(spec: GenSpec, layer: int) -> list[int]:
    """Track coordinates (nm) of one layer; layer is 1-based."""
    pitch = spec.pitches_um[layer - 1]
    coords = list(range(0, (spec.side_um + 1) * NM, pitch * NM))
    if spec.sparse_half and layer == 1:
        half = spec.side_um * NM // 2
        coords = [c for i, c in enumerate(coords) if c <= half or i % 2 == 0]
    return coords


def _is_horizontal(layer: int) -> bool:
    return layer % 2 == 1  # odd layers route horizontally


def generate(spec: GenSpec) -> PdnNetlist:
    """Emit a stripe-grid PDN netlist; deterministic under spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    net = spec.net_id

    tracks = {l: _tracks(spec, l) for l in range(1, spec.layers + 1)}
    # node coordinates per layer: crossings with adjacent layers
    nodes: dict[int, set[tuple[int, int]]] = {l: set() for l in tracks}
    vias: list[tuple[int, int, int]] = []  # (lower layer, x, y)
    for l in range(1, spec.layers):
        lo, hi = (l, l + 1)
        h_layer, v_layer = (lo, hi) if _is_horizontal(lo) else (hi, lo)
        for y in tracks[h_layer]:
            for x in tracks[v_layer]:
                nodes[lo].add((x, y))
                nodes[hi].add((x, y))
                vias.append((lo, x, y))

    def node_name(layer: int, x: int, y: int) -> str:
        return f"n{net}_m{layer}_{x}_{y}"

    lines: list[str] = [f"* synthetic PDN, side {spec.side_um} um, "
                        f"{spec.layers} layers, seed {spec.seed}"]
    r_count = 0
    for l in range(1, spec.layers + 1):
        res_per_um = spec.sheet_res[l - 1]
        horizontal = _is_horizontal(l)
        by_track: dict[int, list[int]] = {}
        for x, y in nodes[l]:
            key, pos = (y, x) if horizontal else (x, y)
            by_track.setdefault(key, []).append(pos)
        for key in sorted(by_track):
            positions = sorted(set(by_track[key]))
            for p0, p1 in zip(positions, positions[1:]):
                r_count += 1
                a = node_name(l, p0, key) if horizontal else node_name(l, key, p0)
                b = node_name(l, p1, key) if horizontal else node_name(l, key, p1)
                value = res_per_um * (p1 - p0) / NM
                lines.append(f"R{r_count} {a} {b} {value!r}")
    for i, (l, x, y) in enumerate(sorted(vias), start=r_count + 1):
        lines.append(f"R{i} {node_name(l, x, y)} {node_name(l + 1, x, y)} "
                     f"{spec.via_res!r}")

    top = spec.layers
    top_nodes = sorted(nodes[top])
    if spec.n_voltage_pads > len(top_nodes):
        raise InfeasibleSpec(f"{spec.n_voltage_pads} pads > "
                             f"{len(top_nodes)} top-layer nodes")
    pad_idx = rng.choice(len(top_nodes), size=spec.n_voltage_pads, replace=False)
    for i, pi in enumerate(sorted(pad_idx), start=1):
        x, y = top_nodes[pi]
        lines.append(f"V{i} {node_name(top, x, y)} 0 {spec.vdd!r}")

    low_nodes = sorted(nodes[1])
    src_idx = rng.integers(0, len(low_nodes), size=spec.n_current_sources)
    lo, hi = spec.current_range
    currents = np.exp(rng.uniform(np.log(lo), np.log(hi),
                                  size=spec.n_current_sources))
    for i, (ni, amps) in enumerate(zip(src_idx, currents), start=1):
        x, y = low_nodes[ni]
        lines.append(f"I{i} {node_name(1, x, y)} 0 {float(amps)!r}")

    return parse_netlist("\n".join(lines) + "\n")


def generate_dataset(specs: list[GenSpec], out_dir,
                     tags: list[str] | None = None) -> Path:
    """Write per-case SPICE file, channel CSVs, golden target, and manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["case_id,netlist_path,target_path,tag,oversample"]
    for i, spec in enumerate(specs):
        case = f"case{i:03d}"
        nl = generate(spec)
        from .spice import write_netlist
        (out / f"{case}.sp").write_text(write_netlist(nl))
        sol = solve_static(nl)
        stack = build_feature_stack(nl, sol)
        for name in CHANNELS:
            save_channel_csv(out / f"{case}_{name}.csv", stack.channels[name])
        save_channel_csv(out / f"{case}_target.csv", stack.target)
        tag = tags[i] if tags else "fake"
        rows.append(f"{case},{case}.sp,{case}_target.csv,{tag},0")
    manifest = out / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest
