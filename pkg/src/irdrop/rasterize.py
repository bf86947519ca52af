"""Rasterize a PDN netlist onto the 1 um cell lattice.

Six input channels (current, effective distance, PDN density, voltage
and current source plots, resistance) plus the golden IR-drop target.
All deposit loops run in file order so channels are bitwise deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import NodeSolution
from .spice import ElementClass, ElementKind, NodeRef, PdnNetlist, classify_element

NM_PER_UM = 1000.0

CHANNELS = ("current", "eff_dist", "pdn_density", "v_source", "i_source",
            "resistance")


class RasterizeError(Exception):
    pass


class SourceOutsideGrid(RasterizeError):
    pass


class NoVoltageSource(RasterizeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    cell_pitch: int = 1000  # nanometers
    width_cells: int = 1
    height_cells: int = 1
    origin: tuple[int, int] = (0, 0)  # nanometers

    @staticmethod
    def from_netlist(nl: PdnNetlist, cell_pitch: int = 1000) -> "GridSpec":
        min_x, min_y, max_x, max_y = nl.bbox
        ox = (min_x // cell_pitch) * cell_pitch
        oy = (min_y // cell_pitch) * cell_pitch
        w = max(1, -((max_x - ox) // -cell_pitch) or 1)
        h = max(1, -((max_y - oy) // -cell_pitch) or 1)
        # nodes sitting exactly on the far edge still need a cell
        if max_x - ox == w * cell_pitch:
            w += 1
        if max_y - oy == h * cell_pitch:
            h += 1
        return GridSpec(cell_pitch=cell_pitch, width_cells=int(w),
                        height_cells=int(h), origin=(int(ox), int(oy)))

    def cell_of(self, x: int, y: int) -> tuple[int, int]:
        """(col, row) of the cell containing (x, y) nm; clamped to the grid."""
        cx = int((x - self.origin[0]) // self.cell_pitch)
        cy = int((y - self.origin[1]) // self.cell_pitch)
        return (min(max(cx, 0), self.width_cells - 1),
                min(max(cy, 0), self.height_cells - 1))

    def cell_centers_um(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of cell-center coordinates in micrometers (row-major y, x)."""
        xs = (self.origin[0] + (np.arange(self.width_cells) + 0.5)
              * self.cell_pitch) / NM_PER_UM
        ys = (self.origin[1] + (np.arange(self.height_cells) + 0.5)
              * self.cell_pitch) / NM_PER_UM
        return np.meshgrid(xs, ys)

    def zeros(self) -> np.ndarray:
        return np.zeros((self.height_cells, self.width_cells))


@dataclass(frozen=True)
class FeatureStack:
    channels: dict[str, np.ndarray]
    target: np.ndarray
    spec: GridSpec

    def as_array(self) -> np.ndarray:
        """(C, H, W) stack in the canonical CHANNELS order."""
        return np.stack([self.channels[name] for name in CHANNELS])


def _instance_terminal(e) -> NodeRef:
    return e.a if not e.a.is_ground else e.b


def current_map(nl: PdnNetlist, spec: GridSpec) -> np.ndarray:
    out = spec.zeros()
    for e in nl.elements_of(ElementKind.CURRENT_SOURCE):
        term = _instance_terminal(e)
        cx, cy = spec.cell_of(term.x, term.y)
        out[cy, cx] += abs(e.value)
    return out


def effective_distance_map(nl: PdnNetlist, spec: GridSpec,
                           eps_nm: float | None = None) -> np.ndarray:
    """Per cell: 1 / sum_s (1 / dist(cell center, source s)), in micrometers."""
    if eps_nm is None:
        eps_nm = spec.cell_pitch / 2
    sources = [(_instance_terminal(e).x, _instance_terminal(e).y)
               for e in nl.elements_of(ElementKind.VOLTAGE_SOURCE)]
    if not sources:
        raise NoVoltageSource("effective distance needs >= 1 voltage source")
    gx, gy = spec.cell_centers_um()
    eps_um = eps_nm / NM_PER_UM
    inv_sum = np.zeros_like(gx)
    for sx, sy in sources:
        d = np.hypot(gx - sx / NM_PER_UM, gy - sy / NM_PER_UM)
        inv_sum += 1.0 / np.maximum(d, eps_um)
    return 1.0 / inv_sum


def pdn_density_map(nl: PdnNetlist, spec: GridSpec) -> np.ndarray:
    """Mean power-stripe spacing per cell, micrometers; 0 where no stripe.

    Spacing per orientation = cell side / number of distinct parallel track
    coordinates crossing the cell; the cell value averages the orientations
    present.
    """
    h_tracks: dict[tuple[int, int], set[int]] = {}  # cell -> distinct y coords
    v_tracks: dict[tuple[int, int], set[int]] = {}
    pitch = spec.cell_pitch
    for e in nl.elements_of(ElementKind.RESISTOR):
        if classify_element(e) != ElementClass.LATERAL:
            continue
        a, b = e.a, e.b
        if a.y == b.y:  # horizontal segment
            x0, x1 = sorted((a.x, b.x))
            c0, _ = spec.cell_of(x0, a.y)
            c1, _ = spec.cell_of(max(x0, x1 - 1), a.y)
            _, row = spec.cell_of(x0, a.y)
            for col in range(c0, c1 + 1):
                h_tracks.setdefault((row, col), set()).add(a.y)
        elif a.x == b.x:  # vertical segment
            y0, y1 = sorted((a.y, b.y))
            _, r0 = spec.cell_of(a.x, y0)
            _, r1 = spec.cell_of(a.x, max(y0, y1 - 1))
            col, _ = spec.cell_of(a.x, y0)
            for row in range(r0, r1 + 1):
                v_tracks.setdefault((row, col), set()).add(a.x)

    out = spec.zeros()
    side_um = pitch / NM_PER_UM
    for cell in set(h_tracks) | set(v_tracks):
        spacings = []
        if cell in h_tracks:
            spacings.append(side_um / len(h_tracks[cell]))
        if cell in v_tracks:
            spacings.append(side_um / len(v_tracks[cell]))
        out[cell] = sum(spacings) / len(spacings)
    return out


def source_plots(nl: PdnNetlist, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """(v_source, i_source): max pad voltage per cell, summed current per cell."""
    v = spec.zeros()
    for e in nl.elements_of(ElementKind.VOLTAGE_SOURCE):
        term = _instance_terminal(e)
        cx, cy = spec.cell_of(term.x, term.y)
        v[cy, cx] = max(v[cy, cx], e.value)
    return v, current_map(nl, spec)


def resistance_map(nl: PdnNetlist, spec: GridSpec) -> np.ndarray:
    """Resistor values spread over overlapped cells, proportional to length."""
    out = spec.zeros()
    pitch = spec.cell_pitch
    ox, oy = spec.origin
    for e in nl.elements_of(ElementKind.RESISTOR):
        a, b = e.a, e.b
        if classify_element(e) == ElementClass.VIA or (a.x, a.y) == (b.x, b.y):
            term = a if not a.is_ground else b
            cx, cy = spec.cell_of(term.x, term.y)
            out[cy, cx] += e.value
            continue
        if a.y == b.y:  # horizontal
            lo, hi = sorted((a.x, b.x))
            length = hi - lo
            c0, row = spec.cell_of(lo, a.y)
            c1, _ = spec.cell_of(hi - 1, a.y)
            for col in range(c0, c1 + 1):
                cell_lo = ox + col * pitch
                overlap = min(hi, cell_lo + pitch) - max(lo, cell_lo)
                out[row, col] += e.value * overlap / length
        else:  # vertical
            lo, hi = sorted((a.y, b.y))
            length = hi - lo
            col, r0 = spec.cell_of(a.x, lo)
            _, r1 = spec.cell_of(a.x, hi - 1)
            for row in range(r0, r1 + 1):
                cell_lo = oy + row * pitch
                overlap = min(hi, cell_lo + pitch) - max(lo, cell_lo)
                out[row, col] += e.value * overlap / length
    return out


def target_map(sol: NodeSolution, nl: PdnNetlist, spec: GridSpec) -> np.ndarray:
    """Max IR drop per cell over current-source (instance) nodes."""
    out = spec.zeros()
    for e in nl.elements_of(ElementKind.CURRENT_SOURCE):
        term = _instance_terminal(e)
        i = nl.node_index[term]
        cx, cy = spec.cell_of(term.x, term.y)
        out[cy, cx] = max(out[cy, cx], sol.ir_drop[i])
    return out


def build_feature_stack(nl: PdnNetlist, sol: NodeSolution,
                        spec: GridSpec | None = None) -> FeatureStack:
    if spec is None:
        spec = GridSpec.from_netlist(nl)
    v_src, i_src = source_plots(nl, spec)
    channels = {
        "current": current_map(nl, spec),
        "eff_dist": effective_distance_map(nl, spec),
        "pdn_density": pdn_density_map(nl, spec),
        "v_source": v_src,
        "i_source": i_src,
        "resistance": resistance_map(nl, spec),
    }
    return FeatureStack(channels=channels, target=target_map(sol, nl, spec),
                        spec=spec)


def save_channel_csv(path, grid: np.ndarray) -> None:
    with open(path, "w") as f:
        for row in grid:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_channel_csv(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    return np.array(rows)


def save_channel_png(path, grid: np.ndarray) -> None:
    """Grayscale/viridis heatmap for eyeballing; not used numerically."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lo, hi = float(grid.min()), float(grid.max())
    norm = (grid - lo) / (hi - lo) if hi > lo else np.zeros_like(grid)
    plt.imsave(path, norm, cmap="viridis", origin="lower")
