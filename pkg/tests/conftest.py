import numpy as np
import pytest

from irdrop.spice import parse_netlist
from irdrop.synth import GenSpec, generate

TEN_LINE = """\
* small mixed netlist
V1 n1_m4_0_0 0 1.1
V2 n1_m4_8000_8000 0 1.1
R1 n1_m4_0_0 n1_m4_8000_0 0.5
R2 n1_m4_8000_0 n1_m4_8000_8000 0.5
R3 n1_m4_0_0 n1_m1_0_0 0.1
R4 n1_m4_8000_8000 n1_m1_8000_8000 0.1
R5 n1_m1_0_0 n1_m1_8000_0 2.0
R6 n1_m1_8000_0 n1_m1_8000_8000 2.0
I1 n1_m1_0_0 0 0.01
I2 n1_m1_8000_8000 0 0.02
"""


@pytest.fixture
def ten_line_netlist():
    return parse_netlist(TEN_LINE)


def random_netlist_text(rng: np.random.Generator, n_elements: int = 30) -> str:
    """Random grammar-valid netlist (not necessarily connected)."""
    step = 500
    nodes = []
    for _ in range(max(4, n_elements // 2)):
        nodes.append((int(rng.integers(1, 4)),
                      int(rng.integers(0, 40)) * step,
                      int(rng.integers(0, 40)) * step))
    lines = []
    counts = {"R": 0, "I": 0, "V": 0}

    def name_of(layer, x, y):
        return f"n1_m{layer}_{x}_{y}"

    # guarantee at least one voltage source
    l, x, y = nodes[0]
    counts["V"] += 1
    lines.append(f"V{counts['V']} {name_of(l, x, y)} 0 "
                 f"{float(rng.uniform(0.9, 1.2))!r}")
    while len(lines) < n_elements:
        kind = rng.choice(["R", "R", "R", "I", "V"])
        i = int(rng.integers(0, len(nodes)))
        l, x, y = nodes[i]
        counts[kind] += 1
        if kind == "R":
            if rng.random() < 0.3 and l < 3:  # via
                b = name_of(l + 1, x, y)
            else:
                j = int(rng.integers(0, len(nodes)))
                lb, xb, yb = nodes[j]
                if (l, x, y) == (lb, xb, yb):
                    continue
                b = name_of(l, xb, yb)
                if (x, y) == (xb, yb):
                    continue
            lines.append(f"R{counts['R']} {name_of(l, x, y)} {b} "
                         f"{float(rng.uniform(0.01, 10.0))!r}")
        elif kind == "I":
            lines.append(f"I{counts['I']} {name_of(l, x, y)} 0 "
                         f"{float(rng.uniform(0, 0.1))!r}")
        else:
            lines.append(f"V{counts['V']} {name_of(l, x, y)} 0 "
                         f"{float(rng.uniform(0.9, 1.2))!r}")
    return "\n".join(lines) + "\n"


def small_grid(seed: int = 0, side: int = 12) -> "PdnNetlist":
    return generate(GenSpec(side_um=side, layers=2, pitches_um=(2, 4),
                            sheet_res=(0.2, 0.1), n_current_sources=8,
                            n_voltage_pads=2, seed=seed))
