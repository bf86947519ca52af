"""SPICE netlist subset for power delivery networks.

Grammar (one element per line, `*` comments, optional `.end`):

    R<name> <nodeA> <nodeB> <ohms>
    I<name> <nodeA> <nodeB> <amps>
    V<name> <nodeA> <nodeB> <volts>

    node := `0` | n<net>_m<layer>_<x>_<y>     (x, y integer nanometers)

Values accept engineering suffixes k/m/u/n. The parsed netlist is
immutable and is the single source of truth for the solver, the
rasterizer and the point-cloud encoder.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable


class NetlistError(Exception):
    """Base class for netlist parse/validation failures."""


class MalformedLine(NetlistError):
    def __init__(self, line_no: int, line: str, reason: str):
        super().__init__(f"line {line_no}: {reason}: {line!r}")
        self.line_no = line_no


class DuplicateElementName(NetlistError):
    pass


class NonPositiveResistance(NetlistError):
    pass


class EmptyNetlist(NetlistError):
    pass


class ElementKind(Enum):
    RESISTOR = "R"
    CURRENT_SOURCE = "I"
    VOLTAGE_SOURCE = "V"


class ElementClass(Enum):
    LATERAL = "lateral"
    VIA = "via"
    SOURCE_TAP = "source_tap"


@dataclass(frozen=True, order=True)
class NodeRef:
    net_id: int
    layer: int  # 0 is reserved for ground
    x: int  # nanometers
    y: int  # nanometers

    @property
    def is_ground(self) -> bool:
        return self.layer == 0

    def name(self) -> str:
        if self.is_ground:
            return "0"
        return f"n{self.net_id}_m{self.layer}_{self.x}_{self.y}"


GROUND = NodeRef(net_id=0, layer=0, x=0, y=0)


@dataclass(frozen=True)
class Element:
    kind: ElementKind
    name: str
    a: NodeRef
    b: NodeRef
    value: float


@dataclass(frozen=True)
class PdnNetlist:
    elements: tuple[Element, ...]
    node_index: dict[NodeRef, int]  # dense, first-appearance order
    bbox: tuple[int, int, int, int]  # (min_x, min_y, max_x, max_y), non-ground nodes
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def nodes(self) -> list[NodeRef]:
        return list(self.node_index)

    def elements_of(self, kind: ElementKind) -> list[Element]:
        return [e for e in self.elements if e.kind == kind]


_NODE_RE = re.compile(r"^n(\d+)_m(\d+)_(-?\d+)_(-?\d+)$")

_SUFFIX = {"k": 1e3, "m": 1e-3, "u": 1e-6, "n": 1e-9}


def _parse_node(token: str, line_no: int, line: str) -> NodeRef:
    if token == "0":
        return GROUND
    m = _NODE_RE.match(token)
    if m is None:
        raise MalformedLine(line_no, line, f"bad node name {token!r}")
    net, layer, x, y = (int(g) for g in m.groups())
    if layer < 1:
        raise MalformedLine(line_no, line, "layer 0 is reserved for ground")
    return NodeRef(net_id=net, layer=layer, x=x, y=y)


def parse_value(token: str) -> float:
    scale = 1.0
    if token and token[-1].lower() in _SUFFIX:
        scale = _SUFFIX[token[-1].lower()]
        token = token[:-1]
    return float(token) * scale


def classify_element(e: Element) -> ElementClass:
    if e.kind != ElementKind.RESISTOR:
        return ElementClass.SOURCE_TAP
    if e.a.layer != e.b.layer:
        return ElementClass.VIA
    return ElementClass.LATERAL


def _connectivity_diagnostics(edges: list[tuple[int, int, ElementKind]],
                              node_index: dict[NodeRef, int]) -> list[str]:
    # BFS over resistor edges from every voltage-source node.
    adj: list[list[int]] = [[] for _ in range(len(node_index))]
    seeds: list[int] = []
    for ia, ib, kind in edges:
        if kind is ElementKind.RESISTOR:
            adj[ia].append(ib)
            adj[ib].append(ia)
        elif kind is ElementKind.VOLTAGE_SOURCE:
            seeds.append(ia)
            seeds.append(ib)
    seen = bytearray(len(node_index))
    for s in seeds:
        seen[s] = 1
    stack = seeds
    while stack:
        n = stack.pop()
        for m in adj[n]:
            if not seen[m]:
                seen[m] = 1
                stack.append(m)
    out = []
    for ref, i in node_index.items():
        if not seen[i] and not ref.is_ground:
            out.append(f"unreachable node {ref.name()}: no resistive path "
                       f"to any voltage source")
    return out


def parse_netlist(text: str | bytes) -> PdnNetlist:
    """Parse the PDN SPICE subset into an immutable netlist.

    Raises MalformedLine / DuplicateElementName / NonPositiveResistance /
    EmptyNetlist. Connectivity problems are reported as diagnostics, not
    as parse failures.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")

    elements: list[Element] = []
    names: set[str] = set()
    node_index: dict[NodeRef, int] = {}
    node_cache: dict[str, NodeRef] = {"0": GROUND}
    kind_of = {"R": ElementKind.RESISTOR, "I": ElementKind.CURRENT_SOURCE,
               "V": ElementKind.VOLTAGE_SOURCE,
               "r": ElementKind.RESISTOR, "i": ElementKind.CURRENT_SOURCE,
               "v": ElementKind.VOLTAGE_SOURCE}
    edges: list[tuple[int, int, ElementKind]] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("*"):
            continue
        if line.lower() == ".end":
            break
        tokens = line.split()
        if len(tokens) != 4:
            raise MalformedLine(line_no, line, "expected 4 fields")
        name, na, nb, sval = tokens
        kind = kind_of.get(name[0])
        if kind is None:
            raise MalformedLine(line_no, line,
                                f"unknown element type {name[0].upper()!r}")
        if name in names:
            raise DuplicateElementName(f"line {line_no}: duplicate element name {name!r}")
        names.add(name)
        a = node_cache.get(na)
        if a is None:
            a = node_cache[na] = _parse_node(na, line_no, line)
        b = node_cache.get(nb)
        if b is None:
            b = node_cache[nb] = _parse_node(nb, line_no, line)
        if a is b or a == b:
            raise MalformedLine(line_no, line, "element terminals must differ")
        try:
            value = parse_value(sval)
        except ValueError:
            raise MalformedLine(line_no, line, f"bad value {sval!r}")
        if kind is ElementKind.RESISTOR:
            if value <= 0.0:
                raise NonPositiveResistance(
                    f"line {line_no}: resistor {name!r} has value {value}")
            if (a.layer != b.layer and a.layer != 0 and b.layer != 0
                    and (a.x, a.y) != (b.x, b.y)):
                raise MalformedLine(line_no, line,
                                    "inter-layer resistor must join identical (x, y)")
        elif kind is ElementKind.VOLTAGE_SOURCE and value <= 0.0:
            raise MalformedLine(line_no, line, "voltage source value must be > 0")
        elif kind is ElementKind.CURRENT_SOURCE and value < 0.0:
            raise MalformedLine(line_no, line, "current source value must be >= 0")
        ia = node_index.setdefault(a, len(node_index))
        ib = node_index.setdefault(b, len(node_index))
        edges.append((ia, ib, kind))
        elements.append(Element(kind=kind, name=name, a=a, b=b, value=value))

    if not elements:
        raise EmptyNetlist("netlist contains no elements")

    xs = [n.x for n in node_index if not n.is_ground]
    ys = [n.y for n in node_index if not n.is_ground]
    bbox = (min(xs), min(ys), max(xs), max(ys)) if xs else (0, 0, 0, 0)
    diags = _connectivity_diagnostics(edges, node_index)
    return PdnNetlist(elements=tuple(elements), node_index=node_index,
                      bbox=bbox, diagnostics=tuple(diags))


def write_netlist(nl: PdnNetlist) -> str:
    """Serialize back to the grammar; parse(write(nl)) reproduces nl."""
    if not nl.elements:
        raise EmptyNetlist("cannot serialize an empty netlist")
    lines = [f"{e.name} {e.a.name()} {e.b.name()} {e.value!r}" for e in nl.elements]
    lines.append(".end")
    return "\n".join(lines) + "\n"
