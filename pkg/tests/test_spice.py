import numpy as np
import pytest

from irdrop.spice import (DuplicateElementName, Element, ElementClass,
                          ElementKind, EmptyNetlist, GROUND, MalformedLine,
                          NodeRef, NonPositiveResistance, classify_element,
                          parse_netlist, parse_value, write_netlist)

from conftest import TEN_LINE, random_netlist_text


def element_multiset(nl):
    return sorted((e.kind.value, e.a, e.b, e.value) for e in nl.elements)


def test_parse_single_resistor():
    nl = parse_netlist("R1 n1_m1_2000_2000 n1_m1_3000_2000 0.5\n"
                       "V1 n1_m1_2000_2000 0 1.0\n")
    e = nl.elements[0]
    assert e.kind == ElementKind.RESISTOR
    assert e.value == 0.5
    assert e.a == NodeRef(1, 1, 2000, 2000)
    assert e.b == NodeRef(1, 1, 3000, 2000)
    assert e.b.x - e.a.x == 1000  # 1 um apart on m1


def test_parse_voltage_source_to_ground():
    nl = parse_netlist("V1 n1_m4_0_0 0 1.1\n")
    e = nl.elements[0]
    assert e.kind == ElementKind.VOLTAGE_SOURCE
    assert e.b == GROUND
    assert e.value == 1.1


def test_ten_line_file_node_count(ten_line_netlist):
    # oracle: independent set construction over node-name tokens
    names = set()
    for line in TEN_LINE.splitlines():
        if not line or line.startswith("*"):
            continue
        toks = line.split()
        names.update(toks[1:3])
    assert len(ten_line_netlist.elements) == 10
    assert len(ten_line_netlist.node_index) == len(names)


def test_elements_kept_in_file_order(ten_line_netlist):
    assert [e.name for e in ten_line_netlist.elements] == [
        "V1", "V2", "R1", "R2", "R3", "R4", "R5", "R6", "I1", "I2"]


def test_bbox(ten_line_netlist):
    assert ten_line_netlist.bbox == (0, 0, 8000, 8000)


def test_comments_blanks_and_end_skipped():
    nl = parse_netlist("* a comment\n\nV1 n1_m1_0_0 0 1.0\n.end\n"
                       "R9 n1_m1_0_0 n1_m1_5_5 1.0\n")
    assert len(nl.elements) == 1  # R9 is after .end


def test_engineering_suffixes():
    assert parse_value("1k") == 1e3
    assert parse_value("2m") == 2e-3
    assert parse_value("3u") == 3e-6
    assert parse_value("4n") == 4e-9
    assert parse_value("1.5e-2") == 0.015


def test_malformed_line_reports_number():
    with pytest.raises(MalformedLine) as exc:
        parse_netlist("V1 n1_m1_0_0 0 1.0\nR1 bogus 0 1.0\n")
    assert exc.value.line_no == 2


def test_duplicate_name_rejected():
    with pytest.raises(DuplicateElementName):
        parse_netlist("R1 n1_m1_0_0 n1_m1_9_9 1.0\nR1 n1_m1_0_0 n1_m1_5_5 1.0\n")


def test_zero_resistor_rejected():
    with pytest.raises(NonPositiveResistance):
        parse_netlist("R1 n1_m1_0_0 n1_m1_9_9 0.0\n")


def test_empty_netlist_rejected():
    with pytest.raises(EmptyNetlist):
        parse_netlist("* nothing here\n")


def test_self_loop_rejected():
    with pytest.raises(MalformedLine):
        parse_netlist("R1 n1_m1_0_0 n1_m1_0_0 1.0\n")


def test_unreachable_node_is_diagnostic_not_error():
    nl = parse_netlist("V1 n1_m1_0_0 0 1.0\n"
                       "R1 n1_m1_0_0 n1_m1_1000_0 1.0\n"
                       "I1 n1_m2_5000_5000 0 0.1\n")
    assert any("unreachable" in d for d in nl.diagnostics)


def test_classify():
    via = Element(ElementKind.RESISTOR, "R1", NodeRef(1, 1, 5, 5),
                  NodeRef(1, 4, 5, 5), 0.2)
    lat = Element(ElementKind.RESISTOR, "R2", NodeRef(1, 1, 0, 0),
                  NodeRef(1, 1, 5, 0), 0.2)
    tap = Element(ElementKind.CURRENT_SOURCE, "I1", NodeRef(1, 1, 0, 0),
                  GROUND, 0.1)
    assert classify_element(via) == ElementClass.VIA
    assert classify_element(lat) == ElementClass.LATERAL
    assert classify_element(tap) == ElementClass.SOURCE_TAP


def test_roundtrip_ten_line(ten_line_netlist):
    text = write_netlist(ten_line_netlist)
    again = parse_netlist(text)
    assert element_multiset(again) == element_multiset(ten_line_netlist)
    assert [e.name for e in again.elements] == \
        [e.name for e in ten_line_netlist.elements]
    # serializing a second time is byte-stable
    assert write_netlist(again) == text


def test_roundtrip_random_netlists():
    rng = np.random.default_rng(42)
    for trial in range(30):
        nl = parse_netlist(random_netlist_text(rng, 40))
        again = parse_netlist(write_netlist(nl))
        assert element_multiset(again) == element_multiset(nl), f"trial {trial}"


def test_roundtrip_large_netlist():
    rng = np.random.default_rng(7)
    nl = parse_netlist(random_netlist_text(rng, 1000))
    again = parse_netlist(write_netlist(nl))
    assert element_multiset(again) == element_multiset(nl)
