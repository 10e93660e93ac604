"""Virtual switch: rule table semantics, chaining rewrites, counters, loop guard."""

import pytest

from edgesim.radio import Packet
from edgesim.switch import APP, Match, Port, Rewrite, RuleConflictError, UnknownPortError, UnknownRuleError, VirtualSwitch


def make_switch(ports=("a", "b", "c")):
    sw = VirtualSwitch()
    received = {p: [] for p in ports}
    for p in ports:
        sw.add_port(Port(p, APP, p), sink=lambda pkt, p=p: received[p].append(pkt))
    return sw, received


def pkt(flow="f1", src="a", dst="ue", transcoded=False):
    return Packet(flow_id=flow, src_port=src, dst_port=dst, size=100, created_at=0.0, transcoded=transcoded)


def test_matching_rule_outputs_to_port():
    sw, received = make_switch()
    sw.install_rule(10, Match(flow_id="f1"), output="b")
    assert sw.forward(pkt()) == "delivered:b"
    assert len(received["b"]) == 1


def test_same_priority_disjoint_matches_accepted():
    sw, _ = make_switch()
    sw.install_rule(10, Match(flow_id="f1"), output="b")
    sw.install_rule(10, Match(flow_id="f2"), output="c")
    assert len(sw.rules) == 2


def test_same_priority_overlap_rejected_naming_both_rules():
    sw, _ = make_switch()
    first = sw.install_rule(10, Match(flow_id="f1"), output="b")
    with pytest.raises(RuleConflictError) as excinfo:
        sw.install_rule(10, Match(src_port="a"), output="c")
    assert first in str(excinfo.value)
    assert len(sw.rules) == 1


def test_unknown_output_port_rejected_table_unchanged():
    sw, _ = make_switch()
    with pytest.raises(UnknownPortError):
        sw.install_rule(10, Match(flow_id="f1"), output="nope")
    assert len(sw.rules) == 0


def test_higher_priority_rule_wins():
    sw, received = make_switch()
    sw.install_rule(10, Match(flow_id="f1"), output="b")
    sw.install_rule(20, Match(src_port="a"), output="c")
    assert sw.forward(pkt()) == "delivered:c"


def test_no_match_is_default_drop():
    sw, _ = make_switch()
    sw.install_rule(10, Match(flow_id="other"), output="b")
    assert sw.forward(pkt()) == "dropped:default"
    assert sw.default_drops == 1


def test_remove_rule_falls_through_to_default_drop():
    sw, _ = make_switch()
    rule = sw.install_rule(10, Match(flow_id="f1"), output="b")
    sw.remove_rule(rule)
    assert sw.forward(pkt()) == "dropped:default"
    assert sw.default_drops == 1


def test_remove_then_reinstall_behaves_like_fresh_table():
    sw, received = make_switch()
    rule = sw.install_rule(10, Match(flow_id="f1"), output="b")
    sw.remove_rule(rule)
    sw.install_rule(10, Match(flow_id="f1"), output="b")
    assert sw.forward(pkt()) == "delivered:b"


def test_remove_unknown_rule_errors():
    sw, _ = make_switch()
    with pytest.raises(UnknownRuleError):
        sw.remove_rule("r999")


def test_rewrite_then_output_chain_transparency():
    # Chain: flow f1 from a -> rewritten toward transcoder port b; from b -> out c.
    sw, received = make_switch()
    sw.install_rule(20, Match(flow_id="f1", src_port="a"), rewrites=(Rewrite("dst_port", "b"),), output="b")
    sw.install_rule(20, Match(flow_id="f1", src_port="b"), rewrites=(Rewrite("dst_port", "ue"),), output="c")

    first = pkt()
    sw.forward(first)
    assert first.dst_port == "b"  # terminal app of hop one sees itself as destination
    relayed = pkt(src="b")
    sw.forward(relayed)
    assert relayed.dst_port == "ue"
    assert len(received["b"]) == 1 and len(received["c"]) == 1


def test_drop_rule_counts_separately():
    sw, _ = make_switch()
    sw.install_rule(10, Match(flow_id="f1"), drop=True)
    assert sw.forward(pkt()) == "dropped:rule"
    assert sw.rule_drops == 1


def test_loop_guard_drops_after_max_traversals():
    sw, received = make_switch(ports=("a",))
    outcomes = []
    # replace sink with one that feeds the packet straight back in
    sw._sinks["a"] = lambda p: outcomes.append(sw.forward(p))
    sw.install_rule(10, Match(flow_id="f1"), output="a")
    result = sw.forward(pkt())
    assert "dropped:loop" in outcomes
    assert sw.loop_drops == 1


def test_make_before_break_no_default_drops_across_transitions():
    sw, received = make_switch()
    priority = 10
    active = sw.install_rule(priority, Match(flow_id="f1", src_port="a"), output="b")
    target = "c"
    for i in range(10_000):
        sw.forward(pkt())
        priority += 1
        fresh = sw.install_rule(priority, Match(flow_id="f1", src_port="a"), output=target)
        sw.remove_rule(active)
        active = fresh
        target = "b" if target == "c" else "c"
        sw.forward(pkt())
    assert sw.default_drops == 0
    assert sw.counters_consistent()


def test_counter_conservation_with_mixed_outcomes():
    sw, _ = make_switch()
    sw.install_rule(10, Match(flow_id="f1"), output="b")
    for i in range(50):
        sw.forward(pkt())
    for i in range(30):
        sw.forward(pkt(flow="unmatched"))
    assert sw.counters_consistent()
    total_in = sum(sw.port_in.values())
    assert total_in == 80


def test_forward_from_unknown_port_raises():
    sw, _ = make_switch()
    with pytest.raises(UnknownPortError):
        sw.forward(pkt(src="ghost"))


def test_table_dump_is_ordered_with_counters():
    sw, _ = make_switch()
    sw.install_rule(10, Match(flow_id="f1"), output="b")
    sw.install_rule(30, Match(flow_id="f2"), output="c")
    sw.forward(pkt(flow="f2"))
    dump = sw.table_dump()
    assert [entry["priority"] for entry in dump] == [30, 10]
    assert dump[0]["matched"] == 1
