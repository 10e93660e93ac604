"""Flow-rule virtual switch: priority match/action steering with header rewrites."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

from .radio import Packet

MAX_HOPS = 8

APP = "app"
RADIO = "radio"


class RuleConflictError(ValueError):
    """Equal-priority rules with overlapping matches are rejected at install time."""


class UnknownPortError(KeyError):
    pass


class UnknownRuleError(KeyError):
    pass


@dataclass(frozen=True)
class Port:
    id: str
    kind: str  # app | radio
    attached: str  # AppInstance id or waveform pair label


@dataclass(frozen=True)
class Match:
    """Wildcard match over flow id, ingress port and the transcoded header bit.
    None means any."""

    flow_id: str | None = None
    src_port: str | None = None
    transcoded: bool | None = None

    def covers(self, flow_id: str, src_port: str, transcoded: bool) -> bool:
        return (
            (self.flow_id is None or self.flow_id == flow_id)
            and (self.src_port is None or self.src_port == src_port)
            and (self.transcoded is None or self.transcoded == transcoded)
        )

    def overlaps(self, other: "Match") -> bool:
        """True when some packet could match both."""
        for a, b in (
            (self.flow_id, other.flow_id),
            (self.src_port, other.src_port),
            (self.transcoded, other.transcoded),
        ):
            if a is not None and b is not None and a != b:
                return False
        return True


@dataclass(frozen=True)
class Rewrite:
    field_name: str  # 'dst_port' is the only header chains need to touch
    value: str


@dataclass
class FlowRule:
    priority: int
    match: Match
    rewrites: tuple[Rewrite, ...] = ()
    output: str | None = None  # None = drop
    id: str = ""
    matched: int = field(default=0, compare=False)

    @property
    def is_drop(self) -> bool:
        return self.output is None


class VirtualSwitch:
    """Steers packets among app and radio ports.

    forward() is a pure function of the installed table and the packet's match
    fields; rule changes are applied between forwards (event boundaries), so a
    packet never sees a half-updated table.
    """

    def __init__(self, name: str = "vswitch") -> None:
        self.name = name
        self.ports: dict[str, Port] = {}
        self.rules: dict[str, FlowRule] = {}
        self._rule_ids = itertools.count(1)
        self.port_in: dict[str, int] = {}
        self.port_out: dict[str, int] = {}
        self.default_drops = 0
        self.loop_drops = 0
        self.rule_drops = 0
        self.dead_port_drops = 0
        self._retired_matched = 0
        # Delivery callbacks per port, wired by the node assembly.
        self._sinks: dict[str, Callable[[Packet], None]] = {}

    # -- ports ---------------------------------------------------------------

    def add_port(self, port: Port, sink: Callable[[Packet], None]) -> Port:
        if port.id in self.ports:
            raise ValueError(f"port {port.id} already exists on {self.name}")
        self.ports[port.id] = port
        self.port_in[port.id] = 0
        self.port_out[port.id] = 0
        self._sinks[port.id] = sink
        return port

    def remove_port(self, port_id: str) -> None:
        if port_id not in self.ports:
            raise UnknownPortError(port_id)
        del self.ports[port_id]
        del self._sinks[port_id]

    # -- rule table ------------------------------------------------------------

    def install_rule(
        self,
        priority: int,
        match: Match,
        rewrites: tuple[Rewrite, ...] = (),
        output: str | None = None,
        drop: bool = False,
    ) -> str:
        if output is None and not drop:
            raise ValueError("rule needs exactly one terminal action: output(port) or drop")
        if output is not None and drop:
            raise ValueError("rule cannot both output and drop")
        if output is not None and output not in self.ports:
            raise UnknownPortError(f"unknown output port {output!r} on {self.name}")
        for other in self.rules.values():
            if other.priority == priority and other.match.overlaps(match):
                raise RuleConflictError(
                    f"match {match} overlaps rule {other.id} ({other.match}) at priority {priority}"
                )
        rule_id = f"r{next(self._rule_ids)}"
        self.rules[rule_id] = FlowRule(priority, match, tuple(rewrites), output, id=rule_id)
        return rule_id

    def remove_rule(self, rule_id: str) -> None:
        if rule_id not in self.rules:
            raise UnknownRuleError(rule_id)
        self._retired_matched += self.rules[rule_id].matched
        del self.rules[rule_id]

    def table_dump(self) -> list[dict]:
        """Ordered rule listing with counters, for snapshots and reports."""
        ordered = sorted(self.rules.values(), key=lambda r: (-r.priority, r.id))
        return [
            {
                "id": r.id,
                "priority": r.priority,
                "match": {
                    "flow_id": r.match.flow_id,
                    "src_port": r.match.src_port,
                    "transcoded": r.match.transcoded,
                },
                "rewrites": [(w.field_name, w.value) for w in r.rewrites],
                "action": "drop" if r.is_drop else f"output:{r.output}",
                "matched": r.matched,
            }
            for r in ordered
        ]

    # -- data path -------------------------------------------------------------

    def forward(self, packet: Packet, in_port: str | None = None) -> str:
        """Apply the highest-priority matching rule. Returns the outcome:
        'delivered:<port>', 'dropped:default', 'dropped:rule', 'dropped:loop'
        or 'dropped:dead_port'."""
        src = in_port if in_port is not None else packet.src_port
        if src not in self.ports:
            raise UnknownPortError(f"packet arrived on unknown port {src!r}")
        self.port_in[src] += 1
        packet.hops += 1
        if packet.hops > MAX_HOPS:
            self.loop_drops += 1
            return "dropped:loop"

        best: FlowRule | None = None
        for rule in self.rules.values():
            if rule.match.covers(packet.flow_id, src, packet.transcoded):
                if best is None or rule.priority > best.priority:
                    best = rule
        if best is None:
            self.default_drops += 1
            return "dropped:default"

        best.matched += 1
        for rewrite in best.rewrites:
            setattr(packet, rewrite.field_name, rewrite.value)
        if best.is_drop:
            self.rule_drops += 1
            return "dropped:rule"
        sink = self._sinks.get(best.output or "")
        if sink is None:
            # Output port was released (e.g. transcoder torn down mid-chain).
            self.dead_port_drops += 1
            return "dropped:dead_port"
        self.port_out[best.output] += 1
        sink(packet)
        return f"delivered:{best.output}"

    def counters_consistent(self) -> bool:
        """Per-port in-counts == matched (live + retired rules) + default + loop drops."""
        total_in = sum(self.port_in.values())
        matched = sum(r.matched for r in self.rules.values()) + self._retired_matched
        return total_in == matched + self.default_drops + self.loop_drops
