"""Structural validation: path resolution, linkage, graphs, ranges, capacity."""

import pytest

import topoforge as tf
from topoforge.errors import (
    CapacityExceededError,
    CyclicCallGraphError,
    DanglingRouterConnectionError,
    DuplicatePortError,
    MissingRouterLinkageError,
    NonRouterIntermediateHopError,
    OptionRangeError,
    TerminalNotServiceError,
    TimerTargetMissingError,
    UnknownEntityError,
    UnknownEntrypointError,
    ValidationError,
)
from topoforge.validation import (
    MAX_HOSTS_PER_SUBNET_V4,
    MAX_SERVICES,
    MAX_SUBNETS_V4,
    check_capacity,
)

from conftest import make_topology

_LEAF = "b:\n  type: service\n  port: 8001\n  endpoints:\n    - entrypoint: /\n      psize: 1\n"


def _svc_a(conn: str) -> str:
    return (
        "a:\n  type: service\n  port: 8000\n  endpoints:\n"
        "    - entrypoint: /\n      psize: 1\n      connections:\n"
        f"{conn}"
    )


class TestExampleTopology:
    def test_graphs(self, fig4_topology):
        t = fig4_topology
        assert t.call_graph == [
            (("frontend", "/"), ("db", "/")),
            (("frontend", "/payment"), ("payment", "/")),
        ]
        assert sorted(t.link_graph) == [("db", "r1"), ("frontend", "payment"), ("frontend", "r1")]
        assert [rp.hops for rp in t.path_table] == [
            ("frontend", "r1", "db"),
            ("frontend", "payment"),
        ]

    def test_pairs_and_bridge(self, fig4_topology):
        t = fig4_topology
        assert t.direct_pairs() == [("frontend", "payment")]
        assert t.routed_pairs() == [("db", "r1"), ("frontend", "r1")]
        assert t.bridge_members() == ["frontend", "payment"]
        assert t.needs_bridge()

    def test_order_preserved(self, fig4_topology):
        assert fig4_topology.ordered_entities() == ["frontend", "r1", "db", "payment"]

    def test_system_port_warning(self, fig4_topology):
        assert any("port 80" in w for w in fig4_topology.warnings)


class TestPathResolution:
    def test_unknown_entity(self):
        with pytest.raises(UnknownEntityError):
            make_topology(_svc_a("        - path: ghost\n          url: /\n") + _LEAF)

    def test_unknown_entrypoint(self):
        with pytest.raises(UnknownEntrypointError):
            make_topology(_svc_a("        - path: b\n          url: /missing\n") + _LEAF)

    def test_intermediate_must_be_router(self):
        text = (
            _svc_a("        - path: b->c\n          url: /\n")
            + _LEAF
            + "c:\n  type: service\n  port: 8002\n  endpoints:\n    - entrypoint: /\n      psize: 1\n"
        )
        with pytest.raises(NonRouterIntermediateHopError):
            make_topology(text)

    def test_terminal_must_be_service(self):
        text = _svc_a("        - path: r\n          url: /\n") + _LEAF + "r:\n  type: router\n  connections:\n    - path: b\n"
        with pytest.raises(TerminalNotServiceError):
            make_topology(text)

    def test_repeated_hop_rejected(self):
        text = (
            _svc_a("        - path: r->r->b\n          url: /\n")
            + _LEAF
            + "r:\n  type: router\n  connections:\n    - path: b\n"
        )
        with pytest.raises(ValidationError, match="repeated hop"):
            make_topology(text)

    def test_source_in_own_path_rejected(self):
        with pytest.raises(ValidationError, match="repeated hop"):
            make_topology(_svc_a("        - path: a\n          url: /\n") + _LEAF)


class TestRouterLinkage:
    def test_missing_linkage(self):
        text = (
            _svc_a("        - path: r->b\n          url: /\n")
            + _LEAF
            + "c:\n  type: service\n  port: 8002\n  endpoints:\n    - entrypoint: /\n      psize: 1\n"
            + "r:\n  type: router\n  connections:\n    - path: c\n"
        )
        with pytest.raises(MissingRouterLinkageError) as ei:
            make_topology(text)
        assert ei.value.router == "r"
        assert ei.value.expected_next_hop == "b"

    def test_unreferenced_router_is_warning(self):
        text = _svc_a("        - path: b\n          url: /\n") + _LEAF + "r:\n  type: router\n  connections:\n    - path: b\n"
        t = make_topology(text)
        assert any("not referenced" in w for w in t.warnings)

    def test_dangling_connection_on_referenced_router(self):
        text = (
            _svc_a("        - path: r->b\n          url: /\n")
            + _LEAF
            + "c:\n  type: service\n  port: 8002\n  endpoints:\n    - entrypoint: /\n      psize: 1\n"
            + "r:\n  type: router\n  connections:\n    - path: b\n    - path: c\n"
        )
        with pytest.raises(DanglingRouterConnectionError):
            make_topology(text)

    def test_two_hop_router_chain(self):
        text = (
            _svc_a("        - path: r1->r2->b\n          url: /\n")
            + _LEAF
            + "r1:\n  type: router\n  connections:\n    - path: r2\n"
            + "r2:\n  type: router\n  connections:\n    - path: b\n"
        )
        t = make_topology(text)
        assert t.path_table[0].hops == ("a", "r1", "r2", "b")
        assert t.routed_pairs() == [("a", "r1"), ("b", "r2"), ("r1", "r2")]


class TestCallGraph:
    def test_two_node_cycle(self):
        text = (
            _svc_a("        - path: b\n          url: /\n")
            + "b:\n  type: service\n  port: 8001\n  endpoints:\n"
            "    - entrypoint: /\n      psize: 1\n      connections:\n"
            "        - path: a\n          url: /\n"
        )
        with pytest.raises(CyclicCallGraphError) as ei:
            make_topology(text)
        assert len(ei.value.cycle) >= 3

    def test_self_loop_via_other_entrypoint(self):
        text = (
            "a:\n  type: service\n  port: 8000\n  endpoints:\n"
            "    - entrypoint: /\n      psize: 1\n      connections:\n"
            "        - path: b\n          url: /\n"
            "    - entrypoint: /x\n      psize: 1\n"
            "b:\n  type: service\n  port: 8001\n  endpoints:\n"
            "    - entrypoint: /\n      psize: 1\n      connections:\n"
            "        - path: a\n          url: /x\n"
        )
        # a/ -> b/ -> a/x is a DAG (distinct endpoint nodes); must validate
        t = make_topology(text)
        assert len(t.call_graph) == 2

    def test_diamond_is_acyclic(self):
        text = (
            "a:\n  type: service\n  port: 8000\n  endpoints:\n"
            "    - entrypoint: /\n      psize: 1\n      connections:\n"
            "        - path: b\n          url: /\n        - path: c\n          url: /\n"
            "b:\n  type: service\n  port: 8001\n  endpoints:\n"
            "    - entrypoint: /\n      psize: 1\n      connections:\n"
            "        - path: d\n          url: /\n"
            "c:\n  type: service\n  port: 8002\n  endpoints:\n"
            "    - entrypoint: /\n      psize: 1\n      connections:\n"
            "        - path: d\n          url: /\n"
            "d:\n  type: service\n  port: 8003\n  endpoints:\n    - entrypoint: /\n      psize: 1\n"
        )
        assert len(make_topology(text).call_graph) == 4


class TestPortsAndOptions:
    def test_duplicate_port(self):
        text = (
            "a:\n  type: service\n  port: 8000\n  endpoints:\n    - entrypoint: /\n      psize: 1\n"
            "b:\n  type: service\n  port: 8000\n  endpoints:\n    - entrypoint: /\n      psize: 1\n"
        )
        with pytest.raises(DuplicatePortError):
            make_topology(text)

    @pytest.mark.parametrize("port", [0, -1, 65536])
    def test_port_out_of_range(self, port):
        with pytest.raises(OptionRangeError):
            make_topology(
                f"a:\n  type: service\n  port: {port}\n  endpoints:\n    - entrypoint: /\n      psize: 1\n"
            )

    def test_port_65535_allowed(self):
        make_topology("a:\n  type: service\n  port: 65535\n  endpoints:\n    - entrypoint: /\n      psize: 1\n")

    @pytest.mark.parametrize(
        "opt",
        ["loss: 150%", "corrupt: 101", "mtu: 40", "mtu: 70000", "buffer_size: 0"],
    )
    def test_option_out_of_range(self, opt):
        text = _svc_a(f"        - path: b\n          url: /\n          {opt}\n") + _LEAF
        with pytest.raises(OptionRangeError):
            make_topology(text)

    @pytest.mark.parametrize("opt", ["jitter: 10us", "reorder: 5%"])
    def test_delay_dependent_options(self, opt):
        text = _svc_a(f"        - path: b\n          url: /\n          {opt}\n") + _LEAF
        with pytest.raises(OptionRangeError):
            make_topology(text)
        # fine once a delay is present
        make_topology(
            _svc_a(f"        - path: b\n          url: /\n          delay: 1ms\n          {opt}\n") + _LEAF
        )

    def test_timer_without_base_value(self):
        text = _svc_a(
            "        - path: b\n          url: /\n          timers:\n"
            "            - option: loss\n              start: 1\n              duration: 2\n              newValue: 5%\n"
        ) + _LEAF
        with pytest.raises(TimerTargetMissingError):
            make_topology(text)

    def test_timer_new_value_range_checked(self):
        text = _svc_a(
            "        - path: b\n          url: /\n          loss: 1%\n          timers:\n"
            "            - option: loss\n              start: 1\n              duration: 2\n              newValue: 150%\n"
        ) + _LEAF
        with pytest.raises(OptionRangeError):
            make_topology(text)

    def test_link_impairment_merge_first_wins(self):
        text = (
            _svc_a("        - path: r->b\n          url: /\n          delay: 1ms\n")
            + _LEAF
            + "r:\n  type: router\n  connections:\n    - path: b\n      delay: 2ms\n"
        )
        t = make_topology(text)
        assert t.link_graph[("a", "r")].impairments.delay == 1000.0
        assert t.link_graph[("b", "r")].impairments.delay == 2000.0
        assert t.link_graph[("a", "r")].declared_by["delay"] == "a"


class TestCapacityLimits:
    def test_subnet_boundary(self):
        check_capacity("v4", MAX_SUBNETS_V4, 3, 1)
        with pytest.raises(CapacityExceededError):
            check_capacity("v4", MAX_SUBNETS_V4 + 1, 3, 1)

    def test_hosts_boundary(self):
        assert MAX_HOSTS_PER_SUBNET_V4 == 1022
        check_capacity("v4", 1, MAX_HOSTS_PER_SUBNET_V4, 1)
        with pytest.raises(CapacityExceededError):
            check_capacity("v4", 1, MAX_HOSTS_PER_SUBNET_V4 + 1, 1)

    def test_service_boundary(self):
        assert MAX_SERVICES == 64_510
        check_capacity("v4", 1, 3, MAX_SERVICES)
        with pytest.raises(CapacityExceededError):
            check_capacity("v4", 1, 3, MAX_SERVICES + 1)

    def test_v6_is_roomier(self):
        check_capacity("v6", MAX_SUBNETS_V4 + 1, MAX_HOSTS_PER_SUBNET_V4 + 1, 1)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            check_capacity("v5", 1, 1, 1)
