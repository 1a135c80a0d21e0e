"""topoforge: microservices topology generation, planning, and simulation."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    ConnectionSpec,
    EndpointSpec,
    ImpairmentSpec,
    Path,
    Rate,
    RouterSpec,
    ServiceSpec,
    TimerSpec,
    TopologyConfig,
    parse_path,
)
from .parser import parse_config, serialize_config  # noqa: F401
from .validation import ValidatedTopology, validate  # noqa: F401
from .netplan import NetPlan, allocate_networks, plan_network, plan_routes  # noqa: F401
from .deploy import DeploymentPlan, GenerationOptions, build_plan, plan_deployment  # noqa: F401
from .compose import emit_compose  # noqa: F401
from .k8s import emit_k8s  # noqa: F401
from .sim import ModelParams, SimReport, SimWorld, Workload, build_sim, run  # noqa: F401
from .maxrate import measure_max_rate  # noqa: F401
