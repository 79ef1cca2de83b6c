"""Energy-aware local link repair for 6LoWPAN mesh-under routing, with a LOAD
baseline, a deterministic discrete-event simulator and an experiment harness."""

from .config import ScenarioConfig, load_config, parse_config
from .energy import EnergyCosts, analytic_repair_energy, repair_energy_ratios
from .engine import Simulator, run
from .checks import Violation, check_trace
from .experiment import compare, run_comparison_suite, run_one
from .metrics import MetricsReport, report_for
from .state import Protocol
from .trace import EventTrace

__version__ = "0.1.0"

__all__ = [
    "EnergyCosts", "EventTrace", "MetricsReport", "Protocol", "ScenarioConfig", "Simulator",
    "Violation", "analytic_repair_energy", "check_trace", "compare", "load_config", "parse_config",
    "repair_energy_ratios", "report_for", "run", "run_comparison_suite", "run_one",
]
