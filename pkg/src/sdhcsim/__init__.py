"""Cycle-level SD host controller simulator: SD protocol, card model, SDHCI 1.0
controller, host cost model, polling driver and benchmark harness."""

from .bench import BenchResult, ConfigError, ScenarioConfig, emit, run_scenario
from .card import CardImage, CardModel, CardTiming
from .controller import ControllerConfig, SDHostController
from .cost import CostModel, HostClock, Regime
from .driver import CardInfo, SDHCDriver
from .system import System, TraceLog

__version__ = "0.1.0"

__all__ = [
    "BenchResult", "CardImage", "CardInfo", "CardModel", "CardTiming", "ConfigError", "ControllerConfig",
    "CostModel", "HostClock", "Regime", "ScenarioConfig", "SDHCDriver", "SDHostController", "System",
    "TraceLog", "emit", "run_scenario",
]
