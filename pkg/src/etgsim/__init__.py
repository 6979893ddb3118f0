"""Event-triggered distributed control of a DC microgrid: simulator and reports."""
from .config import ConfigError, ScenarioConfig, load_config
from .scenario import SimResult, run, run_pair

__version__ = "0.1.0"

__all__ = ["ConfigError", "ScenarioConfig", "SimResult", "load_config", "run", "run_pair", "__version__"]
