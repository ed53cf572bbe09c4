"""Inference-time affordance learning on a simulated tabletop."""

from .orchestrate import METHODS, RunConfig, run_experiment, run_trial
from .tasks import load_task_registry

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "RunConfig",
    "run_experiment",
    "run_trial",
    "load_task_registry",
    "__version__",
]
