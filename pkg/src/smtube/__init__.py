"""Set-membership learning of multi-step predictors and robust tube MPC synthesis.

The toolkit identifies p-steps-ahead prediction models with guaranteed
worst-case error bounds from input/output data of an unknown stable linear
plant, derives a perturbed state-space model with a tight process-disturbance
bound, and synthesizes a robust tube-based tracking controller from the
learned quantities.
"""

from smtube import cli, dataio, linopt, rmpc, setcalc, sim, smid, ssrealize
from smtube.errors import (
    EmptyFPS,
    EmptyTightenedSet,
    QPInfeasible,
    SingularGain,
    SmtubeError,
    UnboundedFPS,
    UnstableRealization,
    WeightsInfeasible,
)

__version__ = "0.1.0"

__all__ = [
    "cli",
    "dataio",
    "linopt",
    "rmpc",
    "setcalc",
    "sim",
    "smid",
    "ssrealize",
    "SmtubeError",
    "EmptyFPS",
    "UnboundedFPS",
    "UnstableRealization",
    "SingularGain",
    "WeightsInfeasible",
    "EmptyTightenedSet",
    "QPInfeasible",
]
