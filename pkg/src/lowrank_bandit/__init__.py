"""Low-rank bandits over latent user mixtures.

Moment estimation from uniform exploration sessions, feature recovery by a
robust tensor power method, per-user OFUL on the recovered features, and a
seeded simulator with the usual baselines.
"""

from .env import GeneratorSpec, LatentModel, generate_instance
from .features import FeatureEstimate, ModelConstants, estimate_features
from .moments import InteractionRecord, Kind, MomentEstimates
from .oful import Mode, OfulParams, OfulState
from .policies import PolicyKind, PolicySpec, RunResult, Schedule, ScheduleKind, run_policy
from .rtp import RtpConfig

__version__ = "0.1.0"

__all__ = [
    "FeatureEstimate",
    "GeneratorSpec",
    "InteractionRecord",
    "Kind",
    "LatentModel",
    "Mode",
    "ModelConstants",
    "MomentEstimates",
    "OfulParams",
    "OfulState",
    "PolicyKind",
    "PolicySpec",
    "RtpConfig",
    "RunResult",
    "Schedule",
    "ScheduleKind",
    "estimate_features",
    "generate_instance",
    "run_policy",
]
