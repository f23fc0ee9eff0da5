"""twinforge: how real does a drone fleet's digital twin need to be?

Trains DQN flight policies for a multi-UAV access network where part of the
fleet exists only as (noisy) virtual twins, prices the twin fidelity, and
tunes the physical/virtual split by gradient ascent on net utility.
"""

__version__ = "0.1.0"

from .channel import ChannelParams, MovementConfig, Position  # noqa: F401
from .fleet import DeploymentPlan, TwinEconomics  # noqa: F401
from .mdp_env import EnvConfig, JointAction, WorldState  # noqa: F401
from .neural import Network, NumericError  # noqa: F401
from .dqn_trainer import TrainConfig, TrainResult  # noqa: F401
from .twin_tuner import PerformanceSurface, TunerOutput  # noqa: F401
from .harness import ConfigError, ExperimentConfig  # noqa: F401
