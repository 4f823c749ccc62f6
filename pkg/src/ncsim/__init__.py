"""Event-driven MIMO amplify-and-forward precoding for networked control.

A simulation library and CLI for a sensor that amplifies and forwards plant
state over a MIMO fading channel to a remote estimator/controller: plant
discretization and LQG gain, channel gain law, conjugate-augmented Kalman
filtering, the closed-form urgency gradient with its event trigger, baseline
precoders, a value-iteration optimality oracle, and the estimation-error
bound machinery.
"""

from .channel import ChannelSample, SigmaStarDistribution, draw_channel
from .config import POLICIES, SimConfig, SimModel, build_model
from .episode import EpisodeMetrics, run_episode
from .errors import (ConfigError, ConvergenceError, DimensionError,
                     DivergenceError, InvalidCovarianceError, NcsimError,
                     NumericError)
from .plant import (CEControllerGain, ContinuousPlant, DiscretePlant,
                    discretize, solve_dare, step_plant, whiten)
from .precoder import AdpParameters, PrecodingAction, baseline_epds, propose
from .priority import (PriorityCoefficients, ThresholdEvaluation,
                       build_coefficients, gradient, phi1, phi2,
                       rank2_max_eig, threshold)

__version__ = "0.1.0"
