"""Discrete-time quantum walks of one and two photons with controlled photon loss."""

__version__ = "0.1.0"

from .walk_core import (
    HADAMARD,
    Coin,
    CoinSpec,
    Distribution,
    Mode,
    WalkerState,
    apply_coin,
    apply_step,
    evolve,
    mode_distribution,
    position_distribution,
)
from .two_photon import (
    ConditionedOutcome,
    ConditioningSpec,
    Convention,
    TwoPhotonState,
    ZeroConditioningProbability,
    classical_product,
    classical_projection_prob,
    condition,
    conditioned_distribution,
    detection_weights,
    evolve_joint,
    initial_state,
    joint_position_distribution,
    symmetrize,
)
