"""
Two indistinguishable photons walking together, and dynamic conditioning.

The joint state is a complex tensor ``A[i, c, j, d]`` over ordered mode pairs
``((x0 + i, c), (x0 + j, d))``. For bosons it is exchange symmetric, which is
enforced after every operation by explicit symmetrization, so
``A[m1][m2] == A[m2][m1]`` holds bit for bit.

Conditioning removes one photon detected in a given mode and hands back the
state of the survivor. Two coefficient conventions exist and only differ on
doubly occupied modes:

``Convention.PROJECTOR``
    ``s[m] = A[m][m]`` and ``s[m'] = sqrt(2) A[m][m']`` for ``m' != m``.
``Convention.ANNIHILATION``
    ``s[m'] = sqrt(2) A[m][m']`` for every ``m'``, i.e. the bosonic
    annihilation operator acting on the two-photon Fock state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from .walk_core import (
    HADAMARD,
    Coin,
    CoinSpec,
    Distribution,
    PROB_FLOOR,
    Mode,
    WalkerState,
    evolve,
    in_light_cone,
    mode_distribution,
    propagate,
)

__all__ = [
    "Convention",
    "ConditioningSpec",
    "ConditionedOutcome",
    "TwoPhotonState",
    "ZeroConditioningProbability",
    "symmetrize",
    "initial_state",
    "classical_product",
    "classical_projection_prob",
    "evolve_joint",
    "condition",
    "conditioned_distribution",
    "conditioned_survivor",
    "detection_weights",
    "joint_position_distribution",
    "marginal_distribution",
    "joint_states",
]

ZERO_WEIGHT = 1e-12


class ZeroConditioningProbability(ValueError):
    """Raised when conditioning on a mode the joint state does not occupy."""


class Convention(Enum):
    PROJECTOR = "projector"
    ANNIHILATION = "annihilation"

    @classmethod
    def parse(cls, text: "str | Convention") -> "Convention":
        if isinstance(text, Convention):
            return text
        return cls(text.strip().lower())


@dataclass(frozen=True)
class TwoPhotonState:
    step: int
    x0: int
    amps: NDArray[np.complex128] = field(repr=False)
    classical: bool = False

    def __post_init__(self):
        a = np.asarray(self.amps, dtype=np.complex128)
        if a.ndim != 4 or a.shape[1] != 2 or a.shape[3] != 2 or a.shape[0] != a.shape[2]:
            raise ValueError(f"two-photon tensor must have shape (L, 2, L, 2), got {a.shape}")
        if not self.classical and not np.array_equal(a, a.transpose(2, 3, 0, 1)):
            raise ValueError("bosonic two-photon tensor must be exchange symmetric")
        a.setflags(write=False)
        object.__setattr__(self, "amps", a)

    @property
    def length(self) -> int:
        return self.amps.shape[0]

    @property
    def modes(self) -> list[Mode]:
        return [Mode(self.x0 + i, c) for i in range(self.length) for c in Coin]

    @property
    def matrix(self) -> NDArray[np.complex128]:
        """The tensor as a ``(2L, 2L)`` matrix in :attr:`modes` order."""
        n = 2 * self.length
        return self.amps.reshape(n, n)

    def index(self, mode: Mode) -> int | None:
        i = mode[0] - self.x0
        if 0 <= i < self.length:
            return 2 * i + int(mode[1])
        return None

    def amplitude(self, m1: Mode, m2: Mode) -> complex:
        i, j = self.index(m1), self.index(m2)
        if i is None or j is None:
            return 0j
        return complex(self.matrix[i, j])

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


def _symmetric(a: NDArray[np.complex128]) -> NDArray[np.complex128]:
    return (a + a.transpose(2, 3, 0, 1)) / 2


def _common_window(*states: WalkerState) -> tuple[int, int]:
    x0 = min(s.x0 for s in states)
    x1 = max(s.x0 + s.amps.shape[0] for s in states)
    return x0, x1 - x0


def symmetrize(psi1: WalkerState, psi2: WalkerState) -> TwoPhotonState:
    """Bosonic pair state built from two single-photon states at the same step."""
    if psi1.step != psi2.step:
        raise ValueError(f"step mismatch: {psi1.step} != {psi2.step}")
    x0, n = _common_window(psi1, psi2)
    u = psi1.vector_on(x0, n)
    v = psi2.vector_on(x0, n)
    overlap = np.vdot(u, v)
    a = np.outer(u, v) + np.outer(v, u)
    a /= math.sqrt(2 * (1 + abs(overlap) ** 2))
    a = a.reshape(n, 2, n, 2)
    return TwoPhotonState(psi1.step, x0, _symmetric(a))


def initial_state() -> TwoPhotonState:
    """One H and one V photon entering at the origin."""
    return symmetrize(WalkerState.basis(0, Coin.H), WalkerState.basis(0, Coin.V))


def classical_product(psi1: WalkerState, psi2: WalkerState) -> TwoPhotonState:
    """Unsymmetrized product state of two classically distinguishable walkers."""
    if psi1.step != psi2.step:
        raise ValueError(f"step mismatch: {psi1.step} != {psi2.step}")
    x0, n = _common_window(psi1, psi2)
    a = np.outer(psi1.vector_on(x0, n), psi2.vector_on(x0, n)).reshape(n, 2, n, 2)
    return TwoPhotonState(psi1.step, x0, a, classical=True)


def classical_projection_prob(state: TwoPhotonState, i: Mode, j: Mode) -> float:
    """Expectation of the exchange-symmetrized pair projector on modes ``i, j``."""
    return (abs(state.amplitude(i, j)) ** 2 + abs(state.amplitude(j, i)) ** 2) / 2


def evolve_joint(state: TwoPhotonState, n: int, spec: CoinSpec = HADAMARD) -> TwoPhotonState:
    """Apply the single-photon walk to both photons ``n`` times."""
    if n < 0:
        raise ValueError("step count must be nonnegative")
    a, x0, t = state.amps, state.x0, state.step
    for _ in range(n):
        a, _ = propagate(a, x0, t, spec)
        a = a.transpose(2, 3, 0, 1)
        a, x0 = propagate(a, x0, t, spec)
        a = a.transpose(2, 3, 0, 1)
        if not state.classical:
            a = _symmetric(a)
        t += 1
    return TwoPhotonState(t, x0, np.ascontiguousarray(a), classical=state.classical)


def joint_states(n_max: int, spec: CoinSpec = HADAMARD) -> list[TwoPhotonState]:
    """Joint states from :func:`initial_state` at steps ``0..n_max``."""
    states = [initial_state()]
    for _ in range(n_max):
        states.append(evolve_joint(states[-1], 1, spec))
    return states


@dataclass(frozen=True)
class ConditioningSpec:
    """Loss of one photon at step ``loss_step`` in ``mode``."""

    loss_step: int
    mode: Mode
    convention: Convention = Convention.PROJECTOR

    def __post_init__(self):
        if self.loss_step < 1:
            raise ValueError("loss step must be at least 1")
        mode = Mode(int(self.mode[0]), Coin.parse(self.mode[1]))
        if not in_light_cone(mode, self.loss_step):
            raise ValueError(f"mode {mode} is outside the step-{self.loss_step} light cone")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "convention", Convention.parse(self.convention))


@dataclass(frozen=True)
class ConditionedOutcome:
    survivor: WalkerState
    weight: float


def _survivor_vector(a: NDArray[np.complex128], k: int, convention: Convention) -> NDArray[np.complex128]:
    s = math.sqrt(2) * a[k]
    if convention is Convention.PROJECTOR:
        s[k] = a[k, k]
    return s


def condition(
    state: TwoPhotonState, mode: Mode, convention: Convention = Convention.PROJECTOR
) -> ConditionedOutcome:
    """
    Remove one photon found in ``mode`` and return the normalized survivor.

    Raises
    ------
    ZeroConditioningProbability
        If the projected state has squared norm below 1e-12.
    """
    convention = Convention.parse(convention)
    k = state.index(mode)
    if k is None:
        raise ZeroConditioningProbability(f"mode {mode} lies outside the state window at step {state.step}")
    s = _survivor_vector(state.matrix, k, convention)
    weight = float(np.vdot(s, s).real)
    if weight < ZERO_WEIGHT:
        raise ZeroConditioningProbability(
            f"conditioning on {mode} at step {state.step} has probability {weight:.3g}"
        )
    s = s / math.sqrt(weight)
    survivor = WalkerState(state.step, state.x0, s.reshape(state.length, 2))
    return ConditionedOutcome(survivor, weight)


def detection_weights(
    state: TwoPhotonState, convention: Convention = Convention.PROJECTOR
) -> dict[Mode, float]:
    """Conditioning weight of every mode in the state window (zeros included)."""
    convention = Convention.parse(convention)
    a = state.matrix
    p = np.abs(a) ** 2
    w = 2 * p.sum(axis=1)
    if convention is Convention.PROJECTOR:
        w -= np.diag(p)
    return {m: float(x) for m, x in zip(state.modes, w)}


def conditioned_survivor(cond: ConditioningSpec, spec: CoinSpec = HADAMARD) -> ConditionedOutcome:
    """Survivor state right after the loss, at step ``cond.loss_step``."""
    joint = evolve_joint(initial_state(), cond.loss_step, spec)
    return condition(joint, cond.mode, cond.convention)


def conditioned_distribution(
    cond: ConditioningSpec, n: int, spec: CoinSpec = HADAMARD
) -> tuple[Distribution, float]:
    """
    Coin-resolved output of the surviving photon at step ``n``.

    The pair starts in :func:`initial_state`, walks to ``cond.loss_step``,
    one photon is removed in ``cond.mode``, and the survivor walks on alone.
    Also returns the conditioning weight.
    """
    if n < cond.loss_step:
        raise ValueError(f"output step {n} precedes loss step {cond.loss_step}")
    outcome = conditioned_survivor(cond, spec)
    final = evolve(outcome.survivor, n - cond.loss_step, spec)
    return mode_distribution(final), outcome.weight


def joint_position_distribution(state: TwoPhotonState) -> dict[tuple[int, int], float]:
    """Coin-summed ``P(x, y)``; pairs with exactly zero probability are omitted."""
    p = (np.abs(state.amps) ** 2).sum(axis=(1, 3))
    # summation order differs between p[i, j] and p[j, i]; restore exact symmetry
    p = (p + p.T) / 2
    xs = range(state.x0, state.x0 + state.length)
    return {
        (x, y): float(p[i, j])
        for i, x in enumerate(xs)
        for j, y in enumerate(xs)
        if p[i, j] > PROB_FLOOR
    }


def marginal_distribution(state: TwoPhotonState) -> Distribution:
    """Single-photon marginal ``P(x, c)`` obtained by tracing out the partner."""
    p = (np.abs(state.matrix) ** 2).sum(axis=1)
    return Distribution(state.step, {m: float(q) for m, q in zip(state.modes, p) if q > PROB_FLOOR})
