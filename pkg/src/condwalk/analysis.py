"""
Derived quantities: similarity, loss averaging, spreading, recurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .two_photon import (
    ConditionedOutcome,
    Convention,
    TwoPhotonState,
    condition,
    detection_weights,
    evolve_joint,
    initial_state,
    joint_position_distribution,
)
from .walk_core import (
    HADAMARD,
    Coin,
    CoinSpec,
    Distribution,
    PROB_FLOOR,
    Mode,
    WalkerState,
    evolve,
    mode_distribution,
    position_distribution,
    propagate,
)

__all__ = [
    "AveragingKind",
    "AveragingScheme",
    "RecurrenceSeries",
    "similarity",
    "average_conditioned",
    "variance_1d",
    "variance_2d",
    "ballistic_fit",
    "variance_series_single",
    "variance_series_joint",
    "variance_series_conditioned",
    "monitored_recurrence_single",
    "civilization_recurrence",
    "symmetric_reference",
]


def symmetric_reference(n: int, spec: CoinSpec = HADAMARD) -> Distribution:
    """Coin-resolved distribution at step ``n`` of the walker ``|0> (|H> + i|V>)/sqrt(2)``."""
    return mode_distribution(evolve(WalkerState.localized(0, (1, 1j)), n, spec))


def similarity(p: ArrayLike | Distribution, q: ArrayLike | Distribution) -> float:
    """
    Normalized overlap ``sum(p*q) / sqrt(sum(p**2) * sum(q**2))``.

    Distributions are aligned on the union of their keys; arrays must have
    equal shapes. Returns a value in [0, 1] for nonnegative inputs.
    """
    if isinstance(p, Distribution) and isinstance(q, Distribution):
        a, b = p.aligned(q)
    else:
        a = np.asarray(p, dtype=float)
        b = np.asarray(q, dtype=float)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("similarity is defined for nonnegative arrays")
    na, nb = float(np.sum(a * a)), float(np.sum(b * b))
    if na == 0 or nb == 0:
        raise ValueError("similarity of an all-zero array is undefined")
    return float(min(np.sum(a * b) / math.sqrt(na * nb), 1.0))


class AveragingKind(Enum):
    UNIFORM = "uniform"
    BORN = "born"


@dataclass(frozen=True)
class AveragingScheme:
    """
    How conditioned outputs are mixed. ``UNIFORM`` gives each admissible
    (loss step, mode) pair the same weight; ``BORN`` weights by conditioning
    probability. A pair is admissible when its weight exceeds ``epsilon``.
    """

    kind: AveragingKind = AveragingKind.UNIFORM
    epsilon: float = 1e-12


def average_conditioned(
    loss_steps: Iterable[int],
    n: int,
    scheme: AveragingScheme = AveragingScheme(),
    convention: Convention = Convention.PROJECTOR,
    spec: CoinSpec = HADAMARD,
) -> Distribution:
    """Mix conditioned survivor distributions at step ``n`` over all admissible loss modes."""
    steps = sorted(set(loss_steps))
    if not steps:
        raise ValueError("no loss steps given")
    if steps[0] < 1 or steps[-1] >= n:
        raise ValueError(f"loss steps must lie in [1, {n - 1}]")
    convention = Convention.parse(convention)

    joint = initial_state()
    coeffs: list[float] = []
    outputs: list[NDArray[np.float64]] = []
    x0_out = None
    for m in steps:
        joint = evolve_joint(joint, m - joint.step, spec)
        for mode, w in detection_weights(joint, convention).items():
            if w <= scheme.epsilon:
                continue
            out = condition(joint, mode, convention)
            final = evolve(out.survivor, n - m, spec)
            # all survivors start inside the origin's light cone, so windows coincide at step n
            x0_out = final.x0
            outputs.append(np.abs(final.amps) ** 2)
            coeffs.append(1.0 if scheme.kind is AveragingKind.UNIFORM else w)
    if not coeffs:
        raise ValueError("no admissible loss modes")
    a = np.array(coeffs) / math.fsum(coeffs)
    shapes = {o.shape for o in outputs}
    if len(shapes) != 1:
        raise RuntimeError(f"inconsistent output windows {shapes}")
    mixed = np.tensordot(a, np.stack(outputs), axes=1)
    entries = {
        Mode(x0_out + i, c): float(mixed[i, c])
        for i in range(mixed.shape[0])
        for c in Coin
        if mixed[i, c] > PROB_FLOOR
    }
    return Distribution(n, entries)


def variance_1d(p: Distribution) -> float:
    """Position variance; coin-resolved tables are summed over the coin first."""
    d = p.coin_summed()
    x = np.array(list(d.entries), dtype=float)
    w = np.array(list(d.entries.values()))
    mean = np.sum(x * w)
    return float(max(np.sum((x - mean) ** 2 * w), 0.0))


def variance_2d(p: Mapping[tuple[int, int], float]) -> float:
    """Variance of the mean coordinate ``(x + y) / 2`` of a joint position table."""
    keys = np.array(list(p), dtype=float).reshape(-1, 2)
    w = np.array(list(p.values()), dtype=float)
    z = keys.mean(axis=1)
    mean = np.sum(z * w)
    return float(max(np.sum((z - mean) ** 2 * w), 0.0))


def ballistic_fit(
    var_series: Sequence[tuple[int, float]] | Mapping[int, float],
    window: tuple[int, int] = (10, 50),
) -> float:
    """Least-squares slope of log Var against log t for ``lo <= t <= hi``."""
    series = dict(var_series.items() if isinstance(var_series, Mapping) else var_series)
    lo, hi = window
    ts = [t for t in sorted(series) if lo <= t <= hi]
    if len(ts) < 2 or ts[0] != lo or ts[-1] != hi:
        raise ValueError(f"window {window} not covered by the series")
    v = np.array([series[t] for t in ts], dtype=float)
    if np.any(v <= 0):
        raise ValueError("variance must be positive inside the fit window")
    slope, _ = np.polyfit(np.log(ts), np.log(v), 1)
    return float(slope)


def variance_series_single(initial: WalkerState, n_max: int, spec: CoinSpec = HADAMARD) -> dict[int, float]:
    """Position variance of a single walker at each step up to ``n_max``."""
    out = {}
    s = initial
    for _ in range(initial.step, n_max):
        s = evolve(s, 1, spec)
        out[s.step] = variance_1d(position_distribution(s))
    return out


def variance_series_joint(n_max: int, spec: CoinSpec = HADAMARD) -> dict[int, float]:
    """Mean-coordinate variance of the two-photon walk from the H/V input pair."""
    out = {}
    s = initial_state()
    for _ in range(n_max):
        s = evolve_joint(s, 1, spec)
        out[s.step] = variance_2d(joint_position_distribution(s))
    return out


def variance_series_conditioned(outcome: ConditionedOutcome, n_max: int, spec: CoinSpec = HADAMARD) -> dict[int, float]:
    """Variance of a conditioned survivor at each step after the loss."""
    return variance_series_single(outcome.survivor, n_max, spec)


class RecurrenceProtocol(Enum):
    SINGLE = "single-monitored"
    CIVILIZATION = "civilization"


@dataclass(frozen=True)
class RecurrenceSeries:
    """Cumulative return probabilities ``values[T-1] = R(T)`` for ``T = 1..horizon``."""

    horizon: int
    values: NDArray[np.float64]
    protocol: RecurrenceProtocol

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.horizon,):
            raise ValueError("one value per step is required")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, t: int) -> float:
        """``R(t)`` for ``1 <= t <= horizon``."""
        if not 1 <= t <= self.horizon:
            raise IndexError(t)
        return float(self.values[t - 1])

    def is_monotone(self, atol: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.values) >= -atol))


def _origin_row(state_x0: int, length: int) -> int | None:
    i = -state_x0
    return i if 0 <= i < length else None


def _first_returns(initial: WalkerState, horizon: int, spec: CoinSpec) -> NDArray[np.float64]:
    """
    First-arrival probabilities at x = 0 under an absorbing origin, for steps
    ``initial.step + 1 .. horizon``. The state is kept unnormalized so each
    entry is directly the probability of first arrival at that step.
    """
    amps, x0, t = initial.amps, initial.x0, initial.step
    out = []
    while t < horizon:
        amps, x0 = propagate(amps, x0, t, spec)
        t += 1
        i = _origin_row(x0, amps.shape[0])
        if i is None:
            out.append(0.0)
            continue
        out.append(float(np.sum(np.abs(amps[i]) ** 2)))
        amps = amps.copy()
        amps[i] = 0
    return np.array(out)


def monitored_recurrence_single(
    initial: WalkerState, horizon: int, spec: CoinSpec = HADAMARD
) -> RecurrenceSeries:
    """
    Return probability to the origin within ``T`` steps under a monitored
    (absorbing) origin, for ``T = 1..horizon`` steps after ``initial``.

    After each step the origin is measured; on a miss both coin components at
    x = 0 are removed and the walk continues. ``R(T) = 1 - prod(1 - q_t)``
    with ``q_t`` the detection probability of the surviving branch, which
    equals the running sum of first-arrival probabilities.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    first = _first_returns(initial, initial.step + horizon, spec)
    return RecurrenceSeries(horizon, np.minimum(np.cumsum(first), 1.0), RecurrenceProtocol.SINGLE)


def _origin_indices(state: TwoPhotonState) -> list[int]:
    i = _origin_row(state.x0, state.length)
    return [] if i is None else [2 * i, 2 * i + 1]


def civilization_recurrence(
    horizon: int,
    convention: Convention = Convention.PROJECTOR,
    spec: CoinSpec = HADAMARD,
) -> RecurrenceSeries:
    """
    Probability that the second photon visits the origin by step ``T`` given
    that the first photon was found there at an earlier step.

    Stage one monitors the origin on the pair: at each step ``t`` the
    probability that the first photon is detected there is
    ``p_first(t) = S(t-1) * q(t)``, where ``q(t)`` is the probability that at
    least one photon sits at the origin in the undetected branch and ``S`` is
    the survival of that branch. On a hit the survivor is the mixture of the
    conditioned states for each origin coin mode, weighted by their
    conditioning weights. On a miss all components with a photon at the origin
    are removed and the branch is renormalized.

    Stage two runs :func:`monitored_recurrence_single` on every survivor from
    step ``t`` on, giving ``r(t, T)``. The result is

        R_civ(T) = sum_{t<T} p_first(t) r(t, T) / sum_{t<T} p_first(t).

    Raises
    ------
    ValueError
        If no origin detection is possible before ``horizon``.
    """
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    convention = Convention.parse(convention)

    joint = initial_state()
    survival = 1.0
    p_first = np.zeros(horizon + 1)
    # arrivals[t, T] = r(t, T) for the survivor ensemble created at step t
    arrivals = np.zeros((horizon + 1, horizon + 1))

    for t in range(1, horizon):
        joint = evolve_joint(joint, 1, spec)
        idx = _origin_indices(joint)
        if not idx:
            continue
        a = joint.matrix
        keep = np.ones(a.shape[0], dtype=bool)
        keep[idx] = False
        miss = float(np.sum(np.abs(a[np.ix_(keep, keep)]) ** 2))
        q = 1.0 - miss
        if q <= 1e-15:
            continue
        p_first[t] = survival * q

        weights = detection_weights(joint, convention)
        origin_modes = [joint.modes[k] for k in idx if weights[joint.modes[k]] > 1e-12]
        total = sum(weights[m] for m in origin_modes)
        cum = np.zeros(horizon - t)
        for m in origin_modes:
            survivor = condition(joint, m, convention).survivor
            first = _first_returns(survivor, horizon, spec)
            cum += weights[m] / total * np.cumsum(first)
        arrivals[t, t + 1:] = np.minimum(cum, 1.0)

        survival *= miss
        if miss <= 1e-300:
            break
        a = a.copy()
        a[~keep, :] = 0
        a[:, ~keep] = 0
        a /= math.sqrt(miss)
        joint = TwoPhotonState(joint.step, joint.x0, a.reshape(joint.amps.shape))

    values = np.zeros(horizon)
    for T in range(1, horizon + 1):
        den = p_first[1:T].sum()
        if den > 0:
            values[T - 1] = float(np.dot(p_first[1:T], arrivals[1:T, T]) / den)
    if not np.any(p_first > 0):
        raise ValueError(f"no origin detection possible within {horizon} steps")
    return RecurrenceSeries(horizon, values, RecurrenceProtocol.CIVILIZATION)
