"""
Single-walker discrete-time quantum walk on the integer line.

A walker lives on modes ``(x, c)`` with ``x`` an integer position and ``c``
a two-level coin (polarization ``H``/``V``). One step of the walk is a coin
rotation followed by a coin-conditioned shift: ``H`` moves right, ``V`` moves
left. Amplitudes are stored densely over a contiguous position window that
grows by one site on each side per step, so the light cone of the initial
support is always covered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Mapping, NamedTuple, Union

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "Coin",
    "Mode",
    "CoinSpec",
    "HADAMARD",
    "WalkerState",
    "Distribution",
    "apply_coin",
    "apply_step",
    "evolve",
    "in_light_cone",
    "position_distribution",
    "mode_distribution",
    "propagate",
]

STATE_ATOL = 1e-12
DIST_ATOL = 1e-9
# interference leaves ~1e-32 residues on sites that cancel exactly in theory
PROB_FLOOR = 1e-28


class Coin(IntEnum):
    """Coin basis label; the integer value is the row index in a coin vector."""

    H = 0
    V = 1

    @property
    def flipped(self) -> "Coin":
        return Coin.V if self is Coin.H else Coin.H

    @classmethod
    def parse(cls, text: str | "Coin") -> "Coin":
        if isinstance(text, Coin):
            return text
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"coin must be H or V, got {text!r}") from None


class Mode(NamedTuple):
    x: int
    c: Coin

    def mirrored(self) -> "Mode":
        """Reflection x -> -x with H <-> V, the symmetry of the Hadamard network."""
        return Mode(-self.x, self.c.flipped)

    def __str__(self) -> str:
        return f"{self.x},{self.c.name}"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        """Parse ``"x,c"`` such as ``"-1,V"``."""
        try:
            xs, cs = text.split(",")
            return cls(int(xs), Coin.parse(cs))
        except ValueError:
            raise ValueError(f"mode must look like 'x,H' or 'x,V', got {text!r}") from None


def in_light_cone(mode: Mode, step: int) -> bool:
    """True if ``mode`` is reachable from the origin after ``step`` steps."""
    return abs(mode.x) <= step and (mode.x - step) % 2 == 0


PhaseFunction = Callable[[int, int], float]


@dataclass(frozen=True)
class CoinSpec:
    """
    Half-wave-plate coin with angle ``phase`` in degrees.

    ``phase`` is either a constant or a callable ``(x, t) -> degrees``. The
    coin matrix at each site is ``[[cos, sin], [sin, -cos]]`` of that angle,
    which is real orthogonal and an involution. The default 45 degrees gives
    the Hadamard coin.
    """

    phase: Union[float, PhaseFunction] = 45.0

    def angles(self, positions: NDArray[np.int64], t: int) -> NDArray[np.float64]:
        """Coin angles in radians for each position at step index ``t``."""
        if callable(self.phase):
            deg = np.array([self.phase(int(x), t) for x in positions], dtype=float)
        else:
            deg = np.full(len(positions), float(self.phase))
        return np.deg2rad(deg)

    def matrix(self, x: int = 0, t: int = 0) -> NDArray[np.float64]:
        (phi,) = self.angles(np.array([x]), t)
        c, s = math.cos(phi), math.sin(phi)
        return np.array([[c, s], [s, -c]])


HADAMARD = CoinSpec()


def propagate(
    amps: NDArray[np.complex128], x0: int, t: int, spec: CoinSpec
) -> tuple[NDArray[np.complex128], int]:
    """
    One walk step (coin, then shift) on an array whose first two axes are
    (position, coin). Extra trailing axes are carried along untouched.

    Returns the new array, one site wider on each side, and its new first
    position ``x0 - 1``.
    """
    n = amps.shape[0]
    positions = np.arange(x0, x0 + n)
    phi = spec.angles(positions, t)
    shape = (n,) + (1,) * (amps.ndim - 2)
    cos = np.cos(phi).reshape(shape)
    sin = np.sin(phi).reshape(shape)
    h, v = amps[:, 0], amps[:, 1]
    new = np.zeros((n + 2,) + amps.shape[1:], dtype=np.complex128)
    new[2:, 0] = cos * h + sin * v
    new[:n, 1] = sin * h - cos * v
    return new, x0 - 1


@dataclass(frozen=True)
class WalkerState:
    """
    Pure state of one walker at a given step.

    ``amps[i, c]`` is the amplitude of mode ``(x0 + i, c)``. Use
    :meth:`basis` or :meth:`from_modes` rather than building the array
    by hand.
    """

    step: int
    x0: int
    amps: NDArray[np.complex128] = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.amps, dtype=np.complex128)
        if a.ndim != 2 or a.shape[1] != 2 or a.shape[0] < 1:
            raise ValueError(f"amplitude array must have shape (L, 2), got {a.shape}")
        if self.step < 0:
            raise ValueError("step must be nonnegative")
        a.setflags(write=False)
        object.__setattr__(self, "amps", a)

    @classmethod
    def basis(cls, x: int, c: Coin | str, step: int = 0) -> "WalkerState":
        return cls.from_modes({Mode(x, Coin.parse(c)): 1.0}, step=step)

    @classmethod
    def from_modes(
        cls, amplitudes: Mapping[Mode, complex], step: int = 0, normalize: bool = False
    ) -> "WalkerState":
        if not amplitudes:
            raise ValueError("need at least one mode")
        xs = [m[0] for m in amplitudes]
        x0 = min(xs)
        a = np.zeros((max(xs) - x0 + 1, 2), dtype=np.complex128)
        for (x, c), amp in amplitudes.items():
            a[x - x0, Coin.parse(c)] += amp
        if normalize:
            a /= np.linalg.norm(a)
        return cls(step, x0, a)

    @classmethod
    def localized(cls, x: int, coin_vector: Iterable[complex], step: int = 0) -> "WalkerState":
        """Walker at position ``x`` with arbitrary (normalized here) coin vector."""
        h, v = coin_vector
        return cls.from_modes({Mode(x, Coin.H): h, Mode(x, Coin.V): v}, step, normalize=True)

    @property
    def positions(self) -> NDArray[np.int64]:
        return np.arange(self.x0, self.x0 + self.amps.shape[0])

    @property
    def modes(self) -> list[Mode]:
        """Mode labels in flattened-array order: position-major, H before V."""
        return [Mode(int(x), c) for x in self.positions for c in Coin]

    def amplitude(self, mode: Mode) -> complex:
        i = mode[0] - self.x0
        if 0 <= i < self.amps.shape[0]:
            return complex(self.amps[i, mode[1]])
        return 0j

    def as_dict(self, atol: float = 0.0) -> dict[Mode, complex]:
        return {
            m: complex(a)
            for m, a in zip(self.modes, self.amps.ravel())
            if abs(a) > atol
        }

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def vector_on(self, x0: int, length: int) -> NDArray[np.complex128]:
        """Flattened amplitude vector embedded on the window ``[x0, x0 + length)``."""
        lo = self.x0 - x0
        if lo < 0 or lo + self.amps.shape[0] > length:
            raise ValueError("window does not contain the state's support window")
        out = np.zeros((length, 2), dtype=np.complex128)
        out[lo:lo + self.amps.shape[0]] = self.amps
        return out.ravel()

    def inner(self, other: "WalkerState") -> complex:
        """``<self|other>`` over the union of both windows."""
        x0 = min(self.x0, other.x0)
        x1 = max(self.x0 + self.amps.shape[0], other.x0 + other.amps.shape[0])
        return complex(np.vdot(self.vector_on(x0, x1 - x0), other.vector_on(x0, x1 - x0)))


Key = Union[int, Mode]


def _sort_key(k: Key):
    return (k[0], int(k[1])) if isinstance(k, tuple) else (k, -1)


@dataclass(frozen=True)
class Distribution:
    """
    Probability table at one step, keyed by position or by :class:`Mode`.

    Entries are stored sorted (position ascending, H before V). Empty tables
    are allowed; nonempty ones must be nonnegative and sum to one within
    ``DIST_ATOL``.
    """

    step: int
    entries: Mapping[Key, float]

    def __post_init__(self):
        items = sorted(((k, float(p)) for k, p in self.entries.items()), key=lambda kv: _sort_key(kv[0]))
        items = [(Mode(k[0], Coin(k[1])) if isinstance(k, tuple) else int(k), p) for k, p in items]
        object.__setattr__(self, "entries", dict(items))
        if items:
            probs = np.array([p for _, p in items])
            if np.any(probs < -DIST_ATOL) or np.any(probs > 1 + DIST_ATOL):
                raise ValueError("probabilities must lie in [0, 1]")
            total = probs.sum()
            if abs(total - 1.0) > DIST_ATOL:
                raise ValueError(f"probabilities sum to {total!r}, expected 1")

    @property
    def coin_resolved(self) -> bool:
        return any(isinstance(k, tuple) for k in self.entries)

    def __getitem__(self, key: Key) -> float:
        return self.entries.get(key, 0.0)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def coin_summed(self) -> "Distribution":
        if not self.coin_resolved:
            return self
        out: dict[int, float] = {}
        for (x, _), p in self.entries.items():
            out[x] = out.get(x, 0.0) + p
        return Distribution(self.step, out)

    def mirrored(self) -> "Distribution":
        """Image under x -> -x (and H <-> V for coin-resolved tables)."""
        if self.coin_resolved:
            return Distribution(self.step, {k.mirrored(): p for k, p in self.entries.items()})
        return Distribution(self.step, {-k: p for k, p in self.entries.items()})

    def aligned(self, other: "Distribution") -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Both tables as arrays over the union of their keys."""
        keys = sorted(set(self.entries) | set(other.entries), key=_sort_key)
        return (
            np.array([self[k] for k in keys]),
            np.array([other[k] for k in keys]),
        )

    def max_abs_diff(self, other: "Distribution") -> float:
        p, q = self.aligned(other)
        return float(np.max(np.abs(p - q))) if len(p) else 0.0


def apply_coin(state: WalkerState, spec: CoinSpec = HADAMARD) -> WalkerState:
    """Rotate the coin at every site; the step counter is unchanged."""
    phi = spec.angles(state.positions, state.step)
    cos, sin = np.cos(phi), np.sin(phi)
    h, v = state.amps[:, 0], state.amps[:, 1]
    new = np.stack([cos * h + sin * v, sin * h - cos * v], axis=1)
    return WalkerState(state.step, state.x0, new)


def apply_step(state: WalkerState) -> WalkerState:
    """Coin-conditioned shift: ``(x, H) -> (x+1, H)``, ``(x, V) -> (x-1, V)``."""
    n = state.amps.shape[0]
    new = np.zeros((n + 2, 2), dtype=np.complex128)
    new[2:, 0] = state.amps[:, 0]
    new[:n, 1] = state.amps[:, 1]
    return WalkerState(state.step + 1, state.x0 - 1, new)


def evolve(state: WalkerState, n: int, spec: CoinSpec = HADAMARD) -> WalkerState:
    """Apply ``n`` walk steps, each a coin followed by a shift."""
    if n < 0:
        raise ValueError("step count must be nonnegative")
    amps, x0, t = state.amps, state.x0, state.step
    for _ in range(n):
        amps, x0 = propagate(amps, x0, t, spec)
        t += 1
    return WalkerState(t, x0, amps)


def position_distribution(state: WalkerState) -> Distribution:
    """Coin-summed detection probabilities; sites below ``PROB_FLOOR`` are omitted."""
    p = np.sum(np.abs(state.amps) ** 2, axis=1)
    return Distribution(state.step, {int(x): float(q) for x, q in zip(state.positions, p) if q > PROB_FLOOR})


def mode_distribution(state: WalkerState) -> Distribution:
    """Coin-resolved detection probabilities ``|amp(x, c)|**2``."""
    p = (np.abs(state.amps) ** 2).ravel()
    return Distribution(state.step, {m: float(q) for m, q in zip(state.modes, p) if q > PROB_FLOOR})
