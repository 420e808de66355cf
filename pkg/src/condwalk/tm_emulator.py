"""
Monte-Carlo emulation of the time-multiplexed fibre-loop walk.

Each run injects at most one photon pair. In every roundtrip each photon in
the loop is routed to the detectors with probability ``outcoupling_prob``.
Because this outcoupling attenuates every mode equally, the photons that stay
in the loop keep their joint state; only the detected photons are sampled:

* if both photons leave in the same roundtrip, their ordered mode pair is
  drawn from ``|A[a][b]|**2`` of the joint state at that step;
* otherwise the first photon's mode is drawn from the conditioning weights of
  the joint state (``Convention.ANNIHILATION`` by default) and the survivor's
  mode from the conditioned single-photon state at its own exit step.

Detector efficiency and setup transmission are independent per photon, and
two clicks on one channel closer than the dead time keep only the first.

Random numbers come from one stream per block of ``BLOCK_SIZE`` consecutive
run ids, derived as ``SeedSequence(rng_seed, spawn_key=(block,))``. Output is
therefore independent of how blocks are scheduled over workers.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence, Union, overload

import numpy as np
from numpy.typing import NDArray

from .two_photon import Convention, condition, detection_weights, joint_states
from .walk_core import HADAMARD, Coin, Distribution, Mode, evolve

__all__ = [
    "EmulatorConfig",
    "ConfigError",
    "EmptySelection",
    "Detector",
    "ClickEvent",
    "ClickStream",
    "SimulationDiagnostics",
    "CLICK_DTYPE",
    "BLOCK_SIZE",
    "encode_time",
    "decode_time",
    "simulate_runs",
    "reconstruct_conditioned",
    "reconstruct_loss_averaged",
    "effective_rate",
]

BLOCK_SIZE = 1 << 16

CLICK_DTYPE = np.dtype(
    [
        ("run_id", "<u8"),
        ("step", "<u2"),
        ("position", "<i2"),
        ("polarization", "u1"),
        ("detector", "u1"),
        ("time_ns", "<f8"),
    ]
)
BINARY_MAGIC = b"TMCLICK1"


class ConfigError(ValueError):
    pass


class EmptySelection(ValueError):
    """No coincidences match the requested post-selection."""


class Detector(IntEnum):
    H_PORT = 0
    V_PORT = 1

    @property
    def label(self) -> str:
        return "H-port" if self is Detector.H_PORT else "V-port"

    @classmethod
    def parse(cls, text: str) -> "Detector":
        return {"H-port": cls.H_PORT, "V-port": cls.V_PORT}[text]


@dataclass(frozen=True)
class EmulatorConfig:
    """Loop, source and detector parameters. Times in ns, rates in Hz."""

    roundtrip_ns: float = 5322.7
    bin_separation_ns: float = 171.6
    outcoupling_prob: float = 0.15
    detector_efficiency: float = 0.80
    dead_time_ns: float = 70.0
    setup_klyshko: float = 0.20
    pair_generation_prob: float = 0.1
    repetition_rate_hz: float = 1e4
    max_step: int = 10
    runs: int = 10_000
    rng_seed: int = 0
    convention: Convention = Convention.ANNIHILATION

    def __post_init__(self):
        object.__setattr__(self, "convention", Convention.parse(self.convention))
        for name in ("detector_efficiency", "setup_klyshko", "pair_generation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.outcoupling_prob <= 1.0:
            raise ConfigError(f"outcoupling_prob must lie in (0, 1], got {self.outcoupling_prob}")
        if self.dead_time_ns < 0 or self.bin_separation_ns <= self.dead_time_ns:
            raise ConfigError("bin separation must exceed the detector dead time")
        if self.max_step < 1 or self.runs < 0:
            raise ConfigError("max_step must be >= 1 and runs >= 0")
        if self.repetition_rate_hz <= 0:
            raise ConfigError("repetition rate must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must be a 64-bit unsigned integer")
        if (self.max_step + 0.5) * self.bin_separation_ns >= self.roundtrip_ns:
            raise ConfigError(
                f"time bins of consecutive roundtrips overlap for max_step={self.max_step}"
            )
        if self.max_step * (self.roundtrip_ns + self.bin_separation_ns) >= self.period_ns:
            raise ConfigError("walk does not finish before the next run starts")

    @property
    def period_ns(self) -> float:
        return 1e9 / self.repetition_rate_hz

    @property
    def click_efficiency(self) -> float:
        return self.detector_efficiency * self.setup_klyshko


def encode_time(run_id, step, position, config: EmulatorConfig):
    """
    Arrival time of the time bin ``(run_id, step, position)``.

    The bin offset inside a roundtrip counts passes through the long arm,
    ``(position + step) / 2``. Works on scalars and numpy arrays alike with
    the same operation order, so results agree bit for bit.
    """
    offset = (np.asarray(position, dtype=np.int64) + step) // 2
    t = (
        np.asarray(run_id, dtype=np.float64) / config.repetition_rate_hz * 1e9
        + np.asarray(step, dtype=np.float64) * config.roundtrip_ns
        + offset.astype(np.float64) * config.bin_separation_ns
    )
    return float(t) if t.ndim == 0 else t


def decode_time(time_ns: float, config: EmulatorConfig) -> tuple[int, int, int]:
    """Inverse of :func:`encode_time` for bins allowed by ``config``."""
    half = 0.5 * config.bin_separation_ns
    run = int((time_ns + half) // config.period_ns)
    rel = time_ns - run / config.repetition_rate_hz * 1e9
    step = int((rel + half) // config.roundtrip_ns)
    k = int(round((rel - step * config.roundtrip_ns) / config.bin_separation_ns))
    return run, step, 2 * k - step


class ClickEvent(NamedTuple):
    run_id: int
    step: int
    position: int
    polarization: Coin
    detector: Detector
    time_ns: float

    @property
    def mode(self) -> Mode:
        return Mode(self.position, self.polarization)


@dataclass(frozen=True)
class SimulationDiagnostics:
    generated_pairs: int = 0
    simultaneous_exits: int = 0
    efficiency_drops: int = 0
    dead_time_drops: int = 0
    cross_bin_drops: int = 0

    def __add__(self, other: "SimulationDiagnostics") -> "SimulationDiagnostics":
        return SimulationDiagnostics(
            *(a + b for a, b in zip(self.__dict__.values(), other.__dict__.values()))
        )


class ClickStream(Sequence[ClickEvent]):
    """
    Time-ordered click records backed by a packed numpy structured array.

    Iterating or indexing yields :class:`ClickEvent`; :attr:`records` exposes
    the raw array for vectorized work.
    """

    def __init__(self, records: NDArray, diagnostics: SimulationDiagnostics | None = None):
        self.records = np.ascontiguousarray(records, dtype=CLICK_DTYPE)
        self.diagnostics = diagnostics or SimulationDiagnostics()

    @classmethod
    def from_events(cls, events: Iterable[ClickEvent]) -> "ClickStream":
        rows = [(e.run_id, e.step, e.position, int(e.polarization), int(e.detector), e.time_ns) for e in events]
        return cls(np.array(rows, dtype=CLICK_DTYPE))

    def __len__(self) -> int:
        return len(self.records)

    @overload
    def __getitem__(self, i: int) -> ClickEvent: ...
    @overload
    def __getitem__(self, i: slice) -> "ClickStream": ...

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ClickStream(self.records[i])
        r = self.records[i]
        return ClickEvent(
            int(r["run_id"]), int(r["step"]), int(r["position"]),
            Coin(int(r["polarization"])), Detector(int(r["detector"])), float(r["time_ns"]),
        )

    def __iter__(self) -> Iterator[ClickEvent]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClickStream):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        header = BINARY_MAGIC + np.array([len(self)], dtype="<u8").tobytes()
        return header + self.records.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ClickStream":
        if data[:8] != BINARY_MAGIC:
            raise ValueError("not a click stream")
        (n,) = np.frombuffer(data[8:16], dtype="<u8")
        body = data[16:]
        if len(body) != int(n) * CLICK_DTYPE.itemsize:
            raise ValueError("truncated click stream")
        return cls(np.frombuffer(body, dtype=CLICK_DTYPE).copy())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run_id", "step", "position", "polarization", "detector", "time_ns"])
        r = self.records
        for run, step, pos, pol, det, t in zip(
            r["run_id"].tolist(), r["step"].tolist(), r["position"].tolist(),
            r["polarization"].tolist(), r["detector"].tolist(), r["time_ns"].tolist(),
        ):
            w.writerow([run, step, pos, Coin(pol).name, Detector(det).label, repr(t)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ClickStream":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls.from_events(
            ClickEvent(
                int(r["run_id"]), int(r["step"]), int(r["position"]),
                Coin.parse(r["polarization"]), Detector.parse(r["detector"]), float(r["time_ns"]),
            )
            for r in rows
        )

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        if path.suffix == ".csv":
            path.write_text(self.to_csv())
        else:
            path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ClickStream":
        path = Path(path)
        if path.suffix == ".csv":
            return cls.from_csv(path.read_text())
        return cls.from_bytes(path.read_bytes())


class _Sampler:
    """Cumulative tables for mode sampling, shared by all blocks of one simulation."""

    def __init__(self, config: EmulatorConfig):
        self.config = config
        self.joint = joint_states(config.max_step, HADAMARD)
        self.first_cdf = [None]
        self.pair_cdf = [None]
        for s in range(1, config.max_step + 1):
            st = self.joint[s]
            w = np.array(list(detection_weights(st, config.convention).values()))
            self.first_cdf.append(np.cumsum(w / w.sum()))
            p = (np.abs(st.matrix) ** 2).ravel()
            self.pair_cdf.append(np.cumsum(p / p.sum()))

    @lru_cache(maxsize=None)
    def survivor_cdfs(self, s1: int, k1: int) -> tuple[NDArray, ...]:
        """CDFs of the survivor's mode index at steps ``s1+1 .. max_step``."""
        st = self.joint[s1]
        survivor = condition(st, st.modes[k1], self.config.convention).survivor
        out = []
        for _ in range(s1, self.config.max_step):
            survivor = evolve(survivor, 1, HADAMARD)
            p = (np.abs(survivor.amps) ** 2).ravel()
            out.append(np.cumsum(p / p.sum()))
        return tuple(out)


def _draw(cdf: NDArray, u: NDArray) -> NDArray:
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1)


def _simulate_block(sampler: _Sampler, block: int) -> tuple[NDArray, SimulationDiagnostics]:
    cfg = sampler.config
    lo = block * BLOCK_SIZE
    n = min(BLOCK_SIZE, cfg.runs - lo)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.rng_seed, spawn_key=(block,))))

    generated = rng.random(n) < cfg.pair_generation_prob
    exits = rng.geometric(cfg.outcoupling_prob, size=(n, 2))
    u_modes = rng.random((n, 2))
    u_eff = rng.random((n, 2))

    lost = cfg.max_step + 1
    exits = np.where(generated[:, None], np.minimum(exits, lost), lost)
    s1 = exits.min(axis=1)
    s2 = exits.max(axis=1)
    # click step and mode index (within the step's window), -1 for no click
    step = np.stack([s1, s2], axis=1)
    kidx = np.full((n, 2), -1, dtype=np.int64)

    together = (s1 == s2) & (s1 < lost)
    apart = (s1 < s2) & (s1 < lost)
    for s in np.unique(s1[together]):
        rows = np.flatnonzero(together & (s1 == s))
        pair = _draw(sampler.pair_cdf[s], u_modes[rows, 0])
        width = 2 * (2 * s + 1)
        kidx[rows, 0], kidx[rows, 1] = pair // width, pair % width
    for s in np.unique(s1[apart]):
        rows = np.flatnonzero(apart & (s1 == s))
        kidx[rows, 0] = _draw(sampler.first_cdf[s], u_modes[rows, 0])

    second = np.flatnonzero(apart & (s2 < lost))
    if len(second):
        keys = np.stack([s1[second], kidx[second, 0], s2[second]], axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        for g, (a, k, b) in enumerate(uniq):
            rows = second[inverse == g]
            cdf = sampler.survivor_cdfs(int(a), int(k))[int(b) - int(a) - 1]
            kidx[rows, 1] = _draw(cdf, u_modes[rows, 1])

    clicked = kidx >= 0
    kept = clicked & (u_eff < cfg.click_efficiency)
    eff_drops = int(np.sum(clicked & ~kept))

    position = np.where(clicked, kidx // 2 - step, 0)
    pol = np.where(clicked, kidx % 2, 0)
    run_ids = np.arange(lo, lo + n, dtype=np.uint64)
    times = encode_time(run_ids[:, None], step, position, cfg)

    both = kept[:, 0] & kept[:, 1]
    close = np.abs(times[:, 1] - times[:, 0]) < cfg.dead_time_ns
    dead = both & (pol[:, 0] == pol[:, 1]) & close
    cross_bin = dead & ((step[:, 0] != step[:, 1]) | (position[:, 0] != position[:, 1]))
    later = np.where(times[:, 1] >= times[:, 0], 1, 0)
    kept[dead, later[dead]] = False

    rows, slots = np.nonzero(kept)
    rec = np.empty(len(rows), dtype=CLICK_DTYPE)
    rec["run_id"] = run_ids[rows]
    rec["step"] = step[rows, slots]
    rec["position"] = position[rows, slots]
    rec["polarization"] = pol[rows, slots]
    rec["detector"] = pol[rows, slots]
    rec["time_ns"] = times[rows, slots]
    rec = rec[np.lexsort((rec["time_ns"], rec["run_id"]))]

    diag = SimulationDiagnostics(
        generated_pairs=int(generated.sum()),
        simultaneous_exits=int(together.sum()),
        efficiency_drops=eff_drops,
        dead_time_drops=int(dead.sum()),
        cross_bin_drops=int(cross_bin.sum()),
    )
    return rec, diag


def simulate_runs(config: EmulatorConfig, workers: int = 1) -> ClickStream:
    """
    Simulate ``config.runs`` loop runs and return the surviving clicks sorted
    by run and arrival time. Deterministic for a given ``config.rng_seed``
    and independent of ``workers``.
    """
    if config.runs == 0:
        return ClickStream(np.empty(0, dtype=CLICK_DTYPE))
    sampler = _Sampler(config)
    blocks = range(math.ceil(config.runs / BLOCK_SIZE))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: _simulate_block(sampler, b), blocks))
    else:
        parts = [_simulate_block(sampler, b) for b in blocks]
    records = np.concatenate([p[0] for p in parts])
    diag = sum((p[1] for p in parts), SimulationDiagnostics())
    return ClickStream(records, diag)


def _as_records(events: ClickStream | Iterable[ClickEvent]) -> NDArray:
    stream = events if isinstance(events, ClickStream) else ClickStream.from_events(events)
    r = stream.records
    return r[np.lexsort((r["time_ns"], r["run_id"]))]


def _coincidence_pairs(r: NDArray) -> tuple[NDArray, NDArray]:
    if len(r) == 0:
        return r[:0], r[:0]
    runs, start, counts = np.unique(r["run_id"], return_index=True, return_counts=True)
    i = start[counts == 2]
    return r[i], r[i + 1]


def _histogram(later: NDArray, out_step: int) -> tuple[Distribution, dict[Mode, int]]:
    keys, counts = np.unique(
        np.stack([later["position"].astype(np.int64), later["polarization"].astype(np.int64)], axis=1),
        axis=0, return_counts=True,
    )
    table = {Mode(int(x), Coin(int(c))): int(k) for (x, c), k in zip(keys, counts)}
    total = int(counts.sum())
    return Distribution(out_step, {m: k / total for m, k in table.items()}), table


def reconstruct_conditioned(
    events: ClickStream | Iterable[ClickEvent],
    loss_step: int,
    loss_mode: Mode,
    out_step: int,
) -> tuple[Distribution, dict[Mode, int]]:
    """
    Post-select runs with exactly two clicks whose earlier click is
    ``(loss_step, loss_mode)`` and whose later click is at ``out_step``, and
    histogram the later click's mode.

    Raises
    ------
    EmptySelection
        If no run passes the selection.
    """
    if out_step <= loss_step:
        raise ValueError("output step must come after the loss step")
    r = _as_records(events)
    first, second = _coincidence_pairs(r)
    hit_first = (
        (first["step"] == loss_step)
        & (first["position"] == loss_mode[0])
        & (first["polarization"] == int(loss_mode[1]))
    )
    sel = hit_first & (second["step"] == out_step)
    if not sel.any():
        raise EmptySelection(
            f"no coincidences for loss {loss_mode} at step {loss_step} and output step {out_step}: "
            f"{len(r)} clicks, {len(first)} two-click runs, {int(hit_first.sum())} with a matching first click"
        )
    return _histogram(second[sel], out_step)


def reconstruct_loss_averaged(
    events: ClickStream | Iterable[ClickEvent], loss_step: int, out_step: int
) -> tuple[Distribution, dict[Mode, int]]:
    """Like :func:`reconstruct_conditioned` but accepting any mode for the earlier click."""
    if out_step <= loss_step:
        raise ValueError("output step must come after the loss step")
    first, second = _coincidence_pairs(_as_records(events))
    sel = (first["step"] == loss_step) & (second["step"] == out_step)
    if not sel.any():
        raise EmptySelection(f"no coincidences between steps {loss_step} and {out_step}")
    return _histogram(second[sel], out_step)


def effective_rate(config: EmulatorConfig, loss_step: int, out_step: int) -> float:
    """
    Expected coincidences per second with one click at ``loss_step`` and the
    other at ``out_step`` (any modes).

    Either photon may leave first, each leaving in a given roundtrip with
    probability ``p`` after surviving the earlier ones, so the rate is
    ``rep * gen * eta**2 * 2 p**2 (1-p)**(M + N - 2)``.
    """
    m, n = loss_step, out_step
    if not 1 <= m < n <= config.max_step:
        raise ValueError(f"need 1 <= loss_step < out_step <= {config.max_step}")
    p = config.outcoupling_prob
    return (
        config.repetition_rate_hz
        * config.pair_generation_prob
        * config.click_efficiency**2
        * 2 * p * p * (1 - p) ** (m + n - 2)
    )
