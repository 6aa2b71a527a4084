"""Time base, domain types and void/horizon bookkeeping.

All times are integer nanoseconds (``SimTime``).  With a 1 Gb/s line rate the
byte time is exactly 8 ns, so every protocol quantity stays integral.
"""

from __future__ import annotations

import enum
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence, Union

SimTime = int

NS_PER_S = 1_000_000_000


class ProtocolError(RuntimeError):
    """A scheduling invariant was violated (indicates a scheduler bug)."""


class ConfigError(ValueError):
    """Invalid or unsatisfiable simulation configuration."""


class DelayPolicy(str, enum.Enum):
    FIXED = "fixed"
    VARIABLE = "variable"


class SchedulerKind(str, enum.Enum):
    EONOVM = "eonovm"
    EFT_SLEEP = "eft"


class Branch(str, enum.Enum):
    """Which rule of the decision tree produced a placement."""

    VOID_CLUB_START = "void_club_start"
    VOID_CLUB_END = "void_club_end"
    HORIZON_CLUB = "horizon_club"
    VOID_LATEST = "void_latest"
    HORIZON_LATEST = "horizon_latest"
    EFT_FALLBACK = "eft_fallback"


class Void(NamedTuple):
    start: SimTime
    end: SimTime
    wavelength: int

    @property
    def length(self) -> SimTime:
        return self.end - self.start


class VoidSet:
    """Idle intervals per wavelength, each list kept sorted by start.

    Voids on one wavelength are disjoint, so the end times are sorted as well;
    both lists are kept in parallel to allow bisection on either key.
    """

    def __init__(self, n_wavelengths: int):
        self.n_wavelengths = n_wavelengths
        self._starts: list[list[int]] = [[] for _ in range(n_wavelengths)]
        self._ends: list[list[int]] = [[] for _ in range(n_wavelengths)]
        self.created = 0

    @classmethod
    def from_voids(cls, n_wavelengths: int, voids: Sequence[Void]) -> "VoidSet":
        vs = cls(n_wavelengths)
        for v in sorted(voids, key=lambda v: (v.wavelength, v.start)):
            vs.add(v)
        vs.created = 0
        return vs

    def __len__(self) -> int:
        return sum(len(s) for s in self._starts)

    def __iter__(self) -> Iterator[Void]:
        for w in range(self.n_wavelengths):
            for s, e in zip(self._starts[w], self._ends[w]):
                yield Void(s, e, w)

    def on(self, wavelength: int) -> list[Void]:
        return [Void(s, e, wavelength)
                for s, e in zip(self._starts[wavelength], self._ends[wavelength])]

    def spans(self, wavelength: int) -> tuple[list[int], list[int]]:
        """Parallel (starts, ends) lists for ``wavelength``; read-only."""
        return self._starts[wavelength], self._ends[wavelength]

    def add(self, v: Void) -> None:
        if v.end <= v.start:
            raise ProtocolError(f"empty or inverted void {v}")
        starts, ends = self._starts[v.wavelength], self._ends[v.wavelength]
        i = bisect_left(starts, v.start)
        if (i > 0 and ends[i - 1] > v.start) or (i < len(starts) and starts[i] < v.end):
            raise ProtocolError(f"void {v} overlaps an existing void")
        starts.insert(i, v.start)
        ends.insert(i, v.end)
        self.created += 1

    def containing(self, wavelength: int, t: SimTime) -> Optional[Void]:
        """The void with ``start <= t < end`` on ``wavelength``, if any."""
        starts = self._starts[wavelength]
        i = bisect_right(starts, t) - 1
        if i >= 0 and t < self._ends[wavelength][i]:
            return Void(starts[i], self._ends[wavelength][i], wavelength)
        return None

    def discard_before(self, now: SimTime) -> int:
        """Drop voids that ended at or before ``now``; returns how many."""
        dropped = 0
        for w in range(self.n_wavelengths):
            k = bisect_right(self._ends[w], now)
            if k:
                del self._starts[w][:k]
                del self._ends[w][:k]
                dropped += k
        return dropped

    def _split(self, wavelength: int, start: SimTime, end: SimTime) -> None:
        """Remove [start, end) from the void that fully contains it."""
        starts, ends = self._starts[wavelength], self._ends[wavelength]
        i = bisect_right(starts, start) - 1
        if i < 0 or ends[i] < end:
            raise ProtocolError(
                f"window [{start}, {end}) on wavelength {wavelength} overlaps a scheduled window")
        vs, ve = starts[i], ends[i]
        del starts[i]
        del ends[i]
        if end < ve:
            starts.insert(i, end)
            ends.insert(i, ve)
        if vs < start:
            starts.insert(i, vs)
            ends.insert(i, start)
            if end < ve:
                self.created += 1


class HorizonSet:
    """Latest scheduling horizon per wavelength plus sorted views.

    ``sorted_by_lf`` orders wavelengths by ``lf_j``.  ``sorted_by_tuned(c)``
    orders them by ``lf_j - |c - j| * tune_step`` for an ONU currently tuned
    to ``c``; a wavelength is clubbable at its horizon exactly when that key is
    at least the ONU's zero-tuning earliest arrival, so a single bisection on
    this view finds all of them.  Views for each ``c`` are built on first use
    and then maintained incrementally.
    """

    def __init__(self, n_wavelengths: int, tune_step: SimTime,
                 horizons: Optional[Sequence[SimTime]] = None):
        self.n_wavelengths = n_wavelengths
        self.tune_step = tune_step
        self.lf: list[int] = list(horizons) if horizons is not None else [0] * n_wavelengths
        if len(self.lf) != n_wavelengths:
            raise ValueError("need exactly one horizon per wavelength")
        self._by_lf: list[tuple[int, int]] = sorted((h, j) for j, h in enumerate(self.lf))
        self._by_tuned: dict[int, list[tuple[int, int]]] = {}

    def _tuned_key(self, c: int, j: int) -> int:
        return self.lf[j] - abs(c - j) * self.tune_step

    def _tuned_view(self, c: int) -> list[tuple[int, int]]:
        view = self._by_tuned.get(c)
        if view is None:
            view = sorted((self._tuned_key(c, j), j) for j in range(self.n_wavelengths))
            self._by_tuned[c] = view
        return view

    def __getitem__(self, j: int) -> SimTime:
        return self.lf[j]

    def set(self, j: int, value: SimTime) -> None:
        old = self.lf[j]
        if value == old:
            return
        del self._by_lf[bisect_left(self._by_lf, (old, j))]
        insort(self._by_lf, (value, j))
        olds = {c: self._tuned_key(c, j) for c in self._by_tuned}
        self.lf[j] = value
        for c, view in self._by_tuned.items():
            del view[bisect_left(view, (olds[c], j))]
            insort(view, (self._tuned_key(c, j), j))

    @property
    def sorted_by_lf(self) -> list[int]:
        return [j for _, j in self._by_lf]

    def sorted_by_tuned(self, c: int) -> list[int]:
        return [j for _, j in self._tuned_view(c)]

    def at_most(self, limit: SimTime) -> list[tuple[int, int]]:
        """``(lf_j, j)`` pairs with ``lf_j <= limit``, ascending."""
        return self._by_lf[:bisect_right(self._by_lf, (limit, self.n_wavelengths))]

    def tuned_at_least(self, c: int, threshold: SimTime) -> list[int]:
        """Wavelengths with ``lf_j - |c - j| * tune_step >= threshold``."""
        view = self._tuned_view(c)
        return [j for _, j in view[bisect_left(view, (threshold, -1)):]]


@dataclass
class OnuState:
    id: int
    tuned_wavelength: int
    rtt: SimTime
    d_max: SimTime
    d_const: SimTime
    d_prev: SimTime
    queue_bytes: int = 0
    in_flight: Optional["ScheduleDecision"] = None

    @classmethod
    def initial(cls, onu_id: int, wavelength: int, rtt: SimTime, d_max: SimTime) -> "OnuState":
        if 2 * d_max <= rtt:
            raise ConfigError(
                f"ONU {onu_id}: delay bound unsatisfiable (D_max={d_max} <= rtt/2={rtt / 2})")
        d_const = (d_max - rtt // 2) // 2
        return cls(onu_id, wavelength, rtt, d_max, d_const, d_const)


@dataclass(frozen=True)
class ScheduleDecision:
    """Placement of one upstream window.

    ``gate_offset`` is the scheduling delay: the GATE is generated at
    ``report_arrival + gate_offset`` and the first bit then reaches the OLT at
    ``gate_offset + TC_min`` on the chosen wavelength.
    """

    onu: int
    wavelength: int
    report_arrival: SimTime
    gate_offset: SimTime
    first_bit: SimTime
    window: SimTime
    grant_bytes: int
    branch: Branch
    deadline: SimTime

    @property
    def gate_time(self) -> SimTime:
        return self.report_arrival + self.gate_offset

    @property
    def finish(self) -> SimTime:
        return self.first_bit + self.window

    @property
    def violation(self) -> SimTime:
        return max(0, self.finish - self.deadline)


PerOnu = Union[int, tuple[int, ...]]


@dataclass(frozen=True)
class SimConfig:
    """Full parameterization of one run.  Times in ns, rates in bit/s."""

    n_onus: int = 16
    n_wavelengths: int = 2
    load: float = 0.5
    peak_rate: int = 100_000_000
    line_rate: int = 1_000_000_000
    report_bytes: int = 64
    guard: SimTime = 5_000
    gate_gen: SimTime = 35
    gate_tx: SimTime = 512
    tune_step: SimTime = 1_000
    sleep_wake: SimTime = 2_000_000
    rtt: PerOnu = 200_000
    d_max: PerOnu = 10_000_000
    alpha_on: float = 1.2
    alpha_off: float = 1.4
    mean_on: SimTime = 60_000
    tail_cap: float = 32.0
    packet_bytes: int = 1_500
    run_time: SimTime = 2 * NS_PER_S
    warmup_fraction: float = 0.1
    seed: int = 1
    delay_policy: DelayPolicy = DelayPolicy.FIXED
    scheduler: SchedulerKind = SchedulerKind.EONOVM
    traffic: str = "pareto"

    def __post_init__(self):
        object.__setattr__(self, "delay_policy", DelayPolicy(self.delay_policy))
        object.__setattr__(self, "scheduler", SchedulerKind(self.scheduler))
        for name in ("rtt", "d_max"):
            v = getattr(self, name)
            if isinstance(v, (list, tuple)):
                object.__setattr__(self, name, tuple(int(x) for x in v))
        self.validate()

    def validate(self) -> None:
        if self.n_onus < 1 or self.n_wavelengths < 1:
            raise ConfigError("need at least one ONU and one wavelength")
        if not 0.0 <= self.load <= 1.0:
            raise ConfigError(f"load must lie in [0, 1], got {self.load}")
        if (8 * NS_PER_S) % self.line_rate:
            raise ConfigError("line rate must give an integral byte time in ns")
        if self.traffic not in ("pareto", "poisson"):
            raise ConfigError(f"unknown traffic model {self.traffic!r}")
        for name in ("rtt", "d_max"):
            v = getattr(self, name)
            if isinstance(v, tuple) and len(v) != self.n_onus:
                raise ConfigError(f"{name} needs one value per ONU")
        for k in range(self.n_onus):
            if 2 * self.d_max_of(k) <= self.rtt_of(k):
                raise ConfigError(
                    f"delay bound unsatisfiable for ONU {k}: D_max must exceed rtt/2")
        if self.run_time <= 0:
            raise ConfigError("run_time must be positive")

    @property
    def byte_time(self) -> SimTime:
        return 8 * NS_PER_S // self.line_rate

    @property
    def offered_rate(self) -> float:
        return self.n_onus * self.peak_rate * self.load

    @property
    def overloaded(self) -> bool:
        return self.offered_rate > self.n_wavelengths * self.line_rate

    def rtt_of(self, k: int) -> SimTime:
        return self.rtt[k] if isinstance(self.rtt, tuple) else self.rtt

    def d_max_of(self, k: int) -> SimTime:
        return self.d_max[k] if isinstance(self.d_max, tuple) else self.d_max


def carve_window(voids: VoidSet, horizons: HorizonSet,
                 d: ScheduleDecision) -> tuple[VoidSet, HorizonSet]:
    """Book ``d``'s window into the void and horizon bookkeeping (in place).

    A window inside a void splits it into up to two residuals; a window past
    the horizon opens a new void for any gap and advances the horizon.
    Raises ProtocolError if the window overlaps anything already scheduled.
    """
    j, start = d.wavelength, d.first_bit
    end = start + d.window
    if d.window <= 0:
        raise ProtocolError(f"non-positive window in {d}")
    lf = horizons[j]
    if start >= lf:
        if start > lf:
            voids.add(Void(lf, start, j))
        horizons.set(j, end)
    elif end > lf:
        raise ProtocolError(f"window [{start}, {end}) straddles horizon {lf} on wavelength {j}")
    else:
        voids._split(j, start, end)
    return voids, horizons
