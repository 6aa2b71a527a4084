"""Per-ONU packet sources.

The self-similar source alternates heavy-tailed OFF and ON periods.  While
ON it produces bytes as a fluid at the peak rate and releases a fixed-size
packet each time a whole packet has accumulated, so the long-run byte rate is
exactly ``peak_rate * load`` in expectation regardless of how short the ON
periods are.

Period lengths are Pareto, truncated at ``tail_cap`` times their mean.  The
untruncated tails (shape 1.2 / 1.4) have infinite variance and their sample
means converge too slowly for multi-second runs to hit the configured load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .core import NS_PER_S, SimConfig, SimTime


def pareto_sample(shape: float, scale: float, u, cap: Optional[float] = None):
    """Inverse-CDF Pareto draw from uniform ``u`` in (0, 1]; vectorizes over ``u``.

    With ``cap`` the distribution is truncated to ``[scale, cap]``.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(u > 1):
        raise ValueError("u must lie in (0, 1]")
    if cap is None:
        out = scale * u ** (-1.0 / shape)
    else:
        r = (scale / cap) ** shape
        out = scale * (r + u * (1.0 - r)) ** (-1.0 / shape)
    return out if out.ndim else float(out)


def pareto_mean(shape: float, scale: float, cap: Optional[float] = None) -> float:
    if cap is None:
        return scale * shape / (shape - 1.0)
    r = (scale / cap) ** shape
    return (shape * scale ** shape * (scale ** (1 - shape) - cap ** (1 - shape))
            / ((shape - 1.0) * (1.0 - r)))


def scale_for_mean(shape: float, mean: float, cap_factor: Optional[float] = None) -> float:
    """Pareto scale giving ``mean``; the cap (if any) sits at ``cap_factor * mean``."""
    if cap_factor is None:
        return mean * (shape - 1.0) / shape
    cap = cap_factor * mean
    return brentq(lambda x: pareto_mean(shape, x, cap) - mean, mean * 1e-9, mean, xtol=1e-9)


@dataclass(frozen=True)
class TrafficParams:
    alpha_on: float
    alpha_off: float
    load: float
    peak_rate: int
    packet_bytes: int
    mean_on: float
    cap_factor: Optional[float] = 32.0

    def __post_init__(self):
        for a in (self.alpha_on, self.alpha_off):
            if not 1.0 < a <= 2.0:
                raise ValueError(f"Pareto shape must lie in (1, 2], got {a}")
        if not 0.0 <= self.load <= 1.0:
            raise ValueError("load must lie in [0, 1]")

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "TrafficParams":
        return cls(cfg.alpha_on, cfg.alpha_off, cfg.load, cfg.peak_rate,
                   cfg.packet_bytes, float(cfg.mean_on), cfg.tail_cap or None)

    @property
    def mean_off(self) -> float:
        return self.mean_on * (1.0 - self.load) / self.load

    @property
    def min_on(self) -> float:
        return scale_for_mean(self.alpha_on, self.mean_on, self.cap_factor)

    @property
    def packet_time(self) -> float:
        """ns needed to emit one packet at the peak rate."""
        return self.packet_bytes * 8 * NS_PER_S / self.peak_rate


def calibrate_off_scale(p: TrafficParams) -> float:
    """OFF-period scale such that ``mean_on / (mean_on + mean_off) == load``.

    Returns 0 at load 1 (no OFF periods); raises at load 0 (source disabled).
    """
    if p.load <= 0.0:
        raise ValueError("load 0 disables the source; there is no OFF scale")
    if p.load >= 1.0:
        return 0.0
    return scale_for_mean(p.alpha_off, p.mean_off, p.cap_factor)


class OnOffSource:
    """Pareto ON/OFF packet source; starts in an OFF period."""

    BATCH = 4096

    def __init__(self, params: TrafficParams, rng: np.random.Generator):
        self.p = params
        self.rng = rng
        self._tau = params.packet_time
        self._on = params.load > 0.0
        if self._on:
            self._x_on = params.min_on
            self._x_off = calibrate_off_scale(params)
            self._cap_on = params.cap_factor * params.mean_on if params.cap_factor else None
            self._cap_off = (params.cap_factor * params.mean_off
                             if params.cap_factor and params.load < 1.0 else None)
        self._t = 0.0         # start of the next OFF period
        self._fluid = 0.0     # ON-time accumulated towards the next packet
        self._pending = np.empty(0, dtype=np.int64)

    def _periods(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        # 1 - random() lies in (0, 1], never 0
        on = pareto_sample(self.p.alpha_on, self._x_on, 1.0 - self.rng.random(n), self._cap_on)
        if self.p.load >= 1.0:
            off = np.zeros(n)
        else:
            off = pareto_sample(self.p.alpha_off, self._x_off, 1.0 - self.rng.random(n),
                                self._cap_off)
        return np.atleast_1d(on), np.atleast_1d(off)

    def _extend(self, until: float) -> None:
        chunks = [self._pending]
        while self._t < until:
            # fixed batch size keeps the draw sequence independent of ``until``
            on, off = self._periods(self.BATCH)
            on_start = self._t + np.cumsum(off) + np.cumsum(on) - on
            cum_on = self._fluid + np.cumsum(on)
            k = int(math.floor(cum_on[-1] / self._tau))
            thresholds = self._tau * np.arange(1, k + 1)
            period = np.searchsorted(cum_on, thresholds, side="left")
            before = cum_on[period] - on[period]
            times = on_start[period] + (thresholds - before)
            chunks.append(np.rint(times).astype(np.int64))
            self._fluid = cum_on[-1] - k * self._tau
            self._t = on_start[-1] + on[-1]
        self._pending = np.concatenate(chunks)

    def next_arrivals(self, until: SimTime) -> np.ndarray:
        """Packet arrival times (ns) before ``until`` not returned previously."""
        if not self._on:
            return np.empty(0, dtype=np.int64)
        self._extend(until)
        cut = int(np.searchsorted(self._pending, until, side="left"))
        out, self._pending = self._pending[:cut], self._pending[cut:]
        return out


class PoissonSource:
    """Poisson packet arrivals with the same mean byte rate."""

    def __init__(self, params: TrafficParams, rng: np.random.Generator):
        self.p = params
        self.rng = rng
        self._t = 0.0
        self._pending = np.empty(0, dtype=np.int64)
        self._mean_gap = params.packet_time / params.load if params.load > 0 else math.inf

    def next_arrivals(self, until: SimTime) -> np.ndarray:
        if math.isinf(self._mean_gap):
            return np.empty(0, dtype=np.int64)
        chunks = [self._pending]
        while self._t < until:
            t = self._t + np.cumsum(self.rng.exponential(self._mean_gap, OnOffSource.BATCH))
            chunks.append(np.rint(t).astype(np.int64))
            self._t = float(t[-1])
        pending = np.concatenate(chunks)
        cut = int(np.searchsorted(pending, until, side="left"))
        out, self._pending = pending[:cut], pending[cut:]
        return out


def make_sources(cfg: SimConfig) -> list:
    """One independently seeded source per ONU."""
    params = TrafficParams.from_config(cfg)
    cls = PoissonSource if cfg.traffic == "poisson" else OnOffSource
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_onus)
    return [cls(params, np.random.default_rng(c)) for c in children]
