"""Discrete-event loop: MPCP REPORT/GATE cycle, scheduling and receiver sleep.

Packet arrivals are drawn up front per ONU and consumed in bulk: a REPORT
snapshots every packet that arrived since the previous one, which is all a
gated grant needs, so packets never enter the event queue individually.

Timing of one cycle for ONU k, all times as seen at the OLT:

* the REPORT arrives at ``t_R`` and reflects the ONU queue at ``t_R - rtt/2``;
* the scheduler picks a wavelength and a first-bit instant;
* the GATE reaches the ONU ``T_p + T_tx + rtt/2`` after its generation time,
  and the ONU retunes;
* the window carries data, then the next REPORT, then the guard; the OLT
  acts on that REPORT when the window closes, so ``t_R`` is the window end.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import (Branch, HorizonSet, OnuState, ProtocolError, ScheduleDecision,
                   SchedulerKind, SimConfig, SimTime, VoidSet, carve_window)
from .metrics import RunStats, efficiency_from_accounting, eta_max
from .scheduler import ReportEvent, delay_bound, eft_schedule, schedule, tc_min, window_size
from .traffic import make_sources

log = logging.getLogger(__name__)

INF = math.inf


class EventKind(enum.IntEnum):
    """Event types; the value is the tie-break priority at equal times.

    PACKET_ARRIVAL and RECEIVER_SLEEP are part of the model vocabulary but are
    handled inline (bulk arrivals, immediate sleep), never queued.
    """

    SIM_END = 0
    REPORT_AT_OLT = 1
    PACKET_ARRIVAL = 2
    GATE_AT_ONU = 3
    UPSTREAM_END = 4
    RECEIVER_SLEEP = 5
    RECEIVER_WAKE = 6
    UPSTREAM_START = 7


class Event(NamedTuple):
    time: SimTime
    kind: EventKind
    subject: int
    seq: int
    payload: object = None


class ReceiverMode(enum.Enum):
    ACTIVE = "active"
    ASLEEP = "asleep"
    WAKING = "waking"


@dataclass
class ReceiverState:
    wavelength: int
    mode: ReceiverMode = ReceiverMode.ACTIVE
    wake_deadline: Optional[SimTime] = None   # when the wake ramp must begin
    ready_at: Optional[SimTime] = None        # end of the current wake ramp
    since: SimTime = 0
    token: int = 0
    sleep_count: int = 0
    wake_count: int = 0
    active_time: SimTime = 0
    waking_time: SimTime = 0
    asleep_time: SimTime = 0
    busy_time: SimTime = 0
    totals: dict = field(default_factory=lambda: {m: 0 for m in ReceiverMode})

    @property
    def on_time_accum(self) -> SimTime:
        return self.active_time + self.waking_time


class SleepAction(NamedTuple):
    sleep: bool
    wake_at: Optional[SimTime]


def sleep_controller(receiver: ReceiverState, next_window_start: float, now: SimTime,
                     cfg: SimConfig) -> SleepAction:
    """Sleep through an idle gap only if it is longer than the wake ramp.

    ``next_window_start`` is ``math.inf`` when nothing is scheduled.  The ramp
    is charged as ON time, so the receiver saves ``gap - T_sw``.
    """
    if next_window_start - now > cfg.sleep_wake:
        wake = None if next_window_start == INF else int(next_window_start) - cfg.sleep_wake
        return SleepAction(True, wake)
    return SleepAction(False, None)


class Simulation:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.now: SimTime = 0
        self.end = cfg.run_time
        self.warm = int(cfg.run_time * cfg.warmup_fraction)
        n, w = cfg.n_onus, cfg.n_wavelengths
        self.voids = VoidSet(w)
        self.horizons = HorizonSet(w, cfg.tune_step)
        self.receivers = [ReceiverState(j) for j in range(w)]
        self.onus = [OnuState.initial(k, k % w, cfg.rtt_of(k), cfg.d_max_of(k))
                     for k in range(n)]
        self.arrivals = [src.next_arrivals(cfg.run_time) for src in make_sources(cfg)]
        self.next_pkt = [0] * n
        self.last_report: list[Optional[SimTime]] = [None] * n
        self.seq_no = [0] * n
        seed_state = np.random.SeedSequence([cfg.seed, 0x5EED]).generate_state(2)
        self.rng = random.Random(int(seed_state[0]) << 32 | int(seed_state[1]))
        self._heap: list = []
        self._ctr = 0
        self.stats = RunStats(config=cfg, measured_time=self.end - self.warm)
        self.stats.branch_counts = {b.value: 0 for b in Branch}
        self._delay_sum = 0
        self._pending_bytes = 0

    # -- event queue ---------------------------------------------------------
    def push(self, time: SimTime, kind: EventKind, subject: int, payload=None) -> None:
        self._ctr += 1
        heapq.heappush(self._heap, (time, kind, subject, self._ctr, payload))

    # -- receiver bookkeeping ------------------------------------------------
    def _account(self, r: ReceiverState, upto: SimTime) -> None:
        span = upto - r.since
        if span <= 0:
            return
        r.totals[r.mode] += span
        lo = max(r.since, self.warm)
        if upto > lo:
            m = upto - lo
            if r.mode is ReceiverMode.ACTIVE:
                r.active_time += m
            elif r.mode is ReceiverMode.ASLEEP:
                r.asleep_time += m
            else:
                r.waking_time += m

    def _set_mode(self, r: ReceiverState, mode: ReceiverMode) -> None:
        self._account(r, self.now)
        r.since = self.now
        r.mode = mode

    def next_window_start(self, j: int, now: SimTime) -> float:
        if now >= self.horizons[j]:
            return INF
        v = self.voids.containing(j, now)
        return v.end if v is not None else now

    def _decide_sleep(self, j: int) -> None:
        r = self.receivers[j]
        act = sleep_controller(r, self.next_window_start(j, self.now), self.now, self.cfg)
        if act.sleep:
            self._set_mode(r, ReceiverMode.ASLEEP)
            r.sleep_count += 1
            self._plan_wake(r, act.wake_at)

    def _plan_wake(self, r: ReceiverState, wake_at: Optional[SimTime]) -> None:
        r.token += 1
        r.wake_deadline = wake_at
        if wake_at is not None:
            if wake_at < self.now:
                raise ProtocolError(
                    f"wavelength {r.wavelength}: wake needed at {wake_at}, before now={self.now}")
            self.push(wake_at, EventKind.RECEIVER_WAKE, r.wavelength, r.token)

    def _window_booked(self, j: int, start: SimTime) -> None:
        r = self.receivers[j]
        if r.mode is ReceiverMode.ASLEEP:
            wake_at = start - self.cfg.sleep_wake
            if r.wake_deadline is None or wake_at < r.wake_deadline:
                self._plan_wake(r, wake_at)
        elif r.mode is ReceiverMode.WAKING and start < r.ready_at:
            raise ProtocolError(f"window at {start} lands inside the wake ramp of wavelength {j}")

    def _guard(self) -> dict:
        g = {}
        for r in self.receivers:
            if r.mode is ReceiverMode.ASLEEP:
                g[r.wavelength] = self.now + self.cfg.sleep_wake
            elif r.mode is ReceiverMode.WAKING:
                g[r.wavelength] = r.ready_at
        return g

    # -- MPCP ------------------------------------------------------------------
    def _book(self, d: ScheduleDecision, first_pkt: int, n_pkts: int) -> None:
        cfg, st = self.cfg, self.stats
        measured = d.report_arrival >= self.warm
        before = self.voids.created
        carve_window(self.voids, self.horizons, d)
        if len(self.voids) > cfg.n_onus:
            raise ProtocolError(f"{len(self.voids)} voids exceed N={cfg.n_onus}")
        st.max_void_count = max(st.max_void_count, len(self.voids))
        self._window_booked(d.wavelength, d.first_bit)
        k = d.onu
        self.onus[k].in_flight = d
        self.onus[k].queue_bytes = d.grant_bytes
        self.push(d.gate_time + cfg.gate_gen + cfg.gate_tx + self.onus[k].rtt // 2,
                  EventKind.GATE_AT_ONU, k, d.wavelength)
        self.push(d.first_bit, EventKind.UPSTREAM_START, d.wavelength, d)
        self.push(d.finish, EventKind.UPSTREAM_END, d.wavelength, d)
        self.push(d.finish, EventKind.REPORT_AT_OLT, k)
        st.granted_bytes += d.grant_bytes
        self._pending_bytes += d.grant_bytes
        if measured:
            st.report_count += 1
            st.void_count_created += self.voids.created - before
            st.branch_counts[d.branch.value] += 1
            if d.violation > 0:
                st.deadline_misses += 1
                st.deadline_excess += d.violation
        if n_pkts:
            self._packet_delays(d, first_pkt, n_pkts)

    def _packet_delays(self, d: ScheduleDecision, first: int, n: int) -> None:
        cfg, st = self.cfg, self.stats
        arr = self.arrivals[d.onu][first:first + n]
        step = cfg.packet_bytes * cfg.byte_time
        delivered = d.first_bit + step * np.arange(1, n + 1, dtype=np.int64)
        keep = (arr >= self.warm) & (delivered <= self.end)
        if not keep.any():
            return
        delays = (delivered - arr)[keep]
        st.packets += int(delays.size)
        self._delay_sum += int(delays.sum())
        st.max_delay = max(st.max_delay, int(delays.max()))
        late = int(np.count_nonzero(delays > self.onus[d.onu].d_max))
        if late:
            st.violations += late
            if d.branch is Branch.EFT_FALLBACK:
                st.violations_eft += late
            else:
                st.violations_non_eft += late

    def _on_report(self, k: int) -> None:
        cfg, now = self.cfg, self.now
        onu = self.onus[k]
        if self.last_report[k] is not None:
            onu.d_prev = now - self.last_report[k]
        self.last_report[k] = now
        onu.in_flight = None
        arr = self.arrivals[k]
        first = self.next_pkt[k]
        upto = int(np.searchsorted(arr, now - onu.rtt // 2, side="right"))
        upto = max(upto, first)
        self.next_pkt[k] = upto
        n_pkts = upto - first
        self.stats.reported_bytes += n_pkts * cfg.packet_bytes
        self.seq_no[k] += 1
        report = ReportEvent(k, now, n_pkts * cfg.packet_bytes, self.seq_no[k])

        self.voids.discard_before(now)
        d_q = delay_bound(onu, cfg)
        if d_q == 0 and now >= self.warm:
            self.stats.forced_eft += 1
        guard = self._guard()
        if cfg.scheduler is SchedulerKind.EONOVM:
            d = schedule(report, onu, self.voids, self.horizons, cfg, self.rng, guard, d_q)
        else:
            d = eft_schedule(report, onu, self.horizons, self.voids, cfg, guard, d_q)
        self._check_decision(d, report, onu)
        self._book(d, first, n_pkts)

    def _check_decision(self, d: ScheduleDecision, report: ReportEvent, onu: OnuState) -> None:
        earliest = tc_min(report, onu, d.wavelength, self.cfg)
        if d.first_bit < earliest or d.gate_offset < 0:
            raise ProtocolError(f"decision {d} precedes earliest arrival {earliest}")
        if d.branch is not Branch.EFT_FALLBACK and d.finish > d.deadline:
            raise ProtocolError(f"decision {d} misses its deadline")
        if d.window != window_size(report.requested_bytes, self.cfg):
            raise ProtocolError("window size mismatch")

    def _on_upstream_start(self, j: int, d: ScheduleDecision) -> None:
        r = self.receivers[j]
        if r.mode is ReceiverMode.ASLEEP:
            raise ProtocolError(f"window {d} starts while wavelength {j} receiver sleeps")
        if r.mode is ReceiverMode.WAKING:
            if r.ready_at > self.now:
                raise ProtocolError(f"window {d} starts before wavelength {j} is awake")
            self._set_mode(r, ReceiverMode.ACTIVE)
            r.ready_at = None
        lo, hi = max(d.first_bit, self.warm), min(d.finish, self.end)
        if hi > lo:
            r.busy_time += hi - lo

    def _on_upstream_end(self, j: int, d: ScheduleDecision) -> None:
        self._pending_bytes -= d.grant_bytes
        self.stats.delivered_bytes += d.grant_bytes
        self._decide_sleep(j)

    def _on_wake(self, j: int, token: int) -> None:
        r = self.receivers[j]
        if token != r.token or r.mode is not ReceiverMode.ASLEEP:
            return
        self._set_mode(r, ReceiverMode.WAKING)
        r.wake_count += 1
        r.ready_at = self.now + self.cfg.sleep_wake
        r.wake_deadline = None

    # -- run -------------------------------------------------------------------
    def _bootstrap(self) -> None:
        """Poll every ONU once with back-to-back REPORT-only windows."""
        cfg = self.cfg
        t_w = window_size(0, cfg)
        for k, onu in enumerate(self.onus):
            j = onu.tuned_wavelength
            fb = (k // cfg.n_wavelengths) * t_w
            d = ScheduleDecision(onu=k, wavelength=j, report_arrival=0, gate_offset=0,
                                 first_bit=fb, window=t_w, grant_bytes=0,
                                 branch=Branch.EFT_FALLBACK, deadline=fb + t_w)
            carve_window(self.voids, self.horizons, d)
            self.push(fb, EventKind.UPSTREAM_START, j, d)
            self.push(d.finish, EventKind.UPSTREAM_END, j, d)
            self.push(d.finish, EventKind.REPORT_AT_OLT, k)
        for j in range(cfg.n_wavelengths):
            self._decide_sleep(j)
        self.push(self.end, EventKind.SIM_END, -1)

    def run(self) -> RunStats:
        self._bootstrap()
        heap = self._heap
        pop = heapq.heappop
        while heap:
            time, kind, subject, _, payload = pop(heap)
            self.now = time
            if kind == EventKind.SIM_END:
                break
            if kind == EventKind.REPORT_AT_OLT:
                self._on_report(subject)
            elif kind == EventKind.UPSTREAM_START:
                self._on_upstream_start(subject, payload)
            elif kind == EventKind.UPSTREAM_END:
                self._on_upstream_end(subject, payload)
            elif kind == EventKind.RECEIVER_WAKE:
                self._on_wake(subject, payload)
            elif kind == EventKind.GATE_AT_ONU:
                self.onus[subject].tuned_wavelength = payload
        self.now = self.end
        return self._finish()

    def _finish(self) -> RunStats:
        cfg, st = self.cfg, self.stats
        for r in self.receivers:
            self._account(r, self.end)
            r.since = self.end
        self._check_accounting()
        tm = st.measured_time
        st.efficiency = efficiency_from_accounting(self.receivers, tm)
        st.eta_max = eta_max(cfg)
        arrived = sum(int(np.count_nonzero(a >= self.warm)) for a in self.arrivals)
        st.arrived_bytes = sum(len(a) for a in self.arrivals) * cfg.packet_bytes
        st.offered_load = (arrived * cfg.packet_bytes * 8 * 1e9
                           / (cfg.n_onus * cfg.peak_rate * tm)) if tm else 0.0
        st.eta_max_measured = eta_max(cfg, st.offered_load)
        st.busy_time = sum(r.busy_time for r in self.receivers)
        st.t_v_agg = cfg.n_wavelengths * tm - st.busy_time
        st.exploited_voids = sum(r.wake_count for r in self.receivers)
        st.avg_delay = self._delay_sum / st.packets if st.packets else 0.0
        st.receiver_totals = [dict((m.value, t) for m, t in r.totals.items())
                              for r in self.receivers]
        backlog = st.arrived_bytes - st.delivered_bytes
        horizon_bytes = cfg.offered_rate / 8 * 2 * max(cfg.d_max_of(k) for k in range(cfg.n_onus)) / 1e9
        st.unstable = cfg.overloaded or backlog > max(horizon_bytes, 10 * cfg.packet_bytes * cfg.n_onus)
        if st.unstable:
            log.warning("run looks unstable: backlog %d bytes at end", backlog)
        elif st.efficiency > st.eta_max_measured + 0.5:
            raise ProtocolError(f"efficiency {st.efficiency:.3f}% exceeds the bound "
                                f"{st.eta_max_measured:.3f}% for the measured load")
        return st

    def _check_accounting(self) -> None:
        for r in self.receivers:
            if sum(r.totals.values()) != self.end:
                raise ProtocolError(f"wavelength {r.wavelength}: mode times do not sum to run time")
            expect = r.sleep_count - (1 if r.mode is ReceiverMode.ASLEEP else 0)
            if r.wake_count != expect:
                raise ProtocolError(f"wavelength {r.wavelength}: {r.wake_count} wakes for "
                                    f"{r.sleep_count} sleeps")
            if r.asleep_time + r.waking_time + r.active_time != self.end - self.warm:
                raise ProtocolError("measured mode times do not cover the measured window")
        if self.stats.granted_bytes != self.stats.reported_bytes:
            raise ProtocolError("granted bytes differ from reported bytes")


def run(cfg: SimConfig) -> RunStats:
    """Simulate one configuration and return its statistics."""
    return Simulation(cfg).run()
