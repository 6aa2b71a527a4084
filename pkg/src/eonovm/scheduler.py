"""Online EO-NoVM placement of upstream windows, plus the EFT rule.

Every function here is pure with respect to its inputs: the caller books the
returned decision with :func:`eonovm.core.carve_window`.

``guard`` arguments map a wavelength to the earliest instant a window may
start in the idle region that contains the REPORT arrival time.  The engine
uses it for receivers that are already asleep (or waking) there, since such a
receiver needs the full wake-up ramp before it can take a window.
"""

from __future__ import annotations

import random
from bisect import bisect_right
from dataclasses import dataclass
from typing import Mapping, Optional

from .core import (Branch, ConfigError, DelayPolicy, HorizonSet, OnuState, ScheduleDecision,
                   SimConfig, SimTime, Void, VoidSet)

Guard = Optional[Mapping[int, SimTime]]


@dataclass(frozen=True)
class ReportEvent:
    onu: int
    arrival: SimTime
    requested_bytes: int
    seq: int = 0


def tc_min(report: ReportEvent, onu: OnuState, j: int, cfg: SimConfig) -> SimTime:
    """Earliest arrival at the OLT of the first upstream bit on wavelength ``j``."""
    return (report.arrival + cfg.gate_gen + cfg.gate_tx + onu.rtt
            + abs(onu.tuned_wavelength - j) * cfg.tune_step)


def fixed_delay_bound(onu: OnuState) -> SimTime:
    """Constant per-cycle bound ``(D_max - rtt/2) / 2``, floored to whole ns."""
    if 2 * onu.d_max <= onu.rtt:
        raise ConfigError(f"ONU {onu.id}: delay bound unsatisfiable")
    return (onu.d_max - onu.rtt // 2) // 2


def variable_delay_bound(onu: OnuState) -> SimTime:
    """``D_max - D_prev - rtt/2``; clamped to 0 when already unmeetable.

    A result of 0 can never fit a window, so it forces the EFT fallback.
    """
    return max(0, onu.d_max - onu.d_prev - onu.rtt // 2)


def delay_bound(onu: OnuState, cfg: SimConfig) -> SimTime:
    """Bound for the current cycle under ``cfg.delay_policy``.

    The fixed policy only holds while the previous REPORT gap stayed within
    the fixed bound; after a late (EFT) cycle it falls back to the variable
    rule until the gap is back under it.
    """
    if cfg.delay_policy is DelayPolicy.FIXED and onu.d_prev <= onu.d_const:
        return fixed_delay_bound(onu)
    return variable_delay_bound(onu)


def window_size(grant_bytes: int, cfg: SimConfig) -> SimTime:
    if grant_bytes < 0:
        raise ValueError("grant_bytes must be non-negative")
    return (grant_bytes + cfg.report_bytes) * cfg.byte_time + cfg.guard


def _floor(tc: SimTime, region_start: SimTime, arrival: SimTime, j: int, guard: Guard) -> SimTime:
    if guard and region_start <= arrival:
        g = guard.get(j)
        if g is not None and g > tc:
            return g
    return tc


def valid_voids(voids: VoidSet, report: ReportEvent, onu: OnuState, cfg: SimConfig,
                d_q: SimTime, t_w: SimTime, guard: Guard = None) -> list[Void]:
    """Voids able to hold the whole window before the deadline."""
    deadline = report.arrival + d_q
    base = tc_min(report, onu, onu.tuned_wavelength, cfg)
    c, step, t_r = onu.tuned_wavelength, cfg.tune_step, report.arrival
    out = []
    for v in voids:
        lo = _floor(base + abs(c - v.wavelength) * step, v.start, t_r, v.wavelength, guard)
        if min(v.end, deadline) - max(v.start, lo) >= t_w:
            out.append(v)
    return out


def valid_horizons(horizons: HorizonSet, report: ReportEvent, onu: OnuState, cfg: SimConfig,
                   d_q: SimTime, t_w: SimTime, guard: Guard = None) -> list[int]:
    """Wavelengths where the window fits after the horizon before the deadline.

    Uses the horizon-sorted view: valid wavelengths are those with
    ``lf_j <= latest`` (a bisection) whose tuning distance keeps TC_min under
    ``latest`` (a contiguous index band around the tuned wavelength).
    """
    latest = report.arrival + d_q - t_w
    base = tc_min(report, onu, onu.tuned_wavelength, cfg)
    if latest < base:
        return []
    c = onu.tuned_wavelength
    band = (latest - base) // cfg.tune_step if cfg.tune_step else horizons.n_wavelengths
    out = []
    for lf, j in horizons.at_most(latest):
        if abs(c - j) > band:
            continue
        if guard and lf <= report.arrival and guard.get(j, 0) > latest:
            continue
        out.append(j)
    out.sort()
    return out


def clubbing_sets(v_valid: list[Void], report: ReportEvent, onu: OnuState, cfg: SimConfig,
                  d_q: SimTime) -> tuple[list[Void], list[Void]]:
    """Valid voids whose start (``V_s``) or end (``V_e``) can be butted against."""
    deadline = report.arrival + d_q
    base = tc_min(report, onu, onu.tuned_wavelength, cfg)
    c, step = onu.tuned_wavelength, cfg.tune_step
    v_s = [v for v in v_valid if v.start >= base + abs(c - v.wavelength) * step]
    v_e = [v for v in v_valid if v.end <= deadline]
    return v_s, v_e


def horizon_clubbing_set(lf_valid: list[int], horizons: HorizonSet, report: ReportEvent,
                         onu: OnuState, cfg: SimConfig) -> list[int]:
    """Valid wavelengths whose horizon is already past TC_min (gapless append)."""
    if not lf_valid:
        return []
    base = tc_min(report, onu, onu.tuned_wavelength, cfg)
    clubbable = horizons.tuned_at_least(onu.tuned_wavelength, base)
    valid = set(lf_valid)
    return sorted(j for j in clubbable if j in valid)


def _latest_horizon(lf_nv: list[int], horizons: HorizonSet) -> int:
    # highest horizon, lowest index on ties
    return min(lf_nv, key=lambda j: (-horizons[j], j))


def schedule(report: ReportEvent, onu: OnuState, voids: VoidSet, horizons: HorizonSet,
             cfg: SimConfig, rng: random.Random, guard: Guard = None,
             d_q: Optional[SimTime] = None) -> ScheduleDecision:
    """Run the EO-NoVM decision tree for one REPORT.

    Preference order: club inside a void (latest of start/end alignment), club
    at a horizon, latest placement in a random valid void, latest placement
    after a random valid horizon, and finally EFT when nothing meets the
    deadline.
    """
    if d_q is None:
        d_q = delay_bound(onu, cfg)
    t_w = window_size(report.requested_bytes, cfg)
    deadline = report.arrival + d_q
    c, step = onu.tuned_wavelength, cfg.tune_step
    base = tc_min(report, onu, c, cfg)

    def decide(branch: Branch, j: int, first_bit: SimTime) -> ScheduleDecision:
        return ScheduleDecision(onu=onu.id, wavelength=j, report_arrival=report.arrival,
                                gate_offset=first_bit - (base + abs(c - j) * step),
                                first_bit=first_bit, window=t_w,
                                grant_bytes=report.requested_bytes, branch=branch,
                                deadline=deadline)

    v_valid = valid_voids(voids, report, onu, cfg, d_q, t_w, guard)
    lf_valid = valid_horizons(horizons, report, onu, cfg, d_q, t_w, guard)

    if v_valid:
        v_s, v_e = clubbing_sets(v_valid, report, onu, cfg, d_q)
        if v_s or v_e:
            sm = max(v_s, key=lambda v: (v.start, -v.wavelength)) if v_s else None
            em = max(v_e, key=lambda v: (v.end, -v.wavelength)) if v_e else None
            if sm is not None and (em is None or sm.start + t_w > em.end):
                return decide(Branch.VOID_CLUB_START, sm.wavelength, sm.start)
            return decide(Branch.VOID_CLUB_END, em.wavelength, em.end - t_w)
        lf_nv = horizon_clubbing_set(lf_valid, horizons, report, onu, cfg)
        if lf_nv:
            fm = _latest_horizon(lf_nv, horizons)
            return decide(Branch.HORIZON_CLUB, fm, horizons[fm])
        pick = v_valid[rng.randrange(len(v_valid))]
        return decide(Branch.VOID_LATEST, pick.wavelength, deadline - t_w)

    if lf_valid:
        lf_nv = horizon_clubbing_set(lf_valid, horizons, report, onu, cfg)
        if lf_nv:
            fm = _latest_horizon(lf_nv, horizons)
            return decide(Branch.HORIZON_CLUB, fm, horizons[fm])
        j = lf_valid[rng.randrange(len(lf_valid))]
        return decide(Branch.HORIZON_LATEST, j, deadline - t_w)

    return eft_schedule(report, onu, horizons, voids, cfg, guard=guard, d_q=d_q)


def eft_schedule(report: ReportEvent, onu: OnuState, horizons: HorizonSet, voids: VoidSet,
                 cfg: SimConfig, guard: Guard = None,
                 d_q: Optional[SimTime] = None) -> ScheduleDecision:
    """Earliest-finish placement over all wavelengths, filling voids when possible.

    Ties go to the lowest wavelength index.  The deadline is only recorded.
    """
    if d_q is None:
        d_q = delay_bound(onu, cfg)
    t_w = window_size(report.requested_bytes, cfg)
    c, step, t_r = onu.tuned_wavelength, cfg.tune_step, report.arrival
    base = tc_min(report, onu, c, cfg)
    best_j, best_t = -1, None
    for j in range(horizons.n_wavelengths):
        tc = base + abs(c - j) * step
        if best_t is not None and tc >= best_t:
            continue
        t = None
        starts, ends = voids.spans(j)
        for i in range(bisect_right(ends, tc), len(starts)):
            lo = max(starts[i], _floor(tc, starts[i], t_r, j, guard))
            if lo + t_w <= ends[i]:
                t = lo
                break
        if t is None:
            lf = horizons[j]
            t = max(lf, _floor(tc, lf, t_r, j, guard))
        if best_t is None or t < best_t:
            best_j, best_t = j, t
    return ScheduleDecision(onu=onu.id, wavelength=best_j, report_arrival=t_r,
                            gate_offset=best_t - (base + abs(c - best_j) * step),
                            first_bit=best_t, window=t_w, grant_bytes=report.requested_bytes,
                            branch=Branch.EFT_FALLBACK, deadline=t_r + d_q)
