"""Brute-force reference for the placement decision tree.

Every set is built by scanning every void and every wavelength with the
defining inequality, and EFT enumerates every candidate start.  Tie rules and
the RNG draw order match the production scheduler.
"""

from __future__ import annotations

import random
from typing import Mapping, Optional

from eonovm.core import Branch, Void

INF = float("inf")


def tc(t_r, rtt, c, j, cfg):
    return t_r + cfg.gate_gen + cfg.gate_tx + rtt + abs(c - j) * cfg.tune_step


def floor_for(start_of_region, t_r, j, base_tc, guard: Optional[Mapping[int, int]]):
    """Earliest usable instant in an idle region starting at ``start_of_region``."""
    if guard and j in guard and start_of_region <= t_r:
        return max(base_tc, guard[j])
    return base_tc


def oracle_schedule(voids: list[Void], lf: list[int], t_r: int, rtt: int, c: int,
                    grant: int, d_q: int, cfg, rng: random.Random,
                    guard: Optional[Mapping[int, int]] = None):
    """Return ``(branch, wavelength, first_bit)``."""
    W = len(lf)
    t_w = (grant + cfg.report_bytes) * cfg.byte_time + cfg.guard
    dl = t_r + d_q
    voids = sorted(voids, key=lambda v: (v.wavelength, v.start))

    def lo(v):
        return floor_for(v.start, t_r, v.wavelength, tc(t_r, rtt, c, v.wavelength, cfg), guard)

    V_valid = [v for v in voids if min(v.end, dl) - max(v.start, lo(v)) >= t_w]
    LF_valid = []
    for j in range(W):
        f = floor_for(lf[j], t_r, j, tc(t_r, rtt, c, j, cfg), guard)
        if dl - max(lf[j], f) >= t_w:
            LF_valid.append(j)
    V_s = [v for v in V_valid if v.start >= tc(t_r, rtt, c, v.wavelength, cfg)]
    V_e = [v for v in V_valid if v.end <= dl]
    LF_nv = [j for j in LF_valid if lf[j] >= tc(t_r, rtt, c, j, cfg)]

    def argmax(items, key):
        best = None
        for it in items:
            if best is None or key(it) > key(best):
                best = it
        return best

    def horizon_club():
        fm = argmax(LF_nv, key=lambda j: lf[j])   # first max = lowest index
        return Branch.HORIZON_CLUB, fm, lf[fm]

    if V_valid:
        if V_s or V_e:
            sm = argmax(V_s, key=lambda v: v.start)
            em = argmax(V_e, key=lambda v: v.end)
            if sm is not None and (em is None or sm.start + t_w > em.end):
                return Branch.VOID_CLUB_START, sm.wavelength, sm.start
            return Branch.VOID_CLUB_END, em.wavelength, em.end - t_w
        if LF_nv:
            return horizon_club()
        v = V_valid[rng.randrange(len(V_valid))]
        return Branch.VOID_LATEST, v.wavelength, dl - t_w
    if LF_valid:
        if LF_nv:
            return horizon_club()
        j = LF_valid[rng.randrange(len(LF_valid))]
        return Branch.HORIZON_LATEST, j, dl - t_w
    j, t = oracle_eft(voids, lf, t_r, rtt, c, t_w, cfg, guard)
    return Branch.EFT_FALLBACK, j, t


def oracle_eft(voids, lf, t_r, rtt, c, t_w, cfg, guard=None):
    """Minimum over every (wavelength, candidate start) pair; lowest index on ties."""
    cands = []
    for j in range(len(lf)):
        base = tc(t_r, rtt, c, j, cfg)
        for v in voids:
            if v.wavelength != j:
                continue
            s = max(v.start, floor_for(v.start, t_r, j, base, guard))
            if s + t_w <= v.end:
                cands.append((s, j))
        cands.append((max(lf[j], floor_for(lf[j], t_r, j, base, guard)), j))
    t, j = min(cands)
    return j, t
