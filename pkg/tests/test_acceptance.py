"""Acceptance criteria, one test each, at their stated tolerances.

Each test records a one-line PASS/FAIL verdict that ``conftest.py`` prints in
the terminal summary.  Run alone with ``pytest tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import random
import statistics
import time

import pytest

from eonovm import SimConfig, eta_max, run
from eonovm.core import HorizonSet, OnuState, Void, VoidSet
from eonovm.metrics import RunStats
from eonovm.scheduler import ReportEvent, schedule
from instances import random_instance
from oracle import oracle_schedule

MS = 1_000_000
S = 1_000_000_000
VERDICTS: list[str] = []
RUNS: list[RunStats] = []


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def sim(**kw) -> RunStats:
    st = run(SimConfig(**kw))
    RUNS.append(st)
    return st


def mean_eff(seeds, **kw) -> float:
    return statistics.fmean(sim(seed=s, **kw).efficiency for s in seeds)


SEEDS5 = (1, 2, 3, 4, 5)
SEEDS3 = (1, 2, 3)


def test_c01_bound_formula():
    a = eta_max(SimConfig(n_onus=64, n_wavelengths=8, load=0.5))
    b = eta_max(SimConfig(n_onus=64, n_wavelengths=8, load=0.0))
    c = eta_max(SimConfig(n_onus=16, n_wavelengths=1, load=1.0))
    verdict(1, (a, b, c) == (60.0, 100.0, 0.0),
            f"eta_max = {a} / {b} / {c} (expect 60 / 100 / 0, exact)")


def test_c02_oracle_equivalence():
    rng = random.Random(2024)
    mismatches = 0
    t0 = time.perf_counter()
    for _ in range(10_000):
        ins = random_instance(rng)
        seed = rng.randrange(1 << 30)
        vs, hs, onu, rep = ins.structures()
        d = schedule(rep, onu, vs, hs, ins.cfg, random.Random(seed), ins.guard, ins.d_q)
        ref = oracle_schedule(ins.voids, ins.lf, ins.t_r, ins.rtt, ins.c, ins.grant, ins.d_q,
                              ins.cfg, random.Random(seed), ins.guard)
        mismatches += (d.branch, d.wavelength, d.first_bit) != ref
    dt = time.perf_counter() - t0
    verdict(2, mismatches == 0 and dt < 60,
            f"{mismatches} mismatches on 10000 instances in {dt:.1f}s")


def test_c03_near_bound():
    eff = mean_eff(SEEDS5, n_onus=64, n_wavelengths=8, load=0.6, run_time=3 * S)
    bound = eta_max(SimConfig(n_onus=64, n_wavelengths=8, load=0.6))
    verdict(3, bound - eff <= 3.0,
            f"N=64 W=8 L=0.6: efficiency {eff:.2f}% vs bound {bound:.0f}% "
            f"(gap {bound - eff:.2f} pp, limit 3)")


def test_c04_switching_time_monotone():
    parts, ok = [], True
    for load in (0.3, 0.6, 0.9):
        e = [mean_eff(SEEDS5, n_onus=64, n_wavelengths=8, load=load, sleep_wake=t, run_time=S)
             for t in (500_000, MS, 2 * MS)]
        ok &= e[0] >= e[1] - 1.0 and e[1] >= e[2] - 1.0
        parts.append(f"L={load}: " + " >= ".join(f"{x:.2f}" for x in e))
    verdict(4, ok, "T_sw 0.5/1/2 ms; " + "; ".join(parts))


def test_c05_delay_bound_monotone():
    parts, ok = [], True
    for load in (0.3, 0.6):
        e = [mean_eff(SEEDS3, n_onus=16, n_wavelengths=2, load=load, d_max=d)
             for d in (15 * MS, 10 * MS, 5 * MS)]
        ok &= e[0] >= e[1] - 1.0 and e[1] >= e[2] - 1.0
        parts.append(f"L={load}: " + " >= ".join(f"{x:.2f}" for x in e))
    verdict(5, ok, "D_max 15/10/5 ms; " + "; ".join(parts))


def test_c06_scaling():
    big = mean_eff(SEEDS5, n_onus=64, n_wavelengths=8, load=0.6, run_time=3 * S)
    small = mean_eff(SEEDS5, n_onus=16, n_wavelengths=2, load=0.6, run_time=3 * S)
    bound = eta_max(SimConfig(n_onus=16, n_wavelengths=2, load=0.6))
    verdict(6, bound - big <= bound - small,
            f"deviation N=64/W=8 {bound - big:.2f} pp <= N=16/W=2 {bound - small:.2f} pp")


def test_c07_delay_safety():
    worst, non_eft = 0.0, 0
    for load in (0.1, 0.3, 0.5, 0.7):
        for s in SEEDS3:
            st = sim(n_onus=16, n_wavelengths=2, load=load, seed=s)
            worst = max(worst, st.violation_fraction)
            non_eft += st.violations_non_eft
    verdict(7, worst < 0.01 and non_eft == 0,
            f"max late fraction {100 * worst:.3f}% (< 1%), late outside fallback cycles {non_eft}")


def test_c08_baseline():
    grid = tuple(round(0.05 * i, 2) for i in range(1, 20))
    ok, worst_gap, parts = True, float("inf"), []
    for load in grid:
        kw = dict(n_onus=64, n_wavelengths=8, load=load, run_time=S // 5)
        e = sim(**kw).efficiency
        b = sim(scheduler="eft", **kw).efficiency
        ok &= e >= b and (load < 0.7 or e > b)
        worst_gap = min(worst_gap, e - b)
        if load in (0.05, 0.5, 0.7, 0.95):
            parts.append(f"L={load}: {e:.1f} vs {b:.1f}")
    verdict(8, ok, f"EO-NoVM vs EFT-sleep; min gap {worst_gap:.2f} pp; " + "; ".join(parts))


def test_c09_fixed_vs_variable():
    def pair(load):
        f = mean_eff(SEEDS3, n_onus=16, n_wavelengths=2, load=load, delay_policy="fixed")
        v = mean_eff(SEEDS3, n_onus=16, n_wavelengths=2, load=load, delay_policy="variable")
        return f, v
    f0, v0 = pair(0.05)
    ok = f0 - v0 >= 5.0
    parts = [f"L=0.05: fixed {f0:.2f} variable {v0:.2f}"]
    for load in (0.3, 0.5, 0.7, 0.9):
        f, v = pair(load)
        ok &= abs(f - v) <= 3.0
        parts.append(f"L={load}: {f:.2f}/{v:.2f}")
    verdict(9, ok, "; ".join(parts))


def test_c10_invariants():
    # every run above finished, so the engine's hard checks (overlap, coverage,
    # void count, accounting, gated bytes) held; re-check the exported identities
    bad = []
    for st in RUNS:
        c = st.config
        if any(sum(t.values()) != c.run_time for t in st.receiver_totals):
            bad.append("mode times")
        if st.max_void_count > c.n_onus:
            bad.append("void count")
        if st.granted_bytes != st.reported_bytes:
            bad.append("gated bytes")
        if not st.unstable and st.efficiency > st.eta_max_measured + 0.5:
            bad.append("efficiency above bound")
    verdict(10, bool(RUNS) and not bad, f"{len(RUNS)} runs checked, {len(bad)} breaches")


def _bench_state(n: int, w: int, rng: random.Random):
    per = [sorted(rng.sample(range(0, 10 * MS, 1_000), 2 * (n // w + 1))) for _ in range(w)]
    voids = []
    for j in range(w):
        for i in range(0, 2 * (n // w), 2):
            if len(voids) < n:
                voids.append(Void(per[j][i], per[j][i + 1], j))
    lf = [per[j][-1] + 1_000 for j in range(w)]
    return VoidSet.from_voids(w, voids), HorizonSet(w, 1_000, lf)


def _median_latency(n: int, w: int, reps: int = 600) -> float:
    rng = random.Random(n * 1_000 + w)
    vs, hs = _bench_state(n, w, rng)
    cfg, pick, times = SimConfig(), random.Random(1), []
    for _ in range(reps):
        onu = OnuState.initial(0, rng.randrange(w), 200_000, 10 * MS)
        rep = ReportEvent(0, rng.randrange(0, 2 * MS), rng.randrange(0, 20_000))
        d_q = rng.randrange(100_000, 4_950_000)
        t0 = time.perf_counter()
        schedule(rep, onu, vs, hs, cfg, pick, d_q=d_q)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def test_c11_complexity():
    n_ratio = _median_latency(512, 8) / _median_latency(32, 8)
    w_ratio = _median_latency(256, 64) / _median_latency(256, 4)
    verdict(11, n_ratio <= 20 and w_ratio <= 3,
            f"latency x{n_ratio:.1f} for N 32->512 (<= 20), x{w_ratio:.2f} for W 4->64 (<= 3)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
