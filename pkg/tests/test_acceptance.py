"""End-to-end acceptance checks A1 to A10.

Each test prints one ``A<n> PASS|FAIL <detail>`` line (also repeated in the
terminal summary). Expensive Monte Carlo runs are cached so that the ordering
check A6 can audit every paired trial that the other checks produced.
"""

import dataclasses
import functools
import itertools
import time

import numpy as np

from beamkit.channel import realize_channel, sample_multiuser_channel, sample_paths
from beamkit.cli import render_csv
from beamkit.config import load_preset, preset_names
from beamkit.evaluation import snr_gap_db
from beamkit.experiments import psd_to_power, run_scenario, run_sweep
from beamkit.hybrid_su import (
    Structure,
    StructureMask,
    analog_objective,
    average_covariance,
    design_analog,
)
from beamkit.mu_miso import (
    WmmseOptions,
    expected_user_rates,
    fully_digital_wmmse,
    hybrid_mu_design,
    static_weights,
    subcarrier_power,
    wmmse_digital,
)
from beamkit.numerics import water_filling

FC, PC = Structure.FULLY_CONNECTED, Structure.PARTIALLY_CONNECTED

# every SweepResult produced here, audited by A6
SWEEPS: dict = {}


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@functools.lru_cache(maxsize=None)
def sweep(name: str, **changes):
    s, _ = load_preset(name)
    s = dataclasses.replace(s, **changes)
    result = run_sweep(s, threads=4)
    SWEEPS[(name, tuple(sorted(changes.items())))] = result
    return result


# -- A1 ------------------------------------------------------------------------


def test_a1_coordinate_descent_monotone(report):
    def run():
        worst = np.inf
        for seed in range(100):
            rng = np.random.default_rng(seed)
            structure = FC if seed % 2 == 0 else PC
            paths = sample_paths(5, 10, np.deg2rad(10), 16, 8, rng, max_delay=2.0)
            F = average_covariance(realize_channel(paths, 16, 8, 8).H)
            c = 10 ** rng.uniform(-1, 1) / (16 * 4)
            mask = StructureMask.for_structure(structure, 16, 4)
            V0 = design_analog(F, mask, c, max_sweeps=0, init_seed=seed)
            trace = [analog_objective(V0, F, c)]
            design_analog(F, mask, c, init_seed=seed, on_update=lambda V: trace.append(analog_objective(V, F, c)))
            worst = min(worst, float(np.min(np.diff(trace))))
        return worst

    worst, dt = timed(run)
    report("A1", worst >= -1e-9 and dt < 60, f"min step {worst:.2e} over 100 instances, {dt:.1f}s")


# -- A2 ------------------------------------------------------------------------


def test_a2_one_bit_small_oracle(report):
    signs = [np.array(s, dtype=complex).reshape(4, 2) for s in itertools.product([1, -1], repeat=8)]
    mask = StructureMask.fully_connected(4, 2)

    def run():
        local_ok, near_global = True, 0
        for seed in range(50):
            rng = np.random.default_rng(1000 + seed)
            a = crandn(rng, 4, 4)
            F = a @ a.conj().T
            V = design_analog(F, mask, 1.0, bits=1, init_seed=seed)
            obj = analog_objective(V, F, 1.0)
            for i, j in itertools.product(range(4), range(2)):
                W = V.copy()
                W[i, j] *= -1
                local_ok &= analog_objective(W, F, 1.0) <= obj + 1e-12
            best = max(analog_objective(S, F, 1.0) for S in signs)
            near_global += obj >= 0.9 * best
        return local_ok, near_global

    (local_ok, near), dt = timed(run)
    report("A2", local_ok and near >= 45 and dt < 60, f"single-flip optimal={local_ok}, >=90% of optimum {near}/50, {dt:.1f}s")


# -- A3 ------------------------------------------------------------------------


def test_a3_partial_gram_exact(report):
    worst = 0.0
    for seed, (nt, n_rf), bits in itertools.product(range(5), [(16, 4), (64, 8), (12, 3)], [None, 1, 2]):
        rng = np.random.default_rng(seed)
        a = crandn(rng, nt, 6)
        V = design_analog(a @ a.conj().T, StructureMask.partially_connected(nt, n_rf), 1.0, bits, init_seed=seed)
        worst = max(worst, float(np.max(np.abs(V.conj().T @ V - (nt / n_rf) * np.eye(n_rf)))))
    report("A3", worst <= 1e-12, f"max |V^H V - (Nt/N_RF) I| = {worst:.1e} over 45 designs")


# -- A4 ------------------------------------------------------------------------


def _ratio(result, n):
    return float(np.nanmean(result.paired(n, "asymptotic") / result.paired(n, "fully_digital")))


def test_a4_asymptotic_convergence(report):
    def run():
        # keep drawing channels until every point has 50 successful trials
        grid, trials = (16, 64, 256), 50
        while True:
            a = sweep("fig3a", axis=grid, trials=trials)
            b = sweep("fig3b", axis=grid, trials=trials)
            short = 50 - min(r.trials for r in a.rows + b.rows)
            if short <= 0:
                return a, b
            trials += short

    (a, b), dt = timed(run)
    ok_trials = min(r.trials for r in a.rows + b.rows)
    ra = [_ratio(a, n) for n in (16, 64, 256)]
    rb64 = _ratio(b, 64)
    ok = ok_trials >= 50 and np.all(np.diff(ra) > 0) and ra[-1] > 0.85 and rb64 < ra[1] and dt < 600
    report(
        "A4", ok,
        f"(15,1) ratios {ra[0]:.3f}/{ra[1]:.3f}/{ra[2]:.3f} at N=16/64/256, (5,10) at N=64 {rb64:.3f}, "
        f"{ok_trials} channels, {dt:.0f}s",
    )


# -- A5 ------------------------------------------------------------------------


def test_a5_fig4_gap(report):
    r, dt = timed(lambda: sweep("fig4", trials=100))
    snr = np.array(r.axis, dtype=float)
    loss = {a: r.row(a, "fully_digital").mean_rate - r.row(a, "hybrid_fc").mean_rate for a in (0.0, 10.0, 20.0)}
    gap = snr_gap_db(snr, r.mean_curve("hybrid_fc"), r.mean_curve("asymptotic"))
    ok = max(loss.values()) <= 1.0 and 1.0 <= gap <= 3.0 and dt < 1200
    losses = "/".join(f"{v:.2f}" for v in loss.values())
    report("A5", ok, f"loss vs fully-digital {losses} bits at 0/10/20 dB, SNR gap to asymptotic {gap:.2f} dB, {dt:.0f}s")


# -- A7 ------------------------------------------------------------------------


def grid_allocation(g, budget, step=1e-6):
    """Oracle: best feasible water level on a 1e-6 grid over the level bracket."""
    inv = 1.0 / g
    lo, hi = inv.min() + budget / g.size, inv.min() + budget
    levels = np.arange(lo - step, hi + 2 * step, step)
    used = np.zeros_like(levels)
    for x in inv:
        used += np.maximum(levels - x, 0.0)
    level = levels[np.searchsorted(used, budget, side="right") - 1]
    return np.maximum(level - inv, 0.0)


def test_a7_water_filling_oracle(report):
    def run():
        rng = np.random.default_rng(7)
        worst_p, worst_obj = 0.0, np.inf
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            g = rng.exponential(size=n) * 10 ** rng.uniform(-1, 1)
            budget = float(rng.uniform(0.1, 2.0))
            p = water_filling(g, budget).powers
            q = grid_allocation(g, budget)
            worst_p = max(worst_p, float(np.max(np.abs(p - q))))
            worst_obj = min(worst_obj, float(np.sum(np.log2(1 + g * p)) - np.sum(np.log2(1 + g * q))))
        return worst_p, worst_obj

    (dp, dobj), dt = timed(run)
    report("A7", dp <= 1e-5 and dobj >= -1e-8 and dt < 60, f"max power error {dp:.1e}, min objective margin {dobj:.1e}, {dt:.1f}s")


# -- A8 ------------------------------------------------------------------------


def test_a8_wmmse_contract(report):
    noise = psd_to_power(-139.0, 32e6, 8)

    def run():
        worst_step, worst_power, worst_slack = np.inf, 0.0, 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            ch = sample_multiuser_channel(16, 4, 8, 10, 0.2, rng)
            beta = static_weights(expected_user_rates(ch, psd_to_power(-55.0, 32e6, 8), noise, rng))
            power = psd_to_power(float(rng.choice([-60.0, -45.0, -30.0])), 32e6, 8)
            opts = WmmseOptions(rel_tol=1e-10, max_iters=300)
            for pre in (fully_digital_wmmse(ch, beta, power, noise, opts),
                        hybrid_mu_design(ch, 8, beta, power, noise, options=opts)):
                worst_step = min(worst_step, float(np.min(np.diff(pre.trace))))
                pw = subcarrier_power(pre.V_RF, pre.V_D)
                worst_power = max(worst_power, float(np.max(pw / power - 1.0)))
            # slackness on the last iterate: positive multiplier means full power
            res = wmmse_digital(ch.h, np.eye(16), beta, power, noise, opts)
            pw = subcarrier_power(np.eye(16), res.V_D)
            active = res.state.lam > 0
            if np.any(active):
                worst_slack = max(worst_slack, float(np.max(np.abs(pw[active] / power - 1.0))))
        return worst_step, worst_power, worst_slack

    (step, pw, slack), dt = timed(run)
    ok = step >= -1e-8 and pw <= 1e-6 and slack <= 1e-6 and dt < 300
    report("A8", ok, f"min WSR step {step:.1e}, max power excess {pw:.1e}, slackness residual {slack:.1e}, {dt:.0f}s")


# -- A9 ------------------------------------------------------------------------


def test_a9_sixteen_rf_chains_near_digital(report):
    def run():
        return sweep("fig7", methods=("fully_digital", "hybrid_nrf16"), trials=50)

    r, dt = timed(run)
    ratios = [r.row(a, "hybrid_nrf16").mean_rate / r.row(a, "fully_digital").mean_rate for a in r.axis]
    drops = min(x.trials for x in r.rows)
    ok = min(ratios) >= 0.92 and drops >= 50 and dt < 1800
    detail = ", ".join(f"{a:g}:{q:.3f}" for a, q in zip(r.axis, ratios))
    report("A9", ok, f"hybrid/fully-digital per PSD dBm/Hz {detail}; {drops} drops, {dt:.0f}s")


# -- A10 -----------------------------------------------------------------------


def test_a10_presets_deterministic(report):
    def run():
        same = {}
        for name in preset_names():
            s, _ = load_preset(name)
            s = dataclasses.replace(s, trials=2 if name != "fig8" else 6)
            result = run_scenario(s)
            same[name] = render_csv(result) == render_csv(run_scenario(s, threads=2))
            if s.mode != "mu_cdf":
                SWEEPS[(name, "a10")] = result
        return same

    same, dt = timed(run)
    bad = [k for k, v in same.items() if not v]
    report("A10", not bad, f"{len(same)} presets rerun byte-identical" + (f", differing: {bad}" if bad else "") + f", {dt:.0f}s")


# -- A6 (runs last, audits every sweep above) ----------------------------------

UNQUANTIZED = {"hybrid_fc_b1": "hybrid_fc", "hybrid_pc_b1": "hybrid_pc"}


def _audit(result):
    """(paired comparisons, worst excess) for hybrid <= digital and quantized <= unquantized."""
    n, worst = 0, -np.inf
    for a in result.axis:
        pairs = [(m, "fully_digital") for m in result.methods
                 if m != "fully_digital" and not m.startswith("fully_digital_")]
        pairs += [(q, u) for q, u in UNQUANTIZED.items() if q in result.methods and u in result.methods]
        for low, high in pairs:
            d = result.paired(a, low) - result.paired(a, high)
            d = d[np.isfinite(d)]
            n += d.size
            if d.size:
                worst = max(worst, float(d.max()))
    return n, worst


def test_a6_ordering_on_every_trial(report):
    # a quantized-vs-unquantized run for both structures, then everything cached so far
    sweep("fig6", methods=("fully_digital", "hybrid_fc", "hybrid_fc_b1", "hybrid_pc", "hybrid_pc_b1"), trials=20)
    sweep("fig5", trials=10)
    total, worst = 0, -np.inf
    for result in SWEEPS.values():
        n, w = _audit(result)
        total += n
        worst = max(worst, w)
    report("A6", total > 0 and worst <= 1e-6, f"{total} paired comparisons from {len(SWEEPS)} sweeps, worst excess {worst:.2e}")
