"""Scenario runners: turn a :class:`~beamkit.config.Scenario` into sweep results.

Single-user sweeps draw one clustered channel per trial and evaluate every
(axis value, method) pair on it. Antenna sweeps keep the trial's path
geometry and gains fixed across array sizes (only the ``sqrt(Nt Nr)`` gain
normalization changes), so consecutive axis points are paired as well.

Multiuser sweeps draw one drop of users per trial. The CDF mode simulates a
persistent cell: a fixed user population and scattering environment, random
scheduling of ``users`` users per time slot and priority weights adapted to
each user's average rate so far, run independently for every method on the
same schedule and channels.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from beamkit.channel import (
    realize_channel,
    sample_environment,
    sample_multiuser_channel,
    sample_paths,
)
from beamkit.config import Scenario
from beamkit.evaluation import (
    SweepResult,
    fully_digital_baseline,
    guarded,
    monte_carlo,
    rate_cdf,
    rate_su_active,
    rate_su_ideal,
)
from beamkit.hybrid_su import DesignOptions, algorithm1, asymptotic_design, design_transmitter
from beamkit.mu_miso import (
    WmmseOptions,
    adapt_weights,
    expected_user_rates,
    fully_digital_wmmse,
    hybrid_mu_design,
    static_weights,
    user_rates,
)

__all__ = ["CdfResult", "psd_to_power", "run_scenario", "run_sweep", "run_cdf"]

logger = logging.getLogger(__name__)


def psd_to_power(psd_dbm_hz: float, bandwidth_hz: float, subcarriers: int) -> float:
    """Per-subcarrier power in watts for a PSD in dBm/Hz over ``bandwidth/K`` Hz."""
    dbm = psd_dbm_hz + 10.0 * np.log10(bandwidth_hz / subcarriers)
    return float(10.0 ** ((dbm - 30.0) / 10.0))


@dataclass
class CdfResult:
    """Per-user average rates of every method (users scheduled at least once)."""

    rates: dict  # method -> np.ndarray of per-user average rates
    failed: dict  # method -> number of slots where the design failed
    scheduled: np.ndarray  # slots each population member was served

    def rows(self) -> list[tuple[float, float, str]]:
        out = []
        for method in sorted(self.rates):
            x, f = rate_cdf(self.rates[method])
            out.extend((float(r), float(c), method) for r, c in zip(x, f))
        return out


# ---------------------------------------------------------------- single user


def _design_options(s: Scenario, trial: int) -> DesignOptions:
    return DesignOptions(max_sweeps=s.max_sweeps, rel_tol=s.analog_rel_tol, init_seed=s.seed + trial)


def _su_rate(s: Scenario, channel, method, axis_value, snr_db: float, trial: int) -> float:
    power = 10.0 ** (snr_db / 10.0)
    H = channel.H
    if method.kind == "fully_digital":
        return fully_digital_baseline(H, s.ns, power, 1.0).mean_rate
    spec = s.architecture(axis_value, method, power=power)
    if method.kind == "asymptotic":
        bf = asymptotic_design(channel, s.ns, power, 1.0, n_rf=s.n_rf)
    elif s.receiver == "digital":
        V_RF, V_D = design_transmitter(channel, spec, _design_options(s, trial))
        return float(np.mean(rate_su_ideal(H, V_RF[None] @ V_D, 1.0)))
    else:
        bf = algorithm1(channel, spec, _design_options(s, trial))
    if s.receiver == "digital":
        return float(np.mean(rate_su_ideal(H, bf.V_t, 1.0)))
    return float(np.mean(rate_su_active(H, bf.V_t, bf.W_t, 1.0)))


def _su_trial_fn(s: Scenario):
    methods = s.su_methods()
    spread = np.deg2rad(s.angular_spread_deg)

    def trial(rng: np.random.Generator, index: int) -> dict:
        # unit-variance geometry, rescaled to each array size below
        base = sample_paths(s.clusters, s.scatterers, spread, 1, 1, rng, max_delay=s.delay_fraction * s.subcarriers)
        out = {}
        cache = {}
        for a in s.axis:
            nt, nr = s.antennas_at(a)
            if (nt, nr) not in cache:
                paths = dataclasses.replace(base, gains=base.gains * np.sqrt(nt * nr))
                cache[(nt, nr)] = realize_channel(paths, nt, nr, s.subcarriers, s.antenna_spacing)
            channel = cache[(nt, nr)]
            snr_db = a if s.mode == "su_sweep_snr" else s.snr_db
            for m in methods:
                out[(a, m.tag)] = guarded(lambda: _su_rate(s, channel, m, a, snr_db, index), f"{m.tag}@{a}")
        return out

    return trial


# ------------------------------------------------------------------ multiuser


def _noise_power(s: Scenario) -> float:
    return psd_to_power(s.noise_psd_dbm_hz, s.bandwidth_hz, s.subcarriers)


def _wmmse_options(s: Scenario) -> WmmseOptions:
    return WmmseOptions(rel_tol=s.wmmse_rel_tol, max_iters=s.wmmse_max_iters, init=s.wmmse_init)


def _mu_design(s: Scenario, channel, method, weights, power: float, noise: float, trial: int):
    """Returns (per-user rates averaged over subcarriers, precoder)."""
    if method.kind == "fully_digital":
        ch = channel if method.antennas is None else channel.subarray(method.antennas)
        pre = fully_digital_wmmse(ch, weights, power, noise, _wmmse_options(s))
        h = ch.h
    else:
        pre = hybrid_mu_design(
            channel, method.n_rf, weights, power, noise, method.structure, method.phase_bits,
            options=_wmmse_options(s), analog_options=_design_options(s, trial),
        )
        h = channel.h
    return np.mean(user_rates(h, pre.V_RF, pre.V_D, noise), axis=0), pre


def _mu_drop(s: Scenario, rng: np.random.Generator, **kw):
    return sample_multiuser_channel(
        s.nt, s.users, s.subcarriers, s.clusters_env, s.radius_km, rng,
        scatterers_per_cluster=s.scatterers, angular_spread=np.deg2rad(s.angular_spread_deg),
        delay_fraction=s.delay_fraction, min_distance_km=s.min_distance_km,
        spacing_over_wavelength=s.antenna_spacing, **kw,
    )


def _mu_trial_fn(s: Scenario):
    methods = s.mu_methods()
    noise = _noise_power(s)

    def trial(rng: np.random.Generator, index: int) -> dict:
        channel = _mu_drop(s, rng)
        if s.weights == "static":
            ref = psd_to_power(s.reference_psd_dbm_hz, s.bandwidth_hz, s.subcarriers)
            expected = expected_user_rates(channel, ref, noise, rng, s.expected_rate_samples, s.antenna_spacing)
            beta = static_weights(expected)
        else:
            beta = np.ones(s.users)
        out = {}
        for a in s.axis:
            power = psd_to_power(a, s.bandwidth_hz, s.subcarriers)
            for m in methods:
                out[(a, m.tag)] = guarded(
                    lambda: float(_mu_design(s, channel, m, beta, power, noise, index)[0] @ beta), f"{m.tag}@{a}"
                )
        return out

    return trial


def run_sweep(s: Scenario, threads: int = 1) -> SweepResult:
    """Monte Carlo over ``s.trials`` paired trials; one row per (axis, method)."""
    if s.mode == "mu_cdf":
        raise ValueError("mu_cdf produces a CDF, use run_cdf")
    trial_fn = _mu_trial_fn(s) if s.is_multiuser else _su_trial_fn(s)
    axis_name = {"su_sweep_snr": "snr_db", "mu_sum_rate": "psd_dbm_hz"}.get(s.mode, "antennas")
    return monte_carlo(trial_fn, s.axis, list(s.methods), s.trials, s.seed, axis_name=axis_name, threads=threads)


def run_cdf(s: Scenario, threads: int = 1) -> CdfResult:
    """
    Adaptive-weight multiuser simulation over ``s.trials`` time slots.

    The population (cluster and distance of every user) and the scattering
    environment come from a generator seeded with ``(seed, 1)``; slot ``t``
    uses ``seed + t`` for scheduling and small-scale gains. A user's average
    rate is the mean over the slots in which it was served; a scheduled user
    without history gets the mean average of the scheduled users that have
    one (weight 1 if none do).
    """
    if s.mode != "mu_cdf":
        raise ValueError("run_cdf needs a mu_cdf scenario")
    noise = _noise_power(s)
    power = psd_to_power(s.axis[0], s.bandwidth_hz, s.subcarriers)
    pop_rng = np.random.default_rng([s.seed, 1])
    env = sample_environment(
        s.clusters_env, s.subcarriers, pop_rng, s.scatterers, np.deg2rad(s.angular_spread_deg), s.delay_fraction
    )
    clusters = pop_rng.integers(0, s.clusters_env, size=s.population)
    distances = np.maximum(s.radius_km * np.sqrt(pop_rng.uniform(0.0, 1.0, size=s.population)), s.min_distance_km)

    slots = []
    for t in range(s.trials):
        rng = np.random.default_rng(s.seed + t)
        who = np.sort(rng.choice(s.population, size=s.users, replace=False))
        ch = _mu_drop(s, rng, cluster_assignment=clusters[who], distances_km=distances[who], environment=env)
        slots.append((who, ch))

    def simulate(method):
        total = np.zeros(s.population)
        served = np.zeros(s.population, dtype=int)
        failed = 0
        for t, (who, ch) in enumerate(slots):
            if s.weights == "adaptive":
                known = served[who] > 0
                avg = np.where(known, total[who] / np.maximum(served[who], 1), 0.0)
                fill = float(np.mean(avg[known])) if np.any(known) else 1.0
                beta = adapt_weights(np.where(known, avg, fill))
            else:
                beta = np.ones(s.users)
            try:
                rates, _ = _mu_design(s, ch, method, beta, power, noise, t)
            except (ValueError, np.linalg.LinAlgError) as exc:
                logger.warning("method %s failed on slot %d: %s", method.tag, t, exc)
                failed += 1
                continue
            total[who] += rates
            served[who] += 1
        return total, served, failed

    methods = s.mu_methods()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(simulate, methods))
    else:
        outcomes = [simulate(m) for m in methods]

    rates, failed = {}, {}
    scheduled = np.zeros(s.population, dtype=int)
    for m, (total, served, nfail) in zip(methods, outcomes):
        ok = served > 0
        rates[m.tag] = total[ok] / served[ok]
        failed[m.tag] = nfail
        scheduled = np.maximum(scheduled, served)
    return CdfResult(rates=rates, failed=failed, scheduled=scheduled)


def run_scenario(s: Scenario, threads: int = 1):
    """Dispatch on the scenario mode: a :class:`SweepResult` or a :class:`CdfResult`."""
    return run_cdf(s, threads) if s.mode == "mu_cdf" else run_sweep(s, threads)
