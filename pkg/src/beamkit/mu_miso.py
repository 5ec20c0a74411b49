"""Hybrid precoding for the multiuser MISO OFDM downlink.

The analog precoder is designed as if the users were one cooperative
receiver (the single-user coordinate descent on the stacked channel). With
the analog part fixed, per-subcarrier digital precoders come from WMMSE
iterations under a per-subcarrier power constraint; the multiplier of each
subcarrier is found by bisection on its (monotone) power function.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from beamkit.channel import MultiuserChannel, ula_response
from beamkit.hybrid_su import (
    DesignOptions,
    RankDeficientError,
    RANK_RTOL,
    Structure,
    StructureMask,
    average_covariance,
    design_analog,
)

__all__ = [
    "MuPrecoder",
    "WmmseState",
    "WmmseOptions",
    "WmmseResult",
    "user_rates",
    "rate_mu",
    "weighted_sum_rate",
    "wmmse_digital",
    "hybrid_mu_design",
    "fully_digital_wmmse",
    "adapt_weights",
    "expected_user_rates",
    "static_weights",
    "subcarrier_power",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WmmseOptions:
    rel_tol: float = 1e-5
    max_iters: int = 200
    bisection_rtol: float = 1e-10
    init: str = "rzf"  # default start: "rzf" (regularized zero-forcing) or "mf" (matched filter)


@dataclass
class WmmseState:
    w: np.ndarray  # (K, Nu) receive scalars
    t: np.ndarray  # (K, Nu) MSE weights, 1/e
    lam: np.ndarray  # (K,) multipliers
    iteration: int


@dataclass
class WmmseResult:
    V_D: np.ndarray  # (K, N_RF, Nu), column n is user n's precoder
    trace: list
    state: Optional[WmmseState]
    converged: bool


@dataclass
class MuPrecoder:
    V_RF: np.ndarray
    V_D: np.ndarray  # (K, N_RF, Nu)
    weights: np.ndarray
    trace: list = field(default_factory=list)

    @property
    def V_t(self) -> np.ndarray:
        return self.V_RF[None] @ self.V_D


def _effective(h: np.ndarray, V_RF: np.ndarray) -> np.ndarray:
    """Rows ``g_n^H[k] = h_n^H[k] V_RF``, shape (K, Nu, N_RF)."""
    return h @ V_RF


def user_rates(h, V_RF, V_D, noise_power: float) -> np.ndarray:
    """
    SINR rates ``R_n[k]`` in bits for every subcarrier and user.

    `h` holds the user channels as rows (``h_n^H[k]``) with shape (K, Nu, Nt)
    and `V_D` the per-user digital precoders as columns, shape (K, N_RF, Nu).
    """
    h = np.asarray(h)
    if h.ndim == 2:
        h, V_D = h[None], np.asarray(V_D)[None]
    S = np.abs(_effective(h, V_RF) @ V_D) ** 2  # S[k, n, i] = |g_n^H v_i|^2
    sig = np.einsum("knn->kn", S)
    interf = S.sum(axis=2) - sig
    return np.log2(1.0 + sig / (noise_power + interf))


rate_mu = user_rates


def weighted_sum_rate(h, V_RF, V_D, noise_power: float, weights) -> float:
    """``(1/K) sum_k sum_n beta_n R_n[k]``."""
    return float(np.mean(user_rates(h, V_RF, V_D, noise_power) @ np.asarray(weights, dtype=float)))


def subcarrier_power(V_RF, V_D) -> np.ndarray:
    """``Tr(V_RF V_D[k] V_D[k]^H V_RF^H)`` per subcarrier."""
    X = V_RF[None] @ V_D
    return np.real(np.einsum("kij,kij->k", X, X.conj()))


def _range_basis(V_RF: np.ndarray) -> np.ndarray:
    """
    Basis ``B`` (N_RF x r) of the precoder space with ``B^H Q B = I``.

    Directions in the null space of ``Q = V_RF^H V_RF`` (duplicated analog
    beams) radiate nothing and are dropped, so WMMSE runs on ``u`` with
    ``v = B u`` and power ``||u||^2``.
    """
    Q = V_RF.conj().T @ V_RF
    w, u = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    keep = w > RANK_RTOL * max(w[-1], 0.0)
    if not np.any(keep):
        raise RankDeficientError("analog precoder is zero")
    return u[:, keep] / np.sqrt(w[keep])


def _solve_multipliers(d: np.ndarray, c2: np.ndarray, power: float, rtol: float) -> np.ndarray:
    """
    Smallest ``lam >= 0`` per subcarrier with ``sum_i c2_i / (d_i + lam)^2 <= power``.

    `d` are the eigenvalues of the whitened quadratic term and `c2` the
    squared norms of the whitened linear term along those eigenvectors,
    both shape (K, N_RF). Components with numerically zero `d` carry no
    signal (the linear term lies in the range of the quadratic one) and are
    dropped.
    """
    dmax = np.max(d, axis=1, keepdims=True)
    null = d <= RANK_RTOL * np.maximum(dmax, 1e-300)
    c2 = np.where(null, 0.0, c2)
    dd = np.where(null, 1.0, d)
    power0 = np.sum(np.where(null, 0.0, c2 / dd**2), axis=1)
    lam = np.zeros(d.shape[0])
    need = power0 > power
    if not np.any(need):
        return lam

    total = np.sum(c2[need], axis=1)
    hi = np.sqrt(total / power)  # power(hi) <= total / hi^2 = power
    lo = np.maximum(hi - np.max(d[need], axis=1), 0.0)
    dn, cn = d[need], c2[need]
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        pw = np.sum(cn / (dn + mid[:, None]) ** 2, axis=1)
        feasible = pw <= power
        hi = np.where(feasible, mid, hi)
        lo = np.where(feasible, lo, mid)
        if np.all(hi - lo <= rtol * hi):
            break
    lam[need] = hi
    return lam


def wmmse_digital(
    g,
    V_RF: np.ndarray,
    weights,
    power: float,
    noise_power: float,
    options: WmmseOptions = WmmseOptions(),
    init: Optional[np.ndarray] = None,
) -> WmmseResult:
    """
    WMMSE digital precoding for a fixed analog precoder.

    Parameters
    ----------
    g : np.ndarray
        Effective channels ``h_n^H[k] V_RF`` as rows, shape (K, Nu, N_RF).
    V_RF : np.ndarray
        Analog precoder (only ``V_RF^H V_RF`` enters the power constraint).
    weights : array_like
        Positive user priorities.
    power, noise_power : float
        Per-subcarrier power budget and noise variance.
    options : WmmseOptions
        Stopping rule and multiplier tolerance.
    init : np.ndarray, optional
        Feasible starting precoders (K, N_RF, Nu). By default the start is
        regularized zero-forcing with regularization ``Nu noise_power / P``
        (``options.init == "rzf"``) or the matched filters ``Q^{-1} g_n``
        (``"mf"``), scaled to full power.

    Notes
    -----
    The iterations run in coordinates ``u`` with ``v = B u`` where
    ``B^H Q B = I`` spans the non-null eigenspace of ``Q = V_RF^H V_RF``, so
    the power constraint becomes ``||u||^2 <= P``. Duplicated analog beams
    therefore waste RF chains but never make the problem ill-posed.

    From matched filters the iterations can crawl along plateaus for
    thousands of steps when the SNR is high and the array large, ending far
    below the regularized zero-forcing start; hence the default.

    Returns
    -------
    WmmseResult
        Final precoders, the weighted-sum-rate trace (one entry for the
        initial point and one per iteration) and the last receiver/MSE/
        multiplier state.
    """
    g = np.asarray(g, dtype=complex)
    beta = np.asarray(weights, dtype=float)
    if g.ndim != 3 or beta.shape != (g.shape[1],):
        raise ValueError(f"effective channel shape {g.shape} and weights {beta.shape} disagree")
    if np.any(beta <= 0):
        raise ValueError("user weights must be positive")
    B = _range_basis(V_RF)
    gr = g @ B  # reduced effective channels, rows g_n^H B
    grh = gr.conj().transpose(0, 2, 1)

    if init is None:
        if options.init == "rzf":
            reg = (beta.size * noise_power / power) * np.eye(beta.size)
            U = grh @ np.linalg.inv(gr @ grh + reg)
        elif options.init == "mf":
            U = grh.copy()  # matched filters Q^+ g_n in reduced coordinates
        else:
            raise ValueError(f"unknown WMMSE start {options.init!r}")
        pw = np.sum(np.abs(U) ** 2, axis=(1, 2))
        U = U * np.sqrt(power / np.maximum(pw, 1e-300))[:, None, None]
    else:
        # u = B^H Q v keeps the radiating part of v
        Q = V_RF.conj().T @ V_RF
        U = (B.conj().T @ Q)[None] @ np.asarray(init, dtype=complex)

    def wsr(U):
        S = np.abs(gr @ U) ** 2
        sig = np.einsum("knn->kn", S)
        return float(np.mean(np.log2(1.0 + sig / (noise_power + S.sum(2) - sig)) @ beta))

    trace = [wsr(U)]
    state = None
    converged = False
    for it in range(1, options.max_iters + 1):
        T = gr @ U  # T[k, n, i] = g_n^H v_i
        tot = noise_power + np.sum(np.abs(T) ** 2, axis=2)
        diag = np.einsum("knn->kn", T)
        w = diag / tot
        e = np.abs(w) ** 2 * tot - 2.0 * np.real(np.conj(w) * diag) + 1.0
        t = 1.0 / np.maximum(e, 1e-300)

        a = beta[None] * t * np.abs(w) ** 2
        A = (grh * a[:, None, :]) @ gr  # sum_i beta_i t_i |w_i|^2 g_i g_i^H
        Bv = grh * (beta[None] * t * w)[:, None, :]  # columns beta_n t_n w_n g_n
        d, E = np.linalg.eigh(0.5 * (A + A.conj().transpose(0, 2, 1)))
        d = np.maximum(d, 0.0)
        C = E.conj().transpose(0, 2, 1) @ Bv
        lam = _solve_multipliers(d, np.sum(np.abs(C) ** 2, axis=2), power, options.bisection_rtol)

        keep = d > RANK_RTOL * np.maximum(np.max(d, axis=1, keepdims=True), 1e-300)
        scale = np.where(keep, 1.0 / np.where(keep, d + lam[:, None], 1.0), 0.0)
        U = E @ (scale[:, :, None] * C)

        trace.append(wsr(U))
        state = WmmseState(w=w, t=t, lam=lam, iteration=it)
        prev, cur = trace[-2], trace[-1]
        if abs(cur - prev) <= options.rel_tol * max(abs(prev), 1e-12):
            converged = True
            break
    if not converged:
        logger.debug("WMMSE hit the iteration cap (%d)", options.max_iters)
    return WmmseResult(V_D=B[None] @ U, trace=trace, state=state, converged=converged)


def _mu_gamma_sq(power: float, nt: int, n_rf: int, structure: Structure) -> float:
    if Structure(structure) is Structure.PARTIALLY_CONNECTED:
        return power / nt
    return power / (nt * n_rf)


def hybrid_mu_design(
    channel,
    n_rf: int,
    weights,
    power: float,
    noise_power: float,
    structure=Structure.FULLY_CONNECTED,
    phase_bits: Optional[int] = None,
    options: WmmseOptions = WmmseOptions(),
    analog_options: DesignOptions = DesignOptions(),
) -> MuPrecoder:
    """
    Analog precoder from the stacked-user covariance, then WMMSE digital precoders.

    `channel` is a :class:`MultiuserChannel` or a raw (K, Nu, Nt) stack of
    user rows.
    """
    h = channel.h if isinstance(channel, MultiuserChannel) else np.asarray(channel)
    _, nu, nt = h.shape
    if not nu <= n_rf <= nt:
        raise ValueError(f"need Nu <= N_RF <= Nt, got Nu={nu}, N_RF={n_rf}, Nt={nt}")
    mask = StructureMask.for_structure(structure, nt, n_rf)
    F1 = average_covariance(h)
    c = _mu_gamma_sq(power, nt, n_rf, structure) / noise_power
    V_RF = design_analog(
        F1, mask, c, phase_bits,
        max_sweeps=analog_options.max_sweeps, rel_tol=analog_options.rel_tol,
        init_seed=analog_options.init_seed,
    )
    res = wmmse_digital(_effective(h, V_RF), V_RF, weights, power, noise_power, options)
    return MuPrecoder(V_RF=V_RF, V_D=res.V_D, weights=np.asarray(weights, dtype=float), trace=res.trace)


def fully_digital_wmmse(
    channel,
    weights,
    power: float,
    noise_power: float,
    options: WmmseOptions = WmmseOptions(),
) -> MuPrecoder:
    """WMMSE with one RF chain per antenna (``V_RF = I``)."""
    h = channel.h if isinstance(channel, MultiuserChannel) else np.asarray(channel)
    eye = np.eye(h.shape[2], dtype=complex)
    res = wmmse_digital(h, eye, weights, power, noise_power, options)
    return MuPrecoder(V_RF=eye, V_D=res.V_D, weights=np.asarray(weights, dtype=float), trace=res.trace)


def adapt_weights(avg_rates, eps: float = 1e-6) -> np.ndarray:
    """Priorities inversely proportional to the average rate so far, summing to Nu."""
    r = np.asarray(avg_rates, dtype=float)
    if np.any(r < 0):
        raise ValueError("average rates must be nonnegative")
    beta = 1.0 / (eps + r)
    return beta * (r.size / beta.sum())


def expected_user_rates(
    channel: MultiuserChannel,
    power: float,
    noise_power: float,
    rng: np.random.Generator,
    samples: int = 64,
    spacing_over_wavelength: float = 0.5,
) -> np.ndarray:
    """
    Monte Carlo estimate of each user's interference-free rate.

    Each user keeps its cluster and distance; the small-scale gains are
    redrawn `samples` times and the matched-filter rate
    ``log2(1 + P ||h_n||^2 / noise_power)`` is averaged. With one cluster per
    user, ``||h_n[k]||`` does not depend on the subcarrier.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    nsc = channel.cluster_aod.shape[1]
    nt = channel.nt
    amp2 = 10.0 ** (-np.asarray(channel.pathloss_db) / 10.0)
    out = np.empty(channel.num_users)
    for n in range(channel.num_users):
        a_t = ula_response(channel.cluster_aod[channel.cluster_assignment[n]], nt, spacing_over_wavelength)
        z = rng.standard_normal((samples, nsc)) + 1j * rng.standard_normal((samples, nsc))
        gains = z * np.sqrt(nt / nsc / 2.0)
        norm2 = np.sum(np.abs(gains @ a_t.conj().T) ** 2, axis=1) * amp2[n]
        out[n] = np.mean(np.log2(1.0 + power * norm2 / noise_power))
    return out


def static_weights(expected_rates, eps: float = 1e-6) -> np.ndarray:
    """Priorities inversely proportional to the expected rates, summing to Nu."""
    return adapt_weights(expected_rates, eps)
