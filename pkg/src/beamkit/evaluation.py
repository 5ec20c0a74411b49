"""Spectral-efficiency evaluation and the Monte Carlo harness.

Rates are in bits/s/Hz. Every Monte Carlo trial draws its channel from its own
generator seeded with ``master_seed + trial_index`` and all methods are
evaluated on that same draw, so method comparisons are paired.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from beamkit.numerics import NumericsError, water_filling

__all__ = [
    "RateReport",
    "SweepRow",
    "SweepResult",
    "TrialOutcome",
    "rate_su",
    "rate_su_ideal",
    "rate_su_active",
    "fully_digital_baseline",
    "DigitalBaseline",
    "monte_carlo",
    "rate_cdf",
    "snr_gap_db",
    "guarded",
]

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)


@dataclass
class RateReport:
    per_subcarrier_rates: np.ndarray
    mean_rate: float
    per_user_rates: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)


def _as_stack(x, ndim=3):
    x = np.asarray(x)
    return x[None] if x.ndim == ndim - 1 else x


def _logdet2_eye_plus(M: np.ndarray) -> np.ndarray:
    """``log2 det(I + M)`` for a stack of Hermitian PSD matrices."""
    eye = np.eye(M.shape[-1])
    X = eye + 0.5 * (M + M.conj().swapaxes(-1, -2))
    sign, logabs = np.linalg.slogdet(X)
    return logabs / LN2


def rate_su_ideal(H, V_t, noise_power: float):
    """
    Rate with an ideal (fully-digital) receiver,
    ``log2 det(I + H V V^H H^H / noise_power)``, per subcarrier.

    Evaluated through the equivalent Ns-dimensional determinant.
    """
    single = np.ndim(H) == 2
    H, V_t = _as_stack(H), _as_stack(V_t)
    HV = H @ V_t
    r = _logdet2_eye_plus(HV.conj().swapaxes(-1, -2) @ HV / noise_power)
    return float(r[0]) if single else r


def rate_su(H, V_t, W_t, noise_power: float):
    """
    Rate with a linear combiner: the received signal projected onto the
    column space of `W_t`.

    The projection ``W (W^H W)^{-1} W^H`` is replaced by an orthonormal basis
    of ``span(W_t)`` from a QR factorization, giving an Ns-dimensional
    determinant. Raises if `W_t` is rank deficient.
    """
    single = np.ndim(H) == 2
    H, V_t, W_t = _as_stack(H), _as_stack(V_t), _as_stack(W_t)
    Qw, R = np.linalg.qr(W_t)
    diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    scale = np.max(np.linalg.norm(W_t, axis=-2), axis=-1)
    if np.any(np.min(diag, axis=-1) <= 1e-10 * np.maximum(scale, 1e-300)):
        raise NumericsError("combiner W_t is rank deficient")
    Y = Qw.conj().swapaxes(-1, -2) @ H @ V_t
    r = _logdet2_eye_plus(Y @ Y.conj().swapaxes(-1, -2) / noise_power)
    return float(r[0]) if single else r


def rate_su_active(H, V_t, W_t, noise_power: float) -> np.ndarray:
    """
    :func:`rate_su` over the streams that carry power.

    Water-filling may leave a stream with exactly zero power; its MMSE
    combiner column is then exactly zero as well and contributes nothing to
    the rate. Such streams are dropped per subcarrier before the
    (rank-checked) projection-form rate is evaluated, so only a genuinely
    rank-deficient combiner on the active streams is rejected.
    """
    H, V_t, W_t = _as_stack(H), _as_stack(V_t), _as_stack(W_t)
    out = np.zeros(H.shape[0])
    for k in range(H.shape[0]):
        active = np.linalg.norm(V_t[k], axis=0) > 0
        if np.any(active):
            out[k] = rate_su(H[k], V_t[k][:, active], W_t[k][:, active], noise_power)
    return out


@dataclass
class DigitalBaseline:
    rates: np.ndarray  # (K,)
    precoders: np.ndarray  # (K, Nt, Ns)

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.rates))


def fully_digital_baseline(H, ns: int, power: float, noise_power: float) -> DigitalBaseline:
    """
    Eigen-beamforming on ``S[k] = H[k]^H H[k]`` with water-filling over the
    `ns` strongest modes, per subcarrier.
    """
    H = _as_stack(H)
    K, nr, nt = H.shape
    if ns > min(nt, nr):
        raise ValueError(f"Ns={ns} exceeds min(Nt, Nr)={min(nt, nr)}")
    _, s, vh = np.linalg.svd(H, full_matrices=False)
    rates = np.empty(K)
    pre = np.zeros((K, nt, ns), dtype=complex)
    for k in range(K):
        gains = s[k, :ns] ** 2 / noise_power
        if not np.any(gains > 0):
            rates[k] = 0.0
            continue
        p = water_filling(gains, power).powers
        rates[k] = float(np.sum(np.log2(1.0 + gains * p)))
        pre[k] = vh[k, :ns].conj().T * np.sqrt(p)
    return DigitalBaseline(rates=rates, precoders=pre)


@dataclass(frozen=True)
class SweepRow:
    axis: float
    method: str
    mean_rate: float
    stderr: float
    trials: int
    failed: int


@dataclass
class TrialOutcome:
    trial: int
    rates: dict  # (axis, method) -> rate, or None when the method failed
    extra: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    axis_name: str
    axis: list
    methods: list
    rows: list  # SweepRow, axis-major then method lexicographic
    trials: list  # TrialOutcome in trial order

    def row(self, axis, method) -> SweepRow:
        for r in self.rows:
            if r.axis == axis and r.method == method:
                return r
        raise KeyError((axis, method))

    def mean_curve(self, method: str) -> np.ndarray:
        return np.array([self.row(a, method).mean_rate for a in self.axis])

    def paired(self, axis, method: str) -> np.ndarray:
        """Per-trial rates for one (axis, method); NaN where the trial failed."""
        return np.array(
            [np.nan if t.rates.get((axis, method)) is None else t.rates[(axis, method)] for t in self.trials]
        )


TrialFn = Callable[[np.random.Generator, int], Mapping]


def _run_trial(trial_fn: TrialFn, master_seed: int, index: int) -> TrialOutcome:
    rng = np.random.default_rng(master_seed + index)
    out = trial_fn(rng, index)
    return TrialOutcome(trial=index, rates=dict(out))


def monte_carlo(
    trial_fn: TrialFn,
    axis: Sequence,
    methods: Sequence[str],
    trials: int,
    master_seed: int,
    axis_name: str = "axis",
    threads: int = 1,
) -> SweepResult:
    """
    Run `trials` independent trials and aggregate per (axis, method).

    `trial_fn(rng, trial_index)` returns a mapping ``(axis, method) -> rate``;
    a value of None marks a failed method on that trial. Failed entries are
    excluded from the mean and counted. Aggregation runs in trial order, so
    results do not depend on `threads`.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda i: _run_trial(trial_fn, master_seed, i), range(trials)))
    else:
        outcomes = [_run_trial(trial_fn, master_seed, i) for i in range(trials)]

    rows = []
    for a in axis:
        for m in sorted(methods):
            vals = [o.rates.get((a, m)) for o in outcomes]
            ok = np.array([v for v in vals if v is not None], dtype=float)
            failed = len(vals) - ok.size
            if ok.size:
                mean = float(np.mean(ok))
                se = float(np.std(ok, ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else 0.0
            else:
                mean, se = float("nan"), float("nan")
            rows.append(SweepRow(axis=a, method=m, mean_rate=mean, stderr=se, trials=int(ok.size), failed=failed))
    return SweepResult(axis_name=axis_name, axis=list(axis), methods=sorted(methods), rows=rows, trials=outcomes)


def guarded(fn: Callable[[], float], label: str = "") -> Optional[float]:
    """Evaluate one method on one trial; a numerical rejection becomes a failed entry."""
    try:
        return float(fn())
    except (NumericsError, np.linalg.LinAlgError, ValueError) as exc:
        logger.warning("method %s failed: %s", label, exc)
        return None


def rate_cdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF: sorted samples with plotting positions ``i/n``, i = 1..n."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("rate_cdf needs at least one sample")
    x = np.sort(x, kind="stable")
    return x, np.arange(1, x.size + 1) / x.size


def snr_gap_db(snr_db, better, worse) -> float:
    """
    Average horizontal gap (dB) between two increasing rate-vs-SNR curves.

    For every grid point of `better` whose rate is reached by `worse` inside
    the grid, the SNR at which `worse` attains that rate is found by linear
    interpolation; the gap is the mean SNR difference.
    """
    snr_db = np.asarray(snr_db, dtype=float)
    better, worse = np.asarray(better, dtype=float), np.asarray(worse, dtype=float)
    if np.any(np.diff(worse) <= 0):
        raise ValueError("reference curve must be strictly increasing")
    gaps = []
    for s, r in zip(snr_db, better):
        if worse[0] <= r <= worse[-1]:
            gaps.append(float(np.interp(r, worse, snr_db)) - s)
    if not gaps:
        raise ValueError("curves do not overlap in rate")
    return float(np.mean(gaps))
