"""Numerical kernels shared by the beamforming designs.

Eigen/singular decompositions with the ordering and validation conventions the
design code relies on, water-filling power allocation, log-determinants of
PSD matrices and phase quantization for finite-resolution phase shifters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericsError",
    "PowerAllocation",
    "check_hermitian",
    "check_psd",
    "hermitian_eig",
    "svd",
    "water_filling",
    "logdet_psd",
    "quantize_phase",
    "phase_codebook",
]

HERMITIAN_RTOL = 1e-10
PSD_RTOL = 1e-10
ABS_FLOOR = 1e-12


class NumericsError(ValueError):
    """Raised when an input violates a kernel precondition."""


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray
    water_level: float

    @property
    def total(self) -> float:
        return float(np.sum(self.powers))


def _scale(m: np.ndarray) -> float:
    return max(float(np.linalg.norm(m)), ABS_FLOOR)


def check_hermitian(m: np.ndarray, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericsError("matrix has non-finite entries")
    asym = float(np.linalg.norm(m - m.conj().T))
    if asym > rtol * _scale(m):
        raise NumericsError(
            f"matrix is not Hermitian: ||M - M^H|| = {asym:.3e} "
            f"exceeds {rtol:g} * ||M|| = {rtol * _scale(m):.3e}"
        )
    return m


def check_psd(m: np.ndarray, rtol: float = PSD_RTOL) -> np.ndarray:
    """Validate that `m` is Hermitian positive semidefinite and return its eigenvalues."""
    check_hermitian(m)
    w = np.linalg.eigvalsh(m)
    if w.size and w[0] < -rtol * _scale(m):
        raise NumericsError(
            f"matrix is not positive semidefinite: smallest eigenvalue {w[0]:.3e}"
        )
    return w


def hermitian_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    m : np.ndarray
        Square Hermitian matrix (asymmetry up to 1e-10 relative is tolerated
        and symmetrized away).

    Returns
    -------
    (eigenvalues, eigenvectors) : (np.ndarray, np.ndarray)
        Real eigenvalues in descending order and the matching unitary matrix
        of eigenvectors (one per column).
    """
    m = check_hermitian(m)
    w, u = np.linalg.eigh(0.5 * (m + m.conj().T))
    return w[::-1].copy(), u[:, ::-1].copy()


def svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD returning ``(U, s, V)`` with ``m = U @ diag(s) @ V^H``, s descending."""
    m = np.asarray(m)
    if not np.all(np.isfinite(m)):
        raise NumericsError("matrix has non-finite entries")
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    return u, s, vh.conj().T


def water_filling(gains, budget: float) -> PowerAllocation:
    """
    Power allocation maximizing ``sum(log2(1 + gains * p))`` under ``sum(p) <= budget``.

    The active set is found by sorting the gains; the water level is then
    closed-form. Channels with zero gain receive no power.

    Parameters
    ----------
    gains : array_like
        Nonnegative channel power gains (SNR per unit power); at least one
        must be positive.
    budget : float
        Total power.

    Returns
    -------
    PowerAllocation
        Powers in the input order and the water level ``mu`` such that
        ``p_i = max(0, mu - 1/g_i)``.
    """
    g = np.asarray(gains, dtype=float).ravel()
    if g.size == 0:
        raise NumericsError("water_filling needs at least one gain")
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise NumericsError("gains must be finite and nonnegative")
    if not np.any(g > 0):
        raise NumericsError("water_filling needs at least one positive gain")
    if not (budget > 0 and np.isfinite(budget)):
        raise NumericsError(f"budget must be positive, got {budget}")

    order = np.argsort(-g, kind="stable")
    inv = 1.0 / g[order[g[order] > 0]]
    # inv is ascending; water level with the first n channels active
    csum = np.cumsum(inv)
    n_pos = inv.size
    levels = (budget + csum) / np.arange(1, n_pos + 1)
    # largest n such that the n-th channel still gets nonnegative power
    active = np.nonzero(levels > inv)[0]
    n = int(active[-1]) + 1 if active.size else 1
    mu = float(levels[n - 1])

    powers = np.zeros_like(g)
    powers[order[:n]] = np.maximum(mu - inv[:n], 0.0)
    residual = budget - powers.sum()
    if abs(residual) > 1e-10 * budget:
        mu = _water_level_bisection(g, budget)
        powers = np.where(g > 0, np.maximum(mu - 1.0 / np.where(g > 0, g, 1.0), 0.0), 0.0)
    return PowerAllocation(powers=powers, water_level=mu)


def _water_level_bisection(g: np.ndarray, budget: float) -> float:
    pos = g[g > 0]
    lo, hi = float(np.min(1.0 / pos)), float(np.max(1.0 / pos)) + budget
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        used = np.sum(np.maximum(mid - 1.0 / pos, 0.0))
        if used > budget:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def logdet_psd(m: np.ndarray) -> float:
    """
    Natural-log determinant of a Hermitian PSD matrix.

    A Cholesky factorization is used when it succeeds; otherwise the matrix
    is checked for (near) semidefiniteness and the eigenvalues are summed,
    which yields ``-inf`` for a singular matrix.
    """
    m = check_hermitian(m)
    try:
        chol = np.linalg.cholesky(0.5 * (m + m.conj().T))
        return float(2.0 * np.sum(np.log(np.real(np.diag(chol)))))
    except np.linalg.LinAlgError:
        pass
    w = check_psd(m)
    w = np.maximum(w, 0.0)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(w)))


def phase_codebook(bits: int) -> np.ndarray:
    """The ``2**bits`` unit-modulus phase-shifter values ``exp(j 2 pi m / 2**bits)``."""
    if bits < 1:
        raise NumericsError(f"phase resolution must be at least 1 bit, got {bits}")
    n = 2**bits
    cb = np.exp(2j * np.pi * np.arange(n) / n)
    # exact values at the axes keep 1-bit and 2-bit codebooks free of 1e-16 residue
    cb.real[np.abs(cb.real) < 1e-15] = 0.0
    cb.imag[np.abs(cb.imag) < 1e-15] = 0.0
    return cb


def quantize_phase(z, bits: int | None = None):
    """
    Project complex value(s) onto the unit circle or a phase codebook.

    With ``bits=None`` returns ``z/|z|`` (``1`` where ``z == 0``). With a
    finite resolution returns the codebook element ``g`` maximizing
    ``Re{conj(g) z}``; ties go to the smallest phase index. Works elementwise
    on arrays.
    """
    arr = np.asarray(z, dtype=complex)
    if bits is None:
        mag = np.abs(arr)
        out = np.where(mag > 0, arr / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
    else:
        cb = phase_codebook(bits)
        score = np.real(np.multiply.outer(arr, np.ones_like(cb)) * cb.conj())
        # argmax returns the first maximal index
        out = cb[np.argmax(score, axis=-1)]
    if np.ndim(z) == 0:
        return complex(out)
    return out
