"""Hybrid analog/digital beamformer design for single-user OFDM MIMO.

The analog precoder is designed once for the whole band by element-wise
coordinate descent on ``log2 det(I + c V^H F V)`` where ``F`` is the
subcarrier-averaged channel covariance. Digital precoders are closed-form
per subcarrier (SVD of the whitened effective channel plus water-filling),
the analog combiner reuses the same coordinate descent on the covariance of
the received signal, and digital combiners are per-subcarrier MMSE filters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from beamkit.channel import ChannelRealization
from beamkit.numerics import (
    NumericsError,
    check_psd,
    logdet_psd,
    phase_codebook,
    quantize_phase,
    water_filling,
)

__all__ = [
    "Structure",
    "ArchitectureSpec",
    "StructureMask",
    "HybridBeamformer",
    "DesignOptions",
    "RankDeficientError",
    "average_covariance",
    "analog_objective",
    "design_analog",
    "digital_precoder",
    "asymptotic_design",
    "combiner_covariance",
    "design_analog_combiner",
    "mmse_combiner",
    "algorithm1",
    "design_transmitter",
    "constraint_violations",
]

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)
RANK_RTOL = 1e-10


class RankDeficientError(NumericsError):
    pass


class Structure(str, Enum):
    FULLY_CONNECTED = "fully_connected"
    PARTIALLY_CONNECTED = "partially_connected"


@dataclass(frozen=True)
class StructureMask:
    """Boolean ``(N, N_RF)`` pattern of phase shifters that exist."""

    allowed: np.ndarray

    @classmethod
    def fully_connected(cls, n: int, n_rf: int) -> "StructureMask":
        return cls(np.ones((n, n_rf), dtype=bool))

    @classmethod
    def partially_connected(cls, n: int, n_rf: int) -> "StructureMask":
        if n % n_rf:
            raise ValueError(f"partially-connected arrays need N_RF | N (N={n}, N_RF={n_rf})")
        block = n // n_rf
        allowed = (np.arange(n)[:, None] // block) == np.arange(n_rf)[None, :]
        return cls(allowed)

    @classmethod
    def for_structure(cls, structure, n: int, n_rf: int) -> "StructureMask":
        if Structure(structure) is Structure.PARTIALLY_CONNECTED:
            return cls.partially_connected(n, n_rf)
        return cls.fully_connected(n, n_rf)

    @property
    def shape(self) -> tuple[int, int]:
        return self.allowed.shape

    def pairs(self) -> list[tuple[int, int]]:
        """Allowed (row, col) pairs in column-major order (the sweep order)."""
        return [(int(i), int(j)) for j in range(self.shape[1]) for i in np.nonzero(self.allowed[:, j])[0]]


@dataclass(frozen=True)
class ArchitectureSpec:
    """
    Transceiver dimensions and hardware constraints.

    `power` is the transmit power per subcarrier and `noise_power` the noise
    variance per receive antenna, both linear. ``phase_bits=None`` means
    infinite-resolution phase shifters.
    """

    nt: int
    nr: int
    n_rf: int
    ns: int
    num_subcarriers: int
    structure: Structure = Structure.FULLY_CONNECTED
    phase_bits: Optional[int] = None
    power: float = 1.0
    noise_power: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "structure", Structure(self.structure))
        for name in ("nt", "nr", "n_rf", "ns", "num_subcarriers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.ns <= self.n_rf <= min(self.nt, self.nr):
            raise ValueError(
                f"need Ns <= N_RF <= min(Nt, Nr), got Ns={self.ns}, N_RF={self.n_rf}, "
                f"Nt={self.nt}, Nr={self.nr}"
            )
        if self.structure is Structure.PARTIALLY_CONNECTED and (self.nt % self.n_rf or self.nr % self.n_rf):
            raise ValueError("partially-connected structure needs N_RF to divide Nt and Nr")
        if self.phase_bits is not None and self.phase_bits < 1:
            raise ValueError("phase_bits must be >= 1 or None")
        if not (self.power > 0 and self.noise_power > 0):
            raise ValueError("power and noise_power must be positive")

    @property
    def snr(self) -> float:
        return self.power / self.noise_power

    @property
    def gamma(self) -> float:
        """Digital precoder scale assuming equal power and ``Q`` proportional to identity."""
        if self.structure is Structure.PARTIALLY_CONNECTED:
            return float(np.sqrt(self.power / self.nt))
        return float(np.sqrt(self.power / (self.nt * self.n_rf)))

    @property
    def combiner_tau(self) -> float:
        if self.structure is Structure.PARTIALLY_CONNECTED:
            return self.nr / self.n_rf
        return float(self.nr)

    def transmit_mask(self) -> StructureMask:
        return StructureMask.for_structure(self.structure, self.nt, self.n_rf)

    def receive_mask(self) -> StructureMask:
        return StructureMask.for_structure(self.structure, self.nr, self.n_rf)


@dataclass
class HybridBeamformer:
    V_RF: np.ndarray  # (Nt, N_RF)
    V_D: np.ndarray  # (K, N_RF, Ns)
    W_RF: np.ndarray  # (Nr, N_RF)
    W_D: np.ndarray  # (K, N_RF, Ns)
    gamma: float
    transmit_mask: Optional[StructureMask] = None
    receive_mask: Optional[StructureMask] = None

    @property
    def V_t(self) -> np.ndarray:
        return self.V_RF[None, :, :] @ self.V_D

    @property
    def W_t(self) -> np.ndarray:
        return self.W_RF[None, :, :] @ self.W_D


@dataclass(frozen=True)
class DesignOptions:
    max_sweeps: int = 50
    rel_tol: float = 1e-6
    init_seed: int = 0
    equal_power: bool = False


def average_covariance(H) -> np.ndarray:
    """``(1/K) sum_k H[k]^H H[k]`` for a stack of channels of shape (K, Nr, Nt)."""
    H = _as_stack(H)
    F = np.einsum("kri,krj->ij", H.conj(), H, optimize=True) / H.shape[0]
    return 0.5 * (F + F.conj().T)


def _as_stack(H) -> np.ndarray:
    if isinstance(H, (list, tuple)):
        shapes = {np.shape(h) for h in H}
        if len(shapes) != 1:
            raise ValueError(f"channel matrices have inconsistent shapes: {sorted(shapes)}")
        H = np.stack(H)
    H = np.asarray(H)
    if H.ndim == 2:
        H = H[None]
    if H.ndim != 3 or H.shape[0] < 1:
        raise ValueError(f"expected a (K, Nr, Nt) channel stack, got shape {H.shape}")
    return H


def analog_objective(V_RF: np.ndarray, F: np.ndarray, c: float) -> float:
    """``log2 det(I + c V^H F V)`` in bits."""
    M = np.eye(V_RF.shape[1]) + c * (V_RF.conj().T @ F @ V_RF)
    return logdet_psd(0.5 * (M + M.conj().T)) / LN2


def _initial_analog(mask: StructureMask, bits: Optional[int], seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    phases = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=mask.shape))
    if bits is not None:
        phases = quantize_phase(phases, bits)
    return np.where(mask.allowed, phases, 0.0).astype(complex)


def design_analog(
    F: np.ndarray,
    mask: StructureMask,
    c: float,
    bits: Optional[int] = None,
    max_sweeps: int = 50,
    rel_tol: float = 1e-6,
    init_seed: int = 0,
    init: Optional[np.ndarray] = None,
    on_update: Optional[Callable[[np.ndarray], None]] = None,
    history: Optional[list] = None,
) -> np.ndarray:
    """
    Coordinate-descent design of a unit-modulus analog beamformer.

    Maximizes ``log2 det(I + c V^H F V)`` over matrices that are unit-modulus
    on `mask` and zero elsewhere. Entries are visited column by column; for
    column ``j`` the matrix ``G_j`` (which only depends on the other columns)
    is formed once and every allowed entry ``(i, j)`` is set to the phase of
    ``eta_ij = sum_{l != i} G_j(i, l) V(l, j)``, or to the best codebook point
    when `bits` is finite.

    Parameters
    ----------
    F : np.ndarray
        Hermitian PSD covariance, shape (N, N).
    mask : StructureMask
        Allowed entries, shape (N, N_RF).
    c : float
        Positive SNR-like scale of the objective.
    bits : int, optional
        Phase-shifter resolution; None for continuous phases.
    max_sweeps, rel_tol : int, float
        Stop after `max_sweeps` full sweeps or once a sweep improves the
        objective by less than `rel_tol` relative.
    init_seed : int
        Seed of the random initial phases (ignored if `init` is given).
    init : np.ndarray, optional
        Feasible starting point.
    on_update : callable, optional
        Called with the current matrix after every single-entry update.
    history : list, optional
        Receives the objective before the first sweep and after every sweep.

    Returns
    -------
    np.ndarray
        The designed (N, N_RF) analog matrix.
    """
    F = np.asarray(F, dtype=complex)
    check_psd(F)
    n, n_rf = mask.shape
    if F.shape != (n, n):
        raise ValueError(f"covariance shape {F.shape} does not match mask shape {mask.shape}")
    if not c > 0:
        raise ValueError(f"objective scale must be positive, got {c}")

    if init is None:
        V = _initial_analog(mask, bits, init_seed)
    else:
        V = np.where(mask.allowed, np.asarray(init, dtype=complex), 0.0)
    codebook = phase_codebook(bits) if bits is not None else None

    obj = analog_objective(V, F, c)
    if history is not None:
        history.append(obj)
    eye = np.eye(n_rf - 1)
    for sweep in range(max_sweeps):
        for j in range(n_rf):
            rows = np.nonzero(mask.allowed[:, j])[0]
            if rows.size == 0:
                continue
            Vbar = np.delete(V, j, axis=1)
            if n_rf > 1:
                FV = F @ Vbar
                C = eye + c * (Vbar.conj().T @ FV)
                G = c * F - c * c * (FV @ np.linalg.solve(C, FV.conj().T))
            else:
                G = c * F
            v = V[:, j].copy()
            y = G @ v
            for i in rows:
                eta = y[i] - G[i, i] * v[i]
                if codebook is None:
                    mag = abs(eta)
                    new = eta / mag if mag > 0 else 1.0 + 0j
                else:
                    new = codebook[int(np.argmax((codebook.conj() * eta).real))]
                    # keep the old value unless the codebook point is at least as good
                    if (np.conj(new) * eta).real < (np.conj(v[i]) * eta).real:
                        new = v[i]
                delta = new - v[i]
                if delta != 0:
                    y += G[:, i] * delta
                    v[i] = new
                    V[i, j] = new
                if on_update is not None:
                    on_update(V)
        new_obj = analog_objective(V, F, c)
        if history is not None:
            history.append(new_obj)
        gain = new_obj - obj
        obj = new_obj
        if gain <= rel_tol * max(abs(obj), 1e-12):
            logger.debug("analog design converged after %d sweeps", sweep + 1)
            break
    return V


def _inv_sqrt_hermitian(Q: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    if w[0] <= RANK_RTOL * max(w[-1], 1e-300):
        raise RankDeficientError(
            f"analog beamformer is rank deficient: V^H V has eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}]"
        )
    return (u / np.sqrt(w)) @ u.conj().T


def digital_precoder(
    H,
    V_RF: np.ndarray,
    power: float,
    noise_power: float,
    ns: int,
    equal_power: bool = False,
) -> np.ndarray:
    """
    Optimal digital precoders for a fixed analog precoder.

    ``V_D[k] = Q^{-1/2} U_e[k] Gamma_e[k]`` with ``Q = V_RF^H V_RF``, ``U_e[k]``
    the `ns` dominant right singular vectors of ``H[k] V_RF Q^{-1/2}`` and
    ``Gamma_e[k]`` the water-filling (or equal) stream amplitudes. The
    per-subcarrier power ``Tr(V_RF V_D V_D^H V_RF^H)`` equals `power`.

    Accepts a single channel (Nr, Nt) or a stack (K, Nr, Nt) and returns the
    matching (N_RF, Ns) or (K, N_RF, Ns) array.
    """
    single = np.ndim(H) == 2
    H = _as_stack(H)
    Qmh = _inv_sqrt_hermitian(V_RF.conj().T @ V_RF)
    M = H @ V_RF @ Qmh
    _, s, vh = np.linalg.svd(M, full_matrices=False)
    if s.shape[1] < ns:
        raise ValueError(f"effective channel supports at most {s.shape[1]} streams, asked for {ns}")
    Ue = vh[:, :ns, :].conj().transpose(0, 2, 1)
    amps = np.empty((H.shape[0], ns))
    for k in range(H.shape[0]):
        if equal_power:
            amps[k] = np.sqrt(power / ns)
        else:
            amps[k] = np.sqrt(water_filling(s[k, :ns] ** 2 / noise_power, power).powers)
    VD = Qmh[None] @ (Ue * amps[:, None, :])
    return VD[0] if single else VD


def combiner_covariance(H, V_t) -> np.ndarray:
    """``(1/K) sum_k H[k] V_t[k] V_t[k]^H H[k]^H``."""
    H = _as_stack(H)
    HV = H @ np.asarray(V_t).reshape(H.shape[0], H.shape[2], -1)
    F2 = np.einsum("kis,kjs->ij", HV, HV.conj(), optimize=True) / H.shape[0]
    return 0.5 * (F2 + F2.conj().T)


def design_analog_combiner(
    F2: np.ndarray,
    mask: StructureMask,
    noise_power: float,
    tau: float,
    bits: Optional[int] = None,
    **opts,
) -> np.ndarray:
    """Analog combiner maximizing ``log2 det(I + W^H F2 W / (noise_power * tau))``."""
    return design_analog(F2, mask, 1.0 / (noise_power * tau), bits, **opts)


def mmse_combiner(H, V_t, W_RF: np.ndarray, noise_power: float) -> np.ndarray:
    """Per-subcarrier MMSE digital combiner ``J^{-1} W_RF^H H V_t``."""
    single = np.ndim(H) == 2
    H = _as_stack(H)
    V_t = np.asarray(V_t).reshape(H.shape[0], H.shape[2], -1)
    if not noise_power > 0:
        raise ValueError("noise power must be positive")
    # J is positive definite exactly when W_RF has full column rank
    w = np.linalg.eigvalsh(W_RF.conj().T @ W_RF)
    if w[0] <= RANK_RTOL * max(w[-1], 1e-300):
        raise RankDeficientError("analog combiner is rank deficient, J is singular")
    A = W_RF.conj().T[None] @ H @ V_t
    J = A @ A.conj().transpose(0, 2, 1) + noise_power * (W_RF.conj().T @ W_RF)[None]
    WD = np.linalg.solve(J, A)
    return WD[0] if single else WD


def asymptotic_design(
    channel: ChannelRealization,
    ns: int,
    power: float,
    noise_power: float,
    n_rf: Optional[int] = None,
) -> HybridBeamformer:
    """
    Large-array design built from the strongest propagation paths.

    The analog precoder/combiner are the transmit/receive array responses of
    the `n_rf` paths with the largest ``|alpha|^2`` (ties broken by path
    index), scaled to unit-modulus entries. With ``n_rf == ns`` (the default)
    each subcarrier water-fills over the per-stream gains
    ``||H[k] a_t||^2 / noise_power`` with a diagonal digital precoder. With
    more RF chains than streams the digital precoder is the closed-form one
    of :func:`digital_precoder`. Digital combiners are MMSE.
    """
    n_rf = ns if n_rf is None else n_rf
    if n_rf < ns:
        raise ValueError(f"need at least Ns={ns} RF chains, got {n_rf}")
    paths = channel.paths
    if paths.num_paths < n_rf:
        raise ValueError(f"channel has {paths.num_paths} paths, fewer than {n_rf} required")
    strength = np.abs(paths.gains) ** 2
    sel = np.argsort(-strength, kind="stable")[:n_rf]
    nt, nr = channel.nt, channel.nr
    a_t = channel.A_t[:, sel]
    V_RF = a_t * np.sqrt(nt)
    W_RF = channel.A_r[:, sel] * np.sqrt(nr)

    K = channel.num_subcarriers
    if n_rf == ns:
        stream_gain = np.sum(np.abs(channel.H @ a_t) ** 2, axis=1) / noise_power  # (K, ns)
        V_D = np.zeros((K, ns, ns), dtype=complex)
        for k in range(K):
            p = water_filling(stream_gain[k], power).powers
            V_D[k] = np.diag(np.sqrt(p)) / np.sqrt(nt)
    else:
        V_D = digital_precoder(channel.H, V_RF, power, noise_power, ns)
    V_t = V_RF[None] @ V_D
    W_D = mmse_combiner(channel.H, V_t, W_RF, noise_power)
    return HybridBeamformer(V_RF=V_RF, V_D=V_D, W_RF=W_RF, W_D=W_D, gamma=float(np.sqrt(power / (nt * n_rf))))


def _checked_stack(channel, spec: ArchitectureSpec) -> np.ndarray:
    H = channel.H if isinstance(channel, ChannelRealization) else _as_stack(channel)
    if H.shape[1:] != (spec.nr, spec.nt) or H.shape[0] != spec.num_subcarriers:
        raise ValueError(
            f"channel shape {H.shape} does not match architecture "
            f"(K={spec.num_subcarriers}, Nr={spec.nr}, Nt={spec.nt})"
        )
    return H


def design_transmitter(
    channel,
    spec: ArchitectureSpec,
    options: DesignOptions = DesignOptions(),
) -> tuple[np.ndarray, np.ndarray]:
    """
    Hybrid precoder only (for a receiver with fully-digital combining).

    Returns ``(V_RF, V_D)``: the analog precoder from the averaged channel
    covariance and the closed-form per-subcarrier digital precoders.
    """
    H = _checked_stack(channel, spec)
    F1 = average_covariance(H)
    c = spec.gamma**2 / spec.noise_power
    V_RF = design_analog(
        F1, spec.transmit_mask(), c, spec.phase_bits,
        max_sweeps=options.max_sweeps, rel_tol=options.rel_tol, init_seed=options.init_seed,
    )
    V_D = digital_precoder(H, V_RF, spec.power, spec.noise_power, spec.ns, options.equal_power)
    return V_RF, V_D


def algorithm1(
    channel,
    spec: ArchitectureSpec,
    options: DesignOptions = DesignOptions(),
) -> HybridBeamformer:
    """
    Full SU-MIMO hybrid design.

    1. analog precoder from the averaged channel covariance,
    2. closed-form digital precoders per subcarrier,
    3. analog combiner from the averaged received-signal covariance,
    4. MMSE digital combiners per subcarrier.
    """
    H = _checked_stack(channel, spec)
    V_RF, V_D = design_transmitter(H, spec, options)

    r_mask = spec.receive_mask()
    V_t = V_RF[None] @ V_D
    F2 = combiner_covariance(H, V_t)
    W_RF = design_analog_combiner(
        F2, r_mask, spec.noise_power, spec.combiner_tau, spec.phase_bits,
        init_seed=options.init_seed + 1, max_sweeps=options.max_sweeps, rel_tol=options.rel_tol,
    )
    W_D = mmse_combiner(H, V_t, W_RF, spec.noise_power)
    return HybridBeamformer(
        V_RF=V_RF, V_D=V_D, W_RF=W_RF, W_D=W_D, gamma=spec.gamma,
        transmit_mask=spec.transmit_mask(), receive_mask=r_mask,
    )


def constraint_violations(bf: HybridBeamformer, spec: ArchitectureSpec, atol: float = 1e-12) -> list[str]:
    """List every hardware or power constraint the beamformer breaks (empty if feasible)."""
    problems = []
    codebook = phase_codebook(spec.phase_bits) if spec.phase_bits is not None else None
    for name, M, mask in (
        ("V_RF", bf.V_RF, bf.transmit_mask or spec.transmit_mask()),
        ("W_RF", bf.W_RF, bf.receive_mask or spec.receive_mask()),
    ):
        on, off = M[mask.allowed], M[~mask.allowed]
        if off.size and np.max(np.abs(off)) > 0:
            problems.append(f"{name} has nonzero entries outside its mask")
        if on.size and np.max(np.abs(np.abs(on) - 1.0)) > atol:
            problems.append(f"{name} has non-unit-modulus entries")
        if codebook is not None:
            dist = np.min(np.abs(on[:, None] - codebook[None, :]), axis=1)
            if np.max(dist) > atol:
                problems.append(f"{name} has entries outside the phase codebook")
    power = np.real(np.einsum("kij,kij->k", bf.V_t, bf.V_t.conj()))
    if np.any(power > spec.power * (1 + 1e-8)):
        problems.append(f"power constraint violated: max {power.max():.6e} > {spec.power:.6e}")
    return problems
