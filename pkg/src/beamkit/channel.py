"""Clustered geometric mmWave channels for OFDM systems.

Single-user channels follow the cluster/scatterer model with ULA responses,
Laplacian intra-cluster angular spread and one delay per cluster, so that
``H[k] = A_r diag(alpha[k]) A_t^H`` with ``alpha[k] = alpha * exp(-j 2 pi psi_c k / K)``.
The multiuser generator draws users on a disc around the base station and lets
users that fall in the same scattering cluster share transmit array responses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PathSet",
    "ChannelRealization",
    "MultiuserChannel",
    "ula_response",
    "sample_paths",
    "realize_channel",
    "sum_form_channel",
    "pathloss_db",
    "sample_multiuser_channel",
    "MultiuserEnvironment",
    "sample_environment",
    "DEFAULT_DELAY_FRACTION",
    "MIN_USER_DISTANCE_KM",
]

DEFAULT_DELAY_FRACTION = 0.25
MIN_USER_DISTANCE_KM = 0.01
HALF_WAVELENGTH = 0.5


@dataclass(frozen=True)
class PathSet:
    """Path parameters ordered cluster-major: path ``c * Nsc + l``."""

    num_clusters: int
    scatterers_per_cluster: int
    gains: np.ndarray
    aoa: np.ndarray
    aod: np.ndarray
    cluster_delays: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.num_clusters * self.scatterers_per_cluster

    @property
    def path_delays(self) -> np.ndarray:
        return np.repeat(self.cluster_delays, self.scatterers_per_cluster)

    def __post_init__(self):
        n = self.num_paths
        for name in ("gains", "aoa", "aod"):
            if np.shape(getattr(self, name)) != (n,):
                raise ValueError(f"{name} must hold {n} entries")
        if np.shape(self.cluster_delays) != (self.num_clusters,):
            raise ValueError(f"cluster_delays must hold {self.num_clusters} entries")
        if np.any(np.asarray(self.cluster_delays) < 0):
            raise ValueError("cluster delays must be nonnegative")


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray  # (K, Nr, Nt)
    paths: PathSet
    A_t: np.ndarray  # (Nt, paths)
    A_r: np.ndarray  # (Nr, paths)

    @property
    def num_subcarriers(self) -> int:
        return self.H.shape[0]

    @property
    def nr(self) -> int:
        return self.H.shape[1]

    @property
    def nt(self) -> int:
        return self.H.shape[2]

    def path_gains(self) -> np.ndarray:
        """Per-subcarrier complex path gains ``alpha[k]``, shape (K, paths)."""
        return _subcarrier_gains(self.paths.gains, self.paths.path_delays, self.num_subcarriers)


@dataclass(frozen=True)
class MultiuserChannel:
    h: np.ndarray  # (K, Nu, Nt); row n of h[k] is h_n[k]^H
    distances_km: np.ndarray
    pathloss_db: np.ndarray
    cluster_assignment: np.ndarray
    cluster_aod: np.ndarray  # (clusters, Nsc) departure angles shared by a cluster's users

    @property
    def num_users(self) -> int:
        return self.h.shape[1]

    @property
    def nt(self) -> int:
        return self.h.shape[2]

    def subarray(self, n: int) -> "MultiuserChannel":
        """The same users seen from the first `n` antenna elements."""
        return MultiuserChannel(
            h=self.h[:, :, :n].copy(),
            distances_km=self.distances_km,
            pathloss_db=self.pathloss_db,
            cluster_assignment=self.cluster_assignment,
            cluster_aod=self.cluster_aod,
        )


def ula_response(phi, n: int, spacing_over_wavelength: float = HALF_WAVELENGTH) -> np.ndarray:
    """
    Uniform linear array response, ``exp(j 2 pi d n sin(phi)) / sqrt(N)``.

    `phi` may be a scalar (returns shape ``(n,)``) or a 1-D array of angles
    (returns one response per column, shape ``(n, len(phi))``).
    """
    if n < 1:
        raise ValueError(f"array size must be positive, got {n}")
    phi = np.asarray(phi, dtype=float)
    idx = np.arange(n)
    phase = 2.0 * np.pi * spacing_over_wavelength * np.multiply.outer(idx, np.sin(phi))
    return np.exp(1j * phase) / np.sqrt(n)


def _laplacian_angles(rng: np.random.Generator, means: np.ndarray, nsc: int, spread: float):
    scale = spread / np.sqrt(2.0)
    offsets = rng.laplace(0.0, scale, size=(means.size, nsc)) if scale > 0 else np.zeros((means.size, nsc))
    return np.mod(means[:, None] + offsets, 2.0 * np.pi).ravel()


def _complex_gaussian(rng: np.random.Generator, variance: float, size) -> np.ndarray:
    z = rng.standard_normal(size=size) + 1j * rng.standard_normal(size=size)
    return z * np.sqrt(variance / 2.0)


def sample_paths(
    num_clusters: int,
    scatterers_per_cluster: int,
    angular_spread: float,
    nt: int,
    nr: int,
    rng: np.random.Generator,
    max_delay: float = 0.0,
) -> PathSet:
    """
    Draw one set of cluster/scatterer path parameters.

    Mean cluster angles are uniform on ``[0, 2pi)``; scatterer offsets are
    Laplacian with standard deviation `angular_spread` (radians). Path gains
    are CN(0, Nt*Nr/(Nc*Nsc)) and cluster delays uniform on ``[0, max_delay]``
    (in units where the per-subcarrier phase step is ``2 pi psi / K``).
    """
    if num_clusters < 1 or scatterers_per_cluster < 1:
        raise ValueError("need at least one cluster and one scatterer per cluster")
    nc, nsc = num_clusters, scatterers_per_cluster
    mean_aoa = rng.uniform(0.0, 2.0 * np.pi, size=nc)
    mean_aod = rng.uniform(0.0, 2.0 * np.pi, size=nc)
    aoa = _laplacian_angles(rng, mean_aoa, nsc, angular_spread)
    aod = _laplacian_angles(rng, mean_aod, nsc, angular_spread)
    gains = _complex_gaussian(rng, nt * nr / (nc * nsc), nc * nsc)
    delays = rng.uniform(0.0, max_delay, size=nc) if max_delay > 0 else np.zeros(nc)
    return PathSet(nc, nsc, gains, aoa, aod, delays)


def _subcarrier_gains(gains: np.ndarray, delays: np.ndarray, num_subcarriers: int) -> np.ndarray:
    k = np.arange(1, num_subcarriers + 1)
    theta = 2.0 * np.pi * np.multiply.outer(k, delays) / num_subcarriers
    return gains[None, :] * np.exp(-1j * theta)


def realize_channel(
    paths: PathSet,
    nt: int,
    nr: int,
    num_subcarriers: int,
    spacing_over_wavelength: float = HALF_WAVELENGTH,
    check: bool = False,
) -> ChannelRealization:
    """
    Build per-subcarrier channel matrices from a path set (compact form).

    With ``check=True`` the explicit per-path sum is evaluated as well and the
    two forms must agree to 1e-10 relative.
    """
    a_t = ula_response(paths.aod, nt, spacing_over_wavelength)
    a_r = ula_response(paths.aoa, nr, spacing_over_wavelength)
    alpha = _subcarrier_gains(paths.gains, paths.path_delays, num_subcarriers)
    h = np.einsum("rp,kp,tp->krt", a_r, alpha, a_t.conj(), optimize=True)
    if check:
        ref = sum_form_channel(paths, nt, nr, num_subcarriers, spacing_over_wavelength)
        err = np.linalg.norm(h - ref) / max(np.linalg.norm(ref), 1e-300)
        if err > 1e-10:
            raise AssertionError(f"compact and sum channel forms disagree: rel err {err:.3e}")
    return ChannelRealization(H=h, paths=paths, A_t=a_t, A_r=a_r)


def sum_form_channel(
    paths: PathSet,
    nt: int,
    nr: int,
    num_subcarriers: int,
    spacing_over_wavelength: float = HALF_WAVELENGTH,
) -> np.ndarray:
    """Channel by explicit summation over clusters and scatterers."""
    out = np.zeros((num_subcarriers, nr, nt), dtype=complex)
    nsc = paths.scatterers_per_cluster
    for k in range(1, num_subcarriers + 1):
        for c in range(paths.num_clusters):
            phase = np.exp(-2j * np.pi * paths.cluster_delays[c] * k / num_subcarriers)
            for ell in range(nsc):
                p = c * nsc + ell
                ar = ula_response(paths.aoa[p], nr, spacing_over_wavelength)
                at = ula_response(paths.aod[p], nt, spacing_over_wavelength)
                out[k - 1] += paths.gains[p] * np.outer(ar, at.conj()) * phase
    return out


def pathloss_db(distance_km) -> float | np.ndarray:
    """Distance-dependent pathloss ``128.1 + 37.6 log10(d)`` with `d` in km."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    pl = 128.1 + 37.6 * np.log10(d)
    return float(pl) if pl.ndim == 0 else pl


@dataclass(frozen=True)
class MultiuserEnvironment:
    """Scattering clusters of a cell: departure angles and one delay per cluster."""

    cluster_aod: np.ndarray  # (clusters, Nsc)
    cluster_delays: np.ndarray  # (clusters,)

    @property
    def num_clusters(self) -> int:
        return self.cluster_aod.shape[0]


def sample_environment(
    num_clusters_env: int,
    num_subcarriers: int,
    rng: np.random.Generator,
    scatterers_per_cluster: int = 10,
    angular_spread: float = np.deg2rad(10.0),
    delay_fraction: float = DEFAULT_DELAY_FRACTION,
) -> MultiuserEnvironment:
    if num_clusters_env < 1:
        raise ValueError("need at least one scattering cluster")
    mean_aod = rng.uniform(0.0, 2.0 * np.pi, size=num_clusters_env)
    aod = _laplacian_angles(rng, mean_aod, scatterers_per_cluster, angular_spread)
    max_delay = delay_fraction * num_subcarriers
    delays = rng.uniform(0.0, max_delay, size=num_clusters_env) if max_delay > 0 else np.zeros(num_clusters_env)
    return MultiuserEnvironment(cluster_aod=aod.reshape(num_clusters_env, scatterers_per_cluster), cluster_delays=delays)


def sample_multiuser_channel(
    nt: int,
    num_users: int,
    num_subcarriers: int,
    num_clusters_env: int,
    radius_km: float,
    rng: np.random.Generator,
    scatterers_per_cluster: int = 10,
    angular_spread: float = np.deg2rad(10.0),
    delay_fraction: float = DEFAULT_DELAY_FRACTION,
    min_distance_km: float = MIN_USER_DISTANCE_KM,
    spacing_over_wavelength: float = HALF_WAVELENGTH,
    cluster_assignment=None,
    distances_km=None,
    environment: MultiuserEnvironment | None = None,
) -> MultiuserChannel:
    """
    Draw a multiuser MISO drop.

    The environment holds `num_clusters_env` scattering clusters, each with
    `scatterers_per_cluster` departure angles and one delay. Every user is
    attached to a cluster (uniformly at random unless given) and gets its own
    CN(0, Nt/Nsc) gains on that cluster's paths. Users are uniform on a disc
    of radius `radius_km` (distances floored at `min_distance_km`) and the
    pathloss enters as amplitude ``10**(-PL/20)``.

    Passing a fixed `environment` (for a persistent cell) skips the cluster
    draws; `num_clusters_env` and the angle/delay knobs are then ignored.
    """
    if num_users < 1:
        raise ValueError("need at least one user")
    if environment is None:
        environment = sample_environment(
            num_clusters_env, num_subcarriers, rng, scatterers_per_cluster, angular_spread, delay_fraction
        )
    cluster_aod, delays = environment.cluster_aod, environment.cluster_delays
    num_clusters_env, nsc = cluster_aod.shape

    drawn_clusters = rng.integers(0, num_clusters_env, size=num_users)
    drawn_r = radius_km * np.sqrt(rng.uniform(0.0, 1.0, size=num_users))
    gains = _complex_gaussian(rng, nt / nsc, (num_users, nsc))

    clusters = drawn_clusters if cluster_assignment is None else np.asarray(cluster_assignment, dtype=int)
    dist = drawn_r if distances_km is None else np.asarray(distances_km, dtype=float)
    dist = np.maximum(dist, min_distance_km)
    pl = np.atleast_1d(pathloss_db(dist))
    amp = 10.0 ** (-pl / 20.0)

    k = np.arange(1, num_subcarriers + 1)
    h = np.empty((num_subcarriers, num_users, nt), dtype=complex)
    for n in range(num_users):
        c = clusters[n]
        a_t = ula_response(cluster_aod[c], nt, spacing_over_wavelength)  # (Nt, Nsc)
        phase = np.exp(-2j * np.pi * delays[c] * k / num_subcarriers)
        row = a_t.conj() @ gains[n]  # h_n^H = sum_l alpha_l a_t(phi_l)^H
        h[:, n, :] = amp[n] * phase[:, None] * row[None, :]
    return MultiuserChannel(
        h=h,
        distances_km=dist,
        pathloss_db=pl,
        cluster_assignment=clusters,
        cluster_aod=cluster_aod,
    )
