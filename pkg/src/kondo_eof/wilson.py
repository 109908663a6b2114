"""Wilson chain construction for a flat conduction band.

The band (-D, D) with constant density of states is logarithmically
discretized with parameter Lambda and twist z, reduced to one mode per
interval (star geometry), and tridiagonalized by Lanczos with the local
orbital at the impurity as seed.  The tridiagonalization runs in extended
precision: hoppings span ~Lambda^(-N/2) and float64 Lanczos loses
orthogonality long before the chain lengths needed here.

Units: D = 1, hbar v_F = 1, k_F = 1, so energy Lambda^(-n/2) pairs with
length Lambda^(n/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath as mp
import numpy as np


@dataclass
class ModelSpec:
    """Kondo model parameters: channel count, coupling, bandwidth."""

    channels: int = 1
    coupling: float = 0.3  # J in units of D
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.channels not in (1, 2):
            raise ValueError(f"channels must be 1 or 2, got {self.channels}")
        if self.coupling <= 0.0:
            raise ValueError("antiferromagnetic coupling J > 0 required")

    @property
    def dos(self):
        """Flat density of states nu = 1 / (2 D)."""
        return 1.0 / (2.0 * self.bandwidth)


def kondo_temperature_1ck(spec):
    """Single-channel Kondo temperature k_B T_1CK = D sqrt(nu J) exp(-1/nu J)."""
    nu_j = spec.dos * spec.coupling * spec.bandwidth  # dimensionless nu J
    if nu_j <= 0.0:
        raise ValueError("nu J must be positive")
    return float(spec.bandwidth * np.sqrt(nu_j) * np.exp(-1.0 / nu_j))


@dataclass
class WilsonChain:
    """Discretized bath: hoppings plus the star-basis data behind them.

    `hoppings[n]` couples site n to site n+1; a chain of length N carries
    hoppings t_0 .. t_{N-1} and sites 0 .. N.  `star_transform[:, n]` is
    chain orbital n expanded over the star modes, whose flat-band intervals
    are `star_edges` (signed energy windows) with representative energies
    `star_energies` and impurity-coupling weights `star_weights`.
    """

    lam: float
    z: float
    length: int
    hoppings: np.ndarray
    star_edges: np.ndarray  # (n_star, 2) signed [lower, upper] energies
    star_energies: np.ndarray
    star_weights: np.ndarray  # squared amplitudes in the local orbital
    star_transform: np.ndarray  # (n_star, length + 1)

    @property
    def n_sites(self):
        return self.length + 1

    def asymptotic_ratio(self):
        """Mean t_n / t_{n+1} over the last chain quarter; tends to sqrt(Lambda)."""
        t = self.hoppings
        tail = t[3 * len(t) // 4 - 1 :]
        return float(np.mean(tail[:-1] / tail[1:]))


def _interval_edges(lam, z, n_intervals):
    """Positive-side interval edges 1 > e_1 > e_2 > ... for twist z."""
    if not 0.0 <= z < 1.0:
        raise ValueError(f"twist z must lie in [0, 1), got {z}")
    edges = [mp.mpf(1)]
    if z == 0.0:
        for j in range(1, n_intervals + 1):
            edges.append(mp.power(lam, -j))
    else:
        for j in range(n_intervals):
            edges.append(mp.power(lam, -(j + z)))
    return edges


def build_wilson_chain(lam, z, length, *, n_intervals=None, dps=60):
    """Wilson chain of `length` hoppings for a flat band at (Lambda, z).

    The star Hamiltonian is diagonal on interval centroids with weights
    proportional to interval widths; Lanczos from the impurity orbital in
    `dps`-digit arithmetic yields the hoppings and the star-to-chain
    transform.  On-site energies vanish by particle-hole symmetry and are
    checked, not stored.
    """
    if lam <= 1.0:
        raise ValueError(f"Lambda must exceed 1, got {lam}")
    if length < 1:
        raise ValueError("need at least one hopping")
    if n_intervals is None:
        n_intervals = length + 16

    with mp.workdps(dps):
        edges = _interval_edges(mp.mpf(lam), mp.mpf(z), n_intervals)
        xi, wts, windows = [], [], []
        for a, b in zip(edges[1:], edges[:-1]):
            for sign in (1, -1):
                xi.append(sign * (a + b) / 2)
                wts.append((b - a) / 2)
                windows.append((sign * a, sign * b) if sign > 0 else (sign * b, sign * a))
        # innermost sliver [0, e_last] keeps the total weight exactly 1
        tail = edges[-1]
        for sign in (1, -1):
            xi.append(sign * tail / 2)
            wts.append(tail / 2)
            windows.append((mp.mpf(0), tail) if sign > 0 else (-tail, mp.mpf(0)))

        nstar = len(xi)
        norm = mp.sqrt(mp.fsum(wts))
        u_prev = None
        u_cur = [mp.sqrt(w) / norm for w in wts]
        basis = [u_cur]
        hoppings = []
        t_prev = mp.mpf(0)
        for n in range(length):
            v = [xi[m] * u_cur[m] for m in range(nstar)]
            e_n = mp.fsum(v[m] * u_cur[m] for m in range(nstar))
            if abs(e_n) > mp.mpf(10) ** (-dps // 3):
                raise AssertionError("on-site energy should vanish for the symmetric band")
            for _ in range(2):  # full reorthogonalization, twice
                for u in basis:
                    ov = mp.fsum(v[m] * u[m] for m in range(nstar))
                    v = [v[m] - ov * u[m] for m in range(nstar)]
            t_n = mp.sqrt(mp.fsum(x * x for x in v))
            if t_n == 0:
                raise ValueError("star basis exhausted; increase n_intervals")
            hoppings.append(t_n)
            u_prev, u_cur = u_cur, [x / t_n for x in v]
            basis.append(u_cur)

        transform = np.array([[float(x) for x in u] for u in basis]).T
        return WilsonChain(
            lam=float(lam),
            z=float(z),
            length=length,
            hoppings=np.array([float(t) for t in hoppings]),
            star_edges=np.array([[float(a), float(b)] for a, b in windows]),
            star_energies=np.array([float(x) for x in xi]),
            star_weights=np.array([float(w) for w in wts]),
            star_transform=transform,
        )


def chain_length_for(lam, t_min, *, margin=1e-2):
    """Shortest chain whose last energy scale sits below margin * t_min."""
    n = 1
    while lam ** (-n / 2.0) > margin * t_min:
        n += 1
    return n


def flat_band_hopping_z0(lam, n):
    """Closed-form flat-band hopping for z = 0 (standard discretization)."""
    num = (1.0 + 1.0 / lam) / 2.0 * (1.0 - lam ** (-n - 1.0)) * lam ** (-n / 2.0)
    den = np.sqrt((1.0 - lam ** (-2.0 * n - 1.0)) * (1.0 - lam ** (-2.0 * n - 3.0)))
    return num / den
