"""Brute-force validation backend for short Kondo chains.

Exact diagonalization in the explicit Fock space, exact in/out partial
traces with all fermionic reordering signs, dense reconstruction of NRG
shell eigenstates, and a stochastic convex-roof search.  Everything here
trades efficiency for directness; it exists to certify the production
machinery on toy sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeError
from .spatial import site_amplitudes
from .twoqubit import binary_entropy
from .wilson import ModelSpec

DIM_CAP = 2 * 10**5


def _orbital(site, channel, spin, channels):
    return (site * channels + channel) * 2 + spin


def _parity_below(occ, orb):
    mask = (1 << orb) - 1
    return -1.0 if bin(occ & mask).count("1") % 2 else 1.0


@dataclass
class SmallSystem:
    """Explicit impurity + short chain Fock space with (Q, 2Sz) labels."""

    spec: ModelSpec
    n_sites: int
    hoppings: np.ndarray

    def __post_init__(self):
        m = self.spec.channels
        self.n_orb = 2 * m * self.n_sites
        self.dim_bath = 1 << self.n_orb
        self.dim = 2 * self.dim_bath
        if self.dim > DIM_CAP:
            raise SizeError(f"dimension {self.dim} exceeds the explicit cap {DIM_CAP}")
        occ = np.arange(self.dim_bath, dtype=np.int64)
        up_mask = 0
        dn_mask = 0
        for site in range(self.n_sites):
            for ch in range(m):
                up_mask |= 1 << _orbital(site, ch, 0, m)
                dn_mask |= 1 << _orbital(site, ch, 1, m)
        self._popcount = np.array([bin(x).count("1") for x in occ])
        nup = np.array([bin(x & up_mask).count("1") for x in occ])
        ndn = np.array([bin(x & dn_mask).count("1") for x in occ])
        self.bath_q = self._popcount - m * self.n_sites
        self.bath_sz2 = nup - ndn

    def state_index(self, imp, occ):
        return imp * self.dim_bath + occ

    def sectors(self):
        """Map (Q, 2Sz total) -> array of Fock indices."""
        out = {}
        for imp, imp_sz2 in ((0, 1), (1, -1)):
            for occ in range(self.dim_bath):
                qn = (int(self.bath_q[occ]), int(imp_sz2 + self.bath_sz2[occ]))
                out.setdefault(qn, []).append(self.state_index(imp, occ))
        return {qn: np.array(v, dtype=np.int64) for qn, v in out.items()}

    def hamiltonian(self):
        """Dense many-body Hamiltonian (no rescaling, absolute energies)."""
        m = self.spec.channels
        j = self.spec.coupling
        h = np.zeros((self.dim, self.dim))
        for occ in range(self.dim_bath):
            for imp in (0, 1):
                row = self.state_index(imp, occ)
                # hoppings
                for site in range(self.n_sites - 1):
                    t = self.hoppings[site]
                    for ch in range(m):
                        for spin in (0, 1):
                            a = _orbital(site, ch, spin, m)
                            b = _orbital(site + 1, ch, spin, m)
                            for src, dst in ((b, a), (a, b)):
                                if not (occ >> src) & 1:
                                    continue
                                mid = occ ^ (1 << src)
                                if (mid >> dst) & 1:
                                    continue
                                sgn = _parity_below(occ, src) * _parity_below(mid, dst)
                                h[self.state_index(imp, mid | (1 << dst)), row] += t * sgn
                # Kondo coupling at site 0
                imp_sz = 0.5 if imp == 0 else -0.5
                for ch in range(m):
                    up = _orbital(0, ch, 0, m)
                    dn = _orbital(0, ch, 1, m)
                    n_up = (occ >> up) & 1
                    n_dn = (occ >> dn) & 1
                    h[row, row] += j * imp_sz * 0.5 * (n_up - n_dn)
                    # S+ s- : impurity dn->up, bath up->dn
                    if imp == 1 and n_up and not n_dn:
                        mid = occ ^ (1 << up)
                        sgn = _parity_below(occ, up) * _parity_below(mid, dn)
                        h[self.state_index(0, mid | (1 << dn)), row] += 0.5 * j * sgn
                    # S- s+ : impurity up->dn, bath dn->up
                    if imp == 0 and n_dn and not n_up:
                        mid = occ ^ (1 << dn)
                        sgn = _parity_below(occ, dn) * _parity_below(mid, up)
                        h[self.state_index(1, mid | (1 << up)), row] += 0.5 * j * sgn
        return 0.5 * (h + h.T)


@dataclass
class ExactSpectrum:
    energies: np.ndarray  # ascending, absolute
    sector_energies: dict
    sector_vectors: dict
    system: SmallSystem


def exact_spectrum(system):
    """Full eigendecomposition, sector by sector."""
    h = system.hamiltonian()
    sector_e, sector_v = {}, {}
    for qn, idx in system.sectors().items():
        block = h[np.ix_(idx, idx)]
        w, v = np.linalg.eigh(block)
        sector_e[qn] = w
        sector_v[qn] = (idx, v)
    energies = np.sort(np.concatenate(list(sector_e.values())))
    return ExactSpectrum(energies=energies, sector_energies=sector_e, sector_vectors=sector_v, system=system)


def thermal_density_matrix(spectrum, temperature):
    """Dense rho(T) = exp(-H/T)/Z from a full eigendecomposition."""
    sys = spectrum.system
    rho = np.zeros((sys.dim, sys.dim))
    e_min = spectrum.energies[0]
    z = 0.0
    for qn, (idx, v) in spectrum.sector_vectors.items():
        w = np.exp(-(spectrum.sector_energies[qn] - e_min) / temperature)
        z += w.sum()
        rho[np.ix_(idx, idx)] = (v * w) @ v.T
    return rho / z


# ---------------------------------------------------------------------------
# in/out doubling and exact partial trace


def doubled_state(vec, p_values, channels):
    """Rewrite a Fock vector on the in/out-doubled space.

    `vec` has axes (impurity, site_0, ..., site_{N-1}) with 4^M states per
    site; each site is split at probability p_values[m].  The result has
    axes (impurity, out_0, in_0, out_1, in_1, ...), orbital order
    (out_m, in_m) per site ascending, matching the split amplitude tables.
    """
    n_sites = len(p_values)
    site_dim = 4**channels
    t = np.asarray(vec).reshape((2,) + (site_dim,) * n_sites)
    for m in range(n_sites):
        amp = site_amplitudes(p_values[m], channels)  # (s, i, o)
        # current axis for site m sits at position 1 + 2m after earlier doublings
        t = np.tensordot(t, amp, axes=([1 + 2 * m], [0]))  # appends (i, o)
        order = list(range(t.ndim - 2))
        order.insert(1 + 2 * m, t.ndim - 1)  # out first
        order.insert(2 + 2 * m, t.ndim - 2)  # then in
        t = np.transpose(t, order)
    return t


def _reorder_sign_table(n_sites, channels):
    """Sign of permuting (o_0 i_0 o_1 i_1 ...) into (o_0 o_1 ... i_0 i_1 ...).

    Each out group o_m moves left past the earlier in groups i_0..i_{m-1};
    the sign is (-1)^(occ(o_m) * sum_{m'<m} occ(i_m')) per configuration.
    """
    site_dim = 4**channels
    occ_digit = np.zeros(site_dim, dtype=np.int64)
    for s in range(site_dim):
        code = s
        for _ in range(channels):
            occ_digit[s] += bin(code % 4).count("1")
            code //= 4
    shape = (site_dim,) * (2 * n_sites)
    sign = np.ones(shape)
    for m in range(1, n_sites):
        # axes: out_m at 2m, in_{m'} at 2m'+1
        o_occ = occ_digit.reshape((1,) * (2 * m) + (site_dim,) + (1,) * (2 * (n_sites - m) - 1))
        acc = np.zeros(shape, dtype=np.int64)
        for mp in range(m):
            i_occ = occ_digit.reshape(
                (1,) * (2 * mp + 1) + (site_dim,) + (1,) * (2 * (n_sites - mp) - 2)
            )
            acc = acc + i_occ
        sign = sign * np.where((o_occ * acc) % 2, -1.0, 1.0)
    return sign


def brute_force_partial_trace(vec, p_values, channels):
    """Exact tr_out |vec><vec| on (impurity (x) in-space), dense.

    Fermionic reordering signs between interleaved (out, in) site factors
    and the (all-out)(all-in) normal form are applied explicitly before
    tracing; the impurity is never traced out.
    """
    n_sites = len(p_values)
    site_dim = 4**channels
    if 2 * site_dim ** (2 * n_sites) > 4 * 10**7:
        raise SizeError("doubled space too large for the brute-force trace")
    t = doubled_state(vec, p_values, channels)
    sign = _reorder_sign_table(n_sites, channels)
    t = t * sign[None, ...]
    # gather out axes (1, 3, 5, ...) and in axes (2, 4, 6, ...)
    out_axes = [1 + 2 * m for m in range(n_sites)]
    in_axes = [2 + 2 * m for m in range(n_sites)]
    t = np.transpose(t, [0] + in_axes + out_axes)
    d_in = site_dim**n_sites
    t = t.reshape(2 * d_in, site_dim**n_sites)
    return t @ t.conj().T


def brute_force_partial_trace_rho(rho_vectors, weights, p_values, channels):
    """Exact in-trace of a mixed state given as eigenvectors and weights."""
    out = None
    for w, vec in zip(weights, rho_vectors):
        term = w * brute_force_partial_trace(vec, p_values, channels)
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# dense reconstruction of NRG shell states


def materialize_shell_states(shells, n, channels, which="disc"):
    """Dense Fock vectors of shell-n eigenstates, axes (imp, s_0 ... s_n).

    Returns (vectors, qn) with vectors as rows, ordered like the shell's
    kept_loc / disc_loc arrays.  Only feasible for short chains; exists to
    certify the recursive machinery against explicit linear algebra.
    """
    site_dim = 4**channels
    kept_dense = np.eye(2)  # columns are the impurity states |up>, |dn>

    def shell_columns(shell, prev_cols):
        dim_prev = prev_cols.shape[0]
        dense = {}
        for si, sec in enumerate(shell.sectors):
            block = np.zeros((dim_prev, site_dim, sec.energies.size))
            for s, _, a, b in sec.groups:
                block[:, s, :] += prev_cols[:, sec.basis_prev[a:b]] @ sec.vectors[a:b, :]
            dense[si] = block.reshape(dim_prev * site_dim, -1)
        return dense

    for m in range(n + 1):
        shell = shells[m]
        dense = shell_columns(shell, kept_dense)
        if m == n:
            dim_now = dense[0].shape[0] if dense else 0

            def collect(loc):
                rows = [dense[si][:, c] for si, c in map(tuple, loc)]
                return np.array(rows) if rows else np.zeros((0, dim_now))

            if which == "disc":
                return collect(shell.disc_loc), shell.disc_qn
            if which == "kept":
                return collect(shell.kept_loc), shell.kept_qn
            return (collect(shell.kept_loc), shell.kept_qn), (
                collect(shell.disc_loc),
                shell.disc_qn,
            )
        cols = [dense[si][:, c] for si, c in map(tuple, shell.kept_loc)]
        kept_dense = np.array(cols).T if cols else np.zeros((dense[0].shape[0], 0))
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# stochastic convex roof


def stochastic_convex_roof(rho, samples=100_000, *, dims=None, seed=0, n_extra=2, polish=True):
    """Upper-bound estimate of EoF by random decompositions plus local polish.

    Haar-random left-unitary completions generate candidate decompositions
    of rho; the best is refined by pairwise two-state rotations (golden
    section on the mixing angle).  By construction every emitted value is
    an upper bound on the EoF.
    """
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    if d > 16:
        raise SizeError("stochastic convex roof capped at 16-dimensional states")
    if dims is None:
        dims = (2, d // 2)
    tr = float(np.real(np.trace(rho)))
    evals, evecs = np.linalg.eigh(rho)
    keep = evals > 1e-13 * tr
    w, v = evals[keep], evecs[:, keep]
    r = w.size
    sq = v * np.sqrt(w)
    rng = np.random.default_rng(seed)
    m = min(r + n_extra, 2 * r)

    def ensemble_value(states):
        p = np.clip(np.einsum("mi,mi->m", states.conj(), states).real, 1e-300, None)
        mats = states.reshape(-1, dims[0], dims[1])
        red = np.einsum("max,mcx->mac", mats, mats.conj())
        ev = np.linalg.eigvalsh(red)
        evn = np.clip(ev / p[:, None], 0.0, 1.0)
        ent = np.where(evn > 0, -evn * np.log2(np.clip(evn, 1e-300, 1.0)), 0.0).sum(axis=1)
        return float((p * ent).sum())

    best_val = np.inf
    best_states = sq.T.copy()
    chunk = 1000
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        z = rng.normal(size=(b, m, r)) + 1j * rng.normal(size=(b, m, r))
        q, _ = np.linalg.qr(z)
        psi = np.einsum("bmr,ir->bmi", q, sq)
        pb = np.clip(np.einsum("bmi,bmi->bm", psi.conj(), psi).real, 1e-300, None)
        mats = psi.reshape(b, m, dims[0], dims[1])
        red = np.einsum("bmax,bmcx->bmac", mats, mats.conj())
        ev = np.linalg.eigvalsh(red)
        evn = np.clip(ev / pb[..., None], 0.0, 1.0)
        ent = np.where(evn > 0, -evn * np.log2(np.clip(evn, 1e-300, 1.0)), 0.0).sum(axis=2)
        tot = (pb * ent).sum(axis=1)
        i = int(np.argmin(tot))
        if tot[i] < best_val:
            best_val = float(tot[i])
            best_states = psi[i].copy()
        done += b

    if polish:
        best_val, best_states = _pairwise_polish(best_states, ensemble_value, best_val)
    return best_val


def _pairwise_polish(states, value_fn, current, sweeps=60, tol=1e-12):
    """Greedy two-state rotations; keeps the decomposition exact."""
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    m = states.shape[0]
    for _ in range(sweeps):
        improved = False
        for i in range(m):
            for j in range(i + 1, m):
                base = states.copy()

                def val_at(theta, phi):
                    c, s = np.cos(theta), np.sin(theta)
                    trial = base.copy()
                    trial[i] = c * base[i] + s * np.exp(1j * phi) * base[j]
                    trial[j] = -s * np.exp(-1j * phi) * base[i] + c * base[j]
                    return value_fn(trial), trial

                best_local = (current, None)
                for phi in (0.0, np.pi / 2):
                    a, b = -np.pi / 2, np.pi / 2
                    fa = val_at(a + (1 - golden) * (b - a), phi)
                    fb = val_at(a + golden * (b - a), phi)
                    x1, x2 = a + (1 - golden) * (b - a), a + golden * (b - a)
                    f1, s1 = fa
                    f2, s2 = fb
                    for _ in range(40):
                        if f1 < f2:
                            b, x2, f2, s2 = x2, x1, f1, s1
                            x1 = a + (1 - golden) * (b - a)
                            f1, s1 = val_at(x1, phi)
                        else:
                            a, x1, f1, s1 = x1, x2, f2, s2
                            x2 = a + golden * (b - a)
                            f2, s2 = val_at(x2, phi)
                    cand = (f1, s1) if f1 < f2 else (f2, s2)
                    if cand[0] < best_local[0] - tol:
                        best_local = cand
                if best_local[1] is not None:
                    current = best_local[0]
                    states = best_local[1]
                    improved = True
        if not improved:
            break
    return current, states
