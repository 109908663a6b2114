"""Iterative diagonalization on the Wilson chain and the thermal state.

Shells carry (charge, 2 S_z) quantum numbers; each iteration assembles the
enlarged Hamiltonian sector by sector from the previous shell's kept
states, diagonalizes, and splits the spectrum into kept and discarded
parts without ever cutting through a degenerate multiplet.  Discarded
states across all shells form the complete basis on which the full thermal
density matrix is diagonal.

Energies are rescaled by Lambda^((n-1)/2) internally; absolute energies
are reconstructed from per-shell offsets when Boltzmann weights are needed.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GridAlignmentError,
    InconsistencyError,
    NotConvergedError,
    TemperatureRangeError,
)
from .wilson import WilsonChain

DEGENERACY_RTOL = 1e-8

# single-channel site basis |0>, |up>, |dn>, |updn>
_F_UP = np.zeros((4, 4))
_F_UP[0, 1] = 1.0
_F_UP[2, 3] = 1.0
_F_DN = np.zeros((4, 4))
_F_DN[0, 2] = 1.0
_F_DN[1, 3] = -1.0
_PARITY4 = np.diag([1.0, -1.0, -1.0, 1.0])
_OCC4 = np.array([0, 1, 1, 2])
_SZ24 = np.array([0, 1, -1, 0])


def site_operators(channels):
    """Per-site annihilators, quantum numbers, and parity for M channels.

    Returns (f_ops, occ, sz2, parity) where f_ops is a list over
    (channel, spin) of dense matrices on the 4^M site space, with channel-1
    orbitals ordered before channel-2 and fermionic signs folded in.
    """
    if channels == 1:
        return [_F_UP, _F_DN], _OCC4.copy(), _SZ24.copy(), np.diag(_PARITY4).copy()
    if channels == 2:
        eye = np.eye(4)
        f_ops = [
            np.kron(_F_UP, eye),
            np.kron(_F_DN, eye),
            np.kron(_PARITY4, _F_UP),
            np.kron(_PARITY4, _F_DN),
        ]
        occ = (_OCC4[:, None] + _OCC4[None, :]).ravel()
        sz2 = (_SZ24[:, None] + _SZ24[None, :]).ravel()
        parity = np.where(occ % 2, -1.0, 1.0)
        return f_ops, occ, sz2, parity
    raise ValueError("only 1 or 2 channels supported")


def _site_spin_ops(channels):
    """Spin operators (sz, s+, s-) of each channel on the site space."""
    ops = []
    f_ops, _, _, _ = site_operators(channels)
    for alpha in range(channels):
        f_up, f_dn = f_ops[2 * alpha], f_ops[2 * alpha + 1]
        n_up = f_up.T @ f_up
        n_dn = f_dn.T @ f_dn
        sz = 0.5 * (n_up - n_dn)
        sp = f_up.T @ f_dn
        ops.append((sz, sp, sp.T))
    return ops


@dataclass
class ShellSector:
    """One (Q, 2Sz) block of a shell's eigenproblem.

    The product basis is grouped site-state-major: rows [start:stop) of
    `vectors` hold the previous shell's kept sector `prev_qn` tensored with
    site state `site_state`.  Columns are eigenstates, energies ascending,
    the first `n_kept` kept.
    """

    qn: tuple
    groups: list  # (site_state, prev_qn, start, stop)
    basis_prev: np.ndarray  # global prev-kept index per row
    energies: np.ndarray  # rescaled, relative to the shell ground state
    vectors: np.ndarray
    n_kept: int


@dataclass
class EnergyShell:
    n: int
    scale: float
    offset: float  # absolute energy of this shell's rescaled zero
    sectors: list
    kept_qn: np.ndarray  # (n_kept, 2)
    kept_energies: np.ndarray
    kept_loc: np.ndarray  # (n_kept, 2) -> (sector index, column)
    disc_qn: np.ndarray
    disc_energies: np.ndarray
    disc_loc: np.ndarray
    # dense operators over the kept basis, for recursion and bound building
    f_kept: list = field(default_factory=list, repr=False)
    pup_kept: np.ndarray | None = field(default=None, repr=False)
    splus_kept: np.ndarray | None = field(default=None, repr=False)
    parity_kept: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_kept(self):
        return len(self.kept_energies)

    @property
    def n_disc(self):
        return len(self.disc_energies)

    def absolute_energies(self, which="disc"):
        e = self.disc_energies if which == "disc" else self.kept_energies
        return self.offset + self.scale * e


def _keep_cut(energies_sorted, keep_max):
    """Kept-state count: at most keep_max but never splitting a multiplet."""
    total = energies_sorted.size
    if total <= keep_max:
        return total
    cut = keep_max
    scale = max(abs(energies_sorted[cut - 1]), 1.0)
    while cut < total and energies_sorted[cut] - energies_sorted[cut - 1] <= DEGENERACY_RTOL * scale:
        cut += 1
    return cut


def iterative_diagonalization(chain, spec, keep_max, *, keep_last=False):
    """Diagonalize the Kondo chain shell by shell.

    Shell n spans the impurity and sites 0..n; the last shell discards all
    states (unless keep_last) so that the discarded sets tile the full
    Hilbert space for the thermal density matrix.
    """
    channels = spec.channels
    if keep_max < 4**channels:
        raise ValueError("keep_max must be at least the site dimension")
    f_ops, occ, sz2, parity_site = site_operators(channels)
    site_dim = 4**channels
    site_qn = [(int(occ[s] - channels), int(sz2[s])) for s in range(site_dim)]

    # impurity seed: states |up>, |dn> with q = 0, 2sz = +-1
    prev_kept_qn = [(0, 1), (0, -1)]
    prev_energies = np.zeros(2)
    prev_parity = np.ones(2)
    prev_pup = np.diag([1.0, 0.0])
    prev_splus = np.array([[0.0, 1.0], [0.0, 0.0]])
    prev_f = None  # no fermionic site yet
    prev_sector_index = {qn: np.array([i]) for i, qn in enumerate(prev_kept_qn)}

    spin_ops = _site_spin_ops(channels)
    imp_sz = np.diag([0.5, -0.5])
    imp_sp = np.array([[0.0, 1.0], [0.0, 0.0]])

    shells = []
    scale_prev = 1.0
    offset_prev = 0.0
    n_shells = chain.length + 1
    for n in range(n_shells):
        scale = 1.0 if n == 0 else chain.lam ** (-(n - 1) / 2.0)
        ratio = scale_prev / scale
        t_hat = 0.0 if n == 0 else chain.hoppings[n - 1] / scale

        # collect the product basis per new sector
        sector_map = {}
        prev_qn_arr = prev_kept_qn
        for s in range(site_dim):
            dq, dsz = site_qn[s]
            for pqn, idx in prev_sector_index.items():
                qn = (pqn[0] + dq, pqn[1] + dsz)
                sector_map.setdefault(qn, []).append((s, pqn, idx))

        sectors = []
        all_energies = []
        for qn in sorted(sector_map):
            groups_raw = sector_map[qn]
            groups, rows_prev = [], []
            start = 0
            for s, pqn, idx in groups_raw:
                stop = start + idx.size
                groups.append((s, pqn, start, stop))
                rows_prev.append(idx)
                start = stop
            basis_prev = np.concatenate(rows_prev)
            d = basis_prev.size
            h = np.zeros((d, d))
            # diagonal: rescaled previous energies
            np.fill_diagonal(h, ratio * prev_energies[basis_prev])
            if n == 0:
                # Kondo coupling on the impurity-site product space
                j_hat = spec.coupling / scale
                for s_i, pqn_i, a_i, b_i in groups:
                    rows_i = np.arange(a_i, b_i)
                    ki = basis_prev[rows_i]
                    for s_j, pqn_j, a_j, b_j in groups:
                        rows_j = np.arange(a_j, b_j)
                        kj = basis_prev[rows_j]
                        block = np.zeros((rows_i.size, rows_j.size))
                        for sz_op, sp_op, sm_op in spin_ops:
                            block += imp_sz[np.ix_(ki, kj)] * sz_op[s_i, s_j]
                            block += 0.5 * imp_sp[np.ix_(ki, kj)] * sm_op[s_i, s_j]
                            block += 0.5 * imp_sp.T[np.ix_(ki, kj)] * sp_op[s_i, s_j]
                        h[np.ix_(rows_i, rows_j)] += j_hat * block
            else:
                hop = np.zeros((d, d))
                for op in range(len(f_ops)):
                    floc = f_ops[op]
                    fprev = prev_f[op]
                    for s_i, pqn_i, a_i, b_i in groups:
                        for s_j, pqn_j, a_j, b_j in groups:
                            fval = floc[s_i, s_j]
                            if fval == 0.0:
                                continue
                            ki = basis_prev[a_i:b_i]
                            kj = basis_prev[a_j:b_j]
                            # <k s| f+_{n-1} f_n |k' s'> = F[k',k] parity(k') floc[s,s']
                            blk = fprev[np.ix_(kj, ki)].T * prev_parity[kj][None, :]
                            hop[a_i:b_i, a_j:b_j] += fval * blk
                h += t_hat * (hop + hop.T)

            evals, evecs = np.linalg.eigh(h)
            sectors.append(
                ShellSector(
                    qn=qn,
                    groups=groups,
                    basis_prev=basis_prev,
                    energies=evals,
                    vectors=evecs,
                    n_kept=0,
                )
            )
            all_energies.append(evals)

        flat = np.concatenate(all_energies)
        gs = flat.min()
        flat_sorted = np.sort(flat - gs)
        for sec in sectors:
            sec.energies = sec.energies - gs
        last = n == n_shells - 1
        if last and not keep_last:
            cut_energy = -np.inf
        else:
            cut = _keep_cut(flat_sorted, keep_max)
            cut_energy = flat_sorted[cut - 1] if cut > 0 else -np.inf

        kept_qn, kept_e, kept_loc = [], [], []
        disc_qn, disc_e, disc_loc = [], [], []
        for si, sec in enumerate(sectors):
            nk = int(np.searchsorted(sec.energies, cut_energy + 1e-14, side="right"))
            sec.n_kept = nk
            for c in range(sec.energies.size):
                rec = (sec.qn, sec.energies[c], (si, c))
                if c < nk:
                    kept_qn.append(sec.qn)
                    kept_e.append(sec.energies[c])
                    kept_loc.append((si, c))
                else:
                    disc_qn.append(sec.qn)
                    disc_e.append(sec.energies[c])
                    disc_loc.append((si, c))

        offset = offset_prev + scale * gs
        shell = EnergyShell(
            n=n,
            scale=scale,
            offset=offset,
            sectors=sectors,
            kept_qn=np.array(kept_qn, dtype=int).reshape(-1, 2),
            kept_energies=np.array(kept_e),
            kept_loc=np.array(kept_loc, dtype=int).reshape(-1, 2),
            disc_qn=np.array(disc_qn, dtype=int).reshape(-1, 2),
            disc_energies=np.array(disc_e),
            disc_loc=np.array(disc_loc, dtype=int).reshape(-1, 2),
        )

        # dense kept-basis operators for the next shell and for later use
        kept_cols = {}
        for si, sec in enumerate(sectors):
            if sec.n_kept:
                kept_cols[si] = sec.vectors[:, : sec.n_kept]
        n_kept = shell.n_kept
        kept_index_of = {}
        for gi, (si, c) in enumerate(shell.kept_loc):
            kept_index_of[(si, c)] = gi

        def sector_kept_range(si):
            locs = [gi for gi, (sj, _) in enumerate(shell.kept_loc) if sj == si]
            return np.array(locs, dtype=int)

        # build new dense ops over kept states, visiting only the sector
        # pairs allowed by each operator's quantum-number shift
        new_f = [np.zeros((n_kept, n_kept)) for _ in f_ops]
        new_pup = np.zeros((n_kept, n_kept))
        new_splus = np.zeros((n_kept, n_kept))
        sec_by_qn = {sec.qn: si for si, sec in enumerate(sectors)}
        sec_kept_globals = {si: sector_kept_range(si) for si in kept_cols}
        f_shifts = []
        for op in range(len(f_ops)):
            alpha, sigma = divmod(op, 2)
            f_shifts.append((-1, -1 if sigma == 0 else 1))
        for si, sec_i in enumerate(sectors):
            if sec_i.n_kept == 0:
                continue
            gi = sec_kept_globals[si]
            vi = kept_cols[si]
            targets = [(None, (0, 0), prev_pup, new_pup), (None, (0, 2), prev_splus, new_splus)]
            for kind, shift, op_prev, out in targets:
                qn_j = (sec_i.qn[0] - shift[0], sec_i.qn[1] - shift[1])
                sj = sec_by_qn.get(qn_j)
                if sj is None or sectors[sj].n_kept == 0:
                    continue
                blk = _operator_block(sec_i, sectors[sj], vi, kept_cols[sj], op_prev)
                if blk is not None:
                    out[np.ix_(gi, sec_kept_globals[sj])] = blk
            for op in range(len(f_ops)):
                qn_j = (sec_i.qn[0] - f_shifts[op][0], sec_i.qn[1] - f_shifts[op][1])
                sj = sec_by_qn.get(qn_j)
                if sj is None or sectors[sj].n_kept == 0:
                    continue
                fb = _site_op_block(
                    sec_i, sectors[sj], vi, kept_cols[sj], f_ops[op], prev_parity
                )
                if fb is not None:
                    new_f[op][np.ix_(gi, sec_kept_globals[sj])] = fb

        shell.f_kept = new_f
        shell.pup_kept = new_pup
        shell.splus_kept = new_splus
        shell.parity_kept = np.where(
            (shell.kept_qn[:, 0] + channels * (n + 1)) % 2, -1.0, 1.0
        )
        shells.append(shell)

        prev_kept_qn = [tuple(q) for q in shell.kept_qn]
        prev_energies = shell.kept_energies
        prev_parity = shell.parity_kept
        prev_pup = new_pup
        prev_splus = new_splus
        prev_f = new_f
        prev_sector_index = {}
        for gi, qn in enumerate(prev_kept_qn):
            prev_sector_index.setdefault(qn, []).append(gi)
        prev_sector_index = {q: np.array(v, dtype=int) for q, v in prev_sector_index.items()}
        scale_prev, offset_prev = scale, offset

        if shell.n_kept == 0 and not last:
            raise InconsistencyError("no states kept before the final shell")
    return shells


def _operator_block(sec_i, sec_j, vi, vj, op_prev):
    """<i| O_prev (x) I_site |j> between eigenstates of two sectors.

    O_prev acts on the previous kept basis only, so rows of sector i with
    site state s couple to rows of sector j with the same site state.
    """
    out = np.zeros((vi.shape[1], vj.shape[1]))
    hit = False
    for s_i, pqn_i, a_i, b_i in sec_i.groups:
        for s_j, pqn_j, a_j, b_j in sec_j.groups:
            if s_i != s_j:
                continue
            ki = sec_i.basis_prev[a_i:b_i]
            kj = sec_j.basis_prev[a_j:b_j]
            blk = op_prev[np.ix_(ki, kj)]
            if not np.any(blk):
                continue
            out += vi[a_i:b_i].T @ blk @ vj[a_j:b_j]
            hit = True
    return out if hit else None


def _site_op_block(sec_i, sec_j, vi, vj, floc, prev_parity):
    """<i| f_site |j> with the fermionic string over the previous block."""
    out = np.zeros((vi.shape[1], vj.shape[1]))
    hit = False
    for s_i, pqn_i, a_i, b_i in sec_i.groups:
        for s_j, pqn_j, a_j, b_j in sec_j.groups:
            fval = floc[s_i, s_j]
            if fval == 0.0 or pqn_i != pqn_j:
                continue
            ki = sec_i.basis_prev[a_i:b_i]
            kj = sec_j.basis_prev[a_j:b_j]
            if not np.array_equal(ki, kj):
                raise InconsistencyError("misaligned previous-sector rows")
            out += fval * (vi[a_i:b_i].T * prev_parity[ki][None, :]) @ vj[a_j:b_j]
            hit = True
    return out if hit else None


@dataclass
class BlockThermalState:
    """Full thermal density matrix in block form over discarded states.

    weights[n][i] is the total weight of discarded state i of shell n
    including its 4^(M (N - n)) identity-tail multiplicity; the weights of
    all blocks sum to one.
    """

    temperature: float
    channels: int
    shells: list
    block_shells: list  # shell indices carrying discarded states
    weights: dict  # shell index -> per-state weights
    log_z: float

    def block_weight(self, n):
        return float(self.weights[n].sum())

    def total_weight(self):
        return float(sum(w.sum() for w in self.weights.values()))

    def peak_shell(self):
        return max(self.block_shells, key=self.block_weight)


def thermal_state(shells, temperature, *, channels=None):
    """Boltzmann weights over the discarded basis at temperature T.

    Weight of discarded state (n, i) is exp(-E_abs / T) * 4^(M (N-n)) / Z,
    evaluated through a global log-sum-exp so no temperature in a sane
    range can underflow to an all-zero state.
    """
    if temperature <= 0.0:
        raise TemperatureRangeError("temperature must be positive")
    if channels is None:
        channels = _infer_channels(shells)
    n_last = shells[-1].n
    log4 = np.log(4.0)
    log_terms = []
    index = []
    for shell in shells:
        if shell.n_disc == 0:
            continue
        e_abs = shell.absolute_energies("disc")
        lw = -e_abs / temperature + channels * (n_last - shell.n) * log4
        log_terms.append(lw)
        index.append(shell.n)
    if not log_terms:
        raise TemperatureRangeError("no discarded states; cannot form a thermal state")
    flat = np.concatenate(log_terms)
    m = flat.max()
    if not np.isfinite(m):
        raise TemperatureRangeError("Boltzmann weights underflow at this temperature")
    log_z = m + np.log(np.exp(flat - m).sum())
    weights = {}
    for n, lw in zip(index, log_terms):
        weights[n] = np.exp(lw - log_z)
    state = BlockThermalState(
        temperature=float(temperature),
        channels=channels,
        shells=shells,
        block_shells=index,
        weights=weights,
        log_z=float(log_z),
    )
    total = state.total_weight()
    if abs(total - 1.0) > 1e-8:
        raise InconsistencyError(f"thermal weights sum to {total}, not 1")
    return state


def _infer_channels(shells):
    # site dimension = 4^M is the basis growth factor of the last shell
    last = shells[-1]
    dim = sum(sec.energies.size for sec in last.sectors)
    prev_kept = shells[-2].n_kept if len(shells) > 1 else 2
    return int(round(np.log(dim / prev_kept) / np.log(4.0)))


def rescaled_spectrum(shell, n_levels=20):
    """Lowest rescaled many-body levels of a shell, relative to its ground state."""
    e = np.sort(np.concatenate([sec.energies for sec in shell.sectors]))
    return e[:n_levels]


def kondo_temperature_2ck(shells, *, n_levels=20, rtol=0.01):
    """T_2CK from the stationarity of the rescaled NRG level flow.

    Returns D Lambda^(-n*/2) where n* is the first iteration whose lowest
    `n_levels` rescaled levels differ from those two iterations earlier by
    less than `rtol` (relative, level by level).
    """
    if len(shells) < 10:
        raise NotConvergedError("need at least 10 shells to detect convergence")
    lam = _infer_lambda(shells)
    for n in range(2, len(shells)):
        a = rescaled_spectrum(shells[n], n_levels)
        b = rescaled_spectrum(shells[n - 2], n_levels)
        m = min(a.size, b.size)
        if m < n_levels:
            continue
        scale = np.maximum(np.abs(b[:m]), 1e-2)
        if np.all(np.abs(a[:m] - b[:m]) / scale < rtol):
            return float(lam ** (-n / 2.0))
    raise NotConvergedError("level flow never became stationary")


def _infer_lambda(shells):
    if len(shells) < 3:
        raise NotConvergedError("too few shells")
    return (shells[1].scale / shells[2].scale) ** 2


def z_average(tables):
    """Pointwise arithmetic mean of per-z observable tables.

    Each table is (abscissa, values); the abscissas must agree within
    1e-9 relative or a GridAlignmentError is raised.
    """
    if not tables:
        raise GridAlignmentError("no tables to average")
    x0 = np.asarray(tables[0][0], dtype=float)
    vals = []
    for x, v in tables:
        x = np.asarray(x, dtype=float)
        if x.shape != x0.shape or np.any(
            np.abs(x - x0) > 1e-9 * np.maximum(np.abs(x0), 1e-300)
        ):
            raise GridAlignmentError("abscissa grids differ between z runs")
        vals.append(np.asarray(v, dtype=float))
    return x0, np.mean(vals, axis=0)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, chain, shells, spec, keep_max):
    """Versioned binary dump of a diagonalized run (npz container)."""
    header = {
        "version": CHECKPOINT_VERSION,
        "lambda": chain.lam,
        "z": chain.z,
        "coupling": spec.coupling,
        "channels": spec.channels,
        "keep_max": keep_max,
        "length": chain.length,
    }
    payload = {
        "header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
        "hoppings": chain.hoppings,
        "star_edges": chain.star_edges,
        "star_energies": chain.star_energies,
        "star_weights": chain.star_weights,
        "star_transform": chain.star_transform,
    }
    for shell in shells:
        pre = f"shell{shell.n}"
        payload[f"{pre}/meta"] = np.array([shell.scale, shell.offset])
        payload[f"{pre}/kept_qn"] = shell.kept_qn
        payload[f"{pre}/kept_energies"] = shell.kept_energies
        payload[f"{pre}/kept_loc"] = shell.kept_loc
        payload[f"{pre}/disc_qn"] = shell.disc_qn
        payload[f"{pre}/disc_energies"] = shell.disc_energies
        payload[f"{pre}/disc_loc"] = shell.disc_loc
        payload[f"{pre}/pup"] = shell.pup_kept
        payload[f"{pre}/splus"] = shell.splus_kept
        payload[f"{pre}/parity"] = shell.parity_kept
        payload[f"{pre}/nsec"] = np.array([len(shell.sectors)])
        for si, sec in enumerate(shell.sectors):
            sp = f"{pre}/sec{si}"
            payload[f"{sp}/qn"] = np.array(sec.qn)
            payload[f"{sp}/groups"] = np.array(
                [(s, pq[0], pq[1], a, b) for s, pq, a, b in sec.groups], dtype=int
            )
            payload[f"{sp}/basis_prev"] = sec.basis_prev
            payload[f"{sp}/energies"] = sec.energies
            payload[f"{sp}/vectors"] = sec.vectors
            payload[f"{sp}/n_kept"] = np.array([sec.n_kept])
        for op, f in enumerate(shell.f_kept):
            payload[f"{pre}/f{op}"] = f
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **payload)


def load_checkpoint(path):
    """Load a checkpoint; returns (header dict, chain, shells)."""
    data = np.load(path)
    header = json.loads(bytes(data["header"]).decode())
    if header["version"] != CHECKPOINT_VERSION:
        raise InconsistencyError(f"checkpoint version {header['version']} unsupported")
    chain = WilsonChain(
        lam=header["lambda"],
        z=header["z"],
        length=header["length"],
        hoppings=data["hoppings"],
        star_edges=data["star_edges"],
        star_energies=data["star_energies"],
        star_weights=data["star_weights"],
        star_transform=data["star_transform"],
    )
    shells = []
    n = 0
    while f"shell{n}/meta" in data:
        pre = f"shell{n}"
        sectors = []
        for si in range(int(data[f"{pre}/nsec"][0])):
            sp = f"{pre}/sec{si}"
            groups = [
                (int(s), (int(q), int(sz)), int(a), int(b))
                for s, q, sz, a, b in data[f"{sp}/groups"]
            ]
            sectors.append(
                ShellSector(
                    qn=tuple(int(x) for x in data[f"{sp}/qn"]),
                    groups=groups,
                    basis_prev=data[f"{sp}/basis_prev"],
                    energies=data[f"{sp}/energies"],
                    vectors=data[f"{sp}/vectors"],
                    n_kept=int(data[f"{sp}/n_kept"][0]),
                )
            )
        scale, offset = data[f"{pre}/meta"]
        shell = EnergyShell(
            n=n,
            scale=float(scale),
            offset=float(offset),
            sectors=sectors,
            kept_qn=data[f"{pre}/kept_qn"],
            kept_energies=data[f"{pre}/kept_energies"],
            kept_loc=data[f"{pre}/kept_loc"],
            disc_qn=data[f"{pre}/disc_qn"],
            disc_energies=data[f"{pre}/disc_energies"],
            disc_loc=data[f"{pre}/disc_loc"],
        )
        shell.pup_kept = data[f"{pre}/pup"]
        shell.splus_kept = data[f"{pre}/splus"]
        shell.parity_kept = data[f"{pre}/parity"]
        fs = []
        op = 0
        while f"{pre}/f{op}" in data:
            fs.append(data[f"{pre}/f{op}"])
            op += 1
        shell.f_kept = fs
        shells.append(shell)
        n += 1
    return header, chain, shells
