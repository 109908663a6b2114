"""Certified EoF lower bound from sums of two-qubit witness operators.

Each block state |E> = b_up |up>|e_up> + b_dn |dn>|e_dn> donates a bath
pair; pairs are orthonormalized in global weight order inside each unit of
consecutive blocks, and every unit's vectors are projected orthogonal to
the bath span of its top level's kept states.  Since later levels factor
through kept states, subspaces of different units are exactly orthogonal,
X = sum_i X_i is a valid witness, and tr(X rho) certifies a lower bound on
the impurity-bath EoF.

Block weight whose projection cannot be evaluated exactly (levels below a
unit's spectator range, pruned tail configurations) is charged against the
bound through a penalty proportional to the largest negative witness part,
keeping the reported number a true lower bound.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import twoqubit as tq
from .errors import InconsistencyError

DROP_NORM = 1e-8
PRUNE_TOL = 1e-9

_IMP_PUP = np.diag([1.0, 0.0])
_IMP_SPLUS = np.array([[0.0, 1.0], [0.0, 0.0]])


# ---------------------------------------------------------------------------
# state container shared by the thermal and spatially traced paths


@dataclass
class BlockState:
    """Block-diagonal mixed state over a hierarchy of levels.

    `levels` are EnergyShell-like objects carrying sectors, eigenvector
    groups, kept-basis impurity operators, and disc_loc/disc_qn arrays.
    `weights[n]` is the total weight per emitted state of level n,
    including all beyond-level multiplicity.  `tail_weights[n]` gives the
    per-site-state weights of a traced identity tail at level n (all ones
    for the thermal state); its sum is 4^channels.
    """

    levels: list
    weights: dict
    channels: int
    tail_weights: dict = None
    label: str = ""

    def __post_init__(self):
        self._by_n = {lv.n: lv for lv in self.levels}
        if self.tail_weights is None:
            d = 4**self.channels
            self.tail_weights = {lv.n: np.ones(d) for lv in self.levels}

    @classmethod
    def from_thermal(cls, thermal):
        return cls(
            levels=thermal.shells,
            weights={n: thermal.weights[n] for n in thermal.block_shells},
            channels=thermal.channels,
            label=f"T={thermal.temperature:.6g}",
        )

    @property
    def block_levels(self):
        return sorted(n for n, w in self.weights.items() if w.size and w.sum() > 0.0)

    def level(self, n):
        return self._by_n[n]

    def total_weight(self):
        return float(sum(w.sum() for w in self.weights.values()))


def build_units(state, blocks_per_unit=1):
    """Contiguous, non-overlapping grouping of block levels into units."""
    blocks = state.block_levels
    if not blocks:
        raise InconsistencyError("state has no blocks")
    if blocks_per_unit < 1:
        raise ValueError("blocks_per_unit must be positive")
    units = []
    run = [blocks[0]]
    for n in blocks[1:]:
        if n == run[-1] + 1 and len(run) < blocks_per_unit:
            run.append(n)
        else:
            units.append(run)
            run = [n]
    units.append(run)
    return units


# ---------------------------------------------------------------------------
# level-operator plumbing


class LevelOps:
    """Impurity-operator blocks and indexing helpers for one level."""

    def __init__(self, state, n):
        level = state.level(n)
        self.level = level
        self.n = n
        if n > 0:
            prev = state.level(n - 1)
            pup_prev, splus_prev = prev.pup_kept, prev.splus_kept
        else:
            pup_prev, splus_prev = _IMP_PUP, _IMP_SPLUS
        self.sec_by_qn = {tuple(sec.qn): si for si, sec in enumerate(level.sectors)}
        sizes = [sec.energies.size for sec in level.sectors]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.n_states = int(self.offsets[-1])
        self.blocks = {}
        for si, sec_i in enumerate(level.sectors):
            for op, op_prev, shift in (("pup", pup_prev, (0, 0)), ("sp", splus_prev, (0, 2))):
                qn_j = (sec_i.qn[0] - shift[0], sec_i.qn[1] - shift[1])
                sj = self.sec_by_qn.get(qn_j)
                if sj is None:
                    continue
                sec_j = level.sectors[sj]
                blk = np.zeros((sec_i.energies.size, sec_j.energies.size))
                hit = False
                for s_i, _, a_i, b_i in sec_i.groups:
                    for s_j, _, a_j, b_j in sec_j.groups:
                        if s_i != s_j:
                            continue
                        sub = op_prev[
                            np.ix_(sec_i.basis_prev[a_i:b_i], sec_j.basis_prev[a_j:b_j])
                        ]
                        if not np.any(sub):
                            continue
                        blk += sec_i.vectors[a_i:b_i].T @ sub @ sec_j.vectors[a_j:b_j]
                        hit = True
                if hit:
                    self.blocks[(op, si, sj)] = blk

    def glob(self, loc):
        """Sector-major global state index for (sector, column) pairs."""
        loc = np.asarray(loc, dtype=int).reshape(-1, 2)
        return self.offsets[loc[:, 0]] + loc[:, 1]

    def op_matrix(self, rows_loc, cols_loc, eta_r, eta_c):
        """<row| (|eta_r><eta_c| (x) I_bath) |col>, vectorized by sector pair."""
        rows_loc = np.asarray(rows_loc, dtype=int).reshape(-1, 2)
        cols_loc = np.asarray(cols_loc, dtype=int).reshape(-1, 2)
        out = np.zeros((rows_loc.shape[0], cols_loc.shape[0]))
        row_groups = _group_by_sector(rows_loc)
        col_groups = _group_by_sector(cols_loc)
        for si, (ri, ci_r) in row_groups.items():
            for sj, (rj, ci_c) in col_groups.items():
                blk = self._eta_block(si, sj, eta_r, eta_c)
                if blk is None:
                    continue
                out[np.ix_(ri, rj)] = blk[np.ix_(ci_r, ci_c)]
        return out

    def full_rows(self, rows_loc, eta_r, eta_c):
        """Operator rows against every state of the level, globally indexed."""
        rows_loc = np.asarray(rows_loc, dtype=int).reshape(-1, 2)
        out = np.zeros((rows_loc.shape[0], self.n_states))
        for si, (ri, ci_r) in _group_by_sector(rows_loc).items():
            for sj in range(len(self.level.sectors)):
                blk = self._eta_block(si, sj, eta_r, eta_c)
                if blk is None:
                    continue
                cols = np.arange(self.offsets[sj], self.offsets[sj + 1])
                out[np.ix_(ri, cols)] = blk[ci_r, :]
        return out

    def _eta_block(self, si, sj, eta_r, eta_c):
        if eta_r == 0 and eta_c == 0:
            return self.blocks.get(("pup", si, sj))
        if eta_r == 1 and eta_c == 1:
            base = self.blocks.get(("pup", si, sj))
            if si != sj:
                return -base if base is not None else None
            eye = np.eye(self.level.sectors[si].energies.size)
            return eye - base if base is not None else eye
        if eta_r == 0 and eta_c == 1:
            return self.blocks.get(("sp", si, sj))
        blk = self.blocks.get(("sp", sj, si))
        return blk.T if blk is not None else None

    def kept_transfer(self, next_level, site_state):
        """T[k, state] = V_{next}[(kept k, site_state), state], global columns."""
        n_kept_prev = self.level.n_kept
        sizes = [sec.energies.size for sec in next_level.sectors]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        t = np.zeros((n_kept_prev, int(offsets[-1])))
        for sj, sec in enumerate(next_level.sectors):
            for s, _, a, b in sec.groups:
                if s != site_state:
                    continue
                cols = np.arange(offsets[sj], offsets[sj + 1])
                t[np.ix_(sec.basis_prev[a:b], cols)] = sec.vectors[a:b, :]
        return t


def _group_by_sector(loc):
    groups = {}
    for i, (si, ci) in enumerate(loc):
        groups.setdefault(int(si), ([], []))
        groups[int(si)][0].append(i)
        groups[int(si)][1].append(int(ci))
    return {si: (np.array(r), np.array(c)) for si, (r, c) in groups.items()}


def _site_qn_table(channels):
    from .nrg import site_operators

    _, occ, sz2, _ = site_operators(channels)
    return [(int(occ[s] - channels), int(sz2[s])) for s in range(4**channels)]


# ---------------------------------------------------------------------------
# unit assembly


@dataclass
class Member:
    level: int
    disc_index: int
    tail: tuple
    weight: float
    qn: tuple
    spectator: bool


@dataclass
class Subspace:
    """One two-qubit subspace: impurity (x) {phi_up, phi_dn}."""

    creator: tuple  # (level, disc_index, tail)
    sector_up: tuple
    sector_dn: tuple
    slot_up: int  # row in the sector's phi list
    slot_dn: int
    rho_hat: np.ndarray = None
    e_f: float = 0.0
    witness_eps: float = 0.0
    witness_negativity: float = 0.0
    witness_matrix: np.ndarray = None
    basis_weight: float = 0.0

    @property
    def bound_term(self):
        return self.e_f - self.witness_eps


class UnitAssembly:
    """Members, bath-sector Grams, orthonormal basis, and subspaces of a unit."""

    def __init__(
        self,
        state,
        unit,
        *,
        spectator_depth=1,
        max_members=3000,
        prune_tol=PRUNE_TOL,
        ops_cache=None,
        drop_norm=DROP_NORM,
    ):
        self.state = state
        self.unit = list(unit)
        self.top = self.unit[-1]
        self.channels = state.channels
        self.site_dim = 4**state.channels
        self.site_qn = _site_qn_table(state.channels)
        self.prune_tol = prune_tol
        self.max_members = max_members
        self.drop_norm = drop_norm
        self._ops_cache = ops_cache if ops_cache is not None else {}
        lo = self.unit[0]
        self.spectator_levels = [
            n for n in state.block_levels if lo - spectator_depth <= n < lo
        ]
        self.members, self.pruned_weight = self._enumerate_members()
        self.weights = np.array([m.weight for m in self.members])
        self.unit_weight = float(sum(m.weight for m in self.members if not m.spectator))
        self._build_rows()
        self._build_sectors()

    def ops(self, n):
        if n not in self._ops_cache:
            self._ops_cache[n] = LevelOps(self.state, n)
        return self._ops_cache[n]

    # -- member enumeration -------------------------------------------------

    def _enumerate_members(self):
        members = []
        state = self.state
        for n in self.spectator_levels + self.unit:
            w = state.weights.get(n)
            if w is None or not w.size:
                continue
            level = state.level(n)
            spect = n < self.unit[0]
            gap = self.top - n
            qn_arr = level.disc_qn
            if gap == 0:
                for j in np.nonzero(w > 0.0)[0]:
                    members.append(
                        Member(n, int(j), (), float(w[j]), (int(qn_arr[j, 0]), int(qn_arr[j, 1])), spect)
                    )
            else:
                tail_sets = [state.tail_weights[m] for m in range(n + 1, self.top + 1)]
                norm = float(np.prod([ts.sum() for ts in tail_sets]))
                for j in np.nonzero(w > 0.0)[0]:
                    base = float(w[j]) / norm
                    for tau in itertools.product(range(self.site_dim), repeat=gap):
                        tw = base * float(np.prod([ts[s] for ts, s in zip(tail_sets, tau)]))
                        if tw <= 0.0:
                            continue
                        dq = sum(self.site_qn[s][0] for s in tau)
                        dsz = sum(self.site_qn[s][1] for s in tau)
                        members.append(
                            Member(
                                n, int(j), tau, tw,
                                (int(qn_arr[j, 0]) + dq, int(qn_arr[j, 1]) + dsz),
                                spect,
                            )
                        )
        members.sort(key=lambda m: (-m.weight, m.level, m.disc_index, m.tail))
        pruned = 0.0
        if len(members) > self.max_members:
            pruned += float(sum(m.weight for m in members[self.max_members :]))
            members = members[: self.max_members]
        total = sum(m.weight for m in members)
        cum, keep = 0.0, len(members)
        tol = total * self.prune_tol
        for i in range(len(members) - 1, -1, -1):
            cum += members[i].weight
            if cum > tol:
                keep = i + 1
                break
        pruned += float(sum(m.weight for m in members[keep:]))
        return members[:keep], pruned

    # -- propagated operator rows -------------------------------------------

    def _build_rows(self):
        """Operator rows of every member against level eigenstates.

        For a member at the top level the rows are unit slices of the top
        LevelOps blocks (handled implicitly).  Lower members are propagated
        through kept states with their tail sites inserted; snapshots
        against each intermediate level are kept for cross-level Grams.

        self.rows[(a, er, ec)][m] = global-indexed row of member a against
        all eigenstates of level m, for impurity matrix unit |er><ec|.
        """
        self.rows = {}
        lower = [a for a, m in enumerate(self.members) if m.level < self.top]
        by_source = {}
        for a in lower:
            by_source.setdefault(self.members[a].level, []).append(a)
        for n, idxs in by_source.items():
            ops_n = self.ops(n)
            level = self.state.level(n)
            locs = level.disc_loc[[self.members[a].disc_index for a in idxs]]
            kept_glob = ops_n.glob(level.kept_loc) if level.n_kept else np.zeros(0, int)
            for er, ec in itertools.product((0, 1), (0, 1)):
                base_full = ops_n.full_rows(locs, er, ec)
                base = base_full[:, kept_glob] if kept_glob.size else np.zeros((len(idxs), 0))
                self._propagate(idxs, n, base, er, ec)

    def _propagate(self, idxs, n, kept_rows, er, ec):
        """Recursive tail branching from level n with kept-basis rows."""
        if n == self.top:
            return
        nxt = self.state.level(n + 1)
        ops_prev = self.ops(n)
        groups = {}
        for pos, a in enumerate(idxs):
            mem = self.members[a]
            s = mem.tail[n - mem.level]
            groups.setdefault(s, []).append((pos, a))
        for s, pairs in groups.items():
            t = ops_prev.kept_transfer(nxt, s)
            sub = np.array([p for p, _ in pairs])
            rows_full = kept_rows[sub] @ t
            sub_idx = [a for _, a in pairs]
            for pos, a in enumerate(sub_idx):
                self.rows.setdefault((a, er, ec), {})[n + 1] = rows_full[pos]
            if n + 1 < self.top:
                nxt_ops = self.ops(n + 1)
                kept_glob = (
                    nxt_ops.glob(nxt.kept_loc) if nxt.n_kept else np.zeros(0, int)
                )
                self._propagate(
                    sub_idx,
                    n + 1,
                    rows_full[:, kept_glob] if kept_glob.size else rows_full[:, :0],
                    er,
                    ec,
                )

    # -- bath sectors ---------------------------------------------------------

    def _build_sectors(self):
        state = self.state
        top_level = state.level(self.top)
        top_ops = self.ops(self.top)
        entries = {}
        for a, mem in enumerate(self.members):
            for eta in (0, 1):
                bq = (mem.qn[0], mem.qn[1] - (1 if eta == 0 else -1))
                entries.setdefault(bq, []).append((a, eta))
        kept_entries = {}
        for k in range(top_level.n_kept):
            q, sz2 = int(top_level.kept_qn[k, 0]), int(top_level.kept_qn[k, 1])
            for eta in (0, 1):
                bq = (q, sz2 - (1 if eta == 0 else -1))
                kept_entries.setdefault(bq, []).append((k, eta))
        self.sector_entries = {bq: list(v) for bq, v in entries.items()}
        self.sector_kept = kept_entries
        self.grams = {}
        self.kept_cross = {}
        self.kept_grams = {}
        for bq, ents in self.sector_entries.items():
            self.grams[bq] = self._gram_members(ents)
            kents = kept_entries.get(bq, [])
            if kents and self.top > 0:
                self.kept_grams[bq] = self._gram_kept(kents)
                self.kept_cross[bq] = self._gram_member_kept(ents, kents)

    def _subgroups(self, ents):
        """Split sector entries by (level, tail) for block assembly."""
        groups = {}
        for pos, (a, eta) in enumerate(ents):
            mem = self.members[a]
            key = (mem.level, mem.tail)
            groups.setdefault(key, []).append((pos, a, eta))
        return groups

    def _gram_members(self, ents):
        g = np.zeros((len(ents), len(ents)))
        groups = self._subgroups(ents)
        keys = sorted(groups, key=lambda k: (k[0], k[1]))
        for i, key_r in enumerate(keys):
            lr, tr_ = key_r
            rows = groups[key_r]
            level_r = self.state.level(lr)
            for key_c in keys[i:]:
                lc, tc = key_c
                cols = groups[key_c]
                if lr == lc:
                    if tr_ != tc:
                        continue
                    ops = self.ops(lr)
                    level = level_r
                    blk = self._same_level_block(ops, level, rows, cols)
                elif lc > lr:
                    # rows propagate up to the columns' level; tails beyond
                    # must coincide
                    if tr_[lc - lr :] != tc:
                        continue
                    blk = self._cross_level_block(rows, cols, lc)
                else:
                    continue
                if blk is None:
                    continue
                ri = np.array([p for p, _, _ in rows])
                ci = np.array([p for p, _, _ in cols])
                g[np.ix_(ri, ci)] = blk
                g[np.ix_(ci, ri)] = blk.T
        return g

    def _same_level_block(self, ops, level, rows, cols):
        out = np.zeros((len(rows), len(cols)))
        for er in (0, 1):
            rsel = [(p, a) for p, a, eta in rows if eta == er]
            if not rsel:
                continue
            locs_r = level.disc_loc[[self.members[a].disc_index for _, a in rsel]]
            for ecol in (0, 1):
                csel = [(p, a) for p, a, eta in cols if eta == ecol]
                if not csel:
                    continue
                locs_c = level.disc_loc[[self.members[a].disc_index for _, a in csel]]
                blk = ops.op_matrix(locs_r, locs_c, er, ecol)
                out[np.ix_([i for i in range(len(rows)) if rows[i][2] == er],
                           [i for i in range(len(cols)) if cols[i][2] == ecol])] = blk
        return out

    def _cross_level_block(self, rows, cols, lc):
        level_c = self.state.level(lc)
        ops_c = self.ops(lc)
        out = np.zeros((len(rows), len(cols)))
        col_locs = level_c.disc_loc[[self.members[a].disc_index for _, a, _ in cols]]
        col_glob = ops_c.glob(col_locs)
        for ir, (p_r, a, er) in enumerate(rows):
            for ic, (p_c, b, ecol) in enumerate(cols):
                row = self.rows.get((a, er, ecol), {}).get(lc)
                if row is None:
                    continue
                out[ir, ic] = row[col_glob[ic]]
        return out

    def _gram_kept(self, kents):
        level = self.state.level(self.top)
        ops = self.ops(self.top)
        g = np.zeros((len(kents), len(kents)))
        for er in (0, 1):
            rsel = [i for i, (_, eta) in enumerate(kents) if eta == er]
            if not rsel:
                continue
            locs_r = level.kept_loc[[kents[i][0] for i in rsel]]
            for ecol in (0, 1):
                csel = [i for i, (_, eta) in enumerate(kents) if eta == ecol]
                if not csel:
                    continue
                locs_c = level.kept_loc[[kents[i][0] for i in csel]]
                g[np.ix_(rsel, csel)] = ops.op_matrix(locs_r, locs_c, er, ecol)
        return g

    def _gram_member_kept(self, ents, kents):
        level = self.state.level(self.top)
        ops = self.ops(self.top)
        out = np.zeros((len(ents), len(kents)))
        kept_locs = level.kept_loc[[k for k, _ in kents]]
        kept_glob = ops.glob(kept_locs)
        groups = self._subgroups(ents)
        for (lv, tail), rows in groups.items():
            for er in (0, 1):
                rsel = [(p, a) for p, a, eta in rows if eta == er]
                if not rsel:
                    continue
                for ecol in (0, 1):
                    csel = [i for i, (_, eta) in enumerate(kents) if eta == ecol]
                    if not csel:
                        continue
                    if lv == self.top:
                        locs_r = level.disc_loc[[self.members[a].disc_index for _, a in rsel]]
                        locs_c = kept_locs[csel]
                        blk = ops.op_matrix(locs_r, locs_c, er, ecol)
                    else:
                        blk = np.zeros((len(rsel), len(csel)))
                        for i, (_, a) in enumerate(rsel):
                            row = self.rows.get((a, er, ecol), {}).get(self.top)
                            if row is None:
                                continue
                            blk[i] = row[kept_glob[csel]]
                    out[np.ix_([p for p, _ in rsel], csel)] = blk
        return out


# ---------------------------------------------------------------------------
# orthonormalization and subspace construction


@dataclass
class UnitResult:
    unit: list
    subspaces: list
    bound: float
    captured: dict  # level -> weight captured by this unit's subspaces
    leftover: float
    pruned_weight: float
    dropped: int
    separable: int
    n_members: int
    leakage: float = 0.0

    @property
    def e_f_sum(self):
        return float(sum(s.e_f for s in self.subspaces))


def default_options():
    return dict(
        spectator_depth=1,
        max_members=3000,
        prune_tol=PRUNE_TOL,
        drop_norm=DROP_NORM,
        min_b=1e-8,
        improve_top=24,
        improve_sweeps=100,
        build_witness=True,
        ops_cache=None,
    )


def assemble_unit(state, unit, *, options=None, keep_assembly=False):
    """Build one unit's subspaces and certified bound contribution."""
    opts = default_options()
    if options:
        opts.update(options)
    asm = UnitAssembly(
        state,
        unit,
        spectator_depth=opts["spectator_depth"],
        max_members=opts["max_members"],
        prune_tol=opts["prune_tol"],
        ops_cache=opts["ops_cache"],
        drop_norm=opts["drop_norm"],
    )
    basis = _orthonormalize(asm, opts)
    subspaces, amps = _make_subspaces(asm, basis, opts)
    _assemble_rho(asm, subspaces, amps)
    if opts["improve_top"] and len(subspaces) > 1:
        _improve(asm, subspaces, amps, opts)
    _finalize_subspaces(asm, subspaces, opts)

    captured = {}
    cap_member = np.zeros(len(asm.members))
    for sub, vecs in zip(subspaces, amps["per_subspace"]):
        for v in vecs.values():
            cap_member += np.abs(v) ** 2
    for a, mem in enumerate(asm.members):
        captured[mem.level] = captured.get(mem.level, 0.0) + float(
            mem.weight * cap_member[a]
        )
    bound = float(sum(s.bound_term for s in subspaces))
    leftover = asm.unit_weight + sum(
        m.weight for m in asm.members if m.spectator
    ) - sum(captured.values())
    result = UnitResult(
        unit=list(unit),
        subspaces=subspaces,
        bound=bound,
        captured=captured,
        leftover=float(max(leftover, 0.0)),
        pruned_weight=asm.pruned_weight,
        dropped=amps["dropped"],
        separable=amps["separable"],
        n_members=len(asm.members),
    )
    if keep_assembly:
        result.assembly = (asm, basis, amps)
    return result, asm


def _orthonormalize(asm, opts):
    """Per-sector scaffolding: orthonormal kept-span basis plus empty
    creator-basis containers.

    Basis vectors are phi = sum_e coef_e e_tilde_e + sum_d kcomp_d w_d,
    where {w_d} is an orthonormal basis of the kept bath span and the
    kept projection makes every phi orthogonal to all w_d exactly.
    """
    basis = {}
    for bq, ents in asm.sector_entries.items():
        n = len(ents)
        data = dict(
            entries=ents,
            gram=asm.grams[bq],
            coef=np.zeros((n, 0)),
            kcomp=None,
            kind=[],
        )
        kg = asm.kept_grams.get(bq)
        if kg is not None and kg.size:
            w, v = np.linalg.eigh(kg)
            keep = w > 1e-12 * max(float(w.max()), 1e-30)
            kb = v[:, keep] / np.sqrt(w[keep])
            data["kept_basis"] = kb
            data["kept_cross"] = asm.kept_cross[bq]
            data["kcomp"] = np.zeros((kb.shape[1], 0))
        else:
            data["kept_basis"] = None
        basis[bq] = data
    return basis


def _project_coeff(data, entry_pos):
    """Project the entry's bath vector off the kept span and prior basis.

    Returns (member-entry coefficients, kept components, squared norm).
    """
    g = data["gram"]
    col = g[:, entry_pos]
    norm2 = float(g[entry_pos, entry_pos])
    x = np.zeros(g.shape[0])
    x[entry_pos] = 1.0
    kb = data["kept_basis"]
    if kb is not None:
        ov = kb.T @ data["kept_cross"][entry_pos]
        norm2 -= float(ov @ ov)
        kc = -ov
    else:
        ov = None
        kc = None
    b = data["coef"]
    if b.shape[1]:
        t = b.T @ col
        if kb is not None:
            t = t + data["kcomp"].T @ ov
        x = x - b @ t
        if kb is not None:
            kc = kc - data["kcomp"] @ t
        norm2 -= float(t @ t)
    return x, kc, max(norm2, 0.0)


def _append_basis(data, x, kc, norm2, kind):
    nrm = np.sqrt(norm2)
    data["coef"] = np.hstack([data["coef"], (x / nrm)[:, None]])
    if data["kept_basis"] is not None:
        data["kcomp"] = np.hstack([data["kcomp"], (kc / nrm)[:, None]])
    data["kind"].append(kind)
    return data["coef"].shape[1] - 1


def _make_subspaces(asm, basis, opts):
    """Walk creators in weight order, carving out orthonormal bath pairs."""
    order = [
        a
        for a in np.argsort(-asm.weights, kind="stable")
        if not asm.members[a].spectator
    ]
    entry_pos = {}
    for bq, ents in asm.sector_entries.items():
        for pos, (a, eta) in enumerate(ents):
            entry_pos[(a, eta)] = (bq, pos)
    subspaces = []
    dropped = 0
    separable = 0
    min_b2 = opts["min_b"] ** 2
    for a in order:
        mem = asm.members[a]
        key_up = entry_pos[(a, 0)]
        key_dn = entry_pos[(a, 1)]
        g_up = asm.grams[key_up[0]][key_up[1], key_up[1]]
        g_dn = asm.grams[key_dn[0]][key_dn[1], key_dn[1]]
        if g_up < min_b2 or g_dn < min_b2:
            separable += 1
            continue
        d_up = basis[key_up[0]]
        d_dn = basis[key_dn[0]]
        x_up, kc_up, n2_up = _project_coeff(d_up, key_up[1])
        x_dn, kc_dn, n2_dn = _project_coeff(d_dn, key_dn[1])
        if n2_up < opts["drop_norm"] ** 2 or n2_dn < opts["drop_norm"] ** 2:
            dropped += 1
            continue
        slot_up = _append_basis(d_up, x_up, kc_up, n2_up, a)
        slot_dn = _append_basis(d_dn, x_dn, kc_dn, n2_dn, a)
        subspaces.append(
            Subspace(
                creator=(mem.level, mem.disc_index, mem.tail),
                sector_up=key_up[0],
                sector_dn=key_dn[0],
                slot_up=slot_up,
                slot_dn=slot_dn,
            )
        )
    # amplitude rows <phi | e_tilde_entry> of every basis vector
    amp_sector = {}
    for bq, data in basis.items():
        if data["coef"].shape[1] == 0:
            amp_sector[bq] = np.zeros((0, len(data["entries"])))
            continue
        amp = data["coef"].T @ data["gram"]
        kb = data["kept_basis"]
        if kb is not None and data["kcomp"].shape[1]:
            amp = amp + data["kcomp"].T @ (kb.T @ asm.kept_cross[bq].T)
        amp_sector[bq] = amp
    # scatter per (eta, member) for rho assembly
    per_eta = {}
    for bq, data in basis.items():
        ents = data["entries"]
        amp = amp_sector[bq]
        up_cols = [i for i, (_, eta) in enumerate(ents) if eta == 0]
        dn_cols = [i for i, (_, eta) in enumerate(ents) if eta == 1]
        up_mem = [ents[i][0] for i in up_cols]
        dn_mem = [ents[i][0] for i in dn_cols]
        per_eta[bq] = dict(
            up=(np.array(up_mem, dtype=int), amp[:, up_cols]),
            dn=(np.array(dn_mem, dtype=int), amp[:, dn_cols]),
        )
    amps = dict(
        sector=amp_sector,
        per_eta=per_eta,
        dropped=dropped,
        separable=separable,
        per_subspace=[],
    )
    return subspaces, amps


def _slot_amplitudes(asm, amps, sector, slot):
    """Amplitude of basis vector `slot` of `sector` on (eta, member) kets."""
    n_mem = len(asm.members)
    per = amps["per_eta"][sector]
    out = {}
    for eta, key in ((0, "up"), (1, "dn")):
        mem_idx, mat = per[key]
        v = np.zeros(n_mem)
        if mat.shape[0]:
            v[mem_idx] = mat[slot]
        out[eta] = v
    return out


def _assemble_rho(asm, subspaces, amps):
    w = asm.weights
    amps["per_subspace"] = []
    for sub in subspaces:
        a_up = _slot_amplitudes(asm, amps, sub.sector_up, sub.slot_up)
        a_dn = _slot_amplitudes(asm, amps, sub.sector_dn, sub.slot_dn)
        vecs = {
            (0, 0): a_up[0],  # |up>|phi_up>
            (0, 1): a_dn[0],  # |up>|phi_dn>
            (1, 0): a_up[1],  # |dn>|phi_up>
            (1, 1): a_dn[1],  # |dn>|phi_dn>
        }
        keys = [(0, 0), (0, 1), (1, 0), (1, 1)]
        rho = np.zeros((4, 4))
        for i, ki in enumerate(keys):
            wi = w * vecs[ki]
            for j, kj in enumerate(keys[i:], start=i):
                rho[i, j] = float(wi @ vecs[kj])
                rho[j, i] = rho[i, j]
        sub.rho_hat = rho
        sub.basis_weight = float(np.trace(rho))
        amps["per_subspace"].append(vecs)


def _rho_eof(rho):
    rho_c = tq.TwoQubitDensity.from_matrix(rho).matrix
    return tq.eof(rho_c), rho_c


def _finalize_subspaces(asm, subspaces, opts):
    for sub in subspaces:
        e_f, rho_c = _rho_eof(sub.rho_hat)
        sub.e_f = e_f
        sub.rho_hat = rho_c
        if opts["build_witness"]:
            _attach_witness(sub)


def _attach_witness(sub):
    """Cheap valid witness; suboptimality is charged to the bound via eps."""
    rho = sub.rho_hat
    trr = float(np.real(np.trace(rho)))
    if trr <= 0.0:
        sub.witness_matrix = np.zeros((4, 4))
        sub.witness_eps = 0.0
        sub.witness_negativity = 0.0
        return
    c = tq.concurrence(rho)
    if c < tq.NULL_CONCURRENCE * max(trr, 1.0):
        sub.witness_matrix = np.zeros((4, 4))
        sub.witness_eps = 0.0
        sub.witness_negativity = 0.0
        return
    seed = tq._bell_diagonal_seed(rho)
    if seed is None:
        seed = tq._pure_filter_seed(rho)
    if seed is None:
        xc, _ = tq.optimal_concurrence_witness(rho, raise_on_fail=False)
        xc_mat = xc.matrix
    else:
        o1, o2 = seed
        val, o1, o2 = tq._polish(o1, o2, rho, maxiter=60)
        o = np.kron(o1, o2)
        xc_mat = o @ (2.0 * np.outer(tq._BELL_PHI, tq._BELL_PHI) - np.eye(4)) @ o.conj().T
        xc_mat = 0.5 * (xc_mat + xc_mat.conj().T)
    x = tq.eof_witness_matrix(xc_mat, c / trr)
    x = 0.5 * (x + x.conj().T)
    val = float(np.real(np.trace(x @ rho)))
    sub.witness_matrix = x
    sub.witness_eps = float(max(0.0, sub.e_f - val))
    sub.witness_negativity = float(max(0.0, -np.linalg.eigvalsh(x).min()))


def _improve(asm, subspaces, amps, opts):
    """Pairwise rotations between subspaces, accepted when the bound grows."""
    order = np.argsort([-s.basis_weight for s in subspaces])[: opts["improve_top"]]
    cand = [subspaces[i] for i in order]
    angles = (-0.3, -0.1, -0.03, 0.03, 0.1, 0.3)
    w = asm.weights

    def e_f_of(vecs):
        keys = [(0, 0), (0, 1), (1, 0), (1, 1)]
        rho = np.zeros((4, 4))
        for i, ki in enumerate(keys):
            wi = w * vecs[ki]
            for j, kj in enumerate(keys[i:], start=i):
                rho[i, j] = float(wi @ vecs[kj])
                rho[j, i] = rho[i, j]
        evals = np.linalg.eigvalsh(rho)
        if evals[0] < 0.0:
            rho = rho - evals[0] * np.eye(4) * (evals[0] < -1e-14)
        try:
            return tq.eof(tq.TwoQubitDensity.from_matrix(rho).matrix), rho
        except Exception:
            return -1.0, rho

    for _ in range(opts["improve_sweeps"]):
        improved = False
        for i in range(len(cand)):
            for j in range(i + 1, len(cand)):
                si, sj = cand[i], cand[j]
                pattern = None
                if si.sector_up == sj.sector_up and si.sector_dn == sj.sector_dn:
                    pattern = ("up-up", "dn-dn")
                elif si.sector_up == sj.sector_dn and si.sector_dn == sj.sector_up:
                    pattern = ("up-dn", "dn-up")
                if pattern is None:
                    continue
                vi = amps["per_subspace"][subspaces.index(si)]
                vj = amps["per_subspace"][subspaces.index(sj)]
                base = si.e_f + sj.e_f
                best = None
                for th in angles:
                    c, s = np.cos(th), np.sin(th)
                    if pattern[0] == "up-up":
                        ni = {k: c * vi[k] + s * vj[k] for k in vi}
                        nj = {k: -s * vi[k] + c * vj[k] for k in vj}
                    else:
                        swap = {(0, 0): (0, 1), (0, 1): (0, 0), (1, 0): (1, 1), (1, 1): (1, 0)}
                        ni = {k: c * vi[k] + s * vj[swap[k]] for k in vi}
                        nj = {k: -s * vi[swap[k]] + c * vj[k] for k in vj}
                    ei, ri = e_f_of(ni)
                    ej, rj = e_f_of(nj)
                    if ei + ej > base + 1e-12 and (best is None or ei + ej > best[0]):
                        best = (ei + ej, ni, nj, ei, ej, ri, rj)
                if best is not None:
                    _, ni, nj, ei, ej, ri, rj = best
                    ii, jj = subspaces.index(si), subspaces.index(sj)
                    amps["per_subspace"][ii] = ni
                    amps["per_subspace"][jj] = nj
                    si.e_f, si.rho_hat = ei, ri
                    sj.e_f, sj.rho_hat = ej, rj
                    improved = True
        if not improved:
            break


# ---------------------------------------------------------------------------
# global bound


@dataclass
class GlobalWitness:
    units: list  # list of UnitResult
    state_label: str = ""

    @property
    def subspaces(self):
        return [s for u in self.units for s in u.subspaces]


@dataclass
class LowerBoundResult:
    value: float
    raw_sum: float
    penalty: float
    witness: GlobalWitness
    capture: float
    leakage: float
    dropped: int
    blocks_per_unit: int


def construct_witness(state, *, blocks_per_unit=1, options=None):
    units = build_units(state, blocks_per_unit)
    ops_cache = {}
    opts = dict(options or {})
    opts["ops_cache"] = ops_cache
    results = []
    for unit in units:
        res, _ = assemble_unit(state, unit, options=opts)
        results.append(res)
    return GlobalWitness(units=results, state_label=state.label)


def lower_bound(state, witness=None, *, blocks_per_unit=1, options=None):
    """Certified EoF lower bound tr(X rho) minus the leakage penalty.

    The raw sum adds tr(X_i rho_i) over subspaces (EoF of each projected
    block minus the constructed witness's suboptimality).  Weight from
    blocks below each unit's spectator range and from pruned tails could
    land on later units' subspaces with a negative witness value, so it is
    subtracted at the largest witness negativity observed.
    """
    if witness is None:
        witness = construct_witness(state, blocks_per_unit=blocks_per_unit, options=options)
    raw = float(sum(u.bound for u in witness.units))
    c_max = 0.0
    for u in witness.units:
        for s in u.subspaces:
            c_max = max(c_max, s.witness_negativity)
    # per-block leftover: block weight minus capture by any unit
    captured_by_block = {}
    for u in witness.units:
        for n, c in u.captured.items():
            captured_by_block[n] = captured_by_block.get(n, 0.0) + c
    penalty = 0.0
    unit_pos = {}
    for pos, u in enumerate(witness.units):
        for n in u.unit:
            unit_pos[n] = pos
    for n in state.block_levels:
        w_b = float(state.weights[n].sum())
        cap = captured_by_block.get(n, 0.0)
        leftover = max(w_b - cap, 0.0)
        # leakage can only land on subspaces of units after the block's own
        if unit_pos.get(n, 0) < len(witness.units) - 1:
            penalty += leftover * c_max
    pruned = sum(u.pruned_weight for u in witness.units)
    penalty += pruned * c_max
    capture = sum(captured_by_block.values())
    dropped = sum(u.dropped for u in witness.units)
    value = max(raw - penalty, 0.0)
    return LowerBoundResult(
        value=float(value),
        raw_sum=raw,
        penalty=float(penalty),
        witness=witness,
        capture=float(capture),
        leakage=float(sum(u.leakage for u in witness.units)),
        dropped=dropped,
        blocks_per_unit=blocks_per_unit,
    )


def lower_bound_sweep(state, sizes=(1,), *, options=None):
    """Best certified bound over a sweep of blocks-per-unit sizes."""
    best = None
    for size in sizes:
        res = lower_bound(state, blocks_per_unit=size, options=options)
        if best is None or res.value > best.value:
            best = res
    return best
