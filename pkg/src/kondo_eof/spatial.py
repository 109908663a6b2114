"""Spatial projection onto x <= L and the in/out splitting of Wilson sites.

The bath is the half line x > 0 with standing waves sin(kx), k = k_F + e,
e in (-D, D), in units k_F = D = hbar v_F = 1.  Chain orbitals inherit
closed-form wave functions from the star modes, so projector matrix
elements reduce to sine-integral expressions that are evaluated exactly
instead of on a real-space grid; a grid-based evaluator is kept for
cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import sici

from .errors import AccuracyError


@dataclass
class SpatialProjector:
    """Projector onto x <= L in the Wilson single-particle basis.

    `matrix[n, n']` is real symmetric; its diagonal `p` drives the in/out
    site splitting once off-diagonals are neglected.  The crossover index
    n_L = 2 log_Lambda(k_F L) marks where p_n drops from 1 to 0.
    """

    length: float
    matrix: np.ndarray
    lam: float

    @property
    def p(self):
        return np.clip(np.diag(self.matrix), 0.0, 1.0)

    @property
    def n_l(self):
        return 2.0 * np.log(self.length) / np.log(self.lam)

    def crossover_index(self):
        """First chain index with p_n < 1/2, linearly interpolated."""
        p = self.p
        below = np.nonzero(p < 0.5)[0]
        if below.size == 0 or below[0] == 0:
            return float(below[0]) if below.size else float(len(p))
        i = below[0]
        frac = (p[i - 1] - 0.5) / max(p[i - 1] - p[i], 1e-300)
        return float(i - 1 + frac)

    def largest_offdiagonal(self):
        off = np.abs(self.matrix - np.diag(np.diag(self.matrix)))
        return float(off.max())


def _cos_integral_term(gamma, length):
    """I(g) = integral_0^L (cos(g x) - 1) / x^2 dx = (1 - cos gL)/L - g Si(gL)."""
    gamma = np.abs(gamma)
    arg = gamma * length
    si, _ = sici(arg)
    # 1 - cos(y) via 2 sin^2(y/2) keeps accuracy for small arguments
    one_minus_cos = 2.0 * np.sin(0.5 * arg) ** 2
    return one_minus_cos / length - gamma * si


def projector_star(chain, length):
    """Projector matrix between star orbitals, evaluated in closed form.

    Star orbital m has wave function sqrt(2/(pi w)) (cos a x - cos b x)/x
    with (a, b) = 1 + (lower, upper) interval edge; products integrate to
    sine-integral terms with the 1/x^2 singularities cancelling exactly.
    """
    lo = chain.star_edges[:, 0]
    hi = chain.star_edges[:, 1]
    a = 1.0 + lo
    b = 1.0 + hi
    widths = hi - lo
    edges = [(a, 1.0), (b, -1.0)]
    n = a.size
    total = np.zeros((n, n))
    for ei, si_ in edges:
        for ej, sj in edges:
            gm = ei[:, None] - ej[None, :]
            gp = ei[:, None] + ej[None, :]
            total += (si_ * sj) * (
                _cos_integral_term(gm, length) + _cos_integral_term(gp, length)
            )
    total /= np.pi * np.sqrt(widths[:, None] * widths[None, :])
    return 0.5 * (total + total.T)


def projector_matrix(length, chain):
    """Spatial projector in the Wilson chain basis for distance `length`.

    [P_L]_{nn'} = <n| P_L |n'> from the star-level closed form rotated by
    the chain transform.  Exact up to roundoff; `projector_matrix_grid`
    provides the independent quadrature route.
    """
    if length <= 0.0:
        raise ValueError("projection length must be positive")
    p_star = projector_star(chain, length)
    u = chain.star_transform
    mat = u.T @ p_star @ u
    return SpatialProjector(length=float(length), matrix=0.5 * (mat + mat.T), lam=chain.lam)


def chain_wavefunctions(chain, x):
    """Real-space chain orbitals psi_n(x) on a grid, (n_x, n_sites)."""
    x = np.asarray(x, dtype=float)[:, None]
    lo = chain.star_edges[None, :, 0]
    hi = chain.star_edges[None, :, 1]
    widths = hi - lo
    a = 1.0 + lo
    b = 1.0 + hi
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = (np.cos(a * x[..., None]) - np.cos(b * x[..., None]))[:, 0, :] / x
    phi *= np.sqrt(2.0 / (np.pi * widths[0]))
    small = np.abs(x[:, 0]) < 1e-9
    if np.any(small):
        xs = x[small]
        phi[small] = np.sqrt(2.0 / (np.pi * widths[0])) * 0.5 * (b * b - a * a)[0] * xs
    return phi @ chain.star_transform


def projector_matrix_grid(length, chain, *, points_per_unit=40, check=True):
    """Quadrature evaluation of the projector for cross-checks.

    Trapezoid rule on a uniform grid dense against the k_F oscillation;
    doubling the resolution must move entries by less than 1e-4 or an
    AccuracyError is raised.  Only sensible for moderate L.
    """
    if length * points_per_unit > 5e7:
        raise AccuracyError("grid quadrature infeasible for this L; use projector_matrix")

    def evaluate(ppu):
        nx = max(int(length * ppu), 2000)
        x = np.linspace(1e-8, length, nx)
        psi = chain_wavefunctions(chain, x)
        return np.einsum("xn,xm->nm", psi, psi) * (x[1] - x[0])

    mat = evaluate(points_per_unit)
    if check:
        fine = evaluate(2 * points_per_unit)
        if np.abs(fine - mat).max() > 1e-4:
            raise AccuracyError("projector quadrature not converged; refine the grid")
        mat = fine
    return SpatialProjector(length=float(length), matrix=0.5 * (mat + mat.T), lam=chain.lam)


def split_site_basis(p):
    """In/out expansion of the four occupation states of one site channel.

    For f^dag = sqrt(p) f_in^dag + sqrt(1-p) f_out^dag and orbital order
    (out_up, out_dn, in_up, in_dn) per site channel, each occupation state
    |s> maps to sum over (in, out) pairs with these amplitudes; the doubly
    occupied state carries the sign from reordering out past in operators.

    Returns an array amp[s, i, o] over occupation indices {0, up, dn, updn}.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    q = 1.0 - p
    sp, sq = np.sqrt(p), np.sqrt(q)
    amp = np.zeros((4, 4, 4))
    # |0> = |0_out>|0_in>
    amp[0, 0, 0] = 1.0
    # |up> = sp |0_out>|up_in> + sq |up_out>|0_in>
    amp[1, 1, 0] = sp
    amp[1, 0, 1] = sq
    # |dn> likewise
    amp[2, 2, 0] = sp
    amp[2, 0, 2] = sq
    # |updn> = p |0_out>|updn_in> + sp sq |up_out>|dn_in>
    #          - sp sq |dn_out>|up_in| + q |updn_out>|0_in>
    amp[3, 3, 0] = p
    amp[3, 2, 1] = sp * sq
    amp[3, 1, 2] = -sp * sq
    amp[3, 0, 3] = q
    return amp


# occupation (electron count) and 2 S_z per single-channel site state
SITE_OCC = np.array([0, 1, 1, 2])
SITE_SZ2 = np.array([0, 1, -1, 0])


def site_amplitudes(p, channels):
    """Joint in/out amplitude table for a full site of `channels` channels.

    Index order per factor is channel-major occupation states; the result
    amp[s, i, o] covers the 4^M joint states, with cross-channel fermionic
    reordering signs (in_1 moved past out_2) folded in.
    """
    amp1 = split_site_basis(p)
    if channels == 1:
        return amp1
    if channels != 2:
        raise ValueError("only 1 or 2 channels supported")
    amp = np.zeros((16, 16, 16))
    for s1 in range(4):
        for i1 in range(4):
            for o1 in range(4):
                a1 = amp1[s1, i1, o1]
                if a1 == 0.0:
                    continue
                for s2 in range(4):
                    for i2 in range(4):
                        for o2 in range(4):
                            a2 = amp1[s2, i2, o2]
                            if a2 == 0.0:
                                continue
                            # reorder (o1 i1 o2 i2) -> (o1 o2 i1 i2)
                            sign = -1.0 if (SITE_OCC[i1] * SITE_OCC[o2]) % 2 else 1.0
                            amp[4 * s1 + s2, 4 * i1 + i2, 4 * o1 + o2] += sign * a1 * a2
    return amp


def tail_site_weights(p, channels):
    """Diagonal weights of tr_out sum_s |s><s| on the in-part of one site.

    These replace the plain 4^M degeneracy of an identity tail once the
    site is split at probability p; their sum stays exactly 4^M.
    """
    amp = site_amplitudes(p, channels)
    # tr_out |s><s| is diagonal in the in basis for each s; sum over s
    return np.einsum("sio,sio->i", amp, amp)
