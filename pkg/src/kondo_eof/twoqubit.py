"""Exact entanglement primitives on two-qubit states.

Concurrence and EoF in closed form, the optimal concurrence witness from a
determinant-1 local-operator (SLOCC) search, the tangent-line EoF witness
built on top of it, and the equal-preconcurrence optimal decomposition used
by the upper-bound machinery.

Unnormalized states are first-class citizens here: every quantity is
homogeneous of degree one in the density matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import ConvergenceError, InconsistencyError, InvalidStateError

LN2 = np.log(2.0)

# sigma_y (x) sigma_y, real symmetric in the computational basis
_SPIN_FLIP = np.array(
    [
        [0.0, 0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
    ]
)

_BELL_PHI = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0)

_PAULI = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]

# Bell states written as (V (x) I)|Phi+> with V in SU(2)
_BELL_LOCALS = [
    np.eye(2, dtype=complex),
    1j * _PAULI[1],
    1j * _PAULI[2],
    1j * _PAULI[3],
]

# real orthogonal 4x4 with all squared entries equal to 1/4
_FLAT4 = 0.5 * np.array(
    [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ]
)

PSD_TOL = 1e-10
NULL_CONCURRENCE = 1e-12


def binary_entropy(x):
    """h(x) = -x log2 x - (1-x) log2 (1-x), elementwise, h(0) = h(1) = 0."""
    x = np.asarray(x, dtype=float)
    if np.any((x < -1e-12) | (x > 1.0 + 1e-12)):
        raise InvalidStateError(f"entropy argument outside [0, 1]: {x}")
    x = np.clip(x, 0.0, 1.0)
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    out[inside] = -xi * np.log2(xi) - (1.0 - xi) * np.log2(1.0 - xi)
    return out if out.ndim else float(out)


def eof_from_concurrence(c):
    """EoF of a normalized two-qubit state as a function of its concurrence.

    f(c) = h((1 + sqrt(1 - c^2)) / 2); monotone increasing and convex on
    [0, 1] with f(0) = 0 and f(1) = 1.
    """
    c = np.asarray(c, dtype=float)
    if np.any((c < -1e-9) | (c > 1.0 + 1e-9)):
        raise InvalidStateError(f"concurrence outside [0, 1]: {c}")
    c = np.clip(c, 0.0, 1.0)
    s = np.sqrt(np.clip(1.0 - c * c, 0.0, 1.0))
    val = binary_entropy((1.0 + s) / 2.0)
    return val if np.ndim(val) else float(val)


def eof_derivative(c):
    """df/dc, finite on all of [0, 1]; f'(0) = 0 and f'(1) = 1/ln 2.

    Uses arctanh away from the endpoints and a series in s = sqrt(1 - c^2)
    once s < 1e-6, where the direct expression loses accuracy.
    """
    c = float(c)
    if c < -1e-9 or c > 1.0 + 1e-9:
        raise InvalidStateError(f"concurrence outside [0, 1]: {c}")
    c = min(max(c, 0.0), 1.0)
    if c == 0.0:
        return 0.0
    s2 = max(1.0 - c * c, 0.0)
    s = np.sqrt(s2)
    if s < 1e-6:
        return c * (1.0 + s2 / 3.0 + s2 * s2 / 5.0) / LN2
    # arctanh(s) written as log((1+s)/c) to stay accurate for small c
    return c * np.log((1.0 + s) / c) / (s * LN2)


@dataclass
class TwoQubitDensity:
    """A 4x4 Hermitian PSD matrix, possibly unnormalized.

    Basis ordering is {|0>, |1>}_A (x) {|0>, |1>}_B; in the Kondo context
    A is the impurity {up, down} and B a two-dimensional bath subspace.
    Eigenvalues in (-1e-10 tr, 0) are clamped to zero on construction.
    """

    matrix: np.ndarray
    trace_weight: float

    @classmethod
    def from_matrix(cls, matrix, *, tol=PSD_TOL):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (4, 4):
            raise InvalidStateError(f"expected a 4x4 matrix, got {matrix.shape}")
        tr = float(np.real(np.trace(matrix)))
        scale = max(abs(tr), 1.0)
        if np.linalg.norm(matrix - matrix.conj().T) > 1e-8 * scale:
            raise InvalidStateError("matrix is not Hermitian within tolerance")
        matrix = 0.5 * (matrix + matrix.conj().T)
        evals, evecs = np.linalg.eigh(matrix)
        eps = tol * scale
        if evals[0] < -eps:
            raise InvalidStateError(f"negative eigenvalue {evals[0]:.3e} beyond -{eps:.3e}")
        if evals[0] < 0.0:
            evals = np.clip(evals, 0.0, None)
            matrix = (evecs * evals) @ evecs.conj().T
        return cls(matrix=matrix, trace_weight=float(np.real(np.trace(matrix))))


@dataclass
class SloccOperator:
    """Product O = O1 (x) O2 of determinant-1 single-qubit operators.

    Each factor admits a unitary-filter-unitary factorization
    O_i = U1_i diag(f_i, 1/f_i) U2_i with real filter parameter f_i > 0,
    recovered by `factors()`.
    """

    o1: np.ndarray
    o2: np.ndarray

    @property
    def matrix(self):
        return np.kron(self.o1, self.o2)

    def factors(self):
        out = []
        for o in (self.o1, self.o2):
            u, s, vh = np.linalg.svd(o)
            f = float(np.sqrt(s[0] / s[1]))
            phase = np.linalg.det((u @ vh).astype(complex)) ** -0.5
            out.append((u * phase, f, vh * phase))
        return out

    def validate(self, tol=1e-8):
        for o in (self.o1, self.o2):
            if abs(np.linalg.det(o) - 1.0) > tol:
                raise InvalidStateError("SLOCC factor determinant differs from 1")


@dataclass
class TwoQubitWitness:
    """Hermitian witness operator on a two-qubit subspace."""

    matrix: np.ndarray
    kind: str  # "concurrence_witness", "eof_witness", or "null"

    def expectation(self, rho):
        return float(np.real(np.trace(self.matrix @ np.asarray(rho, dtype=complex))))


def _check_density(rho, tol=PSD_TOL):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise InvalidStateError(f"expected 4x4, got {rho.shape}")
    tr = float(np.real(np.trace(rho)))
    scale = max(abs(tr), 1.0)
    if np.linalg.norm(rho - rho.conj().T) > 1e-8 * scale:
        raise InvalidStateError("density matrix not Hermitian")
    rho = 0.5 * (rho + rho.conj().T)
    w = np.linalg.eigvalsh(rho)
    if w[0] < -tol * scale:
        raise InvalidStateError(f"density matrix has eigenvalue {w[0]:.3e}")
    return rho, tr


def concurrence(rho):
    """Wootters concurrence of a (possibly unnormalized) two-qubit state.

    C = max(0, l1 - l2 - l3 - l4) where l_i are the descending square roots
    of the eigenvalues of rho (Y rho* Y) and Y is the two-qubit spin flip.
    Homogeneous: C(k rho) = k C(rho).
    """
    rho, _ = _check_density(rho)
    lam = _wootters_lambdas(rho)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def _wootters_lambdas(rho):
    """Descending lambdas as singular values of L^T Y L with rho = L L^dag.

    Equivalent to the square roots of the eigenvalues of rho rho_tilde but
    without square-rooting roundoff-level zeros, so rank-deficient states
    come out exact.
    """
    evals, evecs = np.linalg.eigh(rho)
    keep = evals > max(evals[-1], 0.0) * 1e-15
    factor = evecs[:, keep] * np.sqrt(np.clip(evals[keep], 0.0, None))
    s = factor.T @ _SPIN_FLIP @ factor
    lam = np.zeros(4)
    if s.size:
        sv = np.linalg.svd(s, compute_uv=False)
        lam[: sv.size] = sv
    return lam


def eof(rho):
    """EoF of a (possibly unnormalized) two-qubit state, tr(rho) f(C/tr)."""
    rho, tr = _check_density(rho)
    if tr <= 0.0:
        return 0.0
    return tr * eof_from_concurrence(concurrence(rho) / tr)


def pure_state_eof(state, dims=None):
    """Entanglement entropy (base 2) of a bipartite pure state.

    `state` is a vector on A (x) B; `dims=(dA, dB)` defaults to (2, n/2).
    Raises if the norm deviates from one beyond 1e-8.
    """
    psi = np.asarray(state, dtype=complex).ravel()
    if dims is None:
        if psi.size % 2:
            raise InvalidStateError("cannot infer bipartition of odd-length vector")
        dims = (2, psi.size // 2)
    da, db = dims
    if da * db != psi.size:
        raise InvalidStateError(f"dims {dims} incompatible with vector of length {psi.size}")
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-8:
        raise InvalidStateError(f"state norm {norm} deviates from 1")
    mat = psi.reshape(da, db)
    rho_a = mat @ mat.conj().T
    evals = np.clip(np.real(np.linalg.eigvalsh(rho_a)), 0.0, 1.0)
    evals = evals[evals > 1e-300]
    return float(-np.sum(evals * np.log2(evals)))


def _takagi(tau):
    """Autonne-Takagi factorization of a complex symmetric matrix.

    Returns (lam, u) with u unitary, lam >= 0 descending and
    u tau u^T = diag(lam).  Works through the real 2n x 2n embedding whose
    positive eigenvectors are con-eigenvectors of tau, which stays stable
    for degenerate and zero singular values.
    """
    n = tau.shape[0]
    a, b = np.real(tau), np.imag(tau)
    big = np.block([[a, b], [b, -a]])
    w, v = np.linalg.eigh(big)
    order = np.argsort(-w)
    scale = max(1.0, abs(w[order[0]]))
    lam, cols = [], []
    for idx in order:
        if len(cols) == n or w[idx] < -1e-12 * scale:
            break
        x, y = v[:n, idx], v[n:, idx]
        u = x + 1j * y
        for c in cols:
            u = u - c * np.vdot(c, u)
        nu = np.linalg.norm(u)
        if nu < 1e-7:
            continue  # J-partner of an already collected zero mode
        cols.append(u / nu)
        lam.append(max(w[idx], 0.0))
    while len(cols) < n:
        for e in np.eye(n, dtype=complex):
            u = e.copy()
            for c in cols:
                u = u - c * np.vdot(c, u)
            if np.linalg.norm(u) > 1e-7:
                cols.append(u / np.linalg.norm(u))
                lam.append(0.0)
                break
    u_con = np.array(cols).T  # tau conj(u_i) = lam_i u_i columnwise
    u = u_con.conj().T
    return np.array(lam), u


def _polygon_phases(lam):
    """Angles phi with sum_j lam_j exp(i phi_j) = 0, for lam1 <= lam2+lam3+lam4.

    The four sides close as a triangle (lam1, lam2, lam3 + lam4); the last
    two sides share a direction.
    """
    a, b, c = lam[0], lam[1], lam[2] + lam[3]
    if a <= 1e-300:
        return np.zeros(4)
    if b + c < a:  # numerically at the C = 0 boundary; best effort closure
        return np.array([0.0, np.pi, np.pi, np.pi])
    if b <= 1e-300:  # a == c
        return np.array([0.0, 0.0, np.pi, np.pi])
    cosb = (a * a + b * b - c * c) / (2.0 * a * b)
    beta = np.arccos(np.clip(cosb, -1.0, 1.0))
    vb = b * np.exp(1j * (np.pi - beta))
    vc = -a - vb
    gamma = float(np.angle(vc))
    return np.array([0.0, np.pi - beta, gamma, gamma])


def wootters_decomposition(rho, *, _tol=1e-13):
    """Optimal pure-state decomposition for the two-qubit EoF.

    Returns a list of (weight, vector) with sum_i w_i |psi_i><psi_i| = rho.
    For C(rho) > 0 every member has concurrence C(rho)/tr(rho), so the
    weighted entanglement average equals the EoF exactly.  For C(rho) = 0
    every member has zero concurrence (product states).
    """
    rho, tr = _check_density(rho)
    if tr <= 0.0:
        return []
    evals, evecs = np.linalg.eigh(rho)
    keep = evals > 1e-14 * tr
    evals, evecs = evals[keep], evecs[:, keep]
    order = np.argsort(-evals)
    evals, evecs = evals[order], evecs[:, order]
    rank = evals.size
    sub = evecs * np.sqrt(evals)

    if rank == 1:
        v = sub[:, 0]
        w = float(np.real(np.vdot(v, v)))
        return [(w, v / np.sqrt(w))]

    # tau_ij here is the conjugate of <v_i|vtilde_j>; combining the
    # subnormalized eigenvectors with rows of u makes <z_i|ztilde_j>
    # equal to conj(u tau u^T) = diag(lam), real and diagonal
    tau = sub.T @ _SPIN_FLIP @ sub
    lam, u = _takagi(tau)
    lam4 = np.zeros(4)
    lam4[:rank] = lam
    z = sub @ u.T
    craw = lam4[0] - lam4[1] - lam4[2] - lam4[3]

    if craw > NULL_CONCURRENCE * max(tr, 1.0):
        x = z * np.concatenate([[1.0], np.full(rank - 1, 1j)])[None, :]
        y = _equalize_preconcurrence(x, craw / tr)
    else:
        # pad with a zero column so the flat rotation spreads the closed
        # polygon over four states, each with vanishing preconcurrence
        xz = np.zeros((4, 4), dtype=complex)
        xz[:, :rank] = z
        phi = _polygon_phases(lam4)
        x = xz * np.exp(-0.5j * phi)[None, :]
        y = x @ _FLAT4.T

    out = []
    for k in range(y.shape[1]):
        w = float(np.real(np.vdot(y[:, k], y[:, k])))
        if w > 1e-13 * tr:
            out.append((w, y[:, k] / np.sqrt(w)))
    return out


def _equalize_preconcurrence(x, target):
    """Real-orthogonal recombination making every <y|ytilde>/<y|y> = target.

    On entry mu = <x_i|xtilde_j> is real diagonal; a Horn-style sweep fixes
    one state per rotation, so at most rank-1 rotations are needed.
    """
    rank = x.shape[1]
    mu = np.real(np.conj(x.T @ _SPIN_FLIP @ x))  # <x_i|xtilde_j>, real branch
    g = x.conj().T @ x
    rot = np.eye(rank)
    # deviations are weight-scaled, so polish sweeps until each state meets
    # the target relative to its own weight
    for sweep in range(6):
        if _horn_pass(mu, g, rot, target, rank):
            break
    return x @ rot.T


def _horn_pass(mu, g, rot, target, rank):
    """One Horn-style pass fixing states one by one; True when converged."""
    free = list(range(rank))
    for _ in range(rank - 1):
        dev = np.array([mu[i, i] - target * np.real(g[i, i]) for i in free])
        wts = np.array([max(np.real(g[i, i]), 1e-300) for i in free])
        if np.max(np.abs(dev) / wts) < 1e-12:
            return True
        i_loc = int(np.argmax(dev))
        j_loc = int(np.argmin(dev))
        i, j = free[i_loc], free[j_loc]
        if i == j or dev[i_loc] <= 0.0 or dev[j_loc] >= 0.0:
            break
        aa = mu[i, i] - target * np.real(g[i, i])
        cc = mu[j, j] - target * np.real(g[j, j])
        bb = 2.0 * (mu[i, j] - target * np.real(g[i, j]))
        # dev'_j(t)/cos^2 = cc + bb t + aa t^2; aa > 0 > cc so a real root exists
        disc = max(bb * bb - 4.0 * aa * cc, 0.0)
        if abs(aa) > 1e-300:
            roots = [(-bb + np.sqrt(disc)) / (2.0 * aa), (-bb - np.sqrt(disc)) / (2.0 * aa)]
        elif abs(bb) > 1e-300:
            roots = [-cc / bb]
        else:
            break
        # root in t = tan(theta) zeroing state j's deviation exactly
        t = min(roots, key=abs)
        th = np.arctan(t)
        cth, sth = np.cos(th), np.sin(th)
        r = np.eye(rank)
        r[j, j] = r[i, i] = cth
        r[j, i] = sth
        r[i, j] = -sth
        mu[:] = r @ mu @ r.T
        g[:] = r @ g @ r.conj().T
        rot[:] = r @ rot
        free.remove(j)
    dev = np.abs(np.diag(mu) - target * np.real(np.diag(g)))
    wts = np.clip(np.real(np.diag(g)), 1e-300, None)
    return bool(np.max(dev / wts) < 1e-12)


def _expm2(m):
    """exp of a 2x2 complex matrix via Cayley-Hamilton."""
    mu = 0.5 * (m[0, 0] + m[1, 1])
    a = m - mu * np.eye(2)
    delta2 = a[0, 1] * a[1, 0] + a[0, 0] * a[0, 0]
    delta = np.sqrt(delta2.astype(complex))
    if abs(delta) < 1e-8:
        coeff = 1.0 + delta2 / 6.0
        return np.exp(mu) * ((1.0 + delta2 / 2.0) * np.eye(2) + coeff * a)
    return np.exp(mu) * (np.cosh(delta) * np.eye(2) + (np.sinh(delta) / delta) * a)


def _slocc_value(o1, o2, rho):
    o = np.kron(o1, o2)
    sig = o.conj().T @ rho @ o
    return float(2.0 * np.real(_BELL_PHI @ sig @ _BELL_PHI) - np.real(np.trace(sig)))


def _normal_form(rho, max_iter=300, tol=1e-13):
    """Filtering normal form: determinant-1 locals making both marginals flat.

    Returns (a1, a2, sigma) with sigma = (a1 (x) a2) rho (a1 (x) a2)^dag or
    None when a marginal gets too close to singular.
    """
    a1 = np.eye(2, dtype=complex)
    a2 = np.eye(2, dtype=complex)
    sigma = np.array(rho, dtype=complex)
    for _ in range(max_iter):
        tr = np.real(np.trace(sigma))
        if tr <= 1e-300:
            return None
        rs = sigma.reshape(2, 2, 2, 2)
        ra = np.trace(rs, axis1=1, axis2=3) / tr
        rb = np.trace(rs, axis1=0, axis2=2) / tr
        da = np.linalg.norm(ra - 0.5 * np.trace(ra) * np.eye(2))
        db = np.linalg.norm(rb - 0.5 * np.trace(rb) * np.eye(2))
        if da < tol and db < tol:
            return a1, a2, sigma
        side, marg = (0, ra) if da >= db else (1, rb)
        w, v = np.linalg.eigh(marg)
        if w[0] < 1e-12:
            return None
        m = (v * (1.0 / np.sqrt(w))) @ v.conj().T
        m = m / np.sqrt(np.linalg.det(m).astype(complex))
        if side == 0:
            a1 = m @ a1
            f = np.kron(m, np.eye(2))
        else:
            a2 = m @ a2
            f = np.kron(np.eye(2), m)
        sigma = f @ sigma @ f.conj().T
    return a1, a2, sigma


def _su2_from_adjoint(r):
    """SU(2) element u with u^dag sigma_a u = sum_b r_ab sigma_b."""
    cos_t = (np.trace(r) - 1.0) / 2.0
    theta = np.arccos(np.clip(cos_t, -1.0, 1.0))
    if theta < 1e-12:
        return np.eye(2, dtype=complex)
    if np.pi - theta < 1e-7:
        w, v = np.linalg.eigh(0.5 * (r + r.T))
        axis = v[:, np.argmax(w)]
    else:
        axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        axis = axis / (2.0 * np.sin(theta))
    n_dot_sigma = axis[0] * _PAULI[1] + axis[1] * _PAULI[2] + axis[2] * _PAULI[3]
    best, best_err = None, np.inf
    for sign in (1.0, -1.0):
        u = _expm2(sign * 0.5j * theta * n_dot_sigma)
        m = np.empty((3, 3))
        for a in range(3):
            ua = u.conj().T @ _PAULI[a + 1] @ u
            for b in range(3):
                m[a, b] = 0.5 * np.real(np.trace(ua @ _PAULI[b + 1]))
        err = np.linalg.norm(m - r)
        if err < best_err:
            best, best_err = u, err
    return best


def _bell_diagonal_seed(rho):
    """Candidate SLOCC factors that Bell-diagonalize the normal form of rho."""
    nf = _normal_form(rho)
    if nf is None:
        return None
    a1, a2, sigma = nf
    trs = np.real(np.trace(sigma))
    t = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            t[a, b] = np.real(np.trace(sigma @ np.kron(_PAULI[a + 1], _PAULI[b + 1]))) / trs
    w1, _, v2t = np.linalg.svd(t)
    if np.linalg.det(w1) < 0:
        w1[:, 2] *= -1.0
    if np.linalg.det(v2t) < 0:
        v2t[2, :] *= -1.0
    u1 = _su2_from_adjoint(w1.T)
    u2 = _su2_from_adjoint(v2t)
    best = None
    for v in _BELL_LOCALS:
        o1 = a1.conj().T @ u1.conj().T @ v
        o2 = a2.conj().T @ u2.conj().T
        val = _slocc_value(o1, o2, rho)
        if best is None or val > best[0]:
            best = (val, o1, o2)
    return best[1], best[2]


def _pure_filter_seed(rho):
    """SLOCC factors saturating the dominant eigenvector of rho."""
    _, evecs = np.linalg.eigh(rho)
    psi = evecs[:, -1]
    m = psi.reshape(2, 2)
    u, s, vh = np.linalg.svd(m)
    if s[1] < 1e-9 * max(s[0], 1e-300):
        return None
    gg = (s[1] / s[0]) ** 0.25
    g = np.diag([gg, 1.0 / gg]).astype(complex)
    o1 = u @ g
    o2 = vh.T @ g
    o1 = o1 / np.sqrt(np.linalg.det(o1).astype(complex))
    o2 = o2 / np.sqrt(np.linalg.det(o2).astype(complex))
    return o1, o2


_SL2_BASIS = [
    np.array([[1, 0], [0, -1]], dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, 1], [-1, 0]], dtype=complex),
    1j * np.array([[1, 0], [0, -1]], dtype=complex),
    1j * np.array([[0, 1], [1, 0]], dtype=complex),
    1j * np.array([[0, 1], [-1, 0]], dtype=complex),
]


def _polish(o1, o2, rho, maxiter=250):
    """Local maximization of tr[O (2P - I) O^dag rho] over sl(2, C) steps."""

    def unpack(params):
        g1 = sum(params[k] * _SL2_BASIS[k] for k in range(6))
        g2 = sum(params[6 + k] * _SL2_BASIS[k] for k in range(6))
        return o1 @ _expm2(g1), o2 @ _expm2(g2)

    def neg(params):
        p1, p2 = unpack(params)
        return -_slocc_value(p1, p2, rho)

    res = minimize(neg, np.zeros(12), method="BFGS", options={"maxiter": maxiter, "gtol": 1e-12})
    p1, p2 = unpack(res.x)
    p1 = p1 / np.sqrt(np.linalg.det(p1).astype(complex))
    p2 = p2 / np.sqrt(np.linalg.det(p2).astype(complex))
    return _slocc_value(p1, p2, rho), p1, p2


def optimal_concurrence_witness(rho, *, tol=1e-7, n_starts=8, seed=7, raise_on_fail=True):
    """Optimal concurrence witness X^C = O (2|Phi><Phi| - I) O^dag.

    Maximizes tr(X^C rho) over determinant-1 product operators; at the
    optimum the value equals the Wootters concurrence.  For C(rho) = 0 the
    null witness is returned.  Raises ConvergenceError (carrying the best
    value) when the search stays short of C(rho) by more than `tol` times
    max(tr, 1).
    """
    rho, tr = _check_density(rho)
    c_target = concurrence(rho)
    if c_target < NULL_CONCURRENCE * max(tr, 1.0):
        return (
            TwoQubitWitness(matrix=np.zeros((4, 4), dtype=complex), kind="null"),
            SloccOperator(o1=np.eye(2, dtype=complex), o2=np.eye(2, dtype=complex)),
        )

    seeds = []
    nf = _bell_diagonal_seed(rho)
    if nf is not None:
        seeds.append(nf)
    pf = _pure_filter_seed(rho)
    if pf is not None:
        seeds.append(pf)
    seeds.append((np.eye(2, dtype=complex), np.eye(2, dtype=complex)))

    scale = max(tr, 1.0)
    rng = np.random.default_rng(seed)
    best = (-np.inf, None, None)
    for trial in range(len(seeds) + n_starts):
        if trial < len(seeds):
            o1, o2 = seeds[trial]
        else:
            g = rng.normal(scale=0.6, size=12)
            o1 = _expm2(sum(g[k] * _SL2_BASIS[k] for k in range(6)))
            o2 = _expm2(sum(g[6 + k] * _SL2_BASIS[k] for k in range(6)))
        val, p1, p2 = _polish(o1, o2, rho)
        for _ in range(6):  # restart while it keeps paying
            val2, q1, q2 = _polish(p1, p2, rho)
            if val2 <= val + 1e-12 * scale:
                break
            val, p1, p2 = val2, q1, q2
        if val > best[0]:
            best = (val, p1, p2)
        if best[0] >= c_target - tol * scale:
            break

    val, o1, o2 = best
    if val < c_target - tol * scale and raise_on_fail:
        raise ConvergenceError(
            f"witness search reached {val:.6e} < concurrence {c_target:.6e}",
            best_value=val,
        )
    op = SloccOperator(o1=o1, o2=o2)
    o = op.matrix
    xc = o @ (2.0 * np.outer(_BELL_PHI, _BELL_PHI) - np.eye(4)) @ o.conj().T
    xc = 0.5 * (xc + xc.conj().T)
    return TwoQubitWitness(matrix=xc, kind="concurrence_witness"), op


def eof_witness_matrix(xc_matrix, x_rho):
    """Tangent-line EoF witness from a concurrence witness at x_rho = C/tr."""
    return eof_from_concurrence(x_rho) * np.eye(4) + eof_derivative(x_rho) * (
        xc_matrix - x_rho * np.eye(4)
    )


def optimal_eof_witness(rho, *, tol=1e-7, **kwargs):
    """Optimal EoF witness from the tangent line of f at x = C(rho)/tr(rho).

    X = f(x) I + f'(x) (X^C - x I); tr(X rho) = EoF(rho) and
    <psi|X|psi> <= E_F(|psi>) for every pure state of the subspace.
    """
    rho, tr = _check_density(rho)
    if tr <= 0.0:
        raise InvalidStateError("EoF witness needs tr(rho) > 0")
    xc, _ = optimal_concurrence_witness(rho, tol=tol, **kwargs)
    x = concurrence(rho) / tr
    if xc.kind == "null" and x > NULL_CONCURRENCE:
        raise InconsistencyError("null concurrence witness for an entangled state")
    mat = eof_witness_matrix(xc.matrix, x)
    return TwoQubitWitness(matrix=0.5 * (mat + mat.conj().T), kind="eof_witness")


def witness_validity_check(witness, n_samples=10000, seed=0):
    """Max over Haar-random pure states of <psi|X|psi> - E_F(|psi>).

    A valid EoF witness keeps this at or below zero (up to roundoff);
    returns the observed maximum.
    """
    rng = np.random.default_rng(seed)
    x = witness.matrix
    worst = -np.inf
    done = 0
    while done < n_samples:
        m = min(2000, n_samples - done)
        psi = rng.normal(size=(m, 4)) + 1j * rng.normal(size=(m, 4))
        psi /= np.linalg.norm(psi, axis=1)[:, None]
        vals = np.real(np.einsum("li,ij,lj->l", psi.conj(), x, psi))
        mats = psi.reshape(m, 2, 2)
        red = np.einsum("lab,lcb->lac", mats, mats.conj())
        evs = np.clip(np.linalg.eigvalsh(red)[:, 0], 0.0, 1.0)
        ee = binary_entropy(evs)
        worst = max(worst, float(np.max(vals - ee)))
        done += m
    return worst
