"""Rydberg Hamiltonian and state-vector time evolution.

Configurations are stored as integers with site 0 in the most significant
bit, so integer order is the lexicographic order of the bitstrings written
site 0 first.  Bit value 1 means the atom is in the Rydberg state.  (Readout
uses the opposite convention; see :mod:`aquila_emu.noise`.)

The Hamiltonian is

    H(t) = sum_i (Omega_i(t)/2) (e^{i phi} |g_i><r_i| + e^{-i phi} |r_i><g_i|)
           - sum_i Delta_i(t) n_i + sum_{i<j} V_ij n_i n_j

and is applied matrix-free.  Evolution cuts [0, T] at every knot and phase
jump, takes piecewise-constant exponential steps and evaluates each
exponential with a Lanczos (Krylov) approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .program import C6, AnalogProgram, Register, phase_at

FULL_CAP = 24
TRUNCATED_CAP = 40
# below this many flip entries the lowering map is cached as a sparse matrix
SPARSE_FLIP_LIMIT = 1 << 22
# tiny bases are exponentiated exactly; Lanczos overhead dominates there
DENSE_DIM = 32
# guards the truncated-basis size, independent of the qubit cap
MAX_BASIS_STATES = 1 << 24


class DegenerateGeometryError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class IntegratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    dt_max: float = 1e-3
    tolerance: float = 1e-12
    max_krylov: int = 60

    def __post_init__(self):
        if not self.dt_max > 0 or not self.tolerance > 0:
            raise ValueError("dt_max and tolerance must be positive")


def interaction_matrix(reg: Register | np.ndarray, c6: float = C6) -> np.ndarray:
    """V_ij = c6 / |x_i - x_j|^6 with a zero diagonal."""
    pos = reg.positions if isinstance(reg, Register) else np.asarray(reg, dtype=float).reshape(-1, 2)
    n = len(pos)
    if n == 0:
        return np.zeros((0, 0))
    d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0):
        raise DegenerateGeometryError("two sites coincide")
    v = np.zeros((n, n))
    v[off] = c6 / d[off] ** 6
    return v


def blockade_radius(omega: float, delta: float, c6: float = C6) -> float:
    """Distance at which V equals sqrt(omega^2 + delta^2)."""
    scale = math.hypot(omega, delta)
    if scale == 0:
        raise ValueError("blockade radius undefined for omega = delta = 0")
    return (c6 / scale) ** (1 / 6)


def default_cutoff(prog: AnalogProgram) -> float:
    return 2.5 * max(np.abs(prog.omega.values).max(), np.abs(prog.delta.values).max())


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Sorted configuration integers plus how they were chosen."""

    n_sites: int
    states: np.ndarray
    mode: str = "full"
    cutoff: float = math.inf

    def __len__(self) -> int:
        return len(self.states)

    @property
    def is_full(self) -> bool:
        """True when no configuration is excluded, whatever the mode."""
        return len(self.states) == (1 << self.n_sites)

    def index(self, config: int) -> int:
        """Position of ``config`` in the basis, or -1 if absent."""
        if self.is_full:
            return int(config) if 0 <= config < (1 << self.n_sites) else -1
        k = int(np.searchsorted(self.states, config))
        if k < len(self.states) and self.states[k] == config:
            return k
        return -1

    def occupations(self) -> np.ndarray:
        """(dim, n_sites) 0/1 matrix; column i is the Rydberg occupation of site i."""
        shifts = np.arange(self.n_sites - 1, -1, -1, dtype=np.int64)
        return ((self.states[:, None] >> shifts[None, :]) & 1).astype(np.int8)

    def __eq__(self, other):
        return (
            isinstance(other, BasisSet)
            and self.n_sites == other.n_sites
            and np.array_equal(self.states, other.states)
        )


def config_to_bits(config: int, n: int) -> tuple[int, ...]:
    return tuple((int(config) >> (n - 1 - i)) & 1 for i in range(n))


def bits_to_config(bits: Iterable[int]) -> int:
    c = 0
    for b in bits:
        c = (c << 1) | (1 if int(b) else 0)
    return c


def config_string(config: int, n: int) -> str:
    return "".join(map(str, config_to_bits(config, n)))


def build_basis(
    reg: Register | int,
    mode: str = "full",
    cutoff: float | None = None,
    c6: float = C6,
    full_cap: int = FULL_CAP,
    truncated_cap: int = TRUNCATED_CAP,
) -> BasisSet:
    """Full 2^N basis, or the blockade-truncated basis excluding pairs with V_ij > cutoff."""
    n = reg if isinstance(reg, int) else len(reg)
    if mode == "full":
        if n > full_cap:
            raise CapacityError(f"{n} sites exceed the full-basis cap of {full_cap}")
        return BasisSet(n, np.arange(1 << n, dtype=np.int64), "full", math.inf)
    if mode != "truncated":
        raise ValueError(f"unknown basis mode {mode!r}")
    if n > truncated_cap:
        raise CapacityError(f"{n} sites exceed the truncated-basis cap of {truncated_cap}")
    if cutoff is None:
        raise ValueError("truncated mode needs a cutoff")
    if isinstance(reg, int):
        raise TypeError("truncated mode needs a register")
    v = interaction_matrix(reg, c6)
    blocked = v > cutoff
    # depth-first extension one site at a time: appending bit 0 before bit 1
    # for each prefix keeps lexicographic order.  `lsb` mirrors the prefix
    # with site j at bit j for conflict checks.
    lex = np.zeros(1, dtype=np.int64)
    lsb = np.zeros(1, dtype=np.int64)
    for i in range(n):
        conflict = 0
        for j in np.flatnonzero(blocked[i, :i]):
            conflict |= 1 << int(j)
        ok = (lsb & conflict) == 0
        lex0, lex1 = lex * 2, lex * 2 + 1
        lsb0, lsb1 = lsb, lsb | (1 << i)
        keep1 = ok
        new_lex = np.empty(len(lex) + int(keep1.sum()), dtype=np.int64)
        new_lsb = np.empty_like(new_lex)
        # position of each prefix's "0" child in the merged, ordered array
        pos0 = np.arange(len(lex)) + np.concatenate(([0], np.cumsum(keep1)[:-1]))
        new_lex[pos0] = lex0
        new_lsb[pos0] = lsb0
        pos1 = pos0[keep1] + 1
        new_lex[pos1] = lex1[keep1]
        new_lsb[pos1] = lsb1[keep1]
        lex, lsb = new_lex, new_lsb
        if len(lex) > MAX_BASIS_STATES:
            raise CapacityError("truncated basis too large")
    return BasisSet(n, lex, "truncated", float(cutoff))


@dataclass(eq=False)
class StateVector:
    amplitudes: np.ndarray
    basis: BasisSet

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (len(self.basis),):
            raise ValueError("amplitude vector does not match basis")

    @classmethod
    def ground(cls, basis: BasisSet) -> "StateVector":
        psi = np.zeros(len(basis), dtype=complex)
        psi[basis.index(0)] = 1.0
        return cls(psi, basis)

    @classmethod
    def product(cls, basis: BasisSet, config: int) -> "StateVector":
        k = basis.index(config)
        if k < 0:
            raise ValueError("configuration not in basis")
        psi = np.zeros(len(basis), dtype=complex)
        psi[k] = 1.0
        return cls(psi, basis)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probability(self, config: int) -> float:
        k = self.basis.index(config)
        return 0.0 if k < 0 else float(abs(self.amplitudes[k]) ** 2)


class RydbergOperator:
    """Matrix-free Hamiltonian on a basis.

    The interaction and static per-site detuning offsets collapse into one
    diagonal; the time-dependent parts are the global detuning times the
    excitation count and the drive term.  In the full basis a spin flip on
    site i is a swap of two slabs of the amplitude tensor; in a truncated
    basis (or any small basis) flip partners are looked up once and stored
    as a sparse lowering map.
    """

    def __init__(
        self,
        basis: BasisSet,
        v: np.ndarray,
        site_rabi_scale: Sequence[float] | None = None,
        site_detuning_offset: Sequence[float] | None = None,
    ):
        n = basis.n_sites
        v = np.asarray(v, dtype=float)
        if v.shape != (n, n):
            raise ValueError(f"interaction matrix shape {v.shape} does not match {n} sites")
        self.basis = basis
        self.n = n
        self.dim = len(basis)
        self.scale = np.ones(n) if site_rabi_scale is None else np.asarray(site_rabi_scale, dtype=float)
        offset = np.zeros(n) if site_detuning_offset is None else np.asarray(site_detuning_offset, dtype=float)
        occ = basis.occupations().astype(float) if n else np.zeros((self.dim, 0))
        self.count = occ.sum(1)
        iu = np.triu_indices(n, 1)
        pair = occ[:, iu[0]] * occ[:, iu[1]] if n > 1 else np.zeros((self.dim, 0))
        self.static_diag = pair @ v[iu] - occ @ offset
        small = self.dim * max(n, 1) <= SPARSE_FLIP_LIMIT
        self._lower = self._lowering_map(occ) if (small or not basis.is_full) else None
        self._lower_dense = None

    def _lowering_map(self, occ: np.ndarray) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        states = self.basis.states
        for i in range(self.n):
            bit = 1 << (self.n - 1 - i)
            g = np.flatnonzero(occ[:, i] == 0)
            partner = states[g] | bit
            k = np.searchsorted(states, partner)
            k = np.minimum(k, self.dim - 1)
            hit = states[k] == partner
            rows.append(g[hit])
            cols.append(k[hit])
            vals.append(np.full(int(hit.sum()), self.scale[i]))
        rows = np.concatenate(rows) if rows else np.zeros(0, int)
        cols = np.concatenate(cols) if cols else np.zeros(0, int)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        lower = sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))
        self._lower_t = lower.T.tocsr()
        return lower

    def diagonal(self, delta: float) -> np.ndarray:
        return self.static_diag - delta * self.count

    def apply(self, psi: np.ndarray, omega: float, delta: float, phi: float, out: np.ndarray | None = None) -> np.ndarray:
        out = np.multiply(self.diagonal(delta), psi, out=out)
        if omega == 0 or self.n == 0:
            return out
        half = 0.5 * omega
        down = half * complex(math.cos(phi), math.sin(phi))  # e^{+i phi} |g><r|
        up = down.conjugate()
        if self._lower is not None:
            out += down * (self._lower @ psi)
            out += up * (self._lower_t @ psi)
            return out
        for i in range(self.n):
            # site i is bit n-1-i: view amplitudes as (2^i, 2, 2^(n-1-i))
            shape = (1 << i, 2, 1 << (self.n - 1 - i))
            src = psi.reshape(shape)
            dst = out.reshape(shape)
            s = self.scale[i]
            dst[:, 0, :] += (down * s) * src[:, 1, :]
            dst[:, 1, :] += (up * s) * src[:, 0, :]
        return out

    def dense(self, omega: float, delta: float, phi: float) -> np.ndarray:
        """Materialized matrix; only for small bases and diagnostics."""
        if self._lower is None:
            eye = np.eye(self.dim, dtype=complex)
            return np.column_stack([self.apply(eye[:, k], omega, delta, phi) for k in range(self.dim)])
        if self._lower_dense is None:
            self._lower_dense = self._lower.toarray()
        h = np.diag(self.diagonal(delta)).astype(complex)
        if omega != 0:
            down = 0.5 * omega * complex(math.cos(phi), math.sin(phi))
            h += down * self._lower_dense + down.conjugate() * self._lower_dense.T
        return h


def apply_hamiltonian(
    state: StateVector,
    omega: float,
    delta: float,
    phi: float,
    v: np.ndarray,
    site_rabi_scale: Sequence[float] | None = None,
    site_detuning_offset: Sequence[float] | None = None,
) -> np.ndarray:
    """H|psi> for fixed control values."""
    op = RydbergOperator(state.basis, v, site_rabi_scale, site_detuning_offset)
    return op.apply(state.amplitudes, omega, delta, phi)


def krylov_expm(matvec, psi: np.ndarray, dt: float, tol: float, max_m: int) -> tuple[np.ndarray, int]:
    """exp(-i H dt) psi by Lanczos; returns the result and the Krylov dimension used.

    ``matvec(x, out)`` must write H x into ``out``.  Convergence is declared
    when the standard a-posteriori estimate beta_m |[exp(-i T_m dt)]_{m,1}|
    drops below ``tol`` (absolute, relative to |psi|).
    """
    beta0 = np.linalg.norm(psi)
    if beta0 == 0:
        return psi.copy(), 0
    dim = len(psi)
    max_m = min(max_m, dim)
    V = np.empty((max_m + 1, dim), dtype=complex)
    T = np.zeros((max_m + 1, max_m + 1))
    V[0] = psi / beta0
    w = np.empty(dim, dtype=complex)
    for j in range(max_m):
        matvec(V[j], w)
        # full reorthogonalisation; cheap at these Krylov sizes
        coef = V[: j + 1].conj() @ w
        w -= coef @ V[: j + 1]
        T[j, j] = coef[j].real
        b = np.linalg.norm(w)
        m = j + 1
        evals, evecs = np.linalg.eigh(T[:m, :m])
        c = evecs @ (np.exp(-1j * evals * dt) * evecs[0])
        if b < 1e-13 or b * abs(c[-1]) < tol:
            return beta0 * (c @ V[:m]), m
        T[j, j + 1] = T[j + 1, j] = b
        V[m] = w / b
    raise IntegratorError(f"Krylov exponential did not converge in {max_m} iterations (dt={dt})")


# fourth-order commutator-free Magnus: two exponentials at the Gauss nodes
_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)
_CF_A1 = (3 - 2 * math.sqrt(3)) / 12
_CF_A2 = (3 + 2 * math.sqrt(3)) / 12


def _step_grid(cuts: Sequence[float], sample_times: Sequence[float], dt_max: float) -> list[tuple[float, float]]:
    pts = sorted(set(cuts) | set(sample_times))
    steps = []
    for a, b in zip(pts, pts[1:]):
        if b - a <= 1e-15:
            continue
        k = max(1, math.ceil((b - a) / dt_max - 1e-9))
        edges = np.linspace(a, b, k + 1)
        steps.extend(zip(edges[:-1], edges[1:]))
    return steps


def evolve(
    prog: AnalogProgram,
    basis: BasisSet | None = None,
    cfg: IntegratorConfig = IntegratorConfig(),
    sample_times: Sequence[float] | None = None,
    initial: StateVector | None = None,
    c6: float = C6,
) -> list[StateVector]:
    """States at each of ``sample_times`` (default: the final time only).

    [0, T] is cut at every knot, phase jump and sample time and each piece is
    split into equal steps no longer than ``cfg.dt_max``.  Within a piece the
    controls are affine and the phase is constant; each step applies two
    exponentials of H evaluated at weighted Gauss-node controls (a
    fourth-order commutator-free Magnus step), each by Lanczos.

    The program is not validated here; callers that need hardware limits call
    :func:`aquila_emu.program.validate` first.  ``initial`` injects a start
    state (emulator-only), otherwise all atoms start in the ground state.
    """
    if basis is None:
        basis = build_basis(prog.register, "full")
    if basis.n_sites != len(prog.register):
        raise ValueError("basis and register sizes differ")
    if initial is not None and initial.basis != basis:
        raise ValueError("initial state lives in a different basis")
    times = [prog.duration] if sample_times is None else [float(t) for t in sample_times]
    if any(t < -1e-12 or t > prog.duration + 1e-12 for t in times):
        raise ValueError("sample time outside the program")
    v = interaction_matrix(prog.register, c6)
    op = RydbergOperator(basis, v, prog.site_rabi_scale, prog.site_detuning_offset)
    psi = StateVector.ground(basis).amplitudes if initial is None else initial.amplitudes.copy()
    norm0 = np.linalg.norm(psi)

    om_t, om_v = prog.omega.times, prog.omega.values
    de_t, de_v = prog.delta.times, prog.delta.values
    steps = _step_grid(prog.cut_times(), times, cfg.dt_max)
    wanted = sorted(set(times))
    results: dict[float, np.ndarray] = {}
    k = 0
    while k < len(wanted) and wanted[k] <= 0:
        results[wanted[k]] = psi.copy()
        k += 1

    if op.dim <= DENSE_DIM and op._lower is not None:
        psi = _evolve_small(op, prog, steps, psi, wanted, results, k)
        drift = abs(np.linalg.norm(psi) - norm0)
        if drift > 1e-9:
            raise IntegratorError(f"norm drift {drift:.3g} exceeds 1e-9")
        return [StateVector(results[t].copy(), basis) for t in times]

    def expo(x, om, de, ph, h, n_step, a, b):
        if om == 0:
            return x * np.exp(-1j * h * op.diagonal(de))

        def mv(y, out):
            op.apply(y, om, de, ph, out)

        try:
            return krylov_expm(mv, x, h, cfg.tolerance, cfg.max_krylov)[0]
        except IntegratorError as exc:
            raise IntegratorError(f"step {n_step} [{a:.6g}, {b:.6g}] us: {exc}") from exc

    for n_step, (a, b) in enumerate(steps):
        h = b - a
        t1, t2 = a + _GAUSS[0] * h, a + _GAUSS[1] * h
        o1, o2 = np.interp((t1, t2), om_t, om_v)
        d1, d2 = np.interp((t1, t2), de_t, de_v)
        ph = phase_at(prog.phase, 0.5 * (a + b))
        # weights a1 + a2 = 1/2, so each factor is exp(-i (h/2) H(controls))
        first = ((_CF_A2 * o1 + _CF_A1 * o2) * 2, (_CF_A2 * d1 + _CF_A1 * d2) * 2)
        second = ((_CF_A1 * o1 + _CF_A2 * o2) * 2, (_CF_A1 * d1 + _CF_A2 * d2) * 2)
        if first[0] == 0 and second[0] == 0:
            psi = psi * np.exp(-1j * h * op.diagonal(0.5 * (first[1] + second[1])))
        else:
            psi = expo(psi, float(first[0]), float(first[1]), ph, 0.5 * h, n_step, a, b)
            psi = expo(psi, float(second[0]), float(second[1]), ph, 0.5 * h, n_step, a, b)
        while k < len(wanted) and wanted[k] <= b + 1e-12:
            results[wanted[k]] = psi.copy()
            k += 1

    drift = abs(np.linalg.norm(psi) - norm0)
    if drift > 1e-9:
        raise IntegratorError(f"norm drift {drift:.3g} exceeds 1e-9")
    return [StateVector(results[t].copy(), basis) for t in times]


def _cf4_controls(prog: AnalogProgram, a: np.ndarray, b: np.ndarray):
    """Omega and Delta of the two exponentials of each step, and the step phase."""
    h = b - a
    t1, t2 = a + _GAUSS[0] * h, a + _GAUSS[1] * h
    o1, o2 = np.interp(t1, prog.omega.times, prog.omega.values), np.interp(t2, prog.omega.times, prog.omega.values)
    d1, d2 = np.interp(t1, prog.delta.times, prog.delta.values), np.interp(t2, prog.delta.times, prog.delta.values)
    om = np.stack([(_CF_A2 * o1 + _CF_A1 * o2) * 2, (_CF_A1 * o1 + _CF_A2 * o2) * 2])
    de = np.stack([(_CF_A2 * d1 + _CF_A1 * d2) * 2, (_CF_A1 * d1 + _CF_A2 * d2) * 2])
    ph = np.array([phase_at(prog.phase, 0.5 * (x + y)) for x, y in zip(a, b)])
    return om, de, ph


def _evolve_small(op: RydbergOperator, prog, steps, psi, wanted, results, k, chunk: int = 256):
    """The same fourth-order steps for bases of at most DENSE_DIM states.

    The phase is gauged out, H(phi) = W^dag H(0) W with W = diag(exp(i phi n)),
    so every factor is a real symmetric matrix; the eigendecompositions of a
    chunk of steps are done in one batched call.
    """
    if op._lower_dense is None:
        op._lower_dense = op._lower.toarray()
    flip = op._lower_dense + op._lower_dense.T
    count = op.count
    static = op.static_diag
    idx = np.arange(op.dim)
    ab = np.array(steps, dtype=float).reshape(-1, 2)
    for start in range(0, len(ab), chunk):
        a, b = ab[start : start + chunk, 0], ab[start : start + chunk, 1]
        om, de, ph = _cf4_controls(prog, a, b)
        h = 0.5 * (b - a)
        mats = 0.5 * om[..., None, None] * flip
        mats[..., idx, idx] += static - de[..., None] * count
        w, u = np.linalg.eigh(mats)
        # U = u exp(-i h w) u^T for both factors of every step
        props = (u * np.exp(-1j * h[None, :, None] * w)[..., None, :]) @ u.swapaxes(-1, -2)
        gauge = np.exp(1j * np.outer(ph, count))
        for j in range(len(a)):
            x = gauge[j] * psi
            x = props[1, j] @ (props[0, j] @ x)
            psi = gauge[j].conj() * x
            while k < len(wanted) and wanted[k] <= b[j] + 1e-12:
                results[wanted[k]] = psi.copy()
                k += 1
    return psi


def rydberg_density(state: StateVector) -> np.ndarray:
    p = np.abs(state.amplitudes) ** 2
    return p @ state.basis.occupations()


def outcome_distribution(state: StateVector, threshold: float = 0.0) -> dict[int, float]:
    """Configuration -> probability for every basis state with p > threshold."""
    p = np.abs(state.amplitudes) ** 2
    keep = np.flatnonzero(p > threshold)
    return {int(state.basis.states[k]): float(p[k]) for k in keep}


def sample_configs(state: StateVector, rng: np.random.Generator, size: int) -> np.ndarray:
    p = np.abs(state.amplitudes) ** 2
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    k = np.searchsorted(cdf, rng.random(size), side="right")
    return state.basis.states[np.minimum(k, len(cdf) - 1)]


def sample_bitstring(state: StateVector, rng: np.random.Generator) -> tuple[int, ...]:
    """One projective measurement; Rydberg-bit convention (1 = Rydberg)."""
    c = int(sample_configs(state, rng, 1)[0])
    return config_to_bits(c, state.basis.n_sites)
