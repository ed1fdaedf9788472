"""Independent reference implementations used only by the tests.

Nothing here imports the engine's operator: the Hamiltonian is assembled from
Kronecker products of 2x2 matrices and exponentiated by eigendecomposition.
"""

import itertools
import math

import numpy as np

from aquila_emu.program import AnalogProgram, PhaseWaveform, Register, Waveform

C6 = 5_420_503.0

G = np.array([1.0, 0.0])
R = np.array([0.0, 1.0])
# |g><r| in the (g, r) basis
LOWER = np.outer(G, R).astype(complex)
NUM = np.outer(R, R).astype(complex)
I2 = np.eye(2, dtype=complex)


def site_op(op, i, n):
    """Kronecker embedding with site 0 as the most significant factor."""
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        out = np.kron(out, op if k == i else I2)
    return out


def dense_hamiltonian(positions, omega, delta, phi, rabi_scale=None, det_offset=None, c6=C6):
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    rabi_scale = np.ones(n) if rabi_scale is None else np.asarray(rabi_scale)
    det_offset = np.zeros(n) if det_offset is None else np.asarray(det_offset)
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    for i in range(n):
        low = site_op(LOWER, i, n)
        drive = 0.5 * omega * rabi_scale[i] * (np.exp(1j * phi) * low + np.exp(-1j * phi) * low.conj().T)
        h += drive - (delta + det_offset[i]) * site_op(NUM, i, n)
    for i, j in itertools.combinations(range(n), 2):
        r = np.linalg.norm(pos[i] - pos[j])
        h += c6 / r**6 * site_op(NUM, i, n) @ site_op(NUM, j, n)
    return h


def _controls(prog, t):
    om = float(np.interp(t, [k[0] for k in prog.omega.knots], [k[1] for k in prog.omega.knots]))
    de = float(np.interp(t, [k[0] for k in prog.delta.knots], [k[1] for k in prog.delta.knots]))
    ph = prog.phase.segments[0][1]
    for start, v in prog.phase.segments:
        if t >= start:
            ph = v
    return om, de, ph


def dense_propagate(prog, dt, psi0=None, sample_times=None):
    """Midpoint piecewise-constant propagation with eigendecomposition per step.

    Steps are cut at every knot, phase jump and sample time.  Returns the
    states at ``sample_times`` (default: final time) in the full 2^N basis.
    The phase is gauged out, H(phi) = W^dagger H(0) W with
    W = diag(exp(i phi n_total)), so every eigendecomposition is real.
    """
    n = len(prog.register.sites)
    pos = [(s.x, s.y) for s in prog.register.sites]
    dim = 2**n
    scale, offset = prog.site_rabi_scale, prog.site_detuning_offset
    static = dense_hamiltonian(pos, 0.0, 0.0, 0.0, scale, offset).real
    count = dense_hamiltonian(pos, 0.0, -1.0, 0.0, c6=0.0).real.diagonal()
    drive = dense_hamiltonian(pos, 2.0, 0.0, 0.0, scale, c6=0.0).real
    psi = np.zeros(dim, dtype=complex)
    if psi0 is None:
        psi[0] = 1.0
    else:
        psi = np.asarray(psi0, dtype=complex).copy()
    T = prog.duration
    times = [T] if sample_times is None else list(sample_times)
    cuts = {0.0, T}
    cuts.update(k[0] for k in prog.omega.knots)
    cuts.update(k[0] for k in prog.delta.knots)
    cuts.update(s[0] for s in prog.phase.segments)
    cuts.update(times)
    cuts = sorted(cuts)
    out = {}
    for t in times:
        if t <= 0:
            out[t] = psi.copy()
    cache = {}
    for a, b in zip(cuts, cuts[1:]):
        if b - a <= 1e-15:
            continue
        k = max(1, math.ceil((b - a) / dt - 1e-9))
        h = (b - a) / k
        for s in range(k):
            tm = a + (s + 0.5) * h
            om, de, ph = _controls(prog, tm)
            key = (om, de)
            if key not in cache:
                H = static - de * np.diag(count) + 0.5 * om * drive
                cache = {key: np.linalg.eigh(H)}
            w, v = cache[key]
            gauge = np.exp(1j * ph * count)
            x = gauge * psi
            x = v @ (np.exp(-1j * w * h) * (v.T @ x))
            psi = gauge.conj() * x
        for t in times:
            if abs(t - b) < 1e-12:
                out[t] = psi.copy()
    return [out[t] for t in times]


def enumerate_fibonacci_chain(n):
    """Count n-bit strings without adjacent ones by brute force."""
    return sum(1 for bits in itertools.product((0, 1), repeat=n) if all(not (a and b) for a, b in zip(bits, bits[1:])))


def brute_force_mis(n, edges):
    adj = [set() for _ in range(n)]
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    best = 0
    for mask in range(1 << n):
        chosen = [i for i in range(n) if mask >> i & 1]
        if all(j not in adj[i] for i in chosen for j in chosen):
            best = max(best, len(chosen))
    return best


def random_program(rng, n, T):
    """Random legal-slew program on n atoms at least 4 um apart, duration T."""
    while True:
        pos = rng.uniform(0, 14, (n, 2))
        if n < 2 or min(np.linalg.norm(pos[i] - pos[j]) for i in range(n) for j in range(i)) >= 4:
            break
    om_peak = rng.uniform(2, min(15.8, 250 * 0.45 * T))
    ramp = min(om_peak / 250 * rng.uniform(1, 2), 0.45 * T)
    om = Waveform(((0, 0), (ramp, om_peak), (T - ramp, om_peak * rng.uniform(0.5, 1)), (T, 0)))
    de = Waveform.from_arrays(np.linspace(0, T, 4), rng.uniform(-40, 40, 4))
    phase = PhaseWaveform(((0, rng.uniform(-3, 3)), (T * rng.uniform(0.3, 0.7), rng.uniform(-3, 3))))
    return AnalogProgram(Register.from_positions(pos), om, de, phase)
