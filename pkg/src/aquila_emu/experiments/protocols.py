"""Pulse-sequence builders for the single-atom, blockade, ordering and scar
experiments, plus a few noiseless helpers used to analyse them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine import StateVector, bits_to_config, build_basis, evolve, rydberg_density
from ..program import AQUILA, AnalogProgram, PhaseWaveform, Register, Waveform

# Levine et al. (2019) time-optimal CZ parameters: Delta/Omega, Omega*tau, xi
LP_DELTA_RATIO = 0.377371
LP_OMEGA_TAU = 4.29268
LP_XI = 3.90242

DEFAULT_RAMP = 0.06
CHAIN_PITCH = 6.1


def single_atom() -> Register:
    return Register.from_positions([(0.0, 0.0)])


def chain(n: int, pitch: float = CHAIN_PITCH) -> Register:
    return Register.from_positions([(i * pitch, 0.0) for i in range(n)])


def square_lattice(nx: int, ny: int, pitch: float) -> Register:
    return Register.from_positions([(i * pitch, j * pitch) for j in range(ny) for i in range(nx)])


def _check_ramp(omega: float, ramp: float):
    if ramp < abs(omega) / AQUILA.max_rabi_slew * (1 - 1e-9):
        raise ValueError(f"ramp {ramp} us is too fast for Rabi {omega} (slew limit {AQUILA.max_rabi_slew})")


def _trapezoid(omega: float, ramp: float, plateau: float, t0: float = 0.0) -> list[tuple[float, float]]:
    """Knots of a 0 -> omega -> 0 pulse starting at t0 (no duplicate times)."""
    knots = [(t0, 0.0), (t0 + ramp, omega)]
    if plateau > 0:
        knots.append((t0 + ramp + plateau, omega))
    knots.append((t0 + 2 * ramp + plateau, 0.0))
    return knots


def _join(*parts: list[tuple[float, float]]) -> Waveform:
    knots: list[tuple[float, float]] = []
    for part in parts:
        for t, v in part:
            if knots and abs(t - knots[-1][0]) < 1e-12:
                if abs(v - knots[-1][1]) > 1e-12:
                    raise ValueError(f"waveform jumps at t={t}")
                continue
            knots.append((t, v))
    return Waveform(tuple(knots))


def build_rabi(omega: float, delta: float, T: float, ramp: float = DEFAULT_RAMP, register: Register | None = None) -> AnalogProgram:
    """Trapezoidal drive at constant detuning."""
    _check_ramp(omega, ramp)
    if 2 * ramp > T + 1e-12:
        raise ValueError("pulse shorter than its two ramps")
    om = _join(_trapezoid(omega, ramp, T - 2 * ramp))
    return AnalogProgram(register or single_atom(), om, Waveform.constant(delta, om.duration))


def rectangular_pulse(omega: float, delta: float, T: float, register: Register | None = None, phase: float = 0.0) -> AnalogProgram:
    """Emulator-only square pulse (fails the zero-endpoint rule)."""
    return AnalogProgram(
        register or single_atom(), Waveform.constant(omega, T), Waveform.constant(delta, T), PhaseWaveform.constant(phase)
    )


def _area_plateau(area: float, omega: float, ramp: float) -> float:
    plateau = area / omega - ramp
    if plateau < -1e-12:
        raise ValueError(f"ramps of {ramp} us already exceed a pulse area of {area}")
    return max(plateau, 0.0)


def build_ramsey(hold: float, omega: float = 15.0, ramp: float = DEFAULT_RAMP, delta: float = 0.0, register: Register | None = None) -> AnalogProgram:
    """pi/2 pulse, free evolution for ``hold``, pi/2 pulse."""
    _check_ramp(omega, ramp)
    p = _area_plateau(math.pi / 2, omega, ramp)
    first = _trapezoid(omega, ramp, p)
    t1 = first[-1][0]
    parts = [first]
    if hold > 0:
        parts.append([(t1, 0.0), (t1 + hold, 0.0)])
    parts.append(_trapezoid(omega, ramp, p, t1 + hold))
    om = _join(*parts)
    return AnalogProgram(register or single_atom(), om, Waveform.constant(delta, om.duration))


def build_spin_echo(hold: float, omega: float = 15.0, ramp: float = DEFAULT_RAMP, delta: float = 0.0, register: Register | None = None) -> AnalogProgram:
    """pi/2 (phase 0), hold, pi (phase pi/2), hold, pi/2 (phase pi).

    Phase changes happen in the middle of each hold, where the drive is off.
    Noiselessly the sequence returns every atom to the ground state.
    """
    _check_ramp(omega, ramp)
    p2 = _area_plateau(math.pi / 2, omega, ramp)
    p1 = _area_plateau(math.pi, omega, ramp)
    a = _trapezoid(omega, ramp, p2)
    t1 = a[-1][0]
    b = _trapezoid(omega, ramp, p1, t1 + hold)
    t2 = b[-1][0]
    c = _trapezoid(omega, ramp, p2, t2 + hold)
    parts = [a]
    if hold > 0:
        parts.append([(t1, 0.0), (t1 + hold, 0.0)])
    parts.append(b)
    if hold > 0:
        parts.append([(t2, 0.0), (t2 + hold, 0.0)])
    parts.append(c)
    om = _join(*parts)
    phase = PhaseWaveform(((0.0, 0.0), (t1 + hold / 2, math.pi / 2), (t2 + hold / 2, math.pi)))
    return AnalogProgram(register or single_atom(), om, Waveform.constant(delta, om.duration), phase)


def build_floquet(
    delta0: float, w: float, omega: float, T: float, ramp: float = DEFAULT_RAMP, register: Register | None = None, max_error: float = 1e-4
) -> AnalogProgram:
    """Trapezoidal drive with detuning ``delta0 sin(w t)`` sampled piecewise-linearly.

    At least 100 knots per period, more if needed to keep the interpolation
    error (h^2/8 max|f''|) below ``max_error`` rad/us.
    """
    base = build_rabi(omega, 0.0, T, ramp, register)
    if delta0 == 0 or w == 0:
        return base
    per_period = max(100, math.ceil(2 * math.pi * math.sqrt(abs(delta0) / (8 * max_error))))
    n = max(2, math.ceil(per_period * T * abs(w) / (2 * math.pi)))
    t = np.linspace(0.0, T, n + 1)
    de = Waveform.from_arrays(t, delta0 * np.sin(w * t))
    return AnalogProgram(base.register, base.omega, de)


@dataclass(frozen=True)
class AdiabaticParams:
    omega_max: float = 15.0
    delta_i: float = -30.0
    delta_f: float = 30.0
    t_ramp_omega: float = 0.5
    t_sweep: float = 3.0
    t_total: float = 4.0


def build_adiabatic(
    omega_max: float = 15.0,
    delta_i: float = -30.0,
    delta_f: float = 30.0,
    t_ramp_omega: float = 0.5,
    t_sweep: float = 3.0,
    t_total: float = 4.0,
    register: Register | None = None,
) -> AnalogProgram:
    """Ramp the drive on at ``delta_i``, sweep the detuning to ``delta_f``, ramp off."""
    t_off = t_total - t_ramp_omega - t_sweep
    if t_ramp_omega <= 0 or t_sweep <= 0 or t_off <= 1e-12:
        raise ValueError("need positive ramp-on, sweep and ramp-off durations")
    _check_ramp(omega_max, min(t_ramp_omega, t_off))
    t1, t2 = t_ramp_omega, t_ramp_omega + t_sweep
    om = Waveform(((0.0, 0.0), (t1, omega_max), (t2, omega_max), (t_total, 0.0)))
    de = Waveform(((0.0, delta_i), (t1, delta_i), (t2, delta_f), (t_total, delta_f)))
    return AnalogProgram(register or single_atom(), om, de)


def build_scar(
    prep: AdiabaticParams | None,
    quench_T: float,
    omega: float | None = None,
    ramp_off: float | None = None,
    delta_step: float = 0.05,
    register: Register | None = None,
) -> AnalogProgram:
    """Adiabatic preparation followed by a resonant quench at Delta = 0.

    With ``prep`` the sweep ends with the drive still on, the detuning steps
    to 0 over ``delta_step``, the drive stays at ``omega_max`` for
    ``quench_T`` and then ramps off.  With ``prep=None`` (emulator-only) the
    program is a constant resonant drive for ``quench_T``; pair it with an
    injected initial state such as :func:`neel_state`.
    """
    reg = register or chain(9)
    if prep is None:
        om_val = 15.0 if omega is None else omega
        return rectangular_pulse(om_val, 0.0, quench_T, reg)
    if quench_T == 0:
        return build_adiabatic(prep.omega_max, prep.delta_i, prep.delta_f, prep.t_ramp_omega, prep.t_sweep, prep.t_total, reg)
    om_val = prep.omega_max if omega is None else omega
    ramp_off = prep.t_ramp_omega if ramp_off is None else ramp_off
    _check_ramp(om_val, min(prep.t_ramp_omega, ramp_off))
    t1 = prep.t_ramp_omega
    t2 = t1 + prep.t_sweep
    t3 = t2 + delta_step
    t4 = t3 + quench_T
    t5 = t4 + ramp_off
    om = Waveform(((0.0, 0.0), (t1, om_val), (t4, om_val), (t5, 0.0)))
    de = Waveform(((0.0, prep.delta_i), (t1, prep.delta_i), (t2, prep.delta_f), (t3, 0.0), (t5, 0.0)))
    return AnalogProgram(reg, om, de)


def build_lp_analogue(
    n_atoms: int = 1,
    omega: float = 15.0,
    delta: float | None = None,
    xi: float = LP_XI,
    pulse_T: float | None = None,
    ramp: float = DEFAULT_RAMP,
    spacing: float = 4.0,
) -> AnalogProgram:
    """Two drive pulses separated by a phase jump ``xi`` taken while the drive is off.

    Defaults follow the Levine et al. time-optimal gate.  Each pulse is a
    trapezoid whose area equals ``omega * pulse_T``, so the ramps do not
    change the rotation angle.
    """
    if n_atoms not in (1, 2):
        raise ValueError("n_atoms must be 1 or 2")
    delta = LP_DELTA_RATIO * omega if delta is None else delta
    pulse_T = LP_OMEGA_TAU / omega if pulse_T is None else pulse_T
    _check_ramp(omega, ramp)
    p = _area_plateau(omega * pulse_T, omega, ramp)
    a = _trapezoid(omega, ramp, p)
    t1 = a[-1][0]
    om = _join(a, _trapezoid(omega, ramp, p, t1))
    reg = single_atom() if n_atoms == 1 else Register.from_positions([(0.0, 0.0), (spacing, 0.0)])
    phase = PhaseWaveform(((0.0, 0.0), (t1, xi)))
    return AnalogProgram(reg, om, Waveform.constant(delta, om.duration), phase)


def neel_state(basis, start_rydberg: bool = True) -> StateVector:
    """Product Neel state 1010... (or 0101...) in ``basis``."""
    n = basis.n_sites
    bits = [(i + (0 if start_rydberg else 1)) % 2 == 0 for i in range(n)]
    return StateVector.product(basis, bits_to_config(int(b) for b in bits))


def neel_configs(n: int) -> tuple[int, int]:
    a = bits_to_config([(i + 1) % 2 for i in range(n)])
    b = bits_to_config([i % 2 for i in range(n)])
    return a, b


def collective_rabi_register(n: int, spacing: float = 4.0) -> Register:
    """Fully blockaded clusters: 1-4 atoms on a square of side ``spacing``, 7 on a hexagon."""
    if 1 <= n <= 4:
        corners = [(0, 0), (1, 0), (0, 1), (1, 1)][:n]
        return Register.from_positions([(spacing * x, spacing * y) for x, y in corners])
    if n == 7:
        return hexagon_register(8.94)
    raise ValueError("supported sizes are 1-4 and 7")


def hexagon_register(diagonal: float = 8.94) -> Register:
    """Centre atom plus six atoms on a regular hexagon of the given diagonal.

    The three rows are only sqrt(3)/4 * diagonal apart (3.87 um at the
    default), below the hardware row gap, so this register is emulator-only.
    """
    r = diagonal / 2
    h = r * math.sqrt(3) / 2
    pts = [(r, h), (r / 2, 0.0), (3 * r / 2, 0.0), (0.0, h), (2 * r, h), (r / 2, 2 * h), (3 * r / 2, 2 * h)]
    return Register.from_positions(pts)


def ground_probability_trajectory(prog: AnalogProgram, times: Sequence[float], initial: StateVector | None = None, basis=None):
    """Noiseless probability of the all-ground configuration at each time."""
    basis = basis or build_basis(prog.register, "full")
    states = evolve(prog, basis, sample_times=times, initial=initial)
    return np.array([s.probability(0) for s in states])


def two_atom_excitation(distance: float, delta_f: float = 30.0, params: AdiabaticParams = AdiabaticParams()) -> float:
    """Noiseless mean Rydberg count of two atoms after an adiabatic sweep."""
    reg = Register.from_positions([(0.0, 0.0), (distance, 0.0)])
    prog = build_adiabatic(params.omega_max, params.delta_i, delta_f, params.t_ramp_omega, params.t_sweep, params.t_total, reg)
    state = evolve(prog, build_basis(reg, "full"))[0]
    return float(rydberg_density(state).sum())
