"""Shot-level error model: coherent control noise, position jitter, filling
failures and the asymmetric readout channel.

Every random draw comes from a generator seeded by ``(task_seed, stream,
shot_index)`` so any shot can be reproduced in isolation.  Stream 0 holds the
per-task frozen quantities, stream 1 the per-shot control and position noise,
stream 2 the per-shot filling and readout randomness.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.spatial.distance import pdist

from .program import AnalogProgram, Register, Site, Waveform

# jittered pairs closer than this are redrawn (V ~ r^-6 blows up)
MIN_JITTER_DISTANCE = 0.1
MAX_REDRAWS = 1000

_PROBS = ("eps_fill", "eps_det_fn", "eps_det_fp", "eps_det_gnd", "eps_det_ryd")


@dataclass(frozen=True)
class NoiseParams:
    sigma_pos: float = 0.0
    delta_pos_sys: float = 0.0
    rabi_inhom_rel: float = 0.0
    det_inhom_rms: float = 0.0
    det_sys: float = 0.0
    det_shot_rms: float = 0.0
    rabi_shot_rel: float = 0.0
    eps_fill: float = 0.0
    eps_det_fn: float = 0.0
    eps_det_fp: float = 0.0
    eps_det_gnd: float = 0.0
    eps_det_ryd: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            object.__setattr__(self, f.name, v)
            if not np.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
            if f.name in _PROBS:
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{f.name}={v} is not a probability")
            elif f.name != "det_sys" and v < 0:
                raise ValueError(f"{f.name}={v} must be non-negative")

    @classmethod
    def zero(cls) -> "NoiseParams":
        return cls()

    @classmethod
    def default(cls) -> "NoiseParams":
        """Datasheet error budget bundled with the package."""
        text = resources.files("aquila_emu").joinpath("data/default_noise.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseParams":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown noise fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "NoiseParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hamiltonian_free(self) -> bool:
        """True when no term perturbs the Hamiltonian (only fill/readout errors)."""
        return all(
            getattr(self, k) == 0
            for k in ("sigma_pos", "delta_pos_sys", "rabi_inhom_rel", "det_inhom_rms", "det_sys", "det_shot_rms", "rabi_shot_rel")
        )


@dataclass(frozen=True)
class ShotRealization:
    delta_offset: float
    rabi_scale: float
    site_position_jitter: np.ndarray
    site_delta_inhom: np.ndarray
    site_rabi_inhom: np.ndarray
    site_position_offset: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "ShotRealization":
        return cls(0.0, 1.0, np.zeros((n, 2)), np.zeros(n), np.ones(n), np.zeros((n, 2)))

    @property
    def is_identity(self) -> bool:
        return (
            self.delta_offset == 0
            and self.rabi_scale == 1
            and not self.site_position_jitter.any()
            and not self.site_delta_inhom.any()
            and bool(np.all(self.site_rabi_inhom == 1))
            and not self.site_position_offset.any()
        )


def shot_rng(task_seed: int, stream: int, shot_index: int | None = None) -> np.random.Generator:
    key = [int(task_seed), stream] if shot_index is None else [int(task_seed), stream, int(shot_index)]
    return np.random.default_rng(key)


def draw_realization(params: NoiseParams, task_seed: int, shot_index: int, register: Register | int) -> ShotRealization:
    """Noise draw for one shot; a pure function of its arguments.

    ``register`` fixes the site count and, when a :class:`Register` is given,
    lets the jitter be redrawn until every perturbed pair stays at least
    ``MIN_JITTER_DISTANCE`` apart.
    """
    n = register if isinstance(register, int) else len(register)
    task = shot_rng(task_seed, 0)
    det_inhom = task.normal(0.0, params.det_inhom_rms, n)
    rabi_inhom = task.normal(1.0, params.rabi_inhom_rel, n)
    angle = task.uniform(0.0, 2 * np.pi, n)
    sys_offset = params.delta_pos_sys * np.column_stack([np.cos(angle), np.sin(angle)])

    shot = shot_rng(task_seed, 1, shot_index)
    delta_offset = float(shot.normal(params.det_sys, params.det_shot_rms))
    rabi_scale = float(shot.normal(1.0, params.rabi_shot_rel))
    base = None if isinstance(register, int) else register.positions + sys_offset
    for _ in range(MAX_REDRAWS):
        jitter = shot.normal(0.0, params.sigma_pos, (n, 2))
        if base is None or n < 2 or pdist(base + jitter).min() >= MIN_JITTER_DISTANCE:
            break
    else:
        raise RuntimeError("could not draw a non-degenerate position jitter")
    return ShotRealization(delta_offset, rabi_scale, jitter, det_inhom, rabi_inhom, sys_offset)


def perturb(prog: AnalogProgram, r: ShotRealization) -> AnalogProgram:
    """Program seen by the atoms in one shot.

    The global detuning offset shifts the detuning waveform down, the per-site
    terms become emulator-only local modulations and positions move by the
    systematic offset plus jitter.  The register is translated back into the
    non-negative quadrant if needed, which leaves every distance unchanged.
    """
    n = len(prog.register)
    if r.site_delta_inhom.shape != (n,):
        raise ValueError("realization does not match the register size")
    if r.is_identity:
        return prog
    pos = prog.register.positions + r.site_position_offset + r.site_position_jitter
    pos = pos - np.minimum(pos.min(axis=0), 0.0)
    reg = Register(tuple(Site(float(x), float(y), s.filled) for (x, y), s in zip(pos, prog.register.sites)))
    scale = np.ones(n) if prog.site_rabi_scale is None else np.asarray(prog.site_rabi_scale)
    offset = np.zeros(n) if prog.site_detuning_offset is None else np.asarray(prog.site_detuning_offset)
    scale = scale * r.rabi_scale * r.site_rabi_inhom
    offset = offset - r.site_delta_inhom
    delta = Waveform(tuple((t, v - r.delta_offset) for t, v in prog.delta.knots))
    return replace(
        prog,
        register=reg,
        delta=delta,
        site_rabi_scale=None if np.all(scale == 1) else tuple(scale),
        site_detuning_offset=None if not offset.any() else tuple(offset),
    )


def sample_filling(reg: Register, params: NoiseParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(true_filling, reported_pre_sequence)`` as 0/1 int arrays.

    Filled sites load with probability ``1 - eps_fill``; the reported image
    then misses a loaded atom with ``eps_det_fn`` and invents one on an empty
    trap with ``eps_det_fp``.
    """
    want = reg.filled
    n = len(want)
    u = rng.random((3, n))
    true = want & (u[0] >= params.eps_fill)
    reported = np.where(true, u[1] >= params.eps_det_fn, u[2] < params.eps_det_fp)
    return true.astype(np.int8), reported.astype(np.int8)


def confuse_bits(true_bits, params: NoiseParams, rng: np.random.Generator) -> np.ndarray:
    """Readout of Rydberg bits (1 = Rydberg) as presence bits (1 = atom present).

    Works on a single bitstring or any stacked array of them.
    """
    ryd = np.asarray(true_bits).astype(bool)
    u = rng.random(ryd.shape)
    present = np.where(ryd, u < params.eps_det_ryd, u >= params.eps_det_gnd)
    return present.astype(np.int8)


def readout_channel(params: NoiseParams) -> np.ndarray:
    """2x2 matrix M[present, rydberg] of the per-site readout probabilities."""
    g, r = params.eps_det_gnd, params.eps_det_ryd
    return np.array([[g, 1 - r], [1 - g, r]])


def confuse_distribution(p: Mapping[int, float], params: NoiseParams, n_sites: int) -> dict[int, float]:
    """Exact push-forward of a Rydberg-configuration distribution through the
    independent per-site readout channel.  Keys of the result are presence
    configurations in the same site-0-is-MSB integer encoding.
    """
    if n_sites > 24:
        raise ValueError("confuse_distribution supports at most 24 sites")
    dim = 1 << n_sites
    vec = np.zeros(dim)
    for c, q in p.items():
        vec[int(c)] += q
    m = readout_channel(params)
    t = vec.reshape((2,) * n_sites) if n_sites else vec
    for i in range(n_sites):
        t = np.moveaxis(np.tensordot(m, t, axes=([1], [i])), 0, i)
    out = t.reshape(dim)
    total = out.sum()
    if total > 0:
        out = out / total
    keep = np.flatnonzero(out > 0)
    return {int(k): float(out[k]) for k in keep}
