"""Measurement tasks: filling, noisy evolution, projective readout, shot records."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import __version__
from .engine import (
    FULL_CAP,
    BasisSet,
    IntegratorConfig,
    StateVector,
    build_basis,
    default_cutoff,
    evolve,
    sample_configs,
)
from .noise import NoiseParams, confuse_bits, draw_realization, perturb, sample_filling, shot_rng
from .program import AnalogProgram, Register, ValidationReport, program_from_dict, program_to_dict, validate

# above this many atoms "auto" switches to the blockade-truncated basis
AUTO_FULL_LIMIT = 12
_CACHE_SIZE = 32


class TaskRejected(ValueError):
    def __init__(self, report: ValidationReport):
        super().__init__("program failed validation: " + ", ".join(sorted(report.rules())))
        self.report = report


class ResultFormatError(ValueError):
    """Malformed result file; ``location`` points at the offending element."""

    def __init__(self, message: str, location: str):
        super().__init__(f"{location}: {message}")
        self.location = location


@dataclass(frozen=True)
class ShotRecord:
    pre_sequence: tuple[int, ...]
    post_sequence: tuple[int, ...]

    def __post_init__(self):
        pre = tuple(int(b) for b in self.pre_sequence)
        post = tuple(int(b) for b in self.post_sequence)
        if len(pre) != len(post):
            raise ValueError("pre and post sequences differ in length")
        if any(b not in (0, 1) for b in pre + post):
            raise ValueError("sequences must be 0/1")
        if any(p == 0 and q == 1 for p, q in zip(pre, post)):
            raise ValueError("an empty trap cannot report an atom after readout")
        object.__setattr__(self, "pre_sequence", pre)
        object.__setattr__(self, "post_sequence", post)


@dataclass(frozen=True)
class TaskResult:
    program: AnalogProgram
    noise: NoiseParams | None
    seed: int
    shots: tuple[ShotRecord, ...]
    metadata: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "shots", tuple(self.shots))
        if not self.shots:
            raise ValueError("a task result needs at least one shot")
        n = len(self.program.register)
        if any(len(s.pre_sequence) != n for s in self.shots):
            raise ValueError("shot length does not match the register")

    @property
    def pre(self) -> np.ndarray:
        return np.array([s.pre_sequence for s in self.shots], dtype=np.int8)

    @property
    def post(self) -> np.ndarray:
        return np.array([s.post_sequence for s in self.shots], dtype=np.int8)


def choose_basis(prog: AnalogProgram, mode: str = "auto") -> BasisSet:
    n = len(prog.register)
    if mode == "auto":
        mode = "full" if n <= AUTO_FULL_LIMIT else "truncated"
    if mode == "full" and n > FULL_CAP:
        raise ValueError(f"{n} atoms exceed the full-basis cap of {FULL_CAP}")
    cutoff = default_cutoff(prog) if mode == "truncated" else None
    return build_basis(prog.register, mode, cutoff=cutoff)


def restrict(prog: AnalogProgram, keep: np.ndarray) -> AnalogProgram:
    """The program acting on the sites listed in ``keep`` only."""
    idx = [int(i) for i in keep]
    reg = prog.register.subset(idx)

    def pick(vals):
        return None if vals is None else tuple(vals[i] for i in idx)

    return replace(prog, register=reg, site_rabi_scale=pick(prog.site_rabi_scale), site_detuning_offset=pick(prog.site_detuning_offset))


class _EvolutionCache:
    """Small LRU of final states keyed by the (perturbed) program."""

    def __init__(self, basis_mode: str, cfg: IntegratorConfig, size: int = _CACHE_SIZE):
        self.basis_mode, self.cfg, self.size = basis_mode, cfg, size
        self._store: OrderedDict[Any, tuple[StateVector, np.ndarray]] = OrderedDict()

    def final(self, prog: AnalogProgram) -> tuple[StateVector, np.ndarray]:
        key = prog
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        state = evolve(prog, choose_basis(prog, self.basis_mode), self.cfg)[0]
        p = np.abs(state.amplitudes) ** 2
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        self._store[key] = (state, cdf)
        if len(self._store) > self.size:
            self._store.popitem(last=False)
        return state, cdf


def _draw(state: StateVector, cdf: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Rydberg bits, shape (size, n_sites)."""
    k = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(cdf) - 1)
    configs = state.basis.states[k]
    n = state.basis.n_sites
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((configs[:, None] >> shifts) & 1).astype(np.int8)


def run_task(
    prog: AnalogProgram,
    nshots: int,
    noise: NoiseParams | None = None,
    seed: int = 0,
    relaxed: bool = False,
    basis_mode: str = "auto",
    cfg: IntegratorConfig = IntegratorConfig(),
    check: bool = True,
) -> TaskResult:
    """Emulate ``nshots`` repetitions of ``prog``.

    Each noisy shot loads the register, drops the atoms that failed to load,
    evolves the perturbed program, measures and passes the outcome through the
    readout channel.  With ``noise=None`` one noiseless evolution is sampled
    ``nshots`` times.  ``check=False`` skips validation (emulator-only
    programs such as rectangular pulses).
    """
    if nshots < 1:
        raise ValueError("nshots must be at least 1")
    if check:
        report = validate(prog, relaxed=relaxed)
        if not report.ok:
            raise TaskRejected(report)
    n = len(prog.register)
    filled = prog.register.filled
    cache = _EvolutionCache(basis_mode, cfg)
    records = []

    if noise is None:
        sites = np.flatnonzero(filled)
        pre = filled.astype(np.int8)
        post = np.zeros((nshots, n), dtype=np.int8)
        if len(sites):
            state, cdf = cache.final(restrict(prog, sites))
            bits = _draw(state, cdf, shot_rng(seed, 1), nshots)
            post[:, sites] = 1 - bits
        records = [ShotRecord(tuple(pre), tuple(row)) for row in post]
    else:
        for shot in range(nshots):
            rng = shot_rng(seed, 2, shot)
            true, reported = sample_filling(prog.register, noise, rng)
            sites = np.flatnonzero(true)
            post = np.zeros(n, dtype=np.int8)
            if len(sites):
                if noise.hamiltonian_free:
                    shot_prog = prog
                else:
                    shot_prog = perturb(prog, draw_realization(noise, seed, shot, prog.register))
                state, cdf = cache.final(restrict(shot_prog, sites))
                bits = _draw(state, cdf, rng, 1)[0]
                post[sites] = confuse_bits(bits, noise, rng)
            post &= reported
            records.append(ShotRecord(tuple(reported), tuple(post)))

    meta = {
        "version": __version__,
        "nshots": nshots,
        "basis_mode": basis_mode,
        "dt_max": cfg.dt_max,
        "tolerance": cfg.tolerance,
        "seed": int(seed),
    }
    return TaskResult(prog, noise, int(seed), tuple(records), meta)


def result_to_dict(result: TaskResult) -> dict:
    return {
        "program": program_to_dict(result.program),
        "noise": None if result.noise is None else result.noise.to_dict(),
        "seed": result.seed,
        "shots": [{"pre_sequence": list(s.pre_sequence), "post_sequence": list(s.post_sequence)} for s in result.shots],
        "metadata": result.metadata,
    }


def serialize(result: TaskResult) -> bytes:
    return (json.dumps(result_to_dict(result), sort_keys=True, separators=(",", ":")) + "\n").encode()


def _bits(value, where: str) -> tuple[int, ...]:
    if not isinstance(value, list):
        raise ResultFormatError("expected a list of bits", where)
    for k, b in enumerate(value):
        if isinstance(b, bool) or b not in (0, 1):
            raise ResultFormatError(f"bit must be 0 or 1, got {b!r}", f"{where}[{k}]")
    return tuple(value)


def deserialize(data: bytes | str) -> TaskResult:
    if isinstance(data, bytes):
        data = data.decode()
    try:
        d = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ResultFormatError(exc.msg, f"line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(d, dict):
        raise ResultFormatError("top level must be an object", "$")
    for key in ("program", "seed", "shots"):
        if key not in d:
            raise ResultFormatError(f"missing key {key!r}", "$")
    try:
        prog = program_from_dict(d["program"])
    except ValueError as exc:
        raise ResultFormatError(str(exc), "$.program") from exc
    noise = None
    if d.get("noise") is not None:
        try:
            noise = NoiseParams.from_dict(d["noise"])
        except (TypeError, ValueError) as exc:
            raise ResultFormatError(str(exc), "$.noise") from exc
    seed = d["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ResultFormatError("seed must be an integer", "$.seed")
    shots_in = d["shots"]
    if not isinstance(shots_in, list) or not shots_in:
        raise ResultFormatError("shots must be a non-empty list", "$.shots")
    n = len(prog.register)
    shots = []
    for k, s in enumerate(shots_in):
        where = f"$.shots[{k}]"
        if not isinstance(s, dict) or "pre_sequence" not in s or "post_sequence" not in s:
            raise ResultFormatError("shot needs pre_sequence and post_sequence", where)
        pre = _bits(s["pre_sequence"], where + ".pre_sequence")
        post = _bits(s["post_sequence"], where + ".post_sequence")
        if len(pre) != n or len(post) != n:
            raise ResultFormatError(f"expected {n} bits per sequence", where)
        try:
            shots.append(ShotRecord(pre, post))
        except ValueError as exc:
            raise ResultFormatError(str(exc), where) from exc
    meta = d.get("metadata") or {}
    if not isinstance(meta, dict):
        raise ResultFormatError("metadata must be an object", "$.metadata")
    return TaskResult(prog, noise, seed, tuple(shots), meta)


def load_result(path) -> TaskResult:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def dump_result(result: TaskResult, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(result))
