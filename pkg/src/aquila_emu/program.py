"""Analog programs: atom register, control waveforms and hardware validation.

Units follow the device convention throughout: microseconds, micrometres,
radians and rad/us.  The hosted Braket service uses seconds, metres and rad/s,
so multiply times by 1e-6, distances by 1e-6 and frequencies by 1e6 when
converting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# absorbs float noise in geometry and slope comparisons
EPS = 1e-9
MIN_SEGMENT_WARN = 0.01


class DomainError(ValueError):
    """Raised when a waveform is evaluated outside of [0, duration]."""


@dataclass(frozen=True)
class Waveform:
    """Piecewise-linear waveform given by ``(time, value)`` knots."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        knots = tuple((float(t), float(v)) for t, v in self.knots)
        if len(knots) < 2:
            raise ValueError("a waveform needs at least 2 knots")
        times = [t for t, _ in knots]
        if times[0] != 0.0:
            raise ValueError("first knot must be at t=0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("knot times must be strictly increasing")
        if not all(math.isfinite(v) for _, v in knots):
            raise ValueError("knot values must be finite")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def from_arrays(cls, times: Sequence[float], values: Sequence[float]) -> "Waveform":
        return cls(tuple(zip(times, values)))

    @classmethod
    def constant(cls, value: float, duration: float) -> "Waveform":
        return cls(((0.0, value), (duration, value)))

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.knots])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.knots])

    @property
    def duration(self) -> float:
        return self.knots[-1][0]

    def slopes(self) -> np.ndarray:
        t, v = self.times, self.values
        return np.diff(v) / np.diff(t)

    def sample(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < -EPS) or np.any(t > self.duration + EPS):
            raise DomainError(f"time outside [0, {self.duration}]")
        return np.interp(t, self.times, self.values)

    def scaled(self, factor: float) -> "Waveform":
        return Waveform(tuple((t, factor * v) for t, v in self.knots))

    def shifted(self, offset: float) -> "Waveform":
        return Waveform(tuple((t, v + offset) for t, v in self.knots))


def value_at(w: Waveform, t: float) -> float:
    """Linearly interpolated waveform value at time ``t``."""
    if not (-EPS <= t <= w.duration + EPS):
        raise DomainError(f"t={t} outside [0, {w.duration}]")
    return float(np.interp(t, w.times, w.values))


@dataclass(frozen=True)
class PhaseWaveform:
    """Piecewise-constant phase on right-open segments ``[start_k, start_{k+1})``.

    The last segment is closed at ``duration``.  ``duration=None`` leaves the
    domain unbounded above; AnalogProgram always sets it.
    """

    segments: tuple[tuple[float, float], ...]
    duration: float | None = None

    def __post_init__(self):
        segs = tuple((float(t), float(v)) for t, v in self.segments)
        if not segs:
            raise ValueError("phase needs at least one segment")
        if segs[0][0] != 0.0:
            raise ValueError("first phase segment must start at t=0")
        starts = [t for t, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("phase segment starts must be strictly increasing")
        if self.duration is not None and starts[-1] > self.duration + EPS:
            raise ValueError("phase segment starts after the program ends")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, value: float = 0.0, duration: float | None = None) -> "PhaseWaveform":
        return cls(((0.0, value),), duration)

    @property
    def jump_times(self) -> list[float]:
        return [t for t, _ in self.segments[1:]]

    def with_duration(self, duration: float) -> "PhaseWaveform":
        return PhaseWaveform(self.segments, duration)


def phase_at(p: PhaseWaveform, t: float) -> float:
    """Phase of the segment containing ``t``."""
    upper = math.inf if p.duration is None else p.duration + EPS
    if not (-EPS <= t <= upper):
        raise DomainError(f"t={t} outside phase domain")
    value = p.segments[0][1]
    for start, v in p.segments:
        if t >= start:
            value = v
        else:
            break
    return value


@dataclass(frozen=True)
class Site:
    x: float
    y: float
    filled: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("site coordinates must be finite")
        if self.x < -EPS or self.y < -EPS:
            raise ValueError("site coordinates must be non-negative")


@dataclass(frozen=True)
class Register:
    """Ordered sites.  Site order fixes the bit order of every bitstring."""

    sites: tuple[Site, ...]

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))

    @classmethod
    def from_positions(cls, points: Iterable[Sequence[float]], filled: Iterable[bool] | None = None) -> "Register":
        points = [tuple(map(float, p)) for p in points]
        flags = [True] * len(points) if filled is None else [bool(f) for f in filled]
        return cls(tuple(Site(x, y, f) for (x, y), f in zip(points, flags)))

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.sites], dtype=float).reshape(-1, 2)

    @property
    def filled(self) -> np.ndarray:
        return np.array([s.filled for s in self.sites], dtype=bool)

    def subset(self, indices: Sequence[int]) -> "Register":
        return Register(tuple(self.sites[i] for i in indices))


@dataclass(frozen=True)
class AnalogProgram:
    """Register plus Rabi amplitude, detuning and phase over ``[0, duration]``.

    ``site_rabi_scale`` and ``site_detuning_offset`` are emulator-only local
    modulations (used by the noise model); user programs leave them ``None``.
    The effective drive on site i is ``site_rabi_scale[i] * omega(t)`` and the
    effective detuning is ``delta(t) + site_detuning_offset[i]``.
    """

    register: Register
    omega: Waveform
    delta: Waveform
    phase: PhaseWaveform = field(default_factory=PhaseWaveform.constant)
    duration: float | None = None
    site_rabi_scale: tuple[float, ...] | None = None
    site_detuning_offset: tuple[float, ...] | None = None

    def __post_init__(self):
        duration = self.omega.duration if self.duration is None else float(self.duration)
        for name, w in (("omega", self.omega), ("delta", self.delta)):
            if abs(w.duration - duration) > EPS:
                raise ValueError(f"{name} spans [0, {w.duration}] but duration is {duration}")
        object.__setattr__(self, "duration", duration)
        if self.phase.duration is None or abs(self.phase.duration - duration) > EPS:
            object.__setattr__(self, "phase", self.phase.with_duration(duration))
        n = len(self.register)
        for name in ("site_rabi_scale", "site_detuning_offset"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(float(v) for v in val)
                if len(val) != n:
                    raise ValueError(f"{name} must have one entry per site")
                object.__setattr__(self, name, val)

    def cut_times(self) -> list[float]:
        """Sorted times where the Hamiltonian changes form (knots and phase jumps)."""
        ts = {0.0, self.duration}
        ts.update(t for t, _ in self.omega.knots)
        ts.update(t for t, _ in self.delta.knots)
        ts.update(self.phase.jump_times)
        return sorted(ts)

    def with_register(self, register: Register) -> "AnalogProgram":
        return replace(self, register=register, site_rabi_scale=None, site_detuning_offset=None)


@dataclass(frozen=True)
class Capabilities:
    max_sites: int = 256
    max_qubits: int = 256
    max_width: float = 75.0
    max_height: float = 76.0
    min_site_distance: float = 4.0
    min_row_gap: float = 4.0
    max_rabi: float = 15.8
    max_rabi_slew: float = 250.0
    max_abs_detuning: float = 125.0
    max_duration: float = 4.0
    c6: float = 5_420_503.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"capability {name} must be positive")


AQUILA = Capabilities()
C6 = AQUILA.c6


@dataclass(frozen=True)
class Finding:
    rule: str
    message: str
    element: object = None


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[Finding, ...] = ()
    warnings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def rules(self) -> set[str]:
        return {f.rule for f in self.errors}

    def to_dict(self) -> dict:
        def enc(f):
            return {"rule": f.rule, "message": f.message, "element": _jsonable(f.element)}

        return {"ok": self.ok, "errors": [enc(f) for f in self.errors], "warnings": [enc(f) for f in self.warnings]}


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (tuple, list)):
        return [_jsonable(v) for v in x]
    return x


# rule ids, one per datasheet restriction plus the zero-endpoint rule
RULES = (
    "site_count",
    "qubit_count",
    "extent",
    "min_distance",
    "row_spacing",
    "rabi_max",
    "rabi_slew",
    "detuning_range",
    "duration",
    "rabi_endpoints",
)


def distinct_rows(ys: Iterable[float]) -> list[float]:
    rows: list[float] = []
    for y in sorted(ys):
        if not rows or y - rows[-1] > EPS:
            rows.append(y)
    return rows


def validate(prog: AnalogProgram, caps: Capabilities = AQUILA, relaxed: bool = False) -> ValidationReport:
    """Check a program against the device restrictions.

    ``relaxed`` emulates premium access: the duration limit and the pattern
    height limit are lifted.  Every other rule still applies.
    """
    errors: list[Finding] = []
    warnings: list[Finding] = []
    reg = prog.register
    pos = reg.positions

    if len(reg) > caps.max_sites:
        errors.append(Finding("site_count", f"{len(reg)} sites > {caps.max_sites}", len(reg)))
    n_filled = int(reg.filled.sum())
    if n_filled > caps.max_qubits:
        errors.append(Finding("qubit_count", f"{n_filled} filled sites > {caps.max_qubits}", n_filled))

    if len(reg):
        width = pos[:, 0].max() - pos[:, 0].min()
        height = pos[:, 1].max() - pos[:, 1].min()
        if width > caps.max_width + EPS:
            errors.append(Finding("extent", f"pattern width {width:.6g} um > {caps.max_width}", ("width", width)))
        if not relaxed and height > caps.max_height + EPS:
            errors.append(Finding("extent", f"pattern height {height:.6g} um > {caps.max_height}", ("height", height)))

    if len(reg) > 1:
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        iu = np.triu_indices(len(reg), 1)
        bad = dist[iu] < caps.min_site_distance - EPS
        for i, j in zip(iu[0][bad], iu[1][bad]):
            errors.append(
                Finding("min_distance", f"sites {i},{j} are {dist[i, j]:.6g} um apart", (int(i), int(j)))
            )

    rows = distinct_rows(pos[:, 1]) if len(reg) else []
    for a, b in zip(rows, rows[1:]):
        if b - a < caps.min_row_gap - EPS:
            errors.append(Finding("row_spacing", f"rows y={a:.6g} and y={b:.6g} closer than {caps.min_row_gap} um", (a, b)))

    om = prog.omega.values
    if om.max() > caps.max_rabi + EPS:
        errors.append(Finding("rabi_max", f"max Rabi {om.max():.6g} > {caps.max_rabi} rad/us", float(om.max())))
    if om.min() < 0:
        errors.append(Finding("rabi_max", f"negative Rabi amplitude {om.min():.6g}", float(om.min())))

    slopes = prog.omega.slopes()
    for k, s in enumerate(slopes):
        if abs(s) > caps.max_rabi_slew * (1 + EPS):
            errors.append(Finding("rabi_slew", f"Rabi slope {s:.6g} on segment {k} exceeds {caps.max_rabi_slew}", k))

    dmax = np.abs(prog.delta.values).max()
    if dmax > caps.max_abs_detuning + EPS:
        errors.append(Finding("detuning_range", f"|detuning| {dmax:.6g} > {caps.max_abs_detuning} rad/us", float(dmax)))

    if not relaxed and prog.duration > caps.max_duration + EPS:
        errors.append(Finding("duration", f"duration {prog.duration:.6g} > {caps.max_duration} us", prog.duration))

    if abs(om[0]) > EPS or abs(om[-1]) > EPS:
        errors.append(Finding("rabi_endpoints", "Rabi amplitude must start and end at 0", (float(om[0]), float(om[-1]))))

    for t in prog.phase.jump_times:
        if value_at(prog.omega, min(t, prog.duration)) > EPS:
            warnings.append(Finding("phase_jump_driven", f"phase jumps at t={t:.6g} while Rabi drive is on", t))
    for name, w in (("omega", prog.omega), ("delta", prog.delta)):
        short = np.flatnonzero(np.diff(w.times) < MIN_SEGMENT_WARN - EPS)
        for k in short:
            warnings.append(Finding("short_segment", f"{name} segment {k} shorter than {MIN_SEGMENT_WARN} us", (name, int(k))))

    return ValidationReport(tuple(errors), tuple(warnings))


def tile(sub: Register, nx: int, ny: int, dx: float, dy: float) -> Register:
    """``nx * ny`` translated copies of ``sub``; copy (i, j) is offset by (i*dx, j*dy)."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    sites = []
    for j in range(ny):
        for i in range(nx):
            for s in sub.sites:
                sites.append(Site(s.x + i * dx, s.y + j * dy, s.filled))
    return Register(tuple(sites))


def snap_to_rows(points: Sequence[Sequence[float]], min_row_gap: float = AQUILA.min_row_gap) -> Register:
    """Move points onto discrete rows by greedy clustering of their y values.

    A new row starts whenever the next y (ascending) is at least ``min_row_gap``
    above the anchor (first y) of the current row.  Points keep their x and
    their input order.
    """
    pts = [tuple(map(float, p)) for p in points]
    if not pts:
        raise ValueError("need at least one point")
    order = sorted(range(len(pts)), key=lambda k: pts[k][1])
    snapped = [0.0] * len(pts)
    anchor = None
    for k in order:
        y = pts[k][1]
        if anchor is None or y - anchor >= min_row_gap - EPS:
            anchor = y
        snapped[k] = anchor
    return Register.from_positions([(x, y) for (x, _), y in zip(pts, snapped)])


# --- JSON program files -----------------------------------------------------


def program_to_dict(prog: AnalogProgram) -> dict:
    d = {
        "register": [{"x": s.x, "y": s.y, "filled": s.filled} for s in prog.register.sites],
        "omega": [[t, v] for t, v in prog.omega.knots],
        "delta": [[t, v] for t, v in prog.delta.knots],
        "phase": [[t, v] for t, v in prog.phase.segments],
        "duration": prog.duration,
    }
    if prog.site_rabi_scale is not None:
        d["site_rabi_scale"] = list(prog.site_rabi_scale)
    if prog.site_detuning_offset is not None:
        d["site_detuning_offset"] = list(prog.site_detuning_offset)
    return d


def program_from_dict(d: dict) -> AnalogProgram:
    try:
        sites = tuple(Site(float(s["x"]), float(s["y"]), bool(s.get("filled", True))) for s in d["register"])
        duration = float(d["duration"])
        phase = d.get("phase") or [[0.0, 0.0]]
        return AnalogProgram(
            register=Register(sites),
            omega=Waveform(tuple(map(tuple, d["omega"]))),
            delta=Waveform(tuple(map(tuple, d["delta"]))),
            phase=PhaseWaveform(tuple(map(tuple, phase)), duration),
            duration=duration,
            site_rabi_scale=d.get("site_rabi_scale"),
            site_detuning_offset=d.get("site_detuning_offset"),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed program: {exc!r}") from exc


def load_program(path: str | Path) -> AnalogProgram:
    with open(path) as fh:
        return program_from_dict(json.load(fh))


def dump_program(prog: AnalogProgram, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(program_to_dict(prog), fh, indent=1)
        fh.write("\n")
