"""Estimators on shot records: post-selection, densities, bitstring
frequencies, damped-sinusoid fits and connected correlations.

Readout convention: ``post_sequence`` bit 1 means an atom was seen (ground
state), so the Rydberg occupation of a site is ``n_i = 1 - post_i``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .program import Register
from .sampler import ShotRecord, TaskResult


class EmptySelectionError(ValueError):
    """No shots left to estimate from."""


class FitError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientDataError(ValueError):
    pass


class NotALatticeError(ValueError):
    pass


def _arrays(shots) -> tuple[np.ndarray, np.ndarray]:
    """(pre, post) int arrays of shape (n_shots, n_sites)."""
    if isinstance(shots, TaskResult):
        return shots.pre, shots.post
    if isinstance(shots, tuple) and len(shots) == 2 and isinstance(shots[0], np.ndarray):
        return shots
    shots = list(shots)
    if not shots:
        raise EmptySelectionError("no shots")
    pre = np.array([s.pre_sequence for s in shots], dtype=np.int8)
    post = np.array([s.post_sequence for s in shots], dtype=np.int8)
    return pre, post


def records_from_bits(rydberg_bits) -> list[ShotRecord]:
    """Fully filled shot records from an array of Rydberg bits (1 = Rydberg)."""
    b = np.atleast_2d(np.asarray(rydberg_bits, dtype=np.int8))
    ones = (1,) * b.shape[1]
    return [ShotRecord(ones, tuple(1 - row)) for row in b]


def post_select(result: TaskResult) -> TaskResult:
    """Keep the shots whose reported filling matches every user-filled site."""
    want = result.program.register.filled
    pre = result.pre
    keep = np.all(pre[:, want] == 1, axis=1)
    if not keep.any():
        raise EmptySelectionError(f"none of {len(pre)} shots is fully filled")
    return replace(result, shots=tuple(s for s, k in zip(result.shots, keep) if k))


def occupations(shots, sites: Sequence[int] | None = None) -> np.ndarray:
    """Rydberg occupations of the shots fully loaded on ``sites``."""
    pre, post = _arrays(shots)
    cols = np.arange(pre.shape[1]) if sites is None else np.asarray(sites)
    ok = np.all(pre[:, cols] == 1, axis=1)
    if not ok.any():
        raise EmptySelectionError("no fully filled shots on the requested sites")
    return (1 - post[np.ix_(ok, cols)]).astype(float)


def rydberg_fraction(shots, site: int | None = None) -> float:
    """Fraction of loaded atoms that came back missing (read as Rydberg)."""
    pre, post = _arrays(shots)
    if len(pre) == 0:
        raise EmptySelectionError("no shots")
    if site is not None:
        pre, post = pre[:, [site]], post[:, [site]]
    loaded = pre == 1
    total = loaded.sum()
    if total == 0:
        raise EmptySelectionError("no loaded atoms")
    return float(((post == 0) & loaded).sum() / total)


def density_map(shots, register: Register | None = None) -> np.ndarray:
    pre, _ = _arrays(shots)
    n = pre.shape[1]
    if register is not None and len(register) != n:
        raise ValueError("register does not match the shots")
    return np.array([rydberg_fraction(shots, i) for i in range(n)])


def bitstring_probability(shots, target: Sequence[int]) -> tuple[float, float]:
    """Frequency of the presence bitstring ``target`` and its binomial error."""
    _, post = _arrays(shots)
    m = len(post)
    if m == 0:
        raise EmptySelectionError("no shots")
    hits = int(np.all(post == np.asarray(target), axis=1).sum())
    return binomial(hits, m)


def binomial(hits: int, n: int) -> tuple[float, float]:
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)


@dataclass(frozen=True)
class FitResult:
    A: float
    Omega: float
    phi: float
    tau: float
    B: float
    residual_rms: float

    def model(self, t) -> np.ndarray:
        return damped_sinusoid(np.asarray(t, dtype=float), self.A, self.Omega, self.phi, self.tau, self.B)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("A", "Omega", "phi", "tau", "B", "residual_rms")}


def damped_sinusoid(t, A, Omega, phi, tau, B):
    decay = 1.0 if math.isinf(tau) else np.exp(-np.asarray(t) / tau)
    return A * np.sin(Omega * np.asarray(t) + phi) * decay + B


def _fft_frequency(t: np.ndarray, z: np.ndarray) -> float:
    """Angular frequency of the strongest Fourier component (zero-padded, parabolic peak)."""
    m = max(len(t), 64)
    grid = np.linspace(t[0], t[-1], m)
    y = np.interp(grid, t, z)
    y = (y - y.mean()) * np.hanning(m)
    pad = 16 * m
    spec = np.abs(np.fft.rfft(y, pad))
    spec[0] = 0
    k = int(np.argmax(spec))
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        if denom != 0:
            k = k + 0.5 * (a - c) / denom
    dt = grid[1] - grid[0]
    return 2 * math.pi * k / (pad * dt)


def fit_damped_sinusoid(t, z) -> FitResult:
    """Least-squares fit of ``A sin(Omega t + phi) exp(-t/tau) + B``.

    The frequency is seeded from the Fourier peak, amplitude and phase from a
    linear fit at that frequency; the five parameters are then refined by a
    trust-region Gauss-Newton iteration on (A, Omega, phi, 1/tau, B) with
    ``1/tau >= 0``.  ``tau = inf`` means no measurable decay.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    if t.shape != z.shape or t.ndim != 1:
        raise ValueError("t and z must be 1D arrays of equal length")
    order = np.argsort(t)
    t, z = t[order], z[order]
    span = t[-1] - t[0] if len(t) else 0.0
    diag = {"n_points": len(t), "span": span, "z_std": float(np.std(z)) if len(z) else 0.0}
    if len(t) < 8:
        raise FitError("need at least 8 points", diag)
    if span <= 0 or not np.std(z) > 1e-12 * max(1.0, np.abs(z).max()):
        raise FitError("flat or degenerate data", diag)

    w0 = _fft_frequency(t, z)
    if w0 * span < 2 * math.pi * 0.9:
        diag["omega_seed"] = w0
        raise FitError("data span less than one oscillation period", diag)
    basis = np.column_stack([np.sin(w0 * t), np.cos(w0 * t), np.ones_like(t)])
    (s, c, b0), *_ = np.linalg.lstsq(basis, z, rcond=None)
    a0, p0 = math.hypot(s, c), math.atan2(c, s)

    def resid(x):
        a, w, p, g, b = x
        return a * np.sin(w * t + p) * np.exp(-g * t) + b - z

    def jac(x):
        a, w, p, g, b = x
        e = np.exp(-g * t)
        sn, cs = np.sin(w * t + p), np.cos(w * t + p)
        return np.column_stack([sn * e, a * t * cs * e, a * cs * e, -a * t * sn * e, np.ones_like(t)])

    best = None
    for g0 in (0.0, 1.0 / span):
        x0 = np.array([a0, w0, p0, g0, b0])
        sol = least_squares(
            resid,
            x0,
            jac=jac,
            bounds=([-np.inf, 0, -np.inf, 0, -np.inf], np.inf),
            method="trf",
            ftol=1e-15,
            xtol=1e-15,
            gtol=1e-15,
            max_nfev=500,
            x_scale="jac",
        )
        if best is None or sol.cost < best.cost:
            best = sol
    if not np.all(np.isfinite(best.x)):
        raise FitError("fit diverged", diag)
    jt = best.jac
    if np.linalg.matrix_rank(jt) < 5:
        diag["cost"] = float(best.cost)
        raise FitError("rank-deficient fit", diag)
    a, w, p, g, b = best.x
    if w * span < 2 * math.pi * 0.9:
        diag["omega"] = float(w)
        raise FitError("data span less than one oscillation period", diag)
    if a < 0:
        a, p = -a, p + math.pi
    p = (p + math.pi) % (2 * math.pi) - math.pi
    tau = math.inf if g <= 0 else float(1.0 / g)
    rms = float(np.sqrt(np.mean(best.fun**2)))
    return FitResult(float(a), float(w), float(p), tau, float(b), rms)


@dataclass(frozen=True)
class CorrelationResult:
    values: np.ndarray | dict
    correlation_length: float
    fit_residual: float
    separations: tuple = ()
    profile: tuple = ()


def _connected(n: np.ndarray) -> np.ndarray:
    if len(n) < 2:
        raise EmptySelectionError("need at least 2 shots for a correlation")
    p = n.mean(axis=0)
    c = (n.T @ n) / len(n) - np.outer(p, p)
    c = 0.5 * (c + c.T)
    # exact identity for 0/1 variables
    np.fill_diagonal(c, p * (1 - p))
    return c


def connected_correlation_1d(shots, order: Sequence[int] | None = None) -> np.ndarray:
    """C_ij = <n_i n_j> - <n_i><n_j> over fully loaded shots, sites in chain order."""
    return _connected(occupations(shots, order))


def correlation_stderr(shots, order: Sequence[int] | None = None) -> np.ndarray:
    """Standard error of each C_ij from the spread of (n_i - p_i)(n_j - p_j)."""
    n = occupations(shots, order)
    m = len(n)
    if m < 2:
        raise EmptySelectionError("need at least 2 shots")
    d = n - n.mean(axis=0)
    prod = d[:, :, None] * d[:, None, :]
    return prod.std(axis=0, ddof=1) / math.sqrt(m)


def exact_correlation(dist: Mapping[int, float], n_sites: int) -> np.ndarray:
    """Connected correlation from a configuration distribution (1 = Rydberg)."""
    configs = np.fromiter(dist.keys(), dtype=np.int64)
    probs = np.fromiter(dist.values(), dtype=float)
    probs = probs / probs.sum()
    shifts = np.arange(n_sites - 1, -1, -1)
    occ = ((configs[:, None] >> shifts) & 1).astype(float)
    p = probs @ occ
    c = occ.T @ (probs[:, None] * occ) - np.outer(p, p)
    return 0.5 * (c + c.T)


def distance_profile(c: np.ndarray, stderr: np.ndarray | None = None):
    """Mean |C_ij| at each chain separation d >= 1 and its standard error."""
    c = np.asarray(c, dtype=float)
    n = len(c)
    ds, means, errs = [], [], []
    for d in range(1, n):
        vals = np.abs(np.diagonal(c, d))
        ds.append(d)
        means.append(vals.mean())
        if stderr is None:
            errs.append(0.0)
        else:
            errs.append(float(np.sqrt(np.sum(np.diagonal(stderr, d) ** 2)) / len(vals)))
    return np.array(ds), np.array(means), np.array(errs)


def fit_correlation_length(c: np.ndarray, stderr: np.ndarray | None = None) -> CorrelationResult:
    """lambda from a straight-line fit of log mean|C(d)| against d.

    Separations whose mean falls below three standard errors (when
    ``stderr`` is given) or is exactly zero are excluded.  A non-negative
    slope gives ``lambda = inf``.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("C must be a square matrix")
    if len(c) < 5:
        raise InsufficientDataError("need at least 4 distinct separations")
    ds, means, errs = distance_profile(c, stderr)
    use = (means > 3 * errs) & (means > 0)
    if use.sum() < 3:
        raise InsufficientDataError(f"only {int(use.sum())} separations above the noise floor")
    x, y = ds[use], np.log(means[use])
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((icpt + slope * x - y) ** 2)))
    if slope >= -1e-12 * max(1.0, abs(icpt)):
        lam = math.inf
    else:
        lam = -1.0 / slope
    return CorrelationResult(c, lam, resid, tuple(int(d) for d in x), tuple(float(m) for m in means[use]))


def lattice_coords(register: Register | np.ndarray, pitch: float | None = None, tol: float = 1e-6) -> np.ndarray:
    """Integer (column, row) coordinates of sites on a rectangular lattice."""
    pos = register.positions if isinstance(register, Register) else np.asarray(register, dtype=float)
    if pitch is None:
        pitch = _guess_pitch(pos)
    q = (pos - pos.min(axis=0)) / pitch
    k = np.rint(q)
    if np.abs(q - k).max() > tol * max(1.0, np.abs(q).max()):
        raise NotALatticeError("sites are not on a rectangular lattice")
    return k.astype(int)


def _guess_pitch(pos: np.ndarray) -> float:
    from scipy.spatial.distance import pdist

    d = pdist(pos)
    if len(d) == 0 or d.min() <= 0:
        raise NotALatticeError("cannot infer a lattice pitch")
    return float(d.min())


def connected_correlation_2d(shots, coords) -> dict[tuple[int, int], float]:
    """G2(k, l): connected correlation averaged over all site pairs displaced by (k, l).

    ``coords`` are integer lattice coordinates, one (k, l) pair per site, or a
    register on a rectangular lattice.
    """
    if isinstance(coords, Register):
        coords = lattice_coords(coords)
    coords = np.asarray(coords)
    if coords.dtype.kind not in "iu":
        k = np.rint(coords)
        if np.abs(coords - k).max() > 1e-9:
            raise NotALatticeError("lattice coordinates must be integers")
        coords = k.astype(int)
    n = occupations(shots)
    if n.shape[1] != len(coords):
        raise ValueError("coordinates do not match the shots")
    c = _connected(n)
    disp = coords[None, :, :] - coords[:, None, :]
    sums: dict[tuple[int, int], float] = {}
    counts: dict[tuple[int, int], int] = {}
    for i in range(len(coords)):
        for j in range(len(coords)):
            key = (int(disp[i, j, 0]), int(disp[i, j, 1]))
            sums[key] = sums.get(key, 0.0) + c[i, j]
            counts[key] = counts.get(key, 0) + 1
    return {k: sums[k] / counts[k] for k in sorted(sums)}


def write_matrix_csv(c: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(range(len(c))))
        for i, row in enumerate(c):
            w.writerow([i] + [repr(float(v)) for v in row])


def write_rows_csv(rows: Sequence[Mapping], path: str | Path) -> None:
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [])
        w.writeheader()
        w.writerows(rows)


def write_keyvalue_csv(d: Mapping, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for k, v in d.items():
            w.writerow([k, v])


ANALYSES = ("density", "correlation1d", "correlation2d", "fit", "probability")


@dataclass(frozen=True)
class Product:
    """An analysis output that can be written as CSV or JSON."""

    kind: str
    header: tuple[str, ...]
    rows: tuple[tuple, ...]
    extra: dict

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])

    def to_json(self) -> dict:
        return {"kind": self.kind, "header": list(self.header), "rows": [list(r) for r in self.rows], **self.extra}


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def analysis_product(
    kind: str,
    results: Sequence[TaskResult],
    target: Sequence[int] | None = None,
    pitch: float | None = None,
    postselect: bool = True,
    times: Sequence[float] | None = None,
) -> Product:
    """Shared implementation of the command-line analyses.

    ``fit`` treats each result as one point of a time series (time = program
    duration unless ``times`` is given, value = Rydberg fraction); the other
    analyses use the first result only.
    """
    if kind not in ANALYSES:
        raise ValueError(f"unknown analysis {kind!r}")
    results = [post_select(r) if postselect else r for r in results]
    if kind == "fit":
        t = [r.program.duration for r in results] if times is None else list(times)
        if len(t) != len(results):
            raise ValueError("one time per result expected")
        z = [rydberg_fraction(r) for r in results]
        fit = fit_damped_sinusoid(t, z)
        d = fit.as_dict()
        return Product(kind, ("key", "value"), tuple((k, v) for k, v in d.items()), {"fit": d})
    res = results[0]
    if kind == "density":
        dens = density_map(res, res.program.register)
        pos = res.program.register.positions
        rows = tuple((i, pos[i, 0], pos[i, 1], dens[i]) for i in range(len(dens)))
        return Product(kind, ("site", "x", "y", "rydberg_density"), rows, {})
    if kind == "probability":
        if target is None:
            raise ValueError("probability needs a target presence bitstring")
        if len(target) != len(res.program.register):
            raise ValueError("target length does not match the register")
        p, se = bitstring_probability(res, target)
        bits = "".join(str(int(b)) for b in target)
        return Product(kind, ("target", "probability", "stderr", "shots"), ((bits, p, se, len(res.shots)),), {})
    if kind == "correlation1d":
        c = connected_correlation_1d(res)
        try:
            lam = fit_correlation_length(c, correlation_stderr(res)).correlation_length
        except InsufficientDataError:
            lam = math.nan
        header = ("i",) + tuple(str(j) for j in range(len(c)))
        rows = tuple((i,) + tuple(float(v) for v in c[i]) for i in range(len(c)))
        return Product(kind, header, rows, {"correlation_length": lam})
    coords = lattice_coords(res.program.register, pitch)
    g2 = connected_correlation_2d(res, coords)
    rows = tuple((k, l, v) for (k, l), v in g2.items())
    return Product(kind, ("k", "l", "G2"), rows, {})
