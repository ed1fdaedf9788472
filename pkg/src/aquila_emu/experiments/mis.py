"""Maximum independent set on unit-disk graphs: graph generation, greedy
repair and augmentation of measured bitstrings, an exact branch-and-bound
oracle and the detuning scan of the hybrid pipeline.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ..analysis import post_select
from ..engine import IntegratorConfig
from ..noise import NoiseParams
from ..program import Register
from ..sampler import TaskResult, run_task
from .protocols import AdiabaticParams, build_adiabatic

MIS_PARAMS = AdiabaticParams(omega_max=15.0, delta_i=-30.0, delta_f=40.0, t_ramp_omega=0.5, t_sweep=3.0, t_total=4.0)
EXACT_LIMIT = 40
# sampling a scan only needs ~1e-6 amplitudes; 10x coarser steps than the engine default
SCAN_CONFIG = IntegratorConfig(dt_max=1e-2)


@dataclass(frozen=True)
class UnitDiskGraph:
    positions: tuple[tuple[float, float], ...]
    radius: float

    def __post_init__(self):
        pos = tuple((float(x), float(y)) for x, y in self.positions)
        object.__setattr__(self, "positions", pos)
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        n = len(pos)
        adj = np.zeros((n, n), dtype=bool)
        if n > 1:
            adj = squareform(pdist(np.array(pos)) < self.radius)
        np.fill_diagonal(adj, False)
        object.__setattr__(self, "_adj", adj)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def adjacency(self) -> np.ndarray:
        return self._adj

    @property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self._adj, 1))
        return list(zip(i.tolist(), j.tolist()))

    def neighbors(self, v: int) -> np.ndarray:
        return np.flatnonzero(self._adj[v])

    def is_independent(self, vertices) -> bool:
        idx = np.fromiter(vertices, dtype=int)
        return not self._adj[np.ix_(idx, idx)].any()

    def is_maximal(self, vertices) -> bool:
        chosen = np.zeros(self.n, dtype=bool)
        chosen[list(vertices)] = True
        if not self.is_independent(np.flatnonzero(chosen)):
            return False
        covered = chosen | self._adj[:, chosen].any(axis=1)
        return bool(covered.all())

    def register(self) -> Register:
        pos = np.array(self.positions).reshape(-1, 2)
        pos = pos - pos.min(axis=0) if len(pos) else pos
        return Register.from_positions(pos)

    def to_dict(self) -> dict:
        return {"positions": [list(p) for p in self.positions], "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "UnitDiskGraph":
        return cls(tuple(tuple(p) for p in d["positions"]), float(d["radius"]))

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "UnitDiskGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def kings_graph(n: int, m: int, pitch: float = 5.0, dropout: float = 0.3, seed: int = 0, radius: float | None = None) -> UnitDiskGraph:
    """``n x m`` square grid at ``pitch`` with each vertex dropped independently.

    The default radius pitch*sqrt(2)*1.01 links diagonal neighbours and no
    pair at distance 2*pitch.
    """
    if not 0 <= dropout <= 1:
        raise ValueError("dropout must be a probability")
    rng = np.random.default_rng(seed)
    keep = rng.random(n * m) >= dropout
    pts = [(i * pitch, j * pitch) for j in range(m) for i in range(n)]
    pos = tuple(p for p, k in zip(pts, keep) if k)
    return UnitDiskGraph(pos, pitch * math.sqrt(2) * 1.01 if radius is None else radius)


def greedy_remove_violations(bits, g: UnitDiskGraph, rng: np.random.Generator, strategy: str = "max_degree") -> frozenset[int]:
    """Drop vertices from the measured set until it is independent.

    ``max_degree`` removes a vertex of largest degree inside the violating
    induced subgraph (ties broken at random); ``random`` removes a random
    vertex that has a selected neighbour.
    """
    sel = np.asarray(bits).astype(bool).copy()
    if sel.shape != (g.n,):
        raise ValueError("one bit per vertex expected")
    adj = g.adjacency
    while True:
        deg = (adj[:, sel].sum(axis=1)) * sel
        if not deg.any():
            break
        if strategy == "max_degree":
            cand = np.flatnonzero(deg == deg.max())
        elif strategy == "random":
            cand = np.flatnonzero(deg > 0)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        sel[rng.choice(cand)] = False
    return frozenset(np.flatnonzero(sel).tolist())


def greedy_augment(independent, g: UnitDiskGraph, rng: np.random.Generator) -> frozenset[int]:
    """Add vertices in random order whenever no neighbour is selected."""
    sel = np.zeros(g.n, dtype=bool)
    sel[list(independent)] = True
    adj = g.adjacency
    for v in rng.permutation(g.n):
        if not sel[v] and not (adj[v] & sel).any():
            sel[v] = True
    return frozenset(np.flatnonzero(sel).tolist())


def exact_mis(g: UnitDiskGraph) -> tuple[int, frozenset[int]]:
    """Maximum independent set by branch and bound on bitmasks.

    Vertices of degree <= 1 are taken greedily (always safe); otherwise the
    search branches on a vertex of maximum degree, pruning with the size of
    the remaining vertex set and starting from a greedy lower bound.
    """
    n = g.n
    if n > EXACT_LIMIT:
        raise ValueError(f"exact MIS supports at most {EXACT_LIMIT} vertices")
    nbr = [sum(1 << int(u) for u in g.neighbors(v)) for v in range(n)]

    # greedy lower bound: repeatedly take a minimum-degree vertex
    rest, greedy = (1 << n) - 1, 0
    while rest:
        v = min(_bits(rest), key=lambda u: (nbr[u] & rest).bit_count())
        greedy |= 1 << v
        rest &= ~(nbr[v] | (1 << v))
    best = [greedy.bit_count(), greedy]

    def search(rest: int, chosen: int):
        while True:
            if chosen.bit_count() + rest.bit_count() <= best[0]:
                return
            if not rest:
                break
            forced = None
            top, top_deg = -1, -1
            for v in _bits(rest):
                d = (nbr[v] & rest).bit_count()
                if d <= 1:
                    forced = v
                    break
                if d > top_deg:
                    top, top_deg = v, d
            if forced is None:
                break
            chosen |= 1 << forced
            rest &= ~(nbr[forced] | (1 << forced))
        if not rest:
            if chosen.bit_count() > best[0]:
                best[0], best[1] = chosen.bit_count(), chosen
            return
        search(rest & ~(nbr[top] | (1 << top)), chosen | (1 << top))
        search(rest & ~(1 << top), chosen)

    search((1 << n) - 1, 0)
    witness = frozenset(_bits(best[1]))
    if not g.is_independent(witness):
        raise AssertionError("exact MIS witness is not independent")
    return best[0], witness


def _bits(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


@dataclass
class MisReport:
    rydberg_count: np.ndarray
    repaired_size: np.ndarray
    maximal_size: np.ndarray
    best_set: frozenset[int]
    delta_f: float | None = None
    exact_mis: int | None = None
    n_shots_raw: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def avg_rydberg(self) -> float:
        return float(np.mean(self.rydberg_count))

    @property
    def avg_repaired(self) -> float:
        return float(np.mean(self.repaired_size))

    @property
    def avg_maximal(self) -> float:
        return float(np.mean(self.maximal_size))

    @property
    def best(self) -> int:
        return len(self.best_set)

    def row(self) -> dict:
        return {
            "delta_f": "" if self.delta_f is None else self.delta_f,
            "avg_rydberg": self.avg_rydberg,
            "avg_repaired": self.avg_repaired,
            "avg_maximal": self.avg_maximal,
            "best": self.best,
            "exact_mis_if_known": "" if self.exact_mis is None else self.exact_mis,
        }


REPORT_FIELDS = ("delta_f", "avg_rydberg", "avg_repaired", "avg_maximal", "best", "exact_mis_if_known")


def write_reports_csv(reports: Sequence[MisReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def postprocess(
    rydberg_bits: np.ndarray,
    g: UnitDiskGraph,
    rng: np.random.Generator,
    rounds: int = 1,
    strategy: str = "max_degree",
    keep_sets: bool = False,
) -> MisReport:
    """Repair and augment every measured bitstring ``rounds`` times.

    With ``keep_sets`` the repaired and augmented sets are stored in
    ``extra["repaired_sets"]`` and ``extra["maximal_sets"]``.
    """
    bits = np.atleast_2d(np.asarray(rydberg_bits, dtype=np.int8))
    ryd, rep, mx = [], [], []
    fixed_sets, full_sets = [], []
    best: frozenset[int] = frozenset()
    for row in bits:
        for _ in range(rounds):
            fixed = greedy_remove_violations(row, g, rng, strategy)
            full = greedy_augment(fixed, g, rng)
            ryd.append(int(row.sum()))
            rep.append(len(fixed))
            mx.append(len(full))
            if keep_sets:
                fixed_sets.append(fixed)
                full_sets.append(full)
            if len(full) > len(best):
                best = full
    extra = {"repaired_sets": fixed_sets, "maximal_sets": full_sets} if keep_sets else {}
    return MisReport(np.array(ryd), np.array(rep), np.array(mx), best, extra=extra)


def hybrid_report(
    result: TaskResult, g: UnitDiskGraph, rng: np.random.Generator, rounds: int = 1, strategy: str = "max_degree", keep_sets: bool = False
) -> MisReport:
    kept = post_select(result)
    report = postprocess(1 - kept.post, g, rng, rounds, strategy, keep_sets)
    report.n_shots_raw = len(result.shots)
    return report


def mis_program(g: UnitDiskGraph, delta_f: float, params: AdiabaticParams = MIS_PARAMS):
    return build_adiabatic(params.omega_max, params.delta_i, delta_f, params.t_ramp_omega, params.t_sweep, params.t_total, g.register())


def _sub_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def detuning_scan(
    g: UnitDiskGraph,
    delta_f_grid: Sequence[float],
    shots: int,
    noise: NoiseParams | None = None,
    seed: int = 0,
    rounds: int = 1,
    params: AdiabaticParams = MIS_PARAMS,
    exact: bool | None = None,
    cfg: IntegratorConfig = SCAN_CONFIG,
    basis_mode: str = "truncated",
) -> list[MisReport]:
    """Hybrid pipeline at each final detuning: sweep, sample, post-select, repair, augment."""
    if g.n == 0:
        raise ValueError("graph has no vertices")
    known = None
    if exact or (exact is None and g.n <= EXACT_LIMIT):
        known = exact_mis(g)[0]
    reports = []
    for k, df in enumerate(delta_f_grid):
        prog = mis_program(g, float(df), params)
        result = run_task(prog, shots, noise, _sub_seed(seed, k, 0), basis_mode=basis_mode, cfg=cfg)
        rep = hybrid_report(result, g, np.random.default_rng([seed, k, 1]), rounds)
        rep.delta_f = float(df)
        rep.exact_mis = known
        reports.append(rep)
    return reports


def classical_baseline(g: UnitDiskGraph, shots: int, rng: np.random.Generator, rounds: int = 1, strategy: str = "max_degree") -> MisReport:
    """The same post-processing applied to the all-zeros bitstring."""
    return postprocess(np.zeros((shots, g.n), dtype=np.int8), g, rng, rounds, strategy)


def performance_ratio(hybrid: MisReport, classical: MisReport) -> float:
    denom = classical.avg_maximal
    if denom == 0:
        raise ValueError("classical baseline found no vertices; ratio undefined")
    return hybrid.avg_maximal / denom
