"""End-to-end desk-scale versions of the five example experiments.

Every suite writes its programs, results and analysis tables into one
directory.  Results come from :func:`run_task` and tables from
:func:`analysis_product` or :func:`trajectory_product`, the same code paths
as the ``run``, ``analyze`` and ``trajectory`` commands, so the bundle can be
regenerated file by file from the command line.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from ..analysis import (
    FitError,
    InsufficientDataError,
    Product,
    analysis_product,
    exact_correlation,
    fit_correlation_length,
    fit_damped_sinusoid,
    post_select,
    rydberg_fraction,
)
from ..engine import IntegratorConfig, StateVector, build_basis, evolve, outcome_distribution, rydberg_density
from ..noise import NoiseParams
from ..program import AnalogProgram, dump_program
from ..sampler import choose_basis, dump_result, run_task
from . import mis, protocols

DEFAULT_SEED = 1234
VARIANTS = {
    1: ("rabi", "offresonant", "ramsey", "echo", "floquet"),
    2: ("sqrtn", "crossover", "lp"),
    3: ("chain", "square"),
    4: ("quench", "prep"),
    5: ("kings",),
}


def initial_state(kind: str, basis) -> StateVector | None:
    if kind == "ground":
        return None
    if kind == "neel":
        return protocols.neel_state(basis, True)
    if kind == "neel-odd":
        return protocols.neel_state(basis, False)
    raise ValueError(f"unknown initial state {kind!r}")


def trajectory_product(
    prog: AnalogProgram,
    times: Sequence[float],
    initial: str = "ground",
    basis_mode: str = "auto",
    cfg: IntegratorConfig = IntegratorConfig(),
) -> Product:
    """Noiseless observables along the evolution: all-ground and Neel
    probabilities and per-site Rydberg densities."""
    basis = choose_basis(prog, basis_mode)
    n = basis.n_sites
    states = evolve(prog, basis, cfg, sample_times=times, initial=initial_state(initial, basis))
    neel_a, neel_b = protocols.neel_configs(n)
    rows = []
    for t, s in zip(times, states):
        dens = rydberg_density(s)
        rows.append((float(t), s.probability(0), s.probability(neel_a), s.probability(neel_b), *map(float, dens)))
    header = ("t", "p_all_ground", "p_neel", "p_neel_odd") + tuple(f"n{i}" for i in range(n))
    return Product("trajectory", header, tuple(rows), {})


def _write(product: Product, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        product.write_csv(fh)


def _rows_csv(header, rows, path: Path) -> None:
    _write(Product("table", tuple(header), tuple(tuple(r) for r in rows), {}), path)


def _task(prog, shots, noise, seed, out: Path, name: str, relaxed=False, cfg=IntegratorConfig(), basis_mode="auto"):
    dump_program(prog, out / f"{name}_program.json")
    result = run_task(prog, shots, noise, seed, relaxed=relaxed, cfg=cfg, basis_mode=basis_mode)
    dump_result(result, out / f"{name}_result.json")
    return result


def _fit_row(t, z):
    try:
        return fit_damped_sinusoid(t, z).as_dict()
    except FitError as exc:
        return {"error": str(exc)}


def example_1(variant, out, shots, seed, noise):
    by_duration = variant in ("rabi", "offresonant", "floquet")
    if by_duration:
        xs = np.round(0.12 + 0.05 * np.arange(37), 10)
    else:
        # two holds plus the pulses must fit in 4 us for the echo; same grid
        # as the command-line time list "0:1.6:21"
        xs = np.linspace(0.0, 1.6, 21)
    results = []
    for k, x in enumerate(xs):
        if variant == "rabi":
            prog = protocols.build_rabi(15.0, 0.0, x)
        elif variant == "offresonant":
            prog = protocols.build_rabi(15.0, 15.0, x)
        elif variant == "floquet":
            prog = protocols.build_floquet(15.0, 15.0, 15.0, x)
        elif variant == "ramsey":
            prog = protocols.build_ramsey(x, delta=5.0)
        else:
            prog = protocols.build_spin_echo(x)
        results.append(_task(prog, shots, noise, seed, out, f"point{k:02d}"))
    z = [rydberg_fraction(post_select(r)) for r in results]
    _rows_csv(("x", "rydberg_fraction"), zip(map(float, xs), z), out / "series.csv")
    try:
        # durations are read back from the programs so that the analyze
        # subcommand reproduces this table from the result files
        fit = analysis_product("fit", results, times=None if by_duration else list(map(float, xs)))
        _write(fit, out / "fit.csv")
        summary = {"fit": fit.extra["fit"]}
    except FitError as exc:
        summary = {"fit": {"error": str(exc)}}
    summary["x"] = "duration" if by_duration else "hold"
    if not by_duration:
        summary["fit_times"] = "0:1.6:21"
    return summary


def example_2(variant, out, shots, seed, noise):
    if variant == "sqrtn":
        rows = []
        for n, omega, T in ((1, 15.0, 1.0), (2, 15.0, 1.0), (3, 15.0, 1.0), (4, 15.0, 1.0), (7, 5.0, 3.0)):
            prog = protocols.rectangular_pulse(omega, 0.0, T, protocols.collective_rabi_register(n))
            dump_program(prog, out / f"n{n}_program.json")
            times = np.linspace(0.0, T, 301)
            traj = trajectory_product(prog, times)
            _write(traj, out / f"n{n}_trajectory.csv")
            z = 1 - np.array([r[1] for r in traj.rows])
            fit = fit_damped_sinusoid(times, z)
            expected = math.sqrt(n) * omega
            rows.append((n, omega, fit.Omega, expected, fit.Omega / expected - 1))
        _rows_csv(("n_atoms", "omega", "omega_fit", "sqrt_n_omega", "rel_error"), rows, out / "sqrtn.csv")
        return {"sqrtn": [dict(zip(("n_atoms", "omega", "omega_fit", "sqrt_n_omega", "rel_error"), r)) for r in rows]}
    if variant == "crossover":
        rows = []
        for k, d in enumerate(np.round(np.arange(6.0, 10.001, 0.25), 10)):
            reg = protocols.Register.from_positions([(0.0, 0.0), (float(d), 0.0)])
            prog = protocols.build_adiabatic(register=reg)
            res = post_select(_task(prog, shots, noise, seed, out, f"d{k:02d}"))
            exact = rydberg_density(evolve(prog, build_basis(reg))[0]).sum()
            sampled = rydberg_fraction(res, 0) + rydberg_fraction(res, 1)
            rows.append((float(d), float(exact), sampled))
        _rows_csv(("distance", "mean_excitation_exact", "mean_excitation_sampled"), rows, out / "crossover.csv")
        return {"crossover": rows}
    rows = []
    for n in (1, 2):
        prog = protocols.build_lp_analogue(n)
        res = post_select(_task(prog, shots, noise, seed, out, f"atoms{n}"))
        exact = evolve(prog, build_basis(prog.register))[0].probability(0)
        p = float(np.all(res.post == 1, axis=1).mean())
        rows.append((n, float(exact), p))
    _rows_csv(("n_atoms", "p_ground_exact", "p_ground_sampled"), rows, out / "lp.csv")
    return {"lp": rows}


def example_3(variant, out, shots, seed, noise):
    if variant == "chain":
        reg = protocols.chain(11)
    else:
        reg = protocols.square_lattice(3, 3, 5.5)
    prog = protocols.build_adiabatic(register=reg)
    result = _task(prog, shots, noise, seed, out, "z2")
    _write(analysis_product("density", [result]), out / "density.csv")
    n = len(reg)
    summary = {}
    if variant == "chain":
        presence = [i % 2 for i in range(n)]
        prob = analysis_product("probability", [result], target=presence)
        _write(prob, out / "probability.csv")
        corr = analysis_product("correlation1d", [result])
        _write(corr, out / "correlation1d.csv")
        state = evolve(prog, choose_basis(prog))[0]
        exact_c = exact_correlation(outcome_distribution(state), n)
        try:
            lam_exact = fit_correlation_length(exact_c).correlation_length
        except InsufficientDataError:
            lam_exact = math.nan
        summary.update(
            neel_probability=prob.rows[0][1],
            neel_probability_stderr=prob.rows[0][2],
            neel_probability_exact=state.probability(protocols.neel_configs(n)[0]),
            correlation_length=corr.extra["correlation_length"],
            correlation_length_exact=lam_exact,
        )
    else:
        _write(analysis_product("correlation2d", [result]), out / "correlation2d.csv")
    return summary


def example_4(variant, out, shots, seed, noise):
    reg = protocols.chain(9)
    if variant == "quench":
        prog = protocols.build_scar(None, 1.0, register=reg)
        dump_program(prog, out / "quench_program.json")
        times = np.round(np.linspace(0.0, 1.0, 201), 12)
        traj = trajectory_product(prog, times, initial="neel")
        _write(traj, out / "trajectory.csv")
        p = np.array([r[2] for r in traj.rows])
        peak = first_revival(times, p)
        return {"first_revival_time": peak[0], "first_revival_height": peak[1]}
    prep = protocols.AdiabaticParams()
    prog = protocols.build_scar(prep, 1.0, register=reg)
    _task(prog, shots, noise, seed, out, "scar", relaxed=True)
    times = np.round(np.linspace(0.0, prog.duration, 401), 12)
    _write(trajectory_product(prog, times), out / "trajectory.csv")
    return {"duration": prog.duration}


def first_revival(times, p, prominence: float = 0.05) -> tuple[float, float]:
    """First peak of ``p`` (prominence relative to ``p[0]``) after it has
    dropped below half its start value; NaNs if there is none."""
    p = np.asarray(p, dtype=float)
    below = np.flatnonzero(p < 0.5 * p[0])
    if not len(below):
        return math.nan, math.nan
    peaks, _ = find_peaks(p, prominence=prominence * p[0])
    peaks = peaks[peaks > below[0]]
    if not len(peaks):
        return math.nan, math.nan
    k = int(peaks[0])
    return float(times[k]), float(p[k])


def example_5(variant, out, shots, seed, noise):
    g = mis.kings_graph(4, 4, 5.0, 0.3, seed=seed)
    g.dump(out / "graph.json")
    size, witness = mis.exact_mis(g)
    reports = []
    for k, df in enumerate(range(0, 81, 10)):
        prog = mis.mis_program(g, float(df))
        result = _task(prog, shots, noise, mis._sub_seed(seed, k, 0), out, f"df{df:02d}", cfg=mis.SCAN_CONFIG, basis_mode="truncated")
        rep = mis.hybrid_report(result, g, np.random.default_rng([seed, k, 1]))
        rep.delta_f, rep.exact_mis = float(df), size
        reports.append(rep)
    base = mis.classical_baseline(g, shots, np.random.default_rng([seed, 99]))
    base.exact_mis = size
    mis.write_reports_csv(reports + [base], out / "mis_report.csv")
    best = max(reports, key=lambda r: r.avg_maximal)
    pr = mis.performance_ratio(best, base)
    _rows_csv(("best_delta_f", "hybrid_avg_maximal", "classical_avg_maximal", "performance_ratio"),
              [(best.delta_f, best.avg_maximal, base.avg_maximal, pr)], out / "performance_ratio.csv")
    return {"exact_mis": size, "exact_witness": sorted(witness), "best_delta_f": best.delta_f, "performance_ratio": pr}


def run_example(
    n: int,
    variant: str | None = None,
    out_dir: str | Path | None = None,
    shots: int = 1000,
    seed: int = DEFAULT_SEED,
    noise: NoiseParams | None = None,
) -> dict:
    if n not in VARIANTS:
        raise ValueError("examples are numbered 1 to 5")
    variant = variant or VARIANTS[n][0]
    if variant not in VARIANTS[n]:
        raise ValueError(f"example {n} variants: {', '.join(VARIANTS[n])}")
    out = Path(out_dir or f"example{n}_{variant}")
    out.mkdir(parents=True, exist_ok=True)
    fn = (example_1, example_2, example_3, example_4, example_5)[n - 1]
    summary = fn(variant, out, shots, seed, noise)
    summary = {
        "example": n,
        "variant": variant,
        "shots": shots,
        "seed": seed,
        "noise": None if noise is None else noise.to_dict(),
        **summary,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return summary


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))
