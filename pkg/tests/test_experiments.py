import itertools
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aquila_emu.engine import StateVector, build_basis, evolve, rydberg_density
from aquila_emu.experiments import (
    AdiabaticParams,
    MisReport,
    UnitDiskGraph,
    build_adiabatic,
    build_floquet,
    build_lp_analogue,
    build_rabi,
    build_ramsey,
    build_scar,
    build_spin_echo,
    chain,
    classical_baseline,
    detuning_scan,
    exact_mis,
    greedy_augment,
    greedy_remove_violations,
    kings_graph,
    neel_state,
    performance_ratio,
    two_atom_excitation,
)
from aquila_emu.program import Register, validate, value_at
from oracles import brute_force_mis, dense_propagate


def p_ground(prog, initial=None):
    state = evolve(prog, build_basis(prog.register, "full"), initial=initial)[0]
    return state.probability(0)


# pulse builders

def test_rabi_builder_examples():
    prog = build_rabi(15, 0, 1, 0.06)
    assert validate(prog).ok
    assert prog.omega.knots == ((0, 0), (0.06, 15), (0.94, 15), (1, 0))
    assert "rabi_max" in validate(build_rabi(16, 0, 1, 0.07)).rules()
    off = build_rabi(15, 15, 1, 0.06)
    assert validate(off).ok and np.all(off.delta.values == 15)
    with pytest.raises(ValueError):
        build_rabi(15, 0, 1, 0.05)


def test_ramsey_zero_hold_is_a_pi_pulse():
    assert validate(build_ramsey(0.0)).ok
    assert p_ground(build_ramsey(0.0)) < 1e-6


@pytest.mark.parametrize("hold", [0.1, 0.37, 1.5])
def test_ramsey_without_detuning_ignores_hold(hold):
    assert p_ground(build_ramsey(hold)) < 1e-6


def test_ramsey_fringe_period():
    d = 2 * math.pi / 1.0
    a = p_ground(build_ramsey(0.1, delta=d))
    b = p_ground(build_ramsey(1.1, delta=d))
    fringe = [p_ground(build_ramsey(h, delta=d)) for h in np.linspace(0.1, 1.1, 11)]
    assert a == pytest.approx(b, abs=1e-6)
    assert np.ptp(fringe) > 0.7


@pytest.mark.parametrize("hold", [0.0, 0.2, 1.0])
def test_spin_echo_returns_to_ground(hold):
    prog = build_spin_echo(hold)
    assert validate(prog).ok
    assert p_ground(prog) == pytest.approx(1.0, abs=1e-6)


def test_spin_echo_cancels_static_offset():
    # the hold phase cancels; only the detuned pulses leave a small residue
    d = 0.5
    holds = (0.2, 0.8, 1.4, 2.0)
    echo = [p_ground(build_spin_echo(h, delta=d)) for h in holds]
    ramsey = [p_ground(build_ramsey(h, delta=d)) for h in holds]
    assert min(echo) > 0.99
    assert np.ptp(echo) < 0.02 * np.ptp(ramsey)


def test_floquet_builder():
    assert build_floquet(0, 15, 15, 2) == build_rabi(15, 0, 2)
    prog = build_floquet(15, 15, 15, 2)
    assert validate(prog).ok
    t = np.linspace(0, 2, 4001)
    err = np.abs(prog.delta.sample(t) - 15 * np.sin(15 * t)).max()
    assert err < 1e-3


def test_adiabatic_builder():
    prog = build_adiabatic(15, -30, 30, 0.5, 3, 4)
    assert validate(prog).ok
    assert prog.omega.knots == ((0, 0), (0.5, 15), (3.5, 15), (4, 0))
    assert prog.delta.knots == ((0, -30), (0.5, -30), (3.5, 30), (4, 30))
    flat = build_adiabatic(15, 10, 10)
    assert np.all(flat.delta.values == 10)


@given(st.floats(2, 15.8), st.floats(-125, 0), st.floats(0, 125), st.floats(0.2, 1), st.floats(0.1, 1))
@settings(max_examples=40)
def test_adiabatic_in_range_always_validates(om, di, df, ramp, frac):
    sweep = frac * (4 - 2 * ramp)
    prog = build_adiabatic(om, di, df, ramp, sweep, ramp + sweep + ramp, chain(3))
    assert validate(prog).ok


def test_scar_builder():
    prep = AdiabaticParams()
    assert build_scar(prep, 0) == build_adiabatic(register=chain(9))
    prog = build_scar(prep, 0.5)
    assert prog.duration > 4
    assert validate(prog).rules() == {"duration"}
    assert validate(prog, relaxed=True).ok
    assert value_at(prog.delta, prog.duration - 0.1) == 0
    assert value_at(prog.omega, 3.8) == 15


def test_scar_neel_quench_matches_dense_oracle():
    prog = build_scar(None, 0.4, register=chain(7))
    basis = build_basis(prog.register, "full")
    init = neel_state(basis)
    ts = [0.1, 0.25, 0.4]
    got = evolve(prog, basis, sample_times=ts, initial=init)
    ref = dense_propagate(prog, 1e-4, init.amplitudes, ts)
    for s, r in zip(got, ref):
        assert abs(abs(np.vdot(r, s.amplitudes)) - 1) < 1e-5


def test_lp_identity_limit():
    prog = build_lp_analogue(1, omega=15, delta=0, xi=0, pulse_T=2 * math.pi / 15)
    assert validate(prog).ok
    assert p_ground(prog) == pytest.approx(1.0, abs=1e-6)


def test_lp_default_programs():
    for n in (1, 2):
        prog = build_lp_analogue(n)
        assert validate(prog).ok
        assert 0 <= p_ground(prog) <= 1


def test_lp_far_apart_atoms_factorise():
    one = p_ground(build_lp_analogue(1))
    two = p_ground(build_lp_analogue(2, spacing=60.0))
    # residual C6/r^6 at 60 um is ~1e-4 rad/us
    assert two == pytest.approx(one**2, abs=1e-5)


def test_two_atom_crossover_ends():
    assert two_atom_excitation(6.5) <= 1.2
    assert two_atom_excitation(9.5) >= 1.8


# graphs

def test_kings_graph_examples():
    g = kings_graph(2, 2, dropout=0)
    assert g.n == 4 and len(g.edges) == 6
    assert kings_graph(4, 4, dropout=1).n == 0
    assert kings_graph(5, 5, dropout=0.3, seed=8) == kings_graph(5, 5, dropout=0.3, seed=8)
    full = kings_graph(3, 3, dropout=0)
    assert len(full.edges) == 2 * 3 * 2 + 2 * 2 * 2


def test_kings_graph_vertex_count_statistics():
    counts = np.array([kings_graph(5, 5, dropout=0.3, seed=s).n for s in range(2000)])
    se = math.sqrt(25 * 0.3 * 0.7 / 2000)
    assert abs(counts.mean() - 17.5) < 5 * se


def test_unit_disk_graph_round_trip(tmp_path):
    g = kings_graph(3, 4, dropout=0.3, seed=1)
    g.dump(tmp_path / "g.json")
    assert UnitDiskGraph.load(tmp_path / "g.json") == g


graphs = st.builds(lambda n, m, p, s: kings_graph(n, m, dropout=p, seed=s), st.integers(1, 4), st.integers(1, 4), st.sampled_from([0.0, 0.3, 0.6]), st.integers(0, 10**6))


@given(graphs, st.integers(0, 2**31), st.sampled_from(["max_degree", "random"]))
@settings(max_examples=60)
def test_greedy_properties(g, seed, strategy):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, g.n)
    fixed = greedy_remove_violations(bits, g, rng, strategy)
    assert fixed <= set(np.flatnonzero(bits).tolist())
    assert g.is_independent(fixed)
    full = greedy_augment(fixed, g, rng)
    assert fixed <= full and g.is_independent(full) and g.is_maximal(full)
    assert greedy_augment(full, g, rng) == full
    assert greedy_remove_violations(np.isin(np.arange(g.n), list(full)), g, rng) == full


def triangle():
    return UnitDiskGraph(((0, 0), (4, 0), (2, 3)), 5.0)


def path3():
    return UnitDiskGraph(((0, 0), (4, 0), (8, 0)), 5.0)


def test_greedy_examples():
    rng = np.random.default_rng(0)
    assert len(greedy_remove_violations([1, 1, 1], triangle(), rng)) == 1
    assert greedy_remove_violations([0, 0, 0], triangle(), rng) == frozenset()
    edgeless = UnitDiskGraph(((0, 0), (10, 0), (20, 0)), 5.0)
    assert greedy_augment(frozenset(), edgeless, rng) == {0, 1, 2}
    sizes = {len(greedy_augment(frozenset(), path3(), np.random.default_rng(s))) for s in range(50)}
    assert sizes == {1, 2}


def test_exact_mis_examples():
    assert exact_mis(triangle())[0] == 1
    assert exact_mis(path3())[0] == 2
    assert exact_mis(kings_graph(3, 3, dropout=1))[0] == 0


@given(st.integers(2, 4), st.integers(2, 4), st.sampled_from([0.0, 0.3, 0.6]), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_exact_mis_matches_brute_force(n, m, p, s):
    g = kings_graph(n, m, dropout=p, seed=s)
    size, witness = exact_mis(g)
    assert size == brute_force_mis(g.n, g.edges)
    assert len(witness) == size and g.is_independent(witness)


def test_exact_mis_on_larger_graph():
    g = kings_graph(6, 6, dropout=0)
    size, witness = exact_mis(g)
    assert size == 9 and g.is_independent(witness) and len(witness) == size
    rng = np.random.default_rng(0)
    assert all(len(greedy_augment(frozenset(), g, rng)) <= size for _ in range(200))


def expected_greedy_size(g):
    """Mean size of random sequential selection, by recursion over available sets."""
    closed = [(1 << v) | sum(1 << u for u in g.neighbors(v)) for v in range(g.n)]

    @lru_cache(maxsize=None)
    def f(avail):
        vs = [v for v in range(g.n) if avail >> v & 1]
        if not vs:
            return 0.0
        return 1.0 + sum(f(avail & ~closed[v]) for v in vs) / len(vs)

    return f((1 << g.n) - 1)


def test_classical_baseline_examples():
    rng = np.random.default_rng(1)
    edgeless = UnitDiskGraph(((0, 0), (10, 0), (20, 0)), 5.0)
    assert np.all(classical_baseline(edgeless, 20, rng).maximal_size == 3)
    assert np.all(classical_baseline(triangle(), 20, rng).maximal_size == 1)


@pytest.mark.parametrize("dropout, seed", [(0.0, 0), (0.3, 4), (0.3, 9)])
def test_classical_baseline_matches_exact_expectation(dropout, seed):
    g = kings_graph(4, 4, dropout=dropout, seed=seed)
    exact = expected_greedy_size(g)
    rep = classical_baseline(g, 10_000, np.random.default_rng(2))
    se = rep.maximal_size.std(ddof=1) / math.sqrt(10_000)
    assert abs(rep.avg_maximal - exact) <= 5 * se + 1e-12


def report(sizes):
    a = np.asarray(sizes)
    return MisReport(a, a, a, frozenset())


def test_performance_ratio_examples():
    assert performance_ratio(report([3, 4]), report([3, 4])) == 1.0
    assert performance_ratio(report([57.5]), report([58.0])) == pytest.approx(0.9914, abs=1e-4)
    with pytest.raises(ValueError):
        performance_ratio(report([1]), report([0]))


def test_detuning_scan_plumbing():
    g = kings_graph(2, 3, dropout=0)
    reps = detuning_scan(g, range(0, 81, 10), 20, seed=3)
    assert len(reps) == 9
    assert [r.delta_f for r in reps] == list(map(float, range(0, 81, 10)))
    for r in reps:
        assert np.all(r.repaired_size <= r.maximal_size)
        assert r.avg_repaired <= r.avg_maximal
        assert r.exact_mis == exact_mis(g)[0]
        assert r.best <= r.exact_mis


def test_negative_detuning_stays_in_ground_state():
    g = kings_graph(2, 3, dropout=0)
    (rep,) = detuning_scan(g, [-30.0], 50, seed=0)
    assert rep.avg_rydberg < 0.05
