import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aquila_emu.program import (
    AQUILA,
    AnalogProgram,
    DomainError,
    PhaseWaveform,
    Register,
    Site,
    Waveform,
    distinct_rows,
    dump_program,
    load_program,
    phase_at,
    program_from_dict,
    program_to_dict,
    snap_to_rows,
    tile,
    validate,
    value_at,
)

FIG31 = Waveform(((0, 0), (0.5, 15), (3.5, 15), (4, 0)))


def fig31_program(positions=((0, 0), (8, 0))):
    return AnalogProgram(Register.from_positions(positions), FIG31, Waveform(((0, -30), (0.5, -30), (3.5, 30), (4, 30))))


def test_value_at_examples():
    w = Waveform(((0, 0), (1, 10)))
    assert value_at(w, 0.5) == 5.0
    assert value_at(w, 1.0) == 10.0
    assert value_at(FIG31, 2.0) == 15.0


def test_value_at_outside_domain():
    with pytest.raises(DomainError):
        value_at(FIG31, 4.0001)
    with pytest.raises(DomainError):
        value_at(FIG31, -1e-3)


def test_phase_at_right_open():
    p = PhaseWaveform(((0, 0), (2, 3.9)), 4.0)
    assert phase_at(p, 1.999) == 0
    assert phase_at(p, 2.0) == 3.9
    assert phase_at(p, 4.0) == 3.9
    assert phase_at(PhaseWaveform.constant(0.0, 1.0), 0.7) == 0
    with pytest.raises(DomainError):
        phase_at(p, 4.5)


@pytest.mark.parametrize(
    "knots",
    [((0, 0),), ((0.1, 0), (1, 0)), ((0, 0), (1, 0), (1, 1)), ((0, 0), (1, float("nan")))],
)
def test_waveform_invariants(knots):
    with pytest.raises(ValueError):
        Waveform(knots)


def test_site_and_program_invariants():
    with pytest.raises(ValueError):
        Site(-1.0, 0.0)
    with pytest.raises(ValueError):
        Site(float("inf"), 0.0)
    with pytest.raises(ValueError):
        AnalogProgram(Register.from_positions([(0, 0)]), FIG31, Waveform.constant(0, 3.0))


@given(
    st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6),
    st.lists(st.floats(-100, 100), min_size=7, max_size=7),
)
def test_value_at_affine_between_knots(gaps, vals):
    times = np.concatenate([[0], np.cumsum(gaps)])
    w = Waveform.from_arrays(times, vals[: len(times)])
    for (t0, v0), (t1, v1) in zip(w.knots, w.knots[1:]):
        assert value_at(w, t0) == v0
        assert value_at(w, 0.5 * (t0 + t1)) == pytest.approx(0.5 * (v0 + v1), rel=1e-12, abs=1e-12)


def test_validate_fig31_clean():
    rep = validate(fig31_program())
    assert rep.ok and not rep.errors


def test_validate_examples():
    p = AnalogProgram(Register.from_positions([(0, 0)]), Waveform(((0, 0), (0.1, 16), (0.9, 16), (1, 0))), Waveform.constant(0, 1))
    assert "rabi_max" in validate(p).rules()
    p = fig31_program(((0, 0), (3, 0)))
    assert "min_distance" in validate(p).rules()
    p = AnalogProgram(Register.from_positions([(0, 0)]), Waveform(((0, 0), (0.05, 15), (0.5, 15), (0.6, 0))), Waveform.constant(0, 0.6))
    assert "rabi_slew" in validate(p).rules()


def test_validate_pure_and_idempotent():
    p = fig31_program(((0, 0), (3, 0)))
    assert validate(p) == validate(p)


def test_validate_warnings():
    om = Waveform(((0, 0), (0.1, 15), (0.105, 15), (0.2, 0)))
    p = AnalogProgram(Register.from_positions([(0, 0)]), om, Waveform.constant(0, 0.2), PhaseWaveform(((0, 0), (0.1, 1.0))))
    rep = validate(p)
    assert rep.ok
    kinds = {w.rule for w in rep.warnings}
    assert kinds == {"phase_jump_driven", "short_segment"}


def test_validate_qubit_count_counts_filled_sites_only():
    caps = AQUILA.__class__(max_qubits=1)
    reg = Register((Site(0, 0), Site(10, 0, filled=False)))
    p = AnalogProgram(reg, FIG31, Waveform.constant(0, 4))
    assert validate(p, caps).ok
    reg = Register((Site(0, 0), Site(10, 0)))
    assert "qubit_count" in validate(AnalogProgram(reg, FIG31, Waveform.constant(0, 4)), caps).rules()


def test_relaxed_lifts_duration_and_height_only():
    om = Waveform(((0, 0), (0.5, 15), (5.5, 15), (6, 0)))
    p = AnalogProgram(Register.from_positions([(0, 0), (0, 80)]), om, Waveform.constant(0, 6))
    assert validate(p).rules() == {"duration", "extent"}
    assert validate(p, relaxed=True).ok
    rect = AnalogProgram(Register.from_positions([(0, 0)]), Waveform.constant(15, 1), Waveform.constant(0, 1))
    assert validate(rect, relaxed=True).rules() == {"rabi_endpoints"}


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 40), st.floats(0, 40)), min_size=1, max_size=8),
    st.floats(0, 20),
    st.floats(0.01, 0.2),
)
def test_clean_report_implies_hardware_bounds(points, omega, ramp):
    T = 1.0
    om = Waveform(((0, 0), (ramp, omega), (T - ramp, omega), (T, 0)))
    p = AnalogProgram(Register.from_positions(points), om, Waveform.constant(0, T))
    if validate(p).ok:
        pos = np.array(points)
        d = np.sqrt(((pos[:, None] - pos[None]) ** 2).sum(-1))[np.triu_indices(len(pos), 1)]
        assert np.all(d >= 4 - 1e-9)
        assert om.values.max() <= 15.8 + 1e-9
        assert np.all(np.abs(om.slopes()) <= 250 * (1 + 1e-9))
        assert p.duration <= 4


def test_tile_examples():
    one = Register.from_positions([(0, 0)])
    grid = tile(one, 4, 4, 25, 25)
    assert len(grid) == 16
    assert sorted(set(grid.positions[:, 0])) == [0, 25, 50, 75]
    assert tile(one, 1, 1, 5, 5) == one
    pair = Register.from_positions([(0, 0), (5, 0)])
    four = tile(pair, 2, 1, 20, 0)
    assert len(four) == 4
    assert four.positions[3, 0] - four.positions[2, 0] == 5


def test_tile_row_major_order():
    one = Register.from_positions([(0, 0)])
    pos = tile(one, 3, 2, 10, 20).positions
    assert pos.tolist() == [[0, 0], [10, 0], [20, 0], [0, 20], [10, 20], [20, 20]]


@given(st.integers(1, 3), st.integers(1, 3), st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=4))
def test_tile_preserves_intra_copy_distances(nx, ny, pts):
    sub = Register.from_positions(pts)
    out = tile(sub, nx, ny, 30.0, 30.0)
    assert len(out) == nx * ny * len(sub)
    k = len(sub)
    ref = sub.positions[:, None] - sub.positions[None]
    for c in range(nx * ny):
        blk = out.positions[c * k : (c + 1) * k]
        np.testing.assert_allclose(blk[:, None] - blk[None], ref, atol=1e-12)


def test_snap_to_rows_examples():
    reg = snap_to_rows([(0, 0), (1, 0.5), (2, 10)], 4)
    assert reg.positions[:, 1].tolist() == [0, 0, 10]
    already = [(0, 0), (1, 4), (2, 9)]
    assert snap_to_rows(already, 4).positions.tolist() == np.array(already, float).tolist()
    reg = snap_to_rows([(i, float(i)) for i in range(6)], 4)
    assert reg.positions[:, 1].tolist() == [0, 0, 0, 0, 4, 4]


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=1, max_size=20))
def test_snap_to_rows_satisfies_row_rule(points):
    reg = snap_to_rows(points, 4)
    rows = distinct_rows(reg.positions[:, 1])
    assert all(b - a >= 4 - 1e-9 for a, b in zip(rows, rows[1:]))
    assert reg.positions[:, 0].tolist() == [float(x) for x, _ in points]


def test_program_json_round_trip(tmp_path):
    p = AnalogProgram(
        Register((Site(0, 0), Site(6.1, 0, filled=False))),
        FIG31,
        Waveform(((0, -30), (0.5, -30), (3.5, 30), (4, 30))),
        PhaseWaveform(((0, 0), (2, 3.9))),
    )
    assert program_from_dict(json.loads(json.dumps(program_to_dict(p)))) == p
    path = tmp_path / "p.json"
    dump_program(p, path)
    assert load_program(path) == p


@pytest.mark.parametrize("bad", [{}, {"register": [], "omega": [[0, 0]], "delta": [], "duration": 1}, {"register": 3}])
def test_program_from_dict_malformed(bad):
    with pytest.raises(ValueError):
        program_from_dict(bad)


def test_capabilities_positive():
    with pytest.raises(ValueError):
        AQUILA.__class__(max_rabi=0)
    assert AQUILA.c6 == 5_420_503
    assert (AQUILA.max_rabi, AQUILA.max_rabi_slew, AQUILA.max_abs_detuning, AQUILA.max_duration) == (15.8, 250, 125, 4)
    assert math.isclose(AQUILA.max_width, 75) and math.isclose(AQUILA.max_height, 76)
