"""Experiment builders and the MIS pipeline."""

from .mis import (
    MIS_PARAMS,
    SCAN_CONFIG,
    MisReport,
    UnitDiskGraph,
    classical_baseline,
    detuning_scan,
    exact_mis,
    greedy_augment,
    greedy_remove_violations,
    hybrid_report,
    kings_graph,
    mis_program,
    performance_ratio,
    postprocess,
    write_reports_csv,
)
from .protocols import (
    AdiabaticParams,
    build_adiabatic,
    build_floquet,
    build_lp_analogue,
    build_rabi,
    build_ramsey,
    build_scar,
    build_spin_echo,
    chain,
    collective_rabi_register,
    hexagon_register,
    neel_configs,
    neel_state,
    rectangular_pulse,
    square_lattice,
    two_atom_excitation,
)
