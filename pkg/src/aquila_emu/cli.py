"""Command-line interface.

Exit codes: 0 success, 1 domain failure (validation errors, failed fits,
empty post-selection, integrator failure), 2 I/O or usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import ANALYSES, EmptySelectionError, FitError, InsufficientDataError, NotALatticeError, analysis_product
from .engine import CapacityError, DegenerateGeometryError, IntegratorConfig, IntegratorError
from .experiments.suites import DEFAULT_SEED, VARIANTS, run_example, trajectory_product
from .noise import NoiseParams
from .program import load_program, validate
from .sampler import ResultFormatError, TaskRejected, load_result, run_task, serialize

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


def _noise(arg: str) -> NoiseParams | None:
    if arg == "off":
        return None
    if arg == "default":
        return NoiseParams.default()
    try:
        return NoiseParams.load(arg)
    except OSError as exc:
        raise UsageError(f"cannot read noise file {arg}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad noise file {arg}: {exc}") from exc


def _program(path: str):
    try:
        return load_program(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"malformed program {path}: {exc}") from exc


def _times(spec: str) -> list[float]:
    try:
        if ":" in spec:
            a, b, n = spec.split(":")
            return [float(t) for t in np.linspace(float(a), float(b), int(n))]
        return [float(t) for t in spec.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad time list {spec!r}") from exc


def _emit(text: str | bytes, out: str | None) -> None:
    if out is None:
        if isinstance(text, bytes):
            text = text.decode()
        sys.stdout.write(text)
        return
    try:
        Path(out).write_bytes(text if isinstance(text, bytes) else text.encode())
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from exc


def _product_text(product, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(product.to_json(), indent=1) + "\n"
    import io

    buf = io.StringIO()
    product.write_csv(buf)
    return buf.getvalue()


def cmd_validate(args) -> int:
    prog = _program(args.program)
    report = validate(prog, relaxed=args.relaxed)
    _emit(json.dumps(report.to_dict(), indent=1) + "\n", args.out)
    return EXIT_OK if report.ok else EXIT_DOMAIN


def cmd_run(args) -> int:
    prog = _program(args.program)
    cfg = IntegratorConfig(dt_max=args.dt_max)
    try:
        result = run_task(prog, args.shots, _noise(args.noise), args.seed, relaxed=args.relaxed, basis_mode=args.basis, cfg=cfg)
    except TaskRejected as exc:
        sys.stderr.write(json.dumps(exc.report.to_dict(), indent=1) + "\n")
        return EXIT_DOMAIN
    _emit(serialize(result), args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    results = []
    for path in args.results:
        try:
            results.append(load_result(path))
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc}") from exc
        except ResultFormatError as exc:
            raise UsageError(f"malformed result {path}: {exc}") from exc
    target = None
    if args.target is not None:
        if set(args.target) - {"0", "1"}:
            raise UsageError("--target must be a string of 0/1 presence bits")
        target = [int(c) for c in args.target]
    times = _times(args.times) if args.times else None
    product = analysis_product(args.analysis, results, target=target, pitch=args.pitch, postselect=not args.no_postselect, times=times)
    _emit(_product_text(product, args.format), args.out)
    return EXIT_OK


def cmd_trajectory(args) -> int:
    prog = _program(args.program)
    cfg = IntegratorConfig(dt_max=args.dt_max)
    product = trajectory_product(prog, _times(args.times), args.initial, args.basis, cfg)
    _emit(_product_text(product, args.format), args.out)
    return EXIT_OK


def cmd_example(args) -> int:
    noise = _noise(args.noise)
    summary = run_example(args.number, args.variant, args.out, args.shots, args.seed, noise)
    sys.stdout.write(json.dumps({k: summary[k] for k in ("example", "variant", "seed")}) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aquila-emu", description="Neutral-atom analog Hamiltonian emulator")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a program against device limits")
    v.add_argument("program")
    v.add_argument("--relaxed", action="store_true", help="lift the duration and height limits")
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="emulate a measurement task")
    r.add_argument("program")
    r.add_argument("--shots", type=int, default=100)
    r.add_argument("--seed", type=int, default=DEFAULT_SEED)
    r.add_argument("--noise", default="default", help="off, default or a JSON parameter file")
    r.add_argument("--relaxed", action="store_true")
    r.add_argument("--basis", choices=("auto", "full", "truncated"), default="auto")
    r.add_argument("--dt-max", type=float, default=IntegratorConfig().dt_max)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="derive quantities from result files")
    a.add_argument("results", nargs="+")
    a.add_argument("--analysis", choices=ANALYSES, required=True)
    a.add_argument("--target", help="presence bitstring for --analysis probability")
    a.add_argument("--pitch", type=float, help="lattice pitch for correlation2d (default: smallest distance)")
    a.add_argument("--times", help="fit abscissae, 'a:b:n' or comma list (default: program durations)")
    a.add_argument("--no-postselect", action="store_true")
    a.add_argument("--format", choices=("csv", "json"), default="csv")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("trajectory", help="noiseless observables versus time")
    t.add_argument("program")
    t.add_argument("--times", required=True, help="'a:b:n' or comma list")
    t.add_argument("--initial", choices=("ground", "neel", "neel-odd"), default="ground")
    t.add_argument("--basis", choices=("auto", "full", "truncated"), default="auto")
    t.add_argument("--dt-max", type=float, default=IntegratorConfig().dt_max)
    t.add_argument("--format", choices=("csv", "json"), default="csv")
    t.add_argument("--out")
    t.set_defaults(func=cmd_trajectory)

    e = sub.add_parser("example", help="run one of the example suites end to end")
    e.add_argument("number", type=int, choices=sorted(VARIANTS))
    e.add_argument("--variant")
    e.add_argument("--shots", type=int, default=1000)
    e.add_argument("--seed", type=int, default=DEFAULT_SEED)
    e.add_argument("--noise", default="off")
    e.add_argument("--out", help="output directory")
    e.set_defaults(func=cmd_example)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_IO if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO
    except (
        ValueError,
        FitError,
        EmptySelectionError,
        InsufficientDataError,
        NotALatticeError,
        IntegratorError,
        CapacityError,
        DegenerateGeometryError,
    ) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DOMAIN
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
