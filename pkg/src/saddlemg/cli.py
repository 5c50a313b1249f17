"""Command-line benchmarks: iteration tables, the CR solver and the theory suite.

    saddlemg run --example 1 --levels 4 --out ex1.csv
    saddlemg cr --levels 3
    saddlemg theory --coarse-n 4 --levels 2 --out theory.json
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import build_hierarchy
from .mesh import build_square_mesh, distort_mesh
from .mixed_fem import example_tensor, mean_zero_source
from .noncon_cr import cr_solve_mg
from .saddle_mg import SMOOTHERS, SolverConfig, build_multilevel, solve
from .theory import verify_bound

log = logging.getLogger("saddlemg")

TABLE_HEADER = ["h", "size", "iterations", "final_error", "elapsed_ms"]
CR_HEADER = TABLE_HEADER + ["equiv_residual"]
DISTORTION = 0.4


def default_source(x, y):
    return 2.0 * np.pi**2 * np.cos(np.pi * x) * np.cos(np.pi * y)


@dataclass
class BenchSpec:
    example: int = 1
    coarse_n: int = 4
    levels: int = 4  # rows for h = 1/(2N), ..., 1/(2^levels N)
    config: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 1
    out: str | None = None
    timing: bool = True

    def __post_init__(self):
        if self.example not in (1, 2, 3, 4):
            raise ValueError("example must be 1, 2, 3 or 4")
        if self.coarse_n < 1 or self.levels < 1:
            raise ValueError("coarse-n and levels must be positive")

    def depths(self) -> list[int]:
        """Hierarchy depths J, ascending (one per table row)."""
        return list(range(2, self.levels + 2))


def _coarse_mesh(spec: BenchSpec):
    mesh = build_square_mesh(spec.coarse_n)
    if spec.example == 4:
        mesh = distort_mesh(mesh, DISTORTION, seed=spec.seed)
    return mesh


def _fmt(x: float) -> str:
    return f"{x:.6e}"


@dataclass
class Row:
    h: float
    size: int
    iterations: int
    final_error: float
    elapsed_ms: float
    converged: bool
    extra: dict = field(default_factory=dict)

    def cells(self) -> list[str]:
        out = [f"{self.h:.10g}", str(self.size), str(self.iterations), _fmt(self.final_error),
               f"{self.elapsed_ms:.1f}"]
        return out + [_fmt(v) for v in self.extra.values()]


def run_table(spec: BenchSpec) -> list[Row]:
    """One solve per level of the Darcy example ``spec.example``."""
    K = example_tensor(spec.example, spec.seed)
    coarse = _coarse_mesh(spec)
    rows = []
    for J in spec.depths():
        t0 = time.perf_counter()
        hier = build_hierarchy(coarse, J)
        ml = build_multilevel(hier, K)
        f = mean_zero_source(hier.finest, default_source)
        _, _, stats = solve(ml, f, cfg=spec.config)
        ms = 1e3 * (time.perf_counter() - t0) if spec.timing else 0.0
        mesh = hier.finest
        rows.append(Row(1.0 / (spec.coarse_n * 2 ** (J - 1)), mesh.n_edges + mesh.n_triangles,
                        stats.iterations, stats.final_error, ms, stats.converged))
        log.info("h=%s iterations=%d converged=%s", rows[-1].h, stats.iterations, stats.converged)
    return rows


def run_cr(spec: BenchSpec, source=default_source) -> list[Row]:
    """CR multigrid (K = I) per level, with the energy-equivalence residual."""
    coarse = build_square_mesh(spec.coarse_n)
    rows = []
    for J in spec.depths():
        t0 = time.perf_counter()
        hier = build_hierarchy(coarse, J)
        ml = build_multilevel(hier)
        res = cr_solve_mg(ml, mean_zero_source(hier.finest, source), cfg=spec.config)
        ms = 1e3 * (time.perf_counter() - t0) if spec.timing else 0.0
        mesh = hier.finest
        rows.append(Row(1.0 / (spec.coarse_n * 2 ** (J - 1)), mesh.n_edges + mesh.n_triangles,
                        res.stats.iterations, res.stats.final_error, ms, res.stats.converged,
                        {"equiv_residual": res.max_equivalence_residual}))
    return rows


def run_theory(coarse_n: int = 4, levels: int = 2, seed: int = 0) -> dict:
    est = verify_bound(build_hierarchy(build_square_mesh(coarse_n), levels), seed=seed)
    report = {"coarse_n": coarse_n, "levels": levels}
    report.update(est.to_dict())
    return report


def format_csv(header: list[str], rows: list[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_ok(rows: list[Row]) -> bool:
    vals = [r.final_error for r in rows] + [v for r in rows for v in r.extra.values()]
    return all(r.converged for r in rows) and all(math.isfinite(v) for v in vals)


def _add_solver_args(p: argparse.ArgumentParser):
    p.add_argument("--levels", type=int, default=4, help="number of refinement levels (table rows)")
    p.add_argument("--coarse-n", type=int, default=4, help="coarsest grid is N x N squares")
    p.add_argument("--smoother", choices=SMOOTHERS, default="kernel")
    p.add_argument("--pre", type=int, default=1)
    p.add_argument("--post", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--no-timing", action="store_true", help="write 0 in elapsed_ms (byte-stable output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saddlemg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="iteration table for one Darcy example")
    run.add_argument("--example", type=int, choices=(1, 2, 3, 4), default=1)
    _add_solver_args(run)
    cr = sub.add_parser("cr", help="Crouzeix-Raviart multigrid table")
    _add_solver_args(cr)
    th = sub.add_parser("theory", help="convergence constants on a small hierarchy (JSON)")
    th.add_argument("--coarse-n", type=int, default=4)
    th.add_argument("--levels", type=int, default=2, help="hierarchy depth J")
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--out", default=None)
    return parser


def _spec(args, example: int = 1) -> BenchSpec:
    cfg = SolverConfig(tolerance=args.tol, max_iter=args.max_iter, pre=args.pre, post=args.post,
                       smoother=args.smoother, seed=args.seed)
    return BenchSpec(example=example, coarse_n=args.coarse_n, levels=args.levels, config=cfg,
                     seed=args.seed, out=args.out, timing=not args.no_timing)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            rows = run_table(_spec(args, args.example))
            _emit(format_csv(TABLE_HEADER, rows), args.out)
            return 0 if _rows_ok(rows) else 1
        if args.command == "cr":
            rows = run_cr(_spec(args))
            _emit(format_csv(CR_HEADER, rows), args.out)
            return 0 if _rows_ok(rows) else 1
        report = run_theory(args.coarse_n, args.levels, args.seed)
        _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.out)
        return 0 if report["all_pass"] else 1
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
