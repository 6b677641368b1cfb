"""Command-line front end: solve, round, study, extract, fixtures.

Exit codes: 0 success, 2 input error, 3 solver failure, 4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import games as gm
from .extraction import extraction_csv, soundness_check
from .hierarchy import SizeCapError, build_level, build_word_index
from .io import FormatError, load_csp, load_game, load_rounded_strategy, load_solution, \
    save_problem, save_rounded, save_solution, table_csv, write_atomic
from .rounding import STUDY_COLUMNS, WeightError, check_weights, round_solution, \
    rounding_pipeline, study_convergence
from .solver import SolverError, gram_from_strategy, solve
from .suites import com_power_suite, dilation_suite, sq_bound_suite, voiculescu_table

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4
BUILTINS = {"chsh": gm.chsh, "trivial": gm.trivial_game}
TOL_RANGE = (1e-10, 1e-4)
VERIFY_TOL_RANGE = (1e-12, 1e-2)


class InputError(ValueError):
    pass


class VerificationError(RuntimeError):
    pass


@dataclass
class RunConfig:
    command: str
    game: str | None = None
    builtin: str | None = None
    csp: str | None = None
    solution: str | None = None
    strategy: str = "honest"
    level: int | None = None
    levels: tuple = ()
    tol: float = 1e-8
    verify_tol: float = 1e-6
    weights: str | None = None
    seed: int = 0
    samples: int = 10_000
    out: str = "."
    strict: bool = False
    write_problem: bool = False

    def validate(self) -> None:
        if self.level is not None and self.level < 1:
            raise InputError(f"level must be >= 1 (got {self.level})")
        if any(n < 1 for n in self.levels):
            raise InputError("levels must be >= 1")
        if not TOL_RANGE[0] <= self.tol <= TOL_RANGE[1]:
            raise InputError(f"--tol {self.tol} outside [{TOL_RANGE[0]:g}, {TOL_RANGE[1]:g}]")
        if not VERIFY_TOL_RANGE[0] <= self.verify_tol <= VERIFY_TOL_RANGE[1]:
            raise InputError(f"--verify-tol {self.verify_tol} outside "
                             f"[{VERIFY_TOL_RANGE[0]:g}, {VERIFY_TOL_RANGE[1]:g}]")
        if self.seed < 0:
            raise InputError("seed must be nonnegative")


def parse_levels(text: str) -> tuple:
    """``"a..b"`` (inclusive) or a comma-separated list."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise InputError(f"cannot parse levels {text!r}") from exc


def _game(cfg: RunConfig) -> gm.Game:
    if cfg.game and cfg.builtin:
        raise InputError("give either --game or --builtin, not both")
    if cfg.builtin:
        return BUILTINS[cfg.builtin]()
    if cfg.game:
        return load_game(cfg.game)
    raise InputError("no game given (use --game PATH or --builtin NAME)")


def _weights(cfg: RunConfig, n: int):
    if cfg.weights is None:
        return None
    try:
        data = json.loads(Path(cfg.weights).read_text())
        p = np.asarray(data["p"], dtype=float)
        q = np.asarray(data.get("q", data["p"]), dtype=float)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError("weights", f"cannot read weight profile ({exc})") from exc
    check_weights(p, q, n)
    return p, q


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# Commands


def cmd_solve(cfg: RunConfig) -> int:
    g = _game(cfg)
    n = cfg.level or 1
    p = build_level(g, n)
    sol = solve(p, tol=cfg.tol)
    out = _outdir(cfg)
    if sol.status != "solved":
        print(f"level {n} solver status {sol.status} gap {sol.gapEstimate:.3e}", file=sys.stderr)
        return EXIT_SOLVER
    if cfg.write_problem:
        save_problem(p, out / "problem.txt")
    save_solution(sol, out / "solution.txt")
    print(f"level {n} optimum {sol.optimum:.6f} gap {sol.gapEstimate:.3e}")
    return EXIT_OK


def cmd_round(cfg: RunConfig) -> int:
    if cfg.solution:
        sol = load_solution(cfg.solution)
    else:
        g = _game(cfg)
        n = cfg.level or 2
        if n < 2:
            raise WeightError("level 1 has no interior weight levels; rounding needs N >= 2")
        sol = solve(build_level(g, n), tol=cfg.tol)
    n = sol.problem.level
    if n < 2:
        raise WeightError("level 1 has no interior weight levels; rounding needs N >= 2")
    if sol.status != "solved":
        print(f"solver status {sol.status}", file=sys.stderr)
        return EXIT_SOLVER
    run = rounding_pipeline(sol, weights=_weights(cfg, n), seed=cfg.seed)
    vr, cr, ir = run.value, run.commutators, run.identities
    ok_value = vr.value_error <= cfg.verify_tol and vr.entry_error <= cfg.verify_tol
    ok_garbage = vr.garbage_max <= 1e-8 and vr.min_eigenvalue >= -1e-8
    ok_comm = cr.holds and cr.garbage_holds
    ok_ident = ir.passed
    tag = {True: "OK", False: "FAIL"}
    print(f"value match {vr.value_error:.1e} {tag[ok_value]}; maxComm {cr.max_commutator:.6g}; "
          f"bound C0/sqrt(N-1) = {cr.bound:.6g} {tag[cr.holds]}")
    print(f"rounded value {vr.rounded_value:.9g} sdp value {vr.sdp_value:.9g} "
          f"entry error {vr.entry_error:.1e}")
    print(f"garbage max {vr.garbage_max:.1e} {tag[ok_garbage]}; garbage commutator "
          f"{cr.max_garbage:.6g} {tag[cr.garbage_holds]}")
    print(f"identity residual max {ir.max_residual:.1e} {tag[ok_ident]}")
    out = _outdir(cfg)
    save_rounded(run.strategy, out / "rounded")
    report = {"level": n, "valueError": vr.value_error, "entryError": vr.entry_error,
              "roundedValue": vr.rounded_value, "sdpValue": vr.sdp_value,
              "garbageMax": vr.garbage_max, "minEigenvalue": vr.min_eigenvalue,
              "maxCommutator": cr.max_commutator, "maxGarbageCommutator": cr.max_garbage,
              "bound": cr.bound, "identityResiduals": ir.residuals}
    write_atomic(out / "rounded" / "report.json", json.dumps(report, indent=1) + "\n")
    if cfg.strict and not (ok_value and ok_garbage and ok_comm and ok_ident):
        return EXIT_VERIFY
    return EXIT_OK


def cmd_study(cfg: RunConfig) -> int:
    if not cfg.levels:
        raise InputError("empty levels list")
    g = _game(cfg)
    rows = study_convergence(g, cfg.levels, tol=cfg.tol, weights=None)
    text = table_csv(STUDY_COLUMNS, [r.cells() for r in rows])
    write_atomic(_outdir(cfg) / "study.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_extract(cfg: RunConfig) -> int:
    if not cfg.csp:
        raise InputError("extraction needs --csp PATH")
    csp = load_csp(cfg.csp)
    g = gm.oracularize(csp)
    source = cfg.strategy
    if source == "honest":
        s = gm.honest_strategy(g, _best_assignments(csp)[0])
    elif source == "rounded":
        n = cfg.level or 2
        if n < 2:
            raise WeightError("level 1 has no interior weight levels; rounding needs N >= 2")
        best = _best_assignments(csp)
        if csp.satisfied_weight(best[0]) < 1.0 - 1e-12:
            print("note: instance is unsatisfiable; rounding the moment point of the best "
                  "classical strategies, which is not an optimal relaxation point",
                  file=sys.stderr)
        gs = gram_from_strategy(build_word_index(g, n), gm.mixed_honest_strategy(g, best))
        s = round_solution(gs, weights=_weights(cfg, n)).to_strategy()
    else:
        s = load_rounded_strategy(source)
    try:
        rep = soundness_check(csp, s, samples=cfg.samples, seed=cfg.seed, game=g)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    text = extraction_csv([rep])
    write_atomic(_outdir(cfg) / "extraction.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def _best_assignments(csp) -> list:
    import itertools
    if csp.nvars > 20:
        raise InputError("too many variables to enumerate assignments")
    scored = [(csp.satisfied_weight(z), z) for z in itertools.product((0, 1), repeat=csp.nvars)]
    top = max(w for w, _ in scored)
    return [z for w, z in scored if w >= top - 1e-12]


def cmd_fixtures(cfg: RunConfig) -> int:
    ok = True
    print("d,commutatorNorm,expected")
    for d, got, want in voiculescu_table([2**k for k in range(1, 9)]):
        print(f"{d},{got:.12g},{want:.12g}")
    full = voiculescu_table(range(2, 257))
    err = max(abs(got - want) for _, got, want in full)
    good = err <= 1e-10
    ok &= good
    print(f"suite voiculescu d=2..256 max error {err:.1e} {'PASS' if good else 'FAIL'}")
    for res in (com_power_suite(1000, cfg.seed, form="stated"),
                com_power_suite(1000, cfg.seed, form="homogeneous"),
                sq_bound_suite(100, cfg.seed), dilation_suite(100, cfg.seed)):
        ok &= res.passed
        print(f"suite {res.name} trials {res.trials} failures {res.failures} "
              f"worst ratio {res.worst:.3g} {'PASS' if res.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"solve": cmd_solve, "round": cmd_round, "study": cmd_study,
            "extract": cmd_extract, "fixtures": cmd_fixtures}


# --------------------------------------------------------------------------
# Argument handling


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qcsdp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, game=True):
        if game:
            p.add_argument("--game", help="game file (JSON)")
            p.add_argument("--builtin", choices=sorted(BUILTINS), help="built-in game")
        p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("solve", help="solve one level of the relaxation")
    common(p)
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--write-problem", action="store_true",
                   help="also write the literal constraint system")

    p = sub.add_parser("round", help="round a solution into a strategy and verify it")
    common(p)
    p.add_argument("--solution", help="solution file written by 'solve'")
    p.add_argument("--level", type=int)
    p.add_argument("--weights", help='JSON file {"p": [...], "q": [...]} over levels 0..N')
    p.add_argument("--verify-tol", type=float, default=1e-6)
    p.add_argument("--strict", action="store_true", help="exit 4 on any failed check")

    p = sub.add_parser("study", help="sweep levels and tabulate the rounding")
    common(p)
    p.add_argument("--levels", required=True, help="a..b or a comma-separated list")

    p = sub.add_parser("extract", help="extract assignments from a strategy")
    common(p, game=False)
    p.add_argument("--csp", required=True, help="constraint system file (JSON)")
    p.add_argument("--strategy", default="honest",
                   help="'honest', 'rounded', or a directory written by 'round'")
    p.add_argument("--level", type=int)
    p.add_argument("--weights")
    p.add_argument("--samples", type=int, default=10_000)

    p = sub.add_parser("fixtures", help="run the fixed numerical suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    kw = {k: v for k, v in vars(ns).items() if v is not None}
    if "levels" in kw:
        kw["levels"] = parse_levels(kw["levels"])
    cfg = RunConfig(**kw)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.command](cfg)
    except (InputError, FormatError, WeightError, SizeCapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # keep the documented exit codes
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
