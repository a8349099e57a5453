"""Command-line entry point.

Subcommands: check, run, explore, infer-sync, emit, fuzz. Exit codes:
0 success, 1 diagnostics reported, 2 stuck or counterexample found,
3 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import pathlib
import subprocess
import sys
from typing import List, Optional

from . import machine as mach
from .diagnostics import Diagnostic, ParseError
from .emit import emit_cuda_with_info
from .harness import GenConfig, recheck_state, safety_experiment
from .parser import parse
from .syncinfer import (arrive_motion, build_dcfg, insert_sync_points,
                        verify_plan, wait_motion)
from .typeck import check_program

EXIT_OK = 0
EXIT_DIAGS = 1
EXIT_STUCK = 2
EXIT_USAGE = 3


def _color_enabled() -> bool:
    setting = os.environ.get("BUNDL_COLOR")
    if setting is not None:
        return setting == "1"
    return sys.stderr.isatty()


def _load(path: str, as_json: bool):
    try:
        text = pathlib.Path(path).read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None, None
    try:
        program, diags = parse(text)
    except ParseError as exc:
        print(f"{path}:{exc}", file=sys.stderr)
        return None, None
    return program, diags


def _report(diags: List[Diagnostic], as_json: bool) -> None:
    if as_json:
        print("[" + ",\n ".join(d.to_json() for d in diags) + "]"
              if diags else "[]")
        return
    color = _color_enabled()
    for d in diags:
        print(d.render(color), file=sys.stderr)


def cmd_check(args) -> int:
    program, diags = _load(args.file, args.json)
    if program is None:
        return EXIT_USAGE
    report = check_program(program)
    all_diags = list(diags) + report.diagnostics
    _report(all_diags, args.json)
    return EXIT_DIAGS if all_diags else EXIT_OK


def _plan_for(program):
    graph = build_dcfg(program)
    plan = insert_sync_points(graph)
    plan = wait_motion(plan, program)
    plan = arrive_motion(plan, program)
    return plan


def cmd_run(args) -> int:
    program, diags = _load(args.file, False)
    if program is None:
        return EXIT_USAGE
    report = check_program(program)
    all_diags = list(diags) + report.diagnostics
    if all_diags and not args.force:
        _report(all_diags, False)
        return EXIT_DIAGS
    trace_file = open(args.trace, "w") if args.trace else None
    step_no = 0

    def on_step(state, record):
        nonlocal step_no
        step_no += 1
        if trace_file is not None:
            trace_file.write(json.dumps({
                "step": step_no,
                "t": record.t,
                "b": record.b,
                "rule": record.rule,
                "stmt_summary": _summary(record.stmt),
                "psi_deltas": [list(d) for d in record.sem_deltas],
            }) + "\n")
        if args.preserve_check:
            failures = recheck_state(program, state)
            if failures:
                raise SystemExit(f"preservation failure at step {step_no}: "
                                 f"{failures[0]}")

    result = mach.run(program, mach.RandomScheduler(args.seed), args.max_steps,
                      on_step=on_step)
    if trace_file is not None:
        trace_file.close()
    print(f"{result.kind} after {result.steps} steps")
    if result.kind == mach.STUCK:
        stuck = result.stuck
        print(f"thread {stuck.t} block {stuck.b}: {stuck.reason.value}: "
              f"{stuck.detail}", file=sys.stderr)
        return EXIT_STUCK
    return EXIT_OK


def _summary(stmt) -> str:
    name = type(stmt).__name__
    for attr in ("name", "src", "fname", "sem"):
        value = getattr(stmt, attr, None)
        if value is not None:
            return f"{name}({value})"
    return name


def cmd_explore(args) -> int:
    program, diags = _load(args.file, False)
    if program is None:
        return EXIT_USAGE
    report = check_program(program)
    all_diags = list(diags) + report.diagnostics
    if all_diags and not args.force:
        _report(all_diags, False)
        return EXIT_DIAGS
    try:
        result = mach.enumerate_schedules(program, args.max_steps)
    except mach.ExplorationBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps({
        "outcomes": sorted(result.outcomes),
        "distinct_final_memories": len(result.final_globals),
        "configurations": result.configs,
    }))
    if mach.STUCK in result.outcomes:
        for stuck in result.stuck[:3]:
            print(f"stuck: thread {stuck.t}: {stuck.reason.value}: "
                  f"{stuck.detail}", file=sys.stderr)
        return EXIT_STUCK
    return EXIT_OK


def cmd_infer_sync(args) -> int:
    program, diags = _load(args.file, False)
    if program is None:
        return EXIT_USAGE
    report = check_program(program)
    all_diags = list(diags) + report.diagnostics
    if all_diags:
        _report(all_diags, False)
        return EXIT_DIAGS
    plan = _plan_for(program)
    payload = json.dumps(plan.to_json_list(), indent=2)
    if args.emit_sync_plan:
        pathlib.Path(args.emit_sync_plan).write_text(payload + "\n")
    else:
        print(payload)
    if args.verify:
        result = verify_plan(plan, program, args.max_steps)
        if not result.ok:
            for v in result.violations[:3]:
                print(f"counterexample: {v.message}", file=sys.stderr)
            return EXIT_STUCK
        print("plan verified against the naive plan", file=sys.stderr)
    return EXIT_OK


def cmd_emit(args) -> int:
    program, diags = _load(args.file, False)
    if program is None:
        return EXIT_USAGE
    report = check_program(program)
    all_diags = list(diags) + report.diagnostics
    if all_diags:
        _report(all_diags, False)
        return EXIT_DIAGS
    plan = _plan_for(program)
    text, info = emit_cuda_with_info(program, plan)
    out_dir = pathlib.Path(args.out_dir) if args.out_dir else \
        pathlib.Path(args.file).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / (pathlib.Path(args.file).stem + ".cu")
    out_path.write_text(text)
    print(out_path)
    if args.try_nvcc:
        nvcc = _which("nvcc")
        if nvcc is None:
            print("nvcc not found; skipping compile check", file=sys.stderr)
        else:
            proc = subprocess.run([nvcc, "-c", str(out_path), "-o", os.devnull],
                                  capture_output=True, text=True)
            if proc.returncode != 0:
                print(proc.stderr, file=sys.stderr)
                return EXIT_DIAGS
    return EXIT_OK


def _which(name: str) -> Optional[str]:
    for d in os.environ.get("PATH", "").split(os.pathsep):
        candidate = os.path.join(d, name)
        if os.path.isfile(candidate) and os.access(candidate, os.X_OK):
            return candidate
    return None


def cmd_fuzz(args) -> int:
    report = safety_experiment(
        GenConfig(seed=args.seed), n_programs=args.programs,
        n_schedules=args.schedules, max_steps=args.max_steps,
        preserve_sample=args.preserve_sample, shrink_dir=args.shrink_dir)
    print(json.dumps(report.to_dict(), indent=2))
    if report.stuck_count or report.preservation_failures:
        return EXIT_STUCK
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="bundl",
        description="Check, execute, and compile perspective-typed GPU kernels.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("check", help="typecheck a program")
    p.add_argument("file")
    p.add_argument("--json", action="store_true",
                   help="machine-readable diagnostics")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("run", help="execute under a seeded random schedule")
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=100_000)
    p.add_argument("--trace", help="write a JSONL trace")
    p.add_argument("--preserve-check", action="store_true",
                   help="re-typecheck every intermediate configuration")
    p.add_argument("--force", action="store_true",
                   help="run even if checking fails")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("explore", help="enumerate every schedule")
    p.add_argument("file")
    p.add_argument("--max-steps", type=int, default=40,
                   help="per-thread step bound")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("infer-sync", help="compute barrier placements")
    p.add_argument("file")
    p.add_argument("--emit-sync-plan", help="write the plan as JSON")
    p.add_argument("--verify", action="store_true",
                   help="exhaustively compare against the naive plan")
    p.add_argument("--max-steps", type=int, default=40)
    p.set_defaults(func=cmd_infer_sync)

    p = sub.add_parser("emit", help="lower to CUDA-like source")
    p.add_argument("file")
    p.add_argument("--out-dir")
    p.add_argument("--try-nvcc", action="store_true")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("fuzz", help="generate programs and hunt for stuck states")
    p.add_argument("--programs", type=int, default=100)
    p.add_argument("--schedules", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=10_000)
    p.add_argument("--preserve-sample", type=int, default=0)
    p.add_argument("--shrink-dir")
    p.set_defaults(func=cmd_fuzz)

    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
