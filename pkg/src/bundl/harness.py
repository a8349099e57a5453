"""Random well-typed program generation and the empirical safety runs.

Generation is typing-rule directed: at each site the generator picks among
statement forms whose side conditions are satisfiable under the current
perspective, context, and budget, so every emitted program typechecks by
construction (and is verified once more before being returned). Barrier
sites are restricted to placements whose counting semantics can release,
so runs normally finish rather than spin.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from . import machine as mach
from . import syntax as ast
from .diagnostics import Diagnostic
from .persp import (BLOCK1, GRID1, THREAD1, Level, MachineParams, Perspective,
                    align_to, destruct)
from .printer import pretty_print
from .typeck import Checker, TypingContext, check_program


class GenGiveUp(Exception):
    """The generator could not produce a well-typed program."""


@dataclass
class GenConfig:
    seed: int = 0
    max_depth: int = 3
    max_array_len: int = 8
    machine: MachineParams = field(default_factory=lambda: MachineParams(2, 2))
    enable_async: bool = True
    enable_claim: bool = True
    enable_while: bool = True
    enable_partition: bool = True
    retries: int = 3


@dataclass
class _GVar:
    persp: Perspective
    ty: ast.ValueType
    length: int = 0


class _Gen:
    def __init__(self, cfg: GenConfig, coverage: Optional[Dict[str, int]] = None):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.machine = cfg.machine
        self.coverage = coverage if coverage is not None else {}
        self.next_name = 0
        self.next_sem = 0
        self.next_tag = 0
        self.used_syncthreads = False

    def tally(self, rule: str) -> None:
        self.coverage[rule] = self.coverage.get(rule, 0) + 1

    def fresh(self, hint: str) -> str:
        self.next_name += 1
        return f"{hint}{self.next_name - 1}"

    def sem(self) -> int:
        self.next_sem += 1
        return self.next_sem - 1

    def tag(self) -> int:
        self.next_tag += 1
        return self.next_tag - 1

    # --- expressions ---
    def int_expr(self, pi: Perspective, env: Dict[str, _GVar], depth: int = 1) -> ast.Expr:
        choices = ["lit", "rel"]
        int_vars = [n for n, v in env.items()
                    if v.ty == ast.INT and v.persp == pi]
        if int_vars:
            choices.append("var")
        arrays = [n for n, v in env.items() if self.readable_array(pi, v)]
        if arrays and depth > 0:
            choices.append("read")
        if depth > 0:
            choices += ["bop"]
        kind = self.rng.choice(choices)
        if kind == "lit":
            self.tally("t_int")
            return ast.IntLit(self.rng.randrange(0, 5))
        if kind == "rel":
            return ast.RelId()
        if kind == "var":
            self.tally("t_var")
            return ast.Var(self.rng.choice(int_vars))
        if kind == "read":
            name = self.rng.choice(arrays)
            self.tally("t_arr_access")
            return ast.ArrAccess(ast.Var(name), self.index_expr(pi, env, env[name].length))
        self.tally("t_bop")
        op = self.rng.choice(["+", "-", "*"])
        return ast.Bop(op, self.int_expr(pi, env, depth - 1),
                       self.int_expr(pi, env, depth - 1))

    def index_expr(self, pi: Perspective, env: Dict[str, _GVar], length: int) -> ast.Expr:
        if length <= 0:
            return ast.IntLit(0)
        if self.rng.random() < 0.5:
            return ast.IntLit(self.rng.randrange(0, length))
        return ast.Bop("%", ast.RelId(), ast.IntLit(length))

    def bool_expr(self, pi: Perspective, env: Dict[str, _GVar]) -> ast.Expr:
        self.tally("t_cmp")
        op = self.rng.choice(["<", "<=", ">", ">=", "==", "!="])
        return ast.Cmp(op, self.int_expr(pi, env), self.int_expr(pi, env))

    def readable_array(self, pi: Perspective, v: _GVar) -> bool:
        if not isinstance(v.ty, ast.ArrayType) or v.ty.base != ast.BaseType.INT:
            return False
        if v.ty.mem == ast.MemKind.SHARED and not _narrower_eq(pi, BLOCK1):
            return False
        return _narrower_eq(pi, v.persp)

    def writable_arrays(self, pi: Perspective, env: Dict[str, _GVar]) -> List[str]:
        out = []
        for n, v in env.items():
            if not isinstance(v.ty, ast.ArrayType) or v.ty.base != ast.BaseType.INT:
                continue
            if v.ty.mem == ast.MemKind.SHARED and not _narrower_eq(pi, BLOCK1):
                continue
            if _narrower_eq(v.persp, pi):
                out.append(n)
        return out

    # --- statements ---
    def block(self, pi: Perspective, env: Dict[str, _GVar], depth: int,
              uniform: bool, length: Optional[int] = None) -> ast.Stmt:
        n = length if length is not None else self.rng.randrange(1, 4)
        return self.stmts(pi, dict(env), depth, uniform, n)

    def stmts(self, pi: Perspective, env: Dict[str, _GVar], depth: int,
              uniform: bool, n: int) -> ast.Stmt:
        if n <= 0:
            self.tally("t_skip")
            return ast.Skip()
        s, env = self.stmt(pi, env, depth, uniform)
        if n == 1:
            return s
        self.tally("t_seq")
        return _attach(s, self.stmts(pi, env, depth, uniform, n - 1))

    def stmt(self, pi: Perspective, env: Dict[str, _GVar], depth: int,
             uniform: bool) -> Tuple[ast.Stmt, Dict[str, _GVar]]:
        arms = ["skip", "decl", "alloc"]
        writable = self.writable_arrays(pi, env)
        if writable:
            arms += ["arr_assn", "arr_assn"]
        scalars = [n for n, v in env.items() if v.ty == ast.INT and v.persp == pi]
        if scalars:
            arms.append("assn")
        if depth > 0:
            arms += ["if", "seq_pair"]
            if self.cfg.enable_while:
                arms.append("while")
            if pi.count > 1:
                arms.append("group")
                if self.split_pairs(pi.count):
                    arms.append("split")
            if destruct(pi, self.machine) is not None:
                arms.append("destruct")
            if pi == BLOCK1 and uniform and self.machine.blocks_per_grid == 1 \
                    and not self.used_syncthreads:
                # one barrier call per program: successive calls share the
                # intrinsic's counter slot and can slip phases
                arms.append("call_sync")
            if self.partition_ok(pi, uniform) and self.cfg.enable_partition:
                arms.append("partition")
                arms.append("lower_chain")
                if self.cfg.enable_claim and self.claim_count(pi) is not None:
                    arms.append("claim")
            if pi == THREAD1 and self.cfg.enable_async:
                arms.append("async")
            arms.append("memcpy")
        kind = self.rng.choice(arms)
        return getattr(self, "arm_" + kind)(pi, env, depth, uniform)

    def arm_skip(self, pi, env, depth, uniform):
        self.tally("t_skip")
        return ast.Skip(), env

    def arm_decl(self, pi, env, depth, uniform):
        self.tally("t_decl")
        name = self.fresh("v")
        persp = pi if self.rng.random() < 0.7 else THREAD1
        init = self.int_expr(pi, env)
        env2 = dict(env)
        env2[name] = _GVar(persp, ast.INT)
        # the declared name is readable only where perspectives match
        return ast.Decl(name, ast.INT, persp, init, ast.Skip()), env2

    def arm_alloc(self, pi, env, depth, uniform):
        name = self.fresh("a")
        kinds = [ast.MemKind.LOCAL, ast.MemKind.GLOBAL]
        if pi == BLOCK1:
            kinds.append(ast.MemKind.SHARED)
        mem = self.rng.choice(kinds)
        self.tally("t_alloc_shared" if mem == ast.MemKind.SHARED else "t_alloc")
        length = self.rng.randrange(1, self.cfg.max_array_len + 1)
        env2 = dict(env)
        env2[name] = _GVar(pi, ast.ArrayType(ast.BaseType.INT, mem), length)
        # Reads of fresh cells yield poison; fill the array so later reads
        # stay inside well-typed environments.
        idx = self.fresh("i")
        fill = ast.Decl(
            idx, ast.INT, pi, ast.IntLit(0),
            ast.While(
                ast.Cmp("<", ast.Var(idx), ast.IntLit(length)),
                ast.Seq(ast.ArrAssn(ast.Var(name), ast.Var(idx), ast.IntLit(0)),
                        ast.Assn(idx, ast.Bop("+", ast.Var(idx), ast.IntLit(1))))))
        return ast.Alloc(name, mem, ast.BaseType.INT, length, fill), env2

    def arm_assn(self, pi, env, depth, uniform):
        self.tally("t_assn")
        scalars = [n for n, v in env.items() if v.ty == ast.INT and v.persp == pi]
        return ast.Assn(self.rng.choice(scalars), self.int_expr(pi, env)), env

    def arm_arr_assn(self, pi, env, depth, uniform):
        name = self.rng.choice(self.writable_arrays(pi, env))
        v = env[name]
        self.tally("t_arr_assn_shared" if v.ty.mem == ast.MemKind.SHARED
                   else "t_arr_assn")
        return ast.ArrAssn(ast.Var(name), self.index_expr(pi, env, v.length),
                           self.int_expr(pi, env)), env

    def arm_if(self, pi, env, depth, uniform):
        self.tally("t_if")
        # conditions may diverge across units, so no barriers inside
        return ast.If(self.bool_expr(pi, env),
                      self.block(pi, env, depth - 1, False),
                      self.block(pi, env, depth - 1, False)), env

    def arm_seq_pair(self, pi, env, depth, uniform):
        self.tally("t_seq")
        s1, env1 = self.stmt(pi, env, depth - 1, uniform)
        s2, env2 = self.stmt(pi, env1, depth - 1, uniform)
        return _attach(s1, s2), env2

    def arm_while(self, pi, env, depth, uniform):
        self.tally("t_while")
        name = self.fresh("i")
        bound = self.rng.randrange(1, 3)
        # the counter stays out of the body's scope so it only decreases;
        # loop bodies take no barriers (semaphore reuse can slip phases)
        body = _attach(self.block(pi, env, depth - 1, False, 1),
                       ast.Assn(name, ast.Bop("-", ast.Var(name), ast.IntLit(1))))
        loop = ast.While(ast.Cmp(">", ast.Var(name), ast.IntLit(0)), body)
        return ast.Decl(name, ast.INT, pi, ast.IntLit(bound), loop), env

    def arm_group(self, pi, env, depth, uniform):
        self.tally("t_group")
        divisors = [q for q in range(2, pi.count + 1) if pi.count % q == 0]
        q = self.rng.choice(divisors) if divisors else 1
        inner = Perspective(pi.level, pi.count // q)
        return ast.Group(q, self.block(pi=inner, env=env, depth=depth - 1,
                                       uniform=uniform)), env

    def split_pairs(self, n: int) -> List[Tuple[int, int]]:
        pairs = []
        for n1 in range(1, n):
            for n2 in range(1, n - n1 + 1):
                if align_to(n1, n2, n):
                    pairs.append((n1, n2))
        return pairs

    def arm_split(self, pi, env, depth, uniform):
        self.tally("t_split")
        n1, n2 = self.rng.choice(self.split_pairs(pi.count))
        left = self.block(Perspective(pi.level, n1), env, depth - 1, False)
        right = self.block(Perspective(pi.level, n2), env, depth - 1, False)
        return ast.Split(n1, n2, left, right), env

    def arm_destruct(self, pi, env, depth, uniform):
        self.tally("t_destruct")
        inner = destruct(pi, self.machine)
        return ast.Destruct(self.block(inner, env, depth - 1, uniform)), env

    def arm_call_sync(self, pi, env, depth, uniform):
        self.tally("t_function_call")
        self.used_syncthreads = True
        return ast.Call("syncthreads", ()), env

    # Barrier sites: only placements where the units sharing each counter
    # slot number exactly size(pi), so init/dec/wait counting releases.
    def partition_ok(self, pi: Perspective, uniform: bool) -> bool:
        if not uniform:
            return False
        t = self.machine.threads_per_block
        b = self.machine.blocks_per_grid
        if pi == GRID1:
            return True
        if pi.level == Level.THREAD:
            return pi.count * pi.count == t * b
        return pi.count * pi.count == b

    def claim_count(self, pi: Perspective) -> Optional[int]:
        n = pi.count
        if n >= 2 and n % 2 == 0 and align_to(n // 2, n - n // 2, n):
            return n // 2
        return None

    def arm_partition(self, pi, env, depth, uniform):
        self.tally("t_partition")
        chunk = self.rng.choice([c for c in range(1, pi.count + 1)
                                 if pi.count % c == 0])
        name = self.fresh("a")
        dst = self.fresh("y")
        length = chunk * pi.count
        writes: List[ast.Stmt] = []
        for j in range(self.rng.randrange(1, min(chunk, 2) + 1)):
            writes.append(ast.ArrAssn(ast.Var(dst), ast.IntLit(j),
                                      self.int_expr(pi, env)))
        part = ast.Partition(self.sem(), name, dst, chunk, ast.seq_of(writes),
                             site=f"{name}->{dst}")
        return ast.Alloc(name, ast.MemKind.GLOBAL, ast.BaseType.INT, length, part), env

    def arm_lower_chain(self, pi, env, depth, uniform):
        if destruct(pi, self.machine) is None:
            return self.arm_partition(pi, env, depth, uniform)
        self.tally("t_lower")
        name = self.fresh("a")
        dst = self.fresh("y")
        length = self.rng.randrange(1, self.cfg.max_array_len + 1)
        low = ast.Lower(self.sem(), name, dst, ast.Skip(), site=f"{name}->{dst}")
        return ast.Alloc(name, ast.MemKind.GLOBAL, ast.BaseType.INT, length, low), env

    def arm_claim(self, pi, env, depth, uniform):
        self.tally("t_claim")
        count = self.claim_count(pi)
        name = self.fresh("a")
        dst = self.fresh("y")
        length = self.rng.randrange(1, self.cfg.max_array_len + 1)
        narrowed = Perspective(pi.level, count)
        body = ast.ArrAssn(ast.Var(dst),
                           self.index_expr(narrowed, {}, length),
                           ast.IntLit(self.rng.randrange(0, 9)))
        claim = ast.Claim(self.sem(), name, dst, count, body, site=f"{name}->{dst}")
        return ast.Alloc(name, ast.MemKind.GLOBAL, ast.BaseType.INT, length, claim), env

    def arm_async(self, pi, env, depth, uniform):
        self.tally("t_async_partition")
        self.tally("t_async_memcpy")
        src = self.fresh("a")
        other = self.fresh("b")
        dst = self.fresh("y")
        length = self.rng.randrange(1, 5)
        body = ast.AsyncMemcpy(dst, other)
        out = ast.Alloc(
            src, ast.MemKind.GLOBAL, ast.BaseType.INT, length,
            ast.Alloc(other, ast.MemKind.GLOBAL, ast.BaseType.INT, length,
                      ast.AsyncPartition(self.tag(), src, dst, body,
                                         site=f"{src}->{dst}")))
        return out, env

    def arm_memcpy(self, pi, env, depth, uniform):
        self.tally("t_memcpy")
        a = self.fresh("a")
        b = self.fresh("b")
        length = self.rng.randrange(1, 5)
        out = ast.Alloc(
            a, ast.MemKind.GLOBAL, ast.BaseType.INT, length,
            ast.Alloc(b, ast.MemKind.GLOBAL, ast.BaseType.INT, length,
                      ast.Memcpy(a, b)))
        return out, env

    def entry(self, depth: int) -> ast.Stmt:
        """Whole-program body: usually descend to a varied perspective first."""
        target = self.pick_start()
        body = self.block(target, {}, depth, True, self.rng.randrange(1, 4))
        cur = GRID1
        wrappers: List[Tuple[str, int]] = []
        while cur.level > target.level:
            if cur.count != 1:
                wrappers.append(("group", cur.count))
                cur = Perspective(cur.level, 1)
            wrappers.append(("destruct", 0))
            cur = destruct(cur, self.machine)
        if cur.count % target.count == 0 and cur != target:
            wrappers.append(("group", cur.count // target.count))
        for kind, q in reversed(wrappers):
            if kind == "group":
                self.tally("t_group")
                body = ast.Group(q, body)
            else:
                self.tally("t_destruct")
                body = ast.Destruct(body)
        return body

    def pick_start(self) -> Perspective:
        m = self.machine
        options = [GRID1, BLOCK1, THREAD1,
                   Perspective(Level.THREAD, m.threads_per_block)]
        for n in range(2, m.threads_per_block + 1):
            if m.threads_per_block % n == 0:
                options.append(Perspective(Level.THREAD, n))
        return self.rng.choice(options)


def _narrower_eq(p1: Perspective, p2: Perspective) -> bool:
    from .persp import narrower_eq
    return narrower_eq(p1, p2)


def _attach(s: ast.Stmt, rest: ast.Stmt) -> ast.Stmt:
    """Join a statement with the rest of its block, keeping binder scopes
    extended to the block end (the shape the parser produces)."""
    if isinstance(s, (ast.Decl, ast.Alloc)):
        return replace(s, body=_attach(s.body, rest))
    if isinstance(s, ast.Skip):
        return rest
    if isinstance(s, ast.Seq):
        return ast.Seq(s.first, _attach(s.second, rest))
    return ast.Seq(s, rest)


def gen_well_typed(cfg: GenConfig, coverage: Optional[Dict[str, int]] = None) -> ast.Program:
    """Generate a program that check_program accepts, or raise GenGiveUp."""
    last: List[Diagnostic] = []
    for attempt in range(cfg.retries):
        g = _Gen(replace(cfg, seed=cfg.seed + 7919 * attempt), coverage)
        entry = g.entry(cfg.max_depth)
        probe = ast.Program(cfg.machine, (), entry, 10 ** 9)
        report = check_program(probe)
        if report.ok:
            program = ast.Program(cfg.machine, (), entry, report.mem_used)
            final = check_program(program)
            if final.ok:
                return program
            last = final.diagnostics
        else:
            last = report.diagnostics
    raise GenGiveUp(f"seed {cfg.seed}: {[d.render() for d in last[:3]]}")


# ---------------------------------------------------------------------------
# Preservation re-checking


def context_from_memories(funcs: Dict[str, ast.FuncDef], machine: MachineParams,
                          eta: mach.Memory, sigma: mach.Memory,
                          Sigma: mach.Memory) -> TypingContext:
    bindings: Dict[str, Tuple[Perspective, ast.ValueType]] = {}
    for mem in (Sigma, sigma, eta):
        for loc, (persp, value) in mem.items():
            if not isinstance(loc, str):
                continue
            ty = _type_of_value(value, funcs)
            if ty is not None:
                bindings[loc] = (persp, ty)
    return TypingContext(bindings, machine)


def _type_of_value(value, funcs) -> Optional[ast.ValueType]:
    if isinstance(value, mach.VInt):
        return ast.INT
    if isinstance(value, mach.VFloat):
        return ast.FLOAT
    if isinstance(value, mach.VBool):
        return ast.BOOL
    if isinstance(value, mach.VArr):
        return ast.ArrayType(value.elem, value.mem)
    if isinstance(value, mach.VAsync):
        return ast.AsyncType(ast.ArrayType(value.inner.elem, value.inner.mem))
    if isinstance(value, mach.VClosure):
        f = funcs.get(value.fname)
        return f.signature() if f else None
    if isinstance(value, mach.VUndef):
        return None
    return None


def recheck_state(program: ast.Program, state: mach.MachineState) -> List[str]:
    """Re-typecheck every thread's residual statement and its environment."""
    funcs = mach.function_table(program)
    failures: List[str] = []
    for (t, b), (stmt, m) in sorted(state.pool.items()):
        eta = state.locals_[t]
        sigma = state.shared[b]
        Sigma = state.global_
        ctx = context_from_memories(funcs, program.machine, eta, sigma, Sigma)
        env_diag = Checker(program.machine, program.functions).check_env(
            ctx, eta, sigma, Sigma)
        if env_diag is not None:
            failures.append(f"thread {t}: env: {env_diag.render()}")
        checker = Checker(program.machine, program.functions)
        checker.check_stmt(ctx, GRID1, m, stmt)
        for d in checker.diags:
            failures.append(f"thread {t}: {d.render()}")
    return failures


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class ExperimentReport:
    programs: int = 0
    schedules: int = 0
    steps_total: int = 0
    outcomes: Dict[str, int] = field(default_factory=dict)
    stuck_count: int = 0
    preservation_failures: List[str] = field(default_factory=list)
    coverage: Dict[str, int] = field(default_factory=dict)
    counterexamples: List[Tuple[int, int, str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "programs": self.programs,
            "schedules": self.schedules,
            "steps_total": self.steps_total,
            "outcomes": dict(sorted(self.outcomes.items())),
            "stuck_count": self.stuck_count,
            "preservation_failures": len(self.preservation_failures),
            "coverage": dict(sorted(self.coverage.items())),
        }


_MACHINES = [MachineParams(2, 2), MachineParams(4, 1), MachineParams(2, 1),
             MachineParams(1, 2), MachineParams(1, 1)]


def safety_experiment(base: GenConfig, n_programs: int, n_schedules: int,
                      max_steps: int, preserve_sample: int = 0,
                      shrink_dir: Optional[str] = None) -> ExperimentReport:
    report = ExperimentReport(programs=n_programs, schedules=n_schedules)
    for i in range(n_programs):
        cfg = replace(base, seed=base.seed + i,
                      machine=_MACHINES[i % len(_MACHINES)])
        program = gen_well_typed(cfg, report.coverage)
        preserve = i < preserve_sample
        for j in range(n_schedules):
            on_step = None
            if preserve and j == 0:
                def on_step(st, rec, _p=program, _r=report):
                    fails = recheck_state(_p, st)
                    _r.preservation_failures.extend(fails)
            result = mach.run(program, mach.RandomScheduler(j), max_steps,
                              on_step=on_step)
            report.steps_total += result.steps
            report.outcomes[result.kind] = report.outcomes.get(result.kind, 0) + 1
            if result.kind == mach.STUCK:
                report.stuck_count += 1
                reason = result.stuck.reason.value
                minimized = shrink_program(
                    program,
                    lambda p: _reproduces(p, j, max_steps, reason))
                text = pretty_print(minimized)
                report.counterexamples.append((cfg.seed, j, reason, text))
                if shrink_dir:
                    import pathlib

                    path = pathlib.Path(shrink_dir)
                    path.mkdir(parents=True, exist_ok=True)
                    (path / f"stuck_{cfg.seed}_{j}.bdl").write_text(text)
    return report


def _reproduces(program: ast.Program, seed: int, max_steps: int, reason: str) -> bool:
    result = mach.run(program, mach.RandomScheduler(seed), max_steps)
    return result.kind == mach.STUCK and result.stuck.reason.value == reason


# ---------------------------------------------------------------------------
# Shrinking


def shrink_program(program: ast.Program, still_fails) -> ast.Program:
    """Greedy structural minimization preserving the failure predicate."""
    current = program
    improved = True
    while improved:
        improved = False
        for candidate in _shrink_candidates(current):
            if still_fails(candidate):
                current = candidate
                improved = True
                break
    return current


def _shrink_candidates(program: ast.Program):
    for path, node in _stmt_positions(program.entry):
        if isinstance(node, ast.Skip):
            continue
        yield replace(program, entry=_replace_at(program.entry, path, ast.Skip()))
        if isinstance(node, ast.Seq):
            yield replace(program, entry=_replace_at(program.entry, path, node.first))
            yield replace(program, entry=_replace_at(program.entry, path, node.second))
        for attr in ("body", "then", "els", "left", "right"):
            child = getattr(node, attr, None)
            if child is not None and not isinstance(child, ast.Skip):
                yield replace(program,
                              entry=_replace_at(program.entry, path, child))


_CHILD_FIELDS = {
    ast.Seq: ("first", "second"),
    ast.Decl: ("body",),
    ast.If: ("then", "els"),
    ast.While: ("body",),
    ast.Split: ("left", "right"),
    ast.Group: ("body",),
    ast.Destruct: ("body",),
    ast.Alloc: ("body",),
    ast.Partition: ("body",),
    ast.Claim: ("body",),
    ast.Lower: ("body",),
    ast.AsyncPartition: ("body",),
}


def _stmt_positions(s: ast.Stmt, path: Tuple = ()):
    yield path, s
    for attr in _CHILD_FIELDS.get(type(s), ()):
        child = getattr(s, attr)
        yield from _stmt_positions(child, path + (attr,))


def _replace_at(s: ast.Stmt, path: Tuple, new: ast.Stmt) -> ast.Stmt:
    if not path:
        return new
    attr = path[0]
    child = getattr(s, attr)
    return replace(s, **{attr: _replace_at(child, path[1:], new)})
