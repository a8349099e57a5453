"""Two-level small-step semantics for core programs.

The machine steps one thread at a time, chosen by a scheduler. Each step
re-enters the residual statement from the grid[1] perspective; the
perspective wrappers left in the residual (group/split/destruct) re-derive
the inner perspective and the unit's relative id. Rules that do not apply
leave the thread stuck with an explicit reason.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional, Set, Tuple

from . import syntax as ast
from .intrinsics import INTRINSICS
from .persp import (BLOCK1, GRID1, Level, MachineParams, Perspective,
                    align_to, destruct, div, narrower_eq, size)

# ---------------------------------------------------------------------------
# Values and memories


@dataclass(frozen=True)
class VInt:
    v: int


@dataclass(frozen=True)
class VFloat:
    v: float


@dataclass(frozen=True)
class VBool:
    v: bool


@dataclass(frozen=True)
class VUndef:
    pass


@dataclass(frozen=True)
class VArr:
    base: str
    length: int
    offset: int = 0
    elem: ast.BaseType = field(default=ast.BaseType.INT, compare=False)
    mem: ast.MemKind = field(default=ast.MemKind.GLOBAL, compare=False)


@dataclass(frozen=True)
class VAsync:
    inner: VArr
    tag: int


@dataclass(frozen=True)
class VClosure:
    fname: str


Value = object
Location = object  # str for bindings, (str, int) for array cells
Memory = Dict[Location, Tuple[Perspective, Value]]


class StuckReason(str, Enum):
    PERSPECTIVE_MISMATCH = "PerspectiveMismatch"
    ALIGN_FAIL = "AlignFail"
    UNDEFINED_DESTRUCT = "UndefinedDestruct"
    MISSING_VAR = "MissingVar"
    VALUE_KIND_MISMATCH = "ValueKindMismatch"
    MEM_UNDERFLOW = "MemUnderflow"
    OUT_OF_BOUNDS = "OutOfBounds"


class _Stuck(Exception):
    def __init__(self, reason: StuckReason, detail: str):
        super().__init__(f"{reason.value}: {detail}")
        self.reason = reason
        self.detail = detail


# ---------------------------------------------------------------------------
# Machine state


@dataclass
class MachineState:
    locals_: Dict[int, Memory]
    shared: Dict[int, Memory]
    global_: Memory
    pool: Dict[Tuple[int, int], Tuple[ast.Stmt, int]]
    sems: Dict[int, Dict[int, int]]
    deferred: Dict[int, FrozenSet[ast.Stmt]]
    params: MachineParams

    def clone(self) -> "MachineState":
        return MachineState(
            {t: dict(mem) for t, mem in self.locals_.items()},
            {b: dict(mem) for b, mem in self.shared.items()},
            dict(self.global_),
            dict(self.pool),
            {s: dict(c) for s, c in self.sems.items()},
            dict(self.deferred),
            self.params,
        )

    def key(self):
        def mem_key(mem: Memory):
            return tuple(sorted(
                mem.items(),
                key=lambda kv: (kv[0],) if isinstance(kv[0], str) else kv[0]))

        return (
            tuple(sorted((tb, s, m) for tb, (s, m) in self.pool.items())),
            tuple(sorted((t, mem_key(mem)) for t, mem in self.locals_.items())),
            tuple(sorted((b, mem_key(mem)) for b, mem in self.shared.items())),
            mem_key(self.global_),
            tuple(sorted((sem, tuple(sorted(c.items())))
                         for sem, c in self.sems.items() if any(c.values()))),
            tuple(sorted((tag, s) for tag, s in self.deferred.items() if s)),
        )


@dataclass(frozen=True)
class StepRecord:
    t: int
    b: int
    rule: str
    stmt: ast.Stmt
    sem_deltas: Tuple[Tuple[int, int, int], ...] = ()


@dataclass
class Stepped:
    state: MachineState
    record: StepRecord
    changed: bool = True


@dataclass
class ThreadDone:
    t: int
    b: int


@dataclass
class StuckOutcome:
    t: int
    b: int
    stmt: ast.Stmt
    reason: StuckReason
    detail: str


StepOutcome = object


# ---------------------------------------------------------------------------
# Expression evaluation


def get_entry(eta: Memory, sigma: Memory, Sigma: Memory, loc: Location):
    for mem in (eta, sigma, Sigma):
        if loc in mem:
            return mem, mem[loc]
    return None, None


def eval_expr(eta: Memory, sigma: Memory, Sigma: Memory, pi: Perspective,
              pi_target: Perspective, e: ast.Expr, machine: MachineParams,
              p: int = 0) -> Value:
    if isinstance(e, ast.Var):
        _, entry = get_entry(eta, sigma, Sigma, e.name)
        if entry is None:
            raise _Stuck(StuckReason.MISSING_VAR, f"variable {e.name!r} not in memory")
        return entry[1]
    if isinstance(e, ast.IntLit):
        return VInt(e.value)
    if isinstance(e, ast.FloatLit):
        return VFloat(e.value)
    if isinstance(e, ast.BoolLit):
        return VBool(e.value)
    if isinstance(e, ast.PartitionId):
        if pi == GRID1 or not narrower_eq(pi, GRID1):
            raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                         f"id() needs a perspective below grid[1], found {pi}")
        if not narrower_eq(pi_target, pi):
            raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                         f"id() target {pi_target} is not within {pi}")
        ratio = div(pi, pi_target, machine)
        if ratio is None:
            raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                         f"{pi} does not divide into {pi_target} views")
        return VInt(ratio - 1)
    if isinstance(e, ast.RelId):
        return VInt(p)
    if isinstance(e, ast.ArrAccess):
        arr = eval_expr(eta, sigma, Sigma, pi, pi_target, e.arr, machine, p)
        idx = eval_expr(eta, sigma, Sigma, pi, pi_target, e.idx, machine, p)
        if not isinstance(arr, VArr):
            raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                         f"indexed a non-array value {arr!r}")
        if not isinstance(idx, VInt):
            raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                         f"array index {idx!r} is not an int")
        if idx.v < 0 or idx.v >= arr.length:
            raise _Stuck(StuckReason.OUT_OF_BOUNDS,
                         f"index {idx.v} outside [0, {arr.length})")
        phys = arr.offset + idx.v
        if phys < 0 or phys >= arr.length:
            raise _Stuck(StuckReason.OUT_OF_BOUNDS,
                         f"offset view reaches cell {phys} of {arr.length}")
        _, entry = get_entry(eta, sigma, Sigma, (arr.base, phys))
        if entry is None:
            return VUndef()
        return entry[1]
    if isinstance(e, ast.Bop):
        lv = eval_expr(eta, sigma, Sigma, pi, pi_target, e.left, machine, p)
        rv = eval_expr(eta, sigma, Sigma, pi, pi_target, e.right, machine, p)
        if isinstance(lv, VArr) and isinstance(rv, VInt) and e.op == "+":
            return VArr(lv.base, lv.length, lv.offset + rv.v, lv.elem, lv.mem)
        if not isinstance(lv, VInt) or not isinstance(rv, VInt):
            raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                         f"{e.op!r} applied to {lv!r} and {rv!r}")
        a, b = lv.v, rv.v
        if e.op == "+":
            return VInt(a + b)
        if e.op == "-":
            return VInt(a - b)
        if e.op == "*":
            return VInt(a * b)
        if e.op in ("/", "%"):
            if b == 0:
                raise _Stuck(StuckReason.VALUE_KIND_MISMATCH, "division by zero")
            q = abs(a) // abs(b)
            if (a < 0) != (b < 0):
                q = -q
            return VInt(q) if e.op == "/" else VInt(a - b * q)
        raise _Stuck(StuckReason.VALUE_KIND_MISMATCH, f"unknown operator {e.op!r}")
    if isinstance(e, ast.Cmp):
        lv = eval_expr(eta, sigma, Sigma, pi, pi_target, e.left, machine, p)
        rv = eval_expr(eta, sigma, Sigma, pi, pi_target, e.right, machine, p)
        if not isinstance(lv, VInt) or not isinstance(rv, VInt):
            raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                         f"{e.op!r} applied to {lv!r} and {rv!r}")
        a, b = lv.v, rv.v
        result = {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b,
                  "==": a == b, "!=": a != b}[e.op]
        return VBool(result)
    raise TypeError(f"unknown expression {e!r}")


# ---------------------------------------------------------------------------
# Thread stepping


class ThreadStepper:
    """Steps one thread's residual statement; mutates the memory copies it
    is handed and reports the rule that fired."""

    def __init__(self, funcs: Dict[str, ast.FuncDef], params: MachineParams,
                 auto_sync: bool = True):
        self.funcs = funcs
        self.params = params
        self.auto_sync = auto_sync
        self.rule = ""
        self.leaf: Optional[ast.Stmt] = None

    def fire(self, rule: str) -> None:
        self.rule = rule

    def step(self, eta: Memory, sigma: Memory, Sigma: Memory,
             sems: Dict[int, Dict[int, int]], deferred: Dict[int, FrozenSet],
             t: int, b: int, p: int, pi: Perspective, m: int,
             s: ast.Stmt) -> Tuple[ast.Stmt, int]:
        if p >= pi.count or p < 0:
            raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                         f"unit id {p} outside the {pi} perspective")
        mach = self.params

        self.leaf = s
        if isinstance(s, ast.Seq):
            if isinstance(s.first, ast.Skip):
                self.fire("seq_done")
                return s.second, m
            first, m2 = self.step(eta, sigma, Sigma, sems, deferred, t, b, p, pi, m, s.first)
            return ast.Seq(first, s.second), m2

        if isinstance(s, ast.Decl):
            if not narrower_eq(s.persp, pi):
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"declaring at {s.persp} from code at {pi}")
            v = eval_expr(eta, sigma, Sigma, pi, s.persp, s.init, mach, p)
            eta[s.name] = (s.persp, v)
            self.fire("decl")
            return s.body, m

        if isinstance(s, ast.Assn):
            mem, entry = get_entry(eta, sigma, Sigma, s.name)
            if entry is None:
                raise _Stuck(StuckReason.MISSING_VAR, f"variable {s.name!r} not in memory")
            persp = entry[0]
            if not narrower_eq(persp, pi):
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"writing {s.name!r} at {persp} from code at {pi}")
            v = eval_expr(eta, sigma, Sigma, pi, persp, s.value, mach, p)
            mem[s.name] = (persp, v)
            self.fire("assn")
            return ast.Skip(), m

        if isinstance(s, ast.ArrAssn):
            arr = eval_expr(eta, sigma, Sigma, pi, pi, s.arr, mach, p)
            idx = eval_expr(eta, sigma, Sigma, pi, pi, s.idx, mach, p)
            if not isinstance(arr, VArr):
                raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                             f"assigned into a non-array value {arr!r}")
            if not isinstance(idx, VInt):
                raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                             f"array index {idx!r} is not an int")
            home, entry = get_entry(eta, sigma, Sigma, arr.base)
            if entry is None:
                raise _Stuck(StuckReason.MISSING_VAR,
                             f"array base {arr.base!r} not in memory")
            base_var = _base_var(s.arr)
            persp = entry[0]
            if base_var is not None:
                _, bound = get_entry(eta, sigma, Sigma, base_var)
                if bound is not None:
                    persp = bound[0]
            if not narrower_eq(persp, pi):
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"writing an array at {persp} from code at {pi}")
            v = eval_expr(eta, sigma, Sigma, pi, persp, s.value, mach, p)
            if idx.v < 0 or idx.v >= arr.length:
                raise _Stuck(StuckReason.OUT_OF_BOUNDS,
                             f"index {idx.v} outside [0, {arr.length})")
            phys = arr.offset + idx.v
            if phys < 0 or phys >= arr.length:
                raise _Stuck(StuckReason.OUT_OF_BOUNDS,
                             f"offset view reaches cell {phys} of {arr.length}")
            home[(arr.base, phys)] = (entry[0], v)
            self.fire("arr_assn")
            return ast.Skip(), m

        if isinstance(s, ast.If):
            cond = eval_expr(eta, sigma, Sigma, pi, pi, s.cond, mach, p)
            if not isinstance(cond, VBool):
                raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                             f"branch condition {cond!r} is not a bool")
            if cond.v:
                self.fire("if_true")
                return s.then, m
            self.fire("if_false")
            return s.els, m

        if isinstance(s, ast.While):
            self.fire("while_unroll")
            return ast.If(s.cond, ast.Seq(s.body, s), ast.Skip()), m

        if isinstance(s, ast.Call):
            f = self.funcs.get(s.fname)
            if f is None:
                raise _Stuck(StuckReason.MISSING_VAR, f"unknown function {s.fname!r}")
            if f.persp != pi:
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"{s.fname!r} requires {f.persp}, called at {pi}")
            if f.mem_bound > m:
                raise _Stuck(StuckReason.MEM_UNDERFLOW,
                             f"{s.fname!r} needs {f.mem_bound}, only {m} allowed")
            if len(s.args) != len(f.params):
                raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                             f"{s.fname!r} takes {len(f.params)} arguments")
            body = f.body
            for arg, (pname, ppersp, _) in zip(s.args, f.params):
                v = eval_expr(eta, sigma, Sigma, pi, ppersp, arg, mach, p)
                fresh = pname
                k = 0
                while fresh in eta:
                    fresh = f"{pname}${k}"
                    k += 1
                if fresh != pname:
                    body = ast.subst_var(body, pname, ast.Var(fresh))
                eta[fresh] = (ppersp, v)
            self.fire("call")
            return body, m

        if isinstance(s, ast.Split):
            if not align_to(s.n1, s.n2, pi.count):
                raise _Stuck(StuckReason.ALIGN_FAIL,
                             f"split({s.n1}, {s.n2}) does not align to {pi.count}")
            if p < s.n1:
                if isinstance(s.left, ast.Skip):
                    self.fire("split_left_done")
                    return ast.Skip(), m
                left, m2 = self.step(eta, sigma, Sigma, sems, deferred, t, b, p,
                                     Perspective(pi.level, s.n1), m, s.left)
                return ast.Split(s.n1, s.n2, left, s.right), m2
            if p < s.n1 + s.n2:
                if isinstance(s.right, ast.Skip):
                    self.fire("split_right_done")
                    return ast.Skip(), m
                right, m2 = self.step(eta, sigma, Sigma, sems, deferred, t, b,
                                      p - s.n1, Perspective(pi.level, s.n2), m, s.right)
                return ast.Split(s.n1, s.n2, s.left, right), m2
            self.fire("split_none")
            return ast.Skip(), m

        if isinstance(s, ast.Group):
            if isinstance(s.body, ast.Skip):
                self.fire("group_done")
                return ast.Skip(), m
            if s.q < 1 or pi.count % s.q != 0:
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"group {s.q} does not divide the {pi} perspective")
            n = pi.count // s.q
            body, m2 = self.step(eta, sigma, Sigma, sems, deferred, t, b, p % n,
                                 Perspective(pi.level, n), m, s.body)
            return ast.Group(s.q, body), m2

        if isinstance(s, ast.Destruct):
            if isinstance(s.body, ast.Skip):
                self.fire("destruct_done")
                return ast.Skip(), m
            if pi == BLOCK1:
                inner_pi = Perspective(Level.THREAD, mach.threads_per_block)
                inner_p = t % mach.threads_per_block
            elif pi == GRID1:
                inner_pi = Perspective(Level.BLOCK, mach.blocks_per_grid)
                inner_p = b % mach.blocks_per_grid
            else:
                raise _Stuck(StuckReason.UNDEFINED_DESTRUCT,
                             f"cannot destruct the {pi} perspective")
            body, m2 = self.step(eta, sigma, Sigma, sems, deferred, t, b, inner_p,
                                 inner_pi, m, s.body)
            return ast.Destruct(body), m2

        if isinstance(s, ast.Alloc):
            cost = s.length * ast.BASE_SIZE[s.base]
            handle = VArr(s.name, s.length, 0, s.base, s.mem)
            if s.mem == ast.MemKind.LOCAL:
                eta[s.name] = (pi, handle)
                self.fire("alloc_local")
            elif s.mem == ast.MemKind.SHARED:
                if pi != BLOCK1:
                    raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                                 f"shared allocation requires block[1], code at {pi}")
                sigma[s.name] = (pi, handle)
                self.fire("alloc_shared")
            else:
                Sigma[s.name] = (pi, handle)
                self.fire("alloc_global")
            return ast.Seq(s.body, ast.Free(cost)), m + cost

        if isinstance(s, ast.Free):
            if s.amount > m:
                raise _Stuck(StuckReason.MEM_UNDERFLOW,
                             f"free({s.amount}) with footprint {m}")
            self.fire("free")
            return ast.Skip(), m - s.amount

        if isinstance(s, ast.Partition):
            if s.chunk < 1 or pi.count % s.chunk != 0:
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"partition by {s.chunk} of the {pi} perspective")
            narrowed = Perspective(pi.level, pi.count // s.chunk)
            self._rename(eta, sigma, Sigma, s.src, s.dst, narrowed)
            body = ast.subst_var(
                s.body, s.dst,
                ast.Bop("+", ast.Var(s.dst), ast.IntLit(s.chunk * p)))
            self.fire("partition")
            if not self.auto_sync:
                return body, m
            return _with_barrier(s.sem, body), m

        if isinstance(s, ast.Claim):
            n2 = pi.count - s.count
            if n2 < 0:
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"claim of {s.count} units from {pi}")
            self._rename(eta, sigma, Sigma, s.src, s.dst,
                         Perspective(pi.level, s.count))
            masked = ast.Split(s.count, n2, s.body, ast.Skip())
            self.fire("claim")
            if not self.auto_sync:
                return masked, m
            return _with_barrier(s.sem, masked), m

        if isinstance(s, ast.Lower):
            lowered = destruct(pi, mach)
            if lowered is None:
                raise _Stuck(StuckReason.UNDEFINED_DESTRUCT,
                             f"cannot lower data below the {pi} perspective")
            self._rename(eta, sigma, Sigma, s.src, s.dst, lowered)
            self.fire("lower")
            if not self.auto_sync:
                return s.body, m
            return _with_barrier(s.sem, s.body), m

        if isinstance(s, ast.AsyncPartition):
            thread1 = Perspective(Level.THREAD, 1)
            if pi != thread1:
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"async views require thread[1], code at {pi}")
            if isinstance(s.body, ast.Skip):
                pending = deferred.get(s.tag, frozenset())
                if not pending:
                    self.fire("async_done")
                    return ast.Skip(), m
                chosen = min(pending, key=repr)
                deferred[s.tag] = pending - {chosen}
                self.fire("async_unwind")
                return ast.AsyncPartition(s.tag, s.src, s.dst, chosen, s.site), m
            mem, entry = get_entry(eta, sigma, Sigma, s.src)
            if entry is None:
                raise _Stuck(StuckReason.MISSING_VAR,
                             f"variable {s.src!r} not in memory")
            value = entry[1]
            if isinstance(value, VArr):
                value = VAsync(value, s.tag)
            mem[s.dst] = (thread1, value)
            body, m2 = self.step(eta, sigma, Sigma, sems, deferred, t, b, p, pi,
                                 m, s.body)
            return ast.AsyncPartition(s.tag, s.src, s.dst, body, s.site), m2

        if isinstance(s, ast.AsyncMemcpy):
            if pi != Perspective(Level.THREAD, 1):
                raise _Stuck(StuckReason.PERSPECTIVE_MISMATCH,
                             f"async_memcpy requires thread[1], code at {pi}")
            _, entry = get_entry(eta, sigma, Sigma, s.dst)
            if entry is None:
                raise _Stuck(StuckReason.MISSING_VAR, f"variable {s.dst!r} not in memory")
            if not isinstance(entry[1], VAsync):
                raise _Stuck(StuckReason.VALUE_KIND_MISMATCH,
                             f"async_memcpy destination {s.dst!r} is not async")
            tag = entry[1].tag
            pending = deferred.get(tag, frozenset())
            deferred[tag] = pending | {ast.Memcpy(s.dst, s.src)}
            self.fire("async_memcpy")
            return ast.Skip(), m

        if isinstance(s, ast.Memcpy):
            _, src_entry = get_entry(eta, sigma, Sigma, s.src)
            if src_entry is None:
                raise _Stuck(StuckReason.MISSING_VAR, f"variable {s.src!r} not in memory")
            mem, dst_entry = get_entry(eta, sigma, Sigma, s.dst)
            if dst_entry is None:
                raise _Stuck(StuckReason.MISSING_VAR, f"variable {s.dst!r} not in memory")
            mem[s.dst] = (dst_entry[0], src_entry[1])
            self.fire("memcpy")
            return ast.Skip(), m

        if isinstance(s, ast.SyncInit):
            counters = sems.setdefault(s.sem, {})
            if counters.get(p, 0) == 0:
                counters[p] = size(pi, mach)
                self.fire("sync_init_zero")
            else:
                self.fire("sync_init_nonzero")
            return ast.Skip(), m

        if isinstance(s, ast.SyncDec):
            counters = sems.setdefault(s.sem, {})
            counters[p] = max(0, counters.get(p, 0) - 1)
            self.fire("sync_dec")
            return ast.Skip(), m

        if isinstance(s, ast.SyncWait):
            counters = sems.get(s.sem, {})
            if counters.get(p, 0) == 0:
                self.fire("sync_wait_done")
                return ast.Skip(), m
            self.fire("sync_wait_spin")
            return s, m

        if isinstance(s, ast.Skip):
            raise _Stuck(StuckReason.VALUE_KIND_MISMATCH, "stepping a finished thread")
        raise TypeError(f"unknown statement {s!r}")

    def _rename(self, eta: Memory, sigma: Memory, Sigma: Memory, src: str,
                dst: str, persp: Perspective) -> None:
        mem, entry = get_entry(eta, sigma, Sigma, src)
        if entry is None:
            raise _Stuck(StuckReason.MISSING_VAR, f"variable {src!r} not in memory")
        mem[dst] = (persp, entry[1])


def _with_barrier(sem: int, body: ast.Stmt) -> ast.Stmt:
    return ast.Seq(ast.SyncInit(sem),
                   ast.Seq(body, ast.Seq(ast.SyncDec(sem), ast.SyncWait(sem))))


def _base_var(e: ast.Expr) -> Optional[str]:
    if isinstance(e, ast.Var):
        return e.name
    if isinstance(e, ast.Bop):
        return _base_var(e.left)
    return None


def step_thread(funcs: Dict[str, ast.FuncDef], params: MachineParams,
                eta: Memory, sigma: Memory, Sigma: Memory,
                sems: Dict[int, Dict[int, int]],
                deferred: Dict[int, FrozenSet], t: int, b: int, p: int,
                pi: Perspective, m: int, s: ast.Stmt,
                auto_sync: bool = True):
    """One small step of a single thread; mutates the given memory maps
    and returns (residual statement, footprint, rule name). Raises on a
    stuck configuration."""
    stepper = ThreadStepper(funcs, params, auto_sync)
    new_stmt, new_m = stepper.step(eta, sigma, Sigma, sems, deferred,
                                   t, b, p, pi, m, s)
    return new_stmt, new_m, stepper.rule


# ---------------------------------------------------------------------------
# Machine-level stepping


def function_table(program: ast.Program) -> Dict[str, ast.FuncDef]:
    funcs = {f.name: f for f in INTRINSICS}
    for f in program.functions:
        funcs[f.name] = f
    return funcs


def init_state(program: ast.Program) -> MachineState:
    mach = program.machine
    total = mach.threads_per_block * mach.blocks_per_grid
    global_mem: Memory = {}
    for f in function_table(program).values():
        global_mem[f.name] = (f.persp, VClosure(f.name))
    pool = {}
    locals_ = {}
    shared = {b: {} for b in range(mach.blocks_per_grid)}
    for t in range(total):
        b = t // mach.threads_per_block
        # each thread starts with the entry's full memory allowance; an
        # allocation raises it by the amount its pending release returns
        pool[(t, b)] = (program.entry, program.entry_mem_bound)
        locals_[t] = {}
    return MachineState(locals_, shared, global_mem, pool, {}, {}, mach)


def step_machine(state: MachineState, choice: Tuple[int, int],
                 funcs: Dict[str, ast.FuncDef],
                 auto_sync: bool = True) -> StepOutcome:
    t, b = choice
    stmt, m = state.pool[(t, b)]
    if isinstance(stmt, ast.Skip):
        return ThreadDone(t, b)
    eta = dict(state.locals_[t])
    sigma = dict(state.shared[b])
    Sigma = dict(state.global_)
    sems = {sem: dict(c) for sem, c in state.sems.items()}
    deferred = dict(state.deferred)
    stepper = ThreadStepper(funcs, state.params, auto_sync)
    try:
        new_stmt, new_m = stepper.step(eta, sigma, Sigma, sems, deferred,
                                       t, b, 0, GRID1, m, stmt)
    except _Stuck as stuck:
        return StuckOutcome(t, b, stmt, stuck.reason, stuck.detail)
    new_state = MachineState(
        {**state.locals_, t: eta},
        {**state.shared, b: sigma},
        Sigma,
        {**state.pool, (t, b): (new_stmt, new_m)},
        sems,
        deferred,
        state.params,
    )
    deltas = []
    for sem, counters in sems.items():
        old = state.sems.get(sem, {})
        for pp, v in counters.items():
            if old.get(pp, 0) != v:
                deltas.append((sem, pp, v))
    changed = stepper.rule != "sync_wait_spin"
    record = StepRecord(t, b, stepper.rule, stepper.leaf or stmt, tuple(deltas))
    return Stepped(new_state, record, changed)


# ---------------------------------------------------------------------------
# Drivers


class RandomScheduler:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)

    def pick(self, runnable: List[Tuple[int, int]], state: MachineState):
        return runnable[self.rng.randrange(len(runnable))]


class RoundRobinScheduler:
    def __init__(self):
        self.i = 0

    def pick(self, runnable: List[Tuple[int, int]], state: MachineState):
        choice = runnable[self.i % len(runnable)]
        self.i += 1
        return choice


ALL_DONE = "AllDone"
STUCK = "Stuck"
STEP_BUDGET = "StepBudgetExhausted"
LIVELOCK = "Livelock"


@dataclass
class RunResult:
    kind: str
    steps: int
    state: MachineState
    stuck: Optional[StuckOutcome] = None
    trace: Optional[List[StepRecord]] = None

    @property
    def ok(self) -> bool:
        return self.kind == ALL_DONE


def runnable_threads(state: MachineState) -> List[Tuple[int, int]]:
    return sorted(tb for tb, (s, _) in state.pool.items()
                  if not isinstance(s, ast.Skip))


def _probe_livelock(state: MachineState, funcs, auto_sync: bool = True) -> bool:
    for tb in runnable_threads(state):
        outcome = step_machine(state, tb, funcs, auto_sync)
        if not isinstance(outcome, Stepped) or outcome.changed:
            return False
    return True


def run(program: ast.Program, scheduler, max_steps: int,
        collect_trace: bool = False,
        on_step: Optional[Callable[[MachineState, StepRecord], None]] = None,
        auto_sync: bool = True) -> RunResult:
    funcs = function_table(program)
    state = init_state(program)
    trace: Optional[List[StepRecord]] = [] if collect_trace else None
    steps = 0
    idle = 0
    while steps < max_steps:
        runnable = runnable_threads(state)
        if not runnable:
            return RunResult(ALL_DONE, steps, state, trace=trace)
        choice = scheduler.pick(runnable, state)
        outcome = step_machine(state, choice, funcs, auto_sync)
        if isinstance(outcome, StuckOutcome):
            return RunResult(STUCK, steps, state, stuck=outcome, trace=trace)
        assert isinstance(outcome, Stepped)
        state = outcome.state
        steps += 1
        if trace is not None:
            trace.append(outcome.record)
        if on_step is not None:
            on_step(state, outcome.record)
        if outcome.changed:
            idle = 0
        else:
            idle += 1
            if idle >= 2 * len(runnable) + 4:
                if _probe_livelock(state, funcs, auto_sync):
                    return RunResult(LIVELOCK, steps, state, trace=trace)
                idle = 0
    return RunResult(STEP_BUDGET, max_steps, state, trace=trace)


class ExplorationBudgetExceeded(Exception):
    pass


# Steps that touch only the stepping thread's own residual and footprint;
# they commute with every other thread's steps, so exploration may commit
# them eagerly instead of branching over their interleavings.
INVISIBLE_RULES = frozenset({
    "seq_done", "while_unroll", "group_done", "destruct_done",
    "split_left_done", "split_right_done", "split_none", "free",
})


def _fast_forward(state: MachineState, funcs, counts: Dict[Tuple[int, int], int],
                  step_bound: int, auto_sync: bool) -> MachineState:
    progressed = True
    while progressed:
        progressed = False
        for tb in runnable_threads(state):
            if counts[tb] >= step_bound:
                continue
            outcome = step_machine(state, tb, funcs, auto_sync)
            if isinstance(outcome, Stepped) and outcome.record.rule in INVISIBLE_RULES:
                state = outcome.state
                counts[tb] += 1
                progressed = True
    return state


@dataclass
class ExploreResult:
    outcomes: Set[str]
    final_globals: Set[tuple]
    fingerprints: Set[int]
    stuck: List[StuckOutcome]
    configs: int


def global_fingerprint(state: MachineState) -> tuple:
    cells = []
    for loc, (persp, value) in state.global_.items():
        if isinstance(value, VClosure):
            continue
        cells.append((repr(loc), repr(value)))
    return tuple(sorted(cells))


def enumerate_schedules(program: ast.Program, step_bound: int,
                        max_configs: int = 400_000,
                        on_state: Optional[Callable[[MachineState, StepRecord, MachineState], Optional[str]]] = None,
                        guard: bool = True,
                        auto_sync: bool = True) -> ExploreResult:
    """Depth-first exploration of every scheduler choice.

    step_bound limits the number of steps any single thread may take along
    a path. on_state, when given, observes (state, record, next_state) at
    every explored transition and may return an error string to surface.
    """
    mach = program.machine
    total = mach.threads_per_block * mach.blocks_per_grid
    if guard and (total > 8 or step_bound > 40):
        raise ExplorationBudgetExceeded(
            f"enumeration guard: {total} threads / {step_bound} step bound")
    funcs = function_table(program)
    start = init_state(program)
    outcomes: Set[str] = set()
    final_globals: Set[tuple] = set()
    fingerprints: Set[int] = set()
    stuck: List[StuckOutcome] = []
    visited: Set = set()
    configs = 0
    start_counts: Dict[Tuple[int, int], int] = {tb: 0 for tb in start.pool}
    start = _fast_forward(start, funcs, start_counts, step_bound, auto_sync)
    stack = [(start, start_counts)]
    while stack:
        state, counts = stack.pop()
        key = state.key()
        if key in visited:
            continue
        visited.add(key)
        configs += 1
        if configs > max_configs:
            raise ExplorationBudgetExceeded(f"visited more than {max_configs} configs")
        runnable = runnable_threads(state)
        if not runnable:
            outcomes.add(ALL_DONE)
            final_globals.add(global_fingerprint(state))
            fingerprints.add(hash(key))
            continue
        all_spin = True
        for tb in runnable:
            outcome = step_machine(state, tb, funcs, auto_sync)
            if isinstance(outcome, StuckOutcome):
                outcomes.add(STUCK)
                stuck.append(outcome)
                all_spin = False
                continue
            assert isinstance(outcome, Stepped)
            if on_state is not None:
                err = on_state(state, outcome.record, outcome.state)
                if err:
                    outcomes.add(err)
            if not outcome.changed:
                continue
            all_spin = False
            if counts[tb] + 1 > step_bound:
                outcomes.add(STEP_BUDGET)
                continue
            new_counts = dict(counts)
            new_counts[tb] += 1
            child = _fast_forward(outcome.state, funcs, new_counts, step_bound,
                                  auto_sync)
            stack.append((child, new_counts))
        if all_spin and runnable:
            outcomes.add(LIVELOCK)
            fingerprints.add(hash(key))
    return ExploreResult(outcomes, final_globals, fingerprints, stuck, configs)
