"""The typechecker: expression and statement judgments, environment
well-typedness, and whole-program checking.

Statements are checked against an explicit code perspective and a memory
budget. Scalars demand an exact perspective match between code and data;
array reads go up the hierarchy and writes go down. The checker recovers
after most failures so one run reports every independent problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import syntax as ast
from .diagnostics import Code, Diagnostic, Span
from .intrinsics import INTRINSICS
from .persp import (BLOCK1, GRID1, THREAD1, MachineParams, Perspective,
                    align_to, destruct, narrower_eq)

Binding = Tuple[Perspective, ast.ValueType]


@dataclass
class TypingContext:
    bindings: Dict[str, Binding]
    machine: MachineParams

    def extended(self, name: str, persp: Perspective, ty: ast.ValueType) -> "TypingContext":
        new = dict(self.bindings)
        new[name] = (persp, ty)
        return TypingContext(new, self.machine)

    def without(self, name: str) -> "TypingContext":
        new = dict(self.bindings)
        new.pop(name, None)
        return TypingContext(new, self.machine)


@dataclass
class CheckReport:
    diagnostics: List[Diagnostic] = field(default_factory=list)
    mem_used: int = 0

    @property
    def ok(self) -> bool:
        return not self.diagnostics


class Checker:
    def __init__(self, machine: MachineParams, functions: Tuple[ast.FuncDef, ...]):
        self.machine = machine
        self.funcs: Dict[str, ast.FuncDef] = {}
        for f in INTRINSICS:
            self.funcs[f.name] = f
        for f in functions:
            self.funcs[f.name] = f
        self.diags: List[Diagnostic] = []

    # --- helpers ---
    def diag(self, code: Code, span: Span, msg: str) -> None:
        self.diags.append(Diagnostic(code, span, msg))

    def base_context(self) -> TypingContext:
        bindings: Dict[str, Binding] = {}
        for f in self.funcs.values():
            bindings[f.name] = (f.persp, f.signature())
        return TypingContext(bindings, self.machine)

    # --- expressions ---
    def check_expr(self, ctx: TypingContext, pi: Perspective, e: ast.Expr) -> Optional[ast.ValueType]:
        if isinstance(e, ast.Var):
            if e.name not in ctx.bindings:
                self.diag(Code.UNKNOWN_VAR, e.span, f"unknown variable {e.name!r}")
                return None
            persp, ty = ctx.bindings[e.name]
            if persp != pi:
                if not narrower_eq(pi, persp):
                    self.diag(
                        Code.READ_UP, e.span,
                        f"cannot read {e.name!r} at {persp} from code at {pi}",
                    )
                else:
                    self.diag(
                        Code.TYPE_MISMATCH, e.span,
                        f"variable {e.name!r} lives at {persp}, code at {pi} "
                        "needs an exact match",
                    )
                return None
            return ty
        if isinstance(e, ast.IntLit):
            return ast.INT
        if isinstance(e, ast.FloatLit):
            return ast.FLOAT
        if isinstance(e, ast.BoolLit):
            return ast.BOOL
        if isinstance(e, ast.PartitionId):
            if pi == GRID1 or not narrower_eq(pi, GRID1):
                self.diag(
                    Code.TYPE_MISMATCH, e.span,
                    f"id() needs a perspective strictly below grid[1], code at {pi}",
                )
                return None
            return ast.INT
        if isinstance(e, ast.RelId):
            return ast.INT
        if isinstance(e, ast.ArrAccess):
            resolved = self.array_view(ctx, e.arr)
            idx_ty = self.check_expr(ctx, pi, e.idx)
            if idx_ty is not None and idx_ty != ast.INT:
                self.diag(Code.TYPE_MISMATCH, e.span, "array index must be int")
            if resolved is None:
                return None
            persp, aty = resolved
            if isinstance(aty, ast.AsyncType):
                self.diag(Code.ASYNC_MISUSE, e.span,
                          "async views admit only async data movement")
                return None
            if aty.mem == ast.MemKind.SHARED and not narrower_eq(pi, BLOCK1):
                self.diag(Code.READ_UP, e.span,
                          f"shared arrays are visible at block[1] and below, code at {pi}")
                return None
            if not narrower_eq(pi, persp):
                self.diag(Code.READ_UP, e.span,
                          f"cannot read array at {persp} from code at {pi}")
                return None
            return ast.ScalarType(aty.base)
        if isinstance(e, ast.Bop):
            lt = self.check_expr(ctx, pi, e.left)
            if isinstance(lt, ast.ArrayType) and e.op == "+":
                rt = self.check_expr(ctx, pi, e.right)
                if rt is not None and rt != ast.INT:
                    self.diag(Code.TYPE_MISMATCH, e.span, "array offset must be int")
                return lt
            rt = self.check_expr(ctx, pi, e.right)
            for side in (lt, rt):
                if side is not None and side != ast.INT:
                    self.diag(Code.TYPE_MISMATCH, e.span,
                              f"operands of {e.op!r} must be int")
                    return None
            return ast.INT
        if isinstance(e, ast.Cmp):
            lt = self.check_expr(ctx, pi, e.left)
            rt = self.check_expr(ctx, pi, e.right)
            for side in (lt, rt):
                if side is not None and side != ast.INT:
                    self.diag(Code.TYPE_MISMATCH, e.span,
                              f"operands of {e.op!r} must be int")
                    return None
            return ast.BOOL
        raise TypeError(f"unknown expression {e!r}")

    def array_view(self, ctx: TypingContext, e: ast.Expr):
        """Resolve an array-valued expression to its binding's perspective.

        Arrays reach the checker as plain variables or as offset forms
        (var + int) produced by partition substitution.
        """
        if isinstance(e, ast.Var):
            if e.name not in ctx.bindings:
                self.diag(Code.UNKNOWN_VAR, e.span, f"unknown variable {e.name!r}")
                return None
            persp, ty = ctx.bindings[e.name]
            if isinstance(ty, (ast.ArrayType, ast.AsyncType)):
                return persp, ty
            self.diag(Code.TYPE_MISMATCH, e.span, f"{e.name!r} is not an array")
            return None
        if isinstance(e, ast.Bop) and e.op == "+":
            return self.array_view(ctx, e.left)
        self.diag(Code.TYPE_MISMATCH, getattr(e, "span", Span()),
                  "expected an array variable")
        return None

    # --- statements ---
    def check_stmt(self, ctx: TypingContext, pi: Perspective, m: int, s: ast.Stmt) -> int:
        """Check s under budget m; returns the memory the statement needs."""
        if isinstance(s, ast.Skip):
            return 0
        if isinstance(s, ast.Seq):
            r1 = self.check_stmt(ctx, pi, m, s.first)
            r2 = self.check_stmt(ctx, pi, m, s.second)
            return max(r1, r2)
        if isinstance(s, ast.Decl):
            if not isinstance(s.ty, ast.ScalarType):
                self.diag(Code.DECL_ARRAY, s.span,
                          "declarations take scalar types; arrays are allocated")
                return 0
            init_ty = self.check_expr(ctx, pi, s.init)
            if init_ty is not None and init_ty != s.ty:
                self.diag(Code.TYPE_MISMATCH, s.span,
                          f"declared {s.ty}, initializer is {init_ty}")
            if not narrower_eq(s.persp, pi):
                self.diag(Code.WRITE_DOWN, s.span,
                          f"cannot bind {s.name!r} at {s.persp} from code at {pi}")
            inner = ctx.extended(s.name, s.persp, s.ty)
            return self.check_stmt(inner, pi, m, s.body)
        if isinstance(s, ast.Assn):
            if s.name not in ctx.bindings:
                self.diag(Code.UNKNOWN_VAR, s.span, f"unknown variable {s.name!r}")
                return 0
            persp, ty = ctx.bindings[s.name]
            val_ty = self.check_expr(ctx, pi, s.value)
            if val_ty is not None and val_ty != ty:
                self.diag(Code.TYPE_MISMATCH, s.span,
                          f"{s.name!r} holds {ty}, assigned {val_ty}")
            if not narrower_eq(persp, pi):
                self.diag(Code.WRITE_DOWN, s.span,
                          f"cannot write {s.name!r} at {persp} from code at {pi}")
            return 0
        if isinstance(s, ast.ArrAssn):
            resolved = self.array_view(ctx, s.arr)
            idx_ty = self.check_expr(ctx, pi, s.idx)
            if idx_ty is not None and idx_ty != ast.INT:
                self.diag(Code.TYPE_MISMATCH, s.span, "array index must be int")
            if resolved is None:
                self.check_expr(ctx, pi, s.value)
                return 0
            persp, aty = resolved
            if isinstance(aty, ast.AsyncType):
                self.diag(Code.ASYNC_MISUSE, s.span,
                          "async views admit only async data movement")
                return 0
            if aty.const:
                self.diag(Code.WRITE_DOWN, s.span, "cannot write through a const view")
            val_ty = self.check_expr(ctx, pi, s.value)
            if val_ty is not None and val_ty != ast.ScalarType(aty.base):
                self.diag(Code.TYPE_MISMATCH, s.span,
                          f"array holds {aty.base.value}, assigned {val_ty}")
            if aty.mem == ast.MemKind.SHARED and not narrower_eq(pi, BLOCK1):
                self.diag(Code.WRITE_DOWN, s.span,
                          f"shared arrays are writable at block[1] and below, code at {pi}")
            if not narrower_eq(persp, pi):
                self.diag(Code.WRITE_DOWN, s.span,
                          f"cannot write array at {persp} from code at {pi}")
            return 0
        if isinstance(s, ast.If):
            cond_ty = self.check_expr(ctx, pi, s.cond)
            if cond_ty is not None and cond_ty != ast.BOOL:
                self.diag(Code.TYPE_MISMATCH, s.span, "condition must be bool")
            r1 = self.check_stmt(ctx, pi, m, s.then)
            r2 = self.check_stmt(ctx, pi, m, s.els)
            return max(r1, r2)
        if isinstance(s, ast.While):
            cond_ty = self.check_expr(ctx, pi, s.cond)
            if cond_ty is not None and cond_ty != ast.BOOL:
                self.diag(Code.TYPE_MISMATCH, s.span, "condition must be bool")
            return self.check_stmt(ctx, pi, m, s.body)
        if isinstance(s, ast.Call):
            return self.check_call(ctx, pi, m, s)
        if isinstance(s, ast.Split):
            if not align_to(s.n1, s.n2, pi.count):
                self.diag(Code.SPLIT_ALIGN, s.span,
                          f"split({s.n1}, {s.n2}) does not align to {pi.count}")
            r1 = self.check_stmt(ctx, Perspective(pi.level, s.n1), m, s.left)
            r2 = self.check_stmt(ctx, Perspective(pi.level, s.n2), m, s.right)
            return max(r1, r2)
        if isinstance(s, ast.Group):
            if s.q < 1 or pi.count % s.q != 0:
                self.diag(Code.GROUP_DIVISIBILITY, s.span,
                          f"group {s.q} does not divide the {pi} perspective")
                return 0
            inner_pi = Perspective(pi.level, pi.count // s.q)
            return self.check_stmt(ctx, inner_pi, m, s.body)
        if isinstance(s, ast.Destruct):
            lower_pi = destruct(pi, self.machine)
            if lower_pi is None:
                self.diag(Code.DESTRUCT_UNDEFINED, s.span,
                          f"cannot destruct the {pi} perspective")
                return 0
            return self.check_stmt(ctx, lower_pi, m, s.body)
        if isinstance(s, ast.Alloc):
            cost = s.length * ast.BASE_SIZE[s.base]
            if s.mem == ast.MemKind.SHARED and pi != BLOCK1:
                self.diag(Code.SHARED_ALLOC_LEVEL, s.span,
                          f"shared allocation requires block[1], code at {pi}")
            if cost > m:
                self.diag(Code.MEM_BOUND_EXCEEDED, s.span,
                          f"allocation of {cost} bytes exceeds the remaining "
                          f"budget of {m}")
            inner = ctx.extended(s.name, pi, ast.ArrayType(s.base, s.mem))
            return cost + self.check_stmt(inner, pi, max(0, m - cost), s.body)
        if isinstance(s, ast.Free):
            if s.amount > m:
                self.diag(Code.MEM_BOUND_EXCEEDED, s.span,
                          f"free({s.amount}) exceeds the budget of {m}")
            return s.amount
        if isinstance(s, ast.Partition):
            src = self.region_source(ctx, s.src, pi, s.span)
            inner = ctx.without(s.src)
            if src is not None:
                persp, aty = src
                if pi.count % s.chunk != 0 or s.chunk < 1:
                    self.diag(Code.PARTITION_NON_DIVISOR, s.span,
                              f"chunk {s.chunk} does not divide {pi.count}")
                    dst_persp = pi
                else:
                    dst_persp = Perspective(pi.level, pi.count // s.chunk)
                inner = inner.extended(s.dst, dst_persp, aty)
            return self.check_stmt(inner, pi, m, s.body)
        if isinstance(s, ast.Claim):
            src = self.region_source(ctx, s.src, pi, s.span)
            inner = ctx.without(s.src)
            if s.count > pi.count:
                self.diag(Code.CLAIM_TOO_LARGE, s.span,
                          f"cannot claim {s.count} of {pi.count} units")
                return 0
            narrowed = Perspective(pi.level, s.count)
            if src is not None:
                inner = inner.extended(s.dst, narrowed, src[1])
            return self.check_stmt(inner, narrowed, m, s.body)
        if isinstance(s, ast.Lower):
            src = self.region_source(ctx, s.src, pi, s.span)
            inner = ctx.without(s.src)
            lowered = destruct(pi, self.machine)
            if lowered is None:
                self.diag(Code.DESTRUCT_UNDEFINED, s.span,
                          f"cannot lower data below the {pi} perspective")
                return 0
            if src is not None:
                inner = inner.extended(s.dst, lowered, src[1])
            return self.check_stmt(inner, pi, m, s.body)
        if isinstance(s, ast.AsyncPartition):
            thread1 = THREAD1
            if pi != thread1:
                self.diag(Code.ASYNC_MISUSE, s.span,
                          f"async views require thread[1], code at {pi}")
            inner = ctx.without(s.src)
            if s.src not in ctx.bindings:
                self.diag(Code.UNKNOWN_VAR, s.span, f"unknown variable {s.src!r}")
            else:
                persp, ty = ctx.bindings[s.src]
                if not isinstance(ty, ast.ArrayType):
                    self.diag(Code.ASYNC_MISUSE, s.span,
                              "only arrays take asynchronous views")
                else:
                    if persp != thread1:
                        self.diag(Code.ASYNC_MISUSE, s.span,
                                  f"async source must live at thread[1], not {persp}")
                    inner = inner.extended(s.dst, thread1, ast.AsyncType(ty))
            return self.check_stmt(inner, pi, m, s.body)
        if isinstance(s, ast.AsyncMemcpy):
            thread1 = THREAD1
            if pi != thread1:
                self.diag(Code.ASYNC_MISUSE, s.span,
                          f"async_memcpy requires thread[1], code at {pi}")
                return 0
            dst = ctx.bindings.get(s.dst)
            src = ctx.bindings.get(s.src)
            if dst is None or src is None:
                missing = s.dst if dst is None else s.src
                self.diag(Code.UNKNOWN_VAR, s.span, f"unknown variable {missing!r}")
                return 0
            if not isinstance(dst[1], ast.AsyncType):
                self.diag(Code.ASYNC_MISUSE, s.span,
                          "async_memcpy writes through an async view")
            if not isinstance(src[1], ast.ArrayType):
                self.diag(Code.ASYNC_MISUSE, s.span,
                          "async_memcpy reads from a plain array")
            if dst[0] != thread1 or src[0] != thread1:
                self.diag(Code.ASYNC_MISUSE, s.span,
                          "async_memcpy operands must live at thread[1]")
            return 0
        if isinstance(s, ast.Memcpy):
            dst = ctx.bindings.get(s.dst)
            src = ctx.bindings.get(s.src)
            if dst is None or src is None:
                missing = s.dst if dst is None else s.src
                self.diag(Code.UNKNOWN_VAR, s.span, f"unknown variable {missing!r}")
                return 0
            # A deferred async transfer re-enters checking with an async
            # destination; accept both forms.
            dst_ty = dst[1].inner if isinstance(dst[1], ast.AsyncType) else dst[1]
            if not isinstance(dst_ty, ast.ArrayType) or not isinstance(src[1], ast.ArrayType):
                self.diag(Code.TYPE_MISMATCH, s.span, "memcpy moves arrays")
                return 0
            if dst_ty.base != src[1].base:
                self.diag(Code.TYPE_MISMATCH, s.span,
                          "memcpy operands must share an element type")
            if dst_ty.const:
                self.diag(Code.WRITE_DOWN, s.span, "cannot write through a const view")
            if dst[0] != pi or src[0] != pi:
                self.diag(Code.TYPE_MISMATCH, s.span,
                          f"memcpy operands must live at the code perspective {pi}")
            return 0
        if isinstance(s, (ast.SyncInit, ast.SyncDec, ast.SyncWait)):
            return 0
        raise TypeError(f"unknown statement {s!r}")

    def region_source(self, ctx: TypingContext, name: str, pi: Perspective,
                      span: Span) -> Optional[Tuple[Perspective, ast.ArrayType]]:
        if name not in ctx.bindings:
            self.diag(Code.UNKNOWN_VAR, span, f"unknown variable {name!r}")
            return None
        persp, ty = ctx.bindings[name]
        if not isinstance(ty, ast.ArrayType):
            self.diag(Code.TYPE_MISMATCH, span, f"{name!r} is not an array")
            return None
        if ty.mem == ast.MemKind.LOCAL:
            self.diag(Code.LOCAL_PARTITION, span,
                      "thread-local arrays cannot change perspective")
            return None
        if persp != pi:
            self.diag(Code.TYPE_MISMATCH, span,
                      f"{name!r} lives at {persp}; the code perspective is {pi}")
            return None
        return persp, ty

    def check_call(self, ctx: TypingContext, pi: Perspective, m: int, s: ast.Call) -> int:
        f = self.funcs.get(s.fname)
        if f is None:
            self.diag(Code.UNKNOWN_VAR, s.span, f"unknown function {s.fname!r}")
            return 0
        if f.persp != pi:
            self.diag(Code.CALL_PERSPECTIVE, s.span,
                      f"{s.fname!r} runs at {f.persp}, call site is at {pi}")
        if f.mem_bound > m:
            self.diag(Code.CALL_MEM, s.span,
                      f"{s.fname!r} needs {f.mem_bound} bytes, only {m} remain")
        if len(s.args) != len(f.params):
            self.diag(Code.TYPE_MISMATCH, s.span,
                      f"{s.fname!r} takes {len(f.params)} arguments, got {len(s.args)}")
            return f.mem_bound
        for arg, (pname, ppersp, pty) in zip(s.args, f.params):
            if isinstance(pty, ast.ArrayType) and pty.const:
                resolved = self.array_view(ctx, arg)
                if resolved is None:
                    continue
                apersp, aty = resolved
                if isinstance(aty, ast.AsyncType):
                    self.diag(Code.ASYNC_MISUSE, s.span,
                              f"cannot pass an async view for {pname!r}")
                    continue
                if aty.base != pty.base or aty.mem != pty.mem:
                    self.diag(Code.TYPE_MISMATCH, s.span,
                              f"argument for {pname!r} is {aty}, expected {pty}")
                if not narrower_eq(ppersp, apersp):
                    self.diag(Code.READ_UP, s.span,
                              f"const argument for {pname!r} lives at {apersp}, "
                              f"which is narrower than {ppersp}")
                continue
            arg_ty = self.check_expr(ctx, ppersp, arg)
            if arg_ty is None:
                continue
            if isinstance(pty, ast.ArrayType):
                if not isinstance(arg_ty, ast.ArrayType) or arg_ty.base != pty.base \
                        or arg_ty.mem != pty.mem:
                    self.diag(Code.TYPE_MISMATCH, s.span,
                              f"argument for {pname!r} is {arg_ty}, expected {pty}")
                elif arg_ty.const and not pty.const:
                    self.diag(Code.WRITE_DOWN, s.span,
                              f"cannot pass a const view for mutable {pname!r}")
            elif arg_ty != pty:
                self.diag(Code.TYPE_MISMATCH, s.span,
                          f"argument for {pname!r} is {arg_ty}, expected {pty}")
        return f.mem_bound

    # --- environments ---
    def check_env(self, ctx: TypingContext, eta: dict, sigma: dict, Sigma: dict) -> Optional[Diagnostic]:
        for name, (persp, ty) in ctx.bindings.items():
            if isinstance(ty, ast.FuncType):
                home = Sigma
            elif isinstance(ty, ast.ArrayType):
                home = {ast.MemKind.LOCAL: eta, ast.MemKind.SHARED: sigma,
                        ast.MemKind.GLOBAL: Sigma}[ty.mem]
            elif isinstance(ty, ast.AsyncType):
                home = {ast.MemKind.LOCAL: eta, ast.MemKind.SHARED: sigma,
                        ast.MemKind.GLOBAL: Sigma}[ty.inner.mem]
            else:
                home = eta
            entry = home.get(name)
            if entry is None:
                return Diagnostic(Code.UNKNOWN_VAR, Span(),
                                  f"{name!r} missing from its memory space")
            bound_persp, value = entry
            if bound_persp != persp:
                return Diagnostic(Code.TYPE_MISMATCH, Span(),
                                  f"{name!r} bound at {bound_persp}, context says {persp}")
            bad = self._value_fits(value, ty, eta, sigma, Sigma)
            if bad is not None:
                return Diagnostic(Code.TYPE_MISMATCH, Span(), f"{name!r}: {bad}")
        return None

    def _value_fits(self, value, ty: ast.ValueType, eta, sigma, Sigma) -> Optional[str]:
        from . import machine as mach

        if isinstance(value, mach.VUndef):
            return None
        if isinstance(ty, ast.ScalarType):
            want = {ast.BaseType.INT: mach.VInt, ast.BaseType.FLOAT: mach.VFloat,
                    ast.BaseType.BOOL: mach.VBool}[ty.base]
            if not isinstance(value, want):
                return f"holds {value!r}, expected {ty}"
            return None
        if isinstance(ty, ast.AsyncType):
            inner = value.inner if isinstance(value, mach.VAsync) else value
            return self._value_fits(inner, ty.inner, eta, sigma, Sigma)
        if isinstance(ty, ast.ArrayType):
            if not isinstance(value, mach.VArr):
                return f"holds {value!r}, expected {ty}"
            home = {ast.MemKind.LOCAL: eta, ast.MemKind.SHARED: sigma,
                    ast.MemKind.GLOBAL: Sigma}[ty.mem]
            for i in range(value.length):
                cell = home.get((value.base, i))
                if cell is None:
                    continue
                bad = self._value_fits(cell[1], ast.ScalarType(ty.base), eta, sigma, Sigma)
                if bad is not None:
                    return f"cell {i} {bad}"
            return None
        if isinstance(ty, ast.FuncType):
            if not isinstance(value, mach.VClosure):
                return f"holds {value!r}, expected a function"
            return None
        return f"unknown type {ty!r}"


def check_program(program: ast.Program) -> CheckReport:
    checker = Checker(program.machine, program.functions)
    base = checker.base_context()
    for f in program.functions:
        ctx = base
        for (pname, ppersp, pty) in f.params:
            if isinstance(pty, (ast.AsyncType, ast.FuncType)):
                checker.diag(Code.TYPE_MISMATCH, f.span,
                             f"parameter {pname!r} has an unsupported type")
                continue
            ctx = ctx.extended(pname, ppersp, pty)
        checker.check_stmt(ctx, f.persp, f.mem_bound, f.body)
    mem_used = checker.check_stmt(base, GRID1, program.entry_mem_bound, program.entry)
    return CheckReport(checker.diags, mem_used)


def check_expr(ctx: TypingContext, pi: Perspective, e: ast.Expr):
    """Standalone expression judgment: a type on success, a diagnostic on failure."""
    checker = Checker(ctx.machine, ())
    ty = checker.check_expr(ctx, pi, e)
    if checker.diags:
        return checker.diags[0]
    return ty


def check_stmt(ctx: TypingContext, pi: Perspective, m: int, s: ast.Stmt):
    """Standalone statement judgment: [] on success, diagnostics otherwise."""
    checker = Checker(ctx.machine, ())
    checker.check_stmt(ctx, pi, m, s)
    return checker.diags


def check_env(ctx: TypingContext, eta: dict, sigma: dict, Sigma: dict):
    checker = Checker(ctx.machine, ())
    return checker.check_env(ctx, eta, sigma, Sigma)
