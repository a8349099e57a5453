"""Surface-to-core lowering.

Tracks the code perspective and the declared perspective of every variable
so that `with group(...)`, `with partition(...) as y`, and friends expand
into the explicit destruct/group and lower/partition chains the core
understands. Requests that no chain can satisfy produce diagnostics and a
best-effort lowering so checking can continue.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from . import parser as sp
from . import syntax as ast
from .diagnostics import Code, Diagnostic, Span
from .persp import GRID1, MachineParams, Perspective, destruct


@dataclass
class VarInfo:
    persp: Perspective
    is_array: bool = False
    mem: Optional[ast.MemKind] = None
    base: Optional[ast.BaseType] = None
    const: bool = False
    is_async: bool = False


class Desugarer:
    def __init__(self, machine: MachineParams):
        self.machine = machine
        self.diags: List[Diagnostic] = []
        self.next_sem = 0
        self.next_tag = 0
        self.next_fresh = 0

    def diag(self, code: Code, span: Span, msg: str) -> None:
        self.diags.append(Diagnostic(code, span, msg))

    def fresh_sem(self) -> int:
        self.next_sem += 1
        return self.next_sem - 1

    def fresh_tag(self) -> int:
        self.next_tag += 1
        return self.next_tag - 1

    def fresh_name(self, hint: str) -> str:
        self.next_fresh += 1
        return f"_{hint}_{self.next_fresh - 1}"

    # --- blocks ---
    def block(self, stmts: list, pi: Perspective, env: Dict[str, VarInfo]) -> ast.Stmt:
        return self._rest(stmts, 0, pi, dict(env))

    def _rest(self, stmts: list, i: int, pi: Perspective,
              env: Dict[str, VarInfo]) -> ast.Stmt:
        if i >= len(stmts):
            return ast.Skip()
        s = stmts[i]
        # Declarations and allocations bind the remainder of the block.
        if isinstance(s, sp.SDeclScalar):
            persp = s.persp or pi
            inner = dict(env)
            inner[s.name] = VarInfo(persp)
            rest = self._rest(stmts, i + 1, pi, inner)
            return ast.Decl(s.name, ast.ScalarType(s.base), persp, s.init, rest, s.span)
        if isinstance(s, sp.SAllocArr):
            inner = dict(env)
            inner[s.name] = VarInfo(pi, True, s.mem, s.base)
            rest = self._rest(stmts, i + 1, pi, inner)
            return ast.Alloc(s.name, s.mem, s.base, s.length, rest, s.span)
        lowered = self.stmt(s, pi, env)
        if i + 1 >= len(stmts):
            return lowered
        return _attach(lowered, self._rest(stmts, i + 1, pi, env), s.span)

    def stmt(self, s: sp.SStmt, pi: Perspective, env: Dict[str, VarInfo]) -> ast.Stmt:
        if isinstance(s, sp.SSkip):
            return ast.Skip(s.span)
        if isinstance(s, sp.SAssn):
            return ast.Assn(s.name, s.value, s.span)
        if isinstance(s, sp.SArrAssn):
            return ast.ArrAssn(s.arr, s.idx, s.value, s.span)
        if isinstance(s, sp.SIf):
            return ast.If(s.cond, self.block(s.then, pi, env),
                          self.block(s.els, pi, env), s.span)
        if isinstance(s, sp.SWhile):
            return ast.While(s.cond, self.block(s.body, pi, env), s.span)
        if isinstance(s, sp.SFor):
            inner_env = dict(env)
            inner_env[s.var] = VarInfo(pi)
            body = self.block(s.body, pi, inner_env)
            step = ast.Assn(s.var, ast.Bop("+", ast.Var(s.var, s.span), s.step, s.span), s.span)
            loop = ast.While(ast.Cmp("<", ast.Var(s.var, s.span), s.stop, s.span),
                             _attach(body, step, s.span), s.span)
            return ast.Decl(s.var, ast.INT, pi, s.start, loop, s.span)
        if isinstance(s, sp.SCall):
            return ast.Call(s.fname, tuple(s.args), s.span)
        if isinstance(s, sp.SWithGroup):
            return self.with_group(s, pi, env)
        if isinstance(s, sp.SWithDestruct):
            lower = destruct(pi, self.machine)
            if lower is None:
                self.diag(Code.DESTRUCT_UNDEFINED, s.span,
                          f"cannot destruct the {pi} perspective")
                return ast.Destruct(self.block(s.body, pi, env), s.span)
            return ast.Destruct(self.block(s.body, lower, env), s.span)
        if isinstance(s, sp.SMatchSplit):
            if s.level != pi.level:
                self.diag(Code.TYPE_MISMATCH, s.span,
                          f"split over {s.level.short()} inside a {pi} perspective")
            return self.match_split(s.cases, pi, env, s.span)
        if isinstance(s, sp.SWithPartition):
            return self.with_partition(s, pi, env)
        if isinstance(s, sp.SWithClaim):
            return self.with_claim(s.src, s.target, s.dst, s.body, pi, env, s.span)
        if isinstance(s, sp.SWithLower):
            info = self.lookup(s.src, pi, env, s.span)
            lowered = destruct(info.persp, self.machine)
            if lowered is None:
                self.diag(Code.DESTRUCT_UNDEFINED, s.span,
                          f"cannot lower {s.src!r} below {info.persp}")
                lowered = info.persp
            inner_env = dict(env)
            inner_env.pop(s.src, None)
            inner_env[s.dst] = replace(info, persp=lowered)
            body = self.block(s.body, pi, inner_env)
            return ast.Lower(self.fresh_sem(), s.src, s.dst, body,
                             _site(s.src, s.dst, s.span), s.span)
        if isinstance(s, sp.SWithAsync):
            info = self.lookup(s.src, pi, env, s.span)
            inner_env = dict(env)
            inner_env.pop(s.src, None)
            inner_env[s.dst] = replace(info, is_async=True)
            body = self.block(s.body, pi, inner_env)
            return ast.AsyncPartition(self.fresh_tag(), s.src, s.dst, body,
                                      _site(s.src, s.dst, s.span), s.span)
        # explicit core forms
        if isinstance(s, sp.SCoreGroup):
            inner_pi = pi
            if s.q >= 1 and pi.count % s.q == 0:
                inner_pi = Perspective(pi.level, pi.count // s.q)
            return ast.Group(s.q, self.block(s.body, inner_pi, env), s.span)
        if isinstance(s, sp.SCoreDestruct):
            inner_pi = destruct(pi, self.machine) or pi
            return ast.Destruct(self.block(s.body, inner_pi, env), s.span)
        if isinstance(s, sp.SCoreSplit):
            left = self.block(s.left, Perspective(pi.level, s.n1), env)
            right = self.block(s.right, Perspective(pi.level, s.n2), env)
            return ast.Split(s.n1, s.n2, left, right, s.span)
        if isinstance(s, sp.SCorePartition):
            info = self.lookup(s.src, pi, env, s.span)
            inner_env = dict(env)
            inner_env.pop(s.src, None)
            count = pi.count // s.chunk if s.chunk >= 1 and pi.count % s.chunk == 0 \
                else pi.count
            inner_env[s.dst] = replace(info, persp=Perspective(pi.level, count))
            body = self.block(s.body, pi, inner_env)
            sem = s.sem if s.sem is not None else self.fresh_sem()
            return ast.Partition(sem, s.src, s.dst, s.chunk, body,
                                 _site(s.src, s.dst, s.span), s.span)
        if isinstance(s, sp.SCoreClaim):
            info = self.lookup(s.src, pi, env, s.span)
            inner_env = dict(env)
            inner_env.pop(s.src, None)
            narrowed = Perspective(pi.level, s.count)
            inner_env[s.dst] = replace(info, persp=narrowed)
            body = self.block(s.body, narrowed, inner_env)
            sem = s.sem if s.sem is not None else self.fresh_sem()
            return ast.Claim(sem, s.src, s.dst, s.count, body,
                             _site(s.src, s.dst, s.span), s.span)
        if isinstance(s, sp.SCoreLower):
            info = self.lookup(s.src, pi, env, s.span)
            inner_env = dict(env)
            inner_env.pop(s.src, None)
            inner_env[s.dst] = replace(info, persp=destruct(info.persp, self.machine)
                                       or info.persp)
            body = self.block(s.body, pi, inner_env)
            sem = s.sem if s.sem is not None else self.fresh_sem()
            return ast.Lower(sem, s.src, s.dst, body, _site(s.src, s.dst, s.span),
                             s.span)
        if isinstance(s, sp.SCoreAsync):
            info = self.lookup(s.src, pi, env, s.span)
            inner_env = dict(env)
            inner_env.pop(s.src, None)
            inner_env[s.dst] = replace(info, is_async=True)
            body = self.block(s.body, pi, inner_env)
            tag = s.tag if s.tag is not None else self.fresh_tag()
            return ast.AsyncPartition(tag, s.src, s.dst, body,
                                      _site(s.src, s.dst, s.span), s.span)
        if isinstance(s, sp.SFree):
            return ast.Free(s.amount, s.span)
        if isinstance(s, sp.SSync):
            node = {"init": ast.SyncInit, "dec": ast.SyncDec, "wait": ast.SyncWait}[s.which]
            return node(s.sem, s.span)
        if isinstance(s, sp.SMemcpy):
            if s.is_async:
                return ast.AsyncMemcpy(s.dst, s.src, s.span)
            return ast.Memcpy(s.dst, s.src, s.span)
        raise TypeError(f"unknown surface statement {s!r}")

    # --- sugar expansions ---
    def with_group(self, s: sp.SWithGroup, pi: Perspective,
                   env: Dict[str, VarInfo]) -> ast.Stmt:
        target = Perspective(s.level, s.n)
        wrappers: List[Tuple[str, int]] = []
        cur = pi
        if s.level > pi.level:
            self.diag(Code.GROUP_DIVISIBILITY, s.span,
                      f"cannot broaden from {pi} to {target}")
            return self.block(s.body, target, env)
        while cur.level > s.level:
            if cur.count != 1:
                wrappers.append(("group", cur.count))
                cur = Perspective(cur.level, 1)
            nxt = destruct(cur, self.machine)
            wrappers.append(("destruct", 0))
            cur = nxt
        if cur.count % s.n != 0:
            self.diag(Code.GROUP_DIVISIBILITY, s.span,
                      f"cannot replicate {target} across the {cur} perspective")
            return self.block(s.body, target, env)
        wrappers.append(("group", cur.count // s.n))
        body = self.block(s.body, target, env)
        for kind, q in reversed(wrappers):
            if kind == "group":
                body = ast.Group(q, body, s.span)
            else:
                body = ast.Destruct(body, s.span)
        return body

    def match_split(self, cases: list, pi: Perspective, env: Dict[str, VarInfo],
                    span: Span) -> ast.Stmt:
        (n1, blk1) = cases[0]
        if len(cases) == 1:
            if n1 == pi.count:
                return self.block(blk1, pi, env)
            left = self.block(blk1, Perspective(pi.level, n1), env)
            return ast.Split(n1, pi.count - n1, left, ast.Skip(span), span)
        rest_count = sum(n for (n, _) in cases[1:])
        left = self.block(blk1, Perspective(pi.level, n1), env)
        right = self.match_split(cases[1:], Perspective(pi.level, rest_count), env, span)
        return ast.Split(n1, rest_count, left, right, span)

    def with_partition(self, s: sp.SWithPartition, pi: Perspective,
                       env: Dict[str, VarInfo]) -> ast.Stmt:
        info = self.lookup(s.src, pi, env, s.span)
        site = _site(s.src, s.dst, s.span)
        if s.by is not None:
            chunk = s.by
            data = info.persp
            chain: List[Tuple[str, str, str]] = []
            src_name = s.src
            code = pi
        else:
            target = s.target
            data = info.persp
            src_name = s.src
            chain = []
            code = pi
            if target.level > data.level:
                self.diag(Code.TYPE_MISMATCH, s.span,
                          f"cannot broaden {s.src!r} from {data} to {target}")
            while data.level > target.level:
                if data.count != 1:
                    self.diag(Code.TYPE_MISMATCH, s.span,
                              f"cannot narrow {s.src!r} from {data}: lowering "
                              "requires a single unit")
                    break
                fresh = self.fresh_name(s.dst)
                chain.append(("lower", src_name, fresh))
                src_name = fresh
                data = destruct(data, self.machine)
                if code.count == 1 and code.level > target.level:
                    chain.append(("destruct", "", ""))
                    code = destruct(code, self.machine)
            if data.level != target.level or data.count % target.count != 0:
                if data.level == target.level:
                    self.diag(Code.PARTITION_NON_DIVISOR, s.span,
                              f"cannot view {data} data as {target}")
                chunk = 1
            else:
                chunk = data.count // target.count
        if s.f_expr is not None:
            if not _is_stride_form(s.f_expr, s.f_param, chunk):
                self.diag(Code.TYPE_MISMATCH, s.span,
                          "partition indexing must be the affine stride form "
                          f"lambda {s.f_param or 'p'}: {chunk} * {s.f_param or 'p'}")
        inner_env = dict(env)
        inner_env.pop(s.src, None)
        dst_count = data.count // chunk if chunk >= 1 and data.count % chunk == 0 \
            else data.count
        inner_env[s.dst] = replace(info, persp=Perspective(data.level, dst_count))
        body = self.block(s.body, code, inner_env)
        out: ast.Stmt = ast.Partition(self.fresh_sem(), src_name, s.dst, chunk,
                                      body, site, s.span)
        for kind, a, b in reversed(chain):
            if kind == "destruct":
                out = ast.Destruct(out, s.span)
            else:
                out = ast.Lower(self.fresh_sem(), a, b, out, site, s.span)
        return out

    def with_claim(self, src: str, target: Perspective, dst: str, body_stmts: list,
                   pi: Perspective, env: Dict[str, VarInfo], span: Span) -> ast.Stmt:
        """Claim sugar: lower/destruct chain, then a claim at the target count."""
        info = self.lookup(src, pi, env, span)
        site = _site(src, dst, span)
        data = info.persp
        code = pi
        src_name = src
        chain: List[Tuple[str, str, str]] = []
        while data.level > target.level:
            if data.count != 1:
                self.diag(Code.TYPE_MISMATCH, span,
                          f"cannot narrow {src!r} from {data}: lowering requires "
                          "a single unit")
                break
            fresh = self.fresh_name(dst)
            chain.append(("lower", src_name, fresh))
            src_name = fresh
            data = destruct(data, self.machine)
            if code.count == 1 and code.level > target.level:
                chain.append(("destruct", "", ""))
                code = destruct(code, self.machine)
        inner_env = dict(env)
        inner_env.pop(src, None)
        narrowed = Perspective(target.level, target.count)
        inner_env[dst] = replace(info, persp=narrowed)
        body = self.block(body_stmts, narrowed, inner_env)
        out: ast.Stmt = ast.Claim(self.fresh_sem(), src_name, dst, target.count,
                                  body, site, span)
        for kind_, a, b in reversed(chain):
            if kind_ == "destruct":
                out = ast.Destruct(out, span)
            else:
                out = ast.Lower(self.fresh_sem(), a, b, out, site, span)
        return out

    def lookup(self, name: str, pi: Perspective, env: Dict[str, VarInfo],
               span: Span) -> VarInfo:
        info = env.get(name)
        if info is None:
            self.diag(Code.UNKNOWN_VAR, span, f"unknown variable {name!r}")
            return VarInfo(pi, True, ast.MemKind.GLOBAL, ast.BaseType.INT)
        return info


def _attach(s: ast.Stmt, rest: ast.Stmt, span: Span) -> ast.Stmt:
    """Join a lowered statement with the rest of its block; binder scopes
    extend to the block end, matching how the printer lays them out."""
    if isinstance(s, (ast.Decl, ast.Alloc)):
        return replace(s, body=_attach(s.body, rest, span))
    if isinstance(s, ast.Skip):
        return ast.Seq(s, rest, span)
    if isinstance(s, ast.Seq):
        return ast.Seq(s.first, _attach(s.second, rest, span), s.span)
    return ast.Seq(s, rest, span)


def _site(src: str, dst: str, span: Span) -> str:
    return f"{src}->{dst}:{span.line}"


def _is_stride_form(e: ast.Expr, param: Optional[str], chunk: int) -> bool:
    if not isinstance(e, ast.Bop) or e.op != "*":
        return False
    sides = (e.left, e.right)
    has_param = any(isinstance(x, ast.Var) and x.name == param for x in sides)
    has_chunk = any(isinstance(x, ast.IntLit) and x.value == chunk for x in sides)
    return has_param and has_chunk


def desugar(surface: sp.SurfaceProgram) -> Tuple[ast.Program, List[Diagnostic]]:
    d = Desugarer(surface.machine)
    funcs: List[ast.FuncDef] = []
    entry: Optional[ast.Stmt] = None
    entry_bound = 0
    for f in surface.funcs:
        env: Dict[str, VarInfo] = {}
        for (pname, ppersp, pty) in f.params:
            if isinstance(pty, ast.ArrayType):
                env[pname] = VarInfo(ppersp, True, pty.mem, pty.base, pty.const)
            else:
                env[pname] = VarInfo(ppersp)
        if f.name == "main":
            if f.params:
                d.diag(Code.TYPE_MISMATCH, f.span, "main() takes no parameters")
            if f.persp != GRID1:
                d.diag(Code.CALL_PERSPECTIVE, f.span,
                       "main() must require the grid[1] perspective")
            entry = d.block(f.body, GRID1, env)
            entry_bound = f.mem_bound
        else:
            body = d.block(f.body, f.persp, env)
            funcs.append(ast.FuncDef(f.name, tuple(f.params), f.persp,
                                     f.mem_bound, body, f.span))
    program = ast.Program(surface.machine, tuple(funcs), entry or ast.Skip(),
                          entry_bound)
    return program, d.diags
