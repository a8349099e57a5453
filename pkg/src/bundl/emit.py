"""Lowering to CUDA-like source text.

All view-tracking information is erased: narrowing constructs become index
arithmetic and guards over the built-in thread and block indices, shared
allocations become offsets into one dynamic shared-memory pool, and the
sync plan's placements render as barrier calls. The output carries no
run-time checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import syntax as ast
from .persp import GRID1, Level, Perspective, destruct, div
from .syncinfer import SyncPlan, SyncPoint

_C_TYPE = {ast.BaseType.INT: "int", ast.BaseType.FLOAT: "float",
           ast.BaseType.BOOL: "bool"}


class EmitError(Exception):
    pass


@dataclass
class EmitInfo:
    shared_offsets: Dict[str, Tuple[str, int, int]] = field(default_factory=dict)
    shared_total: Dict[str, int] = field(default_factory=dict)
    kernel_params: List[str] = field(default_factory=list)


_MMA_ASM = (
    'asm volatile("mma.sync.aligned.m16n8k8.row.col.f32.tf32.tf32.f32 "\n'
    '{INDENT}             "{{%0,%1,%2,%3}}, {{%4,%5,%6,%7}}, {{%8,%9}}, '
    '{{%0,%1,%2,%3}};"\n'
    '{INDENT}             : "+f"({c0}), "+f"({c1}), "+f"({c2}), "+f"({c3})\n'
    '{INDENT}             : "f"({a0}), "f"({a1}), "f"({a2}), "f"({a3}), '
    '"f"({b0}), "f"({b1}));'
)


class _Emitter:
    def __init__(self, program: ast.Program, plan: Optional[SyncPlan]):
        self.program = program
        self.plan = plan
        self.info = EmitInfo()
        self.lines: List[str] = []
        self.fresh = 0
        self.inserts: Dict[Tuple[str, Tuple[str, ...]], Dict[str, List[SyncPoint]]] = {}
        if plan is not None:
            for pt in plan.points:
                func, path, where = pt.point
                slot = self.inserts.setdefault((func, tuple(path)),
                                               {"before": [], "after": []})
                slot[where].append(pt)

    # --- helpers ---
    def out(self, depth: int, text: str) -> None:
        self.lines.append("    " * depth + text)

    def lane_name(self) -> str:
        self.fresh += 1
        return f"u{self.fresh - 1}"

    def barrier_text(self, pt: SyncPoint) -> str:
        if pt.primitive in ("SyncThreads", "SyncWarp"):
            if pt.kind == "arrive":
                # the hardware primitive arrives and waits in one call,
                # rendered at the wait placement
                return ""
            return "__syncthreads();" if pt.primitive == "SyncThreads" \
                else "__syncwarp();"
        call = "BDL_BARRIER_ARRIVE" if pt.kind == "arrive" else "BDL_BARRIER_WAIT"
        return f"{call}({pt.pair});"

    # --- expressions ---
    def expr(self, e: ast.Expr, env: Dict[str, Perspective], pi: Perspective,
             lane: str, target: Optional[Perspective] = None) -> str:
        if isinstance(e, ast.Var):
            return e.name
        if isinstance(e, ast.IntLit):
            return str(e.value)
        if isinstance(e, ast.FloatLit):
            text = repr(e.value)
            return text if "." in text or "e" in text else text + ".0"
        if isinstance(e, ast.BoolLit):
            return "true" if e.value else "false"
        if isinstance(e, ast.RelId):
            return lane
        if isinstance(e, ast.PartitionId):
            ratio = div(pi, target or pi, self.program.machine)
            if ratio is None:
                raise EmitError(f"id() with no whole view count at {pi}")
            return str(ratio - 1)
        if isinstance(e, ast.ArrAccess):
            return (f"{self.expr(e.arr, env, pi, lane)}"
                    f"[{self.expr(e.idx, env, pi, lane)}]")
        if isinstance(e, (ast.Bop, ast.Cmp)):
            left = self.expr(e.left, env, pi, lane)
            right = self.expr(e.right, env, pi, lane)
            return f"({left} {e.op} {right})"
        raise EmitError(f"unknown expression {e!r}")

    # --- statements ---
    def stmt(self, s: ast.Stmt, depth: int, env: Dict[str, Perspective],
             pi: Perspective, lane: str, func: str,
             path: Tuple[str, ...]) -> None:
        slot = self.inserts.get((func, path), {"before": [], "after": []})
        for pt in slot["before"]:
            text = self.barrier_text(pt)
            if text:
                self.out(depth, text)
        self._stmt(s, depth, env, pi, lane, func, path)
        for pt in slot["after"]:
            text = self.barrier_text(pt)
            if text:
                self.out(depth, text)

    def _stmt(self, s: ast.Stmt, depth: int, env: Dict[str, Perspective],
              pi: Perspective, lane: str, func: str,
              path: Tuple[str, ...]) -> None:
        if isinstance(s, ast.Skip):
            self.out(depth, ";")
            return
        if isinstance(s, ast.Seq):
            self.stmt(s.first, depth, env, pi, lane, func, path + ("first",))
            self.stmt(s.second, depth, env, pi, lane, func, path + ("second",))
            return
        if isinstance(s, ast.Decl):
            env = dict(env)
            value = self.expr(s.init, env, pi, lane, s.persp)
            env[s.name] = s.persp
            self.out(depth, f"{_C_TYPE[s.ty.base]} {s.name} = {value};")
            self.stmt(s.body, depth, env, pi, lane, func, path + ("body",))
            return
        if isinstance(s, ast.Assn):
            self.out(depth, f"{s.name} = {self.expr(s.value, env, pi, lane, env.get(s.name))};")
            return
        if isinstance(s, ast.ArrAssn):
            arr = self.expr(s.arr, env, pi, lane)
            idx = self.expr(s.idx, env, pi, lane)
            self.out(depth, f"{arr}[{idx}] = {self.expr(s.value, env, pi, lane)};")
            return
        if isinstance(s, ast.If):
            self.out(depth, f"if ({self.expr(s.cond, env, pi, lane)}) {{")
            self.stmt(s.then, depth + 1, env, pi, lane, func, path + ("then",))
            self.out(depth, "} else {")
            self.stmt(s.els, depth + 1, env, pi, lane, func, path + ("els",))
            self.out(depth, "}")
            return
        if isinstance(s, ast.While):
            self.out(depth, f"while ({self.expr(s.cond, env, pi, lane)}) {{")
            self.stmt(s.body, depth + 1, env, pi, lane, func, path + ("body",))
            self.out(depth, "}")
            return
        if isinstance(s, ast.Call):
            self.call(s, depth, env, pi, lane, func)
            return
        if isinstance(s, ast.Split):
            inner = self.lane_name()
            self.out(depth, f"if ({lane} < {s.n1}) {{")
            self.out(depth + 1, f"const int {inner} = {lane};")
            self.stmt(s.left, depth + 1, env, Perspective(pi.level, s.n1), inner,
                      func, path + ("left",))
            self.out(depth, f"}} else if ({lane} < {s.n1 + s.n2}) {{")
            self.out(depth + 1, f"const int {inner} = {lane} - {s.n1};")
            self.stmt(s.right, depth + 1, env, Perspective(pi.level, s.n2), inner,
                      func, path + ("right",))
            self.out(depth, "}")
            return
        if isinstance(s, ast.Group):
            n = pi.count // s.q if s.q >= 1 and pi.count % s.q == 0 else pi.count
            inner = self.lane_name()
            self.out(depth, "{")
            self.out(depth + 1, f"const int {inner} = {lane} % {n};")
            self.stmt(s.body, depth + 1, env, Perspective(pi.level, n), inner,
                      func, path + ("body",))
            self.out(depth, "}")
            return
        if isinstance(s, ast.Destruct):
            lowered = destruct(pi, self.program.machine)
            if lowered is None:
                raise EmitError(f"destruct at {pi}")
            inner = self.lane_name()
            source = "threadIdx.x" if pi.level == Level.BLOCK else "blockIdx.x"
            self.out(depth, "{")
            self.out(depth + 1, f"const int {inner} = {source};")
            self.stmt(s.body, depth + 1, env, lowered, inner, func, path + ("body",))
            self.out(depth, "}")
            return
        if isinstance(s, ast.Alloc):
            env = dict(env)
            env[s.name] = pi
            ctype = _C_TYPE[s.base]
            if s.mem == ast.MemKind.LOCAL:
                self.out(depth, f"{ctype} {s.name}[{s.length}];")
            elif s.mem == ast.MemKind.SHARED:
                offset = self.info.shared_total.get(func, 0)
                size = s.length * ast.BASE_SIZE[s.base]
                self.info.shared_offsets[s.name] = (func, offset, size)
                self.info.shared_total[func] = offset + _align16(size)
                self.out(depth, f"{ctype}* {s.name} = ({ctype}*)"
                                f"(bdl_smem + smem_base + {offset});")
            else:
                # hoisted to a kernel parameter; nothing to declare here
                pass
            self.stmt(s.body, depth, env, pi, lane, func, path + ("body",))
            return
        if isinstance(s, ast.Free):
            return
        if isinstance(s, ast.Partition):
            env = dict(env)
            env[s.dst] = env.get(s.src, pi)
            self.out(depth, f"auto* {s.dst} = {s.src} + {s.chunk} * {lane};")
            self.stmt(s.body, depth, env, pi, lane, func, path + ("body",))
            return
        if isinstance(s, ast.Claim):
            env = dict(env)
            env[s.dst] = Perspective(pi.level, s.count)
            inner = self.lane_name()
            self.out(depth, f"auto* {s.dst} = {s.src};")
            self.out(depth, f"if ({lane} < {s.count}) {{")
            self.out(depth + 1, f"const int {inner} = {lane};")
            self.stmt(s.body, depth + 1, env, Perspective(pi.level, s.count),
                      inner, func, path + ("body",))
            self.out(depth, "}")
            return
        if isinstance(s, ast.Lower):
            env = dict(env)
            env[s.dst] = destruct(pi, self.program.machine) or pi
            self.out(depth, f"auto* {s.dst} = {s.src};")
            self.stmt(s.body, depth, env, pi, lane, func, path + ("body",))
            return
        if isinstance(s, ast.AsyncPartition):
            env = dict(env)
            env[s.dst] = env.get(s.src, pi)
            self.out(depth, f"auto* {s.dst} = {s.src};")
            self.stmt(s.body, depth, env, pi, lane, func, path + ("body",))
            return
        if isinstance(s, ast.AsyncMemcpy):
            self.out(depth, f"BDL_CP_ASYNC({s.dst}, {s.src});")
            return
        if isinstance(s, ast.Memcpy):
            self.out(depth, f"{s.dst} = {s.src};")
            return
        if isinstance(s, ast.SyncInit):
            self.out(depth, f"BDL_BARRIER_ARM({s.sem});")
            return
        if isinstance(s, ast.SyncDec):
            self.out(depth, f"BDL_BARRIER_ARRIVE({s.sem});")
            return
        if isinstance(s, ast.SyncWait):
            self.out(depth, f"BDL_BARRIER_WAIT({s.sem});")
            return
        raise EmitError(f"unknown statement {s!r}")

    def call(self, s: ast.Call, depth: int, env: Dict[str, Perspective],
             pi: Perspective, lane: str, func: str = "main") -> None:
        if s.fname == "syncthreads":
            self.out(depth, "__syncthreads();")
            return
        if s.fname == "syncwarp":
            self.out(depth, "__syncwarp();")
            return
        if s.fname == "mma":
            ops = [self.expr(a, env, pi, lane) for a in s.args]
            text = _MMA_ASM.format(
                INDENT="    " * depth,
                a0=ops[0], a1=ops[1], a2=ops[2], a3=ops[3],
                b0=ops[4], b1=ops[5], c0=ops[6], c1=ops[7], c2=ops[8], c3=ops[9])
            for line in text.split("\n"):
                self.lines.append("    " * depth + line if not
                                  line.startswith(" ") else line)
            return
        f = self.program.function(s.fname)
        if f is None:
            raise EmitError(f"call to unknown function {s.fname!r}")
        args = [self.expr(a, env, pi, lane, p[1]) for a, p in zip(s.args, f.params)]
        args += [lane, "blockIdx.x",
                 f"smem_base + {self.info.shared_total.get(func, 0)}"]
        self.out(depth, f"{s.fname}({', '.join(args)});")

    # --- top level ---
    def emit(self) -> str:
        self.out(0, "// Generated CUDA translation; view bookkeeping erased.")
        self.out(0, "#include <cuda_runtime.h>")
        self.out(0, "")
        self.out(0, "#define BDL_BARRIER_ARM(i)")
        self.out(0, "#define BDL_BARRIER_ARRIVE(i) __threadfence_block();")
        self.out(0, "#define BDL_BARRIER_WAIT(i) __syncthreads();")
        self.out(0, "#define BDL_CP_ASYNC(dst, src) (dst) = (src);")
        self.out(0, "")
        self.out(0, "extern __shared__ unsigned char bdl_smem[];")
        self.out(0, "")
        for f in self.program.functions:
            self.emit_function(f)
        self.emit_entry()
        return "\n".join(self.lines) + "\n"

    def emit_function(self, f: ast.FuncDef) -> None:
        params = [_param_text(n, t) for (n, _p, t) in f.params]
        params += ["int rid", "int bid", "int smem_base"]
        self.out(0, f"__device__ void {f.name}({', '.join(params)}) {{")
        env = {n: p for (n, p, _t) in f.params}
        self.stmt(f.body, 1, env, f.persp, "rid", f.name, ())
        self.out(0, "}")
        self.out(0, "")

    def emit_entry(self) -> None:
        globals_ = _collect_global_allocs(self.program.entry)
        params = [f"{_C_TYPE[base]}* {name}" for (name, base, _len) in globals_]
        self.info.kernel_params = [name for (name, _b, _l) in globals_]
        self.out(0, f"__global__ void bdl_main({', '.join(params)}) {{")
        self.out(1, "const int smem_base = 0;")
        self.out(1, "(void)smem_base;")
        env = {name: GRID1 for (name, _b, _l) in globals_}
        self.stmt(self.program.entry, 1, env, GRID1, "0", "main", ())
        self.out(0, "}")


def _align16(n: int) -> int:
    return (n + 15) // 16 * 16


def _param_text(name: str, ty) -> str:
    if isinstance(ty, ast.ScalarType):
        return f"{_C_TYPE[ty.base]} {name}"
    const = "const " if ty.const else ""
    return f"{const}{_C_TYPE[ty.base]}* {name}"


def _collect_global_allocs(s: ast.Stmt) -> List[Tuple[str, ast.BaseType, int]]:
    out: List[Tuple[str, ast.BaseType, int]] = []

    def visit(s: ast.Stmt) -> None:
        if isinstance(s, ast.Alloc) and s.mem == ast.MemKind.GLOBAL:
            out.append((s.name, s.base, s.length))
        for attr in ("first", "second", "body", "then", "els", "left", "right"):
            child = getattr(s, attr, None)
            if child is not None and not isinstance(child, (str, int)):
                visit(child)

    visit(s)
    return out


def emit_cuda(program: ast.Program, plan: Optional[SyncPlan] = None) -> str:
    return _Emitter(program, plan).emit()


def emit_cuda_with_info(program: ast.Program,
                        plan: Optional[SyncPlan] = None) -> Tuple[str, EmitInfo]:
    emitter = _Emitter(program, plan)
    text = emitter.emit()
    return text, emitter.info


def emit_golden_check(corpus_dir, golden_dir) -> Dict[str, str]:
    """Byte-compare fresh emission against checked-in golden files."""
    import pathlib

    from .parser import parse
    from .syncinfer import (arrive_motion, build_dcfg, insert_sync_points,
                            wait_motion)

    from .typeck import check_program

    corpus = pathlib.Path(corpus_dir)
    golden = pathlib.Path(golden_dir)
    results: Dict[str, str] = {}
    for src in sorted(corpus.glob("*.bdl")):
        program, diags = parse(src.read_text())
        if diags or not check_program(program).ok:
            results[src.name] = "skipped: does not typecheck"
            continue
        plan = arrive_motion(wait_motion(
            insert_sync_points(build_dcfg(program)), program), program)
        text = emit_cuda(program, plan)
        ref = golden / (src.stem + ".cu")
        if not ref.exists():
            results[src.name] = "missing golden"
        elif ref.read_text() != text:
            results[src.name] = "differs from golden"
        else:
            results[src.name] = "ok"
    return results
