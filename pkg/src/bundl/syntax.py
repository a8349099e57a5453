"""Core abstract syntax: types, expressions, statements, programs.

Nodes are frozen so statements can live in hashable machine configurations.
Source spans and surface site labels are carried for diagnostics but
excluded from structural equality; semaphore and async tags take part in
equality because the semantics keys its counters on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple, Union

from .diagnostics import Span
from .persp import MachineParams, Perspective


class BaseType(str, Enum):
    BOOL = "bool"
    INT = "int"
    FLOAT = "float"


class MemKind(str, Enum):
    LOCAL = "local"
    SHARED = "shared"
    GLOBAL = "global"


# Byte sizes used for memory-bound accounting.
BASE_SIZE = {BaseType.BOOL: 1, BaseType.INT: 4, BaseType.FLOAT: 4}


@dataclass(frozen=True)
class ScalarType:
    base: BaseType

    def __str__(self) -> str:
        return self.base.value


@dataclass(frozen=True)
class ArrayType:
    base: BaseType
    mem: MemKind
    const: bool = False

    def __str__(self) -> str:
        c = "const " if self.const else ""
        return f"{c}{self.base.value}[{self.mem.value}]"


@dataclass(frozen=True)
class AsyncType:
    inner: ArrayType

    def __str__(self) -> str:
        return f"async {self.inner}"


@dataclass(frozen=True)
class FuncType:
    params: Tuple[Tuple[str, Perspective, "ValueType"], ...]
    persp: Perspective
    mem_bound: int

    def __str__(self) -> str:
        ps = ", ".join(f"{n} : {t} @ {p}" for (n, p, t) in self.params)
        return f"fn({ps}) @ {self.persp} / smem {self.mem_bound}"


ValueType = Union[ScalarType, ArrayType, AsyncType, FuncType]

BOOL = ScalarType(BaseType.BOOL)
INT = ScalarType(BaseType.INT)
FLOAT = ScalarType(BaseType.FLOAT)


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Var:
    name: str
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class IntLit:
    value: int
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class FloatLit:
    value: float
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class BoolLit:
    value: bool
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class PartitionId:
    """Number of narrower views inside the ambient one, minus one."""

    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class RelId:
    """Relative index of the executing unit within the current perspective.

    Surface extension: the core id() is constant per context, so programs
    that need a per-unit index use rel_id() instead.
    """

    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class ArrAccess:
    arr: "Expr"
    idx: "Expr"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Bop:
    op: str  # + - * / %
    left: "Expr"
    right: "Expr"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Cmp:
    op: str  # < <= > >= == !=
    left: "Expr"
    right: "Expr"
    span: Span = field(default=Span(), compare=False)


Expr = Union[Var, IntLit, FloatLit, BoolLit, PartitionId, RelId, ArrAccess, Bop, Cmp]


# ---------------------------------------------------------------------------
# Statements


@dataclass(frozen=True)
class Skip:
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Seq:
    first: "Stmt"
    second: "Stmt"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Decl:
    name: str
    ty: ScalarType
    persp: Perspective
    init: Expr
    body: "Stmt"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Assn:
    name: str
    value: Expr
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class ArrAssn:
    arr: Expr
    idx: Expr
    value: Expr
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    els: "Stmt"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class While:
    cond: Expr
    body: "Stmt"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Call:
    fname: str
    args: Tuple[Expr, ...]
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Split:
    n1: int
    n2: int
    left: "Stmt"
    right: "Stmt"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Group:
    q: int
    body: "Stmt"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Destruct:
    body: "Stmt"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Alloc:
    name: str
    mem: MemKind
    base: BaseType
    length: int
    body: "Stmt"
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Free:
    amount: int
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Partition:
    sem: int
    src: str
    dst: str
    chunk: int
    body: "Stmt"
    site: str = field(default="", compare=False)
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Claim:
    sem: int
    src: str
    dst: str
    count: int
    body: "Stmt"
    site: str = field(default="", compare=False)
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Lower:
    sem: int
    src: str
    dst: str
    body: "Stmt"
    site: str = field(default="", compare=False)
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class AsyncPartition:
    tag: int
    src: str
    dst: str
    body: "Stmt"
    site: str = field(default="", compare=False)
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class AsyncMemcpy:
    dst: str
    src: str
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class Memcpy:
    dst: str
    src: str
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class SyncInit:
    sem: int
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class SyncDec:
    sem: int
    span: Span = field(default=Span(), compare=False)


@dataclass(frozen=True)
class SyncWait:
    sem: int
    span: Span = field(default=Span(), compare=False)


Stmt = Union[
    Skip, Seq, Decl, Assn, ArrAssn, If, While, Call, Split, Group, Destruct,
    Alloc, Free, Partition, Claim, Lower, AsyncPartition, AsyncMemcpy, Memcpy,
    SyncInit, SyncDec, SyncWait,
]

REGION_STMTS = (Partition, Claim, Lower, AsyncPartition)


# ---------------------------------------------------------------------------
# Programs


@dataclass(frozen=True)
class FuncDef:
    name: str
    params: Tuple[Tuple[str, Perspective, ValueType], ...]
    persp: Perspective
    mem_bound: int
    body: Stmt
    span: Span = field(default=Span(), compare=False)

    def signature(self) -> FuncType:
        return FuncType(self.params, self.persp, self.mem_bound)


@dataclass(frozen=True)
class Program:
    machine: MachineParams
    functions: Tuple[FuncDef, ...]
    entry: Stmt
    entry_mem_bound: int

    def function(self, name: str) -> Optional[FuncDef]:
        for f in self.functions:
            if f.name == name:
                return f
        return None


def seq_of(stmts: list) -> Stmt:
    """Right-nest a statement list; empty blocks become skip."""
    if not stmts:
        return Skip()
    out = stmts[-1]
    for s in reversed(stmts[:-1]):
        out = Seq(s, out)
    return out


def block_list(s: Stmt) -> list:
    """Flatten right-nested sequences back into a list."""
    out = []
    while isinstance(s, Seq):
        out.append(s.first)
        s = s.second
    out.append(s)
    return out


def subst_var(s: Stmt, name: str, repl: Expr) -> Stmt:
    """Capture-aware substitution of a variable by an expression.

    Used by the partition step, which rewrites the body so every use of the
    narrowed name carries the unit's chunk offset.
    """

    def in_expr(e: Expr) -> Expr:
        if isinstance(e, Var):
            return repl if e.name == name else e
        if isinstance(e, ArrAccess):
            return ArrAccess(in_expr(e.arr), in_expr(e.idx), e.span)
        if isinstance(e, Bop):
            return Bop(e.op, in_expr(e.left), in_expr(e.right), e.span)
        if isinstance(e, Cmp):
            return Cmp(e.op, in_expr(e.left), in_expr(e.right), e.span)
        return e

    def in_stmt(s: Stmt) -> Stmt:
        if isinstance(s, Skip):
            return s
        if isinstance(s, Seq):
            return Seq(in_stmt(s.first), in_stmt(s.second), s.span)
        if isinstance(s, Decl):
            body = s.body if s.name == name else in_stmt(s.body)
            return Decl(s.name, s.ty, s.persp, in_expr(s.init), body, s.span)
        if isinstance(s, Assn):
            # Assignment targets are names, not general expressions; a
            # substituted variable never appears as a scalar target in
            # well-formed partitions (the narrowed name is an array).
            return Assn(s.name, in_expr(s.value), s.span)
        if isinstance(s, ArrAssn):
            return ArrAssn(in_expr(s.arr), in_expr(s.idx), in_expr(s.value), s.span)
        if isinstance(s, If):
            return If(in_expr(s.cond), in_stmt(s.then), in_stmt(s.els), s.span)
        if isinstance(s, While):
            return While(in_expr(s.cond), in_stmt(s.body), s.span)
        if isinstance(s, Call):
            return Call(s.fname, tuple(in_expr(a) for a in s.args), s.span)
        if isinstance(s, Split):
            return Split(s.n1, s.n2, in_stmt(s.left), in_stmt(s.right), s.span)
        if isinstance(s, Group):
            return Group(s.q, in_stmt(s.body), s.span)
        if isinstance(s, Destruct):
            return Destruct(in_stmt(s.body), s.span)
        if isinstance(s, Alloc):
            body = s.body if s.name == name else in_stmt(s.body)
            return Alloc(s.name, s.mem, s.base, s.length, body, s.span)
        if isinstance(s, Free):
            return s
        if isinstance(s, Partition):
            body = s.body if s.dst == name else in_stmt(s.body)
            src = s.src  # src is a name; renamed sources are never substituted
            return Partition(s.sem, src, s.dst, s.chunk, body, s.site, s.span)
        if isinstance(s, Claim):
            body = s.body if s.dst == name else in_stmt(s.body)
            return Claim(s.sem, s.src, s.dst, s.count, body, s.site, s.span)
        if isinstance(s, Lower):
            body = s.body if s.dst == name else in_stmt(s.body)
            return Lower(s.sem, s.src, s.dst, body, s.site, s.span)
        if isinstance(s, AsyncPartition):
            body = s.body if s.dst == name else in_stmt(s.body)
            return AsyncPartition(s.tag, s.src, s.dst, body, s.site, s.span)
        return s

    return in_stmt(s)


def _install_hash_caching() -> None:
    """Dataclass hashing recomputes structurally; residual statements are
    hashed constantly during schedule enumeration, so cache per instance."""
    import sys

    module = sys.modules[__name__]
    for name in dir(module):
        cls = getattr(module, name)
        if not isinstance(cls, type) or not hasattr(cls, "__dataclass_fields__"):
            continue
        generated = cls.__hash__
        if generated is None:
            continue

        def make(generated):
            def cached_hash(self):
                h = self.__dict__.get("_hash_cache")
                if h is None:
                    h = generated(self)
                    object.__setattr__(self, "_hash_cache", h)
                return h
            return cached_hash

        cls.__hash__ = make(generated)


_install_hash_caching()
