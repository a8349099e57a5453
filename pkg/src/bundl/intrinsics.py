"""Collective intrinsics visible to every program.

Each intrinsic is an ordinary function with a fixed perspective signature.
Bodies are opaque for typing; the barrier intrinsics carry a real counting
barrier so divergent call sites misbehave at runtime the way they would on
hardware.
"""

from __future__ import annotations

from . import syntax as ast
from .persp import Level, Perspective

# Reserved semaphore ids; user programs get non-negative ones.
SYNCTHREADS_SEM = -1
SYNCWARP_SEM = -2


def _barrier_body(sem: int) -> ast.Stmt:
    return ast.Seq(ast.SyncInit(sem), ast.Seq(ast.SyncDec(sem), ast.SyncWait(sem)))


def _mma_params():
    names = ["a0", "a1", "a2", "a3", "b0", "b1", "c0", "c1", "c2", "c3"]
    thread1 = Perspective(Level.THREAD, 1)
    return tuple((n, thread1, ast.FLOAT) for n in names)


INTRINSICS = (
    ast.FuncDef(
        name="mma",
        params=_mma_params(),
        persp=Perspective(Level.THREAD, 32),
        mem_bound=0,
        body=ast.Skip(),
    ),
    ast.FuncDef(
        name="syncthreads",
        params=(),
        persp=Perspective(Level.BLOCK, 1),
        mem_bound=0,
        body=_barrier_body(SYNCTHREADS_SEM),
    ),
    ast.FuncDef(
        name="syncwarp",
        params=(),
        persp=Perspective(Level.THREAD, 32),
        mem_bound=0,
        body=_barrier_body(SYNCWARP_SEM),
    ),
)

INTRINSIC_NAMES = frozenset(f.name for f in INTRINSICS)
