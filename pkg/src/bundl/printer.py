"""Canonical text form for core programs.

parse(pretty_print(p)) is structurally equal to p. Binders printed as
declaration lines (decl, alloc) scope over the rest of their block, which
is how the parser re-nests them; callers that build ASTs by hand should
keep binder bodies as the tail of their sequence.
"""

from __future__ import annotations

from . import syntax as ast

_PREC = {"==": 1, "!=": 1, "<": 1, "<=": 1, ">": 1, ">=": 1,
         "+": 2, "-": 2, "*": 3, "/": 3, "%": 3}


def expr_text(e: ast.Expr, parent_prec: int = 0) -> str:
    if isinstance(e, ast.Var):
        return e.name
    if isinstance(e, ast.IntLit):
        return str(e.value)
    if isinstance(e, ast.FloatLit):
        text = repr(e.value)
        return text if ("." in text or "e" in text or "inf" in text) else text + ".0"
    if isinstance(e, ast.BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, ast.PartitionId):
        return "id()"
    if isinstance(e, ast.RelId):
        return "rel_id()"
    if isinstance(e, ast.ArrAccess):
        return f"{expr_text(e.arr, 4)}[{expr_text(e.idx)}]"
    if isinstance(e, (ast.Bop, ast.Cmp)):
        prec = _PREC[e.op]
        left = expr_text(e.left, prec - 1)
        right = expr_text(e.right, prec)
        text = f"{left} {e.op} {right}"
        return f"({text})" if prec <= parent_prec else text
    raise TypeError(f"unknown expression {e!r}")


def _type_decl_text(ty: ast.ScalarType, persp) -> str:
    return f"{ty} @ {persp}"


def _stmt_lines(s: ast.Stmt, indent: int, out: list) -> None:
    pad = "    " * indent

    for item in ast.block_list(s):
        if isinstance(item, ast.Skip):
            out.append(pad + "skip")
        elif isinstance(item, ast.Decl):
            out.append(
                pad + f"{item.name} : {_type_decl_text(item.ty, item.persp)}"
                f" = {expr_text(item.init)}"
            )
            _stmt_lines(item.body, indent, out)
        elif isinstance(item, ast.Alloc):
            out.append(
                pad + f"{item.name} : {item.mem.value} "
                f"{item.base.value}[{item.length}]"
            )
            _stmt_lines(item.body, indent, out)
        elif isinstance(item, ast.Assn):
            out.append(pad + f"{item.name} = {expr_text(item.value)}")
        elif isinstance(item, ast.ArrAssn):
            out.append(
                pad + f"{expr_text(item.arr, 4)}[{expr_text(item.idx)}]"
                f" = {expr_text(item.value)}"
            )
        elif isinstance(item, ast.If):
            out.append(pad + f"if {expr_text(item.cond)}:")
            _stmt_lines(item.then, indent + 1, out)
            out.append(pad + "else:")
            _stmt_lines(item.els, indent + 1, out)
        elif isinstance(item, ast.While):
            out.append(pad + f"while {expr_text(item.cond)}:")
            _stmt_lines(item.body, indent + 1, out)
        elif isinstance(item, ast.Call):
            args = ", ".join(expr_text(a) for a in item.args)
            out.append(pad + f"{item.fname}({args})")
        elif isinstance(item, ast.Split):
            out.append(pad + f"split({item.n1}, {item.n2}):")
            _stmt_lines(item.left, indent + 1, out)
            out.append(pad + "else:")
            _stmt_lines(item.right, indent + 1, out)
        elif isinstance(item, ast.Group):
            out.append(pad + f"group {item.q}:")
            _stmt_lines(item.body, indent + 1, out)
        elif isinstance(item, ast.Destruct):
            out.append(pad + "destruct:")
            _stmt_lines(item.body, indent + 1, out)
        elif isinstance(item, ast.Free):
            out.append(pad + f"free({item.amount})")
        elif isinstance(item, ast.Partition):
            out.append(
                pad + f"partition[{item.sem}] {item.src} into {item.dst}"
                f" by {item.chunk}:"
            )
            _stmt_lines(item.body, indent + 1, out)
        elif isinstance(item, ast.Claim):
            out.append(
                pad + f"claim[{item.sem}] {item.src} into {item.dst}"
                f" at {item.count}:"
            )
            _stmt_lines(item.body, indent + 1, out)
        elif isinstance(item, ast.Lower):
            out.append(pad + f"lower[{item.sem}] {item.src} into {item.dst}:")
            _stmt_lines(item.body, indent + 1, out)
        elif isinstance(item, ast.AsyncPartition):
            out.append(pad + f"async[{item.tag}] {item.src} into {item.dst}:")
            _stmt_lines(item.body, indent + 1, out)
        elif isinstance(item, ast.AsyncMemcpy):
            out.append(pad + f"async_memcpy({item.dst}, {item.src})")
        elif isinstance(item, ast.Memcpy):
            out.append(pad + f"memcpy({item.dst}, {item.src})")
        elif isinstance(item, ast.SyncInit):
            out.append(pad + f"init_sync({item.sem})")
        elif isinstance(item, ast.SyncDec):
            out.append(pad + f"dec_sync({item.sem})")
        elif isinstance(item, ast.SyncWait):
            out.append(pad + f"wait_sync({item.sem})")
        else:
            raise TypeError(f"unknown statement {item!r}")


def _param_text(name: str, persp, ty) -> str:
    if isinstance(ty, ast.ScalarType):
        return f"{name} : {ty.base.value} @ {persp}"
    if isinstance(ty, ast.ArrayType):
        c = "const " if ty.const else ""
        return f"{name} : {c}{ty.base.value}[{ty.mem.value}] @ {persp}"
    raise TypeError(f"unprintable parameter type {ty!r}")


def pretty_print(p: ast.Program) -> str:
    lines = [
        f"@machine(T={p.machine.threads_per_block}, B={p.machine.blocks_per_grid})",
        "",
    ]
    for f in p.functions:
        lines.append(f"@requires({f.persp}, smem={f.mem_bound})")
        params = ", ".join(_param_text(n, pp, t) for (n, pp, t) in f.params)
        lines.append(f"def {f.name}({params}):")
        _stmt_lines(f.body, 1, lines)
        lines.append("")
    lines.append(f"@requires(grid[1], smem={p.entry_mem_bound})")
    lines.append("def main():")
    _stmt_lines(p.entry, 1, lines)
    lines.append("")
    return "\n".join(lines)
