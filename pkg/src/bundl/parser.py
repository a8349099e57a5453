"""Tokenizer and recursive-descent parser for .bdl source.

The grammar is indentation sensitive in the Python style. It covers both
the surface sugar (with group(...)/match split(...)/with partition(...) as
y, for-range loops, @requires headers) and the explicit core forms the
pretty-printer emits (group q:, split(n1, n2):, partition[k] x into y by
c:, ...). Parsing builds a thin surface tree; `desugar` turns it into a
core program.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from . import syntax as ast
from .diagnostics import ParseError, Span
from .persp import LEVEL_BY_NAME, Level, MachineParams, Perspective

KEYWORD_PERSPS = {"warp": ("thread", 32), "warpgroup": ("thread", 128)}

_TWO_CHAR_OPS = ("==", "!=", "<=", ">=")
_ONE_CHAR_OPS = "@()[]:,=<>+-*/%."


@dataclass
class Token:
    kind: str  # NAME INT FLOAT OP NEWLINE INDENT DEDENT EOF
    text: str
    line: int
    col: int


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    indents = [0]
    paren_depth = 0
    lines = text.split("\n")
    for lineno, raw in enumerate(lines, start=1):
        if "\t" in raw:
            raise ParseError(lineno, raw.index("\t") + 1, "tabs are not allowed")
        s = raw.split("#", 1)[0]
        if paren_depth == 0:
            if not s.strip():
                continue
            indent = len(s) - len(s.lstrip(" "))
            if indent > indents[-1]:
                indents.append(indent)
                tokens.append(Token("INDENT", "", lineno, 1))
            else:
                while indent < indents[-1]:
                    indents.pop()
                    tokens.append(Token("DEDENT", "", lineno, 1))
                if indent != indents[-1]:
                    raise ParseError(lineno, indent + 1, "inconsistent indentation")
            j = indent
        else:
            j = 0
        n = len(s)
        while j < n:
            c = s[j]
            if c == " ":
                j += 1
                continue
            col = j + 1
            if c.isdigit():
                k = j
                while k < n and s[k].isdigit():
                    k += 1
                if k + 1 < n and s[k] == "." and s[k + 1].isdigit():
                    k += 1
                    while k < n and s[k].isdigit():
                        k += 1
                lit = s[j:k]
                kind = "FLOAT" if "." in lit else "INT"
                tokens.append(Token(kind, lit, lineno, col))
                j = k
                continue
            if c.isalpha() or c == "_":
                k = j
                while k < n and (s[k].isalnum() or s[k] == "_"):
                    k += 1
                tokens.append(Token("NAME", s[j:k], lineno, col))
                j = k
                continue
            two = s[j:j + 2]
            if two in _TWO_CHAR_OPS:
                tokens.append(Token("OP", two, lineno, col))
                j += 2
                continue
            if c in _ONE_CHAR_OPS:
                if c in "([":
                    paren_depth += 1
                elif c in ")]":
                    paren_depth = max(0, paren_depth - 1)
                tokens.append(Token("OP", c, lineno, col))
                j += 1
                continue
            raise ParseError(lineno, col, f"unexpected character {c!r}")
        if paren_depth == 0:
            tokens.append(Token("NEWLINE", "", lineno, len(s) + 1))
    while len(indents) > 1:
        indents.pop()
        tokens.append(Token("DEDENT", "", len(lines), 1))
    tokens.append(Token("EOF", "", len(lines) + 1, 1))
    return tokens


# ---------------------------------------------------------------------------
# Surface tree


@dataclass
class SStmt:
    span: Span = field(default=Span(), compare=False)


@dataclass
class SSkip(SStmt):
    pass


@dataclass
class SDeclScalar(SStmt):
    name: str = ""
    base: ast.BaseType = ast.BaseType.INT
    persp: Optional[Perspective] = None
    init: ast.Expr = None


@dataclass
class SAllocArr(SStmt):
    name: str = ""
    mem: ast.MemKind = ast.MemKind.LOCAL
    base: ast.BaseType = ast.BaseType.INT
    length: int = 0


@dataclass
class SAssn(SStmt):
    name: str = ""
    value: ast.Expr = None


@dataclass
class SArrAssn(SStmt):
    arr: ast.Expr = None
    idx: ast.Expr = None
    value: ast.Expr = None


@dataclass
class SIf(SStmt):
    cond: ast.Expr = None
    then: list = field(default_factory=list)
    els: list = field(default_factory=list)


@dataclass
class SWhile(SStmt):
    cond: ast.Expr = None
    body: list = field(default_factory=list)


@dataclass
class SFor(SStmt):
    var: str = ""
    start: ast.Expr = None
    stop: ast.Expr = None
    step: ast.Expr = None
    body: list = field(default_factory=list)


@dataclass
class SCall(SStmt):
    fname: str = ""
    args: list = field(default_factory=list)


@dataclass
class SWithGroup(SStmt):
    level: Level = Level.THREAD
    n: int = 1
    body: list = field(default_factory=list)


@dataclass
class SWithDestruct(SStmt):
    body: list = field(default_factory=list)


@dataclass
class SMatchSplit(SStmt):
    level: Level = Level.THREAD
    cases: list = field(default_factory=list)  # [(n, block)]


@dataclass
class SWithPartition(SStmt):
    src: str = ""
    target: Optional[Perspective] = None
    by: Optional[int] = None
    f_param: Optional[str] = None
    f_expr: Optional[ast.Expr] = None
    dst: str = ""
    body: list = field(default_factory=list)


@dataclass
class SWithClaim(SStmt):
    src: str = ""
    target: Perspective = None
    dst: str = ""
    body: list = field(default_factory=list)


@dataclass
class SWithLower(SStmt):
    src: str = ""
    dst: str = ""
    body: list = field(default_factory=list)


@dataclass
class SWithAsync(SStmt):
    src: str = ""
    dst: str = ""
    body: list = field(default_factory=list)


@dataclass
class SCoreGroup(SStmt):
    q: int = 1
    body: list = field(default_factory=list)


@dataclass
class SCoreDestruct(SStmt):
    body: list = field(default_factory=list)


@dataclass
class SCoreSplit(SStmt):
    n1: int = 1
    n2: int = 1
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)


@dataclass
class SCorePartition(SStmt):
    sem: Optional[int] = None
    src: str = ""
    dst: str = ""
    chunk: int = 1
    body: list = field(default_factory=list)


@dataclass
class SCoreClaim(SStmt):
    sem: Optional[int] = None
    src: str = ""
    dst: str = ""
    count: int = 1
    body: list = field(default_factory=list)


@dataclass
class SCoreLower(SStmt):
    sem: Optional[int] = None
    src: str = ""
    dst: str = ""
    body: list = field(default_factory=list)


@dataclass
class SCoreAsync(SStmt):
    tag: Optional[int] = None
    src: str = ""
    dst: str = ""
    body: list = field(default_factory=list)


@dataclass
class SFree(SStmt):
    amount: int = 0


@dataclass
class SSync(SStmt):
    which: str = "init"  # init dec wait
    sem: int = 0


@dataclass
class SMemcpy(SStmt):
    dst: str = ""
    src: str = ""
    is_async: bool = False


@dataclass
class SFunc:
    name: str
    params: List[Tuple[str, Perspective, object]]
    persp: Perspective
    mem_bound: int
    body: list
    span: Span


@dataclass
class SurfaceProgram:
    machine: MachineParams
    funcs: List[SFunc]


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, tokens: List[Token]):
        self.toks = tokens
        self.pos = 0

    # --- token helpers ---
    def peek(self, off: int = 0) -> Token:
        return self.toks[min(self.pos + off, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def error(self, msg: str, tok: Optional[Token] = None) -> ParseError:
        t = tok or self.peek()
        return ParseError(t.line, t.col, msg)

    def expect_op(self, op: str) -> Token:
        t = self.next()
        if t.kind != "OP" or t.text != op:
            raise self.error(f"expected {op!r}, found {t.text or t.kind!r}", t)
        return t

    def expect_name(self, word: Optional[str] = None) -> Token:
        t = self.next()
        if t.kind != "NAME" or (word is not None and t.text != word):
            want = word or "a name"
            raise self.error(f"expected {want}, found {t.text or t.kind!r}", t)
        return t

    def expect_int(self) -> int:
        t = self.next()
        if t.kind != "INT":
            raise self.error(f"expected an integer, found {t.text or t.kind!r}", t)
        return int(t.text)

    def at_op(self, op: str, off: int = 0) -> bool:
        t = self.peek(off)
        return t.kind == "OP" and t.text == op

    def at_name(self, word: str, off: int = 0) -> bool:
        t = self.peek(off)
        return t.kind == "NAME" and t.text == word

    def eat_newline(self) -> None:
        t = self.next()
        if t.kind != "NEWLINE":
            raise self.error(f"expected end of line, found {t.text or t.kind!r}", t)

    # --- expressions ---
    def parse_expr(self) -> ast.Expr:
        return self.parse_cmp()

    def parse_cmp(self) -> ast.Expr:
        left = self.parse_add()
        if self.peek().kind == "OP" and self.peek().text in ("<", "<=", ">", ">=", "==", "!="):
            op = self.next()
            right = self.parse_add()
            return ast.Cmp(op.text, left, right, Span(op.line, op.col))
        return left

    def parse_add(self) -> ast.Expr:
        left = self.parse_mul()
        while self.peek().kind == "OP" and self.peek().text in ("+", "-"):
            op = self.next()
            right = self.parse_mul()
            left = ast.Bop(op.text, left, right, Span(op.line, op.col))
        return left

    def parse_mul(self) -> ast.Expr:
        left = self.parse_postfix()
        while self.peek().kind == "OP" and self.peek().text in ("*", "/", "%"):
            op = self.next()
            right = self.parse_postfix()
            left = ast.Bop(op.text, left, right, Span(op.line, op.col))
        return left

    def parse_postfix(self) -> ast.Expr:
        e = self.parse_primary()
        while self.at_op("["):
            lb = self.next()
            idx = self.parse_expr()
            self.expect_op("]")
            e = ast.ArrAccess(e, idx, Span(lb.line, lb.col))
        return e

    def parse_primary(self) -> ast.Expr:
        t = self.next()
        span = Span(t.line, t.col)
        if t.kind == "INT":
            return ast.IntLit(int(t.text), span)
        if t.kind == "FLOAT":
            return ast.FloatLit(float(t.text), span)
        if t.kind == "OP" and t.text == "(":
            e = self.parse_expr()
            self.expect_op(")")
            return e
        if t.kind == "OP" and t.text == "-":
            inner = self.parse_postfix()
            if isinstance(inner, ast.IntLit):
                return ast.IntLit(-inner.value, span)
            if isinstance(inner, ast.FloatLit):
                return ast.FloatLit(-inner.value, span)
            return ast.Bop("-", ast.IntLit(0, span), inner, span)
        if t.kind == "NAME":
            if t.text == "true":
                return ast.BoolLit(True, span)
            if t.text == "false":
                return ast.BoolLit(False, span)
            if t.text == "id" and self.at_op("("):
                self.next()
                self.expect_op(")")
                return ast.PartitionId(span)
            if t.text == "rel_id" and self.at_op("("):
                self.next()
                self.expect_op(")")
                return ast.RelId(span)
            return ast.Var(t.text, span)
        raise self.error(f"expected an expression, found {t.text or t.kind!r}", t)

    def const_int_expr(self) -> int:
        e = self.parse_expr()
        v = _const_fold(e)
        if v is None:
            raise self.error("expected a constant integer expression")
        return v

    # --- perspectives and types ---
    def parse_persp(self) -> Perspective:
        t = self.expect_name()
        if t.text in KEYWORD_PERSPS:
            lvl, n = KEYWORD_PERSPS[t.text]
            return Perspective(LEVEL_BY_NAME[lvl], n)
        if t.text not in LEVEL_BY_NAME:
            raise self.error(f"unknown level {t.text!r}", t)
        self.expect_op("[")
        n = self.const_int_expr()
        self.expect_op("]")
        return Perspective(LEVEL_BY_NAME[t.text], n)

    def parse_param(self) -> Tuple[str, Perspective, object]:
        name = self.expect_name()
        self.expect_op(":")
        const = False
        if self.at_name("const"):
            self.next()
            const = True
        base_tok = self.expect_name()
        if base_tok.text not in ("int", "float", "bool"):
            raise self.error(f"unknown base type {base_tok.text!r}", base_tok)
        base = ast.BaseType(base_tok.text)
        ty: object
        if self.at_op("["):
            self.next()
            mem_tok = self.expect_name()
            if mem_tok.text not in ("local", "shared", "global"):
                raise self.error(f"unknown memory kind {mem_tok.text!r}", mem_tok)
            self.expect_op("]")
            ty = ast.ArrayType(base, ast.MemKind(mem_tok.text), const)
        else:
            if const:
                raise self.error("const applies to array parameters only", base_tok)
            ty = ast.ScalarType(base)
        self.expect_op("@")
        persp = self.parse_persp()
        return (name.text, persp, ty)

    # --- blocks and statements ---
    def parse_block(self) -> list:
        self.expect_op(":")
        self.eat_newline()
        t = self.next()
        if t.kind != "INDENT":
            raise self.error("expected an indented block", t)
        stmts = []
        while self.peek().kind not in ("DEDENT", "EOF"):
            stmts.append(self.parse_stmt())
        if self.peek().kind == "DEDENT":
            self.next()
        return stmts

    def parse_stmt(self) -> SStmt:
        t = self.peek()
        span = Span(t.line, t.col)
        if t.kind == "NAME":
            word = t.text
            if word in ("skip", "pass", "return"):
                self.next()
                self.eat_newline()
                return SSkip(span)
            if word == "free":
                self.next()
                self.expect_op("(")
                amount = self.const_int_expr()
                self.expect_op(")")
                self.eat_newline()
                return SFree(span, amount)
            if word in ("init_sync", "dec_sync", "wait_sync"):
                self.next()
                self.expect_op("(")
                sem = self.expect_int()
                self.expect_op(")")
                self.eat_newline()
                return SSync(span, word.split("_")[0], sem)
            if word in ("memcpy", "async_memcpy"):
                self.next()
                self.expect_op("(")
                dst = self.expect_name().text
                self.expect_op(",")
                src = self.expect_name().text
                self.expect_op(")")
                self.eat_newline()
                return SMemcpy(span, dst, src, word == "async_memcpy")
            if word == "if":
                self.next()
                cond = self.parse_expr()
                then = self.parse_block()
                els: list = []
                if self.at_name("else"):
                    self.next()
                    els = self.parse_block()
                return SIf(span, cond, then, els)
            if word == "while":
                self.next()
                cond = self.parse_expr()
                body = self.parse_block()
                return SWhile(span, cond, body)
            if word == "for":
                self.next()
                var = self.expect_name().text
                self.expect_name("in")
                self.expect_name("range")
                self.expect_op("(")
                start = self.parse_expr()
                self.expect_op(",")
                stop = self.parse_expr()
                step: ast.Expr = ast.IntLit(1)
                if self.at_op(","):
                    self.next()
                    step = self.parse_expr()
                self.expect_op(")")
                body = self.parse_block()
                return SFor(span, var, start, stop, step, body)
            if word == "with":
                return self.parse_with(span)
            if word == "match":
                self.next()
                self.expect_name("split")
                self.expect_op("(")
                lvl_tok = self.expect_name()
                if lvl_tok.text not in LEVEL_BY_NAME:
                    raise self.error(f"unknown level {lvl_tok.text!r}", lvl_tok)
                self.expect_op(")")
                self.expect_op(":")
                self.eat_newline()
                tk = self.next()
                if tk.kind != "INDENT":
                    raise self.error("expected indented case arms", tk)
                cases = []
                while self.at_name("case"):
                    self.next()
                    n = self.const_int_expr()
                    block = self.parse_block()
                    cases.append((n, block))
                tk = self.next()
                if tk.kind != "DEDENT":
                    raise self.error("expected only case arms in match split", tk)
                if not cases:
                    raise self.error("match split needs at least one case", t)
                return SMatchSplit(span, LEVEL_BY_NAME[lvl_tok.text], cases)
            if word == "group" and self.peek(1).kind == "INT":
                self.next()
                q = self.expect_int()
                body = self.parse_block()
                return SCoreGroup(span, q, body)
            if word == "destruct" and self.at_op(":", 1):
                self.next()
                body = self.parse_block()
                return SCoreDestruct(span, body)
            if word == "split" and self.at_op("(", 1):
                self.next()
                self.expect_op("(")
                n1 = self.const_int_expr()
                self.expect_op(",")
                n2 = self.const_int_expr()
                self.expect_op(")")
                left = self.parse_block()
                self.expect_name("else")
                right = self.parse_block()
                return SCoreSplit(span, n1, n2, left, right)
            if word in ("partition", "claim", "lower", "async") and (
                self.at_op("[", 1) or self.peek(1).kind == "NAME"
            ):
                return self.parse_core_region(span, word)
            # declaration, assignment, array assignment, or call
            if self.at_op(":", 1):
                return self.parse_decl_line(span)
            if self.at_op("=", 1):
                name = self.expect_name().text
                self.expect_op("=")
                value = self.parse_expr()
                self.eat_newline()
                return SAssn(span, name, value)
            if self.at_op("(", 1):
                name = self.expect_name().text
                self.next()
                args = []
                if not self.at_op(")"):
                    args.append(self.parse_expr())
                    while self.at_op(","):
                        self.next()
                        args.append(self.parse_expr())
                self.expect_op(")")
                self.eat_newline()
                return SCall(span, name, args)
        # fall through: expression statement (array assignment on a postfix)
        e = self.parse_postfix()
        if isinstance(e, ast.ArrAccess) and self.at_op("="):
            self.next()
            value = self.parse_expr()
            self.eat_newline()
            return SArrAssn(span, e.arr, e.idx, value)
        raise self.error("expected a statement", t)

    def parse_core_region(self, span: Span, word: str) -> SStmt:
        self.next()
        sem: Optional[int] = None
        if self.at_op("["):
            self.next()
            sem = self.expect_int()
            self.expect_op("]")
        src = self.expect_name().text
        self.expect_name("into")
        dst = self.expect_name().text
        if word == "partition":
            self.expect_name("by")
            chunk = self.const_int_expr()
            body = self.parse_block()
            return SCorePartition(span, sem, src, dst, chunk, body)
        if word == "claim":
            self.expect_name("at")
            count = self.const_int_expr()
            body = self.parse_block()
            return SCoreClaim(span, sem, src, dst, count, body)
        if word == "lower":
            body = self.parse_block()
            return SCoreLower(span, sem, src, dst, body)
        body = self.parse_block()
        return SCoreAsync(span, sem, src, dst, body)

    def parse_decl_line(self, span: Span) -> SStmt:
        name = self.expect_name().text
        self.expect_op(":")
        head = self.expect_name()
        if head.text in ("local", "shared", "global"):
            mem = ast.MemKind(head.text)
            base_tok = self.expect_name()
            if base_tok.text not in ("int", "float", "bool"):
                raise self.error(f"unknown base type {base_tok.text!r}", base_tok)
            self.expect_op("[")
            length = self.const_int_expr()
            self.expect_op("]")
            if self.at_op("@"):
                self.next()
                self.parse_persp()  # allocation binds at the code perspective
            self.eat_newline()
            return SAllocArr(span, name, mem, ast.BaseType(base_tok.text), length)
        if head.text not in ("int", "float", "bool"):
            raise self.error(f"unknown type {head.text!r}", head)
        base = ast.BaseType(head.text)
        persp: Optional[Perspective] = None
        if self.at_op("@"):
            self.next()
            persp = self.parse_persp()
        self.expect_op("=")
        init = self.parse_expr()
        self.eat_newline()
        return SDeclScalar(span, name, base, persp, init)

    def parse_with(self, span: Span) -> SStmt:
        self.next()  # with
        head = self.expect_name()
        if head.text == "group":
            self.expect_op("(")
            p = self.parse_persp()
            self.expect_op(")")
            body = self.parse_block()
            return SWithGroup(span, p.level, p.count, body)
        if head.text == "destruct":
            self.expect_op("(")
            self.expect_op(")")
            body = self.parse_block()
            return SWithDestruct(span, body)
        if head.text == "partition":
            self.expect_op("(")
            src = self.expect_name().text
            target: Optional[Perspective] = None
            by: Optional[int] = None
            f_param: Optional[str] = None
            f_expr: Optional[ast.Expr] = None
            while self.at_op(","):
                self.next()
                key = self.expect_name()
                self.expect_op("=")
                if key.text == "p":
                    target = self.parse_persp()
                elif key.text == "by":
                    by = self.const_int_expr()
                elif key.text == "f":
                    self.expect_name("lambda")
                    f_param = self.expect_name().text
                    self.expect_op(":")
                    f_expr = self.parse_expr()
                else:
                    raise self.error(f"unknown partition argument {key.text!r}", key)
            self.expect_op(")")
            self.expect_name("as")
            dst = self.expect_name().text
            body = self.parse_block()
            if target is None and by is None:
                raise self.error("partition needs p=... or by=...", head)
            return SWithPartition(span, src, target, by, f_param, f_expr, dst, body)
        if head.text == "claim":
            self.expect_op("(")
            src = self.expect_name().text
            self.expect_op(",")
            self.expect_name("p")
            self.expect_op("=")
            target = self.parse_persp()
            self.expect_op(")")
            self.expect_name("as")
            dst = self.expect_name().text
            body = self.parse_block()
            return SWithClaim(span, src, target, dst, body)
        if head.text == "lower":
            self.expect_op("(")
            src = self.expect_name().text
            self.expect_op(")")
            self.expect_name("as")
            dst = self.expect_name().text
            body = self.parse_block()
            return SWithLower(span, src, dst, body)
        if head.text == "async":
            self.expect_op("(")
            src = self.expect_name().text
            self.expect_op(")")
            self.expect_name("as")
            dst = self.expect_name().text
            body = self.parse_block()
            return SWithAsync(span, src, dst, body)
        raise self.error(f"unknown with-item {head.text!r}", head)

    # --- top level ---
    def parse_program(self) -> SurfaceProgram:
        machine: Optional[MachineParams] = None
        funcs: List[SFunc] = []
        pending_persps: Optional[List[Perspective]] = None
        pending_smem = 0
        while self.peek().kind != "EOF":
            if self.peek().kind == "NEWLINE":
                self.next()
                continue
            if self.at_op("@"):
                at = self.next()
                head = self.expect_name()
                if head.text == "machine":
                    self.expect_op("(")
                    self.expect_name("T")
                    self.expect_op("=")
                    t_val = self.expect_int()
                    self.expect_op(",")
                    self.expect_name("B")
                    self.expect_op("=")
                    b_val = self.expect_int()
                    self.expect_op(")")
                    self.eat_newline()
                    if machine is not None:
                        raise self.error("duplicate @machine header", at)
                    machine = MachineParams(t_val, b_val)
                    continue
                if head.text == "requires":
                    self.expect_op("(")
                    persps = [self.parse_persp()]
                    smem = 0
                    while self.at_op(","):
                        self.next()
                        if self.at_name("smem"):
                            self.next()
                            self.expect_op("=")
                            smem = self.const_int_expr()
                        else:
                            persps.append(self.parse_persp())
                    self.expect_op(")")
                    self.eat_newline()
                    pending_persps = persps
                    pending_smem = smem
                    continue
                raise self.error(f"unknown decorator @{head.text}", head)
            if self.at_name("def"):
                t = self.next()
                name = self.expect_name().text
                self.expect_op("(")
                params: List[Tuple[str, Perspective, object]] = []
                if not self.at_op(")"):
                    params.append(self.parse_param())
                    while self.at_op(","):
                        self.next()
                        params.append(self.parse_param())
                self.expect_op(")")
                body = self.parse_block()
                if pending_persps is None:
                    raise self.error(f"function {name!r} is missing @requires", t)
                funcs.append(
                    SFunc(name, params, pending_persps[0], pending_smem, body,
                          Span(t.line, t.col))
                )
                pending_persps = None
                pending_smem = 0
                continue
            raise self.error("expected a function definition or header")
        if machine is None:
            raise ParseError(1, 1, "missing @machine(T=..., B=...) header")
        if not any(f.name == "main" for f in funcs):
            raise ParseError(1, 1, "missing main() function")
        return SurfaceProgram(machine, funcs)


def _const_fold(e: ast.Expr) -> Optional[int]:
    if isinstance(e, ast.IntLit):
        return e.value
    if isinstance(e, ast.Bop):
        lv = _const_fold(e.left)
        rv = _const_fold(e.right)
        if lv is None or rv is None:
            return None
        if e.op == "+":
            return lv + rv
        if e.op == "-":
            return lv - rv
        if e.op == "*":
            return lv * rv
        if e.op == "/" and rv != 0 and lv % rv == 0:
            return lv // rv
    return None


def parse_surface(text: str) -> SurfaceProgram:
    return _Parser(tokenize(text)).parse_program()


def parse(text: str):
    """Parse and desugar source text into a core program.

    Raises ParseError on syntax errors; returns (Program, diagnostics) where
    diagnostics covers anything the desugarer could not lower faithfully.
    """
    from .desugar import desugar

    return desugar(parse_surface(text))
