"""Diagnostics shared by the desugarer and the typechecker."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum


class Code(str, Enum):
    GROUP_DIVISIBILITY = "GroupDivisibility"
    SPLIT_ALIGN = "SplitAlign"
    DESTRUCT_UNDEFINED = "DestructUndefined"
    READ_UP = "ReadUp"
    WRITE_DOWN = "WriteDown"
    SHARED_ALLOC_LEVEL = "SharedAllocLevel"
    MEM_BOUND_EXCEEDED = "MemBoundExceeded"
    CLAIM_TOO_LARGE = "ClaimTooLarge"
    PARTITION_NON_DIVISOR = "PartitionNonDivisor"
    LOCAL_PARTITION = "LocalPartition"
    DECL_ARRAY = "DeclArray"
    CALL_PERSPECTIVE = "CallPerspective"
    CALL_MEM = "CallMem"
    UNKNOWN_VAR = "UnknownVar"
    TYPE_MISMATCH = "TypeMismatch"
    ASYNC_MISUSE = "AsyncMisuse"


@dataclass(frozen=True)
class Span:
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        if self.line == 0:
            return "<unknown>"
        return f"{self.line}:{self.col}"


@dataclass(frozen=True)
class Diagnostic:
    code: Code
    span: Span
    message: str

    def render(self, color: bool = False) -> str:
        tag = self.code.value
        if color:
            tag = f"\x1b[31m{tag}\x1b[0m"
        return f"{self.span}: {tag}: {self.message}"

    def to_json(self) -> str:
        return json.dumps(
            {
                "code": self.code.value,
                "span": {"line": self.span.line, "col": self.span.col},
                "message": self.message,
            }
        )


class ParseError(Exception):
    def __init__(self, line: int, col: int, message: str, expected: tuple = ()):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.message = message
        self.expected = expected
