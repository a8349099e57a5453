"""Bundl: a perspective-typed GPU kernel language.

Parse, typecheck, execute under arbitrary schedules, infer barrier
placement, and emit CUDA-like text for programs whose compute and memory
resources are tracked by (level, count) perspectives.
"""

__version__ = "0.1.0"
