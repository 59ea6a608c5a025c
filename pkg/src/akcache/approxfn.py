"""Key approximation functions.

An input vector is a flow's packet time series (signed packet sizes, the sign
giving direction). An approximation function maps it to a shorter or coarser
integer tuple that is then used as an exact-match cache key.

Functions are built from a textual spec::

    >>> fn = parse("prefix:4|quantize:10")
    >>> fn((13, -27, 5, 8, 99))
    (10, -30, 10, 10)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import ConfigurationError

MAX_INPUT_LEN = 100
MAX_ABS_ELEMENT = 65535

KINDS = ("identity", "prefix", "suffix", "every", "maxpool", "quantize", "compose")

InputVector = tuple  # tuple[int, ...]
ApproxKey = tuple  # tuple[int, ...]


def make_input(elements: Sequence[int]) -> InputVector:
    """Validate ``elements`` and return them as an immutable input vector."""
    x = tuple(int(v) for v in elements)
    if not 1 <= len(x) <= MAX_INPUT_LEN:
        raise ConfigurationError(f"input length {len(x)} outside [1, {MAX_INPUT_LEN}]")
    for v in x:
        if abs(v) > MAX_ABS_ELEMENT:
            raise ConfigurationError(f"element {v} exceeds |{MAX_ABS_ELEMENT}|")
    return x


_structs: dict[int, struct.Struct] = {}


def key_to_bytes(key: Sequence[int]) -> bytes:
    """Serialize a key as a 1-byte length followed by little-endian int32s."""
    n = len(key)
    s = _structs.get(n)
    if s is None:
        s = _structs[n] = struct.Struct(f"<B{n}i")
    return s.pack(n, *key)


def key_from_bytes(data: bytes) -> ApproxKey:
    n = data[0]
    return struct.unpack_from(f"<{n}i", data, 1)


def _maxpool(x, n):
    return tuple(max(x[i:i + n]) for i in range(0, len(x), n))


def _build(kind: str, n: int, parts: tuple) -> Callable[[Sequence[int]], tuple]:
    if kind == "identity":
        return tuple
    if kind == "prefix":
        return lambda x: tuple(x[:n])
    if kind == "suffix":
        return lambda x: tuple(x[-n:])
    if kind == "every":
        return lambda x: tuple(x[::n])
    if kind == "maxpool":
        return lambda x: _maxpool(x, n)
    if kind == "quantize":
        # nearest multiple of n, half-way values rounded away from zero
        half = n // 2
        return lambda x: tuple(
            (v + half) // n * n if v >= 0 else -((half - v) // n * n) for v in x
        )
    funcs = [p._fn for p in parts]
    if len(funcs) == 1:
        return funcs[0]

    def composed(x):
        for f in funcs:
            x = f(x)
        return x

    return composed


@dataclass(frozen=True)
class ApproxFn:
    """A deterministic key approximation function.

    Instances are callable: ``fn(x)`` returns the approximate key of ``x``.
    """

    kind: str = "identity"
    n: int = 0
    parts: tuple = ()
    _fn: Callable = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown approximation kind {self.kind!r}")
        if self.kind == "compose":
            if not self.parts:
                raise ConfigurationError("compose needs at least one function")
        elif self.kind != "identity":
            if not isinstance(self.n, int) or self.n < 1:
                raise ConfigurationError(f"{self.kind} needs a positive integer parameter, got {self.n!r}")
        object.__setattr__(self, "_fn", _build(self.kind, self.n, self.parts))

    def __call__(self, x: Sequence[int]) -> ApproxKey:
        return self._fn(x)

    def __str__(self):
        if self.kind == "identity":
            return "identity"
        if self.kind == "compose":
            return "|".join(str(p) for p in self.parts)
        return f"{self.kind}:{self.n}"


IDENTITY = ApproxFn()


def identity() -> ApproxFn:
    return IDENTITY


def prefix(n: int) -> ApproxFn:
    return ApproxFn("prefix", n)


def suffix(n: int) -> ApproxFn:
    return ApproxFn("suffix", n)


def every(n: int) -> ApproxFn:
    return ApproxFn("every", n)


def maxpool(n: int) -> ApproxFn:
    return ApproxFn("maxpool", n)


def quantize(n: int) -> ApproxFn:
    return ApproxFn("quantize", n)


def compose(fns: Sequence[ApproxFn]) -> ApproxFn:
    """Chain ``fns`` left to right; nested compositions are flattened."""
    fns = list(fns)
    if not fns:
        raise ConfigurationError("compose needs at least one function")
    flat = []
    for f in fns:
        flat.extend(f.parts if f.kind == "compose" else (f,))
    return ApproxFn("compose", 0, tuple(flat))


def apply(fn: ApproxFn, x: Sequence[int]) -> ApproxKey:
    if len(x) == 0:
        raise ConfigurationError("cannot approximate an empty input")
    return fn(x)


def parse(text: str) -> ApproxFn:
    """Parse ``identity``, ``prefix:N`` ... or ``A|B`` into an :class:`ApproxFn`."""
    pieces = [p.strip() for p in text.split("|")]
    if not pieces or any(not p for p in pieces):
        raise ConfigurationError(f"malformed approximation spec {text!r}")
    fns = []
    for piece in pieces:
        name, sep, arg = piece.partition(":")
        name = name.strip().lower()
        if name == "identity":
            if sep:
                raise ConfigurationError("identity takes no parameter")
            fns.append(IDENTITY)
            continue
        if name not in KINDS or name == "compose" or not sep:
            raise ConfigurationError(f"malformed approximation spec {piece!r}")
        try:
            n = int(arg)
        except ValueError:
            raise ConfigurationError(f"non-integer parameter in {piece!r}") from None
        fns.append(ApproxFn(name, n))
    return fns[0] if len(fns) == 1 else compose(fns)
