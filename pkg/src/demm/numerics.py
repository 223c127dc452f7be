"""Decimal arithmetic used by every pool formula.

Amounts are plain :class:`decimal.Decimal` values. Additions and
subtractions of amounts are exact (no rounding ever happens when tokens move
between accounts and the pool); multiplication, division and the
transcendental functions round to the working precision, which defaults to
50 significant digits.
"""

from __future__ import annotations

import contextlib
import decimal
import re
from contextvars import ContextVar
from decimal import ROUND_CEILING, ROUND_FLOOR, ROUND_HALF_EVEN, Decimal
from typing import Iterable, Iterator, Sequence

Dec = Decimal

DEFAULT_PRECISION = 50
GUARD_DIGITS = 20

ZERO = Decimal(0)
ONE = Decimal(1)

_precision: ContextVar[int] = ContextVar("demm_precision", default=DEFAULT_PRECISION)

_EXACT = decimal.Context(
    prec=decimal.MAX_PREC,
    Emax=decimal.MAX_EMAX,
    Emin=decimal.MIN_EMIN,
    traps=[decimal.InvalidOperation, decimal.Inexact, decimal.Overflow],
)

_CANONICAL = re.compile(r"^[+-]?[0-9]+(\.[0-9]+)?$")


class NumericError(ValueError):
    """Raised for domain errors (non-positive log argument, bad literal, ...)."""


def working_precision() -> int:
    return _precision.get()


@contextlib.contextmanager
def precision(digits: int) -> Iterator[None]:
    """Temporarily change the working precision for the current context."""
    if digits < 10:
        raise NumericError("precision below 10 digits is not supported")
    token = _precision.set(digits)
    try:
        yield
    finally:
        _precision.reset(token)


def context(extra: int = 0, rounding: str = ROUND_HALF_EVEN) -> decimal.Context:
    return decimal.Context(
        prec=working_precision() + extra,
        rounding=rounding,
        Emax=decimal.MAX_EMAX,
        Emin=decimal.MIN_EMIN,
        traps=[decimal.InvalidOperation, decimal.DivisionByZero, decimal.Overflow],
    )


def D(value: object) -> Decimal:
    """Coerce ``value`` to a finite Decimal. Floats are refused on purpose."""
    if isinstance(value, Decimal):
        result = value
    elif isinstance(value, bool):
        raise TypeError("booleans are not amounts")
    elif isinstance(value, int):
        result = Decimal(value)
    elif isinstance(value, str):
        return parse_dec(value)
    else:
        raise TypeError(f"cannot convert {type(value).__name__} to Decimal")
    if not result.is_finite():
        raise NumericError(f"non-finite value {result!r}")
    return result


def parse_dec(text: str) -> Decimal:
    """Parse a canonical decimal string (no exponent notation)."""
    if not isinstance(text, str) or not _CANONICAL.match(text):
        raise NumericError(f"malformed decimal {text!r}")
    return Decimal(text)


def format_dec(value: Decimal) -> str:
    """Canonical string for ``value``; ``parse_dec(format_dec(x)) == x``."""
    if not value.is_finite():
        raise NumericError(f"non-finite value {value!r}")
    text = format(value, "f")
    if text.startswith("-") and value.is_zero():
        text = text[1:]
    return text


# exact ops -----------------------------------------------------------------


def add(a: Decimal, b: Decimal) -> Decimal:
    return _EXACT.add(a, b)


def sub(a: Decimal, b: Decimal) -> Decimal:
    return _EXACT.subtract(a, b)


def neg(a: Decimal) -> Decimal:
    # unary minus would round to the ambient context
    return a.copy_negate()


def total(values: Iterable[Decimal]) -> Decimal:
    acc = ZERO
    for v in values:
        acc = _EXACT.add(acc, v)
    return acc


# rounded ops ---------------------------------------------------------------


def mul(a: Decimal, b: Decimal, rounding: str = ROUND_HALF_EVEN) -> Decimal:
    return context(rounding=rounding).multiply(a, b)


def div(a: Decimal, b: Decimal, rounding: str = ROUND_HALF_EVEN) -> Decimal:
    if b.is_zero():
        raise NumericError("division by zero")
    return context(rounding=rounding).divide(a, b)


def muldiv(a: Decimal, b: Decimal, c: Decimal, rounding: str = ROUND_HALF_EVEN) -> Decimal:
    """``a * b / c`` with a single rounding step at the end."""
    if c.is_zero():
        raise NumericError("division by zero")
    product = _EXACT.multiply(a, b)
    return context(rounding=rounding).divide(product, c)


def round_down(x: Decimal) -> Decimal:
    """Round toward -inf at working precision (pool-favourable for outflows)."""
    return context(rounding=ROUND_FLOOR).plus(x)


def round_up(x: Decimal) -> Decimal:
    return context(rounding=ROUND_CEILING).plus(x)


def rel_diff(a: Decimal, b: Decimal) -> Decimal:
    """|a - b| / max(|a|, |b|), zero when both are zero."""
    scale = max(a.copy_abs(), b.copy_abs())
    if scale.is_zero():
        return ZERO
    return context(extra=GUARD_DIGITS).divide(_EXACT.subtract(a, b).copy_abs(), scale)


# transcendental ------------------------------------------------------------


def ln_d(x: Decimal, extra: int = GUARD_DIGITS) -> Decimal:
    if x <= 0:
        raise NumericError(f"logarithm of non-positive value {x}")
    return context(extra=extra).ln(x)


def exp_d(y: Decimal, extra: int = GUARD_DIGITS) -> Decimal:
    ctx = context(extra=extra)
    # a large exponent amplifies the relative error of y
    if y.adjusted() > 0:
        ctx.prec += y.adjusted() + 1
    return ctx.exp(y)


def pow_d(base: Decimal, exponent: Decimal, rounding: str = ROUND_HALF_EVEN) -> Decimal:
    """``base ** exponent`` for ``base > 0``, rounded once at working precision.

    Integral exponents go through exact-ish integer powering; everything else
    is ``exp(exponent * ln(base))`` evaluated with guard digits.
    """
    if not base.is_finite() or not exponent.is_finite():
        raise NumericError("non-finite operand")
    if base <= 0:
        raise NumericError(f"pow_d requires a positive base, got {base}")
    out = context(rounding=rounding)
    if exponent.is_zero() or base == ONE:
        return ONE
    if exponent == ONE:
        return out.plus(base)
    if exponent == exponent.to_integral_value() and abs(exponent) <= 4096:
        hi = context(extra=GUARD_DIGITS + 10)
        return out.plus(hi.power(base, int(exponent)))
    guard = GUARD_DIGITS
    y = context(extra=guard).multiply(exponent, ln_d(base, extra=guard))
    if y.adjusted() > 0:
        guard += y.adjusted() + 1
        y = context(extra=guard).multiply(exponent, ln_d(base, extra=guard))
    return out.plus(exp_d(y, extra=guard))


def geo_mean(values: Sequence[Decimal]) -> Decimal:
    """Geometric mean ``(prod values) ** (1/len)`` computed as exp(mean(ln))."""
    if not values:
        raise NumericError("geometric mean of an empty list")
    for v in values:
        if v <= 0:
            raise NumericError(f"geometric mean needs positive entries, got {v}")
    first = values[0]
    if all(v == first for v in values):
        return context().plus(first)
    hi = context(extra=GUARD_DIGITS)
    acc = ZERO
    for v in values:
        acc = hi.add(acc, hi.ln(v))
    return context().plus(exp_d(hi.divide(acc, Decimal(len(values)))))
