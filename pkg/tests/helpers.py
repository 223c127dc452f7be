from __future__ import annotations

from decimal import Decimal

from demm.numerics import rel_diff

D = Decimal


def close(actual, expected, rel: str = "1e-12") -> bool:
    """Relative agreement; ``expected`` may be given as str, int or Decimal."""
    return rel_diff(Decimal(actual), Decimal(str(expected))) <= Decimal(rel)


def vec_close(actual, expected, rel: str = "1e-12") -> bool:
    return len(actual) == len(expected) and all(close(a, e, rel) for a, e in zip(actual, expected))
