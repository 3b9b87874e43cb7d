"""Integer <-> permutation conversion through the factorial number system.

A group of ``T`` distinct items has ``T!`` orderings. An integer
``0 <= M < T!`` is written as ``M = sum(a_j * (T - j)!)`` for ``j = 1..T-1``
with digits ``0 <= a_j <= T - j``; each digit then picks the ``a_j``-th
smallest item still unused (a Lehmer code).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Hashable, Sequence

from .errors import DuplicateItems, ItemsNotSortedOrNotDistinct, ValueTooLarge
from .ordered_doc import sort_key

__all__ = [
    "LehmerCode",
    "code_to_integer",
    "code_to_permutation",
    "factorial",
    "factorial_decompose",
    "integer_to_permutation",
    "min_threshold",
    "permutation_to_code",
    "permutation_to_integer",
]


@lru_cache(maxsize=None)
def factorial(n: int) -> int:
    if n < 0:
        raise ValueError("factorial of a negative number")
    result = 1
    for i in range(2, n + 1):
        result *= i
    return result


def _order_key(item: Any):
    return sort_key(item) if isinstance(item, str) else item


@dataclass(frozen=True, slots=True)
class LehmerCode:
    """Digits ``a_1 .. a_{T-1}``; the implied last digit ``a_T`` is always 0."""

    T: int
    coeffs: tuple[int, ...]

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("group size must be positive")
        if len(self.coeffs) != max(self.T - 1, 0):
            raise ValueError(f"expected {self.T - 1} coefficients, got {len(self.coeffs)}")
        for j, a in enumerate(self.coeffs, start=1):
            if not 0 <= a <= self.T - j:
                raise ValueError(f"coefficient a_{j}={a} outside [0, {self.T - j}]")


def factorial_decompose(M: int, T: int) -> LehmerCode:
    """Split ``M`` into factorial digits, most significant (radix (T-1)!) first."""
    if M < 0:
        raise ValueError("watermark integers are non-negative")
    if M >= factorial(T):
        raise ValueTooLarge(f"{M} does not fit in {T}! = {factorial(T)}")
    coeffs = []
    rest = M
    for j in range(1, T):
        a, rest = divmod(rest, factorial(T - j))
        coeffs.append(a)
    return LehmerCode(T, tuple(coeffs))


def code_to_integer(code: LehmerCode) -> int:
    T = code.T
    return sum(a * factorial(T - j) for j, a in enumerate(code.coeffs, start=1))


def code_to_permutation(code: LehmerCode, sorted_items: Sequence[Any]) -> list:
    """Pick ``a_j``-th remaining item at each step; the last item closes the order."""
    items = list(sorted_items)
    if len(items) != code.T:
        raise ValueError(f"code is for {code.T} items, got {len(items)}")
    keys = [_order_key(x) for x in items]
    if any(keys[i] >= keys[i + 1] for i in range(len(keys) - 1)):
        raise ItemsNotSortedOrNotDistinct("items must be strictly increasing")
    remaining = items
    out = [remaining.pop(a) for a in code.coeffs]
    out.extend(remaining)
    return out


def permutation_to_code(observed: Sequence[Hashable]) -> LehmerCode:
    """Recover the Lehmer code of an observed ordering (inverse of the above)."""
    items = list(observed)
    if len(set(items)) != len(items):
        raise DuplicateItems("observed items are not distinct")
    remaining = sorted(items, key=_order_key)
    coeffs = []
    for q in items[:-1]:
        i = remaining.index(q)
        coeffs.append(i)
        del remaining[i]
    return LehmerCode(len(items), tuple(coeffs))


def integer_to_permutation(M: int, sorted_items: Sequence[Any]) -> list:
    return code_to_permutation(factorial_decompose(M, len(sorted_items)), sorted_items)


def permutation_to_integer(observed: Sequence[Hashable]) -> int:
    return code_to_integer(permutation_to_code(observed))


def min_threshold(L: int) -> int:
    """Smallest group size T with T! >= 2**L."""
    if L < 1:
        raise ValueError("watermark length must be at least 1 bit")
    target = 1 << L
    T, f = 1, 1
    while f < target:
        T += 1
        f *= T
    return T
