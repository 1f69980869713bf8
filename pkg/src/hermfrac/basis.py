"""Basis families shared by every module."""

from enum import Enum


class BasisKind(str, Enum):
    """Expansion basis for a collocation discretisation.

    ``OVERSCALED`` is ``exp(-x^2) H_n(x) / sqrt(2^n n!)``, orthogonal under the
    weight ``exp(x^2)``.  ``NORMALIZED`` is the Hermite function
    ``exp(-x^2/2) H_n(x) / sqrt(2^n n!)``.  ``LAGRANGE`` is the nodal
    (cardinal) basis spanning the same space as ``NORMALIZED``.
    """

    OVERSCALED = "overscaled"
    NORMALIZED = "normalized"
    LAGRANGE = "lagrange"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown basis {value!r}; expected one of {names}") from None
