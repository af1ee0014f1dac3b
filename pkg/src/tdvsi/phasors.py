"""Complex three-phase phasor and 3x3 impedance-matrix arithmetic.

All values are per-unit and stored rectangular (re, im); polar form appears
only at I/O boundaries so that deltas between snapshots never hit angle-wrap
issues.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import NotBalanced

# unit positive-sequence set: 1<0, 1<-120 deg, 1<+120 deg
ALPHA = cmath.exp(2j * math.pi / 3)
POS_SEQ_UNITS = (1.0 + 0.0j, ALPHA**2, ALPHA)

# balanced-structure check for positive_sequence(), relative to the largest entry
BALANCE_RTOL = 1e-9


def _require_finite(values, what):
    for v in values:
        if not (math.isfinite(v.real) and math.isfinite(v.imag)):
            raise ValueError(f"{what} contains a non-finite component: {v!r}")


@dataclass(frozen=True)
class Phasor3:
    """One synchronized three-phase phasor (voltage or current)."""

    a: complex
    b: complex
    c: complex

    def __post_init__(self):
        object.__setattr__(self, "a", complex(self.a))
        object.__setattr__(self, "b", complex(self.b))
        object.__setattr__(self, "c", complex(self.c))
        _require_finite((self.a, self.b, self.c), "Phasor3")

    @classmethod
    def from_array(cls, arr) -> "Phasor3":
        arr = np.asarray(arr, dtype=complex).reshape(3)
        return cls(arr[0], arr[1], arr[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c], dtype=complex)

    def __add__(self, other: "Phasor3") -> "Phasor3":
        return Phasor3(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other: "Phasor3") -> "Phasor3":
        return Phasor3(self.a - other.a, self.b - other.b, self.c - other.c)

    def __mul__(self, k: complex) -> "Phasor3":
        return Phasor3(self.a * k, self.b * k, self.c * k)

    __rmul__ = __mul__

    def dot_conj(self, other: "Phasor3") -> complex:
        """Conjugate-transpose inner product self* . other."""
        return (
            self.a.conjugate() * other.a
            + self.b.conjugate() * other.b
            + self.c.conjugate() * other.c
        )

    def magnitudes(self) -> tuple[float, float, float]:
        return (abs(self.a), abs(self.b), abs(self.c))

    def positive_sequence(self) -> complex:
        """Positive-sequence component (a + alpha*b + alpha^2*c) / 3."""
        return (self.a + ALPHA * self.b + ALPHA**2 * self.c) / 3.0


@dataclass(frozen=True)
class BalancedSpec:
    """Self/mutual pair describing a balanced 3x3 impedance."""

    z_self: complex
    z_mutual: complex


class ImpedanceMatrix3:
    """Complex 3x3 series impedance (per-unit ohms).

    Stored as a read-only numpy array; instances are immutable values.
    """

    __slots__ = ("z",)

    def __init__(self, z):
        arr = np.array(z, dtype=complex).reshape(3, 3)
        _require_finite(arr.ravel(), "ImpedanceMatrix3")
        arr.setflags(write=False)
        object.__setattr__(self, "z", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ImpedanceMatrix3 is immutable")

    def __repr__(self):
        return f"ImpedanceMatrix3({self.z.tolist()!r})"

    def as_array(self) -> np.ndarray:
        return np.array(self.z)

    def __add__(self, other: "ImpedanceMatrix3") -> "ImpedanceMatrix3":
        return ImpedanceMatrix3(self.z + other.z)

    def __mul__(self, k: complex) -> "ImpedanceMatrix3":
        return ImpedanceMatrix3(self.z * k)

    __rmul__ = __mul__

    def mv(self, p: Phasor3) -> Phasor3:
        """Matrix-vector product Z . p."""
        return Phasor3.from_array(self.z @ p.as_array())

    def asymmetry(self) -> float:
        """Frobenius norm of Z - Z^T."""
        return float(np.linalg.norm(self.z - self.z.T))

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return float(np.max(np.abs(self.z - self.z.T))) <= tol

    def is_balanced(self, rtol: float = BALANCE_RTOL) -> bool:
        d = np.diag(self.z)
        off = self.z[~np.eye(3, dtype=bool)]
        scale = max(np.max(np.abs(self.z)), 1.0e-300)
        return (
            np.max(np.abs(d - d[0])) <= rtol * scale
            and np.max(np.abs(off - off[0])) <= rtol * scale
        )


def balanced_matrix(spec: BalancedSpec) -> ImpedanceMatrix3:
    """Expand a self/mutual pair into the balanced 3x3 matrix."""
    zs, zm = complex(spec.z_self), complex(spec.z_mutual)
    return ImpedanceMatrix3(
        [[zs, zm, zm], [zm, zs, zm], [zm, zm, zs]]
    )


def positive_sequence(m: ImpedanceMatrix3) -> complex:
    """Positive-sequence impedance z_self - z_mutual of a balanced matrix.

    Raises NotBalanced if diagonals or off-diagonals differ beyond the
    relative tolerance (simulator matrices are exact; estimator output may
    carry solver noise at the 1e-9 level).
    """
    if not m.is_balanced():
        raise NotBalanced(
            "positive_sequence requires equal diagonals and equal off-diagonals"
        )
    return complex(m.z[0, 0] - m.z[0, 1])


def balanced_current(magnitude: complex) -> Phasor3:
    """Positive-sequence current set scaled by a complex magnitude."""
    k = complex(magnitude)
    return Phasor3(k * POS_SEQ_UNITS[0], k * POS_SEQ_UNITS[1], k * POS_SEQ_UNITS[2])


def quadratic_form(left: Phasor3, m: ImpedanceMatrix3, right: Phasor3) -> complex:
    """left* . M . right, the apparent-power form used for series losses."""
    return complex(np.conj(left.as_array()) @ m.z @ right.as_array())
