"""
Activation Elements Module

This module holds the diode-like elements of a circuit and the scalar
maths that the solvers and the gradient machinery need from them: the
monotone relation psi of each element, its resolvent (I + alpha*psi)^-1
and its hardware linearization at an operating point.

Every activation has a kernel variable (the quantity z that enters the
kernel equations) which is either a current or a voltage. Forward diodes
and the CRD pair take a current; reverse diodes and the Zener pair take a
voltage.

Main Components:
- Variable / Variant enums
- ActivationKind: frozen description of one element and its relation
- LinearizedElement and linearize(): Short/Open replacement with offset
- resolvent(): scalar or vectorized resolvent
- ResolventMap: applies a list of activations to a vector in one call
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .utils import ConvergenceError, InfeasibleOperatingPoint, NetlistError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

THERMAL_VOLTAGE = 0.025852
ROOT_TOL = 1e-14
ROOT_MAX_ITER = 200

# exp() argument cap; exp(700) is still finite in double precision
_EXP_CAP = 700.0


class Variable(str, Enum):
    """Physical quantity carried by a kernel or port variable."""
    CURRENT = "current"
    VOLTAGE = "voltage"

    @property
    def dual(self) -> "Variable":
        return Variable.VOLTAGE if self is Variable.CURRENT else Variable.CURRENT


class Variant(str, Enum):
    IDEAL_FORWARD = "ideal_forward"
    IDEAL_REVERSE = "ideal_reverse"
    SHOCKLEY = "shockley"
    SHOCKLEY_REVERSE = "shockley_reverse"
    ZENER_PAIR = "zener_pair"
    CRD_PAIR = "crd_pair"
    # linearized replacements, only produced by LinearizedElement
    SHORT = "short"
    OPEN = "open"


_CURRENT_VARIANTS = {Variant.IDEAL_FORWARD, Variant.SHOCKLEY, Variant.CRD_PAIR}
_SMOOTH_VARIANTS = {Variant.SHOCKLEY, Variant.SHOCKLEY_REVERSE}
_IDEAL_VARIANTS = {Variant.IDEAL_FORWARD, Variant.IDEAL_REVERSE}
_CLAMP_VARIANTS = {Variant.ZENER_PAIR, Variant.CRD_PAIR}


@dataclass(frozen=True)
class ActivationKind:
    """
    A scalar maximal monotone relation z_tilde in psi(z).

    Relations by variant (z is the kernel variable):
      ideal diodes      psi(z) = {0} for z > 0, (-inf, 0] at z = 0
      shockley          psi(i) = n*vT*ln(i/iS + 1)           (impedance)
      shockley_reverse  psi(v) = iS*(1 - exp(-v/(n*vT)))     (admittance)
      zener/crd pairs   psi = normal cone of [-limit, limit]
      short             psi = {0}
      open              psi = normal cone of {0}

    Attributes:
        variant: Element type
        n: Ideality factor (Shockley variants)
        v_t: Thermal voltage in volts (Shockley variants)
        i_s: Saturation current in amperes (Shockley variants)
        limit: Clamp level of saturation pairs (volts or amperes)
        base: Kernel variable of a linearized replacement
    """

    variant: Variant
    n: float = 1.0
    v_t: float = THERMAL_VOLTAGE
    i_s: float = 1e-12
    limit: float = 1.0
    base: Optional[Variable] = None

    def __post_init__(self):
        if self.variant in _SMOOTH_VARIANTS:
            if not (self.n > 0 and self.v_t > 0 and self.i_s > 0):
                raise NetlistError(
                    f"Shockley parameters must be positive, got n={self.n}, vT={self.v_t}, iS={self.i_s}"
                )
        if self.variant in _CLAMP_VARIANTS and not self.limit > 0:
            raise NetlistError(f"Saturation limit must be positive, got {self.limit}")

    @classmethod
    def ideal_forward(cls) -> "ActivationKind":
        return cls(Variant.IDEAL_FORWARD)

    @classmethod
    def ideal_reverse(cls) -> "ActivationKind":
        return cls(Variant.IDEAL_REVERSE)

    @classmethod
    def shockley(cls, n: float = 1.0, v_t: float = THERMAL_VOLTAGE, i_s: float = 1e-12) -> "ActivationKind":
        return cls(Variant.SHOCKLEY, n=n, v_t=v_t, i_s=i_s)

    @classmethod
    def shockley_reverse(cls, n: float = 1.0, v_t: float = THERMAL_VOLTAGE,
                         i_s: float = 1e-12) -> "ActivationKind":
        return cls(Variant.SHOCKLEY_REVERSE, n=n, v_t=v_t, i_s=i_s)

    @classmethod
    def zener_pair(cls, limit: float = 1.0) -> "ActivationKind":
        return cls(Variant.ZENER_PAIR, limit=limit)

    @classmethod
    def crd_pair(cls, limit: float = 1.0) -> "ActivationKind":
        return cls(Variant.CRD_PAIR, limit=limit)

    @property
    def variable(self) -> Variable:
        """Kernel variable z of the element."""
        if self.base is not None:
            return self.base
        return Variable.CURRENT if self.variant in _CURRENT_VARIANTS else Variable.VOLTAGE

    @property
    def is_smooth(self) -> bool:
        return self.variant in _SMOOTH_VARIANTS

    @property
    def is_ideal_diode(self) -> bool:
        return self.variant in _IDEAL_VARIANTS

    @property
    def ideal_counterpart(self) -> "ActivationKind":
        """Ideal element with the same kernel variable (identity for non-smooth kinds)."""
        if self.variant is Variant.SHOCKLEY:
            return ActivationKind.ideal_forward()
        if self.variant is Variant.SHOCKLEY_REVERSE:
            return ActivationKind.ideal_reverse()
        return self

    @property
    def _thermal(self) -> float:
        return self.n * self.v_t

    def resolvent(self, x: ArrayLike, alpha: float = 1.0) -> Union[float, np.ndarray]:
        """
        Solve y + alpha*psi(y) ∋ x.

        Args:
            x: Scalar or array of points
            alpha: Positive step size

        Returns:
            Resolvent value(s), scalar in and scalar out

        Raises:
            ValueError: If alpha is not positive
            ConvergenceError: If the Shockley root finder stalls
        """
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        scalar = np.ndim(x) == 0
        values = np.atleast_1d(np.asarray(x, dtype=float))

        if self.variant in _IDEAL_VARIANTS:
            out = np.maximum(values, 0.0)
        elif self.variant in _CLAMP_VARIANTS:
            out = np.clip(values, -self.limit, self.limit)
        elif self.variant is Variant.SHORT:
            out = values.copy()
        elif self.variant is Variant.OPEN:
            out = np.zeros_like(values)
        elif self.variant is Variant.SHOCKLEY:
            out = _shockley_resolvent(values, alpha, self._thermal, self.i_s)
        else:
            out = _shockley_reverse_resolvent(values, alpha, self._thermal, self.i_s)

        return float(out[0]) if scalar else out

    def value(self, z: ArrayLike) -> np.ndarray:
        """psi(z) for smooth variants."""
        z = np.asarray(z, dtype=float)
        if self.variant is Variant.SHOCKLEY:
            return self._thermal * np.log(z / self.i_s + 1.0)
        if self.variant is Variant.SHOCKLEY_REVERSE:
            return self.i_s * (1.0 - np.exp(np.minimum(-z / self._thermal, _EXP_CAP)))
        if self.variant is Variant.SHORT:
            return np.zeros_like(z)
        raise ValueError(f"{self.variant.value} is set-valued; use distance() instead")

    def derivative(self, z: ArrayLike) -> np.ndarray:
        """
        Slope of psi at z for smooth variants.

        Piecewise variants return 0 on their free branch and inf where the
        variable is pinned.
        """
        z = np.asarray(z, dtype=float)
        if self.variant is Variant.SHOCKLEY:
            return self._thermal / (z + self.i_s)
        if self.variant is Variant.SHOCKLEY_REVERSE:
            return (self.i_s / self._thermal) * np.exp(np.minimum(-z / self._thermal, _EXP_CAP))
        free = self.free_branch(z)
        return np.where(free, 0.0, np.inf)

    def free_branch(self, z: ArrayLike, tol: float = 0.0) -> np.ndarray:
        """
        Mask of entries where psi is locally {0} and z is unconstrained.

        Only meaningful for piecewise-linear variants; smooth variants are
        reported free everywhere.
        """
        z = np.asarray(z, dtype=float)
        if self.variant in _IDEAL_VARIANTS:
            return z > tol
        if self.variant in _CLAMP_VARIANTS:
            return np.abs(z) < self.limit - tol
        if self.variant is Variant.OPEN:
            return np.zeros(z.shape, dtype=bool)
        return np.ones(z.shape, dtype=bool)

    def pinned_value(self, z: ArrayLike) -> np.ndarray:
        """Value a pinned entry snaps to (0 for diodes, ±limit for clamps)."""
        z = np.asarray(z, dtype=float)
        if self.variant in _CLAMP_VARIANTS:
            return np.where(z >= 0.0, self.limit, -self.limit)
        return np.zeros_like(z)

    def distance(self, z: ArrayLike, w: ArrayLike, tol: float = 1e-12) -> np.ndarray:
        """
        Distance from w to psi(z), entrywise.

        Entries of z outside the domain of psi (beyond tol) give inf.

        Args:
            z: Kernel variable values
            w: Candidate selections of psi(z)
            tol: Slack for deciding that z sits on a branch boundary
        """
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)

        if self.variant in _IDEAL_VARIANTS:
            on_branch = np.where(z > tol, np.abs(w), np.maximum(w, 0.0))
            return np.where(z < -tol, np.inf, on_branch)
        if self.variant in _CLAMP_VARIANTS:
            upper = z >= self.limit - tol
            lower = z <= -self.limit + tol
            dist = np.where(upper, np.maximum(-w, 0.0), np.where(lower, np.maximum(w, 0.0), np.abs(w)))
            return np.where(np.abs(z) > self.limit + tol, np.inf, dist)
        if self.variant is Variant.OPEN:
            return np.where(np.abs(z) > tol, np.inf, 0.0)
        if self.variant is Variant.SHOCKLEY:
            inside = z > -self.i_s
            safe = np.where(inside, z, 0.0)
            return np.where(inside, np.abs(w - self.value(safe)), np.inf)
        return np.abs(w - self.value(z))

    def to_dict(self) -> Dict[str, Any]:
        """Netlist representation."""
        data: Dict[str, Any] = {"type": self.variant.value}
        if self.variant in _SMOOTH_VARIANTS:
            data.update({"n": self.n, "vT": self.v_t, "iS": self.i_s})
        elif self.variant in _CLAMP_VARIANTS:
            data["limit"] = self.limit
        elif self.base is not None:
            data["base"] = self.base.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ActivationKind":
        """
        Parse a netlist activation description.

        Raises:
            NetlistError: On unknown types or bad parameters
        """
        try:
            variant = Variant(data["type"])
        except (KeyError, ValueError) as e:
            raise NetlistError(f"Unknown activation description: {data!r}") from e
        if variant in _SMOOTH_VARIANTS:
            return cls(variant, n=float(data.get("n", 1.0)), v_t=float(data.get("vT", THERMAL_VOLTAGE)),
                       i_s=float(data.get("iS", 1e-12)))
        if variant in _CLAMP_VARIANTS:
            return cls(variant, limit=float(data.get("limit", 1.0)))
        base = data.get("base")
        return cls(variant, base=Variable(base) if base else None)


class LinearMode(str, Enum):
    SHORT = "short"
    OPEN = "open"


@dataclass(frozen=True)
class LinearizedElement:
    """
    Hardware linearization of one activation.

    Short keeps the element on its conducting branch: zero slope, z free,
    and the dual quantity equal to the offset. Open pins z to zero. For a
    reverse diode (kernel variable = voltage) Short is a current source of
    value `offset` and Open holds the voltage at zero.

    Attributes:
        mode: Short or Open
        offset: Dual quantity injected on the Short branch
        variable: Kernel variable of the original element
    """

    mode: LinearMode
    offset: float = 0.0
    variable: Variable = Variable.CURRENT

    @property
    def slope(self) -> float:
        return 0.0 if self.mode is LinearMode.SHORT else float("inf")

    def as_activation(self) -> ActivationKind:
        """Relation of the linearized element, usable by the solvers."""
        variant = Variant.SHORT if self.mode is LinearMode.SHORT else Variant.OPEN
        return ActivationKind(variant, base=self.variable)


def resolvent(kind: ActivationKind, x: ArrayLike, alpha: float = 1.0) -> Union[float, np.ndarray]:
    """Module-level form of ActivationKind.resolvent."""
    return kind.resolvent(x, alpha)


def linearize(kind: ActivationKind, operating_value: float, offset: float = 0.0,
              kink_tol: float = 0.0) -> LinearizedElement:
    """
    Replace an ideal element by its Short/Open branch at an operating point.

    Saturation pairs are accepted too: Short strictly inside the limits,
    Open at a limit (the linearized z is then held, so its variation is 0).

    Args:
        kind: Ideal diode or saturation pair
        operating_value: Kernel variable at the operating point
        offset: Dual offset for the Short branch
        kink_tol: Values at or below this are treated as the kink

    Returns:
        LinearizedElement

    Raises:
        InfeasibleOperatingPoint: For values outside the relation's domain
        ValueError: For smooth or already linearized kinds
    """
    value = float(operating_value)
    if kind.is_ideal_diode:
        if value < 0.0:
            raise InfeasibleOperatingPoint(f"Diode operating value {value} is negative")
        mode = LinearMode.SHORT if value > kink_tol else LinearMode.OPEN
    elif kind.variant in _CLAMP_VARIANTS:
        if abs(value) > kind.limit * (1.0 + 1e-12):
            raise InfeasibleOperatingPoint(f"Operating value {value} exceeds limit {kind.limit}")
        mode = LinearMode.SHORT if abs(value) < kind.limit - kink_tol else LinearMode.OPEN
    else:
        raise ValueError(f"Cannot linearize a {kind.variant.value} element")
    return LinearizedElement(mode=mode, offset=float(offset) if mode is LinearMode.SHORT else 0.0,
                             variable=kind.variable)


def _safeguarded_newton(f, df, x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """
    Vectorized Newton iteration kept inside a sign-change bracket.

    Steps leaving the bracket are replaced by bisection. f must be
    increasing with f(lo) <= 0 <= f(hi).
    """
    y = np.clip(x, lo, hi)
    for _ in range(ROOT_MAX_ITER):
        fy = f(y)
        lo = np.where(fy <= 0.0, y, lo)
        hi = np.where(fy >= 0.0, y, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = fy / df(y)
        candidate = y - step
        outside = ~np.isfinite(candidate) | (candidate <= lo) | (candidate >= hi)
        candidate = np.where(outside, 0.5 * (lo + hi), candidate)
        moved = np.abs(candidate - y)
        tol = np.maximum(ROOT_TOL, 4.0 * np.finfo(float).eps * np.abs(candidate))
        y = candidate
        if np.all((moved <= tol) | (fy == 0.0) | (hi - lo <= tol)):
            return y
    raise ConvergenceError(f"Diode resolvent did not converge in {ROOT_MAX_ITER} iterations")


def _shockley_resolvent(x: np.ndarray, alpha: float, thermal: float, i_s: float) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError("Shockley resolvent needs finite inputs")
    c = alpha * thermal
    lo = np.full_like(x, -i_s * (1.0 - 1e-12))
    hi = np.maximum(x, i_s)

    def f(y):
        return y + c * np.log(np.maximum(y / i_s + 1.0, 1e-300)) - x

    def df(y):
        return 1.0 + c / np.maximum(y + i_s, 1e-300)

    # roots below the bracket floor lie within iS*1e-12 of it
    below = f(lo) >= 0.0
    y = _safeguarded_newton(f, df, np.where(below, lo, x), lo, np.where(below, lo, hi))
    return np.where(below, lo, y)


def _shockley_reverse_resolvent(x: np.ndarray, alpha: float, thermal: float, i_s: float) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError("Shockley resolvent needs finite inputs")
    c = alpha * i_s

    def f(y):
        return y + c * (1.0 - np.exp(np.minimum(-y / thermal, _EXP_CAP))) - x

    def df(y):
        return 1.0 + (c / thermal) * np.exp(np.minimum(-y / thermal, _EXP_CAP))

    lo = np.minimum(x, 0.0)
    hi = np.maximum(x, 0.0)
    return _safeguarded_newton(f, df, x, lo, hi)


class ResolventMap:
    """
    Entrywise resolvent for a vector governed by a list of activations.

    Activations are grouped by kind once so each call costs one numpy
    operation per distinct kind.
    """

    def __init__(self, kinds: Sequence[ActivationKind]):
        self.kinds: Tuple[ActivationKind, ...] = tuple(kinds)
        groups: Dict[ActivationKind, List[int]] = {}
        for index, kind in enumerate(self.kinds):
            groups.setdefault(kind, []).append(index)
        self.groups = [(kind, np.asarray(idx, dtype=int)) for kind, idx in groups.items()]

    def __len__(self) -> int:
        return len(self.kinds)

    @property
    def all_piecewise(self) -> bool:
        return all(not kind.is_smooth for kind in self.kinds)

    @property
    def all_smooth(self) -> bool:
        return all(kind.is_smooth or kind.variant is Variant.SHORT for kind in self.kinds)

    def __call__(self, x: np.ndarray, alpha: float) -> np.ndarray:
        out = np.empty_like(x)
        for kind, idx in self.groups:
            out[idx] = kind.resolvent(x[idx], alpha)
        return out

    def _map(self, method: str, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        first = arrays[0]
        out = np.empty(first.shape, dtype=float if method != "free_branch" else bool)
        for kind, idx in self.groups:
            out[idx] = getattr(kind, method)(*(a[idx] for a in arrays), **kwargs)
        return out

    def free_branch(self, z: np.ndarray, tol: float = 0.0) -> np.ndarray:
        return self._map("free_branch", z, tol=tol)

    def pinned_value(self, z: np.ndarray) -> np.ndarray:
        return self._map("pinned_value", z)

    def distance(self, z: np.ndarray, w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return self._map("distance", z, w, tol=tol)

    def value(self, z: np.ndarray) -> np.ndarray:
        return self._map("value", z)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        return self._map("derivative", z)
