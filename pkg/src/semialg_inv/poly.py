"""Sparse multivariate polynomial arithmetic over a fixed variable universe.

Two coefficient flavors are supported and never mixed implicitly:

* ``exact``  -- coefficients are :class:`fractions.Fraction`; all arithmetic
  is exact.  Used by the front end, the posterior checker and everything
  that must not introduce rounding.
* ``float``  -- coefficients are binary doubles.  Used on the SDP side.

Conversion between flavors is explicit (:meth:`Polynomial.to_float`,
:meth:`Polynomial.to_exact`).  float -> exact is lossless (every double is a
rational); exact -> float rounds to nearest.

Monomials are plain exponent tuples aligned to the universe.  All orderings
are graded-lexicographic (total degree first, then the earlier variable with
the higher exponent wins), which keeps every downstream problem layout
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

Coeff = Union[Fraction, float]
Monomial = tuple[int, ...]

NEG_INF = float("-inf")


class PolyError(ValueError):
    """Raised on universe/flavor misuse (caller bugs, not data errors)."""


@dataclass(frozen=True)
class VarUniverse:
    """Ordered, duplicate-free list of variable names."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise PolyError(f"duplicate variable names: {self.names}")

    @staticmethod
    def of(names: Iterable[str]) -> "VarUniverse":
        return VarUniverse(tuple(names))

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise PolyError(f"variable {name!r} not in universe {self.names}") from None

    def unit(self, name: str) -> Monomial:
        i = self.index(name)
        return tuple(1 if j == i else 0 for j in range(len(self.names)))


def monomial_degree(m: Monomial) -> int:
    return sum(m)


def grlex_key(m: Monomial):
    # degree first; ties broken so that earlier variables with higher
    # exponents come first ((1,0) sorts before (0,1))
    return (sum(m), tuple(-e for e in m))


def monomial_mul(m1: Monomial, m2: Monomial) -> Monomial:
    return tuple(a + b for a, b in zip(m1, m2))


def monomial_basis(universe: VarUniverse, subset_vars: Sequence[str], max_degree: int) -> list[Monomial]:
    """All monomials in ``subset_vars`` of total degree <= max_degree, graded-lex.

    Basis size is C(|subset_vars| + d, d).
    """
    if max_degree < 0:
        raise PolyError("max_degree must be >= 0")
    idxs = [universe.index(v) for v in subset_vars]
    n = len(universe)

    out: list[Monomial] = []

    def rec(pos: int, remaining: int, expo: list[int]):
        if pos == len(idxs):
            out.append(tuple(expo))
            return
        for e in range(remaining + 1):
            expo[idxs[pos]] = e
            rec(pos + 1, remaining - e, expo)
        expo[idxs[pos]] = 0

    rec(0, max_degree, [0] * n)
    out.sort(key=grlex_key)
    return out


class Polynomial:
    """Immutable sparse polynomial; value semantics, no stored zeros."""

    __slots__ = ("universe", "terms", "flavor")

    def __init__(self, universe: VarUniverse, terms: Mapping[Monomial, Coeff], flavor: str):
        if flavor not in ("exact", "float"):
            raise PolyError(f"unknown flavor {flavor!r}")
        n = len(universe)
        clean: dict[Monomial, Coeff] = {}
        for m, c in terms.items():
            if len(m) != n:
                raise PolyError(f"monomial {m} does not match universe size {n}")
            if flavor == "exact":
                c = Fraction(c)
            else:
                c = float(c)
            if c != 0:
                clean[m] = c
        object.__setattr__(self, "universe", universe)
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "flavor", flavor)

    def __setattr__(self, *a):  # pragma: no cover - immutability guard
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero(universe: VarUniverse, flavor: str = "exact") -> "Polynomial":
        return Polynomial(universe, {}, flavor)

    @staticmethod
    def constant(universe: VarUniverse, value: Coeff, flavor: str = "exact") -> "Polynomial":
        return Polynomial(universe, {(0,) * len(universe): value}, flavor)

    @staticmethod
    def variable(universe: VarUniverse, name: str, flavor: str = "exact") -> "Polynomial":
        one = Fraction(1) if flavor == "exact" else 1.0
        return Polynomial(universe, {universe.unit(name): one}, flavor)

    @staticmethod
    def from_terms(universe: VarUniverse, terms: Mapping[Monomial, Coeff], flavor: str = "exact") -> "Polynomial":
        return Polynomial(universe, terms, flavor)

    # -- basic queries -------------------------------------------------------

    def degree(self) -> Union[int, float]:
        """Total degree; -inf for the zero polynomial."""
        if not self.terms:
            return NEG_INF
        return max(sum(m) for m in self.terms)

    def degree_in(self, names: Sequence[str]) -> Union[int, float]:
        if not self.terms:
            return NEG_INF
        idxs = [self.universe.index(v) for v in names]
        return max(sum(m[i] for i in idxs) for m in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, m: Monomial) -> Coeff:
        zero = Fraction(0) if self.flavor == "exact" else 0.0
        return self.terms.get(m, zero)

    def max_abs_coeff(self) -> float:
        if not self.terms:
            return 0.0
        return max(abs(float(c)) for c in self.terms.values())

    def mentioned_vars(self) -> set[str]:
        names = self.universe.names
        out: set[str] = set()
        for m in self.terms:
            for i, e in enumerate(m):
                if e:
                    out.add(names[i])
        return out

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Polynomial)
            and self.universe == other.universe
            and self.flavor == other.flavor
            and self.terms == other.terms
        )

    def __hash__(self):
        return hash((self.universe, self.flavor, frozenset(self.terms.items())))

    # -- arithmetic ----------------------------------------------------------

    def _check_compatible(self, other: "Polynomial"):
        if self.universe != other.universe:
            raise PolyError("universe mismatch")
        if self.flavor != other.flavor:
            raise PolyError("flavor mismatch (convert explicitly)")

    def __add__(self, other: "Polynomial") -> "Polynomial":
        self._check_compatible(other)
        terms = dict(self.terms)
        for m, c in other.terms.items():
            terms[m] = terms.get(m, 0) + c
        return Polynomial(self.universe, terms, self.flavor)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (-other)

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.universe, {m: -c for m, c in self.terms.items()}, self.flavor)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        self._check_compatible(other)
        terms: dict[Monomial, Coeff] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = monomial_mul(m1, m2)
                terms[m] = terms.get(m, 0) + c1 * c2
        return Polynomial(self.universe, terms, self.flavor)

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, int) or k < 0:
            raise PolyError("exponent must be a non-negative integer")
        result = Polynomial.constant(self.universe, 1, self.flavor)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base if k > 1 else base
            k >>= 1
        return result

    def scale(self, factor: Coeff) -> "Polynomial":
        if factor == 0:
            return Polynomial.zero(self.universe, self.flavor)
        return Polynomial(self.universe, {m: c * factor for m, c in self.terms.items()}, self.flavor)

    # -- substitution / evaluation -------------------------------------------

    def substitute(self, bindings: Mapping[str, "Polynomial"]) -> "Polynomial":
        """Simultaneous substitution; unbound variables pass through."""
        for name, rhs in bindings.items():
            if name not in self.universe:
                raise PolyError(f"binding for {name!r} outside universe")
            if rhs.universe != self.universe or rhs.flavor != self.flavor:
                raise PolyError("binding polynomial universe/flavor mismatch")
        images = {}
        for i, name in enumerate(self.universe.names):
            if name in bindings:
                images[i] = bindings[name]
        if not images:
            return self
        acc = Polynomial.zero(self.universe, self.flavor)
        for m, c in self.terms.items():
            term = Polynomial.constant(self.universe, c, self.flavor)
            residual = list(m)
            for i, img in images.items():
                e = m[i]
                if e:
                    term = term * img ** e
                    residual[i] = 0
            if any(residual):
                term = term * Polynomial(self.universe, {tuple(residual): 1}, self.flavor)
            acc = acc + term
        return acc

    def evaluate(self, point: Sequence[Coeff]) -> Coeff:
        """Direct evaluation.  In float flavor, term order follows graded-lex,
        so results are deterministic but carry the usual non-associativity
        error of double arithmetic (~1e-9 relative for moderate data)."""
        if len(point) != len(self.universe):
            raise PolyError(f"point length {len(point)} != universe size {len(self.universe)}")
        total: Coeff = Fraction(0) if self.flavor == "exact" else 0.0
        for m in sorted(self.terms, key=grlex_key):
            c = self.terms[m]
            term = c
            for x, e in zip(point, m):
                if e:
                    term = term * x ** e
            total = total + term
        return total

    def evaluate_arrays(self, arrays: Sequence) -> "object":
        """Vectorized float evaluation over numpy arrays (one per variable)."""
        import numpy as np

        total = None
        for m, c in self.terms.items():
            term = np.full_like(arrays[0], float(c), dtype=float)
            for arr, e in zip(arrays, m):
                if e:
                    term = term * arr ** e
            total = term if total is None else total + term
        if total is None:
            return np.zeros_like(arrays[0], dtype=float)
        return total

    # -- flavor conversion / universe moves ------------------------------------

    def to_float(self) -> "Polynomial":
        if self.flavor == "float":
            return self
        return Polynomial(self.universe, {m: float(c) for m, c in self.terms.items()}, "float")

    def to_exact(self) -> "Polynomial":
        """Exact lift; every double is a rational so this is lossless."""
        if self.flavor == "exact":
            return self
        return Polynomial(self.universe, {m: Fraction(c) for m, c in self.terms.items()}, "exact")

    def reindex(self, new_universe: VarUniverse) -> "Polynomial":
        """Re-express over another universe containing all mentioned variables."""
        mapping = []
        for i, name in enumerate(self.universe.names):
            if name in new_universe:
                mapping.append(new_universe.index(name))
            else:
                mapping.append(-1)
        terms: dict[Monomial, Coeff] = {}
        for m, c in self.terms.items():
            expo = [0] * len(new_universe)
            for i, e in enumerate(m):
                if e:
                    if mapping[i] < 0:
                        raise PolyError(
                            f"variable {self.universe.names[i]!r} missing from target universe"
                        )
                    expo[mapping[i]] = e
            mt = tuple(expo)
            terms[mt] = terms.get(mt, 0) + c
        return Polynomial(new_universe, terms, self.flavor)

    # -- rendering -------------------------------------------------------------

    def __repr__(self):
        return f"Polynomial({render(self)!r})"

    def __str__(self):
        return render(self)


def coeff_vector(p: Polynomial, basis: Sequence[Monomial]) -> list[Coeff]:
    """Coefficients of p aligned to basis; errors if p has a term outside it."""
    pos = {m: i for i, m in enumerate(basis)}
    zero = Fraction(0) if p.flavor == "exact" else 0.0
    vec: list[Coeff] = [zero] * len(basis)
    for m, c in p.terms.items():
        if m not in pos:
            raise PolyError(f"monomial {m} of polynomial not in basis (basis too small)")
        vec[pos[m]] = c
    return vec


def from_coeff_vector(universe: VarUniverse, basis: Sequence[Monomial], vec: Sequence[Coeff], flavor: str) -> Polynomial:
    return Polynomial(universe, {m: c for m, c in zip(basis, vec) if c != 0}, flavor)


def _render_coeff(c: Coeff) -> str:
    if isinstance(c, Fraction):
        if c.denominator == 1:
            return str(c.numerator)
        return f"{c.numerator}/{c.denominator}"
    return repr(c)


def render(p: Polynomial) -> str:
    """Deterministic human-readable form, highest graded-lex terms first."""
    if not p.terms:
        return "0"
    parts = []
    for m in sorted(p.terms, key=grlex_key, reverse=True):
        c = p.terms[m]
        factors = []
        for name, e in zip(p.universe.names, m):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        mono = "*".join(factors)
        neg = c < 0
        mag = -c if neg else c
        mag_s = _render_coeff(mag)
        if mono and mag_s == "1":
            body = mono
        elif mono:
            body = f"{mag_s}*{mono}"
        else:
            body = mag_s
        parts.append(("- " if neg else "+ ") + body)
    text = " ".join(parts)
    if text.startswith("+ "):
        text = text[2:]
    elif text.startswith("- "):
        text = "-" + text[2:]
    return text


def binom(n: int, k: int) -> int:
    return math.comb(n, k)
