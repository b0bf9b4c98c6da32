"""Degree-d SOS relaxation of one condition problem.

The relaxation asks for a polynomial p over the parameters together with SOS
multipliers certifying, as polynomial identities,

    (A)  p(a) - l(a, x) = s0 - sum_g sK_g * g - sum_r sa_r * ha_r - sum_r sx_r * hx_r
    (B)  p(a) + M       = s0' -               - sum_r sa'_r * ha_r - sum_r sx'_r * hx_r

where every multiplier is an SOS of degree <= 2d over the joint variables,
the g are the semantic domain constraints, and ha/hx are the parameter and
quantified-variable box constraints plus redundant norm-ball bounds that keep
the constraint system Archimedean.  The objective weights p's coefficients by
the (volume-rescaled) box moments, so minimizing hugs the condition's scalar
function from above.

Everything is built in unit-scaled coordinates: each box is affinely mapped
onto [-1, 1]^dim and the whole problem is divided by a single normalization
constant.  Both transforms are recorded so recovered polynomials can be mapped
back exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

from .conditions import (
    Constraint,
    ConditionProblem,
    K_BOX_A,
    K_BOX_DIST,
    K_BOX_X,
    SEMANTIC_KINDS,
    SemialgSet,
)
from .poly import Monomial, Polynomial, VarUniverse, monomial_basis, monomial_mul
from .program import Box


class SizingError(ValueError):
    """Relaxation degree cannot express the required identity degrees."""


@dataclass(frozen=True)
class MomentVector:
    """Volume-rescaled monomial averages over a box: gamma_0 = 1."""

    universe: VarUniverse
    values: dict[Monomial, Fraction]

    def __getitem__(self, m: Monomial) -> Fraction:
        return self.values[m]


def moments(param_box: Box, max_degree: int, universe: VarUniverse) -> MomentVector:
    """Closed-form rescaled box moments, exact rational.

    Per coordinate the rescaled moment of v^e over [lo, hi] is
    (hi^(e+1) - lo^(e+1)) / ((e+1) (hi - lo)); a product over coordinates
    gives the joint moment.  Degenerate intervals have measure zero and are
    rejected.
    """
    if len(param_box) != len(universe):
        raise ValueError("box arity does not match universe")
    for lo, hi in param_box.intervals:
        if lo == hi:
            raise ValueError(f"degenerate interval [{lo}, {hi}] has measure zero")

    # 1-d moments per coordinate up to max_degree
    per_coord: list[list[Fraction]] = []
    for lo, hi in param_box.intervals:
        col = []
        for e in range(max_degree + 1):
            num = hi ** (e + 1) - lo ** (e + 1)
            col.append(Fraction(num, (e + 1)) / (hi - lo))
        per_coord.append(col)

    values: dict[Monomial, Fraction] = {}
    for m in monomial_basis(universe, universe.names, max_degree):
        g = Fraction(1)
        for e, col in zip(m, per_coord):
            g *= col[e]
        values[m] = g
    return MomentVector(universe, values)


# ---------------------------------------------------------------------------
# Unit scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineScaling:
    """Per-variable map v = center + halfwidth * v_scaled (exact rational)."""

    universe: VarUniverse
    centers: tuple[Fraction, ...]
    halfwidths: tuple[Fraction, ...]

    def scale_poly(self, p: Polynomial) -> Polynomial:
        """Rewrite p in scaled coordinates (substitute v := c + h*v')."""
        u = self.universe
        fl = p.flavor
        bindings = {}
        for name, c, h in zip(u.names, self.centers, self.halfwidths):
            v = Polynomial.variable(u, name, fl)
            bindings[name] = v.scale(h if fl == "exact" else float(h)) + Polynomial.constant(u, c, fl)
        return p.substitute(bindings)

    def unscale_poly(self, p: Polynomial) -> Polynomial:
        """Rewrite a scaled-coordinate polynomial back in original coordinates
        (substitute v' := (v - c) / h)."""
        u = self.universe
        fl = p.flavor
        bindings = {}
        for name, c, h in zip(u.names, self.centers, self.halfwidths):
            v = Polynomial.variable(u, name, fl)
            inv = Fraction(1) / h
            bindings[name] = (v - Polynomial.constant(u, c, fl)).scale(
                inv if fl == "exact" else float(inv)
            )
        return p.substitute(bindings)

    def restrict(self, names) -> "AffineScaling":
        idx = [self.universe.index(n) for n in names]
        return AffineScaling(
            VarUniverse.of(names),
            tuple(self.centers[i] for i in idx),
            tuple(self.halfwidths[i] for i in idx),
        )


def scale_to_unit(cond: ConditionProblem) -> tuple[ConditionProblem, AffineScaling]:
    """Map every box of a condition onto [-1, 1]^dim.

    Returns the rewritten condition plus the affine back-map.  Degenerate
    boxes are rejected.
    """
    u = cond.universe
    centers: list[Fraction] = []
    halfs: list[Fraction] = []
    boxes = list(cond.param_box.intervals) + list(cond.x_box.intervals)
    names = list(cond.params) + list(cond.x_vars)
    if tuple(names) != u.names:
        raise ValueError("condition universe out of order")
    for lo, hi in boxes:
        if lo == hi:
            raise ValueError(f"degenerate box interval [{lo}, {hi}]")
        centers.append((lo + hi) / 2)
        halfs.append((hi - lo) / 2)
    scaling = AffineScaling(u, tuple(centers), tuple(halfs))

    unit_param = Box.uniform(len(cond.params), -1, 1)
    unit_x = Box.uniform(len(cond.x_vars), -1, 1)

    # semantic constraints and parameter cuts are rewritten; box rows are
    # rebuilt on [-1,1]
    from .conditions import K_CUT_A, _box_constraints

    new_constraints = [
        Constraint(c.kind, scaling.scale_poly(c.poly))
        for c in cond.domain.constraints
        if c.kind in SEMANTIC_KINDS or c.kind == K_CUT_A
    ]
    new_constraints += _box_constraints(u, cond.x_vars, unit_x, K_BOX_X)
    new_constraints += _box_constraints(u, cond.params, unit_param, K_BOX_A)

    scaled = replace(
        cond,
        objective=scaling.scale_poly(cond.objective),
        domain=SemialgSet(u, tuple(new_constraints)),
        param_box=unit_param,
        x_box=unit_x,
    )
    return scaled, scaling


# ---------------------------------------------------------------------------
# Relaxation structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GramSlot:
    """One SOS multiplier: its Gram basis and the known polynomial it scales.

    The identity right-hand side contributes  sigma_slot * multiplier  where
    sigma_slot = z^T G z over the slot's monomial basis z and G is PSD.
    """

    name: str
    multiplier: Polynomial  # float flavor, scaled coordinates
    basis: tuple[Monomial, ...]

    @property
    def dim(self) -> int:
        return len(self.basis)


@dataclass(frozen=True)
class IdentitySpec:
    """One polynomial identity: sum_alpha p_alpha a^alpha + offset = RHS(slots)."""

    name: str
    offset: Polynomial  # the non-p part of the LHS (-l for dominance, +M for clamp)
    slots: tuple[GramSlot, ...]


@dataclass(frozen=True)
class SOSProgram:
    cond: ConditionProblem            # scaled coordinates
    scaling: AffineScaling            # joint back-map (params + x vars)
    degree: int                       # d: multipliers are SOS of degree <= 2d
    deg_p: int
    normalization: float              # problem divided by this; p_true = norm * p
    p_basis: tuple[Monomial, ...]     # parameter monomials of p (over cond.universe)
    identities: tuple[IdentitySpec, ...]
    objective: tuple[float, ...]      # moment weights aligned to p_basis

    def slot_count(self) -> int:
        return sum(len(ident.slots) for ident in self.identities)


def _ball_constraint(universe: VarUniverse, names, radius_sq: Fraction) -> Polynomial:
    p = Polynomial.constant(universe, -radius_sq)
    for n in names:
        v = Polynomial.variable(universe, n)
        p = p + v * v
    return p  # ||v||^2 - radius_sq <= 0


def _normalize_constraint(g: Polynomial) -> Polynomial:
    m = g.max_abs_coeff()
    if m == 0 or m == 1.0:
        return g
    return g.scale(1.0 / m)


def build_relaxation(
    cond: ConditionProblem,
    d: int,
    deg_p: int | None = None,
    ball_mx: float | None = None,
    ball_ma: float | None = None,
) -> SOSProgram:
    """Assemble the degree-d relaxation of a condition.

    deg_p defaults to max(2, 2d, parameter degree of the objective).  Each
    identity targets degree D = max(2d, its left-hand side degree); a
    multiplier scaling a constraint of degree g gets Gram basis degree
    floor((D - g) / 2), so the multipliers are all of degree <= 2d once 2d
    dominates the identity and are padded just enough to express it below
    that.  Ball radii default to the squared diagonal half-width of the
    (scaled) boxes, i.e. the variable count after unit scaling, which makes
    them redundant with the boxes.
    """
    if d < 1:
        raise SizingError("relaxation degree must be >= 1")
    scaled, scaling = scale_to_unit(cond)

    deg_l_a = scaled.objective.degree_in(scaled.params)
    if deg_p is None:
        deg_p = max(2, 2 * d, int(deg_l_a) if deg_l_a > 0 else 0)
    if deg_l_a > deg_p:
        raise SizingError(
            f"deg_p={deg_p} cannot dominate an objective of parameter degree {deg_l_a}"
        )

    u = scaled.universe
    norm = max(1.0, scaled.objective.max_abs_coeff())
    l_bar = scaled.objective.to_float().scale(1.0 / norm)
    m_bar = float(cond.big_m) / norm

    nx = len(scaled.x_vars)
    na = len(scaled.params)
    mx = Fraction(nx) if ball_mx is None else Fraction(ball_mx)
    ma = Fraction(na) if ball_ma is None else Fraction(ball_ma)

    deg_l = int(max(l_bar.degree(), 0))
    target_a = max(2 * d, deg_p, deg_l)
    target_b = max(2 * d, deg_p)
    basis_cache: dict[int, tuple] = {}

    def basis_of(deg: int):
        deg = max(deg, 0)
        if deg not in basis_cache:
            basis_cache[deg] = tuple(monomial_basis(u, u.names, deg))
        return basis_cache[deg]

    def slot(name: str, g: Polynomial | None, target: int) -> GramSlot:
        # multiplier is -g so that the slot term is nonnegative on {g <= 0}
        if g is None:
            mult = Polynomial.constant(u, 1, "float")
            gdeg = 0
        else:
            mult = (-_normalize_constraint(g.to_float()))
            gdeg = int(max(mult.degree(), 0))
        return GramSlot(name=name, multiplier=mult, basis=basis_of((target - gdeg) // 2))

    from .conditions import K_CUT_A

    sem = [c for c in scaled.domain.constraints if c.kind in SEMANTIC_KINDS]
    box_x = scaled.domain.of_kind(K_BOX_X, K_BOX_DIST)
    box_a = scaled.domain.of_kind(K_BOX_A, K_CUT_A)
    ball_x_poly = _ball_constraint(u, scaled.x_vars, mx) if nx else None
    ball_a_poly = _ball_constraint(u, scaled.params, ma) if na else None

    slots_a: list[GramSlot] = [slot("sigma0", None, target_a)]
    for j, c in enumerate(sem):
        slots_a.append(slot(f"K{j}:{c.kind}", c.poly, target_a))
    for j, g in enumerate(box_x):
        slots_a.append(slot(f"box_x{j}", g, target_a))
    for j, g in enumerate(box_a):
        slots_a.append(slot(f"box_a{j}", g, target_a))
    if ball_x_poly is not None:
        slots_a.append(slot("ball_x", ball_x_poly, target_a))
    if ball_a_poly is not None:
        slots_a.append(slot("ball_a", ball_a_poly, target_a))

    slots_b: list[GramSlot] = [slot("sigma0", None, target_b)]
    for j, g in enumerate(box_x):
        slots_b.append(slot(f"box_x{j}", g, target_b))
    for j, g in enumerate(box_a):
        slots_b.append(slot(f"box_a{j}", g, target_b))
    if ball_x_poly is not None:
        slots_b.append(slot("ball_x", ball_x_poly, target_b))
    if ball_a_poly is not None:
        slots_b.append(slot("ball_a", ball_a_poly, target_b))

    ident_a = IdentitySpec("dominance", -l_bar, tuple(slots_a))
    ident_b = IdentitySpec(
        "lower_clamp", Polynomial.constant(u, m_bar, "float"), tuple(slots_b)
    )

    p_basis = tuple(monomial_basis(u, scaled.params, deg_p))
    gamma = moments(scaled.param_box, deg_p, VarUniverse.of(scaled.params))
    weights = []
    for m in p_basis:
        key = tuple(m[i] for i in range(na))
        weights.append(float(gamma[key]))

    return SOSProgram(
        cond=scaled,
        scaling=scaling,
        degree=d,
        deg_p=deg_p,
        normalization=norm,
        p_basis=p_basis,
        identities=(ident_a, ident_b),
        objective=tuple(weights),
    )


# ---------------------------------------------------------------------------
# Reconstruction helpers (shared by the certifier and by tests)
# ---------------------------------------------------------------------------


def sos_poly_from_gram(slot: GramSlot, gram, universe: VarUniverse) -> Polynomial:
    """Expand z^T G z over the slot basis into a float polynomial."""
    terms: dict[Monomial, float] = {}
    n = slot.dim
    for i in range(n):
        for j in range(i, n):
            g = float(gram[i][j] if not hasattr(gram, "shape") else gram[i, j])
            if g == 0.0:
                continue
            w = g if i == j else 2.0 * g
            m = monomial_mul(slot.basis[i], slot.basis[j])
            terms[m] = terms.get(m, 0.0) + w
    return Polynomial(universe, terms, "float")


def identity_residual(
    sos: SOSProgram, ident: IdentitySpec, p_coeffs, gram_values
) -> tuple[Polynomial, float, float]:
    """LHS - RHS of one identity for a concrete assignment.

    Returns (residual polynomial, max |coefficient|, relative residual), the
    relative form dividing by 1 + max |LHS coefficient|.
    """
    u = sos.cond.universe
    lhs = Polynomial(u, {m: float(c) for m, c in zip(sos.p_basis, p_coeffs)}, "float")
    lhs = lhs + ident.offset
    rhs = Polynomial.zero(u, "float")
    for slot, gram in zip(ident.slots, gram_values):
        sigma = sos_poly_from_gram(slot, gram, u)
        rhs = rhs + sigma * slot.multiplier
    res = lhs - rhs
    max_abs = res.max_abs_coeff()
    rel = max_abs / (1.0 + lhs.max_abs_coeff())
    return res, max_abs, rel
