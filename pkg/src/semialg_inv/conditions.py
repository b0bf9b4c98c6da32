"""Per-condition objects: the objective/domain pairs whose universal
satisfaction over the variable box characterizes a valid parameter choice.

For a loop with k branches and a template with conjuncts I_r, the valid
parameter set decomposes into one obligation per (stage, conjunct):

* stage 0 (init):      sup over {Pre <= 0}            of I_r(a, x)        <= 0
* stage i (step i):    sup over {guard_i, all I_s<=0} of I_r(a, f_i(x))   <= 0
* stage k+1 (exit):    sup over {guards off, I_s<=0}  of Post_q(x)        <= 0

Each obligation is held as a ConditionProblem: an objective polynomial, a
labeled constraint set (boxes included), and the lower clamp big_M that keeps
the induced scalar function bounded from below.

Conjunctive guards make "guards off" a disjunction of conjunctions; it is
distributed into one ConditionProblem per choice of violated guard conjunct,
which keeps every domain basic semialgebraic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .poly import Monomial, Polynomial, VarUniverse
from .program import Box, GuardedLoop, TemplateSpec, validate


# Constraint kinds, used downstream to split multiplier families.
K_PRE = "pre"
K_GUARD = "guard"
K_NEG_GUARD = "guard_off"
K_TEMPLATE = "template"
K_BOX_X = "box_x"
K_BOX_DIST = "box_dist"
K_BOX_A = "box_a"
K_CUT_A = "cut_a"  # witness-derived necessary restriction of the parameter set
SEMANTIC_KINDS = (K_PRE, K_GUARD, K_NEG_GUARD, K_TEMPLATE)


@dataclass(frozen=True)
class Constraint:
    kind: str
    poly: Polynomial  # meaning: poly <= 0


@dataclass(frozen=True)
class SemialgSet:
    universe: VarUniverse
    constraints: tuple[Constraint, ...]

    def of_kind(self, *kinds: str) -> list[Polynomial]:
        return [c.poly for c in self.constraints if c.kind in kinds]

    def semantic(self) -> list[Constraint]:
        return [c for c in self.constraints if c.kind in SEMANTIC_KINDS]


@dataclass(frozen=True)
class ConditionProblem:
    """One (objective, domain, clamp) triple over params + quantified vars."""

    index: int       # stage: 0 = init, 1..k = branch, k+1 = exit
    sub_index: int   # template conjunct (stages 0..k) / post conjunct (exit)
    variant: int     # exit-stage guard-choice number, 0 elsewhere
    label: str
    universe: VarUniverse     # params first, then quantified vars
    params: tuple[str, ...]
    x_vars: tuple[str, ...]   # universally quantified: program vars (+ dists)
    objective: Polynomial     # exact flavor, over `universe`
    domain: SemialgSet
    param_box: Box
    x_box: Box                # aligned to x_vars
    big_m: float

    def describe(self) -> str:
        parts = [f"{p}" for p in (str(c.poly) + " <= 0" for c in self.domain.semantic())]
        premise = " and ".join(parts) if parts else "true"
        return f"forall {' '.join(self.x_vars)} in box: ({premise}) implies ({self.objective} <= 0)"


@dataclass(frozen=True)
class ConditionSet:
    loop: GuardedLoop
    template: TemplateSpec
    problems: tuple[ConditionProblem, ...]

    def __len__(self):
        return len(self.problems)

    def __iter__(self):
        return iter(self.problems)

    def __getitem__(self, i):
        return self.problems[i]


def _box_constraints(universe: VarUniverse, names, box: Box, kind: str) -> list[Constraint]:
    out = []
    for name, (lo, hi) in zip(names, box.intervals):
        v = Polynomial.variable(universe, name)
        c_lo = Polynomial.constant(universe, lo)
        c_hi = Polynomial.constant(universe, hi)
        out.append(Constraint(kind, c_lo - v))   # lo - v <= 0
        out.append(Constraint(kind, v - c_hi))   # v - hi <= 0
    return out


def build_conditions(
    loop: GuardedLoop,
    tmpl: TemplateSpec,
    big_m: float = 10.0,
    tighten: bool = True,
    param_cuts: tuple[Polynomial, ...] = (),
) -> ConditionSet:
    """Build the full obligation list for a loop/template pair.

    With a single-conjunct template, single post conjunct and scalar guards
    this is exactly k + 2 problems.  Unless disabled, each problem's
    quantified box is shrunk to an interval enclosure of its domain, which
    changes nothing semantically but tames the relaxation's numeric range.
    param_cuts are additional parameter-space restrictions (polynomials over
    the template parameters, <= 0 form) attached to every problem.
    """
    if big_m <= 0:
        raise ValueError("big_m must be positive")
    diags = [d for d in validate(loop, tmpl) if d.severity == "error"]
    if diags:
        raise ValueError("invalid loop/template: " + "; ".join(d.message for d in diags))

    params = tmpl.params
    progvars = loop.vars
    dists = loop.dist_vars
    k = loop.k

    u_plain = VarUniverse.of(params + progvars)
    u_dist = VarUniverse.of(params + progvars + dists)

    tmpl_plain = [c.reindex(u_plain) for c in tmpl.conjuncts]
    tmpl_dist = [c.reindex(u_dist) for c in tmpl.conjuncts]

    problems: list[ConditionProblem] = []

    def x_box_for(universe):
        if universe is u_dist and dists:
            return Box(loop.var_box.intervals + loop.dist_box.intervals)
        return loop.var_box

    def boxes_for(universe, with_dist: bool) -> list[Constraint]:
        out = _box_constraints(universe, progvars, loop.var_box, K_BOX_X)
        if with_dist and dists:
            out += _box_constraints(universe, dists, loop.dist_box, K_BOX_DIST)
        out += _box_constraints(universe, params, tmpl.param_box, K_BOX_A)
        out += [Constraint(K_CUT_A, c.reindex(universe)) for c in param_cuts]
        return out

    # stage 0: initial states land inside the candidate set
    pre_cs = [Constraint(K_PRE, p.reindex(u_plain)) for p in loop.pre]
    for r, conj in enumerate(tmpl_plain):
        problems.append(
            ConditionProblem(
                index=0,
                sub_index=r,
                variant=0,
                label=f"init[{r}]" if len(tmpl_plain) > 1 else "init",
                universe=u_plain,
                params=params,
                x_vars=progvars,
                objective=conj,
                domain=SemialgSet(u_plain, tuple(pre_cs + boxes_for(u_plain, False))),
                param_box=tmpl.param_box,
                x_box=loop.var_box,
                big_m=big_m,
            )
        )

    # stages 1..k: each branch maps the candidate set into itself
    use_dist = bool(dists)
    u_step = u_dist if use_dist else u_plain
    tmpl_step = tmpl_dist if use_dist else tmpl_plain
    for bi, br in enumerate(loop.branches, start=1):
        fmap = br.composed_map(loop)
        bindings = {v: fmap[v].reindex(u_step) for v in progvars}
        guard_cs = [Constraint(K_GUARD, g.reindex(u_step)) for g in br.guards]
        member_cs = [Constraint(K_TEMPLATE, c) for c in tmpl_step]
        box_cs = boxes_for(u_step, True)
        for r, conj in enumerate(tmpl_step):
            objective = conj.substitute(bindings)
            problems.append(
                ConditionProblem(
                    index=bi,
                    sub_index=r,
                    variant=0,
                    label=f"step{bi}[{r}]" if len(tmpl_step) > 1 else f"step{bi}",
                    universe=u_step,
                    params=params,
                    x_vars=progvars + dists,
                    objective=objective,
                    domain=SemialgSet(u_step, tuple(guard_cs + member_cs + box_cs)),
                    param_box=tmpl.param_box,
                    x_box=x_box_for(u_step),
                    big_m=big_m,
                )
            )

    # stage k+1: once every guard fails, the candidate set implies Post.
    # "Guard i fails" relaxes to "some conjunct of guard i is >= 0"; the
    # choice of conjunct distributes into separate problems.
    member_cs_plain = [Constraint(K_TEMPLATE, c) for c in tmpl_plain]
    box_cs_plain = boxes_for(u_plain, False)
    choices = list(itertools.product(*[range(len(br.guards)) for br in loop.branches]))
    for q, post_poly in enumerate(loop.post):
        post_u = post_poly.reindex(u_plain)
        for vi, choice in enumerate(choices):
            off_cs = [
                Constraint(K_NEG_GUARD, -(loop.branches[i].guards[j].reindex(u_plain)))
                for i, j in enumerate(choice)
            ]
            label = "exit"
            if len(loop.post) > 1:
                label += f"[{q}]"
            if len(choices) > 1:
                label += f"#{vi}"
            problems.append(
                ConditionProblem(
                    index=k + 1,
                    sub_index=q,
                    variant=vi,
                    label=label,
                    universe=u_plain,
                    params=params,
                    x_vars=progvars,
                    objective=post_u,
                    domain=SemialgSet(u_plain, tuple(off_cs + member_cs_plain + box_cs_plain)),
                    param_box=tmpl.param_box,
                    x_box=loop.var_box,
                    big_m=big_m,
                )
            )

    if tighten:
        problems = [tighten_x_box(c) for c in problems]
    return ConditionSet(loop=loop, template=tmpl, problems=tuple(problems))


# ---------------------------------------------------------------------------
# Interval tightening of the quantified-variable box
# ---------------------------------------------------------------------------
#
# The relaxation quantifies over the full variable box even when the domain
# constraints confine the condition to a tiny region (a guard disk inside a
# [-100, 100]^n box, say).  Replacing the box by any interval enclosure of the
# domain leaves the condition's meaning untouched, because the domain is the
# intersection anyway, while shrinking the numeric range of the data by many
# orders of magnitude.  A few sweeps of one-variable interval propagation over
# the constraints (complete the square in the variable, bound the rest by
# interval arithmetic) give a sound enclosure.


def _interval_pow(lo: float, hi: float, e: int) -> tuple[float, float]:
    if e == 0:
        return 1.0, 1.0
    cands = [lo ** e, hi ** e]
    if e % 2 == 0 and lo < 0 < hi:
        cands.append(0.0)
    return min(cands), max(cands)


def _interval_of_terms(terms, ivals) -> tuple[float, float]:
    lo_t, hi_t = 0.0, 0.0
    for m, c in terms:
        tlo, thi = 1.0, 1.0
        for vi, e in enumerate(m):
            if not e:
                continue
            plo, phi = _interval_pow(ivals[vi][0], ivals[vi][1], e)
            cands = [tlo * plo, tlo * phi, thi * plo, thi * phi]
            tlo, thi = min(cands), max(cands)
        c = float(c)
        if c >= 0:
            lo_t += c * tlo
            hi_t += c * thi
        else:
            lo_t += c * thi
            hi_t += c * tlo
    return lo_t, hi_t


def tighten_x_box(cond: ConditionProblem, sweeps: int = 4) -> ConditionProblem:
    """Shrink the quantified-variable box to an interval enclosure of the
    domain; falls back to the original interval wherever propagation proves
    nothing (or proves emptiness, which the relaxation handles by itself)."""
    nx = len(cond.x_vars)
    if nx == 0:
        return cond
    n_params = len(cond.params)
    u = cond.universe

    ivals = [(float(lo), float(hi)) for lo, hi in cond.param_box.intervals]
    ivals += [(float(lo), float(hi)) for lo, hi in cond.x_box.intervals]
    orig = list(ivals)

    constraints = [g.to_float() for g in cond.domain.of_kind(*SEMANTIC_KINDS)]
    slack = 1e-9

    for _ in range(sweeps):
        changed = False
        for g in constraints:
            for xi in range(n_params, n_params + nx):
                c2 = c1 = 0.0
                rest = []
                uses_v_elsewhere = False
                for m, c in g.terms.items():
                    e = m[xi]
                    others = any(m[k] for k in range(len(m)) if k != xi)
                    if e == 2 and not others:
                        c2 = float(c)
                    elif e == 1 and not others:
                        c1 = float(c)
                    elif e == 0:
                        rest.append((m, c))
                    else:
                        uses_v_elsewhere = True
                if uses_v_elsewhere or (c2 == 0.0 and c1 == 0.0):
                    continue
                rlo, rhi = _interval_of_terms(rest, ivals)
                lo, hi = ivals[xi]
                if c2 > 0.0:
                    # c2 (v + c1/(2 c2))^2 <= c1^2/(4 c2) - rest
                    t = c1 / (2.0 * c2)
                    bound = (c1 * c1 / (4.0 * c2) - rlo) / c2
                    if bound < 0:
                        continue  # domain may be empty; leave the box alone
                    r = bound ** 0.5 * (1.0 + slack) + 1e-300
                    nlo, nhi = max(lo, -t - r), min(hi, -t + r)
                elif c2 == 0.0 and c1 != 0.0:
                    if c1 > 0:
                        nlo, nhi = lo, min(hi, (-rlo) / c1 * (1.0 + slack) + slack)
                    else:
                        nlo, nhi = max(lo, (-rlo) / c1 * (1.0 + slack) - slack), hi
                else:
                    continue
                if nlo > nhi:
                    continue
                if nlo > lo + 1e-12 or nhi < hi - 1e-12:
                    ivals[xi] = (max(nlo, orig[xi][0]), min(nhi, orig[xi][1]))
                    changed = True
        if not changed:
            break

    new_pairs = []
    for k, (lo, hi) in enumerate(ivals[n_params:]):
        olo, ohi = cond.x_box.intervals[k]
        nlo = max(Fraction(lo), olo)  # float -> rational is exact
        nhi = min(Fraction(hi), ohi)
        if nlo > nhi:
            nlo, nhi = olo, ohi
        new_pairs.append((nlo, nhi))
    new_box = Box.of(new_pairs)
    if new_box == cond.x_box:
        return cond

    sem = [c for c in cond.domain.constraints if c.kind in SEMANTIC_KINDS or c.kind == K_CUT_A]
    boxes = _box_constraints(u, cond.x_vars, new_box, K_BOX_X)
    boxes += _box_constraints(u, cond.params, cond.param_box, K_BOX_A)
    from dataclasses import replace

    return replace(
        cond,
        domain=SemialgSet(u, tuple(sem + boxes)),
        x_box=new_box,
    )


# ---------------------------------------------------------------------------
# Brute-force reference oracle (tests only)
# ---------------------------------------------------------------------------


def _split_by_param_monomial(p: Polynomial, n_params: int):
    """Group terms by their parameter exponents: {a-expo: x-only Polynomial}."""
    groups: dict[Monomial, dict[Monomial, Fraction]] = {}
    for m, c in p.terms.items():
        a_part = m[:n_params]
        x_part = (0,) * n_params + m[n_params:]
        groups.setdefault(a_part, {})[x_part] = c
    return {a: Polynomial(p.universe, terms, p.flavor) for a, terms in groups.items()}


class GridOracle:
    """Approximate sup-based scalar function for one condition.

    Scans a regular grid over the quantified-variable box: returns -big_m when
    no grid point satisfies the domain constraints, otherwise the clamped
    maximum of the objective over satisfying grid points.  Optional refinement
    re-grids locally around the most promising cells, shrinking the spacing by
    3x per level.  Grid coarseness makes this an underestimate of the true
    supremum; callers must budget a grid-error slack.  Intended for tests,
    not for synthesis.
    """

    def __init__(self, cond: ConditionProblem, grid_density: int = 60,
                 refine_levels: int = 0, top_cells: int = 30):
        if grid_density < 2:
            raise ValueError("grid_density must be >= 2 per dimension")
        self.cond = cond
        self.refine_levels = refine_levels
        self.top_cells = top_cells
        n_params = len(cond.params)
        axes = [
            np.linspace(float(lo), float(hi), grid_density)
            for lo, hi in cond.x_box.intervals
        ]
        self._spacing = [
            (float(hi) - float(lo)) / (grid_density - 1) for lo, hi in cond.x_box.intervals
        ]
        mesh = np.meshgrid(*axes, indexing="ij") if axes else []
        self._grid = [m.ravel() for m in mesh]
        self._n_params = n_params

        relevant = cond.domain.of_kind(*SEMANTIC_KINDS)
        self._constraint_polys = [g.to_float() for g in relevant]
        self._objective_poly = cond.objective.to_float()
        self._constraints = [self._precompute(g) for g in self._constraint_polys]
        self._objective = self._precompute(self._objective_poly)

    def _precompute(self, p: Polynomial):
        """(a-exponent, objective-values-on-grid) pairs for fast per-a eval."""
        parts = []
        shape = self._grid[0].shape if self._grid else (1,)
        for a_expo, xpoly in _split_by_param_monomial(p, self._n_params).items():
            if self._grid:
                arrays = [np.zeros(shape)] * self._n_params + list(self._grid)
                vals = xpoly.evaluate_arrays(arrays)
            else:
                vals = np.array([float(xpoly.coeff((0,) * len(p.universe)))])
            vals = np.broadcast_to(np.asarray(vals, dtype=float), shape)
            parts.append((a_expo[: self._n_params], vals))
        return parts

    def _eval(self, parts, a) -> np.ndarray:
        total = None
        for a_expo, vals in parts:
            w = 1.0
            for ai, e in zip(a, a_expo):
                if e:
                    w *= float(ai) ** e
            t = w * vals
            total = t if total is None else total + t
        if total is None:
            total = np.zeros(self._grid[0].shape if self._grid else 1)
        return total

    def _eval_local(self, poly: Polynomial, a, x_arrays):
        arrays = [np.full_like(x_arrays[0], float(ai)) for ai in a] + list(x_arrays)
        return poly.evaluate_arrays(arrays)

    def __call__(self, a) -> float:
        grid = self._grid
        violation = None
        for parts in self._constraints:
            vals = self._eval(parts, a)
            violation = vals if violation is None else np.maximum(violation, vals)
        if violation is None:
            violation = np.zeros(grid[0].shape if grid else 1)
        mask = violation <= 0.0
        obj = self._eval(self._objective, a)

        feasible_found = bool(mask.any())
        best = float(obj[mask].max()) if feasible_found else -np.inf

        if self.refine_levels and grid:
            # rank cells: feasible ones by objective, infeasible by closeness
            # to feasibility, then zoom in around the winners
            score = np.where(mask, obj, -np.inf)
            order = np.argsort(score)[::-1]
            seeds = list(order[: self.top_cells])
            if not feasible_found:
                seeds = list(np.argsort(violation)[: self.top_cells])
            centers = [[g[i] for g in grid] for i in seeds]
            spacing = list(self._spacing)
            for _ in range(self.refine_levels):
                pts_axes = []
                for c in centers:
                    local = [
                        np.linspace(
                            max(c[d] - spacing[d], float(self.cond.x_box.intervals[d][0])),
                            min(c[d] + spacing[d], float(self.cond.x_box.intervals[d][1])),
                            7,
                        )
                        for d in range(len(grid))
                    ]
                    mesh = np.meshgrid(*local, indexing="ij")
                    pts_axes.append([m.ravel() for m in mesh])
                xs = [np.concatenate([p[d] for p in pts_axes]) for d in range(len(grid))]
                viol = None
                for gp in self._constraint_polys:
                    v = self._eval_local(gp, a, xs)
                    viol = v if viol is None else np.maximum(viol, v)
                if viol is None:
                    viol = np.zeros_like(xs[0])
                m2 = viol <= 0.0
                o2 = self._eval_local(self._objective_poly, a, xs)
                if m2.any():
                    feasible_found = True
                    best = max(best, float(o2[m2].max()))
                    score2 = np.where(m2, o2, -np.inf)
                    idx = np.argsort(score2)[::-1][: self.top_cells]
                else:
                    idx = np.argsort(viol)[: self.top_cells]
                centers = [[xs[d][i] for d in range(len(grid))] for i in idx]
                spacing = [s / 3.0 for s in spacing]

        if not feasible_found:
            return -self.cond.big_m
        return max(-self.cond.big_m, best)


def phi_oracle(cond: ConditionProblem, grid_density: int = 60, **kw):
    """Reference implementation of the condition's scalar function."""
    return GridOracle(cond, grid_density, **kw)
