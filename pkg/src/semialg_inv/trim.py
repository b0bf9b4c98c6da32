"""Necessary-condition trimming of the parameter box.

A concrete point xw of the variable box gives, for each condition, a purely
parameter-space exclusion region

    Bad(xw) = { a : xw in K(a)  and  objective(a, xw) > 0 }

No valid parameter can lie in Bad(xw), so any slab of the parameter box that
provably sits inside Bad(xw) can be removed.  The relaxations are then built
over the trimmed box.  Trimming only ever uses necessary conditions: a buggy
or coarse trim can cost candidates, never soundness (the SOS certificates are
stated over whatever box is actually used).

This step is what makes low relaxation degrees productive on exit conditions
whose sup-function has a steep ridge just outside the valid region: the ridge
mass is excluded from the parameter box instead of being fitted by p.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .conditions import ConditionProblem, ConditionSet, SEMANTIC_KINDS
from .poly import Polynomial
from .program import Box


@dataclass
class TrimResult:
    box: Box | None          # None means the parameter box was emptied
    removed_fraction: float  # volume fraction removed (diagnostic)
    witnesses_used: int
    cuts: tuple[Polynomial, ...] = ()  # extra necessary constraints, <= 0 form


def _eval_x_part(p: Polynomial, n_params: int, xw) -> list[tuple[tuple[int, ...], float]]:
    """Plug the quantified variables; return [(param exponent, coeff), ...]."""
    acc: dict[tuple[int, ...], float] = {}
    for m, c in p.terms.items():
        a_part = m[:n_params]
        w = float(c)
        for xv, e in zip(xw, m[n_params:]):
            if e:
                w *= float(xv) ** e
        if w:
            acc[a_part] = acc.get(a_part, 0.0) + w
    return list(acc.items())


def _interval_terms(terms, box) -> tuple[float, float]:
    lo_t = hi_t = 0.0
    for expo, c in terms:
        tlo, thi = 1.0, 1.0
        for (blo, bhi), e in zip(box, expo):
            if not e:
                continue
            cands = [blo ** e, bhi ** e]
            if e % 2 == 0 and blo < 0 < bhi:
                cands.append(0.0)
            plo, phi = min(cands), max(cands)
            cands = [tlo * plo, tlo * phi, thi * plo, thi * phi]
            tlo, thi = min(cands), max(cands)
        if c >= 0:
            lo_t += c * tlo
            hi_t += c * thi
        else:
            lo_t += c * thi
            hi_t += c * tlo
    return lo_t, hi_t


def _split_coord(terms, j):
    """Pure a_j^2 / a_j coefficients and the j-free remainder; None if a_j
    appears mixed with other parameters or at degree > 2."""
    c2 = c1 = 0.0
    rest = []
    for expo, c in terms:
        e = expo[j]
        others = any(expo[k] for k in range(len(expo)) if k != j)
        if e == 0:
            rest.append((expo, c))
        elif e == 1 and not others:
            c1 += c
        elif e == 2 and not others:
            c2 += c
        else:
            return None
    return c2, c1, rest


def _quad_leq_interval(c2: float, c1: float, bound: float) -> tuple[float, float] | None:
    """Solution interval of c2 t^2 + c1 t <= bound (None if empty; +-inf ok)."""
    if abs(c2) < 1e-300:
        if abs(c1) < 1e-300:
            return (-np.inf, np.inf) if 0.0 <= bound else None
        t = bound / c1
        return (-np.inf, t) if c1 > 0 else (t, np.inf)
    disc = c1 * c1 + 4.0 * c2 * bound
    if c2 > 0:
        if disc < 0:
            return None
        r = disc ** 0.5
        return ((-c1 - r) / (2 * c2), (-c1 + r) / (2 * c2))
    # c2 < 0: solution is the complement of an interval; only usable when it
    # covers a half-line including the relevant box side, so report the
    # larger containing half-line conservatively
    if disc < 0:
        return (-np.inf, np.inf)
    r = disc ** 0.5
    lo_root = (-c1 + r) / (2 * c2)
    hi_root = (-c1 - r) / (2 * c2)
    # valid t: t <= lo_root or t >= hi_root; not an interval: give up
    return None


def _slab_threshold(constraints, box, j, side: str) -> float | None:
    """Largest removable slab on one side of coordinate j.

    Returns the new bound (hi for side='upper', lo for side='lower') if a
    nonempty slab is provably inside every constraint's feasible set, else
    None.
    """
    lo_j, hi_j = box[j]
    t_min, t_max = -np.inf, np.inf
    for terms in constraints:
        parts = _split_coord(terms, j)
        if parts is None:
            return None
        c2, c1, rest = parts
        box_wo = list(box)
        box_wo[j] = (0.0, 0.0)  # ignored: rest has no a_j
        _, rest_hi = _interval_terms(rest, box_wo)
        sol = _quad_leq_interval(c2, c1, -rest_hi)
        if sol is None:
            return None
        t_min = max(t_min, sol[0])
        t_max = min(t_max, sol[1])
    if t_min > t_max:
        return None
    if side == "upper":
        # slab [T, hi_j] must satisfy T >= t_min and hi_j <= t_max
        if hi_j > t_max or t_min >= hi_j:
            return None
        return max(t_min, lo_j)
    else:
        if lo_j < t_min or t_max <= lo_j:
            return None
        return min(t_max, hi_j)


def _witness_grid(x_box: Box, per_dim: int, cap: int = 4096):
    axes = [np.linspace(float(lo), float(hi), per_dim) for lo, hi in x_box.intervals]
    n = len(axes)
    total = per_dim ** n
    if total > cap:
        per_dim = max(2, int(cap ** (1.0 / n)))
        axes = [np.linspace(float(lo), float(hi), per_dim) for lo, hi in x_box.intervals]
    pts = list(itertools.product(*axes))
    return pts


def trim_param_box(
    cset: ConditionSet,
    per_dim: int = 11,
    refine_rounds: int = 10,
    passes: int = 2,
    margin: float = 1e-7,
    max_cuts: int = 8,
) -> TrimResult:
    """Shrink the parameter box by witness-derived necessary conditions.

    One pass scans a deterministic grid of each condition's variable box and
    then zooms in around witnesses that actually moved a bound.  A second
    pass repeats with the already-trimmed box, because bounds on one
    coordinate sharpen the slab tests of the others.
    """
    param_box = cset.template.param_box
    m = len(param_box)
    box = [(float(lo), float(hi)) for lo, hi in param_box.intervals]
    orig_vol = np.prod([hi - lo for lo, hi in box])
    used = 0

    cut_candidates: dict[tuple, list] = {}

    def try_witness(cond: ConditionProblem, xw) -> bool:
        nonlocal box, used
        n_params = len(cond.params)
        scale = max(1.0, cond.objective.max_abs_coeff())
        # Bad(xw): all memberships <= -margin and objective >= +margin
        constraints = []
        for g in cond.domain.of_kind(*SEMANTIC_KINDS):
            gs = max(1.0, g.max_abs_coeff())
            terms = _eval_x_part(g.to_float(), n_params, xw)
            terms.append(((0,) * n_params, margin * gs))
            constraints.append(terms)
        # objective > 0  <=>  -objective + margin <= 0
        obj_terms = [
            (expo, -c) for expo, c in _eval_x_part(cond.objective.to_float(), n_params, xw)
        ]
        obj_terms.append(((0,) * n_params, margin * scale))
        constraints.append(obj_terms)

        # a witness whose Bad region has exactly one parameter-dependent
        # constraint (the others certainly holding) yields a one-polynomial
        # necessary condition: the complement of that constraint
        zero = (0,) * n_params
        dependent = []
        consts_ok = True
        for terms in constraints:
            dep = [(e, c) for e, c in terms if any(e)]
            const = sum(c for e, c in terms if not any(e))
            if dep:
                dependent.append(dep + [(zero, const)])
            elif const > 0:
                consts_ok = False
                break
        if consts_ok and len(dependent) == 1:
            cut_terms = tuple(
                sorted((e, -c) for e, c in dependent[0] if c != 0.0)
            )
            key = tuple((e, round(c, 9)) for e, c in cut_terms)
            if key not in cut_candidates:
                cut_candidates[key] = list(cut_terms)

        changed = False
        for j in range(m):
            t = _slab_threshold(constraints, box, j, "upper")
            if t is not None and t < box[j][1] - 1e-12:
                box = list(box)
                box[j] = (box[j][0], t)
                changed = True
            t = _slab_threshold(constraints, box, j, "lower")
            if t is not None and t > box[j][0] + 1e-12:
                box = list(box)
                box[j] = (t, box[j][1])
                changed = True
        if changed:
            used += 1
        return changed

    for _ in range(passes):
        for cond in cset:
            pts = _witness_grid(cond.x_box, per_dim)
            effective = []
            for xw in pts:
                if try_witness(cond, xw):
                    effective.append(xw)
            spacing = [
                (float(hi) - float(lo)) / max(per_dim - 1, 1)
                for lo, hi in cond.x_box.intervals
            ]
            for _ in range(refine_rounds):
                if not effective:
                    break
                nxt = []
                for xw in effective[-12:]:
                    local_axes = [
                        np.linspace(
                            max(xw[d] - spacing[d], float(cond.x_box.intervals[d][0])),
                            min(xw[d] + spacing[d], float(cond.x_box.intervals[d][1])),
                            5,
                        )
                        for d in range(len(xw))
                    ]
                    for cand in itertools.product(*local_axes):
                        if try_witness(cond, cand):
                            nxt.append(cand)
                effective = nxt
                spacing = [s / 3.0 for s in spacing]

    for lo, hi in box:
        if lo > hi:
            return TrimResult(box=None, removed_fraction=1.0, witnesses_used=used)
    cuts = _select_cuts(cut_candidates, box, cset, max_cuts=max_cuts)
    new_vol = np.prod([hi - lo for lo, hi in box])
    frac = 1.0 - (new_vol / orig_vol if orig_vol > 0 else 0.0)
    pairs = [(Fraction(lo), Fraction(hi)) for lo, hi in box]
    return TrimResult(
        box=Box.of(pairs),
        removed_fraction=float(frac),
        witnesses_used=used,
        cuts=cuts,
    )


def _cut_threshold(terms, j, slice_vals, lo, hi):
    """Exclusion reach of one cut along coordinate j at a fixed slice.

    The cut excludes {a : poly(a) > 0}.  Returns (side, t): 'lower' with the
    sup t such that [lo, t) is excluded, or 'upper' with the inf t such that
    (t, hi] is excluded; None when the excluded set does not touch either end
    or the polynomial is beyond quadratic in a_j.
    """
    c2 = c1 = c0 = 0.0
    for expo, c in terms:
        e = expo[j]
        others = 1.0
        ok = True
        for k, ek in enumerate(expo):
            if k == j or not ek:
                continue
            others *= slice_vals[k] ** ek
        if e == 0:
            c0 += c * others
        elif e == 1:
            c1 += c * others
        elif e == 2:
            c2 += c * others
        else:
            return None
    # positive set of c2 t^2 + c1 t + c0
    if abs(c2) < 1e-300:
        if abs(c1) < 1e-300:
            return None
        root = -c0 / c1
        if c1 > 0:
            # positive for t > root: excludes the upper end
            return ("upper", max(root, lo)) if root < hi else None
        return ("lower", min(root, hi)) if root > lo else None
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0:
        return None  # no sign change: either everything or nothing, unusable
    r = disc ** 0.5
    r1, r2 = sorted(((-c1 - r) / (2 * c2), (-c1 + r) / (2 * c2)))
    if c2 > 0:
        # positive outside [r1, r2]
        if r1 > lo and r1 < hi:
            return ("lower", r1)
        if r2 < hi and r2 > lo:
            return ("upper", r2)
        return None
    # positive inside (r1, r2): touches an end only if it covers it
    if r1 <= lo < r2:
        return ("lower", min(r2, hi))
    if r1 < hi <= r2:
        return ("upper", max(r1, lo))
    return None


def _select_cuts(candidates: dict, box, cset: ConditionSet, max_cuts: int = 8,
                 slice_per_dim: int = 5) -> tuple[Polynomial, ...]:
    """Pick the cuts that push an exclusion boundary furthest somewhere.

    For every coordinate, side, and slice of the remaining coordinates, the
    candidate reaching deepest into the box wins; winners are deduplicated
    and capped.
    """
    if not candidates:
        return ()
    params = cset.template.params
    m = len(params)
    keys = list(candidates)

    slice_axes = [np.linspace(lo, hi, slice_per_dim) for lo, hi in box]
    winners: dict[tuple, int] = {}
    for j in range(m):
        other_axes = [slice_axes[k] for k in range(m) if k != j]
        for combo in itertools.product(*other_axes) if other_axes else [()]:
            slice_vals = [0.0] * m
            ci = 0
            for k in range(m):
                if k != j:
                    slice_vals[k] = combo[ci]
                    ci += 1
            best_lower = (box[j][0], None)  # deepest t, candidate index
            best_upper = (box[j][1], None)
            for i, key in enumerate(keys):
                res = _cut_threshold(candidates[key], j, slice_vals, *box[j])
                if res is None:
                    continue
                side, t = res
                if side == "lower" and t > best_lower[0] + 1e-15:
                    best_lower = (t, i)
                elif side == "upper" and t < best_upper[0] - 1e-15:
                    best_upper = (t, i)
            for _, idx in (best_lower, best_upper):
                if idx is not None:
                    winners[keys[idx]] = winners.get(keys[idx], 0) + 1

    ranked = sorted(winners.items(), key=lambda kv: (-kv[1], kv[0]))
    from .poly import VarUniverse

    u = VarUniverse.of(params)
    out = []
    for key, _ in ranked[:max_cuts]:
        terms = {tuple(e[:m]): Fraction(c) for e, c in candidates[key] if c != 0.0}
        out.append(Polynomial(u, terms, "exact"))
    return tuple(out)
