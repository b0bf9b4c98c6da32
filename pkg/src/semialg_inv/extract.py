"""Parameter extraction: find a point in the intersection of the recovered
sub-level sets, and the degree-escalation loop that orchestrates the whole
synthesis.

The search minimizes the worst sub-level value m(a) = max_i p_i(a) over the
(trimmed) parameter box by seeded Latin-hypercube multi-start with
Nelder-Mead refinement, then a bounded dense-grid fallback.  The first start
whose refinement reaches m <= -delta wins (ties break to the lowest start
index); the margin threshold delta is tied to the certificate residuals so
that boundary-hugging, numerically dubious candidates are refused.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .conditions import ConditionSet, build_conditions
from .poly import Polynomial
from .program import Box, GuardedLoop, TemplateSpec
from .report import ConditionSolveRecord, DegreeRecord, SynthesisReport
from .sdp import SolverSettings, certify_identity, compile as sdp_compile, recover_p, solve
from .sos import SizingError, build_relaxation
from .trim import trim_param_box


@dataclass(frozen=True)
class Underapprox:
    degree: int
    pieces: tuple[tuple[str, Polynomial], ...]  # (condition label, p over params)
    param_box: Box
    cuts: tuple[Polynomial, ...] = ()  # parameter-space restrictions, <= 0

    def margin(self, a: Sequence[float]) -> float:
        a = list(a)
        m = max(float(p.evaluate(a)) for _, p in self.pieces)
        for c in self.cuts:
            scale = max(1.0, c.max_abs_coeff())
            m = max(m, float(c.to_float().evaluate(a)) / scale)
        return m


@dataclass
class Candidate:
    a0: list[float]
    margin: float
    trace: dict = field(default_factory=dict)


def _latin_hypercube(box: Box, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dim = len(box)
    u = (rng.permutation(n).reshape(-1, 1) if dim == 1 else
         np.column_stack([rng.permutation(n) for _ in range(dim)]))
    u = (u + rng.uniform(size=(n, dim))) / n
    lo = np.array([float(l) for l, _ in box.intervals])
    hi = np.array([float(h) for _, h in box.intervals])
    return lo + u * (hi - lo)


class _Found(Exception):
    def __init__(self, a, margin):
        self.a = a
        self.margin = margin


def find_assignment(
    u: Underapprox,
    seed: int = 0,
    budget: int = 64,
    delta: float = 1e-6,
    grid_cap: int = 10**6,
) -> Candidate | None:
    """Return the first point whose worst sub-level value reaches -delta.

    Starts are scanned in index order; within each Nelder-Mead refinement the
    very first evaluation passing the margin test wins, so ties between
    concurrent starts break deterministically to the lowest start index.
    Falls back to a bounded dense grid, scanned in graded order, when no
    refinement path dips below the threshold.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    box = u.param_box
    dim = len(box)
    lo = np.array([float(l) for l, _ in box.intervals])
    hi = np.array([float(h) for _, h in box.intervals])

    def clipped(a):
        return np.minimum(np.maximum(a, lo), hi)

    evals = 0

    def m_watch(a):
        nonlocal evals
        evals += 1
        a = clipped(a)
        m = u.margin(a)
        if m <= -delta:
            raise _Found(a, m)
        return m

    starts = _latin_hypercube(box, budget, seed)
    for si, start in enumerate(starts):
        try:
            minimize(
                m_watch,
                start,
                method="Nelder-Mead",
                options=dict(maxiter=200 * dim, xatol=1e-10, fatol=1e-12),
            )
        except _Found as hit:
            return Candidate(
                a0=[float(v) for v in hit.a],
                margin=float(hit.margin),
                trace=dict(method="nelder-mead", start_index=si, evals=evals, seed=seed),
            )

    # deterministic grid fallback
    per_dim = 33
    while per_dim ** dim > grid_cap and per_dim > 3:
        per_dim -= 2
    axes = [np.linspace(l, h, per_dim) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    vals = None
    for _, p in u.pieces:
        arr = p.to_float().evaluate_arrays([pts[:, k] for k in range(dim)])
        vals = arr if vals is None else np.maximum(vals, arr)
    for c in u.cuts:
        scale = max(1.0, c.max_abs_coeff())
        arr = c.to_float().evaluate_arrays([pts[:, k] for k in range(dim)]) / scale
        vals = np.maximum(vals, arr)
    hits = np.nonzero(vals <= -delta)[0]
    if hits.size:
        a = pts[hits[0]]
        return Candidate(
            a0=[float(v) for v in a],
            margin=float(u.margin(a)),
            trace=dict(method="grid", grid_per_dim=per_dim, evals=evals, seed=seed),
        )
    return None


@dataclass
class EscalateSettings:
    max_degree: int = 3
    big_m: float = 10.0
    seed: int = 0
    budget: int = 64
    delta: float | None = None       # None: 1e-6 + 10 * certificate residual
    solver: SolverSettings = field(default_factory=SolverSettings)
    trim: bool = True
    threads: int = 1
    degree_time_limit: float | None = None


def _solve_condition(cond, degree, settings: EscalateSettings):
    rec = ConditionSolveRecord(condition=cond.label, degree=degree, status="pending")
    try:
        sos = build_relaxation(cond, degree)
    except SizingError as e:
        rec.status = "sizing_error"
        rec.message = str(e)
        return rec, None, None
    prob = sdp_compile(sos)
    rec.rows = prob.num_rows
    rec.block_dims = [d for _, d in prob.blocks]
    rec.free_vars = len(prob.free_names)
    solver_settings = settings.solver
    if settings.degree_time_limit is not None:
        solver_settings = SolverSettings(
            feas_tol=settings.solver.feas_tol,
            eig_tol=settings.solver.eig_tol,
            max_iters=settings.solver.max_iters,
            time_limit=settings.degree_time_limit,
            backend=settings.solver.backend,
        )
    sol = solve(prob, solver_settings)
    rec.status = sol.status
    rec.iterations = sol.iterations
    rec.solve_time = sol.solve_time
    rec.primal_residual = sol.primal_residual
    rec.dual_residual = sol.dual_residual
    rec.gap = sol.gap
    rec.min_eig = sol.min_eig
    rec.message = sol.message
    if not sol.ok:
        return rec, None, None
    rec.objective = float(sol.objective * sos.normalization)
    cert = certify_identity(sol, sos, prob)
    rec.certificate_relative = cert.max_relative
    p = recover_p(sol, sos)
    rec.p_coefficients = {
        "*".join(f"{n}^{e}" if e > 1 else n for n, e in zip(p.universe.names, m) if e)
        or "1": float(c)
        for m, c in sorted(p.terms.items())
    }
    return rec, p, cert


def escalate(
    loop: GuardedLoop,
    tmpl: TemplateSpec,
    settings: EscalateSettings | None = None,
) -> SynthesisReport:
    """Degree-escalation synthesis: solve every condition at each degree,
    search the intersection of sub-level sets, stop at the first candidate."""
    settings = settings or EscalateSettings()
    if settings.max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    t0 = time.time()
    report = SynthesisReport()
    report.param_names = list(tmpl.params)

    cset = build_conditions(loop, tmpl, big_m=settings.big_m)
    effective_tmpl = tmpl
    cuts: tuple = ()
    if settings.trim:
        tr = trim_param_box(cset)
        if tr.box is None:
            report.verdict = "not_found"
            report.notes.append(
                "parameter box emptied by necessary conditions: no valid assignment exists"
            )
            report.total_time = time.time() - t0
            return report
        if tr.box != tmpl.param_box or tr.cuts:
            effective_tmpl = TemplateSpec(tmpl.params, tmpl.conjuncts, tr.box)
            cuts = tr.cuts
            cset = build_conditions(
                loop, effective_tmpl, big_m=settings.big_m, param_cuts=cuts
            )
            report.notes.append(
                f"parameter box trimmed by witnesses ({tr.removed_fraction:.1%} of volume "
                f"removed, {len(cuts)} cut constraints)"
            )
    report.effective_param_box = [
        [str(lo), str(hi)] for lo, hi in effective_tmpl.param_box.intervals
    ]

    from concurrent.futures import ThreadPoolExecutor

    for d in range(1, settings.max_degree + 1):
        drec = DegreeRecord(degree=d)
        report.degrees.append(drec)
        if settings.threads > 1:
            with ThreadPoolExecutor(max_workers=settings.threads) as pool:
                results = list(
                    pool.map(lambda c: _solve_condition(c, d, settings), cset)
                )
        else:
            results = [_solve_condition(c, d, settings) for c in cset]
        pieces = []
        max_resid = 0.0
        ok = True
        for (rec, p, cert), cond in zip(results, cset):
            drec.solves.append(rec)
            if p is None:
                ok = False
            else:
                pieces.append((cond.label, p))
                max_resid = max(max_resid, cert.max_relative)
        drec.all_solved = ok
        if not ok:
            continue

        delta = settings.delta
        if delta is None:
            delta = 1e-6 + 10.0 * max_resid
        u = Underapprox(
            degree=d,
            pieces=tuple(pieces),
            param_box=effective_tmpl.param_box,
            cuts=cuts,
        )
        cand = find_assignment(u, seed=settings.seed, budget=settings.budget, delta=delta)
        if cand is not None:
            # re-check in exact arithmetic on rationalized coefficients
            if _exact_margin_ok(u, cand.a0, delta):
                drec.candidate = cand.a0
                drec.margin = cand.margin
                drec.search_trace = cand.trace
                report.candidate = cand.a0
                report.candidate_margin = cand.margin
                report.candidate_degree = d
                report.verdict = "candidate_only"
                break
    report.total_time = time.time() - t0
    return report


def _exact_margin_ok(u: Underapprox, a0, delta: float) -> bool:
    """Re-evaluate every p (and cut) at the candidate in rational arithmetic
    with coefficients rounded at 1e-12; the float margin must survive."""
    pt = [Fraction(x).limit_denominator(10**15) for x in a0]
    thresh = -Fraction(delta).limit_denominator(10**15)
    for _, p in u.pieces:
        terms = {
            m: Fraction(c).limit_denominator(10**12) for m, c in p.to_float().terms.items()
        }
        q = Polynomial(p.universe, terms, "exact")
        if q.evaluate(pt) > thresh:
            return False
    for c in u.cuts:
        if c.evaluate(pt) > 0:
            return False
    return True
