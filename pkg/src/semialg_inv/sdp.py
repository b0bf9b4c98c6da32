"""Reduction of an SOS program to a block semidefinite program, plus the
solver contract, recovery of the parameter polynomial, and the posterior
identity certificate.

Every SOS multiplier becomes one PSD Gram block; matching coefficients of
both polynomial identities monomial-by-monomial yields the linear equality
rows; the p coefficients are free scalar variables weighted by box moments in
the objective.  Row and block order is graded-lexicographic and therefore
byte-reproducible across runs.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .ipm import BlockSDP, IPMSettings, solve_block_sdp, svec_indices
from .poly import Monomial, Polynomial, VarUniverse, grlex_key, monomial_mul
from .sos import GramSlot, SizingError, SOSProgram, identity_residual


@dataclass
class SolverSettings:
    feas_tol: float = 1e-8
    eig_tol: float = 1e-8
    max_iters: int = 100
    time_limit: float | None = None
    backend: str = "internal"  # "internal" or "sdpa:<dir>"

    def __post_init__(self):
        if self.feas_tol <= 0 or self.eig_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class SDPProblem:
    """min objective . free  s.t.  sum_b <A_jb, X_b> + D_j . free = b_j, X_b PSD."""

    blocks: tuple[tuple[str, int], ...]
    block_owner: tuple[tuple[int, int], ...]      # (identity index, slot index)
    free_names: tuple[str, ...]
    row_keys: tuple[tuple[int, Monomial], ...]    # (identity index, monomial)
    E_blocks: tuple[sp.csr_matrix, ...]           # m x svecdim per block
    D: np.ndarray                                 # m x f
    b: np.ndarray
    objective: np.ndarray                         # over free vars only

    @property
    def num_rows(self) -> int:
        return len(self.b)

    def layout_signature(self) -> str:
        h = hashlib.sha256()
        for label, dim in self.blocks:
            h.update(f"B {label} {dim};".encode())
        h.update(("F " + ",".join(self.free_names) + ";").encode())
        for key in self.row_keys:
            h.update(repr(key).encode())
        for E in self.E_blocks:
            coo = E.tocoo()
            order = np.lexsort((coo.col, coo.row))
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                h.update(f"{r} {c} {v!r};".encode())
        h.update(self.D.tobytes())
        h.update(self.b.tobytes())
        h.update(self.objective.tobytes())
        return h.hexdigest()


@dataclass
class SDPSolution:
    status: str  # optimal | near_optimal | infeasible | unbounded | numerical_failure
    block_values: list[np.ndarray] = field(default_factory=list)
    free_values: np.ndarray | None = None
    objective: float = float("nan")          # solver-scale objective
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    gap: float = float("nan")
    min_eig: float = float("nan")
    iterations: int = 0
    solve_time: float = 0.0
    feas_tol: float = 1e-8
    eig_tol: float = 1e-8
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near_optimal")


def _svec_pos(i: int, j: int, n: int) -> int:
    # upper-triangular row-major position of (i, j), i <= j
    return i * n - (i * (i - 1)) // 2 + (j - i)


def compile(sos: SOSProgram) -> SDPProblem:  # noqa: A001 - domain term
    """Coefficient-match both identities into equality rows over Gram blocks
    and free p coefficients."""
    u = sos.cond.universe

    blocks: list[tuple[str, int]] = []
    owner: list[tuple[int, int]] = []
    for ii, ident in enumerate(sos.identities):
        for si, slot in enumerate(ident.slots):
            blocks.append((f"{ident.name}/{slot.name}", slot.dim))
            owner.append((ii, si))

    # shared Gram pair products (all slots share one basis per program)
    pair_cache: dict[tuple[Monomial, ...], list[tuple[int, int, Monomial]]] = {}

    def pairs_for(basis: tuple[Monomial, ...]):
        if basis not in pair_cache:
            out = []
            for i in range(len(basis)):
                for j in range(i, len(basis)):
                    out.append((i, j, monomial_mul(basis[i], basis[j])))
            pair_cache[basis] = out
        return pair_cache[basis]

    # first pass: the row monomial set per identity
    row_monos: list[set[Monomial]] = [set() for _ in sos.identities]
    p_monos = set(sos.p_basis)
    for ii, ident in enumerate(sos.identities):
        row_monos[ii] |= set(ident.offset.terms)
        row_monos[ii] |= p_monos
        for slot in ident.slots:
            for _, _, pm in pairs_for(slot.basis):
                for mm in slot.multiplier.terms:
                    row_monos[ii].add(monomial_mul(pm, mm))

    row_keys: list[tuple[int, Monomial]] = []
    for ii in range(len(sos.identities)):
        for mono in sorted(row_monos[ii], key=grlex_key):
            row_keys.append((ii, mono))
    row_index = {key: r for r, key in enumerate(row_keys)}
    m = len(row_keys)
    f = len(sos.p_basis)

    tri: list[list[list[float]]] = [[[], [], []] for _ in blocks]  # rows, svec cols, vals
    gram_reach = np.zeros(m, dtype=bool)

    bi = 0
    sqrt2 = math.sqrt(2.0)
    for ii, ident in enumerate(sos.identities):
        for slot in ident.slots:
            n = slot.dim
            for i, j, pm in pairs_for(slot.basis):
                pos = _svec_pos(i, j, n)
                for mm, mc in slot.multiplier.terms.items():
                    r = row_index[(ii, monomial_mul(pm, mm))]
                    gram_reach[r] = True
                    c = float(mc)
                    # row value is the coefficient of G_ij with both symmetric
                    # copies counted; svec carries sqrt2 on off-diagonals
                    val = c if i == j else sqrt2 * c
                    tri[bi][0].append(r)
                    tri[bi][1].append(pos)
                    tri[bi][2].append(val)
            bi += 1

    D = np.zeros((m, f))
    for fi, alpha in enumerate(sos.p_basis):
        for ii in range(len(sos.identities)):
            key = (ii, alpha)
            if key in row_index:
                D[row_index[key], fi] = -1.0

    b = np.zeros(m)
    for ii, ident in enumerate(sos.identities):
        for mono, c in ident.offset.terms.items():
            b[row_index[(ii, mono)]] = float(c)

    # a row with content but no variables at all cannot be satisfied
    for r in range(m):
        if not gram_reach[r] and not D[r].any() and abs(b[r]) > 0:
            ii, mono = row_keys[r]
            raise SizingError(
                f"degree {sos.degree} relaxation cannot express monomial {mono} "
                f"of identity {sos.identities[ii].name}; increase the degree"
            )

    E_blocks = []
    for bi, (label, dim) in enumerate(blocks):
        svecdim = dim * (dim + 1) // 2
        rows, cols, vals = tri[bi]
        E = sp.coo_matrix((vals, (rows, cols)), shape=(m, svecdim)).tocsr()
        E.sum_duplicates()
        E_blocks.append(E)

    return SDPProblem(
        blocks=tuple(blocks),
        block_owner=tuple(owner),
        free_names=tuple("p_" + "".join(map(str, a)) for a in sos.p_basis),
        row_keys=tuple(row_keys),
        E_blocks=tuple(E_blocks),
        D=D,
        b=b,
        objective=np.array(sos.objective, dtype=float),
    )


def solve(prob: SDPProblem, settings: SolverSettings | None = None) -> SDPSolution:
    """Solve through the configured backend; the result always carries its
    residuals and the tolerances it was solved under."""
    settings = settings or SolverSettings()
    if settings.backend == "internal":
        return _solve_internal(prob, settings)
    if settings.backend.startswith("sdpa:"):
        from .sdpa import solve_file_exchange

        return solve_file_exchange(prob, settings)
    raise ValueError(f"unknown backend {settings.backend!r}")


def _solve_internal(prob: SDPProblem, settings: SolverSettings) -> SDPSolution:
    t0 = time.time()
    bp = BlockSDP(
        dims=[dim for _, dim in prob.blocks],
        E_blocks=list(prob.E_blocks),
        D=prob.D,
        b=prob.b,
        c_u=prob.objective,
    )
    res = solve_block_sdp(
        bp,
        IPMSettings(
            feas_tol=settings.feas_tol,
            gap_tol=settings.feas_tol,
            max_iters=settings.max_iters,
            time_limit=settings.time_limit,
        ),
    )
    return SDPSolution(
        status=res.status,
        block_values=res.X,
        free_values=res.u,
        objective=res.objective,
        primal_residual=res.primal_inf,
        dual_residual=res.dual_inf,
        gap=res.gap,
        min_eig=res.min_eig,
        iterations=res.iterations,
        solve_time=time.time() - t0,
        feas_tol=settings.feas_tol,
        eig_tol=settings.eig_tol,
        message=res.message,
    )


def recover_p(sol: SDPSolution, sos: SOSProgram) -> Polynomial:
    """Assemble p from the free variables and map back to original coordinates.

    Result is a float polynomial over the parameter universe alone.
    """
    if not sol.ok:
        raise ValueError(f"cannot recover p from a solution with status {sol.status!r}")
    u = sos.cond.universe
    p_scaled = Polynomial(
        u,
        {mono: float(v) for mono, v in zip(sos.p_basis, sol.free_values)},
        "float",
    ).scale(sos.normalization)
    p_orig = sos.scaling.unscale_poly(p_scaled)
    return p_orig.reindex(VarUniverse.of(sos.cond.params))


@dataclass
class CertificateReport:
    identity_residuals: list[float]   # max |coefficient| of LHS - RHS
    identity_relative: list[float]    # divided by 1 + max |LHS coefficient|
    min_gram_eig: float
    flagged: bool

    @property
    def max_relative(self) -> float:
        return max(self.identity_relative)


def certify_identity(
    sol: SDPSolution,
    sos: SOSProgram,
    prob: SDPProblem | None = None,
    rel_tol: float = 1e-6,
    eig_tol: float = 1e-8,
) -> CertificateReport:
    """Reconstruct both identities from the Gram values and report residuals.

    Works in the solver's scaled coordinates, where the relative residual is
    meaningful; flags when it exceeds rel_tol or a Gram block dips below
    -eig_tol.
    """
    if sol.free_values is None:
        raise ValueError("solution carries no values")
    owners = prob.block_owner if prob is not None else _default_owner(sos)
    by_identity: dict[int, list[np.ndarray]] = {}
    for (ii, si), val in zip(owners, sol.block_values):
        by_identity.setdefault(ii, []).append((si, val))

    residuals: list[float] = []
    relative: list[float] = []
    for ii, ident in enumerate(sos.identities):
        grams = [v for _, v in sorted(by_identity.get(ii, []), key=lambda t: t[0])]
        _, max_abs, rel = identity_residual(sos, ident, sol.free_values, grams)
        residuals.append(max_abs)
        relative.append(rel)

    min_eig = min(
        (float(np.linalg.eigvalsh(v)[0]) for v in sol.block_values), default=0.0
    )
    flagged = max(relative) > rel_tol or min_eig < -eig_tol
    return CertificateReport(
        identity_residuals=residuals,
        identity_relative=relative,
        min_gram_eig=min_eig,
        flagged=flagged,
    )


def _default_owner(sos: SOSProgram):
    out = []
    for ii, ident in enumerate(sos.identities):
        for si in range(len(ident.slots)):
            out.append((ii, si))
    return tuple(out)
