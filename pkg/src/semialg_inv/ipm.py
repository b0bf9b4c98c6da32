"""Dense primal-dual interior-point solver for block SDPs with free variables.

Problem form (all data real):

    minimize    c_u . u
    subject to  sum_b <A_jb, X_b> + D_j . u = b_j     j = 1..m
                X_b PSD                                for every block b
                u free

The dual is  max b.y  s.t.  S_b = -A*_b(y) PSD,  D^T y = c_u.

The search direction is the Nesterov-Todd scaling with a Mehrotra
predictor-corrector.  Elimination order: delta_S from the dual equation,
delta_X from the scaled complementarity equation, leading to the saddle
system

    [ M  D ] [dy]   [r1]         M_jk = <A_j, W A_k W>   (NT scaling W)
    [ D' 0 ] [du] = [r2]

solved by a Cholesky factorization of M and a small dense solve for du.
Constraint data enters as per-block matrices E_b whose rows are svec(A_jb),
so M accumulates as sum_b F_b F_b^T with F_b = E_b * congruence(R_b).

Intended problem sizes: a few thousand rows, blocks up to a few dozen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


@dataclass
class IPMSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 100
    time_limit: float | None = None
    step_frac: float = 0.98
    verbose: bool = False


@dataclass
class IPMResult:
    status: str  # optimal | near_optimal | infeasible | unbounded | numerical_failure
    X: list[np.ndarray] = field(default_factory=list)
    S: list[np.ndarray] = field(default_factory=list)
    y: np.ndarray | None = None
    u: np.ndarray | None = None
    objective: float = float("nan")
    primal_inf: float = float("nan")
    dual_inf: float = float("nan")
    gap: float = float("nan")
    min_eig: float = float("nan")
    iterations: int = 0
    solve_time: float = 0.0
    message: str = ""


def svec_indices(n: int):
    rows, cols = np.triu_indices(n)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, scale


def svec(A: np.ndarray, idx) -> np.ndarray:
    rows, cols, scale = idx
    return A[rows, cols] * scale


def smat(v: np.ndarray, n: int, idx) -> np.ndarray:
    rows, cols, scale = idx
    A = np.zeros((n, n))
    vals = v / scale
    A[rows, cols] = vals
    A[cols, rows] = vals
    return A


def congruence_matrix(R: np.ndarray, idx) -> np.ndarray:
    """Matrix G with G @ svec(A) = svec(R^T A R) for symmetric A."""
    rows, cols, scale = idx
    # per input svec slot (k,l): R^T A R picks up (r_k r_l^T + r_l r_k^T) * s/2
    # where r_k is the k-th row of R and s the svec scale of that slot
    P = np.einsum("ki,lj->klij", R, R)
    B = (P[rows, cols] + P[cols, rows]) * (0.5 * scale)[:, None, None]
    # read the output svec of each slice
    G = B[:, rows, cols] * scale[None, :]
    return G.T  # (s_out, s_in)


class BlockSDP:
    """Problem data holder with svec-compressed constraint matrices.

    Rows are equilibrated to unit max magnitude on construction; this leaves
    X and u unchanged and only rescales the dual multipliers y.
    """

    def __init__(self, dims: list[int], E_blocks: list[sp.spmatrix], D: np.ndarray,
                 b: np.ndarray, c_u: np.ndarray):
        self.dims = dims
        self.idx = [svec_indices(n) for n in dims]
        E = [sp.csr_matrix(Eb, dtype=float) for Eb in E_blocks]
        D = np.asarray(D, dtype=float)
        b = np.asarray(b, dtype=float)
        self.m = len(b)
        self.f = D.shape[1] if D.ndim == 2 else 0

        row_max = np.zeros(self.m)
        for Eb in E:
            if Eb.nnz:
                row_max = np.maximum(row_max, np.asarray(abs(Eb).max(axis=1).todense()).ravel())
        if self.f:
            row_max = np.maximum(row_max, np.abs(D).max(axis=1, initial=0.0))
        row_max = np.maximum(row_max, np.abs(b))
        self.row_scale = np.where(row_max > 0, row_max, 1.0)
        inv = sp.diags(1.0 / self.row_scale)
        self.E = [(inv @ Eb).tocsr() for Eb in E]
        self.D = D / self.row_scale[:, None] if self.f else D.reshape(self.m, 0)
        self.b = b / self.row_scale
        self.c_u = np.asarray(c_u, dtype=float)
        # row support per block, for restricted Schur accumulation
        self.rows_of_block = []
        for Eb in self.E:
            touched = np.unique(Eb.nonzero()[0])
            self.rows_of_block.append(touched)

    def apply_A(self, X: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for E, Xb, idx in zip(self.E, X, self.idx):
            out += E.dot(svec(Xb, idx))
        return out

    def apply_AT(self, y: np.ndarray) -> list[np.ndarray]:
        out = []
        for E, n, idx in zip(self.E, self.dims, self.idx):
            v = E.T.dot(y)
            out.append(smat(v, n, idx))
        return out


def _max_step(X: np.ndarray, dX: np.ndarray, chol_X: np.ndarray) -> float:
    """Largest alpha with X + alpha dX still PSD (X given by its Cholesky)."""
    W = sla.solve_triangular(chol_X, dX, lower=True)
    W = sla.solve_triangular(chol_X, W.T, lower=True)
    W = 0.5 * (W + W.T)
    lam = sla.eigvalsh(W)[0]
    if lam >= 0:
        return np.inf
    return -1.0 / lam


def solve_block_sdp(prob: BlockSDP, settings: IPMSettings | None = None) -> IPMResult:
    settings = settings or IPMSettings()
    t0 = time.time()
    m, f = prob.m, prob.f
    dims = prob.dims
    nblocks = len(dims)
    ntotal = sum(dims)

    # presolve: empty rows are either trivial or witness infeasibility
    row_nnz = np.zeros(m)
    for E in prob.E:
        row_nnz += np.asarray(abs(E).sum(axis=1)).ravel()
    if f:
        row_nnz += np.abs(prob.D).sum(axis=1)
    empty = row_nnz == 0
    if empty.any() and np.abs(prob.b[empty]).max(initial=0.0) > 1e-12:
        return IPMResult(status="infeasible", message="constraint with no variables and nonzero rhs",
                         solve_time=time.time() - t0)

    data_scale = max(1.0, float(np.abs(prob.b).max(initial=0.0)))
    tau = max(1.0, np.sqrt(data_scale))
    X = [tau * np.eye(n) for n in dims]
    S = [tau * np.eye(n) for n in dims]
    y = np.zeros(m)
    u = np.zeros(f)

    b_norm = 1.0 + np.abs(prob.b).max(initial=0.0)
    c_norm = 1.0 + np.abs(prob.c_u).max(initial=0.0)

    status = "numerical_failure"
    message = ""
    it = 0
    mu = np.inf
    prim_inf = dual_inf = gap_rel = np.inf

    best: dict | None = None
    stall = 0

    for it in range(1, settings.max_iters + 1):
        if settings.time_limit is not None and time.time() - t0 > settings.time_limit:
            status, message = "numerical_failure", "time limit reached"
            break

        rp = prob.b - prob.apply_A(X) - (prob.D @ u if f else 0.0)
        ATy = prob.apply_AT(y)
        Rd = [-ATy[bk] - S[bk] for bk in range(nblocks)]
        rf = prob.c_u - prob.D.T @ y if f else np.zeros(0)

        xs = sum(np.vdot(Xb, Sb) for Xb, Sb in zip(X, S))
        mu = xs / max(ntotal, 1)
        obj_p = float(prob.c_u @ u) if f else 0.0
        obj_d = float(prob.b @ y)

        prim_inf = np.abs(rp).max(initial=0.0) / b_norm
        dual_inf = max(
            (np.abs(R).max(initial=0.0) for R in Rd), default=0.0
        )
        if f:
            dual_inf = max(dual_inf, np.abs(rf).max(initial=0.0) / c_norm)
        gap_rel = max(xs, abs(obj_p - obj_d)) / (1.0 + abs(obj_p) + abs(obj_d))

        if settings.verbose:
            print(f"  it {it:3d}  mu {mu:9.2e}  prim {prim_inf:8.2e}  dual {dual_inf:8.2e}  gap {gap_rel:8.2e}  obj {obj_p:+.6e}")

        snapshot = dict(X=[Xb.copy() for Xb in X], S=[Sb.copy() for Sb in S],
                        y=y.copy(), u=u.copy(), obj=obj_p,
                        prim=prim_inf, dual=dual_inf, gap=gap_rel)
        score = prim_inf + dual_inf + gap_rel
        if best is None or score < 0.9 * (best["prim"] + best["dual"] + best["gap"]):
            best = snapshot
            stall = 0
        else:
            stall += 1

        if prim_inf <= settings.feas_tol and dual_inf <= settings.feas_tol and gap_rel <= settings.gap_tol:
            status = "optimal"
            break
        if stall >= 10:
            status, message = "stalled", "no residual progress over 10 iterations"
            break

        # divergence heuristics
        norm_iter = max(float(np.abs(Xb).max(initial=0.0)) for Xb in X)
        if norm_iter > 1e14:
            status, message = "numerical_failure", "iterates diverged"
            break
        if obj_d > 1e9 * data_scale and dual_inf <= 1e-6 and prim_inf > 1e-4:
            status, message = "infeasible", "dual objective diverging with feasible dual"
            break
        if f and obj_p < -1e9 * data_scale and prim_inf <= 1e-6:
            status, message = "unbounded", "primal objective diverging"
            break

        # NT scaling per block
        try:
            Rmats, Rinvs, lams, cholX = [], [], [], []
            for Xb, Sb in zip(X, S):
                Lx = sla.cholesky(Xb, lower=True)
                Ls = sla.cholesky(Sb, lower=True)
                Umat, sig, Vt = sla.svd(Ls.T @ Lx)
                sig = np.maximum(sig, 1e-300)
                R = Lx @ Vt.T @ np.diag(sig ** -0.5)
                Rinv = np.diag(sig ** 0.5) @ np.linalg.inv(Lx @ Vt.T)
                Rmats.append(R)
                Rinvs.append(Rinv)
                lams.append(sig)
                cholX.append(Lx)
        except np.linalg.LinAlgError:
            status, message = "numerical_failure", "lost positive definiteness"
            break

        # Schur complement M = sum_b F_b F_b^T restricted to touched rows
        M = np.zeros((m, m))
        for bk in range(nblocks):
            rows = prob.rows_of_block[bk]
            if rows.size == 0:
                continue
            G = congruence_matrix(Rmats[bk], prob.idx[bk])
            Esub = prob.E[bk][rows, :]
            F = Esub.dot(G.T)  # rows: svec(R^T A_j R)
            M[np.ix_(rows, rows)] += F @ F.T

        jitter = 0.0
        Mfact = None
        base = max(float(np.trace(M)) / max(m, 1), 1e-300)
        for attempt in range(8):
            try:
                Mfact = sla.cho_factor(M + (jitter * np.eye(m) if jitter else 0.0), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 100.0, 1e-14 * base)
        if Mfact is None:
            status, message = "numerical_failure", "Schur complement not factorizable"
            break

        if f:
            MD = sla.cho_solve(Mfact, prob.D)
            small = prob.D.T @ MD
            try:
                small_fact = sla.cho_factor(small + 1e-13 * np.eye(f) * max(1.0, abs(small).max()), lower=True)
            except np.linalg.LinAlgError:
                status, message = "numerical_failure", "free-variable system singular"
                break

        def saddle_solve(rhs, rf_):
            """(M D; D' 0) solve with two rounds of iterative refinement
            against the unjittered matrix."""
            def direct(r1, r2):
                if f:
                    t1 = sla.cho_solve(Mfact, r1)
                    du_ = sla.cho_solve(small_fact, prob.D.T @ t1 - r2)
                    dy_ = sla.cho_solve(Mfact, r1 - prob.D @ du_)
                else:
                    du_ = np.zeros(0)
                    dy_ = sla.cho_solve(Mfact, r1)
                return dy_, du_

            dy, du = direct(rhs, rf_)
            for _ in range(2):
                r1 = rhs - M @ dy - (prob.D @ du if f else 0.0)
                r2 = (rf_ - prob.D.T @ dy) if f else np.zeros(0)
                cy, cu = direct(r1, r2)
                dy = dy + cy
                du = du + cu
            return dy, du

        def kkt_once(rp_, Rd_, rf_, Rc_):
            # rhs_y = rp - A(Rc - W Rd W)
            rhs = rp_.copy()
            for bk in range(nblocks):
                Wrd = Rmats[bk] @ (Rmats[bk].T @ Rd_[bk] @ Rmats[bk]) @ Rmats[bk].T
                vec = svec(Rc_[bk] - Wrd, prob.idx[bk])
                rhs -= prob.E[bk].dot(vec)
            dy, du = saddle_solve(rhs, rf_)
            ATdy = prob.apply_AT(dy)
            dS = [Rd_[bk] - ATdy[bk] for bk in range(nblocks)]
            dX = []
            for bk in range(nblocks):
                WdSW = Rmats[bk] @ (Rmats[bk].T @ dS[bk] @ Rmats[bk]) @ Rmats[bk].T
                dX.append(0.5 * ((Rc_[bk] - WdSW) + (Rc_[bk] - WdSW).T))
            return dX, dS, dy, du

        def kkt_solve(rp_, Rd_, rf_, Rc_):
            """Newton direction with one full-system refinement pass; the
            scaled-space back-substitution loses digits when W is extreme."""
            dX, dS, dy, du = kkt_once(rp_, Rd_, rf_, Rc_)
            for _ in range(2):
                err_p = rp_ - prob.apply_A(dX) - (prob.D @ du if f else 0.0)
                ATdy = prob.apply_AT(dy)
                err_d = [Rd_[bk] - ATdy[bk] - dS[bk] for bk in range(nblocks)]
                err_f = (rf_ - prob.D.T @ dy) if f else np.zeros(0)
                err_c = []
                for bk in range(nblocks):
                    WdSW = Rmats[bk] @ (Rmats[bk].T @ dS[bk] @ Rmats[bk]) @ Rmats[bk].T
                    err_c.append(Rc_[bk] - (dX[bk] + WdSW))
                scale_now = max(
                    float(np.abs(err_p).max(initial=0.0)),
                    max((float(np.abs(e).max(initial=0.0)) for e in err_d), default=0.0),
                )
                if scale_now < 1e-14:
                    break
                cX, cS, cy, cu = kkt_once(err_p, err_d, err_f, err_c)
                dX = [dX[bk] + cX[bk] for bk in range(nblocks)]
                dS = [dS[bk] + cS[bk] for bk in range(nblocks)]
                dy = dy + cy
                du = du + cu
            return dX, dS, dy, du

        # predictor (affine)
        Rc_aff = [-Xb for Xb in X]
        dXa, dSa, dya, dua = kkt_solve(rp, Rd, rf, Rc_aff)

        cholS = [sla.cholesky(Sb, lower=True) for Sb in S]
        ap = min((_max_step(X[bk], dXa[bk], cholX[bk]) for bk in range(nblocks)), default=np.inf)
        ad = min((_max_step(S[bk], dSa[bk], cholS[bk]) for bk in range(nblocks)), default=np.inf)
        ap = min(1.0, settings.step_frac * ap)
        ad = min(1.0, settings.step_frac * ad)

        mu_aff = sum(
            np.vdot(X[bk] + ap * dXa[bk], S[bk] + ad * dSa[bk]) for bk in range(nblocks)
        ) / max(ntotal, 1)
        sigma = min(0.999, max(1e-4, (max(mu_aff, 0.0) / mu) ** 3))
        # keep complementarity from racing far ahead of feasibility (rows are
        # equilibrated, so absolute residuals and mu share a scale)
        prim_abs = float(np.abs(rp).max(initial=0.0))
        if mu * 100.0 < prim_abs and prim_abs > settings.feas_tol:
            sigma = max(sigma, 0.5)

        # corrector
        Rc = []
        for bk in range(nblocks):
            lam = lams[bk]
            denom = lam[:, None] + lam[None, :]
            dXh = Rinvs[bk] @ dXa[bk] @ Rinvs[bk].T
            dSh = Rmats[bk].T @ dSa[bk] @ Rmats[bk]
            H = 0.5 * (dXh @ dSh + dSh.T @ dXh.T)
            corr = 2.0 * H / denom
            Sinv = Rmats[bk] @ np.diag(1.0 / lam) @ Rmats[bk].T
            Rc.append(sigma * mu * Sinv - X[bk] - Rmats[bk] @ corr @ Rmats[bk].T)
        Rc = [0.5 * (C + C.T) for C in Rc]

        dX, dS, dy, du = kkt_solve(rp, Rd, rf, Rc)
        ap = min((_max_step(X[bk], dX[bk], cholX[bk]) for bk in range(nblocks)), default=np.inf)
        ad = min((_max_step(S[bk], dS[bk], cholS[bk]) for bk in range(nblocks)), default=np.inf)
        ap = min(1.0, settings.step_frac * ap)
        ad = min(1.0, settings.step_frac * ad)
        if not np.isfinite(ap) or not np.isfinite(ad) or ap < 1e-12 or ad < 1e-12:
            status, message = "numerical_failure", "step length collapsed"
            break

        # take the step, backing off if rounding breaks positive definiteness
        stepped = False
        for _ in range(20):
            Xn = [0.5 * ((X[bk] + ap * dX[bk]) + (X[bk] + ap * dX[bk]).T) for bk in range(nblocks)]
            Sn = [0.5 * ((S[bk] + ad * dS[bk]) + (S[bk] + ad * dS[bk]).T) for bk in range(nblocks)]
            try:
                for Zb in Xn + Sn:
                    sla.cholesky(Zb, lower=True)
                stepped = True
                break
            except np.linalg.LinAlgError:
                ap *= 0.8
                ad *= 0.8
        if not stepped:
            status, message = "numerical_failure", "could not keep iterates positive definite"
            break
        X, S = Xn, Sn
        y = y + ad * dy
        if f:
            u = u + ad * du
    else:
        status = "max_iters"

    # classify the endpoint
    if status in ("optimal",):
        final = dict(X=X, S=S, y=y, u=u, obj=float(prob.c_u @ u) if f else 0.0,
                     prim=prim_inf, dual=dual_inf, gap=gap_rel)
    else:
        final = best if best is not None else dict(X=X, S=S, y=y, u=u, obj=np.nan,
                                                   prim=prim_inf, dual=dual_inf, gap=gap_rel)
        near = (
            final["prim"] <= 100 * settings.feas_tol
            and final["dual"] <= 100 * settings.feas_tol
            and final["gap"] <= 1e4 * settings.gap_tol
        )
        if status in ("max_iters", "numerical_failure", "stalled") and near:
            status = "near_optimal"
        elif status in ("max_iters", "stalled"):
            status = "numerical_failure"
            message = message or "no convergence within iteration limit"

    min_eig = 0.0
    if final["X"]:
        min_eig = min(float(sla.eigvalsh(Xb)[0]) for Xb in final["X"])

    return IPMResult(
        status=status,
        X=final["X"],
        S=final["S"],
        y=final["y"],
        u=final["u"],
        objective=final["obj"],
        primal_inf=final["prim"],
        dual_inf=final["dual"],
        gap=final["gap"],
        min_eig=min_eig,
        iterations=it,
        solve_time=time.time() - t0,
        message=message,
    )
