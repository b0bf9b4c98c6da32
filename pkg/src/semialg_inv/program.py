"""Guarded-loop program model: AST types, validation, built-in corpus.

A program is a single nondeterministic loop over real-valued variables.  Each
branch has a guard conjunction (polynomials, each meaning c(x) <= 0) and a
body of polynomial assignments.  Assignments inside a branch are sequential
(later lines see earlier updates); a ``par { ... }`` block assigns
simultaneously.  All variables range over a known compact box.

Disturbance variables (``dist r in [lo, hi];``) are loop-local universally
quantified inputs with their own box: they may appear in update right-hand
sides only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .poly import Polynomial, VarUniverse


@dataclass(frozen=True)
class Box:
    """Closed rational intervals, one per variable (compactness requires lo <= hi)."""

    intervals: tuple[tuple[Fraction, Fraction], ...]

    @staticmethod
    def of(pairs) -> "Box":
        return Box(tuple((Fraction(lo), Fraction(hi)) for lo, hi in pairs))

    @staticmethod
    def uniform(n: int, lo, hi) -> "Box":
        return Box.of([(lo, hi)] * n)

    def __len__(self):
        return len(self.intervals)

    def center_halfwidth(self):
        return [((lo + hi) / 2, (hi - lo) / 2) for lo, hi in self.intervals]

    def contains(self, point) -> bool:
        return all(lo <= x <= hi for (lo, hi), x in zip(self.intervals, point))

    def clip(self, point):
        return [min(max(x, lo), hi) for (lo, hi), x in zip(self.intervals, point)]


@dataclass(frozen=True)
class SeqAssign:
    var: str
    rhs: Polynomial


@dataclass(frozen=True)
class ParAssign:
    assigns: tuple[tuple[str, Polynomial], ...]


Stmt = Union[SeqAssign, ParAssign]


@dataclass(frozen=True)
class Branch:
    """One guarded command: guards (conjunction of c <= 0) and its body."""

    guards: tuple[Polynomial, ...]
    stmts: tuple[Stmt, ...]

    def composed_map(self, loop: "GuardedLoop") -> dict[str, Polynomial]:
        """Collapse the body into one simultaneous polynomial map.

        Sequential assignments compose by substitution, so a later line sees
        the values written by earlier lines; a par block reads the pre-block
        state for every right-hand side.
        """
        u = loop.universe
        state: dict[str, Polynomial] = {}

        def resolve(rhs: Polynomial) -> Polynomial:
            return rhs.substitute(state) if state else rhs

        for stmt in self.stmts:
            if isinstance(stmt, SeqAssign):
                state = dict(state)
                state[stmt.var] = resolve(stmt.rhs)
            else:
                new = {v: resolve(rhs) for v, rhs in stmt.assigns}
                state = dict(state)
                state.update(new)
        out = {}
        for name in loop.vars:
            out[name] = state.get(name, Polynomial.variable(u, name))
        return out


@dataclass(frozen=True)
class GuardedLoop:
    """Hoare triple around a guarded loop, with bounding boxes."""

    vars: tuple[str, ...]
    pre: tuple[Polynomial, ...]
    post: tuple[Polynomial, ...]
    branches: tuple[Branch, ...]
    var_box: Box
    dist_vars: tuple[str, ...] = ()
    dist_box: Box | None = None

    @property
    def universe(self) -> VarUniverse:
        """Program variables followed by disturbance variables."""
        return VarUniverse.of(self.vars + self.dist_vars)

    @property
    def k(self) -> int:
        return len(self.branches)


@dataclass(frozen=True)
class TemplateSpec:
    """Parameterized invariant shape: conjunction of I_r(a, x) <= 0."""

    params: tuple[str, ...]
    conjuncts: tuple[Polynomial, ...]
    param_box: Box

    @property
    def param_universe(self) -> VarUniverse:
        return VarUniverse.of(self.params)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str


def validate(loop: GuardedLoop, tmpl: TemplateSpec) -> list[Diagnostic]:
    """Static consistency checks; empty list means clean (warnings excluded
    from cleanliness only if you filter on severity yourself)."""
    out: list[Diagnostic] = []
    progvars = set(loop.vars)
    distvars = set(loop.dist_vars)

    def check_box(box: Box | None, n: int, label: str):
        if box is None:
            if n:
                out.append(Diagnostic("error", f"{label}: missing box for {n} variables"))
            return
        if len(box) != n:
            out.append(Diagnostic("error", f"{label}: box has {len(box)} intervals for {n} variables"))
            return
        for i, (lo, hi) in enumerate(box.intervals):
            if lo > hi:
                out.append(Diagnostic("error", f"{label}[{i}]: lo {lo} > hi {hi}"))
            elif float(hi - lo) > 1e6:
                out.append(Diagnostic("warning", f"{label}[{i}]: span {float(hi - lo):g} > 1e6"))

    check_box(loop.var_box, len(loop.vars), "var_box")
    if loop.dist_vars:
        check_box(loop.dist_box, len(loop.dist_vars), "dist_box")
    check_box(tmpl.param_box, len(tmpl.params), "param_box")

    if not loop.branches:
        out.append(Diagnostic("error", "loop has no branches"))

    def check_mentions(p: Polynomial, allowed: set[str], label: str):
        extra = p.mentioned_vars() - allowed
        if extra:
            out.append(Diagnostic("error", f"{label} mentions undeclared: {sorted(extra)}"))

    for p in loop.pre:
        check_mentions(p, progvars, "pre")
    for p in loop.post:
        check_mentions(p, progvars, "post")
    for bi, br in enumerate(loop.branches):
        for g in br.guards:
            check_mentions(g, progvars, f"branch[{bi}] guard")
        for stmt in br.stmts:
            assigns = [(stmt.var, stmt.rhs)] if isinstance(stmt, SeqAssign) else list(stmt.assigns)
            for v, rhs in assigns:
                if v not in progvars:
                    out.append(Diagnostic("error", f"branch[{bi}] assigns to undeclared {v!r}"))
                check_mentions(rhs, progvars | distvars, f"branch[{bi}] update of {v}")

    allowed_tmpl = progvars | set(tmpl.params)
    for r, c in enumerate(tmpl.conjuncts):
        check_mentions(c, allowed_tmpl, f"template conjunct {r}")
    if len(set(tmpl.params) & progvars) > 0:
        out.append(Diagnostic("error", f"parameters shadow program variables: {sorted(set(tmpl.params) & progvars)}"))
    return out


# ---------------------------------------------------------------------------
# Built-in corpus
# ---------------------------------------------------------------------------

_DEFAULT_VAR_RANGE = "[-100, 100]"
_DEFAULT_PARAM_RANGE = "[-5, 5]"


def _boxes(n: int, rng: str) -> str:
    return " x ".join([rng] * n)


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    source: str
    template: str
    param_ranges: str


def _entry(name, source, template, n_params, param_range=_DEFAULT_PARAM_RANGE):
    return CorpusEntry(name, source, template, _boxes(n_params, param_range))


_DUBINS_W = "1.0178 + 1.8721*z1 - 0.0253*z2"

CORPUS: dict[str, CorpusEntry] = {
    e.name: e
    for e in [
        _entry(
            "overview",
            f"""
vars x y in {_boxes(2, _DEFAULT_VAR_RANGE)};
pre: x^2 + y^2 <= 1;
branch (x^2 + y^2 <= 3) {{
  x := x*x + y - 1;
  y := x*y + y + 1;
}}
post: x^2 - 2*y^2 <= 4;
""",
            "x^2 + a*y^2 + b",
            2,
        ),
        _entry(
            "example22",
            f"""
vars x y in {_boxes(2, _DEFAULT_VAR_RANGE)};
pre: x^2 + y^2 <= 4;
branch (x <= 4) {{
  x := x + 0.25*y*y + 1;
  y := 0.5*y;
}}
post: x <= 7;
""",
            "y^2 + x + a - 6",
            1,
        ),
        _entry(
            "dubins",
            f"""
vars z1 z2 in {_boxes(2, _DEFAULT_VAR_RANGE)};
pre: z1^2 + (z2 - 1)^2 - 1 <= 0;
branch (z1 <= 0) {{
  par {{
    z1 := z1 + 0.01*(1 - z2*({_DUBINS_W}));
    z2 := z2 + 0.01*(z1*({_DUBINS_W}));
  }}
}}
post: z1^2 + (z2 - 1)^2 - 4 <= 0;
""",
            "z1^2 + a*z2^2 + b*z2 + c",
            3,
        ),
        _entry(
            "dubins_disturbed",
            f"""
vars z1 z2 in {_boxes(2, _DEFAULT_VAR_RANGE)};
dist r in [-0.01, 0.01];
pre: z1^2 + (z2 - 1)^2 - 1 <= 0;
branch (z1 <= 0) {{
  par {{
    z1 := z1 + 0.01*(1 - z2*({_DUBINS_W} + r*z2));
    z2 := z2 + 0.01*(z1*({_DUBINS_W} + r*z2));
  }}
}}
post: z1^2 + (z2 - 1)^2 - 4 <= 0;
""",
            "z1^2 + a*z2^2 + b*z2 + c",
            3,
        ),
        _entry(
            "L1",
            f"""
vars x y in {_boxes(2, _DEFAULT_VAR_RANGE)};
pre: x^2 + y^2 <= 1;
branch (0 <= 0) {{
  x := x*x + y - 1;
  y := x*y + y + 1;
}}
post: x^2 - 2*y^2 <= 4;
""",
            "x^2 + a*y^2 + b",
            2,
        ),
        _entry(
            "L2",
            f"""
vars x y in {_boxes(2, _DEFAULT_VAR_RANGE)};
pre: x^2 + y^2 <= 1;
branch (x <= 0) {{
  par {{
    x := x - 1/2*x + 1/2*y*y;
    y := y - 1/2*x*y;
  }}
}}
branch (x >= 0) {{
  par {{
    x := x - 1/2*x - 1/2*y*y;
    y := y - 1/2*x*y;
  }}
}}
post: -x^2 - y^2 + 3*x - 2 <= 0;
""",
            "-x^2 + a*y^2 + b*x + c",
            3,
        ),
        _entry(
            "L3",
            f"""
vars x y in {_boxes(2, _DEFAULT_VAR_RANGE)};
pre: x^2 + y^2 <= 1;
branch (0 <= 0) {{
  par {{
    x := x + 1/8*(x - 4*y - x*x*x - x*y*y);
    y := y + 1/8*(4*x + y - x*x*y - y*y*y);
  }}
}}
post: x + y^2 - 3 <= 0;
""",
            "x + a*y^2 + b",
            2,
        ),
        _entry(
            "L4",
            f"""
vars x y in {_boxes(2, _DEFAULT_VAR_RANGE)};
pre: x^2 + y^2 <= 1;
branch (0 <= 0) {{
  par {{
    x := x + 1/64*(-3*x + x^2 + y^2 - 5*x^3);
    y := y + 1/64*(-3*y + 2*x*y - 5*y^3);
  }}
}}
post: -2*x + y^2 - 5 <= 0;
""",
            "y^2 + a*x + b",
            2,
        ),
        _entry(
            "L5",
            f"""
vars x y in {_boxes(2, _DEFAULT_VAR_RANGE)};
pre: x^2 + y^2 <= 1;
branch (0 <= 0) {{
  par {{
    x := x + 0.1*y;
    y := y + 0.1*(-x + 1/3*x*x*x - y);
  }}
}}
post: x^2 - 2*y^2 - 4 <= 0;
""",
            "x^2 + a*y^2 + b",
            2,
        ),
        _entry(
            "L6",
            f"""
vars x y z in {_boxes(3, _DEFAULT_VAR_RANGE)};
pre: x^2 + y^2 <= 1;
branch (0 <= 0) {{
  par {{
    x := x + 0.1*10.0*(y - x);
    y := y + 0.1*(x*(28.0 - z) - y);
    z := z + 0.1*(x*y - 8/3*z);
  }}
}}
post: x^2 - 2*y^2 - 4 <= 0;
""",
            "x^2 + a*y^2 + b",
            2,
        ),
    ]
}


def corpus_names() -> list[str]:
    return list(CORPUS)


def corpus(name: str) -> tuple[GuardedLoop, TemplateSpec]:
    """Parse a built-in benchmark program and its template.

    Variable boxes default to [-100, 100] per coordinate and parameter boxes
    to [-5, 5]; programs that need other ranges carry them in their source.
    """
    from .parser import parse_program, parse_template, parse_box_text

    if name not in CORPUS:
        raise KeyError(f"unknown corpus entry {name!r}; have {sorted(CORPUS)}")
    entry = CORPUS[name]
    loop = parse_program(entry.source)
    tmpl = parse_template(entry.template, loop, param_box=parse_box_text(entry.param_ranges))
    return loop, tmpl
