"""Textual front end for the guarded-loop language.

Grammar (``//`` comments run to end of line)::

    program  := "vars" ident+ "in" box ";"
                [ "dist" ident+ "in" box ";" ]
                "pre:" conj ";" branch+ "post:" conj ";"
    branch   := "branch" "(" conj ")" "{" stmt+ "}"
    stmt     := ident ":=" polyexpr ";"
              | "par" "{" (ident ":=" polyexpr ";")+ "}"
    conj     := cmp ("&&" cmp)*
    cmp      := polyexpr ("<=" | ">=" | "<" | ">") polyexpr
    box      := "[" num "," num "]" ("x" "[" num "," num "]")*
    polyexpr := the usual +, -, *, /, ^ with integer/decimal literals

Comparisons are normalized to "p <= 0" form; strict comparisons are treated
as their non-strict counterparts.  Division is only allowed by a nonzero
constant.  Decimal literals become exact rationals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .poly import Polynomial, VarUniverse, grlex_key, render
from .program import Box, Branch, GuardedLoop, ParAssign, SeqAssign, TemplateSpec


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


@dataclass
class Token:
    kind: str  # "ident" | "num" | operator/punct literal | "eof"
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+\.\d+|\d+)
  | (?P<op>:=|&&|<=|>=|pre:|post:|[-+*/^(){}\[\],;<>])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
""",
    re.VERBOSE,
)

KEYWORDS = {"vars", "dist", "in", "branch", "par"}


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            col = pos - line_start + 1
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        col = pos - line_start + 1
        if kind == "ws":
            nl = tok.count("\n")
            if nl:
                line += nl
                line_start = pos + tok.rfind("\n") + 1
        elif kind == "comment":
            pass
        elif kind == "num":
            tokens.append(Token("num", tok, line, col))
        elif kind == "ident":
            tokens.append(Token(tok if tok in KEYWORDS else "ident", tok, line, col))
        else:
            tokens.append(Token(tok, tok, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token], universe: VarUniverse | None = None):
        self.tokens = tokens
        self.i = 0
        self.universe = universe  # None while collecting declarations

    # -- token plumbing ------------------------------------------------------

    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, kind: str) -> Token:
        t = self.peek()
        if t.kind != kind:
            raise ParseError(f"expected {kind!r}, found {t.text!r}", t.line, t.col)
        return self.next()

    def error(self, msg: str):
        t = self.peek()
        raise ParseError(msg, t.line, t.col)

    # -- numbers and boxes -----------------------------------------------------

    def number(self) -> Fraction:
        neg = False
        if self.peek().kind == "-":
            self.next()
            neg = True
        t = self.expect("num")
        if "." in t.text:
            whole, frac = t.text.split(".")
            val = Fraction(int(whole + frac), 10 ** len(frac))
        else:
            val = Fraction(int(t.text))
        if self.peek().kind == "/":
            self.next()
            d = self.expect("num")
            if "." in d.text or int(d.text) == 0:
                raise ParseError("denominator must be a nonzero integer", d.line, d.col)
            val = val / int(d.text)
        return -val if neg else val

    def interval(self) -> tuple[Fraction, Fraction]:
        self.expect("[")
        lo = self.number()
        self.expect(",")
        hi = self.number()
        self.expect("]")
        return lo, hi

    def box(self) -> Box:
        pairs = [self.interval()]
        # "x" doubles as the cross-product separator between intervals
        while self.peek().kind == "ident" and self.peek().text == "x" and self.tokens[self.i + 1].kind == "[":
            self.next()
            pairs.append(self.interval())
        return Box.of(pairs)

    # -- polynomial expressions --------------------------------------------------

    def polyexpr(self) -> Polynomial:
        p = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.next().kind
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self) -> Polynomial:
        p = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.next()
            q = self.factor()
            if op.kind == "*":
                p = p * q
            else:
                if q.degree() > 0:
                    raise ParseError("non-polynomial expression: division by non-constant", op.line, op.col)
                c = q.coeff((0,) * len(q.universe))
                if c == 0:
                    raise ParseError("division by zero", op.line, op.col)
                p = p.scale(Fraction(1) / Fraction(c))
        return p

    def factor(self) -> Polynomial:
        p = self.atom()
        if self.peek().kind == "^":
            op = self.next()
            t = self.expect("num")
            if "." in t.text:
                raise ParseError("exponent must be a non-negative integer", t.line, t.col)
            p = p ** int(t.text)
        return p

    def atom(self) -> Polynomial:
        t = self.peek()
        if t.kind == "-":
            self.next()
            return -self.factor()
        if t.kind == "+":
            self.next()
            return self.factor()
        if t.kind == "(":
            self.next()
            p = self.polyexpr()
            self.expect(")")
            return p
        if t.kind == "num":
            self.next()
            if "." in t.text:
                whole, frac = t.text.split(".")
                val = Fraction(int(whole + frac), 10 ** len(frac))
            else:
                val = Fraction(int(t.text))
            return Polynomial.constant(self.universe, val)
        if t.kind == "ident":
            self.next()
            if t.text not in self.universe:
                raise ParseError(f"unknown variable {t.text!r}", t.line, t.col)
            return Polynomial.variable(self.universe, t.text)
        self.error(f"expected expression, found {t.text!r}")

    def cmp(self) -> Polynomial:
        """One comparison, normalized to the polynomial p with meaning p <= 0."""
        lhs = self.polyexpr()
        t = self.peek()
        if t.kind in ("<=", "<"):
            self.next()
            rhs = self.polyexpr()
            return lhs - rhs
        if t.kind in (">=", ">"):
            self.next()
            rhs = self.polyexpr()
            return rhs - lhs
        self.error(f"expected comparison operator, found {t.text!r}")

    def conj(self) -> list[Polynomial]:
        out = [self.cmp()]
        while self.peek().kind == "&&":
            self.next()
            out.append(self.cmp())
        return out


def parse_program(text: str) -> GuardedLoop:
    toks = tokenize(text)
    p = _Parser(toks)

    p.expect("vars")
    names: list[str] = []
    while p.peek().kind == "ident":
        names.append(p.next().text)
    if not names:
        p.error("expected at least one variable name")
    if len(set(names)) != len(names):
        p.error("duplicate variable names")
    p.expect("in")
    var_box = p.box()
    p.expect(";")
    if len(var_box) != len(names):
        p.error(f"box has {len(var_box)} intervals for {len(names)} variables")

    dist_names: list[str] = []
    dist_box = None
    if p.peek().kind == "dist":
        p.next()
        while p.peek().kind == "ident":
            dist_names.append(p.next().text)
        if not dist_names:
            p.error("expected at least one disturbance name")
        p.expect("in")
        dist_box = p.box()
        p.expect(";")
        if len(dist_box) != len(dist_names):
            p.error("disturbance box arity mismatch")
        if set(dist_names) & set(names):
            p.error("disturbance names shadow program variables")

    p.universe = VarUniverse.of(tuple(names) + tuple(dist_names))

    p.expect("pre:")
    pre = p.conj()
    p.expect(";")

    branches: list[Branch] = []
    while p.peek().kind == "branch":
        p.next()
        p.expect("(")
        guards = p.conj()
        p.expect(")")
        p.expect("{")
        stmts = []
        while p.peek().kind != "}":
            if p.peek().kind == "par":
                p.next()
                p.expect("{")
                assigns = []
                while p.peek().kind != "}":
                    v = p.expect("ident").text
                    p.expect(":=")
                    rhs = p.polyexpr()
                    p.expect(";")
                    assigns.append((v, rhs))
                p.expect("}")
                if not assigns:
                    p.error("empty par block")
                stmts.append(ParAssign(tuple(assigns)))
            else:
                v = p.expect("ident").text
                p.expect(":=")
                rhs = p.polyexpr()
                p.expect(";")
                stmts.append(SeqAssign(v, rhs))
        p.expect("}")
        if not stmts:
            p.error("empty branch body")
        branches.append(Branch(tuple(guards), tuple(stmts)))
    if not branches:
        p.error("expected at least one branch")

    p.expect("post:")
    post = p.conj()
    p.expect(";")
    p.expect("eof")

    loop = GuardedLoop(
        vars=tuple(names),
        pre=tuple(pre),
        post=tuple(post),
        branches=tuple(branches),
        var_box=var_box,
        dist_vars=tuple(dist_names),
        dist_box=dist_box,
    )
    _check_variable_roles(loop)
    return loop


def _check_variable_roles(loop: GuardedLoop):
    progvars = set(loop.vars)
    for p in loop.pre + loop.post:
        extra = p.mentioned_vars() - progvars
        if extra:
            raise ParseError(f"pre/post may not mention disturbances: {sorted(extra)}", 0, 0)
    for br in loop.branches:
        for g in br.guards:
            extra = g.mentioned_vars() - progvars
            if extra:
                raise ParseError(f"guards may not mention disturbances: {sorted(extra)}", 0, 0)
        for stmt in br.stmts:
            assigns = [(stmt.var, stmt.rhs)] if isinstance(stmt, SeqAssign) else list(stmt.assigns)
            for v, _ in assigns:
                if v not in progvars:
                    raise ParseError(f"assignment to undeclared variable {v!r}", 0, 0)


def parse_box_text(text: str) -> Box:
    toks = tokenize(text)
    p = _Parser(toks)
    box = p.box()
    p.expect("eof")
    return box


def parse_template(text: str, loop: GuardedLoop, param_box: Box | None = None) -> TemplateSpec:
    """Parse a template conjunction against a loop.

    Identifiers that are not program variables become parameters, ordered by
    first occurrence.  Each conjunct may be a bare polynomial (meaning <= 0)
    or an explicit comparison.  Disturbance names may not appear.
    """
    toks = tokenize(text)
    params: list[str] = []
    for t in toks:
        if t.kind == "ident" and t.text not in loop.vars and t.text not in params:
            if t.text in loop.dist_vars:
                raise ParseError(f"template may not mention disturbance {t.text!r}", t.line, t.col)
            params.append(t.text)
    universe = VarUniverse.of(tuple(params) + tuple(loop.vars))
    p = _Parser(toks, universe)
    conjuncts: list[Polynomial] = []
    while True:
        save = p.i
        try:
            poly = p.cmp()
        except ParseError:
            p.i = save
            poly = p.polyexpr()
        conjuncts.append(poly)
        if p.peek().kind == "&&":
            p.next()
            continue
        break
    p.expect("eof")
    if param_box is None:
        param_box = Box.uniform(len(params), -5, 5)
    if len(param_box) == 1 and len(params) > 1:
        param_box = Box.of(list(param_box.intervals) * len(params))
    if len(param_box) != len(params):
        raise ParseError(
            f"param box has {len(param_box)} intervals for {len(params)} parameters", 0, 0
        )
    return TemplateSpec(params=tuple(params), conjuncts=tuple(conjuncts), param_box=param_box)


# ---------------------------------------------------------------------------
# Pretty printing (parse . render_program is the identity on ASTs)
# ---------------------------------------------------------------------------


def _render_frac(x: Fraction) -> str:
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


def _render_box(box: Box) -> str:
    return " x ".join(f"[{_render_frac(lo)}, {_render_frac(hi)}]" for lo, hi in box.intervals)


def _render_cmp(p: Polynomial) -> str:
    return f"{render(p)} <= 0"


def _render_conj(ps) -> str:
    return " && ".join(_render_cmp(p) for p in ps)


def render_program(loop: GuardedLoop) -> str:
    lines = [f"vars {' '.join(loop.vars)} in {_render_box(loop.var_box)};"]
    if loop.dist_vars:
        lines.append(f"dist {' '.join(loop.dist_vars)} in {_render_box(loop.dist_box)};")
    lines.append(f"pre: {_render_conj(loop.pre)};")
    for br in loop.branches:
        lines.append(f"branch ({_render_conj(br.guards)}) {{")
        for stmt in br.stmts:
            if isinstance(stmt, SeqAssign):
                lines.append(f"  {stmt.var} := {render(stmt.rhs)};")
            else:
                lines.append("  par {")
                for v, rhs in stmt.assigns:
                    lines.append(f"    {v} := {render(rhs)};")
                lines.append("  }")
        lines.append("}")
    lines.append(f"post: {_render_conj(loop.post)};")
    return "\n".join(lines) + "\n"


def render_template(tmpl: TemplateSpec) -> str:
    return " && ".join(_render_cmp(c) for c in tmpl.conjuncts)
