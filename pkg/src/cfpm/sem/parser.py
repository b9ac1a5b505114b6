"""Parser for the structural-equation DSL.

One equation per line:

    <feature> = <expr> [; noise <feature> ~ Dist(args)] [; integer]

`N` denotes the equation's own noise term inside the expression, `#`
starts a comment, and feature names may be double-quoted to allow spaces
("team size").  Distributions: Uniform(lo, hi), DiscreteUniform(lo, hi),
Normal(mean, stddev), PointMass(value).  The optional `integer` clause
makes evaluation round the feature's value half-up to an integer.

Expression grammar (usual precedence, ^ is right-associative and binds
tighter than unary minus):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ['^' factor]
    atom   := NUMBER | 'N' | feature | func '(' expr (',' expr)* ')' | '(' expr ')'
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .expr import (
    FUNC_ARITY,
    BinOp,
    Call,
    Const,
    Expr,
    FeatureRef,
    Neg,
    NoiseRef,
    SemError,
    noise_count,
)
from .model import (
    DiscreteUniform,
    Equation,
    NoiseDist,
    Normal,
    PointMass,
    Sem,
    Uniform,
)


class SemParseError(SemError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {col}" if col is not None else "") + ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class _Token:
    kind: str  # NAME QUOTED NUMBER SYM END
    text: str
    col: int  # 1-based


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(\.\d*)?([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<quoted>"[^"\n]*")
  | (?P<sym>[=~;(),+\-*/^])
    """,
    re.VERBOSE,
)


def _tokenize(text: str, line_no: int) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos] == "#":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SemParseError(f"unexpected character {text[pos]!r}", line_no, pos + 1)
        if m.lastgroup == "quoted":
            tokens.append(_Token("QUOTED", m.group()[1:-1], pos + 1))
        elif m.lastgroup == "number":
            tokens.append(_Token("NUMBER", m.group(), pos + 1))
        elif m.lastgroup == "name":
            tokens.append(_Token("NAME", m.group(), pos + 1))
        elif m.lastgroup == "sym":
            tokens.append(_Token("SYM", m.group(), pos + 1))
        pos = m.end()
    tokens.append(_Token("END", "", len(text) + 1))
    return tokens


class _LineParser:
    def __init__(self, tokens: list[_Token], line_no: int):
        self.tokens = tokens
        self.pos = 0
        self.line_no = line_no

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def error(self, message: str, token: _Token | None = None) -> SemParseError:
        tok = token or self.current
        return SemParseError(message, self.line_no, tok.col)

    def advance(self) -> _Token:
        tok = self.current
        if tok.kind != "END":
            self.pos += 1
        return tok

    def expect_sym(self, sym: str) -> _Token:
        tok = self.current
        if tok.kind != "SYM" or tok.text != sym:
            raise self.error(f"expected {sym!r}, found {tok.text!r}" if tok.text else f"expected {sym!r}")
        return self.advance()

    def at_sym(self, sym: str) -> bool:
        return self.current.kind == "SYM" and self.current.text == sym

    def feature_name(self) -> str:
        tok = self.current
        if tok.kind == "QUOTED":
            self.advance()
            if not tok.text.strip():
                raise self.error("empty feature name", tok)
            return tok.text
        if tok.kind == "NAME":
            self.advance()
            return tok.text
        raise self.error("expected a feature name")

    # --- expression grammar -------------------------------------------------

    def expr(self) -> Expr:
        node = self.term()
        while self.current.kind == "SYM" and self.current.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.current.kind == "SYM" and self.current.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        if self.at_sym("-"):
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        node = self.atom()
        if self.at_sym("^"):
            self.advance()
            node = BinOp("^", node, self.factor())
        return node

    def atom(self) -> Expr:
        tok = self.current
        if tok.kind == "NUMBER":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "QUOTED":
            self.advance()
            return FeatureRef(tok.text)
        if tok.kind == "NAME":
            self.advance()
            if tok.text == "N":
                return NoiseRef()
            if tok.text in FUNC_ARITY:
                return self.call(tok)
            return FeatureRef(tok.text)
        if self.at_sym("("):
            self.advance()
            node = self.expr()
            self.expect_sym(")")
            return node
        raise self.error(f"unexpected token {tok.text!r}" if tok.text else "unexpected end of expression")

    def call(self, func_tok: _Token) -> Expr:
        self.expect_sym("(")
        args = [self.expr()]
        while self.at_sym(","):
            self.advance()
            args.append(self.expr())
        self.expect_sym(")")
        arity = FUNC_ARITY[func_tok.text]
        if len(args) != arity:
            raise self.error(
                f"{func_tok.text} takes {arity} argument{'s' if arity > 1 else ''}, got {len(args)}",
                func_tok,
            )
        return Call(func_tok.text, tuple(args))

    # --- clauses -------------------------------------------------------------

    def number(self) -> float:
        sign = 1.0
        if self.at_sym("-"):
            self.advance()
            sign = -1.0
        tok = self.current
        if tok.kind != "NUMBER":
            raise self.error("expected a number")
        self.advance()
        return sign * float(tok.text)

    def distribution(self) -> NoiseDist:
        tok = self.current
        if tok.kind != "NAME":
            raise self.error("expected a distribution name")
        self.advance()
        self.expect_sym("(")
        args = [self.number()]
        while self.at_sym(","):
            self.advance()
            args.append(self.number())
        self.expect_sym(")")
        name = tok.text
        try:
            if name == "Uniform":
                return Uniform(*args)
            if name == "DiscreteUniform":
                lo, hi = args
                if lo != int(lo) or hi != int(hi):
                    raise self.error("DiscreteUniform bounds must be integers", tok)
                return DiscreteUniform(int(lo), int(hi))
            if name == "Normal":
                return Normal(*args)
            if name == "PointMass":
                return PointMass(*args)
        except TypeError:
            raise self.error(f"wrong number of arguments for {name}", tok) from None
        except ValueError as exc:
            raise self.error(str(exc), tok) from None
        raise self.error(f"unknown distribution {name!r}", tok)

    def equation(self) -> Equation:
        feature_tok = self.current
        feature = self.feature_name()
        self.expect_sym("=")
        expr = self.expr()
        if self.current.kind not in ("END",) and not self.at_sym(";"):
            raise self.error(f"unexpected token {self.current.text!r} after expression")

        n_noise = noise_count(expr)
        if n_noise > 1:
            raise self.error("two noise terms in one expression", feature_tok)

        noise: NoiseDist | None = None
        integer = False
        while self.at_sym(";"):
            self.advance()
            tok = self.current
            if tok.kind == "NAME" and tok.text == "noise":
                if noise is not None:
                    raise self.error("duplicate noise clause", tok)
                self.advance()
                noise_feature = self.feature_name()
                if noise_feature != feature:
                    raise self.error(
                        f"noise clause names {noise_feature!r} but the equation defines {feature!r}",
                        tok,
                    )
                self.expect_sym("~")
                noise = self.distribution()
            elif tok.kind == "NAME" and tok.text == "integer":
                if integer:
                    raise self.error("duplicate integer clause", tok)
                self.advance()
                integer = True
            else:
                raise self.error("expected 'noise' or 'integer' clause")
        if self.current.kind != "END":
            raise self.error(f"unexpected trailing token {self.current.text!r}")

        if n_noise > 0 and noise is None:
            raise self.error(f"equation for {feature!r} references N but declares no noise", feature_tok)
        if n_noise == 0 and noise is not None:
            raise self.error(f"noise declared for {feature!r} but the expression never references N", feature_tok)
        return Equation(feature, expr, noise, integer)


def parse_sem(text) -> Sem:
    """Parse DSL text into a validated Sem (see Sem.from_equations)."""
    if hasattr(text, "read"):
        text = text.read()
    equations: list[Equation] = []
    lines: dict[str, int] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(line, line_no)
        if len(tokens) == 1:  # only END: blank or comment-only line
            continue
        eq = _LineParser(tokens, line_no).equation()
        if eq.feature in lines:
            raise SemParseError(
                f"duplicate equation for {eq.feature!r} (first defined on line {lines[eq.feature]})",
                line_no,
            )
        lines[eq.feature] = line_no
        equations.append(eq)
    try:
        return Sem.from_equations(equations)
    except SemError as exc:
        feature = getattr(exc, "feature", None)
        line = lines.get(feature) if feature else None
        if line is not None:
            raise SemParseError(str(exc), line) from None
        raise
