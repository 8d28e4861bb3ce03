"""Small smooth-expression language: parser, symbolic derivative, tape compiler.

Grammar: ``+ - * / ^`` (integer exponents only), ``sin cos exp sqrt``,
numeric literals and named variables.  Expressions are parsed to a tiny AST
that supports exact symbolic differentiation and compilation to a flat
instruction tape; the tape is what the numeric kernels execute (see
``_kernels``), so evaluation and Jacobians share one code path whether numba
is available or not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ExpressionSyntaxError, UnknownSymbol

FUNCTIONS = ("sin", "cos", "exp", "sqrt")

# tape opcodes
OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG = 0, 1, 2, 3, 4, 5, 6
OP_SIN, OP_COS, OP_EXP, OP_SQRT, OP_POWI = 7, 8, 9, 10, 11


class Expr:
    """Base expression node."""

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def evaluate(self, env: dict) -> float:
        raise NotImplementedError

    def variables(self) -> set:
        return set()

    def simplified(self) -> "Expr":
        return self

    def __repr__(self):
        return f"<expr {self}>"


@dataclass(frozen=True, repr=False)
class Const(Expr):
    value: float

    def diff(self, var):
        return Const(0.0)

    def evaluate(self, env):
        return self.value

    def __str__(self):
        v = self.value
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)


@dataclass(frozen=True, repr=False)
class Var(Expr):
    name: str

    def diff(self, var):
        return Const(1.0 if self.name == var else 0.0)

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise UnknownSymbol(f"unknown variable '{self.name}'") from None

    def variables(self):
        return {self.name}

    def __str__(self):
        return self.name


@dataclass(frozen=True, repr=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def diff(self, var):
        l, r = self.left, self.right
        dl, dr = l.diff(var), r.diff(var)
        if self.op == "+":
            return BinOp("+", dl, dr)
        if self.op == "-":
            return BinOp("-", dl, dr)
        if self.op == "*":
            return BinOp("+", BinOp("*", dl, r), BinOp("*", l, dr))
        if self.op == "/":
            num = BinOp("-", BinOp("*", dl, r), BinOp("*", l, dr))
            return BinOp("/", num, BinOp("*", r, r))
        raise ValueError(self.op)

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def variables(self):
        return self.left.variables() | self.right.variables()

    def simplified(self):
        l = self.left.simplified()
        r = self.right.simplified()
        if isinstance(l, Const) and isinstance(r, Const):
            return Const(BinOp(self.op, l, r).evaluate({}))
        if self.op == "+":
            if _is_zero(l):
                return r
            if _is_zero(r):
                return l
        elif self.op == "-":
            if _is_zero(r):
                return l
            if _is_zero(l):
                return Neg(r).simplified()
        elif self.op == "*":
            if _is_zero(l) or _is_zero(r):
                return Const(0.0)
            if _is_one(l):
                return r
            if _is_one(r):
                return l
        elif self.op == "/":
            if _is_zero(l):
                return Const(0.0)
            if _is_one(r):
                return l
        return BinOp(self.op, l, r)

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True, repr=False)
class Neg(Expr):
    arg: Expr

    def diff(self, var):
        return Neg(self.arg.diff(var))

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def variables(self):
        return self.arg.variables()

    def simplified(self):
        a = self.arg.simplified()
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True, repr=False)
class Pow(Expr):
    base: Expr
    exponent: int

    def diff(self, var):
        n = self.exponent
        if n == 0:
            return Const(0.0)
        inner = self.base.diff(var)
        return BinOp("*", BinOp("*", Const(float(n)), Pow(self.base, n - 1)), inner)

    def evaluate(self, env):
        return self.base.evaluate(env) ** self.exponent

    def variables(self):
        return self.base.variables()

    def simplified(self):
        b = self.base.simplified()
        if self.exponent == 0:
            return Const(1.0)
        if self.exponent == 1:
            return b
        if isinstance(b, Const):
            return Const(b.value**self.exponent)
        return Pow(b, self.exponent)

    def __str__(self):
        return f"({self.base}^{self.exponent})"


@dataclass(frozen=True, repr=False)
class Call(Expr):
    func: str
    arg: Expr

    def diff(self, var):
        inner = self.arg.diff(var)
        if self.func == "sin":
            outer = Call("cos", self.arg)
        elif self.func == "cos":
            outer = Neg(Call("sin", self.arg))
        elif self.func == "exp":
            outer = Call("exp", self.arg)
        elif self.func == "sqrt":
            outer = BinOp("/", Const(0.5), Call("sqrt", self.arg))
        else:
            raise ValueError(self.func)
        return BinOp("*", outer, inner)

    def evaluate(self, env):
        x = self.arg.evaluate(env)
        return getattr(math, self.func)(x)

    def variables(self):
        return self.arg.variables()

    def simplified(self):
        a = self.arg.simplified()
        if isinstance(a, Const):
            return Const(getattr(math, self.func)(a.value))
        return Call(self.func, a)

    def __str__(self):
        return f"{self.func}({self.arg})"


def _is_zero(e):
    return isinstance(e, Const) and e.value == 0.0


def _is_one(e):
    return isinstance(e, Const) and e.value == 1.0


# ---------------------------------------------------------------------------
# parser


class _Tokenizer:
    def __init__(self, text, line=1):
        self.text = text
        self.pos = 0
        self.line = line
        self.tokens = []
        self._scan()

    def _error(self, msg, col):
        raise ExpressionSyntaxError(msg, line=self.line, col=col)

    def _scan(self):
        text = self.text
        i, n = 0, len(text)
        while i < n:
            c = text[i]
            if c.isspace():
                i += 1
                continue
            if c in "+-*/^()":
                self.tokens.append((c, c, i))
                i += 1
            elif c.isdigit() or c == ".":
                j = i
                while j < n and (text[j].isdigit() or text[j] == "."):
                    j += 1
                # exponent suffix like 1.5e-3
                if j < n and text[j] in "eE" and j + 1 < n and (
                    text[j + 1].isdigit() or (text[j + 1] in "+-" and j + 2 < n and text[j + 2].isdigit())
                ):
                    j += 2
                    while j < n and text[j].isdigit():
                        j += 1
                try:
                    value = float(text[i:j])
                except ValueError:
                    self._error(f"bad numeric literal '{text[i:j]}'", i)
                self.tokens.append(("num", value, i))
                i = j
            elif c.isalpha() or c == "_":
                j = i
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                self.tokens.append(("name", text[i:j], i))
                i = j
            else:
                self._error(f"unexpected character {c!r}", i)
        self.tokens.append(("end", None, n))


class _Parser:
    """Recursive descent over: expr := term (('+'|'-') term)*,
    term := factor (('*'|'/') factor)*, factor := ('-')* power,
    power := atom ('^' int)?, atom := number | name | name '(' expr ')' | '(' expr ')'.
    """

    def __init__(self, text, variables, line=1):
        self.tok = _Tokenizer(text, line=line)
        self.variables = set(variables)
        self.line = line
        self.i = 0

    def _peek(self):
        return self.tok.tokens[self.i]

    def _next(self):
        t = self.tok.tokens[self.i]
        self.i += 1
        return t

    def _error(self, msg, col):
        raise ExpressionSyntaxError(msg, line=self.line, col=col)

    def parse(self) -> Expr:
        e = self._expr()
        kind, _, col = self._peek()
        if kind != "end":
            self._error(f"unexpected trailing token {kind!r}", col)
        return e.simplified()

    def _expr(self):
        e = self._term()
        while self._peek()[0] in ("+", "-"):
            op, _, _ = self._next()
            e = BinOp(op, e, self._term())
        return e

    def _term(self):
        e = self._factor()
        while self._peek()[0] in ("*", "/"):
            op, _, _ = self._next()
            e = BinOp(op, e, self._factor())
        return e

    def _factor(self):
        if self._peek()[0] == "-":
            self._next()
            return Neg(self._factor())
        if self._peek()[0] == "+":
            self._next()
            return self._factor()
        return self._power()

    def _power(self):
        base = self._atom()
        if self._peek()[0] == "^":
            _, _, col = self._next()
            sign = 1
            while self._peek()[0] == "-":
                self._next()
                sign = -sign
            kind, value, col2 = self._next()
            if kind == "(":
                # parenthesized integer exponent, e.g. x^(2)
                inner = self._expr()
                kind2, _, col3 = self._next()
                if kind2 != ")":
                    self._error("expected ')' after exponent", col3)
                if not isinstance(inner, Const) or inner.value != int(inner.value):
                    self._error("exponent must be an integer literal", col2)
                value = inner.value
            elif kind != "num" or value != int(value):
                self._error("exponent must be an integer literal", col2)
            return Pow(base, sign * int(value))
        return base

    def _atom(self):
        kind, value, col = self._next()
        if kind == "num":
            return Const(float(value))
        if kind == "(":
            e = self._expr()
            kind2, _, col2 = self._next()
            if kind2 != ")":
                self._error("expected ')'", col2)
            return e
        if kind == "name":
            if self._peek()[0] == "(":
                if value not in FUNCTIONS:
                    raise UnknownSymbol(
                        f"unknown function '{value}' (line {self.line}, col {col})"
                    )
                self._next()
                arg = self._expr()
                kind2, _, col2 = self._next()
                if kind2 != ")":
                    self._error(f"expected ')' after {value}(...)", col2)
                return Call(value, arg)
            if value == "pi":
                return Const(math.pi)
            if value not in self.variables:
                raise UnknownSymbol(
                    f"unknown variable '{value}' (line {self.line}, col {col}); "
                    f"expected one of {sorted(self.variables)}"
                )
            return Var(value)
        self._error(f"expected a value, got {kind!r}", col)


def parse_expression(text: str, variables, line: int = 1) -> Expr:
    """Parse one expression over the given variable names."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionSyntaxError("empty expression", line=line, col=0)
    return _Parser(text, variables, line=line).parse()


def negative_power_free(expr: Expr) -> bool:
    """True when no subexpression carries a negative integer exponent."""
    if isinstance(expr, Pow):
        return expr.exponent >= 0 and negative_power_free(expr.base)
    if isinstance(expr, BinOp):
        return negative_power_free(expr.left) and negative_power_free(expr.right)
    if isinstance(expr, (Neg,)):
        return negative_power_free(expr.arg)
    if isinstance(expr, Call):
        return negative_power_free(expr.arg)
    return True


def guarded_subexpressions(expr: Expr):
    """Yield ('div', denominator) and ('sqrt', argument) guard obligations."""
    if isinstance(expr, BinOp):
        yield from guarded_subexpressions(expr.left)
        yield from guarded_subexpressions(expr.right)
        if expr.op == "/":
            yield ("div", expr.right)
    elif isinstance(expr, Neg):
        yield from guarded_subexpressions(expr.arg)
    elif isinstance(expr, Pow):
        yield from guarded_subexpressions(expr.base)
        if expr.exponent < 0:
            yield ("div", expr.base)
    elif isinstance(expr, Call):
        yield from guarded_subexpressions(expr.arg)
        if expr.func == "sqrt":
            yield ("sqrt", expr.arg)


# ---------------------------------------------------------------------------
# tape compilation


class Tape:
    """Flat register program evaluating a block of expressions.

    ``codes[i]`` consumes registers ``arg1[i]``/``arg2[i]`` and writes
    ``out[i]``; variables occupy registers ``0..nvars-1``.  ``outputs[j]``
    is the register holding expression ``j``.
    """

    __slots__ = ("codes", "arg1", "arg2", "out", "consts", "outputs", "nvars", "nreg")

    def __init__(self, codes, arg1, arg2, out, consts, outputs, nvars, nreg):
        self.codes = np.asarray(codes, dtype=np.int64)
        self.arg1 = np.asarray(arg1, dtype=np.int64)
        self.arg2 = np.asarray(arg2, dtype=np.int64)
        self.out = np.asarray(out, dtype=np.int64)
        self.consts = np.asarray(consts, dtype=np.float64)
        self.outputs = np.asarray(outputs, dtype=np.int64)
        self.nvars = nvars
        self.nreg = nreg


def compile_tape(expressions, variables) -> Tape:
    """Compile expressions (shared variable order) into one Tape."""
    variables = list(variables)
    var_index = {name: i for i, name in enumerate(variables)}
    codes, arg1, arg2, out = [], [], [], []
    consts = []
    const_reg = {}
    nreg = len(variables)

    def emit(code, a, b):
        nonlocal nreg
        codes.append(code)
        arg1.append(a)
        arg2.append(b)
        out.append(nreg)
        nreg += 1
        return nreg - 1

    def reg_of(e: Expr) -> int:
        nonlocal nreg
        if isinstance(e, Const):
            key = float(e.value)
            if key not in const_reg:
                consts.append(key)
                const_reg[key] = emit(OP_CONST, len(consts) - 1, 0)
            return const_reg[key]
        if isinstance(e, Var):
            return var_index[e.name]
        if isinstance(e, Neg):
            return emit(OP_NEG, reg_of(e.arg), 0)
        if isinstance(e, BinOp):
            op = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}[e.op]
            return emit(op, reg_of(e.left), reg_of(e.right))
        if isinstance(e, Pow):
            return emit(OP_POWI, reg_of(e.base), e.exponent)
        if isinstance(e, Call):
            code = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "sqrt": OP_SQRT}[e.func]
            return emit(code, reg_of(e.arg), 0)
        raise TypeError(type(e))

    outputs = [reg_of(e.simplified()) for e in expressions]
    return Tape(codes, arg1, arg2, out, consts, outputs, len(variables), nreg)
