"""Expression layer: a small parser, exact derivatives, and field evaluators.

Scalar data on a chart comes in two flavours.  Closed-form fields are
expression trees produced by :func:`parse` and differentiated exactly by
:func:`diff`.  Composed fields are plain callables built by the constraint
machinery (they may contain linear solves with frozen pivots).  Both are
evaluated with ordinary Python arithmetic, so forward-mode dual numbers
pass through unchanged; that is how directional derivatives of composed
fields are obtained without finite differences.
"""

import math
import re

__all__ = [
    "ExprSyntaxError", "UnknownSymbolError", "DomainError",
    "Expr", "Const", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Call",
    "SymbolTable", "parse", "diff",
    "Dual", "eval_dual", "ScalarField", "FormField",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ExprSyntaxError(ValueError):
    """Malformed source.  ``offset`` is the character position of the fault."""

    def __init__(self, message, offset):
        super().__init__("%s (offset %d)" % (message, offset))
        self.offset = offset


class UnknownSymbolError(ValueError):
    """Identifier not declared in the symbol table of the owning chart."""

    def __init__(self, name, offset):
        super().__init__("unknown symbol '%s' (offset %d)" % (name, offset))
        self.name = name
        self.offset = offset


class DomainError(ArithmeticError):
    """Evaluation left the domain of a partial function (log, sqrt, /)."""


# ---------------------------------------------------------------------------
# dual numbers


def _core(x):
    """Innermost float of a possibly nested dual number."""
    while isinstance(x, Dual):
        x = x.a
    return x


class Dual:
    """Forward-mode number a + b*eps with eps^2 = 0.

    Components may themselves be Dual (one fresh level per nested
    eval_dual call), which yields exact second directional derivatives.
    Only the operations needed by the expression grammar are defined.
    """

    __slots__ = ("a", "b")

    def __init__(self, a, b=0.0):
        self.a = a
        self.b = b

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.a + other.a, self.b + other.b)
        return Dual(self.a + other, self.b)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.a - other.a, self.b - other.b)
        return Dual(self.a - other, self.b)

    def __rsub__(self, other):
        return Dual(other - self.a, -self.b)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.a * other.a, self.a * other.b + self.b * other.a)
        return Dual(self.a * other, self.b * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _sdiv(self, other)

    def __rtruediv__(self, other):
        return _sdiv(other, self)

    def __neg__(self):
        return Dual(-self.a, -self.b)

    def __pow__(self, c):
        return _spow(self, c)

    def __repr__(self):
        return "Dual(%r, %r)" % (self.a, self.b)


def _sdiv(x, y):
    if _core(y) == 0.0:
        raise DomainError("division by zero")
    if isinstance(y, Dual):
        inv = _sdiv(1.0, y.a)
        if isinstance(x, Dual):
            return Dual(x.a * inv, (x.b - x.a * inv * y.b) * inv)
        return Dual(x * inv, -x * inv * inv * y.b)
    if isinstance(x, Dual):
        return Dual(x.a / y, x.b / y)
    return x / y


def _spow(x, c):
    """x**c for rational constant c; the grammar never produces variable
    exponents, which keeps differentiation closed."""
    xc = _core(x)
    if isinstance(x, Dual):
        if c == 0.0:
            return Dual(1.0, 0.0)
        if c == 1.0:
            return Dual(x.a, x.b)
        return Dual(_spow(x.a, c), c * _spow(x.a, c - 1.0) * x.b)
    if xc < 0.0 and c != round(c):
        raise DomainError("negative base with fractional exponent")
    if xc == 0.0 and c < 0.0:
        raise DomainError("zero base with negative exponent")
    return math.pow(x, c)


def _ssin(x):
    if isinstance(x, Dual):
        return Dual(_ssin(x.a), _scos(x.a) * x.b)
    return math.sin(x)


def _scos(x):
    if isinstance(x, Dual):
        return Dual(_scos(x.a), -_ssin(x.a) * x.b)
    return math.cos(x)


def _sexp(x):
    if isinstance(x, Dual):
        e = _sexp(x.a)
        return Dual(e, e * x.b)
    return math.exp(x)


def _slog(x):
    if _core(x) <= 0.0:
        raise DomainError("log of nonpositive argument")
    if isinstance(x, Dual):
        return Dual(_slog(x.a), _sdiv(x.b, x.a))
    return math.log(x)


def _ssqrt(x):
    if isinstance(x, Dual):
        # No one-sided derivative at zero, so the dual path rejects it.
        if _core(x) <= 0.0:
            raise DomainError("sqrt derivative needs a positive argument")
        r = _ssqrt(x.a)
        return Dual(r, _sdiv(x.b, 2.0 * r))
    if x < 0.0:
        raise DomainError("sqrt of negative argument")
    return math.sqrt(x)


_FUNC_EVAL = {"sin": _ssin, "cos": _scos, "exp": _sexp, "log": _slog,
              "sqrt": _ssqrt}


# ---------------------------------------------------------------------------
# symbol tables


class SymbolTable:
    """Ordered chart coordinates.  Slot order fixes the meaning of every
    vector, covector and matrix index used downstream."""

    def __init__(self, names):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError("duplicate symbol names: %r" % (names,))
        self.names = names
        self._index = {s: i for i, s in enumerate(names)}

    @classmethod
    def lagrangian(cls, n):
        """Chart (t, q1..qn, v1..vn) on the velocity phase space."""
        return cls(("t",)
                   + tuple("q%d" % i for i in range(1, n + 1))
                   + tuple("v%d" % i for i in range(1, n + 1)))

    @classmethod
    def momentum(cls, n):
        """Chart (t, q1..qn, p1..pn) on the momentum phase space."""
        return cls(("t",)
                   + tuple("q%d" % i for i in range(1, n + 1))
                   + tuple("p%d" % i for i in range(1, n + 1)))

    def index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise UnknownSymbolError(name, -1) from None

    def __contains__(self, name):
        return name in self._index

    def __len__(self):
        return len(self.names)

    def __repr__(self):
        return "SymbolTable(%s)" % ", ".join(self.names)


# ---------------------------------------------------------------------------
# expression trees


class Expr:
    """Base node.  Trees are immutable; construction folds constants and
    the identities x+0, x*1, x*0, x^1."""

    def ev(self, vals):
        raise NotImplementedError

    def diff(self, name):
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self._key() == other._key()

    def __hash__(self):
        return hash((type(self).__name__,) + self._key())


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    def ev(self, vals):
        return self.value

    def diff(self, name):
        return Const(0.0)

    def _key(self):
        return (self.value,)

    def __str__(self):
        return repr(self.value)


class Var(Expr):
    __slots__ = ("name", "slot")

    def __init__(self, name, slot):
        self.name = name
        self.slot = slot

    def ev(self, vals):
        return vals[self.slot]

    def diff(self, name):
        return Const(1.0 if name == self.name else 0.0)

    def _key(self):
        return (self.name, self.slot)

    def __str__(self):
        return self.name


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg):
        self.arg = arg

    def ev(self, vals):
        return -self.arg.ev(vals)

    def diff(self, name):
        return neg(self.arg.diff(name))

    def _key(self):
        return (self.arg,)

    def __str__(self):
        return "(-%s)" % (self.arg,)


class _Binary(Expr):
    __slots__ = ("left", "right")

    def __init__(self, left, right):
        self.left = left
        self.right = right

    def _key(self):
        return (self.left, self.right)

    def __str__(self):
        return "(%s %s %s)" % (self.left, self._SYMBOL, self.right)


class Add(_Binary):
    _SYMBOL = "+"

    def ev(self, vals):
        return self.left.ev(vals) + self.right.ev(vals)

    def diff(self, name):
        return add(self.left.diff(name), self.right.diff(name))


class Sub(_Binary):
    _SYMBOL = "-"

    def ev(self, vals):
        return self.left.ev(vals) - self.right.ev(vals)

    def diff(self, name):
        return sub(self.left.diff(name), self.right.diff(name))


class Mul(_Binary):
    _SYMBOL = "*"

    def ev(self, vals):
        return self.left.ev(vals) * self.right.ev(vals)

    def diff(self, name):
        return add(mul(self.left.diff(name), self.right),
                   mul(self.left, self.right.diff(name)))


class Div(_Binary):
    _SYMBOL = "/"

    def ev(self, vals):
        return _sdiv(self.left.ev(vals), self.right.ev(vals))

    def diff(self, name):
        # (u/w)' = u'/w - u w'/w^2
        return sub(div(self.left.diff(name), self.right),
                   div(mul(self.left, self.right.diff(name)),
                       mul(self.right, self.right)))


class Pow(Expr):
    """base^c with c a rational constant (grammar restriction)."""

    __slots__ = ("base", "exponent")

    def __init__(self, base, exponent):
        self.base = base
        self.exponent = float(exponent)

    def ev(self, vals):
        return _spow(self.base.ev(vals), self.exponent)

    def diff(self, name):
        c = self.exponent
        return mul(Const(c), mul(pow_(self.base, c - 1.0),
                                 self.base.diff(name)))

    def _key(self):
        return (self.base, self.exponent)

    def __str__(self):
        return "(%s ^ %s)" % (self.base, repr(self.exponent))


class Call(Expr):
    __slots__ = ("fname", "arg")

    def __init__(self, fname, arg):
        self.fname = fname
        self.arg = arg

    def ev(self, vals):
        return _FUNC_EVAL[self.fname](self.arg.ev(vals))

    def diff(self, name):
        d = self.arg.diff(name)
        f, x = self.fname, self.arg
        if f == "sin":
            return mul(Call("cos", x), d)
        if f == "cos":
            return neg(mul(Call("sin", x), d))
        if f == "exp":
            return mul(Call("exp", x), d)
        if f == "log":
            return div(d, x)
        return div(d, mul(Const(2.0), Call("sqrt", x)))

    def _key(self):
        return (self.fname, self.arg)

    def __str__(self):
        return "%s(%s)" % (self.fname, self.arg)


# folding constructors ------------------------------------------------------


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


def add(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a, b):
    if _is_const(b) and not _is_const(a):
        a, b = b, a
    if _is_const(a):
        if _is_const(b):
            return Const(a.value * b.value)
        if a.value == 0.0:
            return Const(0.0)
        if a.value == 1.0:
            return b
        if isinstance(b, Mul) and _is_const(b.left):
            return mul(Const(a.value * b.left.value), b.right)
    return Mul(a, b)


def div(a, b):
    if _is_const(b) and b.value != 0.0:
        if _is_const(a):
            return Const(a.value / b.value)
        if b.value == 1.0:
            return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return Const(0.0)
    return Div(a, b)


def neg(a):
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def pow_(base, exponent):
    exponent = float(exponent)
    if exponent == 0.0:
        return Const(1.0)
    if exponent == 1.0:
        return base
    if _is_const(base):
        try:
            return Const(_spow(base.value, exponent))
        except DomainError:
            pass
    return Pow(base, exponent)


def call(fname, arg):
    if _is_const(arg):
        try:
            return Const(_FUNC_EVAL[fname](arg.value))
        except DomainError:
            pass
    return Call(fname, arg)


# ---------------------------------------------------------------------------
# parser
#
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := '-' factor | base ('^' factor)?
#   base   := number | ident | '(' expr ')' | func '(' expr ')'
#
# '^' is right-associative and binds tighter than unary minus, so
# -x^2 parses as -(x^2).

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z][A-Za-z0-9]*)"
    r"|(?P<op>[-+*/^()]))")


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            raise ExprSyntaxError("unexpected character %r"
                                  % stripped[0], len(source) - len(stripped))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source, table):
        self.tokens = _tokenize(source)
        self.table = table
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self):
        e = self.expr()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError("unexpected %r" % text, offset)
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                rhs = self.term()
                e = add(e, rhs) if text == "+" else sub(e, rhs)
            else:
                return e

    def term(self):
        e = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                rhs = self.factor()
                e = mul(e, rhs) if text == "*" else div(e, rhs)
            else:
                return e

    def factor(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return neg(self.factor())
        e = self.base()
        kind, text, offset = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            exponent = self.factor()
            if not isinstance(exponent, Const):
                raise ExprSyntaxError(
                    "exponent must fold to a rational constant", offset)
            return pow_(e, exponent.value)
        return e

    def base(self):
        kind, text, offset = self.advance()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            nxt_kind, nxt_text, _ = self.peek()
            if text in FUNCTIONS and nxt_kind == "op" and nxt_text == "(":
                self.advance()
                arg = self.expr()
                self._expect(")")
                return call(text, arg)
            if text not in self.table:
                raise UnknownSymbolError(text, offset)
            return Var(text, self.table.index(text))
        if kind == "op" and text == "(":
            e = self.expr()
            self._expect(")")
            return e
        raise ExprSyntaxError("expected a number, symbol or '('"
                              if kind != "end" else "unexpected end of input",
                              offset)

    def _expect(self, text):
        kind, got, offset = self.advance()
        if kind != "op" or got != text:
            raise ExprSyntaxError("expected %r" % text, offset)


def parse(source, table):
    """Parse ``source`` against the chart's symbol table.

    Raises :class:`ExprSyntaxError` with the character offset of the fault,
    or :class:`UnknownSymbolError` for undeclared identifiers.
    """
    return _Parser(source, table).parse()


def diff(expr, sym):
    """Exact partial derivative of an expression tree, folded."""
    return expr.diff(sym)


# ---------------------------------------------------------------------------
# fields


def eval_dual(f, x, seed):
    """Value and directional derivative of ``f`` at ``x`` along ``seed``.

    ``f`` is any callable accepting one point (sequence of coordinates);
    entries of ``x`` may themselves be dual numbers, in which case the
    returned pair carries one more derivative level.
    """
    z = [Dual(xi, si) for xi, si in zip(x, seed)]
    out = f(z)
    if isinstance(out, Dual):
        return out.a, out.b
    return out, 0.0


class ScalarField:
    """Real function on a chart, evaluated pointwise.

    Evaluation is pure: the same point always yields the same value.  The
    wrapped callable must use only arithmetic that dual numbers support
    (no branching on coordinate values), so directional derivatives come
    out exactly.
    """

    def __init__(self, fn, arity, name="field"):
        self._fn = fn
        self.arity = arity
        self.name = name

    @classmethod
    def from_expr(cls, expr, table, name=None):
        return cls(expr.ev, len(table), name if name is not None
                   else str(expr))

    def __call__(self, point):
        return self._fn(point)

    def eval_dual(self, point, seed):
        return eval_dual(self._fn, point, seed)

    def gradient(self, point):
        """All first partials, one dual sweep per coordinate."""
        out = []
        for k in range(self.arity):
            seed = [0.0] * self.arity
            seed[k] = 1.0
            out.append(self.eval_dual(point, seed)[1])
        return out

    def __repr__(self):
        return "ScalarField(%s)" % self.name


class FormField:
    """Evaluator for a 1-form (covector list) or 2-form (antisymmetric
    nested-list matrix) on a chart.

    Component convention for a 2-form W: W[i][j] = omega(e_i, e_j), and
    the contraction (i(v)omega)_j = sum_i v^i W[i][j].
    """

    def __init__(self, fn, dim, degree, name="form"):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self._fn = fn
        self.dim = dim
        self.degree = degree
        self.name = name

    def __call__(self, point):
        return self._fn(point)

    def directional(self, point, seed):
        """Directional derivative of every component along ``seed``."""
        z = [Dual(xi, si) for xi, si in zip(point, seed)]
        out = self._fn(z)
        if self.degree == 1:
            return [c.b if isinstance(c, Dual) else 0.0 for c in out]
        return [[c.b if isinstance(c, Dual) else 0.0 for c in row]
                for row in out]

    def partials(self, point):
        """partials[k] = derivative of all components along coordinate k."""
        out = []
        for k in range(self.dim):
            seed = [0.0] * self.dim
            seed[k] = 1.0
            out.append(self.directional(point, seed))
        return out

    def __repr__(self):
        return "FormField(%s, degree=%d)" % (self.name, self.degree)
