"""Differentiable scalar expression trees over state and parameter variables.

Expressions hold the entries of the drift f(x), the regressor rows of
Delta(x) and the input columns of B(x).  They support exact point
evaluation and exact first partial derivatives via forward-mode
differentiation, which is all the Jacobian assembly downstream needs.

Variable conventions: state variables are indexed 0..n-1, parameter
variables 0..p-1.  In the textual formula syntax they are spelled
``x1..xn`` and ``th1..thp``.
"""

import math

_KINDS = ("const", "state", "param", "sum", "prod", "ipow", "tanh", "sin", "cos",
          "exp")


class ExpressionError(ValueError):
    pass


class Expression:
    """Immutable expression tree node.

    Build trees with the module-level constructors (:func:`const`,
    :func:`state`, :func:`param`) and the overloaded arithmetic
    operators.  Trees never mutate after construction, so they are safe
    for concurrent read-only evaluation.
    """

    __slots__ = ("kind", "children", "value", "index", "power")

    def __init__(self, kind, children=(), value=None, index=None, power=None):
        if kind not in _KINDS:
            raise ExpressionError("unknown node kind %r" % (kind,))
        if kind in ("state", "param"):
            if not isinstance(index, int) or index < 0:
                raise ExpressionError("variable index must be a non-negative int")
        if kind == "ipow":
            if not isinstance(power, int) or power < 0:
                raise ExpressionError("power must be a non-negative int")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "children", tuple(children))
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "power", power)

    def __setattr__(self, name, val):
        raise AttributeError("Expression is immutable")

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return Expression("sum", (self, _as_expr(other)))

    __radd__ = __add__

    def __mul__(self, other):
        return Expression("prod", (self, _as_expr(other)))

    __rmul__ = __mul__

    def __neg__(self):
        return Expression("prod", (const(-1.0), self))

    def __sub__(self, other):
        return self + (-_as_expr(other))

    def __rsub__(self, other):
        return _as_expr(other) + (-self)

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ExpressionError("only non-negative integer powers are supported")
        return Expression("ipow", (self,), power=k)

    # -- queries ---------------------------------------------------------
    def max_indices(self):
        """(max state index, max param index) referenced, or -1 if unused."""
        mx, mp = -1, -1
        stack = [self]
        while stack:
            e = stack.pop()
            if e.kind == "state":
                mx = max(mx, e.index)
            elif e.kind == "param":
                mp = max(mp, e.index)
            stack.extend(e.children)
        return mx, mp

    def uses_params(self):
        return self.max_indices()[1] >= 0

    # -- evaluation ------------------------------------------------------
    def eval(self, x, theta):
        """Exact arithmetic evaluation at state ``x`` and parameters ``theta``."""
        k = self.kind
        if k == "const":
            return self.value
        if k == "state":
            return float(x[self.index])
        if k == "param":
            return float(theta[self.index])
        if k == "sum":
            return sum(c.eval(x, theta) for c in self.children)
        if k == "prod":
            out = 1.0
            for c in self.children:
                out *= c.eval(x, theta)
            return out
        if k == "ipow":
            return self.children[0].eval(x, theta) ** self.power
        v = self.children[0].eval(x, theta)
        if k == "tanh":
            return math.tanh(v)
        if k == "sin":
            return math.sin(v)
        if k == "exp":
            return math.exp(v)
        return math.cos(v)

    def eval_with_partials(self, x, theta):
        """Forward-mode value and gradient over the n+p variables.

        Returns ``(value, grad)`` where ``grad`` is a list of length
        ``len(x) + len(theta)``, states first.
        """
        n = len(x)
        nv = n + len(theta)
        return self._fwd(x, theta, n, nv)

    def _fwd(self, x, theta, n, nv):
        k = self.kind
        if k == "const":
            return self.value, [0.0] * nv
        if k == "state":
            g = [0.0] * nv
            g[self.index] = 1.0
            return float(x[self.index]), g
        if k == "param":
            g = [0.0] * nv
            g[n + self.index] = 1.0
            return float(theta[self.index]), g
        if k == "sum":
            val, grad = 0.0, [0.0] * nv
            for c in self.children:
                v, g = c._fwd(x, theta, n, nv)
                val += v
                for i in range(nv):
                    grad[i] += g[i]
            return val, grad
        if k == "prod":
            val, grad = 1.0, [0.0] * nv
            for c in self.children:
                v, g = c._fwd(x, theta, n, nv)
                for i in range(nv):
                    grad[i] = grad[i] * v + g[i] * val
                val *= v
            return val, grad
        v, g = self.children[0]._fwd(x, theta, n, nv)
        if k == "ipow":
            p = self.power
            val = v**p
            d = 0.0 if p == 0 else p * v ** (p - 1)
            return val, [d * gi for gi in g]
        if k == "tanh":
            t = math.tanh(v)
            d = 1.0 - t * t
            return t, [d * gi for gi in g]
        if k == "sin":
            return math.sin(v), [math.cos(v) * gi for gi in g]
        if k == "exp":
            ev = math.exp(v)
            return ev, [ev * gi for gi in g]
        return math.cos(v), [-math.sin(v) * gi for gi in g]

    def __repr__(self):
        k = self.kind
        if k == "const":
            return repr(self.value)
        if k == "state":
            return "x%d" % (self.index + 1)
        if k == "param":
            return "th%d" % (self.index + 1)
        if k == "sum":
            return "(" + " + ".join(map(repr, self.children)) + ")"
        if k == "prod":
            return "(" + "*".join(map(repr, self.children)) + ")"
        if k == "ipow":
            return "%r^%d" % (self.children[0], self.power)
        return "%s(%r)" % (k, self.children[0])


def _as_expr(v):
    if isinstance(v, Expression):
        return v
    if isinstance(v, (int, float)):
        return const(float(v))
    raise ExpressionError("cannot coerce %r to Expression" % (v,))


def const(v):
    return Expression("const", value=float(v))


def state(i):
    """State variable x_{i+1} (zero-based index)."""
    return Expression("state", index=i)


def param(i):
    """Parameter variable theta_{i+1} (zero-based index)."""
    return Expression("param", index=i)


def tanh(e):
    return Expression("tanh", (_as_expr(e),))


def sin(e):
    return Expression("sin", (_as_expr(e),))


def cos(e):
    return Expression("cos", (_as_expr(e),))


def exp(e):
    return Expression("exp", (_as_expr(e),))


# ---------------------------------------------------------------------------
# Formula parser: infix syntax with +, -, *, ^, parentheses, tanh/sin/cos,
# variables x1..xn and th1..thp.  Unknown identifiers and out-of-range
# variable indices are rejected at construction time.
# ---------------------------------------------------------------------------

_FUNCS = {"tanh": tanh, "sin": sin, "cos": cos, "exp": exp}


class _Tokenizer:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.tok = None
        self.advance()

    def advance(self):
        s, i = self.text, self.pos
        while i < len(s) and s[i].isspace():
            i += 1
        if i >= len(s):
            self.tok, self.pos = ("end", None), i
            return
        c = s[i]
        if c in "+-*^()":
            self.tok, self.pos = ("op", c), i + 1
            return
        if c.isdigit() or c == ".":
            j = i
            while j < len(s) and (s[j].isdigit() or s[j] in ".eE" or (s[j] in "+-" and s[j - 1] in "eE")):
                j += 1
            self.tok, self.pos = ("num", float(s[i:j])), j
            return
        if c.isalpha():
            j = i
            while j < len(s) and (s[j].isalnum() or s[j] == "_"):
                j += 1
            self.tok, self.pos = ("name", s[i:j]), j
            return
        raise ExpressionError("unexpected character %r at position %d" % (c, i))


def parse_formula(text, n, p):
    """Parse an infix formula into an Expression, checking variable bounds.

    ``n`` and ``p`` are the declared state and parameter dimensions;
    any identifier other than x1..xn, th1..thp or a known function name
    raises :class:`ExpressionError`.
    """
    tz = _Tokenizer(text)
    e = _parse_sum(tz, n, p)
    if tz.tok[0] != "end":
        raise ExpressionError("trailing input at position %d in %r" % (tz.pos, text))
    return e


def _parse_sum(tz, n, p):
    neg = False
    if tz.tok == ("op", "-"):
        neg = True
        tz.advance()
    elif tz.tok == ("op", "+"):
        tz.advance()
    e = _parse_product(tz, n, p)
    if neg:
        e = -e
    while tz.tok in (("op", "+"), ("op", "-")):
        sub = tz.tok[1] == "-"
        tz.advance()
        rhs = _parse_product(tz, n, p)
        e = e - rhs if sub else e + rhs
    return e


def _parse_product(tz, n, p):
    e = _parse_power(tz, n, p)
    while tz.tok == ("op", "*"):
        tz.advance()
        e = e * _parse_power(tz, n, p)
    return e


def _parse_power(tz, n, p):
    base = _parse_atom(tz, n, p)
    if tz.tok == ("op", "^"):
        tz.advance()
        kind, val = tz.tok
        if kind != "num" or val != int(val):
            raise ExpressionError("exponent must be a non-negative integer literal")
        tz.advance()
        return base ** int(val)
    return base


def _parse_atom(tz, n, p):
    kind, val = tz.tok
    if kind == "num":
        tz.advance()
        return const(val)
    if kind == "op" and val == "(":
        tz.advance()
        e = _parse_sum(tz, n, p)
        if tz.tok != ("op", ")"):
            raise ExpressionError("missing closing parenthesis")
        tz.advance()
        return e
    if kind == "op" and val == "-":
        tz.advance()
        return -_parse_atom(tz, n, p)
    if kind == "name":
        tz.advance()
        if val in _FUNCS:
            if tz.tok != ("op", "("):
                raise ExpressionError("%s must be called with parentheses" % val)
            tz.advance()
            arg = _parse_sum(tz, n, p)
            if tz.tok != ("op", ")"):
                raise ExpressionError("missing closing parenthesis after %s(" % val)
            tz.advance()
            return _FUNCS[val](arg)
        if val.startswith("th") and val[2:].isdigit():
            i = int(val[2:]) - 1
            if not 0 <= i < p:
                raise ExpressionError("parameter %s out of range (p=%d)" % (val, p))
            return param(i)
        if val.startswith("x") and val[1:].isdigit():
            i = int(val[1:]) - 1
            if not 0 <= i < n:
                raise ExpressionError("state %s out of range (n=%d)" % (val, n))
            return state(i)
        raise ExpressionError("unknown identifier %r" % val)
    raise ExpressionError("unexpected token %r" % ((kind, val),))
