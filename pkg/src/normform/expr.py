"""Symbolic scalar expressions: AST, parser, canonical simplifier, calculus.

The expression language covers exactly what the structure algorithms and the
controller generators need: rational arithmetic over named variables plus the
elementary atoms sin, cos, exp, sqrt, abs (and sign, which only arises when
abs is differentiated).  Simplification normalizes every expression into a
fraction of two expanded multivariate polynomials over "atomic" bases
(variables, function applications, and sub-expressions that blew the
expansion budget), then cancels.  The canonical form is deterministic, so
render() is deterministic and structural equality is meaningful.

Not a general CAS: no integration, no trig rewriting beyond sin^2+cos^2 = 1,
no arbitrary-precision floats.
"""

from __future__ import annotations

import math
import numbers
import re
from fractions import Fraction

__all__ = [
    "Expr", "Const", "Var", "Add", "Mul", "Pow", "Func",
    "ParseError", "BudgetError", "EvalError",
    "parse", "render", "simplify", "diff", "subs", "evalf", "free_vars",
    "compile_exprs", "numeric_equivalent", "equivalent", "is_zero",
    "const", "var", "TERM_BUDGET", "KNOWN_FUNCS",
]

KNOWN_FUNCS = ("sin", "cos", "exp", "sqrt", "abs", "sign")

# Expansion cap: products over sums are expanded only while the term count
# stays under this budget; past it the subexpression is kept factored and
# treated as an opaque atom by the canonicalizer.
TERM_BUDGET = 10_000


class ParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class BudgetError(RuntimeError):
    """Raised internally when a polynomial operation would exceed the budget."""


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------

class Expr:
    __slots__ = ("_key", "_hash")

    def _compute_key(self):  # pragma: no cover - overridden
        raise NotImplementedError

    @property
    def key(self):
        k = self._key
        if k is None:
            k = self._compute_key()
            object.__setattr__(self, "_key", k)
        return k

    def __hash__(self):
        h = self._hash
        if h is None:
            h = hash(self.key)
            object.__setattr__(self, "_hash", h)
        return h

    def __eq__(self, other):
        return isinstance(other, Expr) and self.key == other.key

    def __repr__(self):
        return f"Expr({render(self)!r})"

    def __str__(self):
        return render(self)

    # Operator sugar builds raw nodes; canonicalization happens in simplify().
    def __add__(self, other):
        return Add((self, _as_expr(other)))

    def __radd__(self, other):
        return Add((_as_expr(other), self))

    def __sub__(self, other):
        return Add((self, Mul((Const(-1), _as_expr(other)))))

    def __rsub__(self, other):
        return Add((_as_expr(other), Mul((Const(-1), self))))

    def __mul__(self, other):
        return Mul((self, _as_expr(other)))

    def __rmul__(self, other):
        return Mul((_as_expr(other), self))

    def __truediv__(self, other):
        return Mul((self, Pow(_as_expr(other), -1)))

    def __rtruediv__(self, other):
        return Mul((_as_expr(other), Pow(self, -1)))

    def __pow__(self, n):
        return Pow(self, int(n))

    def __neg__(self):
        return Mul((Const(-1), self))


def _as_expr(v):
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction)):
        return Const(Fraction(v))
    if isinstance(v, float):
        return Const(v)
    if isinstance(v, numbers.Integral):
        return Const(Fraction(int(v)))
    if isinstance(v, numbers.Real):
        return Const(float(v))
    raise TypeError(f"cannot coerce {v!r} to Expr")


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        if isinstance(value, int):
            value = Fraction(value)
        if not isinstance(value, (Fraction, float)):
            raise TypeError(f"bad constant {value!r}")
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "_key", None)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _compute_key(self):
        if isinstance(self.value, Fraction):
            return f"0Q{self.value.numerator}/{self.value.denominator}"
        return f"0F{self.value!r}"


_NAME_SPLIT = re.compile(r"^(.*?)(\d*)$")


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "_key", None)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _compute_key(self):
        # Numeric suffixes order numerically: x2 sorts before x10.
        stem, digits = _NAME_SPLIT.match(self.name).groups()
        return f"1V{stem}\x00{int(digits) if digits else -1:012d}"


class Func(Expr):
    __slots__ = ("fname", "arg")

    def __init__(self, fname, arg):
        if fname not in KNOWN_FUNCS:
            raise ValueError(f"unknown function {fname!r}")
        object.__setattr__(self, "fname", fname)
        object.__setattr__(self, "arg", arg)
        object.__setattr__(self, "_key", None)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _compute_key(self):
        return f"2U{self.fname}({self.arg.key})"


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base, exp):
        if not isinstance(exp, int):
            raise TypeError("Pow exponent must be an int")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exp", exp)
        object.__setattr__(self, "_key", None)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _compute_key(self):
        return f"3P({self.base.key})^{self.exp:+012d}"


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        object.__setattr__(self, "factors", tuple(factors))
        object.__setattr__(self, "_key", None)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _compute_key(self):
        return "4M(" + ";".join(f.key for f in self.factors) + ")"


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "_key", None)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):
        raise AttributeError("Expr nodes are immutable")

    def _compute_key(self):
        return "5A(" + ";".join(t.key for t in self.terms) + ")"


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def const(v):
    return _as_expr(v)


def var(name):
    return Var(name)


# ---------------------------------------------------------------------------
# Tokenizer / parser (precedence climbing)
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            off = len(text) - len(stripped)
            raise ParseError(f"unexpected character {stripped[0]!r}", off)
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


_BIN_PREC = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_PREC = 25  # binds tighter than * but looser than ^, so -x^2 == -(x^2)


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, val, off = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", off)

    def parse_expr(self, min_prec=0):
        lhs = self.parse_atom()
        while True:
            kind, val, off = self.peek()
            if kind != "op" or val not in _BIN_PREC or _BIN_PREC[val] < min_prec:
                return lhs
            self.next()
            if val == "^":
                exp = self.parse_int_exponent()
                lhs = Pow(lhs, exp)
                continue
            rhs = self.parse_expr(_BIN_PREC[val] + 1)
            if val == "+":
                lhs = Add((lhs, rhs))
            elif val == "-":
                lhs = Add((lhs, Mul((Const(-1), rhs))))
            elif val == "*":
                lhs = Mul((lhs, rhs))
            elif val == "/":
                lhs = Mul((lhs, Pow(rhs, -1)))

    def parse_int_exponent(self):
        kind, val, off = self.next()
        neg = False
        if kind == "op" and val == "-":
            neg = True
            kind, val, off = self.next()
        if kind != "num" or not re.fullmatch(r"\d+", val):
            raise ParseError("exponent must be an integer literal", off)
        n = int(val)
        return -n if neg else n

    def parse_atom(self):
        kind, val, off = self.next()
        if kind == "num":
            if re.fullmatch(r"\d+", val):
                return Const(Fraction(int(val)))
            return Const(float(val))
        if kind == "name":
            k2, v2, _ = self.peek()
            if k2 == "op" and v2 == "(":
                if val not in KNOWN_FUNCS:
                    raise ParseError(f"unknown function {val!r}", off)
                self.next()
                arg = self.parse_expr()
                self.expect_op(")")
                return Func(val, arg)
            return Var(val)
        if kind == "op" and val == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        if kind == "op" and val == "-":
            return Mul((Const(-1), self.parse_expr(_UNARY_PREC)))
        if kind == "op" and val == "+":
            return self.parse_expr(_UNARY_PREC)
        raise ParseError(f"unexpected token {val!r}" if val else "unexpected end of input", off)


def parse(text):
    """Parse an expression string into a canonical (simplified) Expr."""
    p = _Parser(text)
    e = p.parse_expr()
    kind, val, off = p.peek()
    if kind != "end":
        raise ParseError(f"trailing input {val!r}", off)
    return simplify(e)


# ---------------------------------------------------------------------------
# Polynomial-fraction canonical form
#
# A polynomial is a dict {mono: coeff}; a monomial is a sorted tuple of
# (atom, exponent) pairs with atom an Expr (Var, Func, or an opaque
# budget-capped subexpression) and exponent a positive int.  Coefficients are
# Fraction (exact) or float (contagious).
# ---------------------------------------------------------------------------

_EMPTY_MONO = ()


def _cnum(a, b, op):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return op(a, b)
    return op(float(a), float(b))


def _poly_const(c):
    if c == 0:
        return {}
    return {_EMPTY_MONO: c}


def _poly_atom(atom, exp=1):
    return {((atom, exp),): Fraction(1)}


def _poly_add(p, q):
    if len(q) > len(p):
        p, q = q, p
    out = dict(p)
    for mono, c in q.items():
        nc = _cnum(out.get(mono, Fraction(0)), c, lambda x, y: x + y)
        if nc == 0:
            out.pop(mono, None)
        else:
            out[mono] = nc
    return out


def _poly_neg(p):
    return {m: -c for m, c in p.items()}


def _mono_mul(m1, m2):
    if not m1:
        return m2
    if not m2:
        return m1
    d = {}
    for a, e in m1:
        d[a] = d.get(a, 0) + e
    for a, e in m2:
        d[a] = d.get(a, 0) + e
    # |u|^2 = u^2 when the argument is itself an atomic base.
    for a in list(d):
        e = d[a]
        if (e >= 2 and isinstance(a, Func) and a.fname == "abs"
                and isinstance(a.arg, (Var, Func))):
            k = e - (e % 2)
            d[a] = e % 2
            d[a.arg] = d.get(a.arg, 0) + k
    return tuple(sorted(((a, e) for a, e in d.items() if e != 0),
                        key=lambda ae: ae[0].key))


def _poly_mul(p, q, budget):
    if not p or not q:
        return {}
    if len(p) * len(q) > 4 * budget:
        raise BudgetError
    out = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            c = _cnum(c1, c2, lambda x, y: x * y)
            nc = _cnum(out.get(m, Fraction(0)), c, lambda x, y: x + y)
            if nc == 0:
                out.pop(m, None)
            else:
                out[m] = nc
    if len(out) > budget:
        raise BudgetError
    return out


def _poly_pow(p, n, budget):
    out = _poly_const(Fraction(1))
    base = p
    while n:
        if n & 1:
            out = _poly_mul(out, base, budget)
        n >>= 1
        if n:
            base = _poly_mul(base, base, budget)
    return out


def _mono_key(m):
    return (-sum(e for _, e in m), tuple((a.key, -e) for a, e in m))


def _poly_lead(p):
    return min(p, key=_mono_key)


def _mono_divides(md, mn):
    dn = dict(mn)
    for a, e in md:
        if dn.get(a, 0) < e:
            return None
    for a, e in md:
        dn[a] -= e
    return tuple(sorted(((a, e) for a, e in dn.items() if e != 0),
                        key=lambda ae: ae[0].key))


def _poly_divide_exact(n, d):
    """Return n/d when d divides n exactly, else None."""
    if not d:
        return None
    if not n:
        return {}
    q = {}
    rem = dict(n)
    ld = _poly_lead(d)
    cd = d[ld]
    guard = 8 * (len(n) + len(d)) + 64
    while rem:
        guard -= 1
        if guard < 0:
            return None
        lm = _poly_lead(rem)
        qm = _mono_divides(ld, lm)
        if qm is None:
            return None
        qc = _cnum(rem[lm], cd, lambda x, y: x / y)
        q[qm] = _cnum(q.get(qm, Fraction(0)), qc, lambda x, y: x + y)
        for m2, c2 in d.items():
            m = _mono_mul(qm, m2)
            nc = _cnum(rem.get(m, Fraction(0)),
                       _cnum(qc, c2, lambda x, y: x * y),
                       lambda x, y: x - y)
            if nc == 0:
                rem.pop(m, None)
            else:
                rem[m] = nc
    return {m: c for m, c in q.items() if c != 0}


def _pythagorean_pass(p):
    """Rewrite c1*M*sin(u)^2 + c2*M*cos(u)^2 -> c1*M + (c2-c1)*M*cos(u)^2."""
    changed = True
    guard = 64
    while changed and guard:
        guard -= 1
        changed = False
        for mono, c1 in list(p.items()):
            hit = None
            for a, e in mono:
                if isinstance(a, Func) and a.fname == "sin" and e >= 2:
                    hit = a
                    break
            if hit is None:
                continue
            cosa = Func("cos", hit.arg)
            partner = _mono_mul(_mono_divides(((hit, 2),), mono),
                                ((cosa, 2),))
            if partner not in p or partner == mono:
                continue
            c2 = p[partner]
            base = _mono_divides(((hit, 2),), mono)
            p.pop(mono)
            p.pop(partner)
            for m, c in ((base, c1), (partner, _cnum(c2, c1, lambda x, y: x - y))):
                nc = _cnum(p.get(m, Fraction(0)), c, lambda x, y: x + y)
                if nc == 0:
                    p.pop(m, None)
                else:
                    p[m] = nc
            changed = True
            break
    return p


def _frac_cancel(num, den):
    num = _pythagorean_pass(dict(num))
    den = _pythagorean_pass(dict(den))
    if not num:
        return {}, _poly_const(Fraction(1))
    # Common monomial content.
    def content(p):
        it = iter(p)
        first = dict(next(it))
        for m in it:
            dm = dict(m)
            for a in list(first):
                e = min(first[a], dm.get(a, 0))
                if e <= 0:
                    del first[a]
                else:
                    first[a] = e
            if not first:
                break
        return first
    cn, cd = content(num), content(den)
    common = {a: min(e, cd.get(a, 0)) for a, e in cn.items() if cd.get(a, 0) > 0}
    if common:
        cm = tuple(sorted(common.items(), key=lambda ae: ae[0].key))
        num = {_mono_divides(cm, m): c for m, c in num.items()}
        den = {_mono_divides(cm, m): c for m, c in den.items()}
    # Exact division both ways.
    if den != _poly_const(Fraction(1)):
        q = _poly_divide_exact(num, den)
        if q is not None:
            return q, _poly_const(Fraction(1))
        q = _poly_divide_exact(den, num)
        if q is not None and q:
            return _poly_const(Fraction(1)), q
    # Normalize: leading denominator coefficient 1.
    ld = den[_poly_lead(den)]
    if ld != 1:
        den = {m: _cnum(c, ld, lambda x, y: x / y) for m, c in den.items()}
        num = {m: _cnum(c, ld, lambda x, y: x / y) for m, c in num.items()}
    return num, den


class _Frac:
    __slots__ = ("num", "den")

    def __init__(self, num, den):
        self.num = num
        self.den = den


def _frac_add(f1, f2, budget):
    if f1.den == f2.den:
        return _Frac(_poly_add(f1.num, f2.num), f1.den)
    num = _poly_add(_poly_mul(f1.num, f2.den, budget),
                    _poly_mul(f2.num, f1.den, budget))
    den = _poly_mul(f1.den, f2.den, budget)
    num, den = _frac_cancel(num, den)
    return _Frac(num, den)


def _frac_mul(f1, f2, budget):
    num = _poly_mul(f1.num, f2.num, budget)
    den = _poly_mul(f1.den, f2.den, budget)
    num, den = _frac_cancel(num, den)
    return _Frac(num, den)


def _frac_inv(f):
    if not f.num:
        raise ZeroDivisionError("division by symbolically zero expression")
    num, den = _frac_cancel(f.den, f.num)
    return _Frac(num, den)


def _to_frac(e, budget):
    if isinstance(e, Const):
        return _Frac(_poly_const(e.value), _poly_const(Fraction(1)))
    if isinstance(e, Var):
        return _Frac(_poly_atom(e), _poly_const(Fraction(1)))
    if isinstance(e, Func):
        arg = simplify(e.arg, budget)
        if isinstance(arg, Const):
            folded = _fold_func(e.fname, arg.value)
            if folded is not None:
                return _Frac(_poly_const(folded), _poly_const(Fraction(1)))
        return _Frac(_poly_atom(Func(e.fname, arg)), _poly_const(Fraction(1)))
    if isinstance(e, Add):
        acc = _Frac({}, _poly_const(Fraction(1)))
        for t in e.terms:
            acc = _frac_add(acc, _to_frac(t, budget), budget)
        return acc
    if isinstance(e, Mul):
        acc = _Frac(_poly_const(Fraction(1)), _poly_const(Fraction(1)))
        for t in e.factors:
            acc = _frac_mul(acc, _to_frac(t, budget), budget)
        return acc
    if isinstance(e, Pow):
        if e.exp == 0:
            return _Frac(_poly_const(Fraction(1)), _poly_const(Fraction(1)))
        if isinstance(e.base, Func) and e.base.fname == "abs" and e.exp % 2 == 0:
            return _to_frac(Pow(e.base.arg, e.exp), budget)
        f = _to_frac(e.base, budget)
        n = abs(e.exp)
        try:
            num = _poly_pow(f.num, n, budget)
            den = _poly_pow(f.den, n, budget)
        except BudgetError:
            base = _frac_to_expr(f)
            num = _poly_atom(base, n)
            den = _poly_const(Fraction(1))
        g = _Frac(*_frac_cancel(num, den))
        return _frac_inv(g) if e.exp < 0 else g
    raise TypeError(f"unknown node {e!r}")


def _fold_func(fname, value):
    """Fold function-of-constant where the result is exact."""
    if fname == "abs":
        return abs(value)
    if fname == "sign":
        return Fraction((value > 0) - (value < 0))
    if value == 0 and fname in ("sin", "sqrt"):
        return Fraction(0)
    if value == 0 and fname in ("cos", "exp"):
        return Fraction(1)
    if isinstance(value, float):
        try:
            return {"sin": math.sin, "cos": math.cos, "exp": math.exp,
                    "sqrt": math.sqrt}[fname](value)
        except ValueError:
            return None
    return None


def _mono_to_expr(mono, coeff):
    factors = []
    if coeff != 1 or not mono:
        factors.append(Const(coeff))
    for atom, exp in mono:
        factors.append(atom if exp == 1 else Pow(atom, exp))
    if len(factors) == 1:
        return factors[0]
    return Mul(tuple(factors))


def _poly_to_expr(p):
    if not p:
        return ZERO
    terms = [_mono_to_expr(m, c) for m, c in p.items()]
    terms.sort(key=lambda t: t.key)
    if len(terms) == 1:
        return terms[0]
    return Add(tuple(terms))


def _frac_to_expr(f):
    num = _poly_to_expr(f.num)
    if f.den == _poly_const(Fraction(1)):
        return num
    den = _poly_to_expr(f.den)
    if num == ONE:
        return Pow(den, -1)
    return Mul((num, Pow(den, -1)))


def simplify(e, budget=None):
    """Canonicalize an expression.

    Idempotent: simplify(simplify(e)) is structurally equal to simplify(e).
    Expansion stops at the term budget; capped subexpressions stay factored.
    """
    e = _as_expr(e)
    if budget is None:
        budget = TERM_BUDGET
    try:
        f = _to_frac(e, budget)
        f = _Frac(*_frac_cancel(f.num, f.den))
        return _frac_to_expr(f)
    except BudgetError:
        # Keep the tree with simplified children; callers fall back to the
        # randomized numeric equivalence test for equality on such values.
        if isinstance(e, Add):
            return Add(tuple(simplify(t, budget) for t in e.terms))
        if isinstance(e, Mul):
            return Mul(tuple(simplify(t, budget) for t in e.factors))
        if isinstance(e, Pow):
            return Pow(simplify(e.base, budget), e.exp)
        return e


def is_zero(e):
    return simplify(e) == ZERO


# ---------------------------------------------------------------------------
# Calculus / substitution / evaluation
# ---------------------------------------------------------------------------

def _diff_raw(e, name):
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == name else ZERO
    if isinstance(e, Add):
        return Add(tuple(_diff_raw(t, name) for t in e.terms))
    if isinstance(e, Mul):
        terms = []
        fs = e.factors
        for i in range(len(fs)):
            terms.append(Mul(fs[:i] + (_diff_raw(fs[i], name),) + fs[i + 1:]))
        return Add(tuple(terms))
    if isinstance(e, Pow):
        if e.exp == 0:
            return ZERO
        return Mul((Const(e.exp), Pow(e.base, e.exp - 1), _diff_raw(e.base, name)))
    if isinstance(e, Func):
        inner = _diff_raw(e.arg, name)
        u = e.arg
        if e.fname == "sin":
            outer = Func("cos", u)
        elif e.fname == "cos":
            outer = Mul((Const(-1), Func("sin", u)))
        elif e.fname == "exp":
            outer = Func("exp", u)
        elif e.fname == "sqrt":
            outer = Mul((Const(Fraction(1, 2)), Pow(Func("sqrt", u), -1)))
        elif e.fname == "abs":
            # d|u|/du = sign(u); defined as 0 at u = 0 (documented caveat).
            outer = Func("sign", u)
        else:  # sign: derivative 0 almost everywhere
            outer = ZERO
        return Mul((outer, inner))
    raise TypeError(f"unknown node {e!r}")


def diff(e, name):
    """Exact partial derivative with respect to the named variable."""
    if isinstance(name, Var):
        name = name.name
    return simplify(_diff_raw(_as_expr(e), name))


def _subs_raw(e, mapping):
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Add):
        return Add(tuple(_subs_raw(t, mapping) for t in e.terms))
    if isinstance(e, Mul):
        return Mul(tuple(_subs_raw(t, mapping) for t in e.factors))
    if isinstance(e, Pow):
        return Pow(_subs_raw(e.base, mapping), e.exp)
    if isinstance(e, Func):
        return Func(e.fname, _subs_raw(e.arg, mapping))
    raise TypeError(f"unknown node {e!r}")


def subs(e, mapping):
    """Substitute variables by expressions (keys are names) and simplify."""
    mapping = {k: _as_expr(v) for k, v in mapping.items()}
    return simplify(_subs_raw(_as_expr(e), mapping))


def free_vars(e):
    """Variable names appearing in the canonical form (so x1-x1 reports none)."""
    out = set()

    def walk(n):
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, Add):
            for t in n.terms:
                walk(t)
        elif isinstance(n, Mul):
            for t in n.factors:
                walk(t)
        elif isinstance(n, Pow):
            walk(n.base)
        elif isinstance(n, Func):
            walk(n.arg)

    walk(simplify(e))
    return out


_MATH_ENV = {
    "sin": math.sin, "cos": math.cos, "exp": math.exp, "sqrt": math.sqrt,
    "abs": abs, "sign": lambda v: (v > 0) - (v < 0),
}


def evalf(e, env):
    """Evaluate at a point given as {name: float}.  Raises EvalError when the
    expression is undefined there (division by zero, sqrt of a negative)."""
    def ev(n):
        if isinstance(n, Const):
            return float(n.value)
        if isinstance(n, Var):
            try:
                return float(env[n.name])
            except KeyError:
                raise EvalError(f"unbound variable {n.name!r}") from None
        if isinstance(n, Add):
            return sum(ev(t) for t in n.terms)
        if isinstance(n, Mul):
            out = 1.0
            for t in n.factors:
                out *= ev(t)
            return out
        if isinstance(n, Pow):
            b = ev(n.base)
            if n.exp < 0 and b == 0.0:
                raise EvalError("division by zero")
            return b ** n.exp
        if isinstance(n, Func):
            a = ev(n.arg)
            if n.fname == "sqrt" and a < 0:
                raise EvalError("sqrt of negative value")
            return _MATH_ENV[n.fname](a)
        raise TypeError(f"unknown node {n!r}")

    return ev(_as_expr(e))


# ---------------------------------------------------------------------------
# Vectorized compilation (numpy) for simulation and sampling
# ---------------------------------------------------------------------------

def _pycode(e, names):
    if isinstance(e, Const):
        if isinstance(e.value, Fraction) and e.value.denominator == 1:
            return f"({e.value.numerator})"
        return f"({float(e.value)!r})"
    if isinstance(e, Var):
        try:
            return f"_a[{names.index(e.name)}]"
        except ValueError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Add):
        return "(" + "+".join(_pycode(t, names) for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(" + "*".join(_pycode(t, names) for t in e.factors) + ")"
    if isinstance(e, Pow):
        if e.exp < 0:
            return f"({_pycode(e.base, names)}**({float(e.exp)}))"
        return f"({_pycode(e.base, names)}**{e.exp})"
    if isinstance(e, Func):
        fn = {"sin": "_np.sin", "cos": "_np.cos", "exp": "_np.exp",
              "sqrt": "_np.sqrt", "abs": "_np.abs", "sign": "_np.sign"}[e.fname]
        return f"{fn}({_pycode(e.arg, names)})"
    raise TypeError(f"unknown node {e!r}")


def compile_exprs(exprs, names):
    """Compile a list of expressions into f(args) -> list of arrays.

    `args` is a sequence of scalars or equally-shaped numpy arrays, one per
    name; evaluation broadcasts elementwise.
    """
    import numpy as _np

    body = "[" + ",".join(_pycode(_as_expr(e), list(names)) for e in exprs) + "]"
    src = f"lambda _a, _np=_np: {body}"
    return eval(src, {"_np": _np})  # noqa: S307 - generated from our own AST


class _ScalarMath:
    """math-module shim tolerating domain/overflow errors via NaN/inf."""

    @staticmethod
    def sin(v):
        return math.sin(v)

    @staticmethod
    def cos(v):
        return math.cos(v)

    @staticmethod
    def exp(v):
        try:
            return math.exp(v)
        except OverflowError:
            return math.inf

    @staticmethod
    def sqrt(v):
        return math.sqrt(v) if v >= 0 else math.nan

    @staticmethod
    def abs(v):
        return abs(v)

    @staticmethod
    def sign(v):
        return float((v > 0) - (v < 0))


def compile_exprs_scalar(exprs, names):
    """Scalar float compilation (much faster than numpy for single runs)."""
    body = "[" + ",".join(_pycode(_as_expr(e), list(names)) for e in exprs) + "]"
    src = f"lambda _a, _np=_sm: {body}"
    return eval(src, {"_sm": _ScalarMath})  # noqa: S307


# ---------------------------------------------------------------------------
# Randomized equivalence
# ---------------------------------------------------------------------------

def _sample_env(namelist, rng, lo=-0.9, hi=0.9):
    return {n: rng.uniform(lo, hi) for n in namelist}


def numeric_equivalent(e1, e2, seed=0, points=32, tol=1e-9, box=None,
                       extra_vars=()):
    """Values agree within tol at `points` seeded random points.

    Points where either expression is undefined or huge are re-drawn, so
    expressions with denominators are compared on their common domain.
    """
    import numpy as _np

    e1 = _as_expr(e1)
    e2 = _as_expr(e2)
    names = sorted(free_vars(e1) | free_vars(e2) | set(extra_vars))
    rng = _np.random.default_rng(seed)
    got = 0
    attempts = 0
    while got < points:
        attempts += 1
        if attempts > 40 * points:
            raise EvalError("could not find enough valid sample points")
        if box:
            env = {n: rng.uniform(*box.get(n, (-0.9, 0.9))) for n in names}
        else:
            env = _sample_env(names, rng)
        try:
            v1 = evalf(e1, env)
            v2 = evalf(e2, env)
        except EvalError:
            continue
        if not (math.isfinite(v1) and math.isfinite(v2)):
            continue
        if abs(v1) > 1e12 or abs(v2) > 1e12:
            continue
        if abs(v1 - v2) > tol * (1.0 + max(abs(v1), abs(v2))):
            return False
        got += 1
    return True


def equivalent(e1, e2, seed=0, points=32, tol=1e-9, box=None):
    """Equality test used by cross-module assertions: numeric agreement at 32
    seeded points AND (canonical forms match OR the difference simplifies
    to 0)."""
    s1 = simplify(e1)
    s2 = simplify(e2)
    structural = s1 == s2 or is_zero(s1 - s2)
    return structural and numeric_equivalent(s1, s2, seed=seed, points=points,
                                             tol=tol, box=box)


# ---------------------------------------------------------------------------
# Rendering (deterministic, parses back to the same canonical AST)
# ---------------------------------------------------------------------------

def _render_const(v):
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(abs(v.numerator)), v < 0
        return f"{abs(v.numerator)}/{v.denominator}", v < 0
    return repr(abs(v)), v < 0


def _render_factor(e):
    """Render a multiplicand, parenthesizing sums."""
    if isinstance(e, Add):
        return f"({_render(e)})"
    if isinstance(e, Const):
        s, neg = _render_const(e.value)
        if neg or "/" in s:
            return f"({'-' if neg else ''}{s})"
        return s
    return _render(e)


def _render_mul(e):
    num = []
    den = []
    coeff = None
    for f in e.factors:
        if isinstance(f, Const):
            coeff = f
        elif isinstance(f, Pow) and f.exp < 0:
            den.append(f.base if f.exp == -1 else Pow(f.base, -f.exp))
        else:
            num.append(f)
    parts = []
    neg = False
    if coeff is not None:
        s, neg = _render_const(coeff.value)
        if s != "1" or not num:
            parts.append(s)
    parts.extend(_render_factor(f) for f in num)
    out = "*".join(parts) if parts else "1"
    for d in den:
        dd = _render_factor(d)
        if isinstance(d, Pow) or not isinstance(d, (Var, Func, Const)):
            dd = f"({_render(d)})" if not dd.startswith("(") else dd
        out += f"/{dd}"
    return ("-" if neg else "") + out


def _render(e):
    if isinstance(e, Const):
        s, neg = _render_const(e.value)
        return ("-" if neg else "") + s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.fname}({_render(e.arg)})"
    if isinstance(e, Pow):
        base = _render(e.base)
        if not isinstance(e.base, (Var, Func)):
            base = f"({base})"
        if e.exp < 0:
            return f"1/{base}" if e.exp == -1 else f"1/{base}^{-e.exp}"
        return f"{base}^{e.exp}"
    if isinstance(e, Mul):
        return _render_mul(e)
    if isinstance(e, Add):
        out = _render_term(e.terms[0])
        for t in e.terms[1:]:
            s = _render_term(t)
            if s.startswith("-"):
                out += " - " + s[1:]
            else:
                out += " + " + s
        return out
    raise TypeError(f"unknown node {e!r}")


def _render_term(e):
    if isinstance(e, Mul):
        return _render_mul(e)
    return _render(e)


def render(e):
    """Deterministic text form of a canonical expression; parse(render(e))
    returns a structurally equal AST."""
    return _render(simplify(e))
