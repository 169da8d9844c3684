"""Vector fields, symbolic matrices, and the Lie-calculus primitives.

Everything here is exact symbolic computation on top of expr.Expr; the only
numeric operation is the sampled involutivity test, which compares span
ranks at user-supplied points.
"""

from __future__ import annotations

import numpy as np

from .expr import (EvalError, compile_exprs, diff, evalf, free_vars,
                   simplify, subs, const)

__all__ = ["VectorField", "SymMatrix", "jacobian", "lie_derivative",
           "lie_bracket", "ad_power", "involutive"]


class SymMatrix:
    """Rectangular grid of simplified expressions."""

    def __init__(self, rows):
        rows = [list(simplify(e) for e in r) for r in rows]
        if rows:
            w = len(rows[0])
            for r in rows:
                if len(r) != w:
                    raise ValueError("ragged SymMatrix")
        self.rows = rows

    @property
    def shape(self):
        if not self.rows:
            return (0, 0)
        return (len(self.rows), len(self.rows[0]))

    def __getitem__(self, ij):
        i, j = ij
        return self.rows[i][j]

    def __iter__(self):
        return iter(self.rows)

    def __eq__(self, other):
        return isinstance(other, SymMatrix) and self.rows == other.rows

    def __repr__(self):
        return f"SymMatrix({[[str(e) for e in r] for r in self.rows]})"

    def row(self, i):
        return list(self.rows[i])

    def col(self, j):
        return [r[j] for r in self.rows]

    def transpose(self):
        n, m = self.shape
        return SymMatrix([[self.rows[i][j] for i in range(n)] for j in range(m)])

    def matmul(self, other):
        n, k = self.shape
        k2, m = other.shape
        if k != k2:
            raise ValueError(f"shape mismatch {self.shape} @ {other.shape}")
        out = []
        for i in range(n):
            row = []
            for j in range(m):
                acc = const(0)
                for l in range(k):
                    acc = acc + self.rows[i][l] * other.rows[l][j]
                row.append(acc)
            out.append(row)
        return SymMatrix(out)

    def __matmul__(self, other):
        return self.matmul(other)

    def __add__(self, other):
        if self.shape != other.shape:
            raise ValueError("shape mismatch")
        return SymMatrix([[a + b for a, b in zip(r1, r2)]
                          for r1, r2 in zip(self.rows, other.rows)])

    def __sub__(self, other):
        if self.shape != other.shape:
            raise ValueError("shape mismatch")
        return SymMatrix([[a - b for a, b in zip(r1, r2)]
                          for r1, r2 in zip(self.rows, other.rows)])

    def scale(self, s):
        return SymMatrix([[s * e for e in r] for r in self.rows])

    def vstack(self, other):
        if not self.rows:
            return SymMatrix(other.rows)
        if not other.rows:
            return SymMatrix(self.rows)
        if self.shape[1] != other.shape[1]:
            raise ValueError("column mismatch in vstack")
        return SymMatrix(self.rows + other.rows)

    def subs(self, mapping):
        return SymMatrix([[subs(e, mapping) for e in r] for r in self.rows])

    def eval_at(self, env):
        n, m = self.shape
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                out[i, j] = evalf(self.rows[i][j], env)
        return out

    def is_constant(self):
        return all(not free_vars(e) for r in self.rows for e in r)

    def to_numpy_constant(self):
        return self.eval_at({})

    @staticmethod
    def from_numpy(a):
        a = np.asarray(a)
        if a.ndim != 2:
            raise ValueError("expected 2-D array")

        def conv(v):
            if float(v).is_integer():
                return const(int(v))
            return const(float(v))

        return SymMatrix([[conv(v) for v in row] for row in a])

    def det(self):
        n, m = self.shape
        if n != m:
            raise ValueError("determinant of non-square matrix")
        if n == 0:
            return const(1)
        if n == 1:
            return self.rows[0][0]
        acc = const(0)
        for j in range(n):
            minor = SymMatrix([r[:j] + r[j + 1:] for r in self.rows[1:]])
            term = self.rows[0][j] * minor.det()
            acc = acc + (term if j % 2 == 0 else -term)
        return simplify(acc)

    def inverse(self, max_size=4):
        """Symbolic inverse by adjugate; guarded against blowup."""
        n, m = self.shape
        if n != m:
            raise ValueError("inverse of non-square matrix")
        if n > max_size:
            raise ValueError(f"symbolic inverse beyond supported size {max_size}")
        d = self.det()
        if simplify(d) == const(0):
            raise ValueError("symbolically singular matrix")
        if n == 1:
            return SymMatrix([[const(1) / d]])
        cof = []
        for i in range(n):
            row = []
            for j in range(n):
                minor = SymMatrix([r[:j] + r[j + 1:]
                                   for k, r in enumerate(self.rows) if k != i])
                c = minor.det()
                row.append(c if (i + j) % 2 == 0 else -c)
            cof.append(row)
        adj = SymMatrix(cof).transpose()
        return SymMatrix([[e / d for e in r] for r in adj.rows])

    @staticmethod
    def identity(n):
        return SymMatrix([[const(1 if i == j else 0) for j in range(n)]
                          for i in range(n)])


class VectorField:
    """Column vector field over an ordered list of state names."""

    def __init__(self, components, state_names):
        self.states = list(state_names)
        self.components = [simplify(c) for c in components]
        if len(self.components) != len(self.states):
            raise ValueError("component count must equal state count")
        stray = set().union(*(free_vars(c) for c in self.components)) \
            - set(self.states) if self.components else set()
        if stray:
            raise ValueError(f"components reference non-state variables {sorted(stray)}")

    def __len__(self):
        return len(self.components)

    def __eq__(self, other):
        return (isinstance(other, VectorField) and self.states == other.states
                and self.components == other.components)

    def __repr__(self):
        return f"VectorField({[str(c) for c in self.components]}, states={self.states})"

    def as_column(self):
        return SymMatrix([[c] for c in self.components])

    def eval_at(self, env):
        return np.array([evalf(c, env) for c in self.components])

    def is_zero(self):
        return all(c == const(0) for c in self.components)


def jacobian(exprs, names):
    """Matrix of partials: entry (i, j) = d exprs[i] / d names[j]."""
    return SymMatrix([[diff(e, n) for n in names] for e in exprs])


def lie_derivative(f, lam):
    """L_f lambda = sum_i (d lambda/d x_i) f_i.

    `lam` may be a single Expr, a list of Expr (returns list), or a SymMatrix
    whose rows are differentiated row-wise (returns rows x m matrix when f is
    a list of vector fields packed as a SymMatrix of columns).
    """
    if isinstance(lam, SymMatrix):
        return SymMatrix([lie_derivative(f, list(r)) for r in lam.rows])
    if isinstance(lam, (list, tuple)):
        return [lie_derivative(f, e) for e in lam]
    acc = const(0)
    for name, fi in zip(f.states, f.components):
        acc = acc + diff(lam, name) * fi
    return simplify(acc)


def lie_derivative_cols(g_matrix, states, lam):
    """L_g of scalar/vector lam against an n x m matrix of input columns.

    Returns a row (list) for scalar lam, or a SymMatrix (p x m) for a list.
    """
    n, m = g_matrix.shape
    cols = [VectorField(g_matrix.col(j), states) for j in range(m)]
    if isinstance(lam, (list, tuple)):
        return SymMatrix([[lie_derivative(c, e) for c in cols] for e in lam])
    return [lie_derivative(c, lam) for c in cols]


def lie_bracket(f, g):
    """[f, g] = (dg/dx) f - (df/dx) g."""
    if f.states != g.states:
        raise ValueError("vector fields over different state lists")
    names = f.states
    jg = jacobian(g.components, names)
    jf = jacobian(f.components, names)
    fcol = f.as_column()
    gcol = g.as_column()
    out = (jg @ fcol) - (jf @ gcol)
    return VectorField([out[i, 0] for i in range(len(names))], names)


def ad_power(f, g, k):
    """ad^k_f g: k = 0 gives g, else [f, ad^{k-1}_f g]."""
    if k < 0:
        raise ValueError("ad power must be nonnegative")
    out = g
    for _ in range(k):
        out = lie_bracket(f, out)
    return out


def involutive(fields, points, tol=1e-8):
    """True iff at every sample the span of the fields already contains all
    pairwise Lie brackets (rank comparison under tol)."""
    if not fields:
        raise ValueError("need at least one vector field")
    if not points:
        raise ValueError("empty sample list")
    states = fields[0].states
    for f in fields[1:]:
        if f.states != states:
            raise ValueError("vector fields over different state lists")
    brackets = []
    for i in range(len(fields)):
        for j in range(i + 1, len(fields)):
            brackets.append(lie_bracket(fields[i], fields[j]))
    if all(b.is_zero() for b in brackets):
        return True
    fns = compile_exprs([c for f in fields for c in f.components], states)
    bns = compile_exprs([c for b in brackets for c in b.components], states)
    n = len(states)
    for pt in points:
        env = list(np.asarray(pt, dtype=float))
        try:
            base = np.array(fns(env)).reshape(len(fields), n).T
            ext = np.array(bns(env)).reshape(len(brackets), n).T
        except EvalError:
            continue
        if not (np.all(np.isfinite(base)) and np.all(np.isfinite(ext))):
            continue
        r1 = _num_rank(base, tol)
        r2 = _num_rank(np.hstack([base, ext]), tol)
        if r2 > r1:
            return False
    return True


def _num_rank(a, tol):
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > tol * max(1.0, float(s[0]))))
