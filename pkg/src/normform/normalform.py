"""Normal-form assembly, structural assumption checks, and zero dynamics.

Turns a StructureOutcome into explicit coordinates: integrator-chain
coordinates from the recorded R/S/Theta history, a complement completing the
chart, the input/output transformations, and the delta coupling table with
its sparsity law (couplings vanish above the feeding chain's length).
"""

from __future__ import annotations

import numpy as np

from .expr import (Var, const, diff, free_vars, is_zero,
                   numeric_equivalent, render, simplify, subs)
from .geom import SymMatrix, VectorField, involutive, jacobian, lie_bracket
from .structure import StructureError, _rank
from .sysmodel import DEFAULT_TOL

__all__ = ["NormalForm", "ZeroDynamicsReport", "build_normal_form",
           "check_assumption_B", "check_assumption_C", "check_assumption_D",
           "zero_dynamics", "solve_triangular"]


def _sel_product(outcome, i, j):
    """Row-selection product R_i S_{i-1} ... S_j (identity chain for j > i-1)."""
    sel = outcome.steps[i - 1].R
    for t in range(i - 1, j - 1, -1):
        sel = sel @ outcome.steps[t - 1].S
    return sel


def _theta_level(outcome, j):
    """Theta_{j-1}: the output map for j = 1, else step j-1's residue."""
    if j == 1:
        return [simplify(e) for e in outcome.system.h]
    return list(outcome.steps[j - 2].theta)


def _apply_rows(sel, exprs):
    out = []
    for row in sel:
        acc = const(0)
        for c, e in zip(row, exprs):
            if c:
                acc = acc + const(int(round(float(c)))) * e
        out.append(simplify(acc))
    return out


class NormalForm:
    def __init__(self, outcome):
        self.outcome = outcome
        self.system = outcome.system
        self.q = list(outcome.q)
        self.m_d = outcome.m_d
        self.n_d = outcome.n_d
        self.chains = []          # per chain: list of coordinate Exprs (in x)
        self.xi_names = []        # per chain: list of names "xi{i}_{j}"
        self.eta_exprs = []
        self.eta_names = []
        self.delta = {}           # (chain i, level j, chain l) -> Expr in x
        self.a = []               # per chain feedback drift rows
        self.b = None             # SymMatrix m_d x m
        self.gamma_id = None
        self.gamma_od = None
        self.gamma_ie = None
        self.gamma_oe = None
        self.f_e = []
        self.g_e = None           # SymMatrix (n-n_d) x (m-m_d)
        self.phi_cols = None      # SymMatrix (n-n_d) x m_d residue columns
        self.h_e = []
        self.upsilon = None
        self.warnings = []

    # -- coordinate maps ---------------------------------------------------

    def forward_names(self):
        return self.eta_names + [n for chain in self.xi_names for n in chain]

    def forward_exprs(self):
        return self.eta_exprs + [e for chain in self.chains for e in chain]

    def forward_map(self):
        return dict(zip(self.forward_names(), self.forward_exprs()))

    def chain_of(self, name):
        for i, chain in enumerate(self.xi_names):
            if name in chain:
                return i + 1, chain.index(name) + 1
        raise KeyError(name)

    def delta_entry(self, i, j, l):
        return self.delta.get((i, j, l), const(0))

    def inverse_map(self, xi_values=None):
        """Symbolic inverse x = x(eta, xi) by triangular elimination; xi
        coordinates may be pinned to expressions (e.g. 0 for zero dynamics).
        Returns None when no triangular solution exists."""
        eqs = []
        for name, e in zip(self.forward_names(), self.forward_exprs()):
            if xi_values is not None and name not in self.eta_names:
                rhs = xi_values.get(name, const(0))
            else:
                rhs = Var(name)
            eqs.append((e, rhs))
        return solve_triangular(eqs, self.system.states)

    def check_sparsity(self, seed=3, tol=1e-9):
        """(key law) couplings vanish below the feeding chain's length."""
        for (i, j, l), e in self.delta.items():
            if j < self.q[l - 1] and not numeric_equivalent(e, const(0), seed=seed,
                                                            tol=tol):
                return False
        return True


def _completion_rows(base_rows_np, candidates, need, tol):
    """Greedy rank completion: pick candidate rows (numpy) that extend the
    row space of base until `need` rows were added."""
    chosen = []
    cur = base_rows_np
    for idx, row in enumerate(candidates):
        if len(chosen) == need:
            break
        trial = np.vstack([cur, row[None, :]])
        if _rank(trial, tol) == cur.shape[0] + 1:
            chosen.append(idx)
            cur = trial
    return chosen if len(chosen) == need else None


def build_normal_form(system, outcome, phi_e=None, gamma_ie=None,
                      plan=None, tol=DEFAULT_TOL):
    """Assemble chain coordinates, complement, transformations, and the delta
    table from a regular structure outcome.

    phi_e: optional user complement expressions (their annihilation of the
    retained input directions is verified, not solved for).
    """
    outcome.raise_if_irregular()
    nf = NormalForm(outcome)
    states = system.states
    n, m, p = system.n, system.m, system.p
    samples = outcome.samples

    # Chain coordinates zeta_{i,j} selected through the R/S history.
    chain_descr = outcome.chains()   # [(q_i, step, row)]
    for cidx, (qi, step, r) in enumerate(chain_descr, start=1):
        coords = []
        names = []
        for j in range(1, qi + 1):
            sel = _sel_product(outcome, step, j)
            level = _apply_rows(sel[[r]], _theta_level(outcome, j))[0]
            coords.append(level)
            names.append(f"xi{cidx}_{j}")
        nf.chains.append(coords)
        nf.xi_names.append(names)

    if not check_assumption_B(outcome, samples, tol):
        raise StructureError("Assumption B fails: chain differentials are not "
                             "of full row rank on the samples")

    # delta couplings from the step ledger: level-j rows couple to feedbacks
    # of chains no longer than j.
    widths = []
    prev = 0
    for rec in outcome.steps:
        widths.append(rec.rho - prev)
        prev = rec.rho

    def chain_index(step, row):
        return sum(widths[:step - 1]) + row + 1

    for cidx, (qi, stepi, r) in enumerate(chain_descr, start=1):
        for j in range(1, qi):
            P_blocks = outcome.steps[j - 1].P_blocks
            if not P_blocks:
                continue
            sel = _sel_product(outcome, stepi, j + 1)[[r]]
            for l, blk in P_blocks.items():
                coupled = _rows_times_matrix(sel, blk)
                for rprime in range(coupled.shape[1]):
                    lidx = chain_index(l, rprime)
                    e = simplify(coupled[0, rprime])
                    if e != const(0):
                        nf.delta[(cidx, j, lidx)] = e

    # Feedback rows per chain and the input-side transformation.
    nf.a = list(outcome.a)
    nf.b = outcome.b
    nf.gamma_id = outcome.b
    god = []
    for (qi, stepi, r) in chain_descr:
        god.append(_sel_product(outcome, stepi, 1)[r])
    nf.gamma_od = np.array(god) if god else np.zeros((0, p))

    # Output complement: prefer the never-selected output directions
    # S_{k*} ... S_1, then canonical rows.
    s_rows = outcome.steps[outcome.k_star - 1].S
    for t in range(outcome.k_star - 1, 0, -1):
        s_rows = s_rows @ outcome.steps[t - 1].S
    cand = [s_rows[i] for i in range(s_rows.shape[0])] + list(np.eye(p))
    chosen = _completion_rows(nf.gamma_od if nf.gamma_od.size else np.zeros((0, p)),
                              cand, p - nf.m_d, tol)
    if chosen is None:
        raise StructureError("could not complete the output transformation")
    nf.gamma_oe = np.array([cand[i] for i in chosen]) if chosen else np.zeros((0, p))

    # Input complement Gamma_ie: user-provided or constant canonical rows
    # making [Gamma_ie; Gamma_id] nonsingular at every sample.
    if gamma_ie is not None:
        nf.gamma_ie = gamma_ie if isinstance(gamma_ie, SymMatrix) \
            else SymMatrix.from_numpy(np.asarray(gamma_ie, dtype=float))
        if nf.gamma_ie.shape != (m - nf.m_d, m):
            raise ValueError(f"gamma_ie must be {(m - nf.m_d, m)}")
    else:
        base_vals = _eval_matrix_samples(nf.gamma_id, states, samples)
        rows = None
        for combo in _greedy_then_all(m, m - nf.m_d):
            ok = all(_rank(np.vstack([np.eye(m)[list(combo)], bv]), tol) == m
                     for bv in base_vals)
            if ok:
                rows = list(combo)
                break
        if rows is None and m > nf.m_d:
            raise StructureError("no constant input complement found; supply gamma_ie")
        nf.gamma_ie = SymMatrix.from_numpy(np.eye(m)[rows or []])

    # State complement.
    dphi_d = jacobian([e for c in nf.chains for e in c], states)
    dphi_d0 = dphi_d.eval_at({s: 0.0 for s in states})
    if phi_e is not None:
        nf.eta_exprs = [simplify(e) for e in phi_e]
        if len(nf.eta_exprs) != n - nf.n_d:
            raise ValueError(f"phi_e must have {n - nf.n_d} entries")
    else:
        cand_rows = list(np.eye(n))
        chosen = _completion_rows(dphi_d0, cand_rows, n - nf.n_d, tol)
        if chosen is None:
            raise StructureError("no coordinate subset completes the chart; "
                                 "supply phi_e")
        nf.eta_exprs = [Var(states[i]) for i in chosen]
    nf.eta_names = [f"eta{i + 1}" for i in range(n - nf.n_d)]

    # Full chart must be nonsingular at the base point.
    dphi = jacobian(nf.eta_exprs + [e for c in nf.chains for e in c], states)
    if _rank(dphi.eval_at({s: 0.0 for s in states}), tol) != n:
        raise StructureError("d(Phi) singular at the base point")

    _decompose_eta_dynamics(nf, tol)

    # Constant residue columns disappear after the documented coordinate
    # shift eta <- eta - sum_l phi_l xi_{l, q_l}.
    if nf.phi_cols is not None and nf.phi_cols.shape[1] and nf.eta_exprs:
        if not nf.phi_cols.is_constant():
            pass
        elif any(e != const(0) for row in nf.phi_cols.rows for e in row):
            shift = nf.phi_cols.to_numpy_constant()
            ends = [nf.chains[l][-1] for l in range(nf.m_d)]
            nf.eta_exprs = [simplify(nf.eta_exprs[i]
                                     - sum((const(float(shift[i, l])) * ends[l]
                                            for l in range(nf.m_d)), start=const(0)))
                            for i in range(len(nf.eta_exprs))]
            _decompose_eta_dynamics(nf, tol)

    # If the user supplied a complement, verify it annihilates the retained
    # input directions on samples (the sufficient condition for phi_l = 0).
    if phi_e is not None and nf.phi_cols is not None:
        for row in nf.phi_cols.rows:
            for e in row:
                if not numeric_equivalent(e, const(0), seed=11, tol=1e-7):
                    nf.warnings.append(
                        "supplied phi_e does not annihilate the chain input "
                        "directions; residue columns kept")
                    break

    nf.h_e = _rows_times_exprs(nf.gamma_oe, [simplify(e) for e in system.h])
    return nf


def _greedy_then_all(m, need):
    import itertools
    ordered = list(itertools.combinations(range(m), need))
    return ordered


def _rows_times_matrix(sel, matrix):
    rows = []
    for row in sel:
        acc = [const(0)] * matrix.shape[1]
        for c, mrow in zip(row, matrix.rows):
            if c:
                acc = [a + const(int(round(float(c)))) * e for a, e in zip(acc, mrow)]
        rows.append([simplify(e) for e in acc])
    return SymMatrix(rows)


def _rows_times_exprs(sel, exprs):
    out = []
    for row in sel:
        acc = const(0)
        for c, e in zip(row, exprs):
            if c:
                acc = acc + const(float(c)) * e
        out.append(simplify(acc))
    return out


def _eval_matrix_samples(matrix, states, samples):
    from .expr import compile_exprs
    nr, nc = matrix.shape
    if nr == 0:
        return [np.zeros((0, nc)) for _ in samples]
    fn = compile_exprs([e for r in matrix.rows for e in r], states)
    return [np.asarray(fn(list(np.asarray(p, dtype=float))), dtype=float).reshape(nr, nc)
            for p in samples]


def _decompose_eta_dynamics(nf, tol):
    """eta_dot = f_e + g_e u_e + sum_l phi_l v_{d,l} in original coordinates."""
    system = nf.system
    states = system.states
    m, m_d = system.m, nf.m_d
    if not nf.eta_exprs:
        nf.f_e, nf.g_e, nf.phi_cols = [], SymMatrix([]), SymMatrix([])
        return
    dphi_e = jacobian(nf.eta_exprs, states)
    gamma_i = nf.gamma_ie.vstack(nf.gamma_id) if m - m_d else nf.gamma_id
    gamma_inv = gamma_i.inverse(max_size=4)
    G = dphi_e @ system.g @ gamma_inv
    G_e = SymMatrix([row[:m - m_d] for row in G.rows])
    G_d = SymMatrix([row[m - m_d:] for row in G.rows])
    drift = dphi_e @ system.f.as_column()
    f_e = []
    for i in range(len(nf.eta_exprs)):
        acc = drift[i, 0]
        for l in range(m_d):
            acc = acc - G_d[i, l] * nf.a[l]
        f_e.append(simplify(acc))
    nf.f_e = f_e
    nf.g_e = G_e
    nf.phi_cols = G_d


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

def check_assumption_B(outcome, samples=None, tol=DEFAULT_TOL):
    """Full row rank of the stacked chain differentials.  Passes without
    sampling when every recorded P block is constant."""
    outcome.raise_if_irregular()
    all_const = all(blk.is_constant()
                    for rec in outcome.steps for blk in rec.P_blocks.values())
    if all_const:
        return True
    samples = samples if samples is not None else outcome.samples
    states = outcome.system.states
    zeta = []
    chain_descr = outcome.chains()
    for (qi, step, r) in chain_descr:
        for j in range(1, qi + 1):
            sel = _sel_product(outcome, step, j)
            zeta.append(_apply_rows(sel[[r]], _theta_level(outcome, j))[0])
    J = jacobian(zeta, states)
    for vals in _eval_matrix_samples(J, states, samples):
        if _rank(vals, tol) != len(zeta):
            return False
    return True


def check_assumption_C(system, outcome, gamma_ie=None, plan=None, tol=DEFAULT_TOL):
    """Involutivity of the retained input directions g_d = g Gamma_i^{-1} [0; I]."""
    outcome.raise_if_irregular()
    nf_gid = outcome.b
    m, m_d = system.m, outcome.m_d
    if gamma_ie is None:
        gamma_ie = _default_gamma_ie(system, outcome, tol)
    gamma_i = gamma_ie.vstack(nf_gid) if m - m_d else nf_gid
    inv = gamma_i.inverse(max_size=4)
    pick = SymMatrix([[const(1 if i == j + (m - m_d) else 0) for j in range(m_d)]
                      for i in range(m)])
    g_d = system.g @ inv @ pick
    fields = [VectorField(g_d.col(j), system.states) for j in range(m_d)]
    pts = outcome.samples if plan is None else plan.realize(system)
    return involutive(fields, pts, tol=tol)


def _default_gamma_ie(system, outcome, tol):
    m, m_d = system.m, outcome.m_d
    if m == m_d:
        return SymMatrix([])
    base_vals = _eval_matrix_samples(outcome.b, system.states, outcome.samples)
    for combo in _greedy_then_all(m, m - m_d):
        if all(_rank(np.vstack([np.eye(m)[list(combo)], bv]), tol) == m
               for bv in base_vals):
            return SymMatrix.from_numpy(np.eye(m)[list(combo)])
    raise StructureError("no constant input complement found")


def check_assumption_D(system, outcome, nf=None, seed=5, tol=1e-7):
    """Commutation of the chain-generating fields of a square invertible
    outcome (pairwise Lie brackets vanish, checked by randomized sampling)."""
    outcome.raise_if_irregular()
    if outcome.invertibility != "Invertible":
        raise StructureError("Assumption D applies to square invertible systems")
    if nf is None:
        nf = build_normal_form(system, outcome)
    m = system.m
    binv = nf.b.inverse(max_size=4)
    acol = SymMatrix([[e] for e in nf.a])
    corr = system.g @ binv @ acol
    f_t = VectorField([simplify(c - corr[i, 0])
                       for i, c in enumerate(system.f.components)], system.states)
    g_t = system.g @ binv
    q = nf.q
    Y = {}

    def signed_ads(base, length):
        """{k: (-1)^{k-1} ad^{k-1}_{f_t} base} for k = 1..length."""
        out = {}
        cur = base
        for k in range(1, length + 1):
            out[k] = cur if k == 1 else _scale_field(cur, (-1) ** (k - 1))
            if k < length:
                cur = lie_bracket(f_t, cur)
        return out

    for k, fld in signed_ads(VectorField(g_t.col(m - 1), system.states),
                             q[m - 1]).items():
        Y[(m, k)] = fld
    for j in range(m - 1, 0, -1):
        comps = list(g_t.col(j - 1))
        for l in range(j + 1, m + 1):
            for i2 in range(2, q[l - 1] + 1):
                d = nf.delta_entry(l, q[l - 1] - i2 + 1, j)
                if d != const(0):
                    comps = [simplify(c - d * yc)
                             for c, yc in zip(comps, Y[(l, i2)].components)]
        for k, fld in signed_ads(VectorField(comps, system.states),
                                 q[j - 1]).items():
            Y[(j, k)] = fld
    keys = sorted(Y.keys())
    for a_i in range(len(keys)):
        for b_i in range(a_i + 1, len(keys)):
            br = lie_bracket(Y[keys[a_i]], Y[keys[b_i]])
            for c in br.components:
                if not numeric_equivalent(c, const(0), seed=seed, tol=tol,
                                          box=system.domain):
                    return False
    return True


def _scale_field(fld, s):
    return VectorField([simplify(const(s) * c) for c in fld.components], fld.states)


# ---------------------------------------------------------------------------
# Zero dynamics
# ---------------------------------------------------------------------------

class ZeroDynamicsReport:
    def __init__(self):
        self.eta_names = []
        self.eta_rhs = []         # in eta and u_e names
        self.y_e = []
        self.u_e_names = []
        self.degenerate_point = False
        self.split = None         # dict with za/zb/zc data for linear (abc)
        self.zero_dynamics = None # list of (name, rhs Expr) for the za block
        self.notes = []

    def __repr__(self):
        if self.degenerate_point:
            return "ZeroDynamicsReport(point)"
        body = ", ".join(f"{n}' = {render(e)}" for n, e in
                         zip(self.eta_names, self.eta_rhs))
        return f"ZeroDynamicsReport({body})"


def solve_triangular(equations, unknowns):
    """Solve {expr_i(x) = rhs_i} for the unknowns by repeatedly finding an
    equation linear in a single unresolved unknown.  Returns {name: Expr} or
    None."""
    resolved = {}
    remaining = list(equations)
    pending = set(unknowns)
    progress = True
    while pending and progress:
        progress = False
        for idx, (lhs, rhs) in enumerate(remaining):
            cur = subs(lhs, resolved) if resolved else simplify(lhs)
            vars_here = free_vars(cur) & pending
            if len(vars_here) != 1:
                continue
            u = next(iter(vars_here))
            coeff = diff(cur, u)
            if u in free_vars(coeff) or is_zero(coeff):
                continue
            b = subs(cur, {u: const(0)})
            sol = simplify((rhs - b) / coeff)
            resolved[u] = sol
            # Re-substitute into previously resolved values.
            resolved = {k: subs(v, {u: sol}) if u in free_vars(v) else v
                        for k, v in resolved.items()}
            pending.discard(u)
            remaining.pop(idx)
            progress = True
            break
    if pending:
        return None
    return resolved


def zero_dynamics(nf, tol=DEFAULT_TOL):
    """Residual dynamics on the zero-output set: substitute xi = 0 and
    v_d = 0.  For a linear residual system with external channels, also
    return the uncontrollable/unobservable split and the zero dynamics
    proper."""
    rep = ZeroDynamicsReport()
    if not nf.eta_exprs:
        rep.degenerate_point = True
        rep.notes.append("zero dynamics degenerates to the origin")
        return rep
    inv = nf.inverse_map(xi_values={})
    if inv is None:
        rep.notes.append("no closed-form chart inverse; zero dynamics "
                         "available only numerically")
        return rep
    # On the zero set the chain coordinates are 0, so x = x(eta, 0).
    rep.eta_names = list(nf.eta_names)
    m, m_d = nf.system.m, nf.m_d
    rep.u_e_names = [f"ue{i + 1}" for i in range(m - m_d)]
    sub = {s: e for s, e in inv.items()}
    g_e = nf.g_e
    rhs = []
    for i in range(len(nf.eta_exprs)):
        acc = subs(nf.f_e[i], sub)
        for j in range(m - m_d):
            acc = acc + subs(g_e[i, j], sub) * Var(rep.u_e_names[j])
        rhs.append(simplify(acc))
    rep.eta_rhs = rhs
    rep.y_e = [subs(e, sub) for e in nf.h_e]

    has_ue = m - m_d > 0
    has_ye = len(rep.y_e) > 0
    if not has_ue and not has_ye:
        rep.zero_dynamics = list(zip(rep.eta_names, rep.eta_rhs))
        return rep

    # Attempt the linear accessibility/observability split.
    names = rep.eta_names + rep.u_e_names
    n0 = len(rep.eta_names)
    J = jacobian(rhs, names)
    if not J.is_constant() or not jacobian(rep.y_e, rep.eta_names).is_constant():
        rep.notes.append("residual system nonlinear; split not computed "
                         "(supply coordinates to refine)")
        return rep
    Jn = J.to_numpy_constant()
    A = Jn[:, :n0]
    B = Jn[:, n0:]
    C = jacobian(rep.y_e, rep.eta_names).to_numpy_constant() \
        if rep.y_e else np.zeros((0, n0))
    ctrl = _krylov(A, B)
    unobs = _null(np.vstack([C @ np.linalg.matrix_power(A, k)
                             for k in range(max(n0, 1))])
                  if C.size else np.zeros((0, n0)), tol)
    if ctrl.shape[1] and _rank(np.hstack([unobs, ctrl]), tol) > unobs.shape[1]:
        rep.notes.append("controllable directions are partially observable; "
                         "split skipped")
        return rep
    V_c = _orth(ctrl, tol)
    V_a = _complement_within(unobs, V_c, tol)
    V_b = _complement_full(np.hstack([V_a, V_c]) if (V_a.size or V_c.size)
                           else np.zeros((n0, 0)), n0, tol)
    T = np.hstack([V_a, V_b, V_c])
    Tinv = np.linalg.inv(T)
    na = V_a.shape[1]
    At = Tinv @ A @ T
    za_names = [f"za{i + 1}" for i in range(na)]
    rep.split = {
        "za": [(za_names[i],
                _np_row_to_expr(Tinv[i], rep.eta_names)) for i in range(na)],
        "zb_dim": V_b.shape[1],
        "zc_dim": V_c.shape[1],
    }
    rep.zero_dynamics = []
    for i in range(na):
        acc = const(0)
        for j2 in range(na):
            v = At[i, j2]
            if abs(v) > 1e-12:
                acc = acc + const(_as_rat(v)) * Var(za_names[j2])
        rep.zero_dynamics.append((za_names[i], simplify(acc)))
    return rep


def _as_rat(v):
    from fractions import Fraction
    fr = Fraction(v).limit_denominator(10**6)
    return fr if abs(float(fr) - v) < 1e-9 else float(v)


def _np_row_to_expr(row, names):
    acc = const(0)
    for v, nme in zip(row, names):
        if abs(v) > 1e-12:
            acc = acc + const(_as_rat(float(v))) * Var(nme)
    return simplify(acc)


def _krylov(A, B):
    n = A.shape[0]
    if B.size == 0:
        return np.zeros((n, 0))
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _orth(M, tol):
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > tol * max(1.0, float(s[0]) if s.size else 0.0)))
    return u[:, :r]


def _null(M, tol):
    if M.size == 0:
        return np.eye(M.shape[1]) if M.shape[1] else np.zeros((0, 0))
    u, s, vt = np.linalg.svd(M)
    r = int(np.sum(s > tol * max(1.0, float(s[0]) if s.size else 0.0)))
    return vt[r:].T


def _complement_within(space, sub, tol):
    """Basis of `space` directions independent of `sub` (both column bases)."""
    if space.size == 0:
        return np.zeros((sub.shape[0], 0))
    cols = []
    cur = sub
    for j in range(space.shape[1]):
        c = space[:, j:j + 1]
        trial = np.hstack([cur, c]) if cur.size else c
        if _rank(trial, tol) == (cur.shape[1] if cur.size else 0) + 1:
            cols.append(c)
            cur = trial
    return np.hstack(cols) if cols else np.zeros((space.shape[0], 0))


def _complement_full(cur, n, tol):
    cols = []
    base = cur
    for j in range(n):
        c = np.eye(n)[:, j:j + 1]
        trial = np.hstack([base, c]) if base.size else c
        if _rank(trial, tol) == (base.shape[1] if base.size else 0) + 1:
            cols.append(c)
            base = trial
    return np.hstack(cols) if cols else np.zeros((n, 0))
