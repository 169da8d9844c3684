"""Backstepping synthesis over chain normal forms.

The engine walks an ordered list of chain variables.  Stepping a variable w
adds its mismatch z = w - (virtual law) to the running Lyapunov function and
derives the law for w's driver from four pieces: gain damping -c z, the
cross term (dV . dD/dw) introduced by activating w, the already-determined
feedback couplings entering w's own equation, and the transport term
d(law)/dt along the current design dynamics.  Variables not yet stepped are
carried at their virtual laws, so their mismatches surface later as cross
terms; this is what makes chain-by-chain, level-by-level, and mixed orders
all instances of one procedure.

The dissipative variant additionally collects each step's disturbance input,
exactly for channels entering linearly and through supplied bounds
otherwise, and completes the square against a per-step supply budget.
"""

from __future__ import annotations

import numpy as np

from .expr import (Expr, Func, Var, const, diff, evalf, free_vars, is_zero,
                   parse, render, simplify, subs)

__all__ = ["ChainSystem", "Stabilizer", "ControlLaw", "OrderViolation",
           "Disturbance", "validate_order", "integrator_backstep",
           "synthesize", "low_gain", "LowGainDesign", "semi_global_synthesize",
           "dissipative_backstep", "da_synthesize", "parse_kappa",
           "load_chain_system", "loads_chain_system", "dump_control_law",
           "loads_control_law"]

W_NAME = "w"   # reserved disturbance variable


class OrderViolation(ValueError):
    def __init__(self, condition, message):
        super().__init__(f"condition {condition}: {message}")
        self.condition = condition


class Disturbance:
    """One row's disturbance channel p(x, w).

    `lin` is the coefficient of the exactly-linear part, `bound` an
    expression whose absolute value bounds the remaining part per unit |w|.
    """

    def __init__(self, expr=None, lin=None, bound=None):
        self.expr = simplify(expr) if expr is not None else None
        if lin is None and self.expr is not None and bound is None:
            lin = diff(self.expr, W_NAME)
            if W_NAME in free_vars(lin):
                raise ValueError("disturbance not linear in w; supply a bound")
        self.lin = simplify(lin) if lin is not None else const(0)
        self.bound = simplify(bound) if bound is not None else None

    def is_zero(self):
        return self.lin == const(0) and self.bound is None


class ChainSystem:
    """Normal-form shaped system the synthesizer consumes.

    eta_dot entries may reference chain variables and, for chains whose
    residual block is fed directly by a control, the symbols v1..vm.
    """

    def __init__(self, q, eta_names=(), eta_dot=(), delta=None,
                 eta_dist=None, xi_dist=None, name=""):
        self.q = list(q)
        self.m = len(self.q)
        self.eta_names = list(eta_names)
        self.eta_dot = [simplify(e) for e in eta_dot]
        if len(self.eta_dot) != len(self.eta_names):
            raise ValueError("eta_dot must match eta_names")
        self.delta = {k: simplify(v) for k, v in (delta or {}).items()}
        for (i, j, l) in self.delta:
            if not (1 <= l < i <= self.m and 1 <= j < self.q[i - 1]):
                raise ValueError(f"bad delta index {(i, j, l)}")
            if j < self.q[l - 1]:
                raise ValueError(f"delta{(i, j, l)} violates the sparsity law")
        self.eta_dist = list(eta_dist) if eta_dist else [None] * len(self.eta_names)
        self.xi_dist = dict(xi_dist) if xi_dist else {}
        self.name = name
        reserved = set(self.xi_names()) | {self.v_name(i + 1) for i in range(self.m)} \
            | {W_NAME}
        clash = set(self.eta_names) & reserved
        if clash:
            raise ValueError(f"eta names collide with reserved names {sorted(clash)}")

    def xi_name(self, i, j):
        return f"xi{i}_{j}"

    def v_name(self, i):
        return f"v{i}"

    def xi_names(self):
        return [self.xi_name(i + 1, j + 1)
                for i in range(self.m) for j in range(self.q[i])]

    def state_names(self):
        return self.eta_names + self.xi_names()

    def has_disturbance(self):
        return any(d is not None and not d.is_zero() for d in self.eta_dist) \
            or any(d is not None and not d.is_zero() for d in self.xi_dist.values())

    def drift(self, name):
        """Deterministic right-hand side of one state row (v symbols kept)."""
        if name in self.eta_names:
            return self.eta_dot[self.eta_names.index(name)]
        i, j = self.locate(name)
        if j == self.q[i - 1]:
            return Var(self.v_name(i))
        acc = Var(self.xi_name(i, j + 1))
        for l in range(1, i):
            d = self.delta.get((i, j, l))
            if d is not None:
                acc = acc + d * Var(self.v_name(l))
        return simplify(acc)

    def dist(self, name):
        if name in self.eta_names:
            d = self.eta_dist[self.eta_names.index(name)]
        else:
            d = self.xi_dist.get(self.locate(name))
        return d if d is not None else Disturbance(const(0))

    def locate(self, name):
        for i in range(1, self.m + 1):
            for j in range(1, self.q[i - 1] + 1):
                if name == self.xi_name(i, j):
                    return (i, j)
        raise KeyError(name)


class Stabilizer:
    """Virtual outputs phi_{i,1}(eta) stabilizing the residual block, with a
    Lyapunov function V(eta)."""

    def __init__(self, phi, V):
        self.phi = [simplify(e) for e in phi]
        self.V = simplify(V)

    def validate(self, eta_names, rhs_at_phi=None, seed=23, npoints=60,
                 strict_ball=1e-9):
        origin = {n: 0.0 for n in eta_names}
        for e in self.phi:
            if eta_names and evalf(e, origin) != 0.0:
                raise ValueError("stabilizer virtual output nonzero at 0")
        if eta_names and evalf(self.V, origin) != 0.0:
            raise ValueError("V(0) must be 0")
        if rhs_at_phi is None or not eta_names:
            return True
        rng = np.random.default_rng(seed)
        vdot = sum((diff(self.V, n) * r for n, r in zip(eta_names, rhs_at_phi)),
                   start=const(0))
        for _ in range(npoints):
            env = {n: rng.uniform(-0.9, 0.9) for n in eta_names}
            v = evalf(self.V, env)
            vd = evalf(vdot, env)
            nrm = np.sqrt(sum(val * val for val in env.values()))
            if nrm > strict_ball and v <= 0:
                raise ValueError("V not positive at a sampled nonzero point")
            if vd > 1e-9 * (1 + abs(v)):
                raise ValueError(f"V not decreasing along the stabilized "
                                 f"residual block (Vdot={vd:.3e} at {env})")
        return True


class ControlLaw:
    def __init__(self, system, kappa, v, W, ledger, supply=None):
        self.system = system
        self.kappa = list(kappa)
        self.v = [simplify(e) for e in v]
        self.W = simplify(W)
        self.ledger = ledger
        self.supply = supply      # (gamma_total Expr, budget list) for da runs
        self.notes = []

    def closed_loop_rhs(self, with_disturbance=False):
        """State derivative expressions with every control substituted."""
        cs = self.system
        vmap = {cs.v_name(i + 1): self.v[i] for i in range(cs.m)}
        rows = []
        for name in cs.state_names():
            e = subs(cs.drift(name), vmap)
            if with_disturbance:
                d = cs.dist(name)
                if d.expr is not None:
                    e = simplify(e + d.expr)
                elif not d.is_zero():
                    e = simplify(e + d.lin * Var(W_NAME))
            rows.append(e)
        return rows

    def w_dot(self, with_disturbance=False):
        rhs = self.closed_loop_rhs(with_disturbance)
        acc = const(0)
        for name, r in zip(self.system.state_names(), rhs):
            acc = acc + diff(self.W, name) * r
        return simplify(acc)

    def check_decrease(self, seed=17, npoints=500, tol=1e-9, box=(-1.0, 1.0)):
        """Sampled Wdot <= tol at seeded nonzero points (no disturbance)."""
        wdot = self.w_dot()
        rng = np.random.default_rng(seed)
        names = self.system.state_names()
        worst = -np.inf
        for _ in range(npoints):
            env = {n: rng.uniform(*box) for n in names}
            val = evalf(wdot, env)
            worst = max(worst, val)
            if val > tol * (1.0 + abs(evalf(self.W, env))):
                return False, val, env
        return True, worst, None


def parse_kappa(text):
    """Parse 'xi1_1,xi2_1,...' (whitespace tolerated) into a name list."""
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


# ---------------------------------------------------------------------------
# Order validation
# ---------------------------------------------------------------------------

def validate_order(system, kappa, include_disturbance=False):
    """Check the admissibility conditions of a stepping order.

    (a) within each chain the levels appear in increasing order;
    (b) a nonzero coupling delta_{i,j,l} requires the whole chain l to appear
        before xi_{i,j};
    (c) delta_{i,j,l} (and, when requested, the disturbance coefficients of
        level j) may depend only on the residual state, first-level
        variables, and variables at-or-before xi_{i,j} in kappa.
    Returns a list of violations, empty when the order is admissible.
    """
    names = system.xi_names()
    if sorted(kappa) != sorted(names):
        missing = set(names) - set(kappa)
        extra = set(kappa) - set(names)
        raise OrderViolation("malformed", f"kappa must cover every chain "
                             f"variable exactly once (missing {sorted(missing)}, "
                             f"extra {sorted(extra)})")
    pos = {n: i for i, n in enumerate(kappa)}
    violations = []
    for i in range(1, system.m + 1):
        for j in range(1, system.q[i - 1]):
            a, b = system.xi_name(i, j), system.xi_name(i, j + 1)
            if pos[a] > pos[b]:
                violations.append(("2a", (i, j, None),
                                   f"{a} must appear before {b}"))
    allowed_always = set(system.eta_names) \
        | {system.xi_name(l, 1) for l in range(1, system.m + 1)}

    def check_dep(e, i, j, l, cond):
        here = pos[system.xi_name(i, j)]
        for nm in sorted(free_vars(e)):
            if nm in allowed_always or nm == W_NAME:
                continue
            if nm not in pos or pos[nm] > here:
                violations.append((cond, (i, j, l),
                                   f"coefficient depends on {nm}, which appears "
                                   f"after {system.xi_name(i, j)} in kappa"))

    for (i, j, l), d in system.delta.items():
        if is_zero(d):
            continue
        latest = max(pos[system.xi_name(l, jj)] for jj in range(1, system.q[l - 1] + 1))
        if latest > pos[system.xi_name(i, j)]:
            violations.append(("2b", (i, j, l),
                               f"chain {l} must be completed before "
                               f"{system.xi_name(i, j)}"))
        check_dep(d, i, j, l, "2c")
    if include_disturbance:
        for (i, j), dst in system.xi_dist.items():
            for e in ([dst.lin] + ([dst.bound] if dst.bound is not None else [])):
                check_dep(e, i, j, None, "2c")
    return violations


# ---------------------------------------------------------------------------
# The engine
# ---------------------------------------------------------------------------

class _Engine:
    def __init__(self, system, stab, gains=None, budgets=None,
                 initial_active=(), applied_overrides=None, v_preset=None,
                 V0=None):
        self.cs = system
        self.gains = gains or {}
        self.budgets = budgets        # per-step supply increments (Expr) or None
        self.active = list(system.eta_names) + list(initial_active)
        self.applied = {}
        for i in range(1, system.m + 1):
            self.applied[system.xi_name(i, 1)] = stab.phi[i - 1]
        if applied_overrides:
            self.applied.update(applied_overrides)
        self.vmap = dict(v_preset or {})
        self.V = stab.V if V0 is None else V0
        self.ledger = []
        self.step_no = 0

    def sigma(self, e):
        """Substitute controls and not-yet-active variables by their laws."""
        e = subs(e, self.vmap) if self.vmap else simplify(e)
        lazy = {n: law for n, law in self.applied.items()
                if n not in self.active and n in free_vars(e)}
        if lazy:
            e = subs(e, lazy)
        return e

    def design_rows(self):
        return {s: self.sigma(self.cs.drift(s)) for s in self.active}

    def disturbance_of(self, name):
        d = self.cs.dist(name)
        return Disturbance(lin=self.sigma(d.lin),
                           bound=self.sigma(d.bound) if d.bound is not None else None) \
            if not d.is_zero() else d

    def step(self, wname):
        cs = self.cs
        self.step_no += 1
        if wname in self.active:
            raise OrderViolation("malformed", f"{wname} stepped twice")
        if wname not in self.applied:
            raise OrderViolation("2a", f"no virtual law available for {wname}; "
                                 "its chain predecessor was not stepped")
        phi_w = self.applied[wname]
        i, j = cs.locate(wname)
        driver = cs.v_name(i) if j == cs.q[i - 1] else cs.xi_name(i, j + 1)
        self.active.append(wname)
        D = self.design_rows()
        vnames = {cs.v_name(t + 1) for t in range(cs.m)}
        for s, row in D.items():
            loose = set(free_vars(row)) & (vnames - set(self.vmap))
            if s == wname:
                loose.discard(driver)   # derived by this very step
            if loose:
                raise OrderViolation(
                    "2b", f"dynamics of {s} depend on undetermined controls "
                    f"{sorted(loose)} at the step on {wname}")

        z_w = simplify(Var(wname) - phi_w)
        cross = const(0)
        for s in self.active[:-1]:
            G_s = diff(D[s], wname)
            if wname in free_vars(G_s):
                raise OrderViolation("affine", f"dynamics of {s} not affine "
                                      f"in {wname}")
            if G_s != const(0):
                cross = cross + diff(self.V, s) * G_s

        # Already-determined feedbacks entering w's own equation.
        drift_w = cs.drift(wname)
        E_raw = simplify(drift_w - Var(driver))
        for vn in sorted(free_vars(E_raw)):
            if vn.startswith("v") and vn not in self.vmap and \
                    vn in {cs.v_name(t + 1) for t in range(cs.m)}:
                raise OrderViolation("2b", f"{wname} is coupled to {vn}, which "
                                     "is not yet determined")
        E = self.sigma(E_raw)

        phidot = const(0)
        for s in sorted(free_vars(phi_w)):
            if s in D:
                phidot = phidot + diff(phi_w, s) * D[s]

        c = self.gains.get(wname, 1)
        law = simplify(-const(c) * z_w - cross - E + phidot)

        damping = const(0)
        budget = None
        if self.budgets is not None:
            budget = self.budgets[self.step_no - 1]
            own = self.disturbance_of(wname)
            t_lin = own.lin
            bound_terms = []
            if own.bound is not None and not is_zero(own.bound):
                bound_terms.append(Func("abs", own.bound))
            for s in sorted(free_vars(phi_w)):
                if s not in D:
                    continue
                ds = self.disturbance_of(s)
                if not is_zero(ds.lin):
                    t_lin = simplify(t_lin - diff(phi_w, s) * ds.lin)
                if ds.bound is not None and not is_zero(ds.bound):
                    bound_terms.append(Func("abs", simplify(diff(phi_w, s) * ds.bound)))
            rbar = None
            if not is_zero(t_lin):
                rbar = Func("abs", t_lin)
            for b in bound_terms:
                rbar = b if rbar is None else simplify(rbar + b)
            if rbar is not None:
                damping = simplify(z_w * (const(1) + Pow2(rbar))
                                   / (const(4) * budget))
                law = simplify(law - damping)

        if j == cs.q[i - 1]:
            self.vmap[driver] = law
        else:
            self.applied[driver] = law
        self.V = simplify(self.V + z_w * z_w / 2)
        self.ledger.append({
            "step": self.step_no,
            "var": wname,
            "target": driver,
            "z": z_w,
            "gain": c,
            "law": law,
            "budget": budget,
            "damping": damping if damping != const(0) else None,
        })
        return law


def Pow2(e):
    from .expr import Pow
    return simplify(Pow(e, 2))


def _finish(engine, kappa, supply=None):
    cs = engine.cs
    missing = [cs.v_name(i + 1) for i in range(cs.m)
               if cs.v_name(i + 1) not in engine.vmap]
    if missing:
        raise OrderViolation("malformed", f"controls never derived: {missing}")
    v = [engine.vmap[cs.v_name(i + 1)] for i in range(cs.m)]
    return ControlLaw(cs, kappa, v, engine.V, engine.ledger, supply=supply)


def synthesize(system, kappa, stab, gains=None, check_order=True,
               check_stabilizer=True):
    """Fold the backstepping step along kappa; default per-step gain c = 1."""
    if isinstance(kappa, str):
        kappa = parse_kappa(kappa)
    if check_order:
        violations = validate_order(system, kappa)
        if violations:
            cond, idx, msg = violations[0]
            raise OrderViolation(cond, f"delta{idx}: {msg}" if idx[2] else msg)
    if check_stabilizer and system.eta_names:
        rhs_at_phi = [subs(e, _phi_env(system, stab))
                      for e in system.eta_dot]
        if not any(vn in free_vars(r) for r in rhs_at_phi
                   for vn in [system.v_name(i + 1) for i in range(system.m)]):
            stab.validate(system.eta_names, rhs_at_phi)
        else:
            stab.validate(system.eta_names)
    engine = _Engine(system, stab, gains=gains)
    for wname in kappa:
        engine.step(wname)
    return _finish(engine, kappa)


def _phi_env(system, stab):
    return {system.xi_name(i + 1, 1): stab.phi[i] for i in range(system.m)}


def integrator_backstep(eta_names, F, xi_name_, G, phi, V, c=1):
    """Single integrator backstep for d(eta)/dt = F(eta, xi), d(xi)/dt = u + G.

    Returns (u, W) with W = V + (xi - phi)^2 / 2.  F must be affine in the
    stepped variable.
    """
    z = simplify(Var(xi_name_) - phi)
    cross = const(0)
    phidot = const(0)
    for nm, Fi in zip(eta_names, F):
        coeff = diff(Fi, xi_name_)
        if xi_name_ in free_vars(coeff):
            raise OrderViolation("affine", f"dynamics of {nm} not affine in {xi_name_}")
        cross = cross + diff(V, nm) * coeff
        phidot = phidot + diff(phi, nm) * Fi
    u = simplify(-const(c) * z - cross - G + phidot)
    W = simplify(V + z * z / 2)
    return u, W


# ---------------------------------------------------------------------------
# Low-gain / semi-global design
# ---------------------------------------------------------------------------

class LowGainDesign:
    def __init__(self, lengths, eps, coeffs, laws, lyapunovs):
        self.lengths = list(lengths)
        self.eps = eps
        self.coeffs = coeffs          # per chain: [c_{i,0}, ..., c_{i,l-2}]
        self.laws = laws              # per chain: Expr or None (length-1 chain)
        self.lyapunovs = lyapunovs    # per chain: Expr (0 for length-1 chain)


def low_gain(lengths, eps, poles=None, chain_offset=0):
    """Slow virtual laws: for a chain of slow length l, the law
    -eps^{l-1} c_0 xi_1 - ... - eps c_{l-2} xi_{l-1} from the Hurwitz
    polynomial with the requested roots (default all -1)."""
    epse = eps if isinstance(eps, Expr) else const(float(eps))
    if isinstance(eps, (int, float)) and eps <= 0:
        raise ValueError("eps must be positive")
    coeffs = []
    laws = []
    lyap = []
    for idx, l in enumerate(lengths):
        chain = idx + 1 + chain_offset
        pl = (poles[idx] if poles else [-1.0] * (l - 1))
        if l < 1:
            raise ValueError("chain length must be >= 1")
        if l == 1:
            coeffs.append([])
            laws.append(None)
            lyap.append(const(0))
            continue
        if any(np.real(p) >= 0 for p in pl):
            raise ValueError("low-gain poles must be strictly stable")
        cs_poly = _monic_coeffs(pl)
        coeffs.append(cs_poly)
        law = const(0)
        for j in range(1, l):
            law = law - Pow2srl(epse, l - j) * const(cs_poly[j - 1]) \
                * Var(f"xi{chain}_{j}")
        laws.append(simplify(law))
        lyap.append(_slow_lyapunov(chain, l, epse, cs_poly))
    return LowGainDesign(lengths, eps, coeffs, laws, lyap)


def Pow2srl(e, n):
    from .expr import Pow
    return simplify(Pow(e, n)) if n != 1 else e


def _monic_coeffs(poles):
    """[c_0, c_1, ..., c_{l-2}] of prod (s - p) = s^{l-1} + c_{l-2} s^{l-2}
    + ... + c_0."""
    poly = np.poly(np.array(poles, dtype=complex))
    cs = [float(np.real(v)) for v in poly[1:]]
    return cs[::-1]

def _slow_lyapunov(chain, l, epse, cs_poly):
    """Quadratic Lyapunov function for the closed slow block.

    The cascade form certifies the default all-(-1)-pole laws for up to two
    slow states per chain and keeps eps symbolic; longer slow chains need a
    numeric eps for a Lyapunov-equation solve.
    """
    names = [Var(f"xi{chain}_{j}") for j in range(1, l)]
    if l == 2:
        return simplify(names[0] * names[0] / 2)
    if l == 3 and cs_poly == [1.0, 2.0]:
        z1 = simplify(epse * names[0])
        z2 = simplify(epse * names[0] + names[1])
        return simplify((z1 * z1 + z2 * z2) / 2)
    if isinstance(epse, Expr) and free_vars(epse):
        raise ValueError("slow chains longer than 2 states with non-default "
                         "poles need a numeric eps")
    epsv = evalf(epse, {})
    nsl = l - 1
    A = np.zeros((nsl, nsl))
    for r in range(nsl - 1):
        A[r, r + 1] = 1.0
    for j in range(1, l):
        A[nsl - 1, j - 1] = -(epsv ** (l - j)) * cs_poly[j - 1]
    P = _lyap_solve(A.T, np.eye(nsl))
    acc = const(0)
    for r in range(nsl):
        for cidx in range(nsl):
            if abs(P[r, cidx]) > 1e-14:
                acc = acc + const(float(P[r, cidx])) * names[r] * names[cidx]
    return simplify(acc / 2)


def _lyap_solve(A, Q):
    """Solve A P + P A^T = -Q by the Kronecker linear system."""
    n = A.shape[0]
    M = np.kron(np.eye(n), A) + np.kron(A, np.eye(n))
    vec = np.linalg.solve(M, -Q.reshape(-1))
    P = vec.reshape(n, n)
    return (P + P.T) / 2


def semi_global_synthesize(system, lengths, kappa, stab, eps, poles=None,
                           gains=None):
    """Low-gain slow laws on the linear front of each chain, then
    backstepping over the remaining variables.

    lengths[i] marks the slot of chain i driving the residual block;
    admissible when lengths[0] <= q_1 + 1 and lengths[i] <= q_1 otherwise.
    kappa must start with the slow variables xi_{s,1..lengths[s]-1}.
    """
    if isinstance(kappa, str):
        kappa = parse_kappa(kappa)
    q = system.q
    if len(lengths) != system.m:
        raise ValueError("need one driving slot per chain")
    if lengths[0] > q[0] + 1 or any(l > q[0] for l in lengths[1:]) \
            or any(l < 1 for l in lengths):
        raise ValueError(f"slot constraint violated: need l1 <= q1+1 and "
                         f"li <= q1, got {lengths} with q = {q}")
    slow = [system.xi_name(s + 1, p + 1)
            for s in range(system.m) for p in range(lengths[s] - 1)]
    if set(kappa[:len(slow)]) != set(slow):
        raise ValueError("kappa must start with the slow chain variables")
    design = low_gain(lengths, eps, poles)

    applied = {}
    v_preset = {}
    V0 = stab.V
    for s in range(system.m):
        l = lengths[s]
        if l == 1:
            applied[system.xi_name(s + 1, 1)] = simplify(stab.phi[s])
            continue
        V0 = simplify(V0 + design.lyapunovs[s])
        if l == q[s] + 1:
            v_preset[system.v_name(s + 1)] = design.laws[s]
        else:
            applied[system.xi_name(s + 1, l)] = design.laws[s]

    rest = kappa[len(slow):]
    violations = validate_order(system, kappa)
    if violations:
        cond, idx, msg = violations[0]
        raise OrderViolation(cond, msg)

    engine = _Engine(system, stab, gains=gains, initial_active=slow,
                     applied_overrides=applied, v_preset=v_preset, V0=V0)
    for wname in rest:
        engine.step(wname)
    return _finish(engine, kappa)


# ---------------------------------------------------------------------------
# Dissipative backstepping
# ---------------------------------------------------------------------------

def dissipative_backstep(eta_names, F, eta_dists, xi_name_, G, xi_dist,
                         phi, V, budget, c=1):
    """Single dissipative step: the nominal backstep plus damping
    -(z/(4*budget))*(1 + Rbar^2) against the step's collected disturbance
    input Rbar.  With no disturbance the damping vanishes and the step
    reduces to the plain integrator backstep."""
    cs = ChainSystem(q=[1], eta_names=eta_names, eta_dot=F,
                     eta_dist=eta_dists, xi_dist={(1, 1): xi_dist}
                     if xi_dist is not None else None)
    stab = Stabilizer([phi], V)
    engine = _Engine(cs, stab, gains={cs.xi_name(1, 1): c}, budgets=[budget])
    name = cs.xi_name(1, 1)
    law = engine.step(name)
    if not is_zero(G):
        # extra known drift of the stepped equation is cancelled directly
        law = simplify(law - engine.sigma(G))
        engine.vmap[cs.v_name(1)] = law
        engine.ledger[-1]["law"] = law
    claw = _finish(engine, [name])
    return claw.v[0], claw.W


def da_synthesize(system, kappa, stab, gamma, eps, budgets=None, gains=None):
    """Disturbance-attenuating synthesis: fold the dissipative step along
    kappa with per-step supply budgets.

    Default budget schedule: step l receives
    (gamma + l*eps/n_d)^2 - (gamma + (l-1)*eps/n_d)^2 so the closed loop is
    dissipative with supply rate (gamma + eps)^2 ||w||^2 - ||y||^2; an
    explicit `budgets` list (expressions) overrides the schedule.
    """
    if isinstance(kappa, str):
        kappa = parse_kappa(kappa)
    violations = validate_order(system, kappa, include_disturbance=True)
    if violations:
        cond, idx, msg = violations[0]
        raise OrderViolation(cond, msg)
    n_d = sum(system.q)
    if len(kappa) != n_d:
        raise OrderViolation("malformed", "kappa must cover all chain variables")
    ge = gamma if isinstance(gamma, Expr) else const(float(gamma))
    ee = eps if isinstance(eps, Expr) else const(float(eps))
    if budgets is None:
        budgets = []
        for l in range(1, n_d + 1):
            lo = simplify(ge + const(l - 1) * ee / const(n_d))
            hi = simplify(ge + const(l) * ee / const(n_d))
            budgets.append(simplify(hi * hi - lo * lo))
        total = simplify((ge + ee) * (ge + ee))
    else:
        budgets = [b if isinstance(b, Expr) else const(float(b)) for b in budgets]
        total = simplify(ge * ge + sum((b for b in budgets), start=const(0)))
        if len(budgets) != n_d:
            raise ValueError("need one budget per step")
    engine = _Engine(system, stab, gains=gains, budgets=budgets)
    for wname in kappa:
        engine.step(wname)
    return _finish(engine, kappa, supply=(total, budgets))


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------

def loads_chain_system(text, name=""):
    """Chain-system file: sections [chains], [eta], [eta_dot], [delta],
    [stabilizer], [disturbance]; see README for the grammar."""
    sections = {}
    current = None
    known = ("chains", "eta", "eta_dot", "delta", "stabilizer", "disturbance")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]") and \
                line[1:-1].strip().lower() in known:
            current = line[1:-1].strip().lower()
            sections[current] = []
            continue
        if current is None:
            raise ValueError(f"line {lineno}: content before any section")
        sections[current].append(line)

    def bracket_list(lines):
        body = " ".join(lines).strip()
        if not (body.startswith("[") and body.endswith("]")):
            raise ValueError("expected a bracketed list")
        from .sysmodel import _split_top_level
        return _split_top_level(body[1:-1])

    q = None
    for line in sections.get("chains", []):
        key, _, val = line.partition("=")
        if key.strip() == "q":
            q = [int(v) for v in bracket_list([val.strip()])]
    if q is None:
        raise ValueError("missing 'q = [...]' in [chains]")
    eta_names = bracket_list(sections["eta"]) if sections.get("eta") else []
    eta_dot = [parse(s) for s in bracket_list(sections["eta_dot"])] \
        if sections.get("eta_dot") else []
    delta = {}
    for line in sections.get("delta", []):
        head, _, expr = line.partition(":")
        i, j, l = (int(v) for v in head.split())
        delta[(i, j, l)] = parse(expr)
    eta_dist = [None] * len(eta_names)
    xi_dist = {}
    for line in sections.get("disturbance", []):
        head, _, body = line.partition(":")
        exprs = body.split("|")
        raw = parse(exprs[0])
        bound = parse(exprs[1]) if len(exprs) > 1 else None
        kind = head.split()
        if bound is not None:
            d = Disturbance(expr=raw, lin=const(0), bound=bound)
        else:
            d = Disturbance(expr=raw)
        if kind[0] == "eta":
            eta_dist[int(kind[1]) - 1] = d
        else:
            xi_dist[(int(kind[0]), int(kind[1]))] = d
    cs = ChainSystem(q, eta_names, eta_dot, delta, eta_dist, xi_dist, name=name)
    stab = None
    phi = V = None
    for line in sections.get("stabilizer", []):
        key, _, val = line.partition("=")
        key = key.strip()
        if key == "phi":
            phi = [parse(s) for s in bracket_list([val.strip()])]
        elif key == "V":
            V = parse(val)
    if phi is not None and V is not None:
        stab = Stabilizer(phi, V)
    return cs, stab


def load_chain_system(path):
    with open(path, "r", encoding="utf-8") as fh:
        return loads_chain_system(fh.read(), name=str(path))


def dump_control_law(law):
    lines = ["[controller]"]
    for i, e in enumerate(law.v, 1):
        lines.append(f"v{i} = {render(e)}")
    lines.append("")
    lines.append("[lyapunov]")
    lines.append(f"W = {render(law.W)}")
    return "\n".join(lines) + "\n"


def loads_control_law(text):
    v = {}
    W = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        if key == "W":
            W = parse(val)
        elif key.startswith("v"):
            v[int(key[1:])] = parse(val)
    return [v[i] for i in sorted(v)], W
