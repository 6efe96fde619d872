"""Structured convex solver for the precoding/compression subproblems.

Programs have the fixed shape

    maximize    lin(x) + sum_a  w_a log2 det M_a(x)
    subject to  lin_c(x) + sum_k c_k (-log2 s_k) - sum_a w_a log2 det M_a(x)
                    <= bound_c                      for each constraint c
                V_v  Hermitian PSD                  for each matrix variable
                s_k >= floor_k                      for each scalar variable
                r_m >= 0                            for each rate variable

where every M(x) = base + sum_t L_t V L_t^+ + sum_k s_k B_k is Hermitian
affine in the variables, weights w are positive and neg-log coefficients c_k
are nonnegative. Objective atoms are therefore concave and constraint atoms
convex by construction; validation is structural.

The solver is a log-barrier interior-point method: minimize
t * (-objective) + barrier, Newton inner loop with a Cholesky-safeguarded
backtracking line search, barrier weight shrunk by 10x per stage. A phase-one
pass (minimize the worst violation) produces a strictly feasible start or an
infeasibility certificate. Identical programs and options yield bitwise
identical solutions; there is no randomized state anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve

LN2 = float(np.log(2.0))


class ProgramError(ValueError):
    """Structurally invalid program (unknown labels, shape mismatches...)."""


# ---------------------------------------------------------------------------
# Hermitian parameterization
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _herm_basis(n):
    """Orthonormal Hermitian basis as a (n^2 x n^2) complex matrix whose
    columns are vec(E_k), column-major vec. Order: diagonal units, then for
    each m < q the real and imaginary pair elements."""
    cols = []
    for m in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[m, m] = 1.0
        cols.append(e.flatten(order="F"))
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for m in range(n):
        for q in range(m + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[m, q] = inv_sqrt2
            e[q, m] = inv_sqrt2
            cols.append(e.flatten(order="F"))
            e = np.zeros((n, n), dtype=complex)
            e[m, q] = 1j * inv_sqrt2
            e[q, m] = -1j * inv_sqrt2
            cols.append(e.flatten(order="F"))
    return np.stack(cols, axis=1)


def pack_hermitian(mat) -> np.ndarray:
    """Coordinates of a Hermitian matrix in the orthonormal basis; the packed
    vector of G satisfies Re tr(G V) = pack(G) . pack(V)."""
    mat = np.asarray(mat)
    n = mat.shape[0]
    out = np.empty(n * n)
    out[:n] = np.diagonal(mat).real
    idx = n
    sqrt2 = np.sqrt(2.0)
    for m in range(n):
        for q in range(m + 1, n):
            out[idx] = sqrt2 * mat[m, q].real
            out[idx + 1] = sqrt2 * mat[m, q].imag
            idx += 2
    return out


def unpack_hermitian(vec, n) -> np.ndarray:
    out = np.zeros((n, n), dtype=complex)
    np.fill_diagonal(out, vec[:n])
    idx = n
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for m in range(n):
        for q in range(m + 1, n):
            out[m, q] = (vec[idx] + 1j * vec[idx + 1]) * inv_sqrt2
            out[q, m] = np.conj(out[m, q])
            idx += 2
    return out


def _herm_quadratic(q12, n1, n2):
    """Real Hessian block of -tr(M^-1 U M^-1 W) structure: entry [(a), (b)]
    = Re tr(q12^+ E_a q12 E_b) for basis elements E_a (dim n1), E_b (dim n2).
    Returns the (n1^2 x n2^2) real block."""
    t1 = _herm_basis(n1)
    t2 = _herm_basis(n2)
    k = np.kron(q12.T, q12.conj().T)
    b21 = t2.conj().T @ k @ t1  # entry [b, a]
    return np.real(b21).T


# ---------------------------------------------------------------------------
# Program description
# ---------------------------------------------------------------------------

@dataclass
class LinExpr:
    """const + sum Re tr(G_v V_v) + sum c_k s_k + sum d_m r_m."""

    const: float = 0.0
    psd: dict = field(default_factory=dict)     # label -> Hermitian G
    scalar: dict = field(default_factory=dict)  # label -> float
    rate: dict = field(default_factory=dict)    # label -> float


@dataclass
class LogDetAtom:
    """w * log2 det(base + sum_t L_t V_t L_t^+ + sum_k s_k B_k), w > 0."""

    weight: float
    base: np.ndarray
    psd_terms: tuple = ()     # ((label, L), ...)
    scalar_terms: tuple = ()  # ((label, B), ...)


@dataclass
class Constraint:
    """lin(x) + sum c_k (-log2 s_k) - sum atoms <= bound."""

    lin: LinExpr
    bound: float
    neglog: dict = field(default_factory=dict)  # label -> coeff >= 0
    logdets: tuple = ()
    name: str = ""


@dataclass
class Objective:
    lin: LinExpr = field(default_factory=LinExpr)
    logdets: tuple = ()


@dataclass
class ConvexProgram:
    psd_vars: tuple = ()     # ((label, dim), ...)
    scalar_vars: tuple = ()  # ((label, floor), ...)
    rate_vars: tuple = ()    # (label, ...)
    objective: Objective = field(default_factory=Objective)
    constraints: tuple = ()


@dataclass
class Solution:
    values: dict
    objective: float
    status: str              # optimal | infeasible | max_iterations
    kkt_residual: float
    newton_steps: int
    slacks: np.ndarray
    multipliers: np.ndarray
    t_final: float = 1.0     # barrier weight at exit; seeds warm restarts


@dataclass
class SolverOptions:
    tolerance: float = 1e-6
    max_steps: int = 2000
    t_init: float = 1.0
    t_factor: float = 10.0
    newton_tol: float = 1e-9   # on the Newton decrement, objective units
    warm_start: object = None   # Solution or dict label -> value
    debug_path: str = None


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

class _Compiled:
    """Index maps and dense coefficient data for one program."""

    def __init__(self, prog: ConvexProgram):
        self.prog = prog
        labels = [lb for lb, _ in prog.psd_vars] + \
                 [lb for lb, _ in prog.scalar_vars] + list(prog.rate_vars)
        if len(set(labels)) != len(labels):
            raise ProgramError("variable labels must be unique")
        self.psd_slices = {}
        self.psd_dims = {}
        off = 0
        for lb, dim in prog.psd_vars:
            dim = int(dim)
            if dim < 1:
                raise ProgramError("psd variable dims must be >= 1")
            self.psd_slices[lb] = slice(off, off + dim * dim)
            self.psd_dims[lb] = dim
            off += dim * dim
        self.scalar_idx = {}
        self.scalar_floor = {}
        for lb, floor in prog.scalar_vars:
            if floor < 0:
                raise ProgramError("scalar floors must be nonnegative")
            self.scalar_idx[lb] = off
            self.scalar_floor[lb] = float(floor)
            off += 1
        self.rate_idx = {}
        for lb in prog.rate_vars:
            self.rate_idx[lb] = off
            off += 1
        self.dim = off

        self.obj_vec, self.obj_const = self._lin_vec(prog.objective.lin)
        self.obj_atoms = [self._atom(a) for a in prog.objective.logdets]
        self.cons = []
        for c in prog.constraints:
            vec, const = self._lin_vec(c.lin)
            neglog = []
            for lb, coeff in c.neglog.items():
                if lb not in self.scalar_idx:
                    raise ProgramError(f"unknown scalar label {lb!r} in neglog")
                if coeff < 0:
                    raise ProgramError("neglog coefficients must be nonnegative")
                if coeff:
                    neglog.append((self.scalar_idx[lb], float(coeff)))
            atoms = [self._atom(a) for a in c.logdets]
            self.cons.append({
                "vec": vec, "const": const, "neglog": neglog,
                "atoms": atoms, "bound": float(c.bound), "name": c.name,
            })
        # self-concordance parameter: 1 per inequality, dim per PSD cone,
        # 1 per scalar floor, 1 per rate positivity
        self.nu = (len(self.cons) + sum(self.psd_dims.values())
                   + len(self.scalar_idx) + len(self.rate_idx))

    # -- pieces ------------------------------------------------------------

    def _lin_vec(self, lin: LinExpr):
        vec = np.zeros(self.dim)
        for lb, g in lin.psd.items():
            if lb not in self.psd_slices:
                raise ProgramError(f"unknown psd label {lb!r}")
            g = np.asarray(g)
            n = self.psd_dims[lb]
            if g.shape != (n, n):
                raise ProgramError("linear psd coefficient has wrong shape")
            if not np.allclose(g, g.conj().T, atol=1e-10):
                raise ProgramError("linear psd coefficient must be Hermitian")
            vec[self.psd_slices[lb]] += pack_hermitian(g)
        for lb, coeff in lin.scalar.items():
            if lb not in self.scalar_idx:
                raise ProgramError(f"unknown scalar label {lb!r}")
            vec[self.scalar_idx[lb]] += float(coeff)
        for lb, coeff in lin.rate.items():
            if lb not in self.rate_idx:
                raise ProgramError(f"unknown rate label {lb!r}")
            vec[self.rate_idx[lb]] += float(coeff)
        return vec, float(lin.const)

    def _atom(self, atom: LogDetAtom):
        w = float(atom.weight)
        if w <= 0:
            raise ProgramError("atom weights must be positive")
        base = np.asarray(atom.base, dtype=complex)
        m = base.shape[0]
        if base.shape != (m, m) or not np.allclose(base, base.conj().T, atol=1e-10):
            raise ProgramError("atom base must be square Hermitian")
        psd_terms = []
        for lb, l_mat in atom.psd_terms:
            if lb not in self.psd_slices:
                raise ProgramError(f"unknown psd label {lb!r} in atom")
            l_mat = np.asarray(l_mat, dtype=complex)
            if l_mat.shape != (m, self.psd_dims[lb]):
                raise ProgramError("atom psd term has wrong shape")
            psd_terms.append((lb, l_mat))
        scalar_terms = []
        for lb, b_mat in atom.scalar_terms:
            if lb not in self.scalar_idx:
                raise ProgramError(f"unknown scalar label {lb!r} in atom")
            b_mat = np.asarray(b_mat, dtype=complex)
            if b_mat.shape != (m, m) or not np.allclose(b_mat, b_mat.conj().T, atol=1e-10):
                raise ProgramError("atom scalar term must be m x m Hermitian")
            scalar_terms.append((lb, b_mat))
        if m == 1:
            # affine scalar argument: value w*log2(c . x + c0)
            vec = np.zeros(self.dim)
            for lb, l_mat in psd_terms:
                g = l_mat.conj().T @ l_mat  # Hermitian PSD
                vec[self.psd_slices[lb]] += pack_hermitian(g)
            for lb, b_mat in scalar_terms:
                vec[self.scalar_idx[lb]] += float(np.real(b_mat[0, 0]))
            return {"m": 1, "w": w, "vec": vec, "const": float(np.real(base[0, 0]))}
        return {"m": m, "w": w, "base": base,
                "psd_terms": psd_terms, "scalar_terms": scalar_terms}

    # -- variable vector ---------------------------------------------------

    def pack_values(self, values: dict) -> np.ndarray:
        x = np.zeros(self.dim)
        for lb, sl in self.psd_slices.items():
            x[sl] = pack_hermitian(np.asarray(values[lb]))
        for lb, idx in self.scalar_idx.items():
            x[idx] = float(values[lb])
        for lb, idx in self.rate_idx.items():
            x[idx] = float(values[lb])
        return x

    def unpack_values(self, x) -> dict:
        out = {}
        for lb, sl in self.psd_slices.items():
            out[lb] = unpack_hermitian(x[sl], self.psd_dims[lb])
        for lb, idx in self.scalar_idx.items():
            out[lb] = float(x[idx])
        for lb, idx in self.rate_idx.items():
            out[lb] = float(x[idx])
        return out

    # -- evaluation --------------------------------------------------------

    def _atom_matrix(self, atom, x):
        m = atom["base"].copy()
        for lb, l_mat in atom["psd_terms"]:
            v = unpack_hermitian(x[self.psd_slices[lb]], self.psd_dims[lb])
            m += l_mat @ v @ l_mat.conj().T
        for lb, b_mat in atom["scalar_terms"]:
            m += x[self.scalar_idx[lb]] * b_mat
        return 0.5 * (m + m.conj().T)

    def _atom_value(self, atom, x):
        """w*log2 det M, or None when M is not PD."""
        if atom["m"] == 1:
            s = atom["const"] + atom["vec"] @ x
            if s <= 0:
                return None
            return atom["w"] * np.log2(s)
        m = self._atom_matrix(atom, x)
        try:
            chol = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            return None
        return atom["w"] * 2.0 * float(np.sum(np.log2(np.abs(np.diagonal(chol)))))

    def _atom_grad_hess(self, atom, x):
        """(value, grad, hess) of w*log2 det M(x); hess is NSD."""
        w = atom["w"]
        if atom["m"] == 1:
            s = atom["const"] + atom["vec"] @ x
            val = w * np.log2(s)
            c = atom["vec"]
            grad = (w / (LN2 * s)) * c
            hess = (-w / (LN2 * s * s)) * np.outer(c, c)
            return val, grad, hess
        m = self._atom_matrix(atom, x)
        chol = np.linalg.cholesky(m)
        val = w * 2.0 * float(np.sum(np.log2(np.abs(np.diagonal(chol)))))
        minv = cho_solve((chol, True), np.eye(m.shape[0], dtype=complex))
        minv = 0.5 * (minv + minv.conj().T)
        grad = np.zeros(self.dim)
        coef = w / LN2
        for lb, l_mat in atom["psd_terms"]:
            p = l_mat.conj().T @ minv @ l_mat
            grad[self.psd_slices[lb]] += coef * pack_hermitian(p)
        for lb, b_mat in atom["scalar_terms"]:
            grad[self.scalar_idx[lb]] += coef * float(np.real(np.trace(minv @ b_mat)))
        hess = np.zeros((self.dim, self.dim))
        terms = atom["psd_terms"]
        for a_i, (lb1, l1) in enumerate(terms):
            for b_i in range(a_i, len(terms)):
                lb2, l2 = terms[b_i]
                q12 = l1.conj().T @ (minv @ l2)
                block = -coef * _herm_quadratic(q12, self.psd_dims[lb1], self.psd_dims[lb2])
                sl1, sl2 = self.psd_slices[lb1], self.psd_slices[lb2]
                hess[sl1, sl2] += block
                if b_i != a_i:
                    hess[sl2, sl1] += block.T
            for lb2, b2 in atom["scalar_terms"]:
                c_mat = l1.conj().T @ minv @ b2 @ minv @ l1
                col = -coef * pack_hermitian(0.5 * (c_mat + c_mat.conj().T))
                sl1 = self.psd_slices[lb1]
                idx2 = self.scalar_idx[lb2]
                hess[sl1, idx2] += col
                hess[idx2, sl1] += col
        sterms = atom["scalar_terms"]
        for a_i, (lb1, b1) in enumerate(sterms):
            for lb2, b2 in sterms[a_i:]:
                val2 = -coef * float(np.real(np.trace(minv @ b1 @ minv @ b2)))
                i1, i2 = self.scalar_idx[lb1], self.scalar_idx[lb2]
                hess[i1, i2] += val2
                if i2 != i1:
                    hess[i2, i1] += val2
        return val, grad, hess

    def constraint_values(self, x) -> np.ndarray:
        """g_c(x) for every constraint; +inf when a log argument leaves its
        domain (treated as infeasible)."""
        out = np.empty(len(self.cons))
        for ci, con in enumerate(self.cons):
            g = con["const"] + con["vec"] @ x
            ok = True
            for idx, coeff in con["neglog"]:
                s = x[idx]
                if s <= 0:
                    ok = False
                    break
                g += coeff * (-np.log2(s))
            if ok:
                for atom in con["atoms"]:
                    v = self._atom_value(atom, x)
                    if v is None:
                        ok = False
                        break
                    g -= v
            out[ci] = g if ok else np.inf
        return out

    def objective_value(self, x):
        val = self.obj_const + self.obj_vec @ x
        for atom in self.obj_atoms:
            v = self._atom_value(atom, x)
            if v is None:
                return None
            val += v
        return float(val)

    def cone_ok(self, x):
        """Strict interior of the variable cones."""
        for lb, sl in self.psd_slices.items():
            v = unpack_hermitian(x[sl], self.psd_dims[lb])
            try:
                np.linalg.cholesky(v)
            except np.linalg.LinAlgError:
                return False
        for lb, idx in self.scalar_idx.items():
            if x[idx] <= self.scalar_floor[lb]:
                return False
        for idx in self.rate_idx.values():
            if x[idx] <= 0:
                return False
        return True


def _compile(prog):
    cached = getattr(prog, "_compiled", None)
    if cached is None:
        cached = _Compiled(prog)
        try:
            prog._compiled = cached
        except (AttributeError, TypeError):
            pass
    return cached


# ---------------------------------------------------------------------------
# Barrier machinery
# ---------------------------------------------------------------------------

def _barrier_state(comp, x, t, obj_sign=1.0, extra=None):
    """phi(x) and feasibility for the current barrier subproblem.

    Returns None when x is outside the domain. extra hooks phase-one terms.
    """
    if not comp.cone_ok(x):
        return None
    gvals = comp.constraint_values(x)
    if not np.all(np.isfinite(gvals)):
        return None
    slacks = np.array([c["bound"] for c in comp.cons]) - gvals
    if len(slacks) and slacks.min() <= 0:
        return None
    obj = comp.objective_value(x)
    if obj is None:
        return None
    # phi is kept in objective units (barrier scaled by 1/t, not the
    # objective by t): at t ~ 1e8 the classic t*f + barrier form exceeds
    # the resolution of double precision and the line search goes blind
    bar = 0.0
    if len(slacks):
        bar -= np.sum(np.log(slacks))
    for lb, sl in comp.psd_slices.items():
        v = unpack_hermitian(x[sl], comp.psd_dims[lb])
        chol = np.linalg.cholesky(v)
        bar -= 2.0 * float(np.sum(np.log(np.abs(np.diagonal(chol)))))
    for lb, idx in comp.scalar_idx.items():
        bar -= np.log(x[idx] - comp.scalar_floor[lb])
    for idx in comp.rate_idx.values():
        bar -= np.log(x[idx])
    phi = -obj_sign * obj + bar / t
    return phi, slacks, obj


def _constraint_grad_hess(comp, con, x):
    """(g, grad g, hess g) for one constraint's left side."""
    g = con["const"] + con["vec"] @ x
    grad = con["vec"].copy()
    hess_diag = np.zeros(comp.dim)
    for idx, coeff in con["neglog"]:
        s = x[idx]
        g += coeff * (-np.log2(s))
        grad[idx] += -coeff / (LN2 * s)
        hess_diag[idx] += coeff / (LN2 * s * s)
    hess = None
    for atom in con["atoms"]:
        v, a_grad, a_hess = comp._atom_grad_hess(atom, x)
        g -= v
        grad -= a_grad
        hess = -a_hess if hess is None else hess - a_hess
    if hess is None:
        hess = np.diag(hess_diag) if hess_diag.any() else None
    else:
        hess[np.diag_indices_from(hess)] += hess_diag
    return g, grad, hess


def _newton_direction(comp, x, t, obj_sign):
    """Gradient and Hessian of phi at x; assumes x strictly feasible."""
    d = comp.dim
    inv_t = 1.0 / t
    grad = -obj_sign * comp.obj_vec
    hess = np.zeros((d, d))
    rank1_rows = []
    rank1_coeffs = []
    for atom in comp.obj_atoms:
        if atom["m"] == 1:
            s = atom["const"] + atom["vec"] @ x
            grad += -obj_sign * (atom["w"] / (LN2 * s)) * atom["vec"]
            rank1_rows.append(atom["vec"])
            rank1_coeffs.append(obj_sign * atom["w"] / (LN2 * s * s))
        else:
            _, a_grad, a_hess = comp._atom_grad_hess(atom, x)
            grad += -obj_sign * a_grad
            hess += -obj_sign * a_hess
    for con in comp.cons:
        g, g_grad, g_hess = _constraint_grad_hess(comp, con, x)
        slack = con["bound"] - g
        grad += g_grad * (inv_t / slack)
        rank1_rows.append(g_grad)
        rank1_coeffs.append(inv_t / (slack * slack))
        if g_hess is not None:
            hess += g_hess * (inv_t / slack)
    for lb, sl in comp.psd_slices.items():
        n = comp.psd_dims[lb]
        v = unpack_hermitian(x[sl], n)
        chol = np.linalg.cholesky(v)
        vinv = cho_solve((chol, True), np.eye(n, dtype=complex))
        vinv = 0.5 * (vinv + vinv.conj().T)
        grad[sl] += -inv_t * pack_hermitian(vinv)
        block = _herm_quadratic(vinv, n, n)
        hess[sl, sl] += (0.5 * inv_t) * (block + block.T)
    for lb, idx in comp.scalar_idx.items():
        gap = x[idx] - comp.scalar_floor[lb]
        grad[idx] += -inv_t / gap
        hess[idx, idx] += inv_t / (gap * gap)
    for idx in comp.rate_idx.values():
        grad[idx] += -inv_t / x[idx]
        hess[idx, idx] += inv_t / (x[idx] * x[idx])
    if rank1_rows:
        rows = np.stack(rank1_rows)
        hess += (rows.T * np.asarray(rank1_coeffs)) @ rows
    return grad, hess


def _newton_loop(comp, x, t, obj_sign, newton_tol, steps_left, debug=None):
    """Centering at fixed t. Returns (x, steps_used, half_decrement).

    half_decrement bounds the remaining phi suboptimality of the centering
    problem in objective units; it feeds the reported residual.
    """
    steps = 0
    half_dec = np.inf
    stuck = 0
    while steps < steps_left:
        grad, hess = _newton_direction(comp, x, t, obj_sign)
        # Jacobi equilibration: barrier curvature spans ~1/slack^2, so the
        # raw system can reach condition 1e16 late in the schedule and the
        # factored direction stops being a descent direction for phi.
        d = np.sqrt(np.maximum(np.diag(hess), 1e-12))
        h_sc = hess / d[:, None] / d[None, :]
        g_sc = grad / d
        delta = None
        ridge = 0.0
        for _ in range(6):
            try:
                h_reg = h_sc if ridge == 0 else h_sc + ridge * np.eye(comp.dim)
                factor = cho_factor(0.5 * (h_reg + h_reg.T), check_finite=False)
                delta = cho_solve(factor, -g_sc, check_finite=False) / d
                break
            except np.linalg.LinAlgError:
                ridge = max(ridge * 10.0, 1e-10)
        if delta is None:
            return x, steps, half_dec
        decrement = -float(grad @ delta)
        if decrement < 0:
            # safeguarded direction failed; fall back to gradient
            delta = -grad
            decrement = float(grad @ grad)
        half_dec = 0.5 * decrement
        state0 = _barrier_state(comp, x, t, obj_sign)
        phi0 = state0[0]
        if half_dec <= newton_tol:
            return x, steps, half_dec
        alpha = 1.0
        accepted = False
        while alpha > 1e-13:
            trial = x + alpha * delta
            state = _barrier_state(comp, trial, t, obj_sign)
            if state is not None and state[0] <= phi0 - 0.25 * alpha * decrement:
                x = trial
                accepted = True
                break
            alpha *= 0.5
        steps += 1
        if debug is not None:
            debug.write(json.dumps({"t": t, "step": steps, "phi": phi0,
                                    "decrement": decrement, "alpha": alpha}) + "\n")
        if not accepted:
            # stalled at numerical precision; half_dec stays as measured
            return x, steps, half_dec
        stuck = stuck + 1 if alpha < 1e-9 else 0
        if stuck >= 3:
            # steps this small only pass the Armijo test through roundoff;
            # burning the budget here cannot improve the point
            return x, steps, half_dec
    return x, steps, half_dec


def _solve_barrier(comp, x, opts, obj_sign=1.0):
    """Full barrier schedule from strictly feasible x."""
    t = opts.t_init
    steps_total = 0
    half_dec = np.inf
    # leave room for the centering error so a converged run reports
    # kkt = nu/t + half_dec within tolerance
    gap_target = max(opts.tolerance - opts.newton_tol, 0.5 * opts.tolerance)
    debug = open(opts.debug_path, "a") if opts.debug_path else None
    try:
        while True:
            x, used, half_dec = _newton_loop(comp, x, t, obj_sign,
                                             opts.newton_tol,
                                             opts.max_steps - steps_total, debug)
            steps_total += used
            if comp.nu / t <= gap_target or steps_total >= opts.max_steps:
                break
            t *= opts.t_factor
    finally:
        if debug is not None:
            debug.close()
    return x, t, steps_total, half_dec


# ---------------------------------------------------------------------------
# Phase one
# ---------------------------------------------------------------------------

def _phase_one(comp, x0, opts):
    """Find strictly feasible x or declare infeasibility.

    Minimizes an extra violation variable tau subject to g_c(x) - bound <= tau
    over the cone interior; exits early once every original slack is strictly
    positive. The cones themselves are easy to enter (x0 is interior by
    construction), only the inequality constraints need work.
    """
    prog = comp.prog
    # tau enters every constraint as g(x) - tau <= bound and is kept positive
    # by shifting: tau_var = tau + shift is a rate-style (positive) variable.
    gvals = comp.constraint_values(x0)
    worst = float(np.max(gvals - np.array([c["bound"] for c in comp.cons])))
    if not np.isfinite(worst):
        raise ProgramError("constraints cannot be evaluated at the reference "
                           "point; atom bases must keep the domain open there")
    shift = abs(worst) + 1.0
    cons = []
    for c in prog.constraints:
        lin = LinExpr(const=c.lin.const + shift, psd=dict(c.lin.psd),
                      scalar=dict(c.lin.scalar), rate=dict(c.lin.rate))
        lin.rate["__tau__"] = lin.rate.get("__tau__", 0.0) - 1.0
        cons.append(Constraint(lin=lin, bound=c.bound, neglog=dict(c.neglog),
                               logdets=c.logdets, name=c.name))
    # cap tau_var to keep the phase-one set bounded in tau
    cons.append(Constraint(lin=LinExpr(rate={"__tau__": 1.0}),
                           bound=shift + worst + 2.0, name="__tau_cap__"))
    aug = ConvexProgram(
        psd_vars=prog.psd_vars, scalar_vars=prog.scalar_vars,
        rate_vars=tuple(prog.rate_vars) + ("__tau__",),
        objective=Objective(lin=LinExpr(rate={"__tau__": -1.0})),
        constraints=tuple(cons),
    )
    comp_aug = _Compiled(aug)
    x = np.concatenate([x0, [worst + shift + 1.0]])
    t = 1.0
    steps_total = 0
    tau_idx = comp_aug.rate_idx["__tau__"]
    while steps_total < opts.max_steps:
        x, used, _ = _newton_loop(comp_aug, x, t, 1.0, opts.newton_tol,
                                  opts.max_steps - steps_total)
        steps_total += max(used, 1)
        candidate = x[:comp.dim]
        if comp.cone_ok(candidate):
            gv = comp.constraint_values(candidate)
            bounds = np.array([c["bound"] for c in comp.cons])
            if np.all(np.isfinite(gv)) and np.all(bounds - gv > 1e-10 * (1.0 + np.abs(bounds))):
                return candidate, steps_total
        if comp_aug.nu / t <= min(opts.tolerance, 1e-8):
            break
        t *= opts.t_factor
    # converged without finding strict feasibility
    if x[tau_idx] - shift > -1e-9:
        return None, steps_total
    return x[:comp.dim], steps_total


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _default_start(comp):
    x = np.zeros(comp.dim)
    for lb, sl in comp.psd_slices.items():
        x[sl] = pack_hermitian(np.eye(comp.psd_dims[lb]))
    for lb, idx in comp.scalar_idx.items():
        x[idx] = comp.scalar_floor[lb] + 1.0
    for idx in comp.rate_idx.values():
        x[idx] = 1.0
    return x


def solve(program: ConvexProgram, options: SolverOptions = None) -> Solution:
    """Maximize the program objective; see the module docstring for shape.

    Returns status 'optimal' with kkt_residual <= tolerance on success,
    'infeasible' when phase one certifies an empty interior, and
    'max_iterations' when the step budget ran out first.
    """
    opts = options or SolverOptions()
    comp = _compile(program)
    steps_used = 0

    x = None
    if opts.warm_start is not None:
        values = opts.warm_start.values if isinstance(opts.warm_start, Solution) \
            else opts.warm_start
        cand = comp.pack_values(values)
        if _barrier_state(comp, cand, 1.0, 1.0) is not None:
            x = cand
    if x is None:
        cand = _default_start(comp)
        if _barrier_state(comp, cand, 1.0, 1.0) is not None:
            x = cand
        else:
            x, p1_steps = _phase_one(comp, cand, opts)
            steps_used += p1_steps
            if x is None:
                return Solution(values=comp.unpack_values(cand), objective=np.nan,
                                status="infeasible", kkt_residual=np.inf,
                                newton_steps=steps_used, slacks=np.array([]),
                                multipliers=np.array([]), t_final=opts.t_init)

    x, t_final, steps, half_dec = _solve_barrier(comp, x, opts)
    steps_used += steps

    # duality gap of the centered point plus the residual centering error,
    # both measured in objective units
    kkt = comp.nu / t_final + half_dec if np.isfinite(half_dec) else np.inf
    gvals = comp.constraint_values(x)
    slacks = np.array([c["bound"] for c in comp.cons]) - gvals
    multipliers = 1.0 / (t_final * slacks) if len(slacks) else np.array([])
    status = "optimal" if kkt <= opts.tolerance and steps_used < opts.max_steps \
        else "max_iterations"
    return Solution(values=comp.unpack_values(x),
                    objective=comp.objective_value(x),
                    status=status, kkt_residual=kkt, newton_steps=steps_used,
                    slacks=slacks, multipliers=multipliers, t_final=t_final)


def objective_value(program: ConvexProgram, values: dict) -> float:
    """Program objective at explicit variable values."""
    comp = _compile(program)
    return comp.objective_value(comp.pack_values(values))


def constraint_slacks(program: ConvexProgram, values: dict) -> np.ndarray:
    """bound_c - g_c at explicit variable values (nonneg = feasible)."""
    comp = _compile(program)
    x = comp.pack_values(values)
    return np.array([c["bound"] for c in comp.cons]) - comp.constraint_values(x)
