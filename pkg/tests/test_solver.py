"""Structured barrier solver.

Oracles: (1) scalar water-filling with the closed-form water level;
(2) matrix water-filling, maximize log2 det(B0 + V) s.t. trace(V) <= P,
whose optimum pours power in B0's eigenbasis; (3) refined dense grid search
over randomized 3-variable programs. Derivative code is checked against
central finite differences.
"""

import numpy as np
import pytest

from cranopt.solver import (
    Constraint,
    ConvexProgram,
    LinExpr,
    LogDetAtom,
    Objective,
    ProgramError,
    SolverOptions,
    Solution,
    _barrier_state,
    _compile,
    _newton_direction,
    constraint_slacks,
    objective_value,
    pack_hermitian,
    solve,
    unpack_hermitian,
)


def water_filling_program(d=(0.5, 1.0, 2.0), total=3.0):
    atoms = tuple(
        LogDetAtom(weight=1.0, base=np.array([[dk]], dtype=complex),
                   psd_terms=((f"p{k}", np.array([[1.0]])),))
        for k, dk in enumerate(d)
    )
    budget = Constraint(
        lin=LinExpr(psd={f"p{k}": np.array([[1.0]]) for k in range(len(d))}),
        bound=total, name="power")
    return ConvexProgram(
        psd_vars=tuple((f"p{k}", 1) for k in range(len(d))),
        objective=Objective(logdets=atoms),
        constraints=(budget,),
    )


def water_filling_optimum(d, total):
    d = np.asarray(d, dtype=float)
    # all-active water level, valid when min power > 0
    mu = (total + d.sum()) / len(d)
    p = mu - d
    assert p.min() > 0, "test construction requires all-active levels"
    return p, float(np.sum(np.log2(d + p)))


class TestPacking:
    def test_round_trip_and_inner_product(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 4):
            a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            g = 0.5 * (a + a.conj().T)
            v = 0.5 * ((b := rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) + b.conj().T)
            assert np.allclose(unpack_hermitian(pack_hermitian(g), n), g)
            want = float(np.real(np.trace(g @ v)))
            assert pack_hermitian(g) @ pack_hermitian(v) == pytest.approx(want, abs=1e-10)


class TestDerivatives:
    def _program(self):
        rng = np.random.default_rng(3)
        l1 = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        l2 = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        b = np.eye(2, dtype=complex) * 0.7
        atom_big = LogDetAtom(weight=0.8, base=np.eye(2, dtype=complex),
                              psd_terms=(("v1", l1), ("v2", l2)),
                              scalar_terms=(("s1", b),))
        atom_small = LogDetAtom(weight=1.3, base=np.array([[0.5]]),
                                psd_terms=(("v1", (rng.standard_normal((1, 2)) + 1j * rng.standard_normal((1, 2)))),),
                                scalar_terms=(("s1", np.array([[2.0]])),))
        cons = (
            Constraint(lin=LinExpr(psd={"v1": np.eye(2)}, scalar={"s1": 2.0}),
                       bound=14.0, neglog={"s1": 1.5}, name="fh"),
            Constraint(lin=LinExpr(rate={"r1": 1.0}), bound=9.0,
                       logdets=(LogDetAtom(weight=0.6, base=np.array([[1.0]]),
                                           psd_terms=(("v2", np.ones((1, 3)) * 0.3),)),),
                       name="rate"),
        )
        prog = ConvexProgram(
            psd_vars=(("v1", 2), ("v2", 3)),
            scalar_vars=(("s1", 0.05),),
            rate_vars=("r1",),
            objective=Objective(lin=LinExpr(psd={"v1": 0.1 * np.eye(2)}, rate={"r1": 0.7}),
                                logdets=(atom_big, atom_small)),
            constraints=cons,
        )
        return prog

    def test_gradient_hessian_match_finite_differences(self):
        prog = self._program()
        comp = _compile(prog)
        rng = np.random.default_rng(4)
        x = comp.pack_values({
            "v1": np.eye(2) * 1.5, "v2": np.eye(3) * 1.2, "s1": 0.8, "r1": 0.6,
        })
        x += 0.01 * rng.standard_normal(comp.dim)
        # re-center to keep Hermitian PD
        vals = comp.unpack_values(x)
        vals["v1"] = vals["v1"] + 1.0 * np.eye(2)
        vals["v2"] = vals["v2"] + 1.0 * np.eye(3)
        x = comp.pack_values(vals)
        t = 3.0
        grad, hess = _newton_direction(comp, x, t, 1.0)

        def phi(xv):
            st = _barrier_state(comp, xv, t, 1.0)
            assert st is not None
            return st[0]

        eps = 1e-6
        num_grad = np.empty(comp.dim)
        for k in range(comp.dim):
            e = np.zeros(comp.dim)
            e[k] = eps
            num_grad[k] = (phi(x + e) - phi(x - e)) / (2 * eps)
        assert np.abs(num_grad - grad).max() < 1e-4 * (1 + np.abs(grad).max())

        # second differences need a larger step to beat roundoff
        eps_h = 3e-4
        rngd = np.random.default_rng(5)
        for _ in range(4):
            u = rngd.standard_normal(comp.dim)
            u /= np.linalg.norm(u)
            hu_num = np.empty(comp.dim)
            for k in range(comp.dim):
                e = np.zeros(comp.dim)
                e[k] = eps_h
                gp = phi(x + e + eps_h * u) - phi(x + e - eps_h * u)
                gm = phi(x - e + eps_h * u) - phi(x - e - eps_h * u)
                hu_num[k] = (gp - gm) / (4 * eps_h * eps_h)
            hu = hess @ u
            assert np.abs(hu_num - hu).max() < 1e-3 * (1 + np.abs(hu).max())


class TestWaterFilling:
    def test_scalar_oracle(self):
        d, total = (0.5, 1.0, 2.0), 3.0
        prog = water_filling_program(d, total)
        sol = solve(prog)
        p_star, obj_star = water_filling_optimum(d, total)
        assert sol.status == "optimal"
        assert sol.kkt_residual <= 1e-6
        assert sol.objective == pytest.approx(obj_star, abs=1e-5)
        for k in range(3):
            got = float(np.real(sol.values[f"p{k}"][0, 0]))
            assert got == pytest.approx(p_star[k], abs=1e-4)
        assert constraint_slacks(prog, sol.values).min() >= -1e-9

    def test_matrix_water_filling(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            b0 = a @ a.conj().T / 3 + 0.2 * np.eye(3)
            total = 2.5
            prog = ConvexProgram(
                psd_vars=(("v", 3),),
                objective=Objective(logdets=(
                    LogDetAtom(weight=1.0, base=b0, psd_terms=(("v", np.eye(3)),)),)),
                constraints=(Constraint(lin=LinExpr(psd={"v": np.eye(3)}),
                                        bound=total, name="trace"),),
            )
            sol = solve(prog)
            d, _ = np.linalg.eigh(b0)
            # exact water level over eigenvalues of b0
            dd = np.sort(d)
            mu = None
            for active in range(3, 0, -1):
                cand = (total + dd[:active].sum()) / active
                if cand > dd[active - 1] and (active == 3 or cand <= dd[active]):
                    mu = cand
                    break
            want = float(np.sum(np.log2(np.maximum(dd, mu))))
            assert sol.status == "optimal"
            assert sol.objective == pytest.approx(want, abs=1e-5)


class TestGridOracle:
    @staticmethod
    def _random_program(rng):
        w1 = float(rng.uniform(0.4, 2.0))
        w2 = float(rng.uniform(0.3, 1.5))
        c0 = float(rng.uniform(0.2, 1.5))
        b1 = float(rng.uniform(0.3, 2.0))
        base2 = float(rng.uniform(0.3, 1.5))
        la, ls, lr = rng.uniform(-0.3, 0.8, size=3)
        budget = float(rng.uniform(1.5, 4.0))
        b2 = float(rng.uniform(1.0, 3.0))
        floor = 0.05
        prog = ConvexProgram(
            psd_vars=(("a", 1),),
            scalar_vars=(("s", floor),),
            rate_vars=("r",),
            objective=Objective(
                lin=LinExpr(psd={"a": np.array([[la]])}, scalar={"s": float(ls)},
                            rate={"r": float(lr) if lr > 0 else 0.4}),
                logdets=(LogDetAtom(weight=w1, base=np.array([[c0]]),
                                    psd_terms=(("a", np.array([[1.0]])),),
                                    scalar_terms=(("s", np.array([[b1]])),)),),
            ),
            constraints=(
                Constraint(lin=LinExpr(psd={"a": np.array([[1.0]])},
                                       scalar={"s": 1.0}, rate={"r": 1.0}),
                           bound=budget, name="budget"),
                Constraint(lin=LinExpr(scalar={"s": 0.5}), bound=b2,
                           neglog={"s": 0.8}, name="neglog"),
                Constraint(lin=LinExpr(rate={"r": 1.0}), bound=0.0,
                           logdets=(LogDetAtom(weight=w2, base=np.array([[base2]]),
                                               psd_terms=(("a", np.array([[1.0]])),)),),
                           name="epigraph"),
            ),
        )
        params = dict(w1=w1, w2=w2, c0=c0, b1=b1, base2=base2, la=la, ls=ls,
                      lr=lr if lr > 0 else 0.4, budget=budget, b2=b2, floor=floor)
        return prog, params

    @staticmethod
    def _grid_optimum(params):
        """Exhaustive search over the candidate active sets.

        The objective strictly increases in r, so at the optimum either r = 0
        or the budget or epigraph constraint is tight. Each case drops to a
        grid over at most two coordinates, which avoids the accuracy loss of
        a full 3-d zooming grid along nearly flat constraint faces.
        """
        w1, w2 = params["w1"], params["w2"]
        c0, b1, base2 = params["c0"], params["b1"], params["base2"]
        la, ls, lr = params["la"], params["ls"], params["lr"]
        budget, b2, floor = params["budget"], params["b2"], params["floor"]

        def value(a, s, r):
            tol = 1e-9
            with np.errstate(divide="ignore", invalid="ignore"):
                feas = (a >= -tol) & (s >= floor - tol) & (r >= -tol)
                feas &= a + s + r <= budget + tol
                feas &= 0.5 * s - 0.8 * np.log2(np.maximum(s, 1e-300)) <= b2 + tol
                feas &= r - w2 * np.log2(np.maximum(base2 + a, 1e-300)) <= tol
                obj = w1 * np.log2(c0 + a + b1 * s) + la * a + ls * s + lr * r
            return np.where(feas, obj, -np.inf)

        def plane_max(r_of):
            lo = np.array([0.0, floor])
            hi = np.array([budget, budget])
            best = -np.inf
            for _ in range(3):
                a, s = np.meshgrid(np.linspace(lo[0], hi[0], 401),
                                   np.linspace(lo[1], hi[1], 401), indexing="ij")
                obj = value(a, s, r_of(a, s))
                idx = np.unravel_index(int(np.argmax(obj)), obj.shape)
                best = max(best, float(obj[idx]))
                center = np.array([a[idx], s[idx]])
                span = (hi - lo) / 400 * 30
                lo = np.maximum(center - span, [0.0, floor])
                hi = np.minimum(center + span, budget)
                hi = np.maximum(hi, lo + 1e-12)
            return best

        cands = [
            plane_max(lambda a, s: np.zeros_like(a)),
            plane_max(lambda a, s: budget - a - s),
            plane_max(lambda a, s: w2 * np.log2(np.maximum(base2 + a, 1e-300))),
        ]
        # budget and epigraph both tight: one free coordinate
        a = np.linspace(0.0, budget, 200001)
        r = w2 * np.log2(np.maximum(base2 + a, 1e-300))
        cands.append(float(np.max(value(a, budget - a - r, r))))
        return max(cands)

    def test_fifty_random_programs(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 50:
            prog, params = self._random_program(rng)
            grid_obj = self._grid_optimum(params)
            if not np.isfinite(grid_obj):
                continue
            sol = solve(prog)
            assert sol.status == "optimal", f"params {params}"
            assert constraint_slacks(prog, sol.values).min() >= -1e-9
            assert sol.objective == pytest.approx(grid_obj, abs=1e-3), f"params {params}"
            checked += 1


class TestContracts:
    def test_infeasible_program(self):
        prog = ConvexProgram(
            rate_vars=("r",),
            objective=Objective(lin=LinExpr(rate={"r": 1.0})),
            constraints=(
                Constraint(lin=LinExpr(rate={"r": -1.0}), bound=-1.0, name="ge1"),
                Constraint(lin=LinExpr(rate={"r": 1.0}), bound=0.5, name="le05"),
            ),
        )
        sol = solve(prog)
        assert sol.status == "infeasible"

    def test_deterministic(self):
        prog = water_filling_program()
        s1 = solve(prog)
        s2 = solve(prog)
        assert s1.objective == s2.objective
        for k in range(3):
            assert np.array_equal(s1.values[f"p{k}"], s2.values[f"p{k}"])
        assert s1.newton_steps == s2.newton_steps

    def test_warm_start_keeps_objective(self):
        prog = water_filling_program()
        cold = solve(prog)
        warm = solve(prog, SolverOptions(warm_start=cold))
        assert warm.status == "optimal"
        assert warm.objective >= cold.objective - 1e-6

    def test_warm_start_accepts_dict_and_rejects_boundary(self):
        prog = water_filling_program()
        warm = solve(prog, SolverOptions(warm_start={
            "p0": np.array([[0.5]]), "p1": np.array([[0.5]]), "p2": np.array([[0.5]])}))
        assert warm.status == "optimal"
        # infeasible warm start silently falls back to a fresh start
        bad = solve(prog, SolverOptions(warm_start={
            "p0": np.array([[9.0]]), "p1": np.array([[9.0]]), "p2": np.array([[9.0]])}))
        assert bad.status == "optimal"

    def test_solution_reports_multipliers_and_slacks(self):
        prog = water_filling_program()
        sol = solve(prog)
        assert sol.slacks.shape == (1,)
        assert sol.slacks[0] == pytest.approx(0.0, abs=1e-4)
        assert sol.multipliers[0] > 0

    def test_objective_value_helper(self):
        prog = water_filling_program(d=(1.0, 1.0, 1.0), total=3.0)
        vals = {f"p{k}": np.array([[1.0]]) for k in range(3)}
        assert objective_value(prog, vals) == pytest.approx(3.0, abs=1e-12)


class TestValidation:
    def test_unknown_labels(self):
        with pytest.raises(ProgramError):
            _compile(ConvexProgram(
                objective=Objective(lin=LinExpr(rate={"nope": 1.0}))))

    def test_duplicate_labels(self):
        with pytest.raises(ProgramError):
            _compile(ConvexProgram(psd_vars=(("x", 1),), rate_vars=("x",)))

    def test_bad_atom_weight(self):
        with pytest.raises(ProgramError):
            _compile(ConvexProgram(
                psd_vars=(("v", 1),),
                objective=Objective(logdets=(
                    LogDetAtom(weight=-1.0, base=np.array([[1.0]]),
                               psd_terms=(("v", np.array([[1.0]])),)),))))

    def test_bad_shapes(self):
        with pytest.raises(ProgramError):
            _compile(ConvexProgram(
                psd_vars=(("v", 2),),
                objective=Objective(logdets=(
                    LogDetAtom(weight=1.0, base=np.eye(3),
                               psd_terms=(("v", np.ones((2, 2))),)),))))

    def test_negative_neglog(self):
        with pytest.raises(ProgramError):
            _compile(ConvexProgram(
                scalar_vars=(("s", 0.0),),
                constraints=(Constraint(lin=LinExpr(), bound=1.0,
                                        neglog={"s": -1.0}),)))

    def test_non_hermitian_coefficient(self):
        with pytest.raises(ProgramError):
            _compile(ConvexProgram(
                psd_vars=(("v", 2),),
                objective=Objective(lin=LinExpr(psd={"v": np.array([[0, 1], [0, 0.0]])}))))
