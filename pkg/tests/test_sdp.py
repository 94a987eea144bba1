import numpy as np
import pytest

from qcert.errors import SdpInputError, UncertifiedError
from qcert.sdp import (
    SdpProblem,
    certified_upper_bound,
    check_feasibility,
    problem_digest,
    solve,
)


def eigenvalue_problem(c_diag):
    """max tr(C X) s.t. tr(X) = 1, X >= 0: optimum = max eigenvalue."""
    d = len(c_diag)
    return SdpProblem(
        [d],
        objective=[(0, np.diag(np.asarray(c_diag, dtype=float)))],
        constraints=[([(0, np.eye(d))], 1.0)],
    )


def random_feasible_problem(rng, nblocks=3, p=6, dmax=4):
    """Bounded feasible instance built around known primal/dual interior points.

    rhs comes from a PD feasible X-hat; the objective is A*(y-hat) - S-hat
    with S-hat PD, so y-hat is strictly dual feasible and the optimum finite.
    """
    dims = [int(rng.integers(1, dmax + 1)) for _ in range(nblocks)]
    xhat, shat = [], []
    for d in dims:
        g = rng.normal(size=(d, d))
        xhat.append(g @ g.T + 0.1 * np.eye(d))
        g = rng.normal(size=(d, d))
        shat.append(g @ g.T + 0.1 * np.eye(d))
    yhat = rng.normal(size=p)
    amats = [
        [0.5 * (a + a.T) for a in (rng.normal(size=(d, d)) for d in dims)]
        for _ in range(p)
    ]
    constraints = []
    for j in range(p):
        rhs = sum(float(np.sum(amats[j][k] * xhat[k])) for k in range(nblocks))
        constraints.append(([(k, amats[j][k]) for k in range(nblocks)], rhs))
    objective = []
    for k in range(nblocks):
        c = sum(yhat[j] * amats[j][k] for j in range(p)) - shat[k]
        objective.append((k, c))
    return SdpProblem(dims, objective=objective, constraints=constraints)


class TestSolveBasics:
    def test_max_eigenvalue(self):
        sol = solve(eigenvalue_problem([1.0, 2.0]), tol=1e-9)
        assert sol.status == "optimal"
        assert sol.primal_value == pytest.approx(2.0, abs=1e-7)
        assert sol.dual_value == pytest.approx(2.0, abs=1e-6)

    def test_scalar_blocks(self):
        # max x s.t. x + slack = 3, both >= 0  ->  3
        prob = SdpProblem(
            [1, 1],
            objective=[(0, np.array([[1.0]]))],
            constraints=[([(0, np.array([[1.0]])), (1, np.array([[1.0]]))], 3.0)],
        )
        sol = solve(prob, tol=1e-9)
        assert sol.status == "optimal"
        assert sol.primal_value == pytest.approx(3.0, abs=1e-7)

    def test_infeasible(self):
        prob = SdpProblem(
            [2],
            objective=[(0, np.eye(2))],
            constraints=[([(0, np.eye(2))], -1.0)],
        )
        sol = solve(prob, max_iter=200)
        assert sol.status == "infeasible"
        ray = sol.infeasibility_certificate
        assert ray is not None
        # Farkas certificate: A*(ray) >= 0 with b'ray < 0
        assert float(prob.rhs @ ray) < 0

    def test_multi_block_eigenvalue(self):
        # trace split across two blocks; optimum picks the larger top eigenvalue
        c1 = np.diag([1.0, 4.0])
        c2 = np.diag([2.0, 3.0, 1.0])
        prob = SdpProblem(
            [2, 3],
            objective=[(0, c1), (1, c2)],
            constraints=[([(0, np.eye(2)), (1, np.eye(3))], 1.0)],
        )
        sol = solve(prob, tol=1e-9)
        assert sol.status == "optimal"
        assert sol.primal_value == pytest.approx(4.0, abs=1e-6)

    def test_minimize(self):
        prob = SdpProblem(
            [2],
            objective=[(0, np.diag([1.0, 2.0]))],
            constraints=[([(0, np.eye(2))], 1.0)],
            maximize=False,
        )
        sol = solve(prob, tol=1e-9)
        assert sol.status == "optimal"
        assert sol.primal_value == pytest.approx(1.0, abs=1e-6)

    def test_no_constraints_rejected(self):
        prob = SdpProblem([2], objective=[(0, np.eye(2))], constraints=[])
        with pytest.raises(SdpInputError):
            solve(prob)


class TestRegressionSuite:
    def test_random_feasible_instances(self):
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            prob = random_feasible_problem(rng)
            sol = solve(prob)
            assert sol.status == "optimal", (seed, sol.status)
            report = check_feasibility(prob, sol)
            assert report.ok, (seed, report)
            assert sol.gap <= 1e-6
            # weak duality
            assert sol.dual_value >= sol.primal_value - 1e-12

    def test_scale_invariance(self):
        rng = np.random.default_rng(7)
        prob = random_feasible_problem(rng)
        sol1 = solve(prob, tol=1e-9)
        scaled = SdpProblem(
            prob.block_dims,
            objective=[(k, 5.0 * m) for k, m in prob.dense_objective],
            constraints=[
                (list(row), r) for row, r in zip(prob.dense_constraints, prob.rhs)
            ],
        )
        sol2 = solve(scaled, tol=1e-9)
        assert sol2.primal_value == pytest.approx(5.0 * sol1.primal_value, rel=1e-8)

    def test_determinism(self):
        rng = np.random.default_rng(3)
        prob = random_feasible_problem(rng)
        sol1 = solve(prob)
        prob._compiled = None
        sol2 = solve(prob)
        assert sol1.primal_value == sol2.primal_value
        assert sol1.dual_value == sol2.dual_value
        assert sol1.status == sol2.status
        assert np.array_equal(sol1.dual, sol2.dual)


class TestFeasibilityCheck:
    def test_optimal_passes(self):
        prob = eigenvalue_problem([1.0, 2.0])
        sol = solve(prob, tol=1e-9)
        rep = check_feasibility(prob, sol)
        assert rep.ok
        assert rep.primal_residual_inf <= 1e-8 * 2

    def test_injected_negative_eigenvalue(self):
        prob = eigenvalue_problem([1.0, 2.0])
        sol = solve(prob, tol=1e-9)
        bad = [sol.primal[0] - 1e-3 * np.outer([1, 0], [1, 0])]
        from qcert.sdp.problem import SdpSolution

        tampered = SdpSolution(
            primal=bad, dual=sol.dual, primal_value=sol.primal_value,
            dual_value=sol.dual_value, gap=sol.gap, status=sol.status,
            iterations=sol.iterations,
        )
        rep = check_feasibility(prob, tampered)
        # trace constraint now violated by 1e-3 and spectrum may dip negative
        assert not rep.primal_ok

    def test_rhs_perturbation_linear(self):
        prob = eigenvalue_problem([1.0, 2.0])
        sol = solve(prob, tol=1e-9)
        perturbed = SdpProblem(
            [2],
            objective=[(0, np.diag([1.0, 2.0]))],
            constraints=[([(0, np.eye(2))], 1.0 + 1e-2)],
        )
        rep = check_feasibility(perturbed, sol)
        assert rep.primal_residual_inf == pytest.approx(1e-2, rel=1e-4)


class TestCertifiedBound:
    def test_bound_dominates(self):
        prob = eigenvalue_problem([1.0, 2.0])
        sol = solve(prob, tol=1e-9)
        bound = certified_upper_bound(prob, sol)
        assert bound >= 2.0 - 1e-9
        assert bound - sol.primal_value <= 1e-6 * max(1.0, abs(sol.primal_value))

    def test_early_stop_still_bounds(self):
        prob = eigenvalue_problem([1.0, 2.0])
        sol = solve(prob, max_iter=5)
        try:
            bound = certified_upper_bound(prob, sol)
        except UncertifiedError:
            return  # refusing is acceptable; a wrong bound is not
        assert bound >= 2.0 - 1e-9

    def test_perturbed_dual_fails(self):
        prob = eigenvalue_problem([1.0, 2.0])
        sol = solve(prob, tol=1e-9)
        sol.dual = sol.dual - 1e-3  # pushes A*(y) - C below zero
        with pytest.raises(UncertifiedError):
            certified_upper_bound(prob, sol)

    def test_zeroed_dual_fails(self):
        prob = eigenvalue_problem([1.0, 2.0])
        sol = solve(prob, tol=1e-9)
        sol.dual = np.zeros_like(sol.dual)
        with pytest.raises(UncertifiedError):
            certified_upper_bound(prob, sol)


class TestSerialization:
    def test_json_roundtrip(self):
        rng = np.random.default_rng(11)
        prob = random_feasible_problem(rng, nblocks=2, p=3, dmax=3)
        obj = prob.to_json()
        back = SdpProblem.from_json(obj)
        assert problem_digest(back) == problem_digest(prob)
        s1, s2 = solve(prob), solve(back)
        assert s1.primal_value == pytest.approx(s2.primal_value, abs=1e-9)

    def test_solution_roundtrip(self):
        prob = eigenvalue_problem([1.0, 2.0])
        sol = solve(prob, tol=1e-9)
        from qcert.sdp.problem import SdpSolution

        back = SdpSolution.from_json(sol.to_json())
        assert back.primal_value == sol.primal_value
        assert np.array_equal(back.dual, sol.dual)
        rep = check_feasibility(prob, back)
        assert rep.ok


class TestBackends:
    def test_numpy_and_numba_schur_agree(self):
        from qcert._backend import backend, set_backend

        rng = np.random.default_rng(5)
        prob = random_feasible_problem(rng)
        orig = backend()
        try:
            set_backend("numpy")
            sol_np = solve(prob)
            vals = [sol_np.primal_value]
            if orig == "numba":
                prob._compiled = None
                set_backend("numba")
                sol_nb = solve(prob)
                vals.append(sol_nb.primal_value)
                assert sol_nb.status == sol_np.status == "optimal"
                assert abs(vals[0] - vals[1]) < 1e-7
        finally:
            set_backend(orig)
