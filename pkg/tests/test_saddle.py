import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from cfoed import CaseKind, DesignDegeneracyError, ModelProblemSpec, OptimizationError
from cfoed.fem import ExperimentDesign, Mesh1D, build_case_system, forward_solve
from cfoed.oracle import constraint_force, data_at
from cfoed.saddle import (
    DataVector,
    build_saddle,
    ecfm_inverse,
    solve_constrained,
    standard_inverse,
)

from conftest import single


def green(x, s, k=1.0):
    """Displacement at x from a unit impulse at s (u(0)=0, traction-free end)."""
    return min(x, s) / k


def test_saddle_matrix_symmetric(mesh64):
    sys = build_case_system(CaseKind.PARAMETERIZED_SOURCE, ModelProblemSpec(1, 1, 1), mesh64)
    d = ExperimentDesign.on_mesh(mesh64, [0.3, 0.71])
    S = build_saddle(sys, [0.4], d, [0.1, 0.2])
    np.testing.assert_array_equal(S.D, S.D.T)


def test_self_generated_data_gives_zero_force(mesh64):
    sys = build_case_system(CaseKind.PARAMETERIZED_MATERIAL, ModelProblemSpec(1, 2, -1), mesh64)
    d = ExperimentDesign.on_mesh(mesh64, [0.25, 0.6, 0.93])
    theta = forward_solve(sys, [1.7])
    from cfoed.fem import measurement_operator
    V = measurement_operator(d, mesh64).matrix @ theta
    sol = solve_constrained(sys, [1.7], d, DataVector(V))
    assert np.abs(sol.lam).max() < 1e-10
    assert sol.state_residual < 1e-10 and sol.data_residual < 1e-10


def test_bc_force_matches_closed_form(mesh64):
    spec = ModelProblemSpec(1, 0, 2)
    sys = build_case_system(CaseKind.PARAMETERIZED_BC, spec, mesh64)
    beta = mesh64.nodes[19]
    sol = solve_constrained(sys, [0.5], single(mesh64, beta), [data_at(spec, beta)])
    assert sol.lam[0] == pytest.approx(1.5, abs=1e-8)


@pytest.mark.parametrize("case", list(CaseKind))
def test_nodal_force_matches_oracle(case, mesh64, rng):
    spec = ModelProblemSpec(1.3, 0.8, -0.6)
    sys = build_case_system(case, spec, mesh64)
    for _ in range(5):
        beta = mesh64.nodes[rng.integers(1, 65)]
        eps = rng.uniform(0.4, 2.0)
        sol = solve_constrained(sys, [eps], single(mesh64, beta), [data_at(spec, beta)])
        assert sol.lam[0] == pytest.approx(constraint_force(case, spec, eps, beta).lam, abs=1e-8)


def test_coincident_measurements_degenerate(mesh64):
    sys = build_case_system(CaseKind.PARAMETERIZED_BC, ModelProblemSpec(), mesh64)
    d = ExperimentDesign.on_mesh(mesh64, [0.5, 0.5], min_separation=0.0)
    with pytest.raises(DesignDegeneracyError):
        solve_constrained(sys, [1.0], d, [0.5, 0.5])


def test_measurement_on_dirichlet_node_degenerate(mesh64):
    sys = build_case_system(CaseKind.PARAMETERIZED_BC, ModelProblemSpec(), mesh64)
    d = ExperimentDesign([0.0], [[0.0, 1.0]])
    with pytest.raises(DesignDegeneracyError):
        solve_constrained(sys, [1.0], d, [0.0])


def test_wrong_data_length(mesh64):
    sys = build_case_system(CaseKind.PARAMETERIZED_BC, ModelProblemSpec(), mesh64)
    with pytest.raises(ValueError):
        solve_constrained(sys, [1.0], single(mesh64, 0.5), [0.1, 0.2])


# inverse problems

@pytest.mark.parametrize("case", [CaseKind.PARAMETERIZED_BC, CaseKind.PARAMETERIZED_SOURCE,
                                  CaseKind.PARAMETERIZED_MATERIAL])
@pytest.mark.parametrize("eps0", [0.3, 1.0, 3.0])
def test_consistent_data_both_methods(case, eps0, mesh64):
    spec = ModelProblemSpec(1.4, 1.1, 0.7)
    sys = build_case_system(case, spec, mesh64)
    d = ExperimentDesign.on_mesh(mesh64, [0.5])
    data = [data_at(spec, 0.5)]
    truth = {CaseKind.PARAMETERIZED_BC: spec.p, CaseKind.PARAMETERIZED_SOURCE: spec.b,
             CaseKind.PARAMETERIZED_MATERIAL: spec.k}[case]
    support = (0.05, 10.0)
    e = ecfm_inverse(sys, d, data, [eps0], support)
    s = standard_inverse(sys, d, data, [eps0], support)
    assert e.eps[0] == pytest.approx(truth, abs=1e-6)
    assert s.eps[0] == pytest.approx(e.eps[0], abs=1e-6)
    assert e.objective < 1e-12


def test_misspecified_single_measurement(mesh64):
    spec = ModelProblemSpec(1, 1, 1)
    sys = build_case_system(CaseKind.MISSPECIFIED_SOURCE, spec, mesh64)
    d = single(mesh64, 0.5)
    V = [data_at(spec, 0.5)]
    scan = np.linspace(0, 4, 40001)
    lam2 = [constraint_force(CaseKind.MISSPECIFIED_SOURCE, spec, e, 0.5).lam ** 2 for e in scan]
    e = ecfm_inverse(sys, d, V, [1.0])
    assert e.eps[0] == pytest.approx(scan[int(np.argmin(lam2))], abs=1e-4)
    assert e.eps[0] == pytest.approx(7 / 3, abs=1e-6)
    # one measurement can always be hit, so the force vanishes and both methods agree
    s = standard_inverse(sys, d, V, [1.0])
    assert s.eps[0] == pytest.approx(7 / 3, abs=1e-6)


def _misspecified_scan(spec, xs):
    """Closed-form ECFM and misfit objectives for several measurements.

    With one measurement force lam_j at x_j, the model displacement at x_i is
    w(x_i) + sum_j G(x_i, x_j) lam_j; matching the data fixes lam.
    """
    xs = np.asarray(xs)
    G = np.minimum.outer(xs, xs) / spec.k
    V = np.array([data_at(spec, x) for x in xs])

    def w(eps):
        return eps * (xs - 0.5 * xs**2) / spec.k

    def ecfm(eps):
        lam = np.linalg.solve(G, V - w(eps))
        return 0.5 * lam @ lam

    def misfit(eps):
        r = w(eps) - V
        return 0.5 * r @ r

    return ecfm, misfit


def test_misspecified_multi_measurement_against_green_function(mesh64):
    spec = ModelProblemSpec(1, 1, 1)
    xs = [0.25, 0.5, 0.75, 1.0]
    sys = build_case_system(CaseKind.MISSPECIFIED_SOURCE, spec, mesh64)
    d = ExperimentDesign.on_mesh(mesh64, xs)
    V = [data_at(spec, x) for x in xs]
    ecfm, misfit = _misspecified_scan(spec, xs)
    ref_e = minimize_scalar(ecfm, bracket=(0, 5), tol=1e-12).x
    ref_s = minimize_scalar(misfit, bracket=(0, 5), tol=1e-12).x
    e = ecfm_inverse(sys, d, V, [1.0])
    s = standard_inverse(sys, d, V, [1.0])
    assert e.eps[0] == pytest.approx(ref_e, abs=1e-6)
    assert s.eps[0] == pytest.approx(ref_s, abs=1e-6)
    assert e.objective == pytest.approx(ecfm(ref_e), rel=1e-8)
    assert e.objective > 1e-3  # inconsistency flagged
    assert abs(e.eps[0] - s.eps[0]) > 1e-3


def test_no_measurements_is_an_error(mesh64):
    sys = build_case_system(CaseKind.PARAMETERIZED_BC, ModelProblemSpec(), mesh64)
    empty = ExperimentDesign([], [])
    with pytest.raises(OptimizationError):
        standard_inverse(sys, empty, [], [1.0])
    with pytest.raises(OptimizationError):
        ecfm_inverse(sys, empty, [], [1.0])


def test_support_clamps_estimate(mesh64):
    spec = ModelProblemSpec(1, 0, 2)
    sys = build_case_system(CaseKind.PARAMETERIZED_BC, spec, mesh64)
    d = single(mesh64, 1.0)
    res = standard_inverse(sys, d, [data_at(spec, 1.0)], [0.5], (0.0, 1.0))
    assert res.eps[0] == pytest.approx(1.0)
    assert res.objective > 0


def test_green_function_matches_fem(mesh64):
    # impulse response of the reduced system reproduces min(x, s)
    sys = build_case_system(CaseKind.MISSPECIFIED_SOURCE, ModelProblemSpec(), mesh64)
    from cfoed.fem import ReducedOperator
    op = ReducedOperator(sys, [0.0])
    s_node = 40
    rhs = np.zeros(64)
    rhs[s_node - 1] = 1.0
    u = sys.expand(op.solve(rhs))
    s = mesh64.nodes[s_node]
    np.testing.assert_allclose(u, [green(x, s) for x in mesh64.nodes], atol=1e-13)
