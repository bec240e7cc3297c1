import numpy as np
import pytest

from distfilt.conic import (
    AffineBlock,
    ConicProblem,
    QuadraticObjective,
    SolveOptions,
    VarLayout,
    blocks_from_maps,
    canonicalize,
    check_feasible,
    dump_problem,
    load_problem,
    solve,
)
from distfilt.matrices import symmetrize


def scalar_block(nvars, var_index, g0, coeff):
    basis = np.zeros((nvars, 1, 1))
    basis[var_index, 0, 0] = coeff
    return AffineBlock(dim=1, G0=np.array([[g0]]), basis=basis)


def test_min_quadratic_interior():
    # min x^2 subject to x - 1 <= 0 : unconstrained optimum is feasible
    prob = ConicProblem(
        nvars=1,
        P=np.array([[2.0]]),
        q=np.zeros(1),
        blocks=[scalar_block(1, 0, -1.0, 1.0)],
    )
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(0.0, abs=1e-6)


def test_min_linear_active_bound():
    # min -x subject to x - 1 <= 0 : optimum sits on the constraint
    prob = ConicProblem(
        nvars=1,
        P=None,
        q=np.array([-1.0]),
        blocks=[scalar_block(1, 0, -1.0, 1.0)],
    )
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-5)


def test_matrix_block_projection_problem():
    # min ||X - T||^2 over PSD 2x2 X (as -X <= 0), T indefinite:
    # optimum is the PSD projection of T.
    layout = VarLayout()
    layout.add_symmetric("X", 2)
    t = np.array([[1.0, 0.0], [0.0, -2.0]])
    obj = QuadraticObjective(layout)
    obj.add_square("X", t, weight=2.0)

    def psd_map(v):
        return -v["X"]

    prob = canonicalize(obj, [psd_map], layout)
    sol = solve(prob)
    assert sol.status == "optimal"
    x = layout.unpack(sol.x)["X"]
    assert np.allclose(x, np.diag([1.0, 0.0]), atol=1e-5)


def test_lower_bounds_as_box():
    # min (x+2)^2 with x >= 0 pins x at the bound
    layout = VarLayout()
    layout.add_scalar("x")
    obj = QuadraticObjective(layout)
    obj.add_square("x", -2.0, weight=2.0)
    prob = canonicalize(obj, [], layout, lower={"x": 0.0})
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(0.0, abs=1e-6)


def test_check_feasible_trivial():
    ok, worst = check_feasible(np.zeros(1), _const_block_problem(-1.0))
    assert ok and worst == pytest.approx(-1.0)
    ok, worst = check_feasible(np.zeros(1), _const_block_problem(+1.0))
    assert not ok and worst == pytest.approx(+1.0)


def _const_block_problem(sign):
    basis = np.zeros((1, 2, 2))
    return ConicProblem(
        nvars=1,
        P=None,
        q=np.zeros(1),
        blocks=[AffineBlock(dim=2, G0=sign * np.eye(2), basis=basis)],
    )


def test_infeasible_detection():
    # x <= -1 and x >= 1 simultaneously
    prob = ConicProblem(
        nvars=1,
        P=None,
        q=np.zeros(1),
        blocks=[scalar_block(1, 0, 1.0, 1.0), scalar_block(1, 0, 1.0, -1.0)],
    )
    sol = solve(prob, SolveOptions(max_iter=20000))
    assert sol.status == "infeasible"


def test_solver_deterministic():
    rng = np.random.default_rng(13)
    layout = VarLayout()
    layout.add_symmetric("X", 3)
    t = symmetrize(rng.standard_normal((3, 3)))
    obj = QuadraticObjective(layout)
    obj.add_square("X", t, weight=1.0)
    prob = canonicalize(obj, [lambda v: -v["X"] + 0.1 * np.eye(3)], layout)
    s1 = solve(prob)
    s2 = solve(prob)
    assert s1.status == s2.status == "optimal"
    assert np.array_equal(s1.x, s2.x)
    assert s1.iterations == s2.iterations


def test_canonical_objective_matches_matrix_form():
    rng = np.random.default_rng(14)
    layout = VarLayout()
    layout.add_symmetric("X", 2)
    assert layout.nvars == 3
    t = symmetrize(rng.standard_normal((2, 2)))
    lam = symmetrize(rng.standard_normal((2, 2)))
    c = 1.7
    obj = QuadraticObjective(layout)
    obj.add_square("X", t, weight=c)
    obj.add_inner("X", lam, coeff=-1.0)
    P, q, c0 = obj.build()
    for _ in range(20):
        x_mat = symmetrize(rng.standard_normal((2, 2)))
        xv = layout.pack({"X": x_mat})
        canonical = 0.5 * xv @ P @ xv + q @ xv + c0
        matrix_form = 0.5 * c * np.linalg.norm(t - x_mat) ** 2 - np.trace(lam.T @ x_mat)
        assert canonical == pytest.approx(matrix_form, rel=1e-12, abs=1e-12)


def test_beta_only_layout():
    layout = VarLayout()
    layout.add_scalar("beta")
    assert layout.nvars == 1


def test_layout_collision():
    layout = VarLayout()
    layout.add_scalar("beta")
    with pytest.raises(ValueError, match="collision"):
        layout.add_scalar("beta")


def test_layout_pack_unpack_roundtrip():
    rng = np.random.default_rng(15)
    layout = VarLayout()
    layout.add_matrix("F", 3, 2)
    layout.add_scalar("beta")
    layout.add_symmetric("X", 3)
    values = {
        "F": rng.standard_normal((3, 2)),
        "beta": 4.2,
        "X": symmetrize(rng.standard_normal((3, 3))),
    }
    x = layout.pack(values)
    back = layout.unpack(x)
    assert np.array_equal(back["F"], values["F"])
    assert back["beta"] == values["beta"]
    assert np.array_equal(back["X"], values["X"])
    assert np.array_equal(layout.pack(back), x)


def test_blocks_from_maps_matches_direct_evaluation():
    rng = np.random.default_rng(16)
    layout = VarLayout()
    layout.add_symmetric("X", 3)
    layout.add_scalar("b")
    a = rng.standard_normal((3, 3))

    def mapping(v):
        m = v["X"] @ a
        return m + m.T + v["b"] * np.eye(3)

    (blk,) = blocks_from_maps([mapping], layout)
    x = rng.standard_normal(layout.nvars)
    direct = mapping(layout.unpack(x))
    assert np.allclose(blk.evaluate(x), direct, atol=1e-12)


def test_blocks_reject_asymmetric():
    basis = np.zeros((1, 2, 2))
    basis[0, 0, 1] = 1.0  # not symmetric
    with pytest.raises(ValueError):
        AffineBlock(dim=2, G0=np.zeros((2, 2)), basis=basis)


def test_dump_and_load_roundtrip(tmp_path):
    layout = VarLayout()
    layout.add_symmetric("X", 2)
    obj = QuadraticObjective(layout)
    obj.add_square("X", np.eye(2), weight=1.0)
    prob = canonicalize(obj, [lambda v: -v["X"]], layout, lower={"X": -10.0})
    path = tmp_path / "prob.txt"
    dump_problem(prob, path)
    back = load_problem(path)
    assert back.nvars == prob.nvars
    assert np.array_equal(back.q, prob.q)
    assert np.array_equal(back.P, prob.P)
    assert np.array_equal(back.lower, prob.lower)
    assert len(back.blocks) == len(prob.blocks)
    assert np.array_equal(back.blocks[0].G0, prob.blocks[0].G0)
    assert np.array_equal(back.blocks[0].basis, prob.blocks[0].basis)


def test_warm_start_reuse():
    layout = VarLayout()
    layout.add_symmetric("X", 3)
    obj = QuadraticObjective(layout)
    obj.add_square("X", 2.0 * np.eye(3), weight=1.0)
    prob = canonicalize(obj, [lambda v: v["X"] - 3.0 * np.eye(3)], layout)
    cold = solve(prob)
    assert cold.status == "optimal"
    warm = solve(prob, warm=cold.state)
    assert warm.status == "optimal"
    assert warm.iterations <= cold.iterations
    assert np.allclose(warm.x, cold.x, atol=1e-6)
