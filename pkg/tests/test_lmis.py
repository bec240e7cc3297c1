import numpy as np
import pytest

from distfilt.lmis import (
    SynthesisParams,
    build_centralized,
    build_decoupled,
    centralized_layout,
    copy_set,
    extract_gains,
    node_layout,
    theorem1_bounds,
)
from distfilt.matrices import symmetrize
from distfilt.model import derive

from .test_model import cycle_graph, reference_nodes, reference_plant


@pytest.fixture(scope="module")
def reference():
    plant = reference_plant()
    nodes = reference_nodes()
    graph = cycle_graph(6)
    derived = {node.index: derive(plant, node, graph) for node in nodes}
    return plant, nodes, graph, derived


def random_assignment(rng, graph, n, beta_scale=10.0):
    xs = {}
    for j in range(1, graph.n_nodes + 1):
        r = rng.standard_normal((n, n))
        xs[j] = symmetrize(r @ r.T) + 0.5 * np.eye(n)
    fs = {j: rng.standard_normal((n, n)) for j in range(1, graph.n_nodes + 1)}
    beta = float(beta_scale * rng.random())
    return xs, fs, beta


def test_node_layout_variable_count(reference):
    _, _, graph, _ = reference
    layout = node_layout(1, graph, n=6, mode="full", with_beta=True)
    assert layout.nvars == 36 + 1 + 6 * 21 == 163


def test_copy_set_modes(reference):
    _, _, graph, _ = reference
    assert copy_set(2, graph, "full") == (1, 2, 3, 4, 5, 6)
    assert copy_set(2, graph, "neighborhood") == (1, 2)


def test_couplings_dimension(reference):
    _, _, graph, derived = reference
    layout = node_layout(1, graph, n=6)
    blocks = build_decoupled(1, layout, derived, graph, SynthesisParams())
    # order: stability, couplings, gain bound, PD floors
    assert blocks[0].dim == 6 + 10  # state + stacked disturbance channels
    assert blocks[1].dim == 12  # one in-neighbor: n * (p + 1)
    assert blocks[2].dim == 12
    assert [b.dim for b in blocks[3:]] == [6] * 6


def test_couplings_decoupled_diagonal_case(reference):
    # with F = 0 and beta = 0 the couplings block is block diagonal, and
    # feasibility reduces to the certificate copies being PD
    _, _, graph, derived = reference
    params = SynthesisParams(delta=0.0)
    layout = node_layout(1, graph, n=6)
    blocks = build_decoupled(1, layout, derived, graph, params)
    rng = np.random.default_rng(17)
    xs, _, _ = random_assignment(rng, graph, 6)
    values = {"F": np.zeros((6, 6)), "beta": 0.0}
    values.update({f"X{j}": xs[j] for j in range(1, 7)})
    coup = blocks[1].evaluate(layout.pack(values))
    d1, d6 = derived[1], derived[6]
    expected = np.zeros((12, 12))
    expected[:6, :6] = -(2 * d1.alpha / (d1.q + 1)) * xs[1]
    expected[6:, 6:] = -(2 * d6.alpha / (d6.q + 1)) * xs[6]
    assert np.allclose(coup, expected, atol=1e-12)
    assert np.linalg.eigvalsh(coup).max() < 0


def test_block_coefficients_exactly_symmetric(reference):
    _, _, graph, derived = reference
    layout = node_layout(3, graph, n=6)
    for blk in build_decoupled(3, layout, derived, graph, SynthesisParams()):
        assert np.array_equal(blk.G0, blk.G0.T)
        assert np.array_equal(blk.basis, np.transpose(blk.basis, (0, 2, 1)))


def test_substitution_identity(reference):
    # decoupled blocks with zero margin and synchronized copies equal the
    # centralized blocks entry for entry: same constant term, identical
    # coefficient matrix for every corresponding variable, and identical
    # direct evaluations
    from distfilt.lmis import centralized_maps, decoupled_maps

    _, _, graph, derived = reference
    params = SynthesisParams(delta=0.0)
    rng = np.random.default_rng(18)
    central = centralized_layout(6, 6)

    # coefficient-level identity (checked once per node; blocks are fixed)
    for k in range(1, 7):
        local = node_layout(k, graph, n=6)
        dec = build_decoupled(k, local, derived, graph, params)
        cen = build_centralized(k, central, derived, graph, params)
        rename = {"F": f"F{k}", "beta": "beta"}
        rename.update({f"X{j}": f"X{j}" for j in range(1, 7)})
        for blk_d, blk_c in zip(dec[:3], cen):
            assert np.array_equal(blk_d.G0, blk_c.G0)
            for name in local.names():
                sl_l = local.slice_of(name)
                sl_c = central.slice_of(rename[name])
                assert np.array_equal(blk_d.basis[sl_l], blk_c.basis[sl_c])

    # evaluation-level identity on 100 random instances
    for trial in range(100):
        xs, fs, beta = random_assignment(rng, graph, 6)
        k = trial % 6 + 1
        local_values = {"F": fs[k], "beta": beta}
        local_values.update({f"X{j}": xs[j] for j in range(1, 7)})
        global_values = {"beta": beta}
        global_values.update({f"X{j}": xs[j] for j in range(1, 7)})
        global_values.update({f"F{j}": fs[j] for j in range(1, 7)})
        dec_maps = decoupled_maps(k, derived, graph, params)
        cen_maps = centralized_maps(k, derived, graph, params)
        for fn_d, fn_c in zip(dec_maps[:3], cen_maps):
            assert np.array_equal(fn_d(local_values), fn_c(global_values))


def test_margin_moves_strictly_inside(reference):
    # an assignment exactly on the delta-margin boundary satisfies the
    # strict original conditions with room delta * lambda_min(X)
    _, _, graph, derived = reference
    layout = node_layout(1, graph, n=6)
    with_margin = build_decoupled(1, layout, derived, graph, SynthesisParams(delta=1e-2))
    no_margin = build_decoupled(1, layout, derived, graph, SynthesisParams(delta=0.0))
    rng = np.random.default_rng(19)
    xs, fs, beta = random_assignment(rng, graph, 6)
    values = {"F": fs[1], "beta": beta}
    values.update({f"X{j}": xs[j] for j in range(1, 7)})
    x = layout.pack(values)
    gap = with_margin[1].evaluate(x) - no_margin[1].evaluate(x)
    assert np.allclose(gap, 1e-2 * np.eye(12), atol=1e-12)
    stab_gap = with_margin[0].evaluate(x) - no_margin[0].evaluate(x)
    expected = np.zeros((16, 16))
    expected[:6, :6] = 1e-2 * xs[1]
    assert np.allclose(stab_gap, expected, atol=1e-12)


def test_infeasible_for_huge_beta(reference):
    from distfilt.conic import check_feasible
    from distfilt.conic import ConicProblem

    _, _, graph, derived = reference
    layout = node_layout(1, graph, n=6)
    blocks = build_decoupled(1, layout, derived, graph, SynthesisParams())
    rng = np.random.default_rng(20)
    xs, fs, _ = random_assignment(rng, graph, 6)
    values = {"F": fs[1], "beta": 1e9}
    values.update({f"X{j}": xs[j] for j in range(1, 7)})
    prob = ConicProblem(nvars=layout.nvars, P=None, q=np.zeros(layout.nvars), blocks=blocks)
    ok, worst = check_feasible(layout.pack(values), prob, tol=1e-6)
    assert not ok and worst > 1.0


def test_extract_gains_identity_weight(reference):
    plant, nodes, graph, derived = reference
    rng = np.random.default_rng(21)
    fs = [rng.standard_normal((6, 6)) for _ in range(6)]
    xs = [np.eye(6) for _ in range(6)]
    gains = extract_gains(xs, fs, plant, nodes, [derived[k] for k in range(1, 7)])
    for K, F in zip(gains.K, fs):
        assert np.allclose(K, F)
    assert np.allclose(gains.P, np.eye(6))


def test_extract_gains_zero_feedthrough_reduction(reference):
    plant, nodes, graph, derived = reference
    rng = np.random.default_rng(22)
    xs = []
    for _ in range(6):
        r = rng.standard_normal((6, 6))
        xs.append(symmetrize(r @ r.T) + np.eye(6))
    fs = [rng.standard_normal((6, 6)) for _ in range(6)]
    gains = extract_gains(xs, fs, plant, nodes, [derived[k] for k in range(1, 7)])
    for X, node, L in zip(xs, nodes, gains.L):
        d = derived[node.index]
        assert np.allclose(L, np.linalg.inv(X) @ node.C.T @ d.E_inv, atol=1e-9)


def test_extract_gains_scale_consistency(reference):
    plant, nodes, graph, derived = reference
    rng = np.random.default_rng(23)
    r = rng.standard_normal((6, 6))
    X = symmetrize(r @ r.T) + np.eye(6)
    F = rng.standard_normal((6, 6))
    dl = [derived[k] for k in range(1, 7)]
    g1 = extract_gains([X] * 6, [F] * 6, plant, nodes, dl)
    g2 = extract_gains([3.0 * X] * 6, [3.0 * F] * 6, plant, nodes, dl)
    assert np.allclose(g1.K[0], g2.K[0], atol=1e-10)


def test_extract_gains_singular_certificate(reference):
    plant, nodes, _, derived = reference
    xs = [np.diag([1.0, 1, 1, 1, 1, 1e-15])] + [np.eye(6)] * 5
    fs = [np.eye(6)] * 6
    with pytest.raises(np.linalg.LinAlgError, match="node 1"):
        extract_gains(xs, fs, plant, nodes, [derived[k] for k in range(1, 7)])


def test_theorem1_bound_zero_gain():
    ok, bound = theorem1_bounds(np.eye(4) * 2.5, np.zeros((4, 4)), rho=7.0)
    assert ok and bound > 0


def test_theorem1_bound_arithmetic():
    # X = I, n = 2, rho = 1: bound = sqrt(2) * ||I||_F^2 = 2 sqrt(2) < 3
    F = np.zeros((2, 2))
    F[0, 0] = 3.0
    ok, bound = theorem1_bounds(np.eye(2), F, rho=1.0)
    assert bound == pytest.approx(2.0 * np.sqrt(2.0))
    assert not ok
