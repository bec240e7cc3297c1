import numpy as np
import pytest

from distfilt.model import (
    CommGraph,
    ModelError,
    Plant,
    SensorNode,
    check_assumptions,
    derive,
    neighborhoods,
    pad_disturbances,
)


def cycle_graph(n):
    return CommGraph(n_nodes=n, edges=frozenset((k, k % n + 1) for k in range(1, n + 1)))


def reference_plant():
    a = np.array(
        [
            [0.3775, 0, 0, 0, 0, 0],
            [0.2959, 0.3510, 0, 0, 0, 0],
            [1.4751, 0.6232, 1.0078, 0, 0, 0],
            [0.2340, 0, 0, 0.5596, 0, 0],
            [0, 0, 0, 0.4437, 1.1878, -0.0215],
            [0, 0, 0, 0, 2.2023, 1.0039],
        ]
    )
    b = np.hstack([0.1 * np.eye(6), np.zeros((6, 2))])
    return Plant(A=a, B=b)


def reference_nodes(alpha=2.0):
    nodes = []
    for k in range(1, 7):
        c = np.zeros((2, 6))
        c[0, k - 1] = 1.0
        c[1, k % 6] = 1.0
        nodes.append(
            SensorNode(
                index=k,
                C=c,
                D=np.zeros((2, 8)),
                Dbar=0.01 * np.eye(2),
                alpha=alpha,
            )
        )
    return nodes


def test_neighborhoods_three_cycle():
    g = cycle_graph(3)
    sources, sinks = neighborhoods(g, 2)
    assert sources == {1}
    assert sinks == {3}


def test_neighborhoods_empty():
    g = CommGraph(n_nodes=3, edges=frozenset())
    assert neighborhoods(g, 1) == (frozenset(), frozenset())


def test_neighborhoods_reference_graph():
    g = cycle_graph(6)
    sources, sinks = neighborhoods(g, 1)
    assert sources == {6}
    assert sinks == {2}


def test_neighborhood_index_out_of_range():
    with pytest.raises(ModelError):
        cycle_graph(3).in_neighbors(4)


def test_graph_rejects_self_loop():
    with pytest.raises(ModelError):
        CommGraph(n_nodes=2, edges=frozenset({(1, 1)}))


def test_balanced_cycle():
    g = cycle_graph(6)
    assert g.is_balanced()
    assert g.is_strongly_connected()


def test_star_not_balanced():
    g = CommGraph(n_nodes=6, edges=frozenset((1, k) for k in range(2, 7)))
    assert not g.is_balanced()
    assert not g.is_strongly_connected()


def test_degree_sums_match_edge_count():
    g = cycle_graph(5)
    total_in = sum(g.in_degree(k) for k in range(1, 6))
    total_out = sum(g.out_degree(k) for k in range(1, 6))
    assert total_in == total_out == len(g.edges)


def test_derive_zero_direct_feedthrough():
    plant = reference_plant()
    node = reference_nodes()[0]
    g = cycle_graph(6)
    d = derive(plant, node, g)
    assert np.allclose(d.E, 1e-4 * np.eye(2))
    assert np.allclose(d.Atilde, plant.A + 2.0 * np.eye(6))
    assert np.allclose(d.Btilde, np.hstack([plant.B, np.zeros((6, 2))]))
    assert d.p == 1 and d.q == 1


def test_derive_alpha_zero_reduces_to_plant():
    plant = Plant(A=np.array([[0.2, 0.0], [0.1, -0.3]]), B=0.5 * np.eye(2))
    with pytest.raises(ModelError):
        SensorNode(index=1, C=np.eye(2), D=np.zeros((2, 2)), Dbar=0.1 * np.eye(2), alpha=0.0)
    # alpha must be positive, so test the limit via a tiny alpha instead
    node = SensorNode(index=1, C=np.eye(2), D=np.zeros((2, 2)), Dbar=0.1 * np.eye(2), alpha=1e-12)
    g = CommGraph(n_nodes=1, edges=frozenset())
    d = derive(plant, node, g)
    assert np.allclose(d.Atilde, plant.A, atol=1e-10)


def test_derive_formula_term_by_term():
    # independent dense arithmetic for every derived matrix
    rng = np.random.default_rng(12)
    n, m, r, s = 4, 3, 2, 2
    plant = Plant(A=rng.standard_normal((n, n)), B=rng.standard_normal((n, m)))
    node = SensorNode(
        index=1,
        C=rng.standard_normal((r, n)),
        D=0.3 * rng.standard_normal((r, m)),
        Dbar=np.eye(r) + 0.1 * rng.standard_normal((r, r)),
        alpha=1.7,
    )
    g = CommGraph(n_nodes=1, edges=frozenset())
    d = derive(plant, node, g)

    e_ref = node.D @ node.D.T + node.Dbar @ node.Dbar.T
    e_inv_ref = np.linalg.inv(e_ref)
    assert np.allclose(d.E, e_ref)
    assert np.allclose(
        d.Atilde, plant.A + 1.7 * np.eye(n) - plant.B @ node.D.T @ e_inv_ref @ node.C
    )
    assert np.allclose(
        d.Btilde,
        np.hstack(
            [
                plant.B @ (np.eye(m) - node.D.T @ e_inv_ref @ node.D),
                -plant.B @ node.D.T @ e_inv_ref @ node.Dbar,
            ]
        ),
    )
    assert np.allclose(d.obs_gram, node.C.T @ e_inv_ref @ node.C)


def test_derive_singular_noise_raises():
    plant = reference_plant()
    node = SensorNode(index=3, C=np.zeros((2, 6)), D=np.zeros((2, 8)), Dbar=np.zeros((2, 2)), alpha=1.0)
    with pytest.raises(ModelError, match="node 3.*degenerate"):
        derive(plant, node, cycle_graph(6))


def test_reference_scenario_assumptions():
    report = check_assumptions(reference_plant(), reference_nodes(), cycle_graph(6))
    assert report.connected
    assert report.balanced
    assert all(report.controllable)
    assert report.ok


def test_controllability_rank_oracle():
    # check against numpy's independent rank computation
    plant = reference_plant()
    nodes = reference_nodes()
    g = cycle_graph(6)
    for node in nodes:
        d = derive(plant, node, g)
        blocks = [d.Btilde]
        for _ in range(plant.n - 1):
            blocks.append(d.Atilde @ blocks[-1])
        rank = np.linalg.matrix_rank(np.hstack(blocks))
        report = check_assumptions(plant, [node], g)
        assert report.controllable[0] == (rank == plant.n)


def test_uncontrollable_pair_detected_and_padded():
    # no disturbance input at all -> B = 0 wide, derived pair uncontrollable
    plant = Plant(A=np.diag([0.1, 0.2]), B=np.zeros((2, 1)))
    node = SensorNode(index=1, C=np.eye(2), D=np.zeros((2, 1)), Dbar=0.1 * np.eye(2), alpha=1.0)
    g = CommGraph(n_nodes=1, edges=frozenset())
    report = check_assumptions(plant, [node], g)
    assert not report.controllable[0]
    plant2, nodes2 = pad_disturbances(plant, [node], eps=1e-6)
    report2 = check_assumptions(plant2, nodes2, g)
    assert report2.controllable[0]
