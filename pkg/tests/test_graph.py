"""
Tests for the transition graph.
"""

import numpy as np

from graph import TransitionGraph


def test_ancestors_of_chain():
    """Ancestors follow edges backwards and include the query."""
    g = TransitionGraph()
    g.add_edge((0, 0, 0), (1, 0, 0))
    g.add_edge((1, 0, 0), (2, 0, 0))
    g.add_edge((3, 0, 0), (2, 0, 0))
    assert g.ancestors((2, 0, 0)) == {(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0)}
    assert g.ancestors((1, 0, 0)) == {(0, 0, 0), (1, 0, 0)}


def test_ancestors_with_cycle():
    """Cycles terminate and every member of the cycle is an ancestor."""
    g = TransitionGraph()
    g.add_edge((0, 0, 0), (1, 0, 0))
    g.add_edge((1, 0, 0), (0, 0, 0))
    g.add_edge((1, 0, 0), (2, 0, 0))
    assert g.ancestors((2, 0, 0)) == {(0, 0, 0), (1, 0, 0), (2, 0, 0)}


def test_ancestors_of_unknown_vertex_is_itself():
    """A vertex not in the graph is its only ancestor."""
    assert TransitionGraph().ancestors((4, 2, 2)) == {(4, 2, 2)}


def test_self_loops_ignored():
    """Edges from a cell to itself are not recorded."""
    g = TransitionGraph([(0, 0, 0)])
    g.add_edge((0, 0, 0), (0, 0, 0))
    assert g.edges == set()
    assert len(g) == 1



def _closure_ancestors(edges, target):
    """Ancestors by repeated relaxation until nothing changes."""
    reached = {target}
    changed = True
    while changed:
        changed = False
        for u, v in edges:
            if v in reached and u not in reached:
                reached.add(u)
                changed = True
    return reached


def test_ancestors_match_transitive_closure():
    """Ancestor sets agree with a brute-force closure on random small graphs."""
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 11))
        vertices = [(i, 0, 0) for i in range(n)]
        density = rng.uniform(0.05, 0.5)
        edges = [
            (u, v)
            for u in vertices
            for v in vertices
            if u != v and rng.random() < density
        ]
        g = TransitionGraph(vertices)
        for u, v in edges:
            g.add_edge(u, v)
        for target in vertices:
            assert g.ancestors(target) == _closure_ancestors(edges, target)
