"""
Directed transition graphs between grid cells.

The safe graph records which cell a safe run came from when it placed a new
centroid; the unsafe graph records transitions of runs that ended in collision.
Vertices are never deleted, so edges into removed cells stay on record.
"""

import logging
from typing import Iterable, Set, Tuple

import networkx as nx

from models import CellId

logger = logging.getLogger(__name__)


class TransitionGraph:
    """Directed graph over cell ids backed by a networkx DiGraph."""

    def __init__(self, vertices: Iterable[CellId] = ()):
        self._graph = nx.DiGraph()
        self._graph.add_nodes_from(vertices)

    @property
    def vertices(self) -> Set[CellId]:
        return set(self._graph.nodes)

    @property
    def edges(self) -> Set[Tuple[CellId, CellId]]:
        return set(self._graph.edges)

    def add_vertex(self, cell: CellId) -> None:
        self._graph.add_node(cell)

    def add_edge(self, source: CellId, target: CellId) -> None:
        """Record a transition; self-loops are ignored."""
        if source != target:
            self._graph.add_edge(source, target)

    def __len__(self) -> int:
        return self._graph.number_of_nodes()

    def ancestors(self, cell: CellId) -> Set[CellId]:
        """
        All vertices with a directed path to a cell, plus the cell itself.

        Depth-first search over the reversed edges; cycles are handled by the
        visited set inside the traversal.

        Parameters:
            cell (CellId): Query vertex; need not be in the graph.

        Returns:
            Set[CellId]: Ancestor set including the query.
        """
        if cell not in self._graph:
            return {cell}
        return set(nx.dfs_preorder_nodes(self._graph.reverse(copy=False), cell))
