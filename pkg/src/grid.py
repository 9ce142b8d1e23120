"""
Delta-covering grid over the car-following state space.

A CoveringGrid holds the centroids of a set of L-infinity boxes (half-width
delta per dimension) whose union covers the represented set. Lattice cells are
indexed by their per-dimension position; centroids added by set expansion get
ids past the end of the lattice so that they sort after every lattice cell.
"""

import itertools
import logging
import math
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from exceptions import GridExhaustedError, GridMismatchError
from models import CellId, Delta, DumpCell, SafeSetDump, State, StateBounds
from version import __version__

logger = logging.getLogger(__name__)

# Slack for floating-point comparisons against neighborhood edges
_TOL = 1e-9


def lattice_axis(lower: float, upper: float, width: float) -> np.ndarray:
    """
    Centroid coordinates along one dimension.

    Centroids sit at lower + width + 2*width*k; the last one is clipped to the
    upper bound. A range narrower than one cell gets a single centroid at its
    midpoint.

    Parameters:
        lower (float): Dimension minimum.
        upper (float): Dimension maximum.
        width (float): Neighborhood half-width.

    Returns:
        np.ndarray: Sorted centroid coordinates.
    """
    span = upper - lower
    count = max(1, math.ceil(span / (2.0 * width) - _TOL))
    if count == 1:
        return np.array([lower + span / 2.0])
    points = lower + width + 2.0 * width * np.arange(count, dtype=float)
    return np.minimum(points, upper)


class CoveringGrid:
    """
    Delta-covering set with its centroids.

    Cells can be removed (pruning) and centroids can be added at arbitrary
    in-bounds states (expansion). Mutation is single-writer; reads are safe
    between mutations.
    """

    def __init__(self, bounds: StateBounds, delta: Delta, normalize_distance: bool = False):
        """
        Build the full lattice cover of the bounds.

        Parameters:
            bounds (StateBounds): State-space box.
            delta (Delta): Neighborhood half-widths.
            normalize_distance (bool): Scale nearest-centroid distances by the range.
        """
        self.bounds = bounds
        self.delta = delta
        self.normalize_distance = normalize_distance
        self._widths = np.asarray(delta.widths, dtype=float)
        self._lower = np.asarray(bounds.lower, dtype=float)
        self._upper = np.asarray(bounds.upper, dtype=float)
        self._scale = (self._upper - self._lower) if normalize_distance else np.ones(3)

        self.axes: List[np.ndarray] = [
            lattice_axis(lo, hi, w) for lo, hi, w in zip(bounds.lower, bounds.upper, delta.widths)
        ]
        self.lattice_shape: CellId = tuple(len(axis) for axis in self.axes)  # type: ignore
        self.centroids: Dict[CellId, State] = {}
        for cell in itertools.product(*(range(n) for n in self.lattice_shape)):
            self.centroids[cell] = State(*(float(self.axes[k][i]) for k, i in enumerate(cell)))
        self.active: Set[CellId] = set(self.centroids)
        self.removed: Set[CellId] = set()
        self.extras: List[CellId] = []
        self._region_extras: Dict[CellId, List[CellId]] = {}
        self._next_extra = 0
        self._cache: Optional[Tuple[List[CellId], np.ndarray]] = None

    # --- size -------------------------------------------------------------------

    @property
    def initial_size(self) -> int:
        """Number of cells in the full lattice."""
        return int(np.prod(self.lattice_shape))

    @property
    def active_count(self) -> int:
        return len(self.active)

    def __len__(self) -> int:
        return len(self.active)

    def is_empty(self) -> bool:
        return not self.active

    def is_active(self, cell: CellId) -> bool:
        return cell in self.active

    def is_lattice(self, cell: CellId) -> bool:
        """Return True for lattice cells, False for expansion centroids."""
        return cell[0] < self.lattice_shape[0]

    def centroid(self, cell: CellId) -> State:
        return self.centroids[cell]

    def active_cells(self) -> List[CellId]:
        """Active cell ids in ascending order."""
        return self._active_arrays()[0]

    # --- geometry ---------------------------------------------------------------

    def neighborhood(self, cell: CellId) -> Tuple[State, State]:
        """Return the (low, high) corners of a cell's neighborhood, clipped to bounds."""
        c = np.asarray(self.centroids[cell])
        low = np.maximum(c - self._widths, self._lower)
        high = np.minimum(c + self._widths, self._upper)
        return State(*low.tolist()), State(*high.tolist())

    def intersects_failure(self, cell: CellId, collision_headway: float) -> bool:
        """
        Check whether a cell's neighborhood reaches into the failure set.

        The failure set is taken as the open half-space d < collision_headway,
        so a neighborhood touching the collision headway from above is admissible.
        """
        low, _ = self.neighborhood(cell)
        return low.d < collision_headway - _TOL

    def state_intersects_failure(self, s: State, collision_headway: float) -> bool:
        """Same check for a prospective centroid at s."""
        low_d = max(s.d - self.delta.widths[0], self.bounds.lower[0])
        return low_d < collision_headway - _TOL

    def _in_neighborhood(self, cell: CellId, s: Sequence[float]) -> bool:
        c = self.centroids[cell]
        return all(abs(x - cx) <= w + _TOL for x, cx, w in zip(s, c, self.delta.widths))

    def _distance(self, cell: CellId, s: Sequence[float]) -> float:
        diff = (np.asarray(self.centroids[cell]) - np.asarray(s, dtype=float)) / self._scale
        return float(np.sqrt(np.dot(diff, diff)))

    def cell_of(self, s: State) -> Optional[CellId]:
        """
        Find the active cell whose neighborhood contains a state.

        When several neighborhoods contain s, the nearest centroid wins and then
        the lowest cell id.

        Parameters:
            s (State): In-bounds state.

        Returns:
            Optional[CellId]: Containing active cell, or None when s is uncovered.
        """
        per_dim = [
            np.nonzero(np.abs(axis - x) <= w + _TOL)[0].tolist()
            for axis, x, w in zip(self.axes, s, self.delta.widths)
        ]
        candidates = [c for c in itertools.product(*per_dim) if c in self.active]
        candidates.extend(
            c for c in self.extras if c in self.active and self._in_neighborhood(c, s)
        )
        if not candidates:
            return None
        return min(candidates, key=lambda c: (self._distance(c, s), c))

    def covers(self, s: State) -> bool:
        return self.cell_of(s) is not None

    def owner(self, s: State) -> Optional[CellId]:
        """
        Active cell that owns a state inside its lattice region.

        The lattice cell s snaps to owns it while active. Once that cell is
        removed, the nearest active expansion centroid placed in the same region
        whose neighborhood contains s takes over.

        Parameters:
            s (State): In-bounds state.

        Returns:
            Optional[CellId]: Owning cell, or None when the region has no cover for s.
        """
        region = self.snap(s)
        if region in self.active:
            return region
        candidates = [
            c
            for c in self._region_extras.get(region, ())
            if c in self.active and self._in_neighborhood(c, s)
        ]
        if not candidates:
            return None
        return min(candidates, key=lambda c: (self._distance(c, s), c))

    def nearest_centroid(self, s: State) -> CellId:
        """
        Active cell whose centroid is nearest to s in l2 distance (ties: lowest id).

        Raises:
            GridExhaustedError: If no cell is active.
        """
        ids, points = self._active_arrays()
        if not ids:
            raise GridExhaustedError("nearest_centroid on an empty grid")
        diff = (points - np.asarray(s, dtype=float)) / self._scale
        dist = np.einsum("ij,ij->i", diff, diff)
        return ids[int(np.argmin(dist))]

    def sample_centroid(self, rng: np.random.Generator) -> State:
        """
        Draw a centroid uniformly from the active cells.

        Raises:
            GridExhaustedError: If no cell is active.
        """
        return self.centroids[self.sample_cell(rng)]

    def sample_cell(self, rng: np.random.Generator) -> CellId:
        """Draw an active cell id uniformly."""
        ids, _ = self._active_arrays()
        if not ids:
            raise GridExhaustedError("sample_centroid on an empty grid")
        return ids[int(rng.integers(len(ids)))]

    def snap(self, s: Sequence[float]) -> CellId:
        """Lattice cell with the nearest centroid per dimension, regardless of activity."""
        return tuple(  # type: ignore
            int(np.argmin(np.abs(axis - x))) for axis, x in zip(self.axes, s)
        )

    def snapped_cells(self) -> Set[CellId]:
        """Active lattice cells plus the lattice snaps of active expansion centroids."""
        return {c if self.is_lattice(c) else self.snap(self.centroids[c]) for c in self.active}

    # --- mutation ---------------------------------------------------------------

    def remove(self, cell: CellId) -> bool:
        """
        Remove a cell from the active set.

        Returns:
            bool: True if the cell was active.
        """
        if cell not in self.active:
            return False
        self.active.discard(cell)
        self.removed.add(cell)
        self._cache = None
        return True

    def add_centroid(self, s: State) -> CellId:
        """
        Add an in-bounds state as a new centroid (set expansion).

        Returns:
            CellId: Id of the new cell.
        """
        s = self.bounds.clip(s)
        n0, n1, n2 = self.lattice_shape
        cell: CellId = (n0, n1, n2 + self._next_extra)
        self._next_extra += 1
        self.centroids[cell] = s
        self.extras.append(cell)
        self._region_extras.setdefault(self.snap(s), []).append(cell)
        self.active.add(cell)
        self._cache = None
        logger.debug(f"Expanded cover with centroid {tuple(round(x, 3) for x in s)} as {cell}")
        return cell

    def drop_extras(self) -> int:
        """Remove every active expansion centroid; returns how many were dropped."""
        dropped = [c for c in self.active if not self.is_lattice(c)]
        for cell in sorted(dropped):
            self.remove(cell)
        return len(dropped)

    def restrict_to(self, cells: Set[CellId]) -> None:
        """Deactivate every active cell not in the given set."""
        for cell in sorted(self.active - cells):
            self.remove(cell)

    def copy(self) -> "CoveringGrid":
        """Return an independent copy."""
        return CoveringGrid.from_dump(self.to_dump())

    def _active_arrays(self) -> Tuple[List[CellId], np.ndarray]:
        if self._cache is None:
            ids = sorted(self.active)
            points = (
                np.array([self.centroids[c] for c in ids], dtype=float)
                if ids
                else np.empty((0, 3))
            )
            self._cache = (ids, points)
        return self._cache

    # --- persistence ------------------------------------------------------------

    def check_compatible(self, bounds: StateBounds, delta: Delta) -> None:
        """
        Ensure this grid was built over the given bounds and delta.

        Raises:
            GridMismatchError: On any difference.
        """
        if self.bounds != bounds or self.delta != delta:
            raise GridMismatchError(
                f"grid built over bounds={self.bounds.lower}..{self.bounds.upper} "
                f"delta={self.delta.widths}, expected bounds={bounds.lower}..{bounds.upper} "
                f"delta={delta.widths}"
            )

    def to_dump(self, **extra) -> SafeSetDump:
        """Serialize to the stored form; keyword arguments fill seed, stats and config."""
        ids = self.active_cells()
        return SafeSetDump(
            version=__version__,
            bounds=self.bounds,
            delta=self.delta,
            normalize_distance=self.normalize_distance,
            lattice_shape=self.lattice_shape,
            cells=[DumpCell(cell=c, centroid=tuple(self.centroids[c])) for c in ids],
            active_centroids=[tuple(self.centroids[c]) for c in ids],
            removed_cells=sorted(self.removed),
            removed_count=len(self.removed),
            next_extra=self._next_extra,
            **extra,
        )

    @classmethod
    def from_dump(cls, dump: SafeSetDump) -> "CoveringGrid":
        """Rebuild a grid from its stored form."""
        grid = cls(dump.bounds, dump.delta, dump.normalize_distance)
        if grid.lattice_shape != tuple(dump.lattice_shape):
            raise GridMismatchError(
                f"stored lattice {dump.lattice_shape} does not match rebuilt {grid.lattice_shape}"
            )
        stored = {tuple(entry.cell): State(*entry.centroid) for entry in dump.cells}
        for cell, centroid in stored.items():
            if not grid.is_lattice(cell):
                grid.centroids[cell] = centroid
                grid.extras.append(cell)
        grid.extras.sort()
        for cell in grid.extras:
            grid._region_extras.setdefault(grid.snap(grid.centroids[cell]), []).append(cell)
        grid._next_extra = dump.next_extra
        grid.active = set(stored)
        grid.removed = {tuple(c) for c in dump.removed_cells}
        grid._cache = None
        return grid

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoveringGrid):
            return NotImplemented
        return (
            self.bounds == other.bounds
            and self.delta == other.delta
            and self.normalize_distance == other.normalize_distance
            and self.active == other.active
            and self.removed == other.removed
            and all(self.centroids[c] == other.centroids[c] for c in self.active)
        )

    def __repr__(self) -> str:
        return (
            f"CoveringGrid(shape={self.lattice_shape}, active={len(self.active)}, "
            f"removed={len(self.removed)}, extras={len(self.extras)})"
        )


def make_covering_grid(
    bounds: StateBounds, delta: Delta, normalize_distance: bool = False
) -> CoveringGrid:
    """
    Build the regular delta-covering grid of a state-space box.

    Parameters:
        bounds (StateBounds): State-space box.
        delta (Delta): Neighborhood half-widths.
        normalize_distance (bool): Scale nearest-centroid distances by the range.

    Returns:
        CoveringGrid: Grid with every lattice cell active.
    """
    grid = CoveringGrid(bounds, delta, normalize_distance)
    logger.debug(f"Built covering grid {grid.lattice_shape} over {bounds.lower}..{bounds.upper}")
    return grid
