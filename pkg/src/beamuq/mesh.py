"""Geometric hierarchy of regular square-element meshes for the beam.

Level 0 discretizes the beam height into four square bilinear quadrilaterals
(element size height/4); each level halves the element size, so element
counts grow by 4 per level. Node numbering is row-major (x fastest), DOFs
node-major (u_x, u_y per node). All levels are nested: every coarse node
coordinate reappears on finer levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

GAUSS_COORD = 1.0 / math.sqrt(3.0)
#: 2x2 Gauss rule on [-1, 1]^2: exact for the bilinear element matrices.
GAUSS_POINTS = np.array([
    (-GAUSS_COORD, -GAUSS_COORD),
    (GAUSS_COORD, -GAUSS_COORD),
    (GAUSS_COORD, GAUSS_COORD),
    (-GAUSS_COORD, GAUSS_COORD),
])
GAUSS_WEIGHTS = np.ones(4)

_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


@dataclass(frozen=True)
class BeamGeometry:
    """Beam dimensions (m) and support layout."""

    length: float = 2.5
    height: float = 0.25
    width: float = 1.0
    clamping: str = "both-ends"  # or "left-only"

    def __post_init__(self):
        if min(self.length, self.height, self.width) <= 0.0:
            raise ConfigError("beam dimensions must be positive")
        if self.clamping not in ("both-ends", "left-only"):
            raise ConfigError(f"unknown clamping {self.clamping!r}")


@dataclass
class MeshLevel:
    """One level of the nested hierarchy, with constraints applied."""

    geometry: BeamGeometry
    level: int
    nx: int
    ny: int
    h: float
    coords: np.ndarray          # (n_nodes, 2)
    elems: np.ndarray           # (n_elem, 4) counterclockwise node ids
    constrained: np.ndarray     # (n_dofs,) bool
    free: np.ndarray = field(init=False)
    elem_dofs: np.ndarray = field(init=False)       # (n_elem, 8)
    element_midpoints: np.ndarray = field(init=False)

    def __post_init__(self):
        self.free = np.nonzero(~self.constrained)[0]
        nodes = self.elems
        dofs = np.empty((nodes.shape[0], 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        self.elem_dofs = dofs
        self.element_midpoints = self.coords[nodes].mean(axis=1)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_elems(self) -> int:
        return self.elems.shape[0]

    @property
    def n_free(self) -> int:
        return self.free.size

    def node_id(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def top_edge_nodes(self) -> np.ndarray:
        """Node ids along the top fiber, left to right."""
        return np.arange(self.ny * (self.nx + 1), (self.ny + 1) * (self.nx + 1))

    def injection_nodes(self, coarse_level: int) -> np.ndarray:
        """Node ids of this mesh matching the full grid of `coarse_level`."""
        if coarse_level > self.level:
            raise ValueError("injection target must be coarser")
        s = 2 ** (self.level - coarse_level)
        nxc = self.nx // s
        nyc = self.ny // s
        jj, ii = np.meshgrid(np.arange(nyc + 1), np.arange(nxc + 1), indexing="ij")
        return (jj * s) * (self.nx + 1) + ii * s

    def top_edge_injection(self, coarse_level: int) -> np.ndarray:
        """Node ids on the top edge matching the coarse top-edge grid."""
        s = 2 ** (self.level - coarse_level)
        base = self.ny * (self.nx + 1)
        return base + np.arange(0, self.nx + 1, s)


def build_mesh(geom: BeamGeometry, level: int, ny_coarse: int = 4) -> MeshLevel:
    """Construct the level-`level` mesh; element size is height/ny_coarse/2^level."""
    if level < 0:
        raise ConfigError("level must be >= 0")
    h0 = geom.height / ny_coarse
    nx0 = geom.length / h0
    if abs(nx0 - round(nx0)) > 1e-9:
        raise ConfigError(
            f"length {geom.length} not divisible into square elements of {h0}"
        )
    scale = 2 ** level
    nx = int(round(nx0)) * scale
    ny = ny_coarse * scale
    h = h0 / scale

    xs = np.arange(nx + 1) * h
    ys = np.arange(ny + 1) * h
    # Guard against cumulative rounding at the far edges.
    xs[-1] = geom.length
    ys[-1] = geom.height
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    coords = np.column_stack((gx.ravel(), gy.ravel()))

    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    n00 = jj * (nx + 1) + ii
    elems = np.column_stack([
        n00.ravel(), (n00 + 1).ravel(),
        (n00 + nx + 2).ravel(), (n00 + nx + 1).ravel(),
    ])

    constrained = np.zeros(2 * coords.shape[0], dtype=bool)
    left = np.arange(0, coords.shape[0], nx + 1)
    clamped_nodes = [left]
    if geom.clamping == "both-ends":
        clamped_nodes.append(np.arange(nx, coords.shape[0], nx + 1))
    for nodes in clamped_nodes:
        constrained[2 * nodes] = True
        constrained[2 * nodes + 1] = True

    return MeshLevel(geometry=geom, level=level, nx=nx, ny=ny, h=h,
                     coords=coords, elems=elems, constrained=constrained)


def shape_functions(xi: float, eta: float, h: float):
    """Bilinear shape values N (4,) and strain-displacement B (3, 8).

    Specialized to the square element of size h, whose Jacobian is h/2 times
    the identity.
    """
    if not (-1.0 <= xi <= 1.0 and -1.0 <= eta <= 1.0):
        raise ValueError("(xi, eta) must lie in [-1, 1]^2")
    if h <= 0.0:
        raise ValueError("degenerate element: h must be positive")
    sx = _CORNERS[:, 0]
    sy = _CORNERS[:, 1]
    n = 0.25 * (1.0 + xi * sx) * (1.0 + eta * sy)
    dn_dx = 0.25 * sx * (1.0 + eta * sy) * (2.0 / h)
    dn_dy = 0.25 * sy * (1.0 + xi * sx) * (2.0 / h)
    b = np.zeros((3, 8))
    b[0, 0::2] = dn_dx
    b[1, 1::2] = dn_dy
    b[2, 0::2] = dn_dy
    b[2, 1::2] = dn_dx
    return n, b


def element_quadrature(h: float):
    """B at the four Gauss points (4, 3, 8) plus the Jacobian determinant."""
    b = np.stack([shape_functions(x, e, h)[1] for x, e in GAUSS_POINTS])
    return b, h * h / 4.0


def _column_load(mesh: MeshLevel, i_col: int, total_force: float) -> np.ndarray:
    """Transverse nodal forces on one node column, consistent with a uniform
    line traction: unit interior weights, half weights at the fiber ends."""
    f = np.zeros(mesh.n_dofs)
    weights = np.ones(mesh.ny + 1)
    weights[0] = 0.5
    weights[-1] = 0.5
    nodes = np.array([mesh.node_id(i_col, j) for j in range(mesh.ny + 1)])
    f[2 * nodes + 1] = total_force * weights / mesh.ny
    return f


def distribute_midspan_load(mesh: MeshLevel, total_force: float) -> np.ndarray:
    """Transverse load on the midspan node column, summing exactly to
    total_force at every refinement level."""
    if mesh.geometry.clamping != "both-ends":
        raise ConfigError("midspan load requires both-ends clamping")
    if not math.isfinite(total_force):
        raise ConfigError("total_force must be finite")
    if mesh.nx % 2 != 0:
        raise ConfigError("no node column at midspan: nx is odd")
    return _column_load(mesh, mesh.nx // 2, total_force)


def tip_load(mesh: MeshLevel, total_force: float) -> np.ndarray:
    """Transverse load on the free right edge of a cantilever."""
    if mesh.geometry.clamping != "left-only":
        raise ConfigError("tip load requires left-only clamping")
    return _column_load(mesh, mesh.nx, total_force)


def mesh_summary(geom: BeamGeometry, levels: int, ny_coarse: int = 4) -> list[dict]:
    """Per-level table (level, nx, ny, h, dofs) for the run manifest."""
    rows = []
    for lvl in range(levels + 1):
        m = build_mesh(geom, lvl, ny_coarse)
        rows.append({
            "level": lvl, "nx": m.nx, "ny": m.ny, "h": m.h,
            "dofs": m.n_dofs, "free_dofs": m.n_free,
        })
    return rows
