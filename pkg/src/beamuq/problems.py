"""Stochastic beam problems: uncertainty model x response type.

A problem owns the mesh hierarchy, the load, and the uncertainty model, and
evaluates one payload per (level, draw). Payloads live on the level-0
reporting grid so fine and coarse solves of a multilevel difference are
directly comparable:

* static elastic / dynamic: transverse displacement (magnitude for the
  dynamic response) of the top-fiber nodes, 41 values at desk scale;
* elastoplastic: per-increment top-fiber displacement matrix, whose last
  row is the spatial profile under the full load.

Randomness is counter-based: a Philox key derived from (master seed,
problem id, stream, estimator level, replicate) makes every draw
reproducible regardless of scheduling, and the same draw drives both solves
of a coupled difference.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, SampleFailure
from .fem_elastic import ElasticMaterial, StaticSolver, assemble, solve_dynamic
from .fem_plastic import LoadSchedule, PlasticMaterial, solve_elastoplastic
from .gamma_model import GammaParams, gamma_inverse_cdf
from .mesh import BeamGeometry, MeshLevel, build_mesh, distribute_midspan_load, tip_load
from .random_field import KLBasis, FieldSample, basis_matrix, field_on_elements

STREAM_MLMC = 0
STREAM_MC = 1
STREAM_TRACE = 2


def philox_key(master_seed: int, problem_id: int, stream: int, level: int,
               replicate: int) -> np.ndarray:
    """128-bit counter-based key: reruns and worker counts cannot change it."""
    if replicate < 0 or replicate >= 2 ** 32:
        raise ValueError("replicate out of range")
    low = ((problem_id & 0xFFFF) << 48) | ((stream & 0xFF) << 40) \
        | ((level & 0xFF) << 32) | (replicate & 0xFFFFFFFF)
    high = master_seed & 0xFFFFFFFFFFFFFFFF
    return np.array([low, high], dtype=np.uint64)


def rng_for(master_seed: int, problem_id: int, stream: int, level: int,
            replicate: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        key=philox_key(master_seed, problem_id, stream, level, replicate)))


# ---------------------------------------------------------------------------
# Uncertainty models
# ---------------------------------------------------------------------------

class HomogeneousGammaModel:
    """One Gamma-distributed Young's modulus shared by every element."""

    def __init__(self, params: GammaParams, fixed_value: float | None = None):
        self.params = params
        self.fixed_value = fixed_value

    def draw(self, rng: np.random.Generator):
        return float(rng.random())

    def young_field(self, mesh: MeshLevel, draw) -> np.ndarray:
        if self.fixed_value is not None:
            e = self.fixed_value
        else:
            e = gamma_inverse_cdf(draw, self.params)
        return np.full(mesh.n_elems, e)


class GammaFieldModel:
    """Gamma random field: KL-expanded Gaussian field, transformed pointwise.

    Basis values at element midpoints are cached per mesh level; the same
    xi vector applied to two nested levels yields the coupled field pair.
    """

    def __init__(self, params: GammaParams, basis: KLBasis):
        self.params = params
        self.basis = basis
        self._midpoint_cache: dict[int, np.ndarray] = {}

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.basis.n_terms)

    def _matrix(self, mesh: MeshLevel) -> np.ndarray:
        mat = self._midpoint_cache.get(mesh.level)
        if mat is None:
            mids = mesh.element_midpoints
            unit = np.column_stack((mids[:, 0] / mesh.geometry.length,
                                    mids[:, 1] / mesh.geometry.height))
            mat = basis_matrix(self.basis, unit)
            self._midpoint_cache[mesh.level] = mat
        return mat

    def young_field(self, mesh: MeshLevel, draw) -> np.ndarray:
        sample = FieldSample(xi=np.asarray(draw, dtype=float))
        return field_on_elements(self.basis, sample, mesh, self.params,
                                 cached_matrix=self._matrix(mesh))


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------

class _BeamProblem:
    """Shared mesh/load caching and reporting-grid plumbing."""

    problem_id = 0

    def __init__(self, geometry: BeamGeometry, model, master_seed: int,
                 ny_coarse: int = 4):
        self.geometry = geometry
        self.model = model
        self.master_seed = master_seed
        self.ny_coarse = ny_coarse
        self._meshes: dict[int, MeshLevel] = {}
        self._loads: dict[int, np.ndarray] = {}
        grid = self.mesh(0)
        #: x-values of the rows in field_stats.csv; the plastic response
        #: replaces this with the force staircase.
        self.axis = grid.coords[grid.top_edge_nodes(), 0]
        self.n_report_nodes = self.axis.size

    def mesh(self, level: int) -> MeshLevel:
        m = self._meshes.get(level)
        if m is None:
            m = build_mesh(self.geometry, level, self.ny_coarse)
            self._meshes[level] = m
        return m

    def free_dof_count(self, level: int) -> int:
        return self.mesh(level).n_free

    def work_units(self, level: int, base_level: int) -> float:
        """Deterministic per-sample cost in units of one level-0 solve."""
        units = self.free_dof_count(level)
        if level > base_level:
            units += self.free_dof_count(level - 1)
        return units / self.free_dof_count(0)

    def draw(self, stream: int, level: int, replicate: int):
        rng = rng_for(self.master_seed, self.problem_id, stream, level, replicate)
        return self.model.draw(rng)

    def _report_dofs(self, mesh: MeshLevel) -> np.ndarray:
        return 2 * mesh.top_edge_injection(0) + 1

    # Payload adapters (overridden where the payload is not a spatial vector).
    def selection_field(self, payload: np.ndarray) -> np.ndarray:
        return payload

    def field_vector(self, payload: np.ndarray, node: int) -> np.ndarray:
        return payload

    def qoi_scalar(self, payload: np.ndarray, node: int) -> float:
        return float(payload[node])


class StaticElasticProblem(_BeamProblem):
    """Clamped beam, transverse midspan load, linear elastic response."""

    problem_id = 1
    axis_label = "x"

    def __init__(self, geometry, model, master_seed, total_load: float = -1.0e7,
                 nu: float = 0.15, rho: float = 2500.0, ny_coarse: int = 4):
        super().__init__(geometry, model, master_seed, ny_coarse)
        self.total_load = total_load
        self.nu = nu
        self.rho = rho
        self._solvers: dict[int, StaticSolver] = {}

    def load(self, level: int) -> np.ndarray:
        f = self._loads.get(level)
        if f is None:
            f = distribute_midspan_load(self.mesh(level), self.total_load)
            self._loads[level] = f
        return f

    def solver(self, level: int) -> StaticSolver:
        s = self._solvers.get(level)
        if s is None:
            s = StaticSolver(self.mesh(level), self.nu)
            self._solvers[level] = s
        return s

    def evaluate(self, level: int, draw) -> np.ndarray:
        mesh = self.mesh(level)
        young = self.model.young_field(mesh, draw)
        try:
            u = self.solver(level).solve(young, self.load(level))
        except NumericError as exc:
            raise SampleFailure(str(exc)) from exc
        return u[self._report_dofs(mesh)]


class DynamicElasticProblem(_BeamProblem):
    """Cantilever under harmonic tip load at one frequency; payload |u_y|."""

    problem_id = 2
    axis_label = "x"

    def __init__(self, geometry, model, master_seed, frequency: float,
                 eta: float = 0.03, total_load: float = -1.0e7,
                 nu: float = 0.15, rho: float = 2500.0, ny_coarse: int = 4):
        super().__init__(geometry, model, master_seed, ny_coarse)
        self.frequency = frequency
        self.eta = eta
        self.total_load = total_load
        self.nu = nu
        self.rho = rho

    def load(self, level: int) -> np.ndarray:
        f = self._loads.get(level)
        if f is None:
            f = tip_load(self.mesh(level), self.total_load)
            self._loads[level] = f
        return f

    def evaluate(self, level: int, draw) -> np.ndarray:
        mesh = self.mesh(level)
        young = self.model.young_field(mesh, draw)
        system = assemble(
            mesh, ElasticMaterial(young, self.nu, self.rho, self.eta), self.load(level))
        try:
            u = solve_dynamic(system, self.eta, self.frequency)
        except NumericError as exc:
            raise SampleFailure(str(exc)) from exc
        return np.abs(u[self._report_dofs(mesh)])

    def at_frequency(self, frequency: float) -> "DynamicElasticProblem":
        """Sibling problem sharing meshes, loads and the basis caches."""
        clone = DynamicElasticProblem.__new__(DynamicElasticProblem)
        clone.__dict__.update(self.__dict__)
        clone.frequency = frequency
        return clone


class StaticPlasticProblem(_BeamProblem):
    """Clamped steel beam loaded incrementally; payload is the per-increment
    top-fiber displacement matrix (n_increments, n_report_nodes)."""

    problem_id = 3
    axis_label = "force"

    def __init__(self, geometry, model, master_seed, schedule: LoadSchedule,
                 nu: float = 0.25, sigma_y: float = 240e6,
                 hardening_ratio: float = 0.01, ny_coarse: int = 4):
        super().__init__(geometry, model, master_seed, ny_coarse)
        self.schedule = schedule
        self.nu = nu
        self.sigma_y = sigma_y
        self.hardening_ratio = hardening_ratio
        self.axis = schedule.values()

    def load_pattern(self, level: int) -> np.ndarray:
        f = self._loads.get(level)
        if f is None:
            f = distribute_midspan_load(self.mesh(level), -1.0)
            self._loads[level] = f
        return f

    def evaluate(self, level: int, draw) -> np.ndarray:
        mesh = self.mesh(level)
        young = self.model.young_field(mesh, draw)
        mat = PlasticMaterial(young, self.nu, self.sigma_y,
                              H=float(np.mean(young)) * self.hardening_ratio)
        sol = solve_elastoplastic(mesh, mat, self.schedule, self.load_pattern(level))
        return sol.u_history[:, self._report_dofs(mesh)]

    def selection_field(self, payload: np.ndarray) -> np.ndarray:
        return payload[-1]

    def field_vector(self, payload: np.ndarray, node: int) -> np.ndarray:
        return payload[:, node]

    def qoi_scalar(self, payload: np.ndarray, node: int) -> float:
        return float(payload[-1, node])
