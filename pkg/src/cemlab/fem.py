"""P1 Galerkin solver for -div(sigma grad u) = rho with CEM boundary data.

Zero contact impedance is imposed by DOF tying: every boundary vertex of
electrode i shares one unknown U_i, so u_h is exactly constant there.  The
current convention matches the oracle: J_i = integral of sigma * du/dn_out
over electrode i, positive at the higher-potential electrode, which makes
the tied load entry +J_i and gives the energy identity

    a(u_h, u_h) = sum_i J_i U_i + (rho, u_h).

Compatibility of the pure-flux problem requires sum_i J_i + int rho = 0.
The singular system (kernel = constants) is solved by pinning one DOF,
conjugate gradients with diagonal preconditioning (graded P1 stiffness is
well conditioned after diagonal scaling), and a final shift enforcing
sum_i U_i = 0.  Boundary current density is recovered variationally: the
residual of the interior weak form tested with boundary hat functions is
inverted against the boundary mass matrix, which reproduces every electrode
current exactly (up to solver residual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import cg

from .errors import (
    IncompatibleLoad,
    NonConvergence,
    NonPositiveConductivity,
    SingularBoundaryMass,
)
from .geometry import CurrentPattern, ElectrodeLayout
from .mesh import Mesh


@dataclass(frozen=True)
class ConductivityField:
    """Scalar conductivity sigma(x, y) > 0, smooth on the closed domain."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "custom"

    def __call__(self, x, y):
        return np.broadcast_to(np.asarray(self.fn(x, y), dtype=float),
                               np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

    @staticmethod
    def constant(value: float = 1.0) -> "ConductivityField":
        return ConductivityField(lambda x, y: np.full_like(
            np.asarray(x, dtype=float), value), name=f"constant({value:g})")

    @staticmethod
    def linear_x(base: float = 1.0, slope: float = 0.5) -> "ConductivityField":
        return ConductivityField(lambda x, y: base + slope * np.asarray(x, float),
                                 name=f"linear_x({base:g},{slope:g})")


@dataclass
class CemSystem:
    """Assembled tied system: stiffness, load, and the vertex->DOF map."""

    mesh: Mesh
    layout: ElectrodeLayout
    currents: tuple[float, ...]
    sigma: ConductivityField
    K_vertex: sparse.csr_matrix          # untied vertex stiffness (flux recovery)
    K: sparse.csr_matrix                 # tied stiffness, ndof x ndof
    load: np.ndarray                     # tied load: rho moments + J at electrodes
    rho_vertex: np.ndarray               # (rho, phi_v) per vertex
    dof_of_vertex: np.ndarray            # vertex -> tied DOF
    n_interior: int
    extras: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.n_interior + self.layout.n

    def electrode_dof(self, k: int) -> int:
        return self.n_interior + k


def _p1_element_data(mesh: Mesh):
    """Areas and P1 gradient coefficients per triangle."""
    p = mesh.vertices
    t = mesh.triangles
    x = p[t, 0]
    y = p[t, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    # area equals the standard signed area; meshes are CCW so it is positive
    area = 0.5 * np.abs(x[:, 0] * (y[:, 1] - y[:, 2]) + x[:, 1] * (y[:, 2] - y[:, 0])
                        + x[:, 2] * (y[:, 0] - y[:, 1]))
    return area, b, c


def _edge_midpoints(mesh: Mesh):
    p = mesh.vertices
    t = mesh.triangles
    return [(0.5 * (p[t[:, i]] + p[t[:, j]])) for i, j in ((0, 1), (1, 2), (2, 0))]


def assemble(mesh: Mesh, sigma: ConductivityField,
             rho: Callable[[np.ndarray, np.ndarray], np.ndarray] | None,
             layout: ElectrodeLayout, currents) -> CemSystem:
    """Assemble the tied CEM system (P1 elements, 3-point midpoint rule).

    The midpoint rule integrates sigma exactly to quadratic accuracy; rho is
    treated the same way.  rho must be compatible: sum J + int rho = 0 is
    checked at solve time.
    """
    pattern = currents if isinstance(currents, CurrentPattern) \
        else CurrentPattern(currents)
    if pattern.n != layout.n:
        raise IncompatibleLoad(f"{layout.n} electrodes but {pattern.n} currents")
    area, b, c = _p1_element_data(mesh)
    mids = _edge_midpoints(mesh)
    sig_vals = [sigma(m[:, 0], m[:, 1]) for m in mids]
    for v in sig_vals:
        if np.any(v <= 0.0):
            raise NonPositiveConductivity(
                "conductivity must be positive at all quadrature points"
            )
    sig_mean = (sig_vals[0] + sig_vals[1] + sig_vals[2]) / 3.0

    t = mesh.triangles
    nv = mesh.n_vertices
    scale = sig_mean / (4.0 * area)
    rows = []
    cols = []
    vals = []
    for i in range(3):
        for j in range(3):
            rows.append(t[:, i])
            cols.append(t[:, j])
            vals.append(scale * (b[:, i] * b[:, j] + c[:, i] * c[:, j]))
    K_vertex = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, nv))
    K_vertex.sum_duplicates()

    rho_vertex = np.zeros(nv)
    if rho is not None:
        # midpoint rule: phi_i is 1/2 on its two adjacent edge midpoints
        r_vals = [np.asarray(rho(m[:, 0], m[:, 1]), dtype=float) for m in mids]
        w = area / 3.0
        edge_pairs = ((0, 1), (1, 2), (2, 0))
        for (i, j), rv in zip(edge_pairs, r_vals):
            np.add.at(rho_vertex, t[:, i], 0.5 * w * rv)
            np.add.at(rho_vertex, t[:, j], 0.5 * w * rv)

    # vertex -> DOF map: electrode vertices share one DOF per electrode
    dof_of_vertex = np.full(nv, -1, dtype=np.int64)
    tied_sets = mesh.electrode_chains()
    tied_all = set()
    for verts, _ in tied_sets:
        tied_all.update(int(v) for v in verts)
    interior = [v for v in range(nv) if v not in tied_all]
    n_interior = len(interior)
    dof_of_vertex[interior] = np.arange(n_interior)
    for k, (verts, _) in enumerate(tied_sets):
        dof_of_vertex[verts] = n_interior + k

    ndof = n_interior + layout.n
    P = sparse.csr_matrix(
        (np.ones(nv), (np.arange(nv), dof_of_vertex)), shape=(nv, ndof))
    K = (P.T @ K_vertex @ P).tocsr()
    K.sum_duplicates()
    load = P.T @ rho_vertex
    for k, J_k in enumerate(pattern.values):
        load[n_interior + k] += J_k

    return CemSystem(
        mesh=mesh, layout=layout, currents=pattern.values, sigma=sigma,
        K_vertex=K_vertex, K=K, load=load, rho_vertex=rho_vertex,
        dof_of_vertex=dof_of_vertex, n_interior=n_interior,
    )


@dataclass
class CemSolution:
    """Nodal potential, electrode voltages, recovered boundary density."""

    system: CemSystem
    nodal: np.ndarray                    # per-vertex potential
    potentials: np.ndarray               # U_i, sum = 0
    energy: float                        # a(u_h, u_h)
    iterations: int
    density_chains: list[tuple[np.ndarray, np.ndarray]]   # per electrode (s, q)
    fluxes: np.ndarray                   # per-electrode integral of q

    @property
    def n_dofs(self) -> int:
        return self.system.n_dofs


def solve(system: CemSystem, rtol: float = 1e-13,
          maxiter: int | None = None) -> CemSolution:
    """Solve the grounded system by diagonally preconditioned CG.

    One DOF is pinned to remove the constant kernel; afterwards the whole
    solution is shifted so that sum_i U_i = 0.  A couple of iterative
    refinement passes push the residual to ~1e-14 relative so the discrete
    energy identity holds to 1e-12.
    """
    J_sum = math.fsum(system.currents)
    if abs(J_sum) > 1e-12 * max(1.0, max(abs(j) for j in system.currents)):
        raise IncompatibleLoad(f"currents must sum to zero, got {J_sum:.3e}")
    b = system.load
    scale_b = float(np.abs(b).sum())
    if scale_b > 0.0 and abs(b.sum()) > 1e-10 * scale_b:
        raise IncompatibleLoad(
            "load incompatible with the insulated boundary: "
            f"sum J + int rho = {b.sum():.3e}"
        )

    ndof = system.n_dofs
    if scale_b == 0.0:
        return _package(system, np.zeros(ndof), 0)

    pin = ndof - 1
    keep = np.arange(ndof) != pin
    A = system.K[keep][:, keep].tocsr()
    rhs = b[keep]
    diag = A.diagonal()
    M = sparse.diags(1.0 / diag)
    if maxiter is None:
        maxiter = max(2000, 60 * int(math.isqrt(ndof)) + 400)

    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = cg(A, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=M,
                 callback=count)
    # iterative refinement: fresh residuals evade CG's internal stagnation
    norm_b = float(np.linalg.norm(rhs))
    for _ in range(3):
        r = rhs - A @ x
        if np.linalg.norm(r) <= 1e-14 * norm_b:
            break
        dx, _ = cg(A, r, rtol=1e-4, atol=0.0, maxiter=maxiter, M=M,
                   callback=count)
        x = x + dx
    resid = float(np.linalg.norm(rhs - A @ x)) / norm_b
    if not np.isfinite(resid) or resid > 1e-9:
        raise NonConvergence(iters, resid)

    u = np.zeros(ndof)
    u[keep] = x
    return _package(system, u, iters)


def _package(system: CemSystem, u_dof: np.ndarray, iters: int) -> CemSolution:
    n_int = system.n_interior
    U = u_dof[n_int:]
    shift = U.mean() if U.size else 0.0
    u_dof = u_dof - shift
    U = u_dof[n_int:]
    nodal = u_dof[system.dof_of_vertex]
    energy = float(u_dof @ (system.K @ u_dof))
    chains, fluxes = recover_boundary_flux(system, nodal)
    return CemSolution(
        system=system, nodal=nodal, potentials=U.copy(), energy=energy,
        iterations=iters, density_chains=chains, fluxes=fluxes,
    )


def recover_boundary_flux(system: CemSystem, nodal: np.ndarray):
    """Variational flux recovery on each electrode chain.

    Solves M_e q = r per electrode, where r is the residual of the interior
    weak form tested with the boundary hat functions and M_e the P1 boundary
    mass matrix.  Row sums of M_e make the per-electrode integral of q equal
    the residual sum, i.e. exactly J_i up to solver residual.
    """
    r_all = system.K_vertex @ nodal - system.rho_vertex
    chains = []
    fluxes = []
    p = system.mesh.vertices
    for verts, s in system.mesh.electrode_chains():
        verts = np.asarray(verts, dtype=int)
        seg = np.hypot(*(p[verts[1:]] - p[verts[:-1]]).T)
        if np.any(seg <= 0.0):
            raise SingularBoundaryMass("zero-length electrode edge")
        n = verts.size
        r = r_all[verts]
        # tridiagonal P1 mass matrix in banded form
        ab = np.zeros((3, n))
        ab[1, :-1] += seg / 3.0
        ab[1, 1:] += seg / 3.0
        ab[0, 1:] = seg / 6.0
        ab[2, :-1] = seg / 6.0
        q = solve_banded((1, 1), ab, r)
        chains.append((s.copy(), q))
        fluxes.append(math.fsum(r))
    return chains, np.array(fluxes)


def density_at(solution: CemSolution, electrode: int, s_values) -> np.ndarray:
    """Recovered boundary density sampled along electrode ``electrode``."""
    s_chain, q = solution.density_chains[electrode]
    return np.interp(np.asarray(s_values, dtype=float), s_chain, q)


def h1_seminorm_distance(solution: CemSolution, grad_ref) -> float:
    """H1 seminorm of (u_h - reference) via the 3-point midpoint rule.

    ``grad_ref(points) -> (gx, gy)`` evaluates the reference gradient at an
    (n, 2) array of points.
    """
    mesh = solution.system.mesh
    area, bb, cc = _p1_element_data(mesh)
    t = mesh.triangles
    u = solution.nodal[t]
    gx = np.einsum("ti,ti->t", u, bb) / (2.0 * area)
    gy = np.einsum("ti,ti->t", u, cc) / (2.0 * area)
    total = 0.0
    for m in _edge_midpoints(mesh):
        rx, ry = grad_ref(m)
        total += float(np.sum((area / 3.0) * ((gx - rx) ** 2 + (gy - ry) ** 2)))
    return math.sqrt(total)


def energy_identity_error(solution: CemSolution) -> float:
    """Relative error of a(u_h,u_h) = sum J_i U_i + (rho, u_h)."""
    system = solution.system
    rhs = float(np.dot(system.currents, solution.potentials)) \
        + float(np.dot(system.rho_vertex, solution.nodal))
    denom = max(abs(solution.energy), abs(rhs), 1e-300)
    return abs(solution.energy - rhs) / denom
