"""Semi-analytic CEM solver on the upper half-plane, pulled back to the disc.

A zero-contact-impedance CEM problem with electrodes [a_k, b_k] on the real
axis and zero-sum currents J_k is solved through the holomorphic function

    f(z) = P(z) / R(z),      R(z) = sqrt(prod_k (z - a_k)(z - b_k)),

with deg P <= N-1 real coefficients.  The branch of R is fixed per pair
(cut on [a_k, b_k], positive to the right of b_k), which makes R real on the
insulated gaps and purely imaginary on the electrodes, so Re f = 0 on
electrodes and Im f = 0 on gaps holds identically.  The boundary current
density (outward-normal convention, J > 0 at the higher-potential electrode)
is Im f(x + i0); the tangential derivative of the potential on the gaps is
Re f(x + i0).  The N current constraints have rank N-1; the system is closed
by the exact flux-balance row  -pi * c_{N-1} = sum_k J_k  coming from the
residue of f at infinity.

Boundary densities blow up like |x - e|**(-1/2) at each electrode endpoint e
with coefficient  A = |P(e)| / sqrt(prod_{p != e} |e - p|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import (
    BranchPointEvaluation,
    CurrentImbalance,
    ElectrodeThroughInfinity,
    NotAnEndpoint,
    NotOnElectrode,
    NotOnGap,
    QuadratureFailure,
    SingularSystem,
    TooFewElectrodes,
)
from .geometry import (
    CurrentPattern,
    DomainSpec,
    ElectrodeLayout,
    mobius_disc_to_halfplane,
    validate_layout,
)


def gauss_chebyshev(n: int) -> tuple[np.ndarray, float]:
    """Nodes on (-1, 1) and the common weight pi/n for weight 1/sqrt(1-t^2).

    This is Gauss-Jacobi quadrature with alpha = beta = -1/2, which is exactly
    the endpoint behaviour of every electrode/gap integrand here, so all the
    one-dimensional integrals below converge spectrally.
    """
    k = np.arange(1, n + 1)
    return np.cos((2 * k - 1) * math.pi / (2 * n)), math.pi / n


@dataclass(frozen=True)
class HalfPlaneProblem:
    """Electrode intervals [a_k, b_k] on the real axis plus currents."""

    electrodes: tuple[tuple[float, float], ...]
    currents: tuple[float, ...]

    def __init__(self, electrodes, currents):
        arcs = tuple((float(a), float(b)) for a, b in electrodes)
        if len(arcs) < 2:
            raise TooFewElectrodes(
                "a single electrode forces J = 0; at least two are required"
            )
        pattern = currents if isinstance(currents, CurrentPattern) \
            else CurrentPattern(currents)
        if pattern.n != len(arcs):
            raise CurrentImbalance(
                f"{len(arcs)} electrodes but {pattern.n} currents"
            )
        layout = ElectrodeLayout(arcs)
        validate_layout(layout, DomainSpec.upper_half_plane())
        object.__setattr__(self, "electrodes", arcs)
        object.__setattr__(self, "currents", pattern.values)

    @property
    def n(self) -> int:
        return len(self.electrodes)

    @property
    def branch_points(self) -> np.ndarray:
        return np.array([e for arc in self.electrodes for e in arc])


@dataclass(frozen=True)
class BranchProduct:
    """R(z) = sqrt(prod (z - a_k)(z - b_k)) with the per-pair cut convention.

    On the upper half-plane R is evaluated as exp(0.5 * sum log(z - p)) with
    principal logs; on the real axis (approached from above) this gives
    R real on gaps and purely imaginary on electrodes, and R ~ z^N at
    infinity.
    """

    points: tuple[float, ...]   # sorted, length 2N

    def __init__(self, points):
        pts = tuple(float(p) for p in points)
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise SingularSystem("branch points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def n_pairs(self) -> int:
        return len(self.points) // 2

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        logs = sum(np.log(z - p) for p in self.points)
        r = np.exp(0.5 * logs)
        return complex(r) if r.ndim == 0 else r

    def abs_on_axis(self, x):
        """|R(x)| for real x."""
        x = np.asarray(x, dtype=float)
        prod = np.ones_like(x)
        for p in self.points:
            prod = prod * np.abs(x - p)
        return np.sqrt(prod)

    def abs_excluding(self, x, skip: tuple[float, ...]):
        """|R(x)| with the factors for the points in ``skip`` removed."""
        x = np.asarray(x, dtype=float)
        prod = np.ones_like(x)
        for p in self.points:
            if p in skip:
                continue
            prod = prod * np.abs(x - p)
        return np.sqrt(prod)


@dataclass(frozen=True)
class OracleSolution:
    """Solved half-plane problem: f = P/R with real coefficients of P."""

    problem: HalfPlaneProblem
    coeffs: np.ndarray
    branch: BranchProduct = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "branch", BranchProduct(self.problem.branch_points))

    # sign of R/(i|R|) on electrode j and of R/|R| on gap g, 0-based,
    # gap g sits between electrodes g-1 and g (g = 0 and g = N are outer).
    def _electrode_sign(self, j: int) -> float:
        return -1.0 if (self.problem.n - j) % 2 else 1.0

    def _gap_sign(self, g: int) -> float:
        return -1.0 if (self.problem.n - g) % 2 else 1.0

    def eval_f(self, z):
        """f(z) = P(z)/R(z), holomorphic on the open upper half-plane.

        On the boundary, (Re f, Im f) = (tangential derivative, outward-normal
        derivative) of the potential.
        """
        z = np.asarray(z, dtype=complex)
        if np.any(np.isin(z, np.asarray(self.problem.branch_points, complex))):
            raise BranchPointEvaluation("f has branch points at electrode endpoints")
        val = npoly.polyval(z, self.coeffs) / self.branch(z)
        return complex(val) if val.ndim == 0 else val

    def _locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """searchsorted positions of x among the branch points; odd = electrode."""
        x = np.asarray(x, dtype=float)
        pts = np.asarray(self.branch.points)
        if np.any(np.isin(x, pts)):
            raise BranchPointEvaluation("evaluation at an electrode endpoint")
        return x, np.searchsorted(pts, x)

    def neumann_density(self, x):
        """Boundary current density Im f(x + i0) for x strictly inside an electrode."""
        x, pos = self._locate(x)
        if np.any(pos % 2 == 0):
            raise NotOnElectrode(f"x = {x} is not strictly inside an electrode")
        j = (pos - 1) // 2
        sign = np.where((self.problem.n - j) % 2, -1.0, 1.0)
        val = sign * npoly.polyval(x, self.coeffs) / self.branch.abs_on_axis(x)
        return float(val) if val.ndim == 0 else val

    def tangential_derivative(self, x):
        """Re f(x + i0) for x strictly inside an insulated gap."""
        x, pos = self._locate(x)
        if np.any(pos % 2 == 1):
            raise NotOnGap(f"x = {x} is not strictly inside a gap")
        g = pos // 2
        sign = np.where((self.problem.n - g) % 2, -1.0, 1.0)
        val = sign * npoly.polyval(x, self.coeffs) / self.branch.abs_on_axis(x)
        return float(val) if val.ndim == 0 else val

    def _endpoint_index(self, e: float) -> int:
        pts = np.asarray(self.branch.points)
        hit = np.nonzero(np.isclose(pts, e, rtol=0.0, atol=1e-12 * max(1.0, abs(e))))[0]
        if hit.size != 1:
            raise NotAnEndpoint(f"{e} is not an electrode endpoint")
        return int(hit[0])

    def edge_coefficient(self, e: float) -> float:
        """A >= 0 with density ~ A |x-e|^{-1/2} and tangential ~ A |x-e|^{-1/2}."""
        i = self._endpoint_index(e)
        pts = np.asarray(self.branch.points)
        others = np.delete(pts, i)
        pe = npoly.polyval(pts[i], self.coeffs)
        return float(abs(pe) / math.sqrt(np.prod(np.abs(pts[i] - others))))

    def edge_sign(self, e: float) -> float:
        """Sign of the density as x -> e from inside the electrode owning e."""
        i = self._endpoint_index(e)
        j = i // 2
        pe = npoly.polyval(self.branch.points[i], self.coeffs)
        s = self._electrode_sign(j) * math.copysign(1.0, pe if pe != 0.0 else 1.0)
        return s if pe != 0.0 else 0.0

    def current_integrals(self, n_quad: int = 128) -> np.ndarray:
        """Per-electrode integral of the density (Gauss-Chebyshev)."""
        t, w = gauss_chebyshev(n_quad)
        out = np.empty(self.problem.n)
        for j, (a, b) in enumerate(self.problem.electrodes):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            x = mid + half * t
            g = npoly.polyval(x, self.coeffs) / self.branch.abs_excluding(x, (a, b))
            out[j] = self._electrode_sign(j) * w * g.sum()
        return out

    def electrode_potentials(self, n_quad: int = 128) -> np.ndarray:
        """Electrode potentials U_k, normalized so that sum U_k = 0.

        u is constant on each electrode (Re f = 0 there); successive
        differences are integrals of Re f across the finite gaps, evaluated
        with the Gauss-Chebyshev rule matched to the inverse-square-root
        endpoint behaviour.
        """
        t, w = gauss_chebyshev(n_quad)
        n = self.problem.n
        diffs = np.empty(n - 1)
        for j in range(n - 1):
            a, b = self.problem.electrodes[j][1], self.problem.electrodes[j + 1][0]
            if not b > a:
                raise QuadratureFailure("degenerate gap between electrodes")
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            x = mid + half * t
            g = npoly.polyval(x, self.coeffs) / self.branch.abs_excluding(x, (a, b))
            diffs[j] = self._gap_sign(j + 1) * w * g.sum()
        u = np.concatenate(([0.0], np.cumsum(diffs)))
        return u - u.mean()

    def energy(self) -> float:
        """Dirichlet energy sum_k J_k U_k of the solution."""
        return float(np.dot(self.problem.currents, self.electrode_potentials()))

    def gradient_frame_samples(self, e: float, r: float, angles: np.ndarray
                               ) -> tuple[np.ndarray, np.ndarray]:
        """(tangential, outward-normal) derivative samples on a half-circle.

        ``angles`` are measured from the electrode side of endpoint ``e``
        into the domain; the tangential axis points from e into the
        electrode.  Near e these components approach
        sign * A * r^{-1/2} * (sin(angle/2), cos(angle/2)).
        """
        i = self._endpoint_index(e)
        left_end = (i % 2 == 0)   # a_j: electrode extends to the right of e
        ang = np.asarray(angles, dtype=float)
        if left_end:
            z = e + r * np.exp(1j * ang)
            f = self.eval_f(z)
            return np.real(f), np.imag(f)
        z = e + r * np.exp(1j * (math.pi - ang))
        f = self.eval_f(z)
        return -np.real(f), np.imag(f)


def _moment_matrix(problem: HalfPlaneProblem, branch: BranchProduct,
                   n_quad: int) -> np.ndarray:
    """G[j, k] = integral over electrode j of x^k / |R(x)| dx."""
    n = problem.n
    t, w = gauss_chebyshev(n_quad)
    G = np.empty((n, n))
    for j, (a, b) in enumerate(problem.electrodes):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        x = mid + half * t
        base = w / branch.abs_excluding(x, (a, b))
        xk = np.ones_like(x)
        for k in range(n):
            G[j, k] = np.dot(base, xk)
            xk = xk * x
    return G


def solve_coefficients(problem: HalfPlaneProblem, n_quad: int = 64) -> OracleSolution:
    """Determine the polynomial coefficients of P from the currents.

    Assembles the signed moment system (one row per electrode current),
    replaces the last row by the exact flux-balance identity
    -pi * c_{N-1} = sum J_k, solves, and verifies all N original equations
    against a finer quadrature to 1e-12 relative.  The quadrature order is
    doubled (up to 512) if the verification fails.
    """
    n = problem.n
    J = np.asarray(problem.currents)
    signs = np.where((n - np.arange(n)) % 2, -1.0, 1.0)
    branch = BranchProduct(problem.branch_points)

    nq = int(n_quad)
    while True:
        G = _moment_matrix(problem, branch, nq)
        M = signs[:, None] * G
        M[-1, :] = 0.0
        M[-1, -1] = -math.pi
        rhs = J.copy()
        rhs[-1] = J.sum()
        try:
            c = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"degenerate electrode layout: {exc}") from exc
        if not np.all(np.isfinite(c)):
            raise SingularSystem("non-finite coefficients from the linear solve")

        G_fine = _moment_matrix(problem, branch, 2 * nq)
        residual = np.abs(signs * (G_fine @ c) - J).max()
        scale = max(1.0, np.abs(J).max())
        if residual <= 1e-12 * scale:
            return OracleSolution(problem, c)
        if nq >= 512:
            raise QuadratureFailure(
                f"current residual {residual:.3e} exceeds 1e-12 relative at "
                f"quadrature order {nq}; electrodes may be nearly degenerate"
            )
        nq *= 2


# --- pullback to the unit disc ------------------------------------------------

def _disc_param_to_axis(s: np.ndarray):
    """x = tan(s/2) with s normalized to (-pi, pi), plus the stretch dx/ds."""
    s = np.asarray(s, dtype=float)
    s_n = np.where(s > math.pi, s - 2.0 * math.pi, s)
    x = np.tan(0.5 * s_n)
    return x, 0.5 * (1.0 + x * x)


@dataclass(frozen=True)
class DiscOracleSolution:
    """Half-plane oracle pulled back to the unit disc through the Mobius map.

    Electrode k of the disc layout corresponds to electrode perm[k] of the
    half-plane problem (the map x = tan(s/2) permutes the ordering when arcs
    lie on both sides of s = pi).  Boundary density and tangential data pick
    up the conformal stretch |m'| = dx/ds; fluxes are conformally invariant.
    """

    layout: ElectrodeLayout
    currents: tuple[float, ...]
    half: OracleSolution
    perm: tuple[int, ...]        # disc arc k -> half-plane electrode perm[k]

    def density(self, s):
        x, stretch = _disc_param_to_axis(s)
        return self.half.neumann_density(x) * stretch

    def tangential_derivative(self, s):
        x, stretch = _disc_param_to_axis(s)
        return self.half.tangential_derivative(x) * stretch

    def electrode_potentials(self) -> np.ndarray:
        u_half = self.half.electrode_potentials()
        return u_half[np.asarray(self.perm)]

    def current_integrals(self) -> np.ndarray:
        return self.half.current_integrals()[np.asarray(self.perm)]

    def edge_coefficient(self, s_e: float) -> float:
        """Blow-up coefficient in arc-length distance on the circle."""
        x_e, stretch = _disc_param_to_axis(s_e)
        return self.half.edge_coefficient(float(x_e)) * math.sqrt(float(stretch))

    def edge_sign(self, s_e: float) -> float:
        x_e, _ = _disc_param_to_axis(s_e)
        return self.half.edge_sign(float(x_e))

    def eval_f(self, w):
        """Pulled-back holomorphic gradient f_disc(w) = f(m(w)) * m'(w)."""
        z, dz = mobius_disc_to_halfplane(w)
        return self.half.eval_f(z) * dz

    def grad_potential(self, w):
        """True potential gradient (u_x, u_y) at points w inside the disc."""
        fv = np.asarray(self.eval_f(w))
        return np.real(fv), -np.imag(fv)

    def energy(self) -> float:
        return float(np.dot(self.currents, self.electrode_potentials()))


def disc_oracle(layout: ElectrodeLayout, currents, n_quad: int = 64
                ) -> DiscOracleSolution:
    """Solve a unit-disc CEM problem by mapping it to the half-plane.

    No electrode arc may contain s = pi (the pre-image of infinity under
    m(w) = i(1-w)/(1+w)); that point must stay insulated.
    """
    pattern = currents if isinstance(currents, CurrentPattern) else CurrentPattern(currents)
    disc = DomainSpec.unit_disc()
    try:
        validate_layout(layout, disc, for_oracle=True)
    except ElectrodeThroughInfinity:
        raise
    intervals = []
    for a, b in layout.arcs:
        xa, _ = _disc_param_to_axis(a)
        xb, _ = _disc_param_to_axis(b)
        intervals.append((float(xa), float(xb)))
    order = sorted(range(layout.n), key=lambda k: intervals[k][0])
    half_arcs = [intervals[k] for k in order]
    half_J = [pattern.values[k] for k in order]
    half = solve_coefficients(HalfPlaneProblem(half_arcs, half_J), n_quad=n_quad)
    # perm[k] = position of disc arc k in the half-plane ordering
    perm = tuple(order.index(k) for k in range(layout.n))
    return DiscOracleSolution(layout, pattern.values, half, perm)
