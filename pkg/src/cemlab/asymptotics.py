"""Power-law extraction and verification of the edge/corner blow-up laws.

The quantitative claims under test: boundary current density behaves like
A * dist^(-1/2) at electrode endpoints on smooth boundary parts, like
A * dist^(pi/(2*phi) - 1) when the electrode meets the insulated boundary at
an interior angle phi, and near an endpoint the (tangential, normal)
derivative pair follows the angular profile A * r^(-1/2) *
(sin(angle/2), cos(angle/2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientSamples,
    InvalidAngle,
    NonPositiveValue,
    ProbeOutsideDomain,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FitResult:
    exponent: float          # fitted slope p of log|v| vs log(dist)
    coefficient: float       # A = exp(intercept)
    window: tuple[float, float]
    r_squared: float
    n_samples: int


def fit_power_law(samples, window: tuple[float, float]) -> FitResult:
    """Ordinary least squares of log|value| against log(dist) inside window.

    ``samples`` is a sequence of (dist, value) pairs or a pair of arrays.
    Only samples strictly inside (d_min, d_max) enter the fit; at least 8
    are required and all of them must have positive dist and value.
    """
    d_min, d_max = float(window[0]), float(window[1])
    if not 0.0 < d_min < d_max:
        raise InsufficientSamples(f"invalid fit window ({d_min}, {d_max})")
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == 2 and arr.shape[1] != 2:
        dist, val = arr[0], arr[1]
    else:
        arr = np.atleast_2d(arr)
        dist, val = arr[:, 0], arr[:, 1]
    mask = (dist > d_min) & (dist < d_max)
    dist, val = dist[mask], val[mask]
    if dist.size < 8:
        raise InsufficientSamples(
            f"need >= 8 samples strictly inside the window, got {dist.size}"
        )
    if np.any(val <= 0.0):
        raise NonPositiveValue("power-law fit requires positive values")
    x, y = np.log(dist), np.log(val)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - float(np.sum(resid**2)) / ss_tot)
    return FitResult(
        exponent=float(slope),
        coefficient=float(math.exp(intercept)),
        window=(d_min, d_max),
        r_squared=min(1.0, r2),
        n_samples=int(dist.size),
    )


def predicted_exponent(corner_angle: float | None = None) -> float:
    """Density blow-up exponent: -1/2 on smooth boundary, pi/(2*phi) - 1 at
    a corner of interior angle phi (phi = pi reduces to the smooth case)."""
    if corner_angle is None:
        return -0.5
    phi = float(corner_angle)
    if not 0.0 < phi <= TWO_PI:
        raise InvalidAngle(f"corner angle must lie in (0, 2*pi], got {phi}")
    return math.pi / (2.0 * phi) - 1.0


@dataclass(frozen=True)
class AngularProbe:
    """Gradient samples on a half-circle of radius r around an edge point.

    ``angles`` are measured from the electrode side; ``tangential`` points
    from the endpoint into the electrode, ``normal`` out of the domain
    (the same frame the boundary density lives in).
    """

    radius: float
    angles: np.ndarray
    tangential: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ProbeOutsideDomain(f"probe radius must be positive, got {self.radius}")
        a = np.asarray(self.angles, dtype=float)
        if a.size == 0 or np.any(a <= 0.0) or np.any(a >= math.pi):
            raise ProbeOutsideDomain("probe angles must lie strictly in (0, pi)")


def oracle_probe(solution, endpoint: float, radius: float,
                 n_angles: int = 17) -> AngularProbe:
    """Build an AngularProbe from half-plane oracle gradient samples."""
    angles = math.pi * (np.arange(1, n_angles + 1)) / (n_angles + 1)
    gt, gn = solution.gradient_frame_samples(endpoint, radius, angles)
    return AngularProbe(radius=radius, angles=angles, tangential=gt, normal=gn)


def angular_profile_error(probe: AngularProbe, coefficient: float) -> float:
    """Max relative deviation from A * r^(-1/2) * (sin(a/2), cos(a/2)).

    ``coefficient`` is the signed edge coefficient (sign of the density on
    the electrode side); the deviation is normalized by |A| r^(-1/2).
    """
    if coefficient == 0.0:
        raise NonPositiveValue("profile comparison needs a nonzero coefficient")
    scale = abs(coefficient) * probe.radius ** -0.5
    pred_t = coefficient * probe.radius ** -0.5 * np.sin(0.5 * probe.angles)
    pred_n = coefficient * probe.radius ** -0.5 * np.cos(0.5 * probe.angles)
    dev = np.hypot(probe.tangential - pred_t, probe.normal - pred_n)
    return float(dev.max() / scale)


# --- FEM/oracle convergence harness -------------------------------------------

@dataclass(frozen=True)
class StudyRow:
    dofs: int
    l2_error: float          # boundary density L2 error at dist >= 0.1|E|
    exponent: float
    coefficient: float
    r_squared: float


def density_samples_near_endpoint(solution, electrode: int, endpoint_s: float,
                                  dists: np.ndarray) -> np.ndarray:
    """|density| of a FEM solution at arc-distances from an electrode endpoint.

    The recovered boundary density is piecewise linear along the electrode
    chain, so it can be sampled at arbitrary positions independent of the
    mesh vertex spacing.
    """
    s_chain, q_chain = solution.density_chains[electrode]
    a, b = solution.system.layout.arcs[electrode]
    if abs(endpoint_s - a) <= abs(endpoint_s - b):
        s = a + dists
    else:
        s = b - dists
    return np.abs(np.interp(s, s_chain, q_chain))


def convergence_study(meshes, sigma, rho, layout, currents, reference,
                      fit_endpoint: float | None = None,
                      fit_window_rel: tuple[float, float] = (1e-3, 5e-2),
                      far_fraction: float = 0.1,
                      n_fit_samples: int = 32) -> list[StudyRow]:
    """Solve on each mesh and tabulate density error and fitted (p, A).

    ``reference`` is a disc oracle solution providing the exact boundary
    density.  The L2 error is taken over electrode points at arc-distance
    >= far_fraction * |E| from the endpoints; the power-law fit runs in
    fit_window_rel * |E| from ``fit_endpoint`` (default: first arc start).
    Rows are sorted by DOF count.
    """
    from . import fem  # deferred: fem pulls in the mesh machinery

    if len(meshes) < 3:
        raise InsufficientSamples("need at least 3 meshes")
    arcs = layout.arcs
    if fit_endpoint is None:
        fit_endpoint = arcs[0][0]
    k_fit = _arc_of_endpoint(layout, fit_endpoint)
    e_len = arcs[k_fit][1] - arcs[k_fit][0]
    window = (fit_window_rel[0] * e_len, fit_window_rel[1] * e_len)
    dists = np.geomspace(window[0] * 1.02, window[1] * 0.98, n_fit_samples)

    rows = []
    for mesh in meshes:
        system = fem.assemble(mesh, sigma, rho, layout, currents)
        solution = fem.solve(system)
        err2 = 0.0
        any_signal = False
        for k, (a, b) in enumerate(arcs):
            s_chain, q_chain = solution.density_chains[k]
            d0 = far_fraction * (b - a)
            mids = 0.5 * (s_chain[1:] + s_chain[:-1])
            seg = np.diff(s_chain)
            keep = (mids - a >= d0) & (b - mids >= d0)
            if not np.any(keep):
                continue
            q_mid = np.interp(mids[keep], s_chain, q_chain)
            q_ref = np.array([reference.density(s) for s in mids[keep]])
            err2 += float(np.sum(seg[keep] * (q_mid - q_ref) ** 2))
            if np.abs(q_mid).max() > 1e-14:
                any_signal = True
        vals = density_samples_near_endpoint(solution, k_fit, fit_endpoint, dists)
        if any_signal and np.all(vals > 0.0):
            fit = fit_power_law(np.column_stack([dists, vals]), window)
            rows.append(StudyRow(solution.n_dofs, math.sqrt(err2),
                                 fit.exponent, fit.coefficient, fit.r_squared))
        else:
            rows.append(StudyRow(solution.n_dofs, math.sqrt(err2), 0.0, 0.0, 1.0))
    rows.sort(key=lambda r: r.dofs)
    return rows


def _arc_of_endpoint(layout, endpoint_s: float) -> int:
    for k, (a, b) in enumerate(layout.arcs):
        if math.isclose(endpoint_s, a, abs_tol=1e-12) or \
           math.isclose(endpoint_s, b, abs_tol=1e-12):
            return k
    raise InsufficientSamples(f"{endpoint_s} is not an electrode endpoint")


def study_rows_csv(rows) -> str:
    lines = ["dofs,l2_error,exponent,coefficient,r_squared"]
    for r in rows:
        lines.append(
            f"{r.dofs},{r.l2_error:.17g},{r.exponent:.17g},"
            f"{r.coefficient:.17g},{r.r_squared:.17g}"
        )
    return "\n".join(lines) + "\n"
