"""Domains, electrode layouts, and the explicit conformal maps.

Supported domains: the unit disc, the upper half-plane (oracle only, never
meshed), and a circular-sector "wedge" with interior angle ``phi`` at the
origin.  Boundaries are parametrized by arc length ``s``:

* unit disc:   s in [0, 2*pi), point (cos s, sin s), anchored at s = 0;
* half-plane:  s = x on the real axis;
* wedge(phi, rho): s in [0, rho*(2 + phi)) running corner -> (rho, 0) ->
  circular arc -> (rho*cos phi, rho*sin phi) -> corner.

Two conformal maps are provided: the Mobius map m(w) = i*(1-w)/(1+w) from
the closed unit disc to the closed upper half-plane (w = -1 goes to
infinity), and the corner-unfolding power map z -> z**(pi/phi) that
flattens a wedge of angle phi onto a half-plane neighbourhood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    CurrentImbalance,
    ElectrodeThroughInfinity,
    EmptyArc,
    InvalidAngle,
    OriginSingularity,
    OutOfRange,
    OverlappingArcs,
    PoleAtMinusOne,
)

TWO_PI = 2.0 * math.pi


class DomainKind(Enum):
    UNIT_DISC = "disc"
    UPPER_HALF_PLANE = "halfplane"
    WEDGE = "wedge"


@dataclass(frozen=True)
class DomainSpec:
    """A solver domain.  ``angle``/``radius`` are meaningful for wedges only."""

    kind: DomainKind
    angle: float = math.nan
    radius: float = math.nan

    @staticmethod
    def unit_disc() -> "DomainSpec":
        return DomainSpec(DomainKind.UNIT_DISC)

    @staticmethod
    def upper_half_plane() -> "DomainSpec":
        return DomainSpec(DomainKind.UPPER_HALF_PLANE)

    @staticmethod
    def wedge(angle: float, radius: float = 1.0) -> "DomainSpec":
        if not 0.0 < angle < TWO_PI:
            raise InvalidAngle(f"wedge angle must lie in (0, 2*pi), got {angle}")
        if radius <= 0.0:
            raise InvalidAngle(f"wedge radius must be positive, got {radius}")
        return DomainSpec(DomainKind.WEDGE, angle=angle, radius=radius)

    @property
    def is_closed(self) -> bool:
        """True when the boundary is a closed curve of finite length."""
        return self.kind is not DomainKind.UPPER_HALF_PLANE

    def boundary_length(self) -> float:
        if self.kind is DomainKind.UNIT_DISC:
            return TWO_PI
        if self.kind is DomainKind.WEDGE:
            return self.radius * (2.0 + self.angle)
        return math.inf


@dataclass(frozen=True)
class ElectrodeLayout:
    """Disjoint closed boundary arcs (s_start, s_end), ordered increasingly."""

    arcs: tuple[tuple[float, float], ...]

    def __init__(self, arcs):
        object.__setattr__(self, "arcs", tuple((float(a), float(b)) for a, b in arcs))

    @property
    def n(self) -> int:
        return len(self.arcs)

    @property
    def endpoints(self) -> np.ndarray:
        """All 2N arc endpoints as a flat array (a_0, b_0, a_1, b_1, ...)."""
        return np.array([e for arc in self.arcs for e in arc])

    def lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.arcs])

    def containing_arc(self, s: float) -> int | None:
        """Index of the closed arc containing s, or None."""
        for k, (a, b) in enumerate(self.arcs):
            if a <= s <= b:
                return k
        return None


@dataclass(frozen=True)
class CurrentPattern:
    """Per-electrode injected currents; must sum to zero."""

    values: tuple[float, ...]

    def __init__(self, values):
        vals = tuple(float(v) for v in values)
        object.__setattr__(self, "values", vals)
        scale = max(1.0, max((abs(v) for v in vals), default=0.0))
        if abs(sum(vals)) > 1e-14 * scale:
            raise CurrentImbalance(
                f"currents must sum to zero, got sum = {sum(vals):.3e}"
            )

    @property
    def n(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


def validate_layout(layout: ElectrodeLayout, domain: DomainSpec,
                    for_oracle: bool = False) -> None:
    """Check the layout invariants on the given domain; raise on violation.

    With ``for_oracle=True`` a disc layout must additionally keep s = pi
    (the pre-image of infinity under the Mobius map) outside every arc.
    """
    arcs = layout.arcs
    length = domain.boundary_length()
    for k, (a, b) in enumerate(arcs):
        if not b > a:
            raise EmptyArc(k)
        if domain.is_closed and (a < 0.0 or b > length):
            raise OutOfRange(f"arc {k}", f"[{a}, {b}] not within [0, {length:.6g}]")
    for k in range(len(arcs) - 1):
        if arcs[k + 1][0] <= arcs[k][1]:
            raise OverlappingArcs(k, k + 1)
    if for_oracle and domain.kind is DomainKind.UNIT_DISC:
        for k, (a, b) in enumerate(arcs):
            if a <= math.pi <= b:
                raise ElectrodeThroughInfinity(
                    f"arc {k} contains s = pi, the pre-image of infinity"
                )


# --- conformal maps ---------------------------------------------------------

def mobius_disc_to_halfplane(w):
    """m(w) = i*(1-w)/(1+w) and its derivative dz/dw = -2i/(1+w)**2.

    Maps the closed unit disc (minus w = -1) onto the closed upper
    half-plane; the unit circle goes to the real axis, e^{is} -> tan(s/2).
    """
    w = np.asarray(w, dtype=complex)
    if np.any(w == -1.0):
        raise PoleAtMinusOne("Mobius map has its pole at w = -1")
    z = 1j * (1.0 - w) / (1.0 + w)
    dz_dw = -2j / (1.0 + w) ** 2
    if z.ndim == 0:
        return complex(z), complex(dz_dw)
    return z, dz_dw


def mobius_halfplane_to_disc(z):
    """Inverse map w = (i-z)/(i+z) with derivative dw/dz = -2i/(i+z)**2."""
    z = np.asarray(z, dtype=complex)
    w = (1j - z) / (1j + z)
    dw_dz = -2j / (1j + z) ** 2
    if w.ndim == 0:
        return complex(w), complex(dw_dz)
    return w, dw_dz


def _wedge_arg(z: np.ndarray) -> np.ndarray:
    """Argument normalized to [0, 2*pi), with the cut on the wedge exterior."""
    theta = np.angle(z)
    return np.where(theta < 0.0, theta + TWO_PI, theta)


def corner_unfold(z, phi: float):
    """Unfold a wedge of interior angle phi: returns (z**(pi/phi), jacobian).

    The power uses the branch with arg in [0, 2*pi), single-valued on the
    physical wedge 0 <= arg z <= phi.  phi = pi is the exact identity.
    """
    if not 0.0 < phi <= TWO_PI:
        raise InvalidAngle(f"corner angle must lie in (0, 2*pi], got {phi}")
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0.0):
        raise OriginSingularity("corner unfolding is singular at z = 0")
    if phi == math.pi:
        jac = np.ones_like(z)
        return (complex(z), 1.0 + 0.0j) if z.ndim == 0 else (z.copy(), jac)
    p = math.pi / phi
    zt = np.exp(p * (np.log(np.abs(z)) + 1j * _wedge_arg(z)))
    jac = p * zt / z
    if zt.ndim == 0:
        return complex(zt), complex(jac)
    return zt, jac


def corner_fold(zt, phi: float):
    """Inverse of corner_unfold: returns (zt**(phi/pi), jacobian)."""
    if not 0.0 < phi <= TWO_PI:
        raise InvalidAngle(f"corner angle must lie in (0, 2*pi], got {phi}")
    zt = np.asarray(zt, dtype=complex)
    if np.any(zt == 0.0):
        raise OriginSingularity("corner folding is singular at z = 0")
    if phi == math.pi:
        jac = np.ones_like(zt)
        return (complex(zt), 1.0 + 0.0j) if zt.ndim == 0 else (zt.copy(), jac)
    q = phi / math.pi
    z = np.exp(q * (np.log(np.abs(zt)) + 1j * _wedge_arg(zt)))
    jac = q * z / zt
    if z.ndim == 0:
        return complex(z), complex(jac)
    return z, jac


# --- arc-length parametrization ---------------------------------------------

def boundary_point(domain: DomainSpec, s: float) -> np.ndarray:
    """Point on the boundary at arc-length parameter s."""
    if domain.kind is DomainKind.UPPER_HALF_PLANE:
        return np.array([s, 0.0])
    length = domain.boundary_length()
    if s < -1e-12 or s > length + 1e-12:
        raise OutOfRange("arc-length parameter", f"s = {s}")
    return _point_cyclic(domain, s)


def _point_cyclic(domain: DomainSpec, s: float) -> np.ndarray:
    """boundary_point with s taken modulo the boundary length."""
    if domain.kind is DomainKind.UNIT_DISC:
        return np.array([math.cos(s), math.sin(s)])
    rho, phi = domain.radius, domain.angle
    s = s % domain.boundary_length()
    if s <= rho:
        return np.array([s, 0.0])
    if s <= rho + rho * phi:
        t = (s - rho) / rho
        return np.array([rho * math.cos(t), rho * math.sin(t)])
    r = rho - (s - rho - rho * phi)
    return np.array([r * math.cos(phi), r * math.sin(phi)])


def dist_to_nearest_edge(layout: ElectrodeLayout, s: float,
                         domain: DomainSpec | None = None) -> float:
    """Arc-length distance from s to the nearest electrode endpoint.

    On closed boundaries the distance wraps around; pass the domain to get
    the wrapped metric.
    """
    if layout.n == 0:
        return math.inf
    d = np.abs(layout.endpoints - s)
    if domain is not None and domain.is_closed:
        length = domain.boundary_length()
        d = np.minimum(d, length - d)
    return float(d.min())


# --- domain predicates (used by the mesher) ----------------------------------

def contains(domain: DomainSpec, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Boolean mask: which points (n, 2) lie in the closed domain (+tol)."""
    pts = np.atleast_2d(points)
    if domain.kind is DomainKind.UNIT_DISC:
        return np.hypot(pts[:, 0], pts[:, 1]) <= 1.0 + tol
    if domain.kind is DomainKind.WEDGE:
        rho, phi = domain.radius, domain.angle
        r = np.hypot(pts[:, 0], pts[:, 1])
        theta = np.arctan2(pts[:, 1], pts[:, 0])
        theta = np.where(theta < 0.0, theta + TWO_PI, theta)
        ang_ok = (theta <= phi + tol / np.maximum(r, 1e-300)) | (r <= tol)
        return (r <= rho + tol) & ang_ok
    return pts[:, 1] >= -tol


def _dist_point_segment(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(pts - proj).T)


def dist_to_boundary(domain: DomainSpec, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from points (n, 2) to the boundary curve."""
    pts = np.atleast_2d(points)
    if domain.kind is DomainKind.UNIT_DISC:
        return np.abs(1.0 - np.hypot(pts[:, 0], pts[:, 1]))
    if domain.kind is DomainKind.UPPER_HALF_PLANE:
        return np.abs(pts[:, 1])
    rho, phi = domain.radius, domain.angle
    d1 = _dist_point_segment(pts, np.zeros(2), np.array([rho, 0.0]))
    d2 = _dist_point_segment(pts, np.zeros(2),
                             np.array([rho * math.cos(phi), rho * math.sin(phi)]))
    r = np.hypot(pts[:, 0], pts[:, 1])
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    theta = np.where(theta < 0.0, theta + TWO_PI, theta)
    on_sector = theta <= phi
    ends = np.array([[rho, 0.0], [rho * math.cos(phi), rho * math.sin(phi)]])
    d_arc = np.where(on_sector, np.abs(rho - r),
                     np.minimum(np.hypot(*(pts - ends[0]).T),
                                np.hypot(*(pts - ends[1]).T)))
    return np.minimum(np.minimum(d1, d2), d_arc)
