"""Graded triangulations of the disc and wedge domains.

Mesh size decreases linearly with distance to the electrode endpoints, from
h_max far away down to a floor of gamma**levels * h_max; the boundary edge
adjacent to each endpoint has exactly that floor length (in arc length).

Construction is hybrid.  Within a small radius of each endpoint the point
spacing drops below what double precision can distinguish from collinear or
cocircular (the sagitta of a 5e-8 chord of the unit circle is ~3e-16), which
degenerates Delaunay triangulation, so that zone is meshed with structured
geometric rings ("fans") anchored to the boundary ladder.  Outside the fans,
boundary vertices are marched with the graded spacing, interior candidates
come from geometric rings around each endpoint plus a hexagonal background
lattice, a spacing-aware thinning pass removes crowding, and the cloud is
Delaunay-triangulated; triangles outside the domain (reentrant wedge) and
inside fan disks are discarded, then fan triangles are stitched in.  The
result is validated: conforming, positively oriented, boundary covered
exactly once, minimum angle above a quality threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import GradingTooAggressive, LayoutConflict
from .geometry import (
    DomainKind,
    DomainSpec,
    ElectrodeLayout,
    _point_cyclic,
    contains,
    dist_to_boundary,
    validate_layout,
)

INSULATED = -1


@dataclass(frozen=True)
class Grading:
    """Geometric grading toward electrode endpoints."""

    h_max: float = 0.2
    gamma: float = 0.15
    levels: int = 8

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise LayoutConflict(f"grading ratio must be in (0,1), got {self.gamma}")
        if self.levels < 0 or self.h_max <= 0.0:
            raise LayoutConflict("grading needs h_max > 0 and levels >= 0")

    @property
    def h_floor(self) -> float:
        return self.h_max * self.gamma ** self.levels


@dataclass
class Mesh:
    """Conforming triangulation with labeled boundary chain.

    ``boundary_chain`` lists the boundary vertex indices in increasing
    arc-length order (cyclic); ``boundary_s`` the matching parameters;
    ``boundary_labels[i]`` labels the edge from chain[i] to chain[i+1]
    (electrode index or INSULATED).
    """

    domain: DomainSpec
    layout: ElectrodeLayout
    grading: Grading
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_chain: np.ndarray
    boundary_s: np.ndarray
    boundary_labels: np.ndarray
    _chains: list | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def boundary_edges(self) -> np.ndarray:
        """(nb, 2) vertex pairs along the boundary chain."""
        return np.column_stack([self.boundary_chain,
                                np.roll(self.boundary_chain, -1)])

    def electrode_chains(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per electrode: (vertex indices, s values) in increasing s order.

        Electrode arcs never cross the chain start, so each electrode is a
        contiguous run of chain edges carrying its label.
        """
        if self._chains is None:
            chains = []
            nb = self.boundary_chain.size
            for k in range(self.layout.n):
                idx = np.nonzero(self.boundary_labels == k)[0]
                if idx.size == 0:
                    raise LayoutConflict(f"electrode {k} has no boundary edges")
                run = np.concatenate([idx, [idx[-1] + 1]])
                verts = self.boundary_chain[run % nb]
                s = np.empty(run.size)
                s[:-1] = self.boundary_s[idx]
                s[-1] = self.layout.arcs[k][1]
                chains.append((verts, s))
            self._chains = chains
        return self._chains

    def endpoint_vertices(self) -> dict[float, int]:
        """Map electrode endpoint s -> vertex index."""
        out = {}
        for k, (verts, s) in enumerate(self.electrode_chains()):
            a, b = self.layout.arcs[k]
            out[float(a)] = int(verts[0])
            out[float(b)] = int(verts[-1])
        return out

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices
        t = self.triangles
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        p = self.vertices
        t = self.triangles
        angles = []
        for i in range(3):
            a = p[t[:, i]]
            b = p[t[:, (i + 1) % 3]] - a
            c = p[t[:, (i + 2) % 3]] - a
            num = b[:, 0] * c[:, 0] + b[:, 1] * c[:, 1]
            den = np.hypot(b[:, 0], b[:, 1]) * np.hypot(c[:, 0], c[:, 1])
            angles.append(np.degrees(np.arccos(np.clip(num / den, -1.0, 1.0))))
        return float(np.min(angles))

    def validate(self, min_angle_deg: float = 15.0) -> None:
        """Check conformity, orientation, boundary coverage, and quality."""
        areas = self.triangle_areas()
        if np.any(areas <= 0.0):
            raise GradingTooAggressive("non-positively-oriented triangle")
        edge_count: dict[tuple[int, int], int] = {}
        for tri in self.triangles:
            a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
            for e in ((a, b), (b, c), (c, a)):
                key = (e[0], e[1]) if e[0] < e[1] else (e[1], e[0])
                edge_count[key] = edge_count.get(key, 0) + 1
        if any(c > 2 for c in edge_count.values()):
            raise GradingTooAggressive("non-conforming edge shared by > 2 triangles")
        boundary = {k for k, c in edge_count.items() if c == 1}
        chain_edges = {(min(int(a), int(b)), max(int(a), int(b)))
                       for a, b in self.boundary_edges()}
        if boundary != chain_edges:
            raise GradingTooAggressive(
                f"boundary not covered exactly once "
                f"({len(boundary ^ chain_edges)} mismatched edges)"
            )
        ang = self.min_angle()
        if ang < min_angle_deg:
            raise GradingTooAggressive(
                f"minimum angle {ang:.2f} deg below {min_angle_deg} deg"
            )


# --- structured endpoint fans --------------------------------------------------


@dataclass
class _FanPlan:
    s_e: float                 # endpoint arc parameter
    ladder: np.ndarray         # boundary offsets h_floor .. r_f (geometric)

    @property
    def r_f(self) -> float:
        return float(self.ladder[-1])


def _fan_plans(domain, layout, grading, rel) -> list[_FanPlan]:
    """One fan per electrode endpoint when the grading floor is below the
    spacing that Delaunay can resolve on this geometry."""
    scale = _domain_scale(domain)
    delta_safe = 5e-5 * scale
    if grading.h_floor >= delta_safe:
        return []
    length = domain.boundary_length()
    splits = sorted({e % length for arc in layout.arcs for e in arc}
                    | _corner_params(domain))
    plans = []
    for a, b in layout.arcs:
        for e in (a % length, b % length):
            gaps = []
            for s in splits:
                d = abs(s - e)
                d = min(d, length - d)
                if d > 1e-12 * scale:
                    gaps.append(d)
            cap = 0.35 * min(gaps) if gaps else 0.35 * length
            r_f = min(delta_safe / rel, cap)
            if r_f < 6.0 * grading.h_floor:
                raise GradingTooAggressive(
                    f"endpoint at s = {e:.6g}: neighbours too close for the "
                    f"grading floor {grading.h_floor:.3g}"
                )
            # graded ladder: linear steps of h_floor near the endpoint
            # (where the size field is clipped), geometric further out
            offs = [grading.h_floor]
            while offs[-1] < r_f:
                step = min(max(rel * offs[-1], grading.h_floor), grading.h_max)
                offs.append(min(offs[-1] + step, r_f))
            if len(offs) >= 2 and offs[-1] - offs[-2] < 0.4 * (
                    offs[-2] - (offs[-3] if len(offs) >= 3 else 0.0)):
                offs.pop(-2)   # avoid a stub ring at the fan rim
            plans.append(_FanPlan(s_e=e, ladder=np.array(offs)))
    return plans


def _zipper(inner: list[int], outer: list[int]) -> list[list[int]]:
    """Triangulate the strip between two rings with different vertex counts.

    Both rings share their first/last entries' angular parameter range; the
    merge advances along whichever ring has the nearer next vertex, which
    keeps triangles well-shaped for count ratios up to 2.
    """
    ni, no = len(inner) - 1, len(outer) - 1
    tris = []
    i = j = 0
    while i < ni or j < no:
        take_inner = j == no or (i < ni and (i + 1) * no <= (j + 1) * ni)
        if take_inner:
            tris.append([inner[i], inner[i + 1], outer[j]])
            i += 1
        else:
            tris.append([inner[i], outer[j + 1], outer[j]])
            j += 1
    return tris


def _corner_params(domain) -> set[float]:
    if domain.kind is DomainKind.WEDGE:
        rho, phi = domain.radius, domain.angle
        return {0.0, rho, rho + rho * phi}
    return set()


def _inward_normal(domain, s: float) -> np.ndarray:
    """Unit inward normal (for corners: interior bisector direction)."""
    length = domain.boundary_length()
    eps = 1e-7 * _domain_scale(domain)
    p0 = _point_cyclic(domain, (s - eps) % length)
    p1 = _point_cyclic(domain, (s + eps) % length)
    p = _point_cyclic(domain, s)
    # average of the two one-sided inward normals (tangent rotated by +90 deg
    # for a counterclockwise-parametrized boundary)
    t0 = p - p0
    t1 = p1 - p
    n = np.array([-(t0[1] + t1[1]), t0[0] + t1[0]])
    return n / np.hypot(*n)


def _build_fan(domain, plan: _FanPlan, chain_s: np.ndarray, rel: float,
               next_index: int):
    """Structured rings between the boundary ladder feet of one endpoint.

    Returns (new interior vertex coords, triangles in global indices,
    outer-ring vertex indices, updated next_index).  Boundary vertices are
    referenced through their chain positions.
    """
    length = domain.boundary_length()
    nb = chain_s.size
    e_xy = _point_cyclic(domain, plan.s_e)
    n_hat = _inward_normal(domain, plan.s_e)

    # locate the endpoint and ladder feet in the chain
    def chain_index(s_target: float) -> int:
        d = np.abs(chain_s - (s_target % length))
        d = np.minimum(d, length - d)
        i = int(np.argmin(d))
        if d[i] > 0.45 * (plan.ladder[0]):
            raise GradingTooAggressive(
                f"fan foot at s = {s_target:.9g} missing from the boundary chain"
            )
        return i

    i_e = chain_index(plan.s_e)
    plus = [chain_index(plan.s_e + o) for o in plan.ladder]
    minus = [chain_index(plan.s_e - o) for o in plan.ladder]

    # angular sweep from the plus-side foot to the minus-side foot through
    # the domain interior
    p_plus = _point_cyclic(domain, chain_s[plus[-1]])
    p_minus = _point_cyclic(domain, chain_s[minus[-1]])
    a_plus = math.atan2(*(p_plus - e_xy)[::-1])
    a_minus = math.atan2(*(p_minus - e_xy)[::-1])
    a_n = math.atan2(n_hat[1], n_hat[0])
    sweep = (a_minus - a_plus) % (2.0 * math.pi)
    if not 0.0 < (a_n - a_plus) % (2.0 * math.pi) < sweep:
        sweep = sweep - 2.0 * math.pi

    h_floor = plan.ladder[0]
    coords = []
    rows = []          # per ring: global vertex indices; counts vary by radius
    counts = []
    idx = next_index
    for k, _o in enumerate(plan.ladder):
        sp = chain_s[plus[k]]
        sm = chain_s[minus[k]]
        pp = _point_cyclic(domain, sp)
        pm = _point_cyclic(domain, sm)
        rp = float(np.hypot(*(pp - e_xy)))
        rm = float(np.hypot(*(pm - e_xy)))
        ap = math.atan2(*(pp - e_xy)[::-1])
        # angular step follows the clipped size field, so cells stay square
        delta = 0.95 * max(rel * 0.5 * (rp + rm), h_floor)
        n_k = max(3, int(math.ceil(abs(sweep) * 0.5 * (rp + rm) / delta)))
        if counts:
            n_k = min(max(n_k, counts[-1]), 2 * counts[-1])
        row = [plus[k]]
        for j in range(1, n_k):
            t = j / n_k
            ang = ap + t * sweep
            r = (1.0 - t) * rp + t * rm
            coords.append(e_xy + r * np.array([math.cos(ang), math.sin(ang)]))
            row.append(idx)
            idx += 1
        row.append(minus[k])
        rows.append(row)
        counts.append(n_k)

    tris = []
    for j in range(counts[0]):                  # innermost fan to the endpoint
        tris.append([i_e, rows[0][j], rows[0][j + 1]])
    for k in range(len(rows) - 1):              # zipper strips between rings
        tris.extend(_zipper(rows[k], rows[k + 1]))
    outer = [v for v in rows[-1][1:-1]]    # interior ring vertices only;
    inner_chain = set()                    # the feet stay in the chain cloud
    for k in range(len(plan.ladder) - 1):       # chain positions swallowed by the fan
        inner_chain.add(plus[k])
        inner_chain.add(minus[k])
    inner_chain.add(i_e)
    return (np.array(coords), np.array(tris, dtype=np.int64), outer,
            inner_chain, idx, nb)


# --- boundary discretization ----------------------------------------------------


def _size_at(s_abs: float, centers: np.ndarray, length: float,
             grading: Grading, rel: float) -> float:
    d = np.abs(centers - s_abs)
    d = np.minimum(d, length - d)
    dist = float(d.min()) if d.size else math.inf
    return float(np.clip(rel * dist, grading.h_floor, grading.h_max))


def _march_segment(seg_len: float, s0: float, ladder0, ladder1,
                   graded0: bool, graded1: bool,
                   centers: np.ndarray, length: float, grading: Grading,
                   rel: float) -> np.ndarray:
    """Vertex offsets in [0, seg_len) with graded spacing from both ends."""
    if seg_len <= grading.h_floor * 1.5:
        return np.array([0.0])

    def march(from_left: bool) -> list[float]:
        ladder = ladder0 if from_left else ladder1
        graded = graded0 if from_left else graded1
        pts = [0.0]
        if ladder is not None:
            pts.extend(o for o in ladder if o < 0.5 * seg_len)
            first = None
        else:
            first = grading.h_floor if graded else None
        while True:
            t = pts[-1]
            s_here = (s0 + t) % length if from_left else (s0 + seg_len - t) % length
            step = _size_at(s_here, centers, length, grading, rel)
            if first is not None:
                step = first
                first = None
            nxt = t + step
            if nxt >= 0.5 * seg_len:
                break
            pts.append(nxt)
        return pts

    left = march(True)
    right = march(False)
    s_mid = (s0 + 0.5 * seg_len) % length
    step_mid = _size_at(s_mid, centers, length, grading, rel)
    # absorb short residual intervals so adjacent edges stay comparable
    if seg_len - right[-1] - left[-1] < 0.6 * step_mid and len(left) > 1:
        left.pop()
    if seg_len - right[-1] - left[-1] < 0.6 * step_mid and len(right) > 1:
        right.pop()
    t_l, t_r = left[-1], seg_len - right[-1]
    mid_gap = t_r - t_l
    n_mid = max(1, int(round(mid_gap / step_mid)))
    mid = t_l + mid_gap * np.arange(1, n_mid) / n_mid
    tail = seg_len - np.array(right[1:])[::-1] if len(right) > 1 else np.empty(0)
    return np.unique(np.concatenate([left, mid, tail]))


def _boundary_discretization(domain, layout, grading, rel, plans):
    """Returns (s values, labels per edge) along the cyclic boundary chain."""
    length = domain.boundary_length()
    splits = {a % length for a, b in layout.arcs} \
        | {b % length for a, b in layout.arcs} | _corner_params(domain)
    if not splits:
        splits.add(0.0)
    split_s = np.array(sorted(splits))
    centers = np.array(sorted({e % length for arc in layout.arcs for e in arc}))
    ladder_at = {p.s_e: p.ladder for p in plans}

    all_s = []
    labels = []
    for i, s0 in enumerate(split_s):
        s1 = split_s[(i + 1) % split_s.size]
        seg_len = (s1 - s0) % length
        if seg_len == 0.0:
            seg_len = length
        mid = (s0 + 0.5 * seg_len) % length
        k = layout.containing_arc(mid)
        label = INSULATED if k is None else k
        s1n = s1 % length
        offs = _march_segment(
            seg_len, s0,
            ladder_at.get(s0), ladder_at.get(s1n),
            s0 in centers, s1n in centers,
            centers, length, grading, rel,
        )
        seg_s = (s0 + offs) % length
        all_s.append(seg_s)
        labels.append(np.full(seg_s.size, label, dtype=int))
    return np.concatenate(all_s), np.concatenate(labels)


# --- interior point cloud --------------------------------------------------------


def _domain_scale(domain) -> float:
    return 1.0 if domain.kind is DomainKind.UNIT_DISC else domain.radius


def _endpoint_coords(domain, layout) -> np.ndarray:
    length = domain.boundary_length()
    pts = []
    seen = set()
    for a, b in layout.arcs:
        for e in (a % length, b % length):
            if e not in seen:
                seen.add(e)
                pts.append(_point_cyclic(domain, e))
    return np.array(pts) if pts else np.zeros((0, 2))


def _local_spacing(pts: np.ndarray, centers_xy: np.ndarray,
                   grading: Grading, rel: float) -> np.ndarray:
    """Target mesh size at points: rel * distance-to-endpoints, clipped."""
    if centers_xy.shape[0] == 0:
        return np.full(pts.shape[0], grading.h_max)
    d = np.full(pts.shape[0], np.inf)
    for c in centers_xy:
        d = np.minimum(d, np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]))
    return np.clip(rel * d, grading.h_floor, grading.h_max)


def _boundary_clearance_ok(domain, pts, centers_xy, grading, rel):
    """Keep interior candidates at least half the local boundary spacing away
    from the boundary curve (prevents slivers on boundary edges)."""
    spacing = _local_spacing(pts, centers_xy, grading, rel)
    return dist_to_boundary(domain, pts) >= 0.5 * spacing


def _ring_candidates(domain, layout, grading, rel, plans):
    """Points on geometric rings around each endpoint, with nominal spacings."""
    length = domain.boundary_length()
    centers_s = sorted({e % length for arc in layout.arcs for e in arc})
    centers_xy = _endpoint_coords(domain, layout)
    r_fan = {p.s_e: p.r_f for p in plans}
    pts, nom = [], []
    r_stop = min(1.15 * grading.h_max / rel, 2.6 * _domain_scale(domain))
    beta = 1.0 + rel
    for s_e in centers_s:
        c = _point_cyclic(domain, s_e)
        r = r_fan.get(s_e, 2.6 * grading.h_floor) * beta
        while r < r_stop:
            delta = float(np.clip(rel * r, grading.h_floor, grading.h_max)) * 0.92
            n_ang = max(6, int(math.ceil(2.0 * math.pi * r / delta)))
            ang = 2.0 * math.pi * (np.arange(n_ang) + 0.5) / n_ang
            ring = c + r * np.column_stack([np.cos(ang), np.sin(ang)])
            ring = ring[contains(domain, ring, tol=-1e-12)]
            if ring.size:
                ring = ring[_boundary_clearance_ok(domain, ring, centers_xy,
                                                   grading, rel)]
            if ring.size:
                pts.append(ring)
                nom.append(np.full(ring.shape[0], delta))
            r *= beta
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(pts), np.concatenate(nom)


def _hex_candidates(domain, layout, grading, rel):
    """Quasi-uniform hexagonal background lattice at spacing ~h_max."""
    h = 0.92 * grading.h_max
    scale = _domain_scale(domain)
    centers_xy = _endpoint_coords(domain, layout)
    lo, hi = -scale - h, scale + h
    ys = np.arange(lo, hi, h * math.sqrt(3.0) / 2.0)
    pts = []
    for i, y in enumerate(ys):
        xs = np.arange(lo + (0.5 * h if i % 2 else 0.0), hi, h)
        pts.append(np.column_stack([xs, np.full(xs.size, y)]))
    cand = np.vstack(pts)
    cand = cand[contains(domain, cand, tol=-1e-12)]
    if cand.size:
        cand = cand[_boundary_clearance_ok(domain, cand, centers_xy,
                                           grading, rel)]
    return cand, np.full(cand.shape[0], h)


def _thin(fixed: np.ndarray, cand: np.ndarray, nominal: np.ndarray) -> np.ndarray:
    """Greedy spacing filter: keep candidates no closer than 0.62 * nominal
    to any already-accepted point.  Candidates are processed fine-first so
    graded clusters win over the coarse background."""
    if cand.shape[0] == 0:
        return cand
    order = np.argsort(nominal, kind="stable")
    acc_pts = fixed
    tree = cKDTree(acc_pts) if acc_pts.size else None
    buffer: list[np.ndarray] = []
    kept: list[int] = []
    for idx in order:
        p = cand[idx]
        rad = 0.62 * nominal[idx]
        if tree is not None and tree.query_ball_point(p, rad, return_sorted=False):
            continue
        ok = True
        for q in buffer:
            if (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 < rad * rad:
                ok = False
                break
        if not ok:
            continue
        buffer.append(p)
        kept.append(int(idx))
        if len(buffer) >= 2048:
            acc_pts = np.vstack([acc_pts, np.array(buffer)])
            tree = cKDTree(acc_pts)
            buffer = []
    return cand[np.array(kept, dtype=int)] if kept else np.zeros((0, 2))


# --- assembly --------------------------------------------------------------------


def _low_quality(pts: np.ndarray, tris: np.ndarray,
                 threshold_deg: float) -> np.ndarray:
    """Indices of triangles whose minimum angle is below the threshold."""
    angs = np.full(len(tris), 180.0)
    for i in range(3):
        a = pts[tris[:, i]]
        b = pts[tris[:, (i + 1) % 3]] - a
        c = pts[tris[:, (i + 2) % 3]] - a
        num = b[:, 0] * c[:, 0] + b[:, 1] * c[:, 1]
        den = np.hypot(b[:, 0], b[:, 1]) * np.hypot(c[:, 0], c[:, 1])
        angs = np.minimum(angs, np.degrees(np.arccos(
            np.clip(num / np.maximum(den, 1e-300), -1.0, 1.0))))
    return np.nonzero(angs < threshold_deg)[0]


def _orient_ccw(points, tris):
    d1 = points[tris[:, 1]] - points[tris[:, 0]]
    d2 = points[tris[:, 2]] - points[tris[:, 0]]
    flip = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) < 0.0
    tris[flip, 1], tris[flip, 2] = tris[flip, 2].copy(), tris[flip, 1].copy()
    return tris


def _missing_chain_edges(tris, nb):
    edges = set()
    for tri in tris:
        a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
        edges.add((a, b) if a < b else (b, a))
        edges.add((b, c) if b < c else (c, b))
        edges.add((c, a) if c < a else (a, c))
    missing = []
    for i in range(nb):
        j = (i + 1) % nb
        if (min(i, j), max(i, j)) not in edges:
            missing.append((i, j))
    return missing


def generate_graded_mesh(domain: DomainSpec, layout: ElectrodeLayout,
                         grading: Grading = Grading(), rel: float = 0.12,
                         min_angle_deg: float = 15.0) -> Mesh:
    """Build a graded conforming triangulation of the disc or wedge.

    ``rel`` is the local-edge-length to endpoint-distance ratio of the
    grading (smaller = denser).  The smallest boundary edge adjacent to each
    electrode endpoint has arc length exactly gamma**levels * h_max.
    """
    if domain.kind is DomainKind.UPPER_HALF_PLANE:
        raise LayoutConflict("the upper half-plane is oracle-only, never meshed")
    validate_layout(layout, domain)

    plans = _fan_plans(domain, layout, grading, rel)
    bnd_s, labels = _boundary_discretization(domain, layout, grading, rel, plans)
    bnd_xy = np.array([_point_cyclic(domain, s) for s in bnd_s])
    nb = bnd_s.size

    # structured fans (indices continue after the boundary block)
    fan_vertices = []
    fan_tris = []
    fan_outer: list[int] = []
    swallowed: set[int] = set()
    next_index = nb
    for plan in plans:
        coords, tris, outer, inner, next_index, _ = _build_fan(
            domain, plan, bnd_s, rel, next_index)
        fan_vertices.append(coords)
        fan_tris.append(tris)
        fan_outer.extend(outer)
        swallowed |= inner
    fan_xy = np.vstack(fan_vertices) if fan_vertices else np.zeros((0, 2))
    n_fan = fan_xy.shape[0]

    ring_pts, ring_nom = _ring_candidates(domain, layout, grading, rel, plans)
    hex_pts, hex_nom = _hex_candidates(domain, layout, grading, rel)
    cand = np.vstack([ring_pts, hex_pts])
    nominal = np.concatenate([ring_nom, hex_nom])
    # keep candidates out of the fan disks
    centers_fan = [( _point_cyclic(domain, p.s_e), p.r_f) for p in plans]
    if centers_fan and cand.size:
        keep = np.ones(cand.shape[0], dtype=bool)
        for c_xy, r_f in centers_fan:
            d2 = (cand[:, 0] - c_xy[0]) ** 2 + (cand[:, 1] - c_xy[1]) ** 2
            keep &= d2 >= (r_f * (1.0 + 0.3 * rel)) ** 2
        cand, nominal = cand[keep], nominal[keep]

    # Delaunay cloud: boundary chain outside the fans, fan outer rings,
    # thinned interior candidates
    cloud_bnd = np.array(sorted(set(range(nb)) - swallowed), dtype=np.int64)
    fixed_xy = np.vstack([bnd_xy[cloud_bnd],
                          fan_xy[np.array(fan_outer, dtype=int) - nb]
                          if fan_outer else np.zeros((0, 2))])
    interior = _thin(fixed_xy, cand, nominal)

    fan_local = np.array(fan_outer, dtype=int) - nb
    n_fixed = cloud_bnd.size + len(fan_outer)
    smooth_left = 6
    for attempt in range(16):
        cloud_index = np.concatenate([
            cloud_bnd,
            np.array(fan_outer, dtype=np.int64),
            nb + n_fan + np.arange(interior.shape[0], dtype=np.int64),
        ])
        cloud_xy = np.vstack([bnd_xy[cloud_bnd],
                              fan_xy[fan_local] if fan_outer else np.zeros((0, 2)),
                              interior])
        tri = Delaunay(cloud_xy)
        simplices = cloud_index[tri.simplices]
        cent = np.vstack([bnd_xy, fan_xy, interior])[simplices].mean(axis=1)
        keep = contains(domain, cent, tol=-1e-12) \
            if domain.kind is DomainKind.WEDGE else np.ones(len(cent), bool)
        for c_xy, r_f in centers_fan:
            d2 = (cent[:, 0] - c_xy[0]) ** 2 + (cent[:, 1] - c_xy[1]) ** 2
            keep &= d2 > (r_f * (1.0 - 1e-9)) ** 2
        simplices = simplices[keep]
        all_tris = np.vstack([simplices] + fan_tris) if fan_tris else simplices
        missing = _missing_chain_edges(all_tris, nb)
        if missing:
            drop = np.zeros(interior.shape[0], dtype=bool)
            for i, j in missing:
                a, b = bnd_xy[i], bnd_xy[j]
                mid = 0.5 * (a + b)
                rad = 1.2 * np.hypot(*(b - a))
                d2 = (interior[:, 0] - mid[0]) ** 2 + \
                    (interior[:, 1] - mid[1]) ** 2
                drop |= d2 < rad * rad
            if not drop.any():
                raise GradingTooAggressive(
                    f"{len(missing)} boundary edges unrecoverable"
                )
            interior = interior[~drop]
            continue
        if smooth_left > 0 and interior.shape[0] > 0:
            local = tri.simplices[keep]
            bad = _low_quality(cloud_xy, local, min_angle_deg + 2.0)
            if bad.size:
                # delete the movable vertices of sliver triangles; Delaunay
                # refills the gap with better-shaped neighbours
                movable = np.unique(local[bad].ravel())
                movable = movable[movable >= n_fixed] - n_fixed
                if movable.size:
                    mask = np.ones(interior.shape[0], dtype=bool)
                    mask[movable] = False
                    interior = interior[mask]
                    smooth_left -= 1
                    continue
        break
    else:
        raise GradingTooAggressive("boundary recovery did not converge")

    points = np.vstack([bnd_xy, fan_xy, interior])
    all_tris = _orient_ccw(points, np.ascontiguousarray(all_tris, dtype=np.int64))

    mesh = Mesh(
        domain=domain,
        layout=layout,
        grading=grading,
        vertices=points,
        triangles=all_tris,
        boundary_chain=np.arange(nb, dtype=np.int64),
        boundary_s=bnd_s,
        boundary_labels=labels,
    )
    mesh.validate(min_angle_deg=min_angle_deg)
    return mesh


def uniform_refine(mesh: Mesh, snap: bool = True) -> Mesh:
    """Red refinement: each triangle into four via edge midpoints.

    With ``snap`` the new boundary vertices are projected onto the true
    boundary curve; without it the refinement is strictly nested (the
    polygonal geometry is kept).
    """
    n = mesh.n_vertices
    midpoint: dict[tuple[int, int], int] = {}
    new_pts: list[np.ndarray] = []

    length = mesh.domain.boundary_length()
    nb = mesh.boundary_chain.size
    chain_pos: dict[tuple[int, int], int] = {}
    for i in range(nb):
        a = int(mesh.boundary_chain[i])
        b = int(mesh.boundary_chain[(i + 1) % nb])
        chain_pos[(min(a, b), max(a, b))] = i

    mid_s: dict[int, float] = {}

    def mid_of(a: int, b: int) -> int:
        nonlocal n
        key = (a, b) if a < b else (b, a)
        if key in midpoint:
            return midpoint[key]
        if key in chain_pos:
            i = chain_pos[key]
            s0 = mesh.boundary_s[i]
            ds = (mesh.boundary_s[(i + 1) % nb] - s0) % length
            sm = (s0 + 0.5 * ds) % length
            mid_s[n] = sm
            p = _point_cyclic(mesh.domain, sm) if snap \
                else 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        else:
            p = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        midpoint[key] = n
        new_pts.append(p)
        n += 1
        return midpoint[key]

    tris = np.empty((4 * mesh.n_triangles, 3), dtype=np.int64)
    for it, t in enumerate(mesh.triangles):
        a, b, c = int(t[0]), int(t[1]), int(t[2])
        ab, bc, ca = mid_of(a, b), mid_of(b, c), mid_of(c, a)
        tris[4 * it:4 * it + 4] = [[a, ab, ca], [ab, b, bc],
                                   [ca, bc, c], [ab, bc, ca]]

    new_chain = []
    new_s = []
    new_labels = []
    for i in range(nb):
        a = int(mesh.boundary_chain[i])
        b = int(mesh.boundary_chain[(i + 1) % nb])
        m = midpoint[(min(a, b), max(a, b))]
        new_chain.extend([a, m])
        new_s.extend([mesh.boundary_s[i], mid_s[m]])
        new_labels.extend([mesh.boundary_labels[i]] * 2)

    vertices = np.vstack([mesh.vertices, np.array(new_pts)]) \
        if new_pts else mesh.vertices.copy()
    return Mesh(
        domain=mesh.domain,
        layout=mesh.layout,
        grading=mesh.grading,
        vertices=vertices,
        triangles=tris,
        boundary_chain=np.array(new_chain, dtype=np.int64),
        boundary_s=np.array(new_s),
        boundary_labels=np.array(new_labels, dtype=int),
    )


def cem_dof_count(mesh: Mesh) -> int:
    """Degrees of freedom after tying electrode vertices: interior + N."""
    tied = set()
    for verts, _ in mesh.electrode_chains():
        tied.update(int(v) for v in verts)
    return mesh.n_vertices - len(tied) + mesh.layout.n


def uniform_mesh_for_dofs(domain: DomainSpec, layout: ElectrodeLayout,
                          target_dofs: int, tol: float = 0.12) -> Mesh:
    """Quasi-uniform (levels = 0) mesh with DOF count near the target."""
    h = 1.8 * _domain_scale(domain) * math.sqrt(
        2.0 * math.pi / max(target_dofs, 16))
    mesh = None
    for _ in range(8):
        grading = Grading(h_max=h, gamma=0.5, levels=0)
        mesh = generate_graded_mesh(domain, layout, grading)
        dofs = cem_dof_count(mesh)
        ratio = dofs / target_dofs
        if abs(ratio - 1.0) <= tol:
            return mesh
        h *= math.sqrt(ratio)
    return mesh
