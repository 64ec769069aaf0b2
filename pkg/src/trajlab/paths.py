"""Reference trajectories: construction, queries, and CSV serialization.

Builders produce densely sampled, arc-length-parameterized paths:
the training primitives (circles of several radii in both directions and a
straight line) and a waypoint-defined closed course with straight,
sinusoid, and arc segments joined by tangent-continuous corner fillets.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import wrap_angle

DEFAULT_SPACING = 0.1  # m


class PathGeometryError(ValueError):
    """Raised when a constructed path is geometrically unusable."""


@dataclass(frozen=True)
class ReferenceSample:
    """One discretized point of a reference trajectory."""

    x: float
    y: float
    theta: float  # tangent heading, rad in (-pi, pi]
    v: float  # target speed, m/s
    s: float  # cumulative arc length, m


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise target-speed specification over a path.

    `base` applies everywhere unless overridden. `splits` are
    (path-fraction, speed) breakpoints: from that fraction onward the
    given speed applies. `by_tag` overrides speed wherever the sample's
    segment tag matches (e.g. slow corners). Discontinuities are smoothed
    into linear ramps of length `ramp` meters, centered on the boundary.
    """

    base: float = 1.0
    splits: tuple[tuple[float, float], ...] = ()
    by_tag: tuple[tuple[str, float], ...] = ()
    ramp: float = 2.0

    def __post_init__(self):
        if self.base < 0.0:
            raise ValueError("speeds must be non-negative")
        fracs = [f for f, _ in self.splits]
        if any(not (0.0 <= f < 1.0) for f in fracs):
            raise ValueError("split fractions must lie in [0, 1)")
        if sorted(fracs) != fracs or len(set(fracs)) != len(fracs):
            raise ValueError("split fractions must be strictly increasing")
        if any(v < 0.0 for _, v in self.splits) or any(v < 0.0 for _, v in self.by_tag):
            raise ValueError("speeds must be non-negative")
        if self.ramp < 0.0:
            raise ValueError("ramp must be non-negative")

    @staticmethod
    def constant(speed: float) -> "SpeedProfile":
        return SpeedProfile(base=speed, ramp=0.0)

    @staticmethod
    def two_speed(first: float, second: float, ramp: float = 2.0) -> "SpeedProfile":
        """First half of the path at `first`, second half at `second`."""
        return SpeedProfile(base=first, splits=((0.5, second),), ramp=ramp)

    @staticmethod
    def tagged(base: float, overrides: dict[str, float], ramp: float = 2.0) -> "SpeedProfile":
        return SpeedProfile(base=base, by_tag=tuple(sorted(overrides.items())), ramp=ramp)

    def resolve(
        self,
        s: np.ndarray,
        total_length: float,
        closed: bool,
        tags: np.ndarray | None = None,
    ) -> np.ndarray:
        """Target speed at each arc length, ramps applied."""
        target = np.full(len(s), self.base)
        for frac, speed in self.splits:
            target[s >= frac * total_length] = speed
        if tags is not None:
            for tag, speed in self.by_tag:
                target[tags == tag] = speed
        if self.ramp <= 0.0 or len(s) < 3:
            return target
        ds = float(np.median(np.diff(s)))
        # cap the transition window at a quarter of the path so short
        # trajectories keep their speed plateaus
        n = max(1, min(int(round(self.ramp / ds)), len(s) // 4))
        if n % 2 == 0:
            n += 1
        if n <= 1:
            return target
        kernel = np.full(n, 1.0 / n)
        half = n // 2
        if closed:
            padded = np.concatenate([target[-half:], target, target[:half]])
        else:
            padded = np.concatenate(
                [np.full(half, target[0]), target, np.full(half, target[-1])]
            )
        out = np.convolve(padded, kernel, mode="valid")
        # keep plateau values exact where the averaging window saw one level
        return np.where(np.abs(out - target) < 1e-9, target, out)


@dataclass
class ReferencePath:
    """Discretized reference trajectory.

    Samples are stored as parallel arrays; `closed` paths wrap (the
    duplicate closing sample is not stored, so the last sample sits one
    spacing before the start).
    """

    xs: np.ndarray
    ys: np.ndarray
    thetas: np.ndarray
    vs: np.ndarray
    ss: np.ndarray
    closed: bool
    tags: np.ndarray | None = None
    _samples: list[ReferenceSample] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.vs = np.asarray(self.vs, dtype=float)
        self.ss = np.asarray(self.ss, dtype=float)
        if len(self.xs) < 2:
            raise PathGeometryError("a path needs at least 2 samples")
        if np.any(np.diff(self.ss) <= 0.0):
            raise PathGeometryError("arc length must be strictly increasing")

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def total_length(self) -> float:
        if self.closed:
            gap = math.hypot(self.xs[0] - self.xs[-1], self.ys[0] - self.ys[-1])
            return float(self.ss[-1] + gap)
        return float(self.ss[-1])

    @property
    def spacing(self) -> float:
        return float(np.median(np.diff(self.ss)))

    def sample(self, i: int) -> ReferenceSample:
        return ReferenceSample(
            float(self.xs[i]), float(self.ys[i]), float(self.thetas[i]),
            float(self.vs[i]), float(self.ss[i]),
        )

    @property
    def samples(self) -> list[ReferenceSample]:
        if self._samples is None:
            self._samples = [self.sample(i) for i in range(len(self))]
        return self._samples

    def curvature(self, i: int) -> float:
        """Signed curvature 1/m at sample i, from neighboring headings."""
        n = len(self)
        if self.closed:
            ip, inx = (i - 1) % n, (i + 1) % n
            dth = wrap_angle(self.thetas[inx] - self.thetas[ip])
            ds = self.ss[inx] - self.ss[ip]
            if ds <= 0.0:
                ds += self.total_length
        else:
            ip, inx = max(0, i - 1), min(n - 1, i + 1)
            if ip == inx:
                return 0.0
            dth = wrap_angle(self.thetas[inx] - self.thetas[ip])
            ds = self.ss[inx] - self.ss[ip]
        return float(dth / ds) if ds > 0.0 else 0.0

    def index_at_arclength(self, s: float) -> int:
        """Nearest sample index to arc length s (wrapped on closed paths)."""
        if self.closed:
            s = s % self.total_length
        else:
            s = min(max(s, 0.0), float(self.ss[-1]))
        j = int(np.searchsorted(self.ss, s))
        if j >= len(self):
            # past the last stored sample: nearest of last and (if closed) first
            if self.closed and (s - self.ss[-1]) > (self.total_length - s):
                return 0
            return len(self) - 1
        if j == 0:
            return 0
        return j if (self.ss[j] - s) <= (s - self.ss[j - 1]) else j - 1

    def window_indices(self, start_index: int, horizon: int, dt: float) -> list[int]:
        """Sample indices reached by advancing v_r * dt per step from start."""
        idx = int(start_index)
        out = [idx]
        s = float(self.ss[idx])
        for _ in range(horizon - 1):
            s += float(self.vs[idx]) * dt
            idx = self.index_at_arclength(s)
            out.append(idx)
        return out


def closest_point(
    path: ReferencePath,
    position: tuple[float, float],
    hint_index: int | None = None,
    window: int = 50,
) -> tuple[int, ReferenceSample, float]:
    """Sample of `path` nearest to `position` (ties -> smallest index).

    With `hint_index`, only indices within `window` samples of the hint
    are searched (wrapping on closed paths) for closed-loop use.
    """
    px, py = position
    if hint_index is None:
        d2 = (path.xs - px) ** 2 + (path.ys - py) ** 2
        i = int(np.argmin(d2))
        return i, path.sample(i), float(math.sqrt(d2[i]))
    n = len(path)
    lo, hi = hint_index - window, hint_index + window
    if path.closed:
        idx = np.arange(lo, hi + 1) % n
    else:
        idx = np.arange(max(0, lo), min(n - 1, hi) + 1)
    d2 = (path.xs[idx] - px) ** 2 + (path.ys[idx] - py) ** 2
    k = int(np.argmin(d2))
    i = int(idx[k])
    return i, path.sample(i), float(math.sqrt(d2[k]))


def reference_window(
    path: ReferencePath, start_index: int, horizon: int, dt: float
) -> list[ReferenceSample]:
    """Reference samples over a lookahead horizon of `horizon` steps."""
    return [path.sample(i) for i in path.window_indices(start_index, horizon, dt)]


def cross_track_distance(
    path: ReferencePath,
    position: tuple[float, float],
    hint_index: int | None = None,
) -> tuple[int, float]:
    """Distance to the closest point ON the path polyline.

    Unlike `closest_point`, the position is projected onto the segments
    adjacent to the nearest sample, so a vehicle sitting on the path
    between two samples reports ~0 rather than up to half a spacing.
    Returns (nearest sample index, distance).
    """
    idx, _, d_sample = closest_point(path, position, hint_index=hint_index)
    px, py = position
    n = len(path)
    best = d_sample
    for a, b in ((idx - 1, idx), (idx, idx + 1)):
        if path.closed:
            a, b = a % n, b % n
        elif a < 0 or b >= n:
            continue
        ax, ay = path.xs[a], path.ys[a]
        bx, by = path.xs[b], path.ys[b]
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        if seg2 <= 0.0:
            continue
        t = ((px - ax) * dx + (py - ay) * dy) / seg2
        t = min(1.0, max(0.0, t))
        best = min(best, math.hypot(px - (ax + t * dx), py - (ay + t * dy)))
    return idx, float(best)


# ---------------------------------------------------------------------------
# builders


def make_circle(
    radius: float,
    direction: str = "ccw",
    profile: SpeedProfile | None = None,
    spacing: float = DEFAULT_SPACING,
) -> ReferencePath:
    """Closed circle starting at the origin heading +x."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if not (0.0 < spacing <= radius / 4.0):
        raise ValueError("spacing must lie in (0, radius/4]")
    if direction not in ("cw", "ccw"):
        raise ValueError("direction must be 'cw' or 'ccw'")
    profile = profile or SpeedProfile.constant(1.0)

    length = 2.0 * math.pi * radius
    n = int(math.ceil(length / spacing))
    s = np.arange(n) * (length / n)
    phase = s / radius
    sign = 1.0 if direction == "ccw" else -1.0
    xs = radius * np.sin(phase)
    ys = sign * radius * (1.0 - np.cos(phase))
    thetas = np.array([wrap_angle(sign * p) for p in phase])
    vs = profile.resolve(s, length, closed=True)
    return ReferencePath(xs, ys, thetas, vs, s, closed=True)


def make_line(
    length: float,
    profile: SpeedProfile | None = None,
    spacing: float = DEFAULT_SPACING,
) -> ReferencePath:
    """Open straight path along +x from the origin."""
    if length <= 0.0:
        raise ValueError("length must be positive")
    if not (0.0 < spacing <= length / 2.0):
        raise ValueError("spacing must lie in (0, length/2]")
    profile = profile or SpeedProfile.constant(1.0)

    n = int(round(length / spacing)) + 1
    s = np.linspace(0.0, length, n)
    xs = s.copy()
    ys = np.zeros(n)
    thetas = np.zeros(n)
    vs = profile.resolve(s, length, closed=False)
    return ReferencePath(xs, ys, thetas, vs, s, closed=False)


def _arc_points(
    p0: np.ndarray, t0: np.ndarray, p1: np.ndarray, step: float
) -> np.ndarray:
    """Dense points along the circle through p0 (tangent t0) and p1.

    Falls back to a straight segment when the three constraints are
    collinear. The start point is included, the end point is not.
    """
    d = p1 - p0
    chord = float(np.hypot(d[0], d[1]))
    if chord < 1e-12:
        return p0[None, :]
    normal = np.array([-t0[1], t0[0]])
    dn = float(d @ normal)
    if abs(dn) < 1e-9 * chord:  # collinear: straight connect
        n = max(2, int(math.ceil(chord / step)))
        u = np.linspace(0.0, 1.0, n, endpoint=False)
        return p0 + u[:, None] * d
    r = (chord * chord) / (2.0 * dn)  # signed: r > 0 turns left
    center = p0 + r * normal
    a0 = math.atan2(p0[1] - center[1], p0[0] - center[0])
    a1 = math.atan2(p1[1] - center[1], p1[0] - center[0])
    sweep = a1 - a0
    if r > 0.0:  # ccw
        while sweep <= 0.0:
            sweep += 2.0 * math.pi
    else:
        while sweep >= 0.0:
            sweep -= 2.0 * math.pi
    arclen = abs(r * sweep)
    n = max(2, int(math.ceil(arclen / step)))
    ang = a0 + sweep * np.linspace(0.0, 1.0, n, endpoint=False)
    return np.stack(
        [center[0] + abs(r) * np.cos(ang), center[1] + abs(r) * np.sin(ang)], axis=1
    )


def _biarc_points(
    p0: np.ndarray, t0: np.ndarray, p1: np.ndarray, t1: np.ndarray, step: float
) -> np.ndarray:
    """Tangent-continuous biarc from (p0, t0) to (p1, t1), start included."""
    v = p1 - p0
    if float(np.hypot(v[0], v[1])) < 1e-12:
        return np.empty((0, 2))
    u = t0 + t1
    a = 2.0 - float(t0 @ t1) * 2.0
    b = 2.0 * float(v @ u)
    c = -float(v @ v)
    if abs(a) < 1e-12:
        if abs(b) < 1e-12:
            raise PathGeometryError("degenerate corner fillet (opposed tangents)")
        d = -c / b
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            raise PathGeometryError("corner fillet has no biarc solution")
        d = (-b + math.sqrt(disc)) / (2.0 * a)
    if d <= 0.0:
        raise PathGeometryError("corner fillet requires path reversal")
    junction = 0.5 * (p0 + p1 + d * (t0 - t1))
    first = _arc_points(p0, t0, junction, step)
    tm = (p1 - p0 - d * (t0 + t1)) / (2.0 * d)
    norm = float(np.hypot(tm[0], tm[1]))
    tm = tm / norm if norm > 0 else t0
    second = _arc_points(junction, tm, p1, step)
    return np.concatenate([first, second], axis=0)


def _segment_points(
    kind: str,
    start: np.ndarray,
    end: np.ndarray,
    step: float,
    sinusoid_amplitude: float,
    sinusoid_periods: float,
    arc_bulge: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense points for one course segment plus its end tangents."""
    chord = end - start
    length = float(np.hypot(chord[0], chord[1]))
    if length < 1e-9:
        raise PathGeometryError("zero-length course segment")
    unit = chord / length
    if kind == "straight":
        n = max(2, int(math.ceil(length / step)))
        u = np.linspace(0.0, 1.0, n, endpoint=False)
        pts = start + u[:, None] * chord
        return pts, unit, unit
    if kind == "sinusoid":
        # windowed sine: zero lateral offset and zero slope at both ends,
        # so the segment joins its neighbors tangent-continuously
        normal = np.array([-unit[1], unit[0]])
        n = max(2, int(math.ceil(3.0 * length / step)))
        u = np.linspace(0.0, 1.0, n, endpoint=False)
        off = sinusoid_amplitude * np.sin(2.0 * math.pi * sinusoid_periods * u) * np.sin(math.pi * u) ** 2
        pts = start + u[:, None] * chord + off[:, None] * normal
        return pts, unit, unit
    if kind == "arc":
        h = arc_bulge
        if abs(h) < 1e-9:
            return _segment_points("straight", start, end, step, 0, 0, 0)
        normal = np.array([-unit[1], unit[0]])  # left of travel; h > 0 bulges left
        radius = (length * length / 4.0 + h * h) / (2.0 * abs(h))
        half_angle = math.asin(min(1.0, length / (2.0 * radius)))
        rot = half_angle if h > 0 else -half_angle
        ca, sa = math.cos(rot), math.sin(rot)
        t_start = np.array([unit[0] * ca - unit[1] * sa, unit[0] * sa + unit[1] * ca])
        t_end = np.array([unit[0] * ca + unit[1] * sa, -unit[0] * sa + unit[1] * ca])
        pts = _arc_points(start, t_start, end, step)
        return pts, t_start, t_end
    raise ValueError(f"unknown segment feature {kind!r}")


def _check_self_intersection(xs: np.ndarray, ys: np.ndarray, closed: bool) -> None:
    """Reject self-crossing polylines (coarse subsampled O(n^2) sweep)."""
    stride = max(1, len(xs) // 500)
    px = np.append(xs[::stride], xs[-1] if not closed else xs[0])
    py = np.append(ys[::stride], ys[-1] if not closed else ys[0])
    ax, ay = px[:-1], py[:-1]
    bx, by = px[1:], py[1:]
    m = len(ax)
    for i in range(m - 2):
        j0 = i + 2
        j1 = m - 1 if (closed and i == 0) else m
        if j0 >= j1:
            continue
        d1x, d1y = bx[i] - ax[i], by[i] - ay[i]
        d2x, d2y = bx[j0:j1] - ax[j0:j1], by[j0:j1] - ay[j0:j1]
        ex, ey = ax[j0:j1] - ax[i], ay[j0:j1] - ay[i]
        denom = d1x * d2y - d1y * d2x
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ex * d2y - ey * d2x) / denom
            s = (ex * d1y - ey * d1x) / denom
        hit = (np.abs(denom) > 1e-12) & (t > 0) & (t < 1) & (s > 0) & (s < 1)
        if np.any(hit):
            k = int(np.argmax(hit))
            raise PathGeometryError(
                f"course self-intersects near sample {(i) * stride} / {(j0 + k) * stride}"
            )


def make_course(
    waypoints: list[tuple[float, float]],
    features: list[str] | None = None,
    profile: SpeedProfile | None = None,
    spacing: float = DEFAULT_SPACING,
    corner_radius: float = 3.0,
    sinusoid_amplitude: float = 2.0,
    sinusoid_periods: float = 1.0,
    arc_bulge: float = 4.0,
) -> ReferencePath:
    """Closed course through `waypoints` with per-segment shape features.

    Segment i runs from waypoint i to waypoint i+1 (wrapping) and is
    shaped per features[i] in {straight, sinusoid, arc}. Corners are cut
    back by `corner_radius` meters on each side and bridged with a
    tangent-continuous biarc fillet tagged "corner". Self-intersecting
    results are rejected, not repaired.
    """
    if len(waypoints) < 3:
        raise ValueError("a closed course needs at least 3 waypoints")
    nseg = len(waypoints)
    features = list(features) if features is not None else ["straight"] * nseg
    if len(features) != nseg:
        raise ValueError("need one feature tag per segment")
    profile = profile or SpeedProfile.constant(1.0)
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    if corner_radius < 0.0:
        raise ValueError("corner_radius must be non-negative")
    if corner_radius == 0.0:
        warnings.warn(
            "corner_radius 0 leaves heading discontinuities at waypoints",
            stacklevel=2,
        )

    wps = [np.asarray(w, dtype=float) for w in waypoints]
    chords = [wps[(i + 1) % nseg] - wps[i] for i in range(nseg)]
    lengths = [float(np.hypot(c[0], c[1])) for c in chords]
    for i, length in enumerate(lengths):
        if 2.0 * corner_radius >= length:
            raise PathGeometryError(
                f"corner_radius {corner_radius} too large for segment {i} "
                f"of length {length:.2f}"
            )

    step = spacing / 2.0
    pieces: list[np.ndarray] = []
    tags: list[str] = []
    seg_ends: list[tuple[np.ndarray, np.ndarray]] = []  # (end point, end tangent)
    seg_starts: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(nseg):
        unit = chords[i] / lengths[i]
        a = wps[i] + corner_radius * unit
        b = wps[(i + 1) % nseg] - corner_radius * unit
        pts, t_start, t_end = _segment_points(
            features[i], a, b, step, sinusoid_amplitude, sinusoid_periods, arc_bulge
        )
        seg_starts.append((a, t_start))
        seg_ends.append((b, t_end))
        pieces.append(pts)
        tags.extend([features[i]] * len(pts))
        if corner_radius > 0.0:
            p_end, t_out = b, t_end
            p_next, t_in = seg_starts[0] if i == nseg - 1 else (None, None)
            if i < nseg - 1:
                nxt_unit = chords[i + 1] / lengths[i + 1]
                p_next = wps[i + 1] + corner_radius * nxt_unit
                _, t_in, _ = _segment_tangents_probe(
                    features[i + 1], p_next,
                    wps[(i + 2) % nseg] - corner_radius * nxt_unit,
                    sinusoid_amplitude, sinusoid_periods, arc_bulge,
                )
            fillet = _biarc_points(p_end, t_out, p_next, t_in, step)
            pieces.append(fillet)
            tags.extend(["corner"] * len(fillet))

    raw = np.concatenate(pieces, axis=0)
    tag_arr = np.array(tags)

    # drop near-duplicate consecutive points before resampling
    d = np.hypot(np.diff(raw[:, 0], append=raw[0, 0]), np.diff(raw[:, 1], append=raw[0, 1]))
    keep = d > 1e-9
    raw, tag_arr, d = raw[keep], tag_arr[keep], d[keep]

    s_raw = np.concatenate([[0.0], np.cumsum(d)])  # includes closing gap at end
    total = float(s_raw[-1])
    n = int(math.ceil(total / spacing))
    ds = total / n
    s = np.arange(n) * ds
    xs = np.interp(s, s_raw, np.append(raw[:, 0], raw[0, 0]))
    ys = np.interp(s, s_raw, np.append(raw[:, 1], raw[0, 1]))
    src = np.minimum(np.searchsorted(s_raw, s, side="right") - 1, len(tag_arr) - 1)
    out_tags = tag_arr[src]

    thetas = np.empty(n)
    for i in range(n):
        ip, inx = (i - 1) % n, (i + 1) % n
        thetas[i] = math.atan2(ys[inx] - ys[ip], xs[inx] - xs[ip])

    _check_self_intersection(xs, ys, closed=True)

    vs = profile.resolve(s, total, closed=True, tags=out_tags)
    return ReferencePath(xs, ys, thetas, vs, s, closed=True, tags=out_tags)


def _segment_tangents_probe(
    kind: str,
    start: np.ndarray,
    end: np.ndarray,
    sinusoid_amplitude: float,
    sinusoid_periods: float,
    arc_bulge: float,
) -> tuple[None, np.ndarray, np.ndarray]:
    """Start/end tangents of a segment without generating its points."""
    _, t_start, t_end = _segment_points(
        kind, start, end, max(1e-3, float(np.hypot(*(end - start)))),
        sinusoid_amplitude, sinusoid_periods, arc_bulge,
    )
    return None, t_start, t_end


# ---------------------------------------------------------------------------
# canonical trajectory sets

TRAINING_RADII = (2.0, 5.0, 25.0)


def training_set(
    profile: SpeedProfile | None = None, spacing: float = DEFAULT_SPACING
) -> dict[str, ReferencePath]:
    """The seven training primitives: three circle radii in both
    directions plus a 30 m straight line."""
    profile = profile or SpeedProfile.constant(1.0)
    out: dict[str, ReferencePath] = {}
    for r in TRAINING_RADII:
        for direction in ("ccw", "cw"):
            out[f"circle_r{r:g}_{direction}"] = make_circle(
                r, direction, profile, spacing
            )
    out["line_30m"] = make_line(30.0, profile, spacing)
    return out


def evaluation_course(
    profile: SpeedProfile | None = None,
    spacing: float = DEFAULT_SPACING,
    corner_radius: float = 3.0,
) -> ReferencePath:
    """Roughly rectangular 34 x 72 m closed course with a sinusoid along
    one width and an arc on the opposite one."""
    waypoints = [(0.0, 0.0), (72.0, 0.0), (72.0, 34.0), (0.0, 34.0)]
    features = ["straight", "sinusoid", "straight", "arc"]
    return make_course(
        waypoints,
        features,
        profile or SpeedProfile.constant(1.0),
        spacing,
        corner_radius=corner_radius,
    )


def multispeed_profile(
    slow: float = 1.0, fast: float = 2.0, ramp: float = 8.0
) -> SpeedProfile:
    """Corner-slow profile used by the variable-speed experiments."""
    return SpeedProfile.tagged(fast, {"corner": slow}, ramp=ramp)


# ---------------------------------------------------------------------------
# serialization

PATH_CSV_HEADER = "x,y,theta,v,s"


def save_path_csv(path: ReferencePath, file) -> None:
    """Write a path as CSV with header x,y,theta,v,s."""
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w") if own else file
    try:
        fh.write(PATH_CSV_HEADER + "\n")
        for i in range(len(path)):
            fh.write(
                f"{float(path.xs[i])!r},{float(path.ys[i])!r},{float(path.thetas[i])!r},"
                f"{float(path.vs[i])!r},{float(path.ss[i])!r}\n"
            )
    finally:
        if own:
            fh.close()


def load_path_csv(file, closed: bool | None = None) -> ReferencePath:
    """Read a path CSV; `closed` is auto-detected from endpoint proximity
    unless given explicitly."""
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "r") if own else file
    try:
        header = fh.readline().strip()
        if header != PATH_CSV_HEADER:
            raise ValueError(f"unexpected path CSV header: {header!r}")
        rows = [line.strip() for line in fh if line.strip()]
    finally:
        if own:
            fh.close()
    if not rows:
        raise ValueError("path CSV has no samples")
    data = np.array([[float(tok) for tok in row.split(",")] for row in rows])
    if data.shape[1] != 5:
        raise ValueError("path CSV rows must have 5 columns")
    xs, ys, thetas, vs, ss = data.T
    if closed is None:
        gap = math.hypot(xs[0] - xs[-1], ys[0] - ys[-1])
        closed = bool(gap <= 3.0 * float(np.median(np.diff(ss))) if len(ss) > 2 else False)
    return ReferencePath(xs, ys, thetas, vs, ss, closed=closed)
