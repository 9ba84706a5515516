"""Classical force reconstruction by least squares on the fringe pattern.

Given an observed pattern, a force list is fitted by minimizing the RMS
pixel difference between the observed image and the forward-rendered
pattern, plus a weighted penalty on the force and torque balance
residuals. Optimization works in balance-closure coordinates: the first
M-1 forces are free and the last is solved in closed form, so every
candidate is exactly balanced (the penalty term is identically zero on
this manifold) and balance holds as a hard constraint in the output.

The raw objective decorrelates a few degrees or percent away from the
optimum (and magnitudes carry a discrete fringe-order ambiguity), so the
fit is staged. A matched-filter bank of single-contact templates,
compared on blurred-gradient maps in polar coordinates around each
candidate impact angle, proposes contacts with per-contact force and
tangent estimates; the observation passes through the identical image
pipeline so the estimator's aliasing bias cancels. A blur-parametrized
envelope objective,

    I0/2 * (1 - cos(2 pi f D) * exp(-2 (pi f |grad D| sigma)^2)),

with D the principal stress difference, is the analytic local average of
the pattern and tends to the exact continuous pattern as sigma -> 0;
a small differential-evolution search with restarts runs over that
continuation family when the global stage is enabled. Local refinement
is a bound-constrained simplex descent plus per-parameter line scans
(the dense magnitude scan walks the fringe orders) and a
finite-difference polish.

Model selection refits every candidate force count; the smallest count
that reaches a near-perfect raw fit wins, otherwise branches are
compared on the envelope residual with a preference band for smaller
counts.

The initial guess places impact angles at peaks of the angular profile
of the squared image gradient near the rim, refined by a greedy
model-matching scan, and picks a common magnitude from a calibration
curve swept through the forward model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import Bounds, minimize

from .elastic import TWO_PI, ForceList, ForceTriplet, ParticleSpec, intensity_field
from .rendering import (
    ImageSpec,
    IntensityImage,
    gaussian_blur,
    pixel_centers,
    quantize,
    render,
)

ANGULAR_BINS = 72
EXACT_FIT_RMS = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Optimization budget, steps, penalty weight, and parameter bounds."""

    max_iterations: int = 2000
    tol: float = 1e-7
    fd_step_magnitude: float = 1e-3
    fd_step_angle: float = 1e-3
    fd_step_tangent: float = 1e-3
    balance_weight: float = 1e3
    magnitude_range: tuple[float, float] = (0.01, 0.9)
    tau_bound: float = math.pi / 2
    min_separation: float = math.pi / 6
    smooth_objective: bool = True
    dial_rounds: int = 2
    simplex_step_magnitude: float = 0.01
    simplex_step_angle: float = 0.02
    simplex_step_tangent: float = 0.02
    dial_threshold: float = 30.0
    global_search: bool = False
    global_restarts: int = 2
    global_population: int = 48
    global_levels: tuple[tuple[float, int, int], ...] = ((3.0, 4, 150), (1.5, 3, 120))
    global_stop_rms: float = 15.0
    selection_blur: float = 1.5
    selection_raw_threshold: float = 20.0
    m_candidates: tuple[int, ...] = (2, 3, 4, 5, 6)
    selection_preference: float = 0.01
    low_confidence_magnitude: float = 0.015

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("iteration budget must be positive")
        for s in (self.fd_step_magnitude, self.fd_step_angle, self.fd_step_tangent, self.tol):
            if not s > 0.0:
                raise ValueError("steps and tolerances must be > 0")


@dataclass
class ReconstructionResult:
    """Fitted forces plus fit diagnostics."""

    forces: ForceList
    residual: float
    iterations: int
    m_selected: int
    per_m_residual: dict[int, float] = field(default_factory=dict)
    low_confidence: bool = False
    trace: tuple[float, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "forces": self.forces.rows(),
            "residual": self.residual,
            "iterations": self.iterations,
            "m_selected": self.m_selected,
            "per_m_residual": {str(m): r for m, r in sorted(self.per_m_residual.items())},
            "low_confidence": self.low_confidence,
        }


def _close_population(F1: np.ndarray, A1: np.ndarray, T1: np.ndarray):
    """Vectorized balance closure for populations of partial force sets.

    Returns full (F, A, T) arrays with the closing force appended, a
    feasibility mask (arcsine in range, closing magnitude physical), and a
    penalty distance for infeasible rows.
    """
    fx = -(F1 * np.cos(A1 + np.pi + T1)).sum(axis=1)
    fy = -(F1 * np.sin(A1 + np.pi + T1)).sum(axis=1)
    f_m = np.hypot(fx, fy)
    s = np.where(f_m > 1e-12, -(F1 * np.sin(T1)).sum(axis=1) / np.maximum(f_m, 1e-12), 2.0)
    feasible = (np.abs(s) <= 1.0) & (f_m >= 0.005) & (f_m <= 0.95)
    tau_m = np.arcsin(np.clip(s, -1.0, 1.0))
    alpha_m = (np.arctan2(fy, fx) - np.pi - tau_m) % TWO_PI
    F = np.concatenate([F1, f_m[:, None]], axis=1)
    A = np.concatenate([A1 % TWO_PI, alpha_m[:, None]], axis=1)
    T = np.concatenate([T1, tau_m[:, None]], axis=1)
    penalty = 100.0 * (
        np.maximum(np.abs(s) - 1.0, 0.0)
        + np.maximum(0.005 - f_m, 0.0)
        + np.maximum(f_m - 0.95, 0.0)
    )
    return F, A, T, feasible, penalty


def _close_single(z: np.ndarray, m: int):
    """Scalar closure: z = (F_1..F_{m-1}, alpha_1.., tau_1..) -> full rows or None."""
    mm1 = m - 1
    F, A, T, feasible, _ = _close_population(
        z[None, :mm1], z[None, mm1 : 2 * mm1], z[None, 2 * mm1 :]
    )
    if not feasible[0]:
        return None
    return F[0], A[0], T[0]


def _encode(forces: ForceList) -> np.ndarray:
    """Drop the last (highest-alpha) force; closure will re-derive it."""
    f, a, t = forces.as_arrays()
    return np.concatenate([f[:-1], a[:-1], t[:-1]])


def _stress_diff_population(px, py, F, A, T, radius):
    """Principal stress difference at float32 points for (S, M) force arrays."""
    S, M = F.shape
    rim = (F * np.cos(T)) / (np.pi * radius)
    cos_u = np.cos(A + np.pi + T)
    sin_u = np.sin(A + np.pi + T)
    sxx = np.zeros((S, len(px)), np.float32)
    sxy = np.zeros_like(sxx)
    syy = np.zeros_like(sxx)
    for k in range(M):
        ox = (radius * np.cos(A[:, k])).astype(np.float32)[:, None]
        oy = (radius * np.sin(A[:, k])).astype(np.float32)[:, None]
        ux = cos_u[:, k].astype(np.float32)[:, None]
        uy = sin_u[:, k].astype(np.float32)[:, None]
        dx = px[None, :] - ox
        dy = py[None, :] - oy
        r = np.maximum(np.hypot(dx, dy), np.float32(1e-9))
        ex = dx / r
        ey = dy / r
        srr = (
            np.float32(-2.0 / np.pi) * F[:, k].astype(np.float32)[:, None] * (ex * ux + ey * uy) / r
            + rim[:, k].astype(np.float32)[:, None]
        )
        sxx += srr * ex * ex
        sxy += srr * ex * ey
        syy += srr * ey * ey
    return np.hypot(sxx - syy, 2.0 * sxy)


class _EnvelopeObjective:
    """Blur-parametrized envelope residual over closure-parametrized populations."""

    def __init__(self, observed: IntensityImage, particle: ParticleSpec, blur_px: float, sub: int):
        ps = observed.pixel_size
        self.sigma = blur_px * ps
        source = gaussian_blur(observed, blur_px) if blur_px >= 0.3 else observed
        x, y = pixel_centers(observed.width, ps)
        X, Y = np.meshgrid(x, y)
        mask = np.hypot(X, Y) <= particle.radius - 3.0 * self.sigma
        keep = np.zeros_like(mask)
        keep[::sub, ::sub] = True
        mask &= keep
        h = ps
        self.pts_x = np.concatenate([X[mask], X[mask] + h, X[mask]]).astype(np.float32)
        self.pts_y = np.concatenate([Y[mask], Y[mask], Y[mask] + h]).astype(np.float32)
        self.n = int(mask.sum())
        self.target = source.pixels[mask].astype(np.float32)
        self.radius = particle.radius
        self.phi = np.float32(math.pi * particle.fringe_coefficient)
        self.peak = np.float32(particle.intensity_scale)
        self.h = np.float32(h)
        self.min_separation = math.pi / 6

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        S = Z.shape[0]
        mm1 = Z.shape[1] // 3
        F, A, T, feasible, penalty = _close_population(
            Z[:, :mm1], Z[:, mm1 : 2 * mm1], Z[:, 2 * mm1 :]
        )
        out = np.full(S, 300.0) + penalty
        if feasible.any():
            Ff, Af, Tf = F[feasible], A[feasible], T[feasible]
            d = _stress_diff_population(self.pts_x, self.pts_y, Ff, Af, Tf, self.radius)
            n = self.n
            d0, dxp, dyp = d[:, :n], d[:, n : 2 * n], d[:, 2 * n :]
            grad = np.hypot(dxp - d0, dyp - d0) / self.h
            attenuation = np.exp(-2.0 * (self.phi * grad * np.float32(self.sigma)) ** 2)
            values = self.peak / 2.0 * (1.0 - np.cos(2.0 * self.phi * d0) * attenuation)
            rms = np.sqrt(np.mean((values - self.target[None, :]) ** 2, axis=1))
            M = Ff.shape[1]
            sep = np.zeros(Ff.shape[0])
            for i in range(M):
                for j in range(i + 1, M):
                    dd = np.abs(Af[:, i] - Af[:, j]) % TWO_PI
                    sep += np.maximum(0.0, self.min_separation - np.minimum(dd, TWO_PI - dd))
            out[feasible] = rms + 200.0 * sep
        return out

    def scalar(self, z: np.ndarray) -> float:
        return float(self(z[None, :])[0])


class _Objective:
    """Raw residual evaluator bound to one observed image.

    The smooth variant compares the continuous render against the observed
    pixels; the quantized variant rounds the render to 8 bits first, making
    a perfect forward model score exactly zero against its own output. Both
    add the weighted balance penalty (identically zero on the closure
    manifold).
    """

    def __init__(self, observed: IntensityImage, particle: ParticleSpec, config: SolverConfig):
        self.particle = particle
        self.config = config
        x, y = pixel_centers(observed.width, observed.pixel_size)
        X, Y = np.meshgrid(x, y)
        self.mask = np.hypot(X, Y) <= particle.radius
        self.px = X[self.mask]
        self.py = Y[self.mask]
        self.target = observed.pixels[self.mask].astype(np.float64)

    def _triplets(self, x: np.ndarray) -> list[ForceTriplet]:
        m = len(x) // 3
        f = np.clip(x[:m], *self.config.magnitude_range)
        tau = np.clip(x[2 * m :], -self.config.tau_bound, self.config.tau_bound)
        return [ForceTriplet(float(f[i]), float(x[m + i]), float(tau[i])) for i in range(m)]

    def _penalty(self, triplets: list[ForceTriplet]) -> float:
        fx = sum(t.vector()[0] for t in triplets)
        fy = sum(t.vector()[1] for t in triplets)
        torque = sum(t.magnitude * math.sin(t.tangent_angle) for t in triplets)
        return self.config.balance_weight * (fx * fx + fy * fy + torque * torque)

    def full(self, x: np.ndarray, *, quantized: bool = False) -> float:
        triplets = self._triplets(np.asarray(x, dtype=float))
        values = intensity_field(self.px, self.py, triplets, self.particle)
        if quantized:
            values = quantize(values).astype(np.float64)
        rms = math.sqrt(float(np.mean((values - self.target) ** 2)))
        total = rms + self._penalty(triplets)
        if not math.isfinite(total):
            raise RuntimeError(f"non-finite residual at parameters {np.asarray(x).tolist()}")
        return total

    def closure(self, z: np.ndarray, m: int) -> float:
        closed = _close_single(np.asarray(z, dtype=float), m)
        if closed is None:
            return 1e4
        F, A, T = closed
        f_lo, f_hi = self.config.magnitude_range
        guard = 50.0 * (max(0.0, f_lo - F[-1]) + max(0.0, F[-1] - f_hi))
        x = np.concatenate([np.clip(F, f_lo, f_hi), A, np.clip(T, -self.config.tau_bound, self.config.tau_bound)])
        return self.full(x, quantized=not self.config.smooth_objective) + guard


def residual(
    forces: ForceList,
    observed: IntensityImage,
    particle: ParticleSpec,
    config: SolverConfig | None = None,
) -> float:
    """RMS pixel error over the disc plus the weighted balance penalty.

    Rendering follows the forward renderer exactly (including quantization),
    so a balanced list scores zero against its own rendered pattern.
    """
    config = config or SolverConfig()
    obj = _Objective(observed, particle, config)
    f, a, t = forces.as_arrays()
    return obj.full(np.concatenate([f, a, t]), quantized=True)


def gradient_energy(img: IntensityImage) -> np.ndarray:
    """Squared central-difference gradient magnitude of the pixel values."""
    gy, gx = np.gradient(img.pixels.astype(np.float64))
    return gx * gx + gy * gy


_calibration_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def magnitude_calibration(
    particle: ParticleSpec,
    pixel_size: float,
    *,
    n_points: int = 20,
    magnitude_range: tuple[float, float] = (0.01, 0.9),
) -> tuple[np.ndarray, np.ndarray]:
    """Monotone table mapping force magnitude to mean gradient energy.

    Built once per (particle, raster) by sweeping a diametral force pair
    through the forward model; a running maximum enforces monotonicity so
    the inverse lookup is well defined.
    """
    key = (
        particle.radius,
        particle.fringe_coefficient,
        particle.intensity_scale,
        pixel_size,
        n_points,
        magnitude_range,
    )
    if key not in _calibration_cache:
        spec = ImageSpec(pixel_size)
        mags = np.linspace(magnitude_range[0], magnitude_range[1], n_points)
        energies = []
        for f in mags:
            pair = ForceList.from_rows([[f, 0.0, 0.0], [f, math.pi, 0.0]])
            img = render(pair, particle, spec)
            x, y = pixel_centers(img.width, img.pixel_size)
            X, Y = np.meshgrid(x, y)
            inside = np.hypot(X, Y) <= particle.radius
            energies.append(float(gradient_energy(img)[inside].mean()))
        table = np.maximum.accumulate(np.array(energies))
        _calibration_cache[key] = (mags, table)
    return _calibration_cache[key]


def _angular_profile(img: IntensityImage, particle: ParticleSpec) -> np.ndarray:
    """Mean gradient energy per angular bin over an annulus near the rim."""
    g2 = gradient_energy(img)
    x, y = pixel_centers(img.width, img.pixel_size)
    X, Y = np.meshgrid(x, y)
    r = np.hypot(X, Y)
    annulus = (r >= 0.55 * particle.radius) & (r <= 0.98 * particle.radius)
    angles = np.arctan2(Y[annulus], X[annulus]) % TWO_PI
    bins = np.minimum((angles / TWO_PI * ANGULAR_BINS).astype(int), ANGULAR_BINS - 1)
    profile = np.zeros(ANGULAR_BINS)
    counts = np.zeros(ANGULAR_BINS)
    np.add.at(profile, bins, g2[annulus])
    np.add.at(counts, bins, 1.0)
    profile = np.divide(profile, counts, out=np.zeros_like(profile), where=counts > 0)
    # Light circular smoothing to stabilize the peak picking.
    return 0.25 * np.roll(profile, 1) + 0.5 * profile + 0.25 * np.roll(profile, -1)


def _pick_peaks(profile: np.ndarray, m: int, min_separation: float) -> list[float]:
    """Well-separated peak angles of a circular profile, at most m of them."""
    bin_width = TWO_PI / len(profile)
    work = profile.copy()
    peaks: list[float] = []
    for _ in range(m):
        best = int(np.argmax(work))
        if work[best] <= 0.0:
            break
        # Circular centroid over the 5 bins around the peak.
        idx = np.arange(best - 2, best + 3)
        w = profile[idx % len(profile)]
        offsets = (idx - best) * bin_width
        centre = (best + 0.5) * bin_width
        angle = (centre + float(np.average(offsets, weights=w)) if w.sum() > 0 else centre) % TWO_PI
        peaks.append(angle)
        d = np.abs((np.arange(len(profile)) + 0.5) * bin_width - angle) % TWO_PI
        work[np.minimum(d, TWO_PI - d) < min_separation] = -1.0
    return peaks


def _separated(angle: float, others: list[float], min_separation: float) -> bool:
    for o in others:
        d = abs(angle - o) % TWO_PI
        if min(d, TWO_PI - d) < min_separation:
            return False
    return True


def _greedy_refine(
    observed: IntensityImage,
    particle: ParticleSpec,
    candidates: list[float],
    magnitude: float,
    min_separation: float,
) -> list[float]:
    """Greedy model-matching pass: place radial forces at the common magnitude
    one at a time and scan each around the circle for the best pixel match."""
    x, y = pixel_centers(observed.width, observed.pixel_size)
    X, Y = np.meshgrid(x, y)
    mask = np.hypot(X, Y) <= particle.radius
    px, py = X[mask], Y[mask]
    target = observed.pixels[mask].astype(np.float64)

    def rms(angles: list[float]) -> float:
        triplets = [ForceTriplet(magnitude, a, 0.0) for a in angles]
        values = intensity_field(px, py, triplets, particle)
        return float(np.sqrt(np.mean((values - target) ** 2)))

    grid = np.arange(0.0, TWO_PI, math.radians(5.0))
    angles: list[float] = []
    for start in candidates:
        scan = [a for a in grid if _separated(a, angles, min_separation)]
        if not scan:
            angles.append(start)
            continue
        values = [rms(angles + [a]) for a in scan]
        angles.append(float(scan[int(np.argmin(values))]))
    for _ in range(2):
        for k in range(len(angles)):
            others = angles[:k] + angles[k + 1 :]
            best_a, best_v = angles[k], rms(angles)
            for delta in np.radians(np.arange(-6.0, 6.5, 1.5)):
                a = (angles[k] + float(delta)) % TWO_PI
                if not _separated(a, others, min_separation):
                    continue
                trial = angles.copy()
                trial[k] = a
                v = rms(trial)
                if v < best_v:
                    best_a, best_v = a, v
            angles[k] = best_a
    return angles


def initial_guess(
    img: IntensityImage,
    m: int,
    particle: ParticleSpec,
    config: SolverConfig | None = None,
) -> ForceList:
    """Starting force list from local gradient statistics.

    Impact angles start at the m largest well-separated peaks of the
    angular gradient-energy profile (equally spaced fallback when the image
    has fewer separable peaks) and are refined by a greedy model-matching
    scan against the observed pixels; tangent angles start at zero; all
    magnitudes share the value whose calibrated mean gradient energy
    matches the image. A flat image skips the refinement and returns the
    fallback at the minimum magnitude.
    """
    if not 2 <= m <= 6:
        raise ValueError(f"force count must be in [2, 6], got {m}")
    config = config or SolverConfig()
    profile = _angular_profile(img, particle)
    peaks = _pick_peaks(profile, m, config.min_separation)
    if len(peaks) < m:
        start = peaks[0] if peaks else 0.0
        peaks = [(start + TWO_PI * k / m) % TWO_PI for k in range(m)]

    mags, table = magnitude_calibration(
        particle, img.pixel_size, magnitude_range=config.magnitude_range
    )
    x, y = pixel_centers(img.width, img.pixel_size)
    X, Y = np.meshgrid(x, y)
    inside = np.hypot(X, Y) <= particle.radius
    mean_g2 = float(gradient_energy(img)[inside].mean())
    magnitude = float(np.interp(mean_g2, table, mags))
    magnitude = min(max(magnitude, config.magnitude_range[0]), config.magnitude_range[1])
    if mean_g2 < 1e-9:
        return ForceList.from_rows([[magnitude, a, 0.0] for a in sorted(peaks)])
    angles = _greedy_refine(img, particle, peaks, magnitude, config.min_separation)
    return ForceList.from_rows([[magnitude, a, 0.0] for a in sorted(angles)])


def _blurred_gradient(pixels: np.ndarray, sigma: float = 1.5) -> np.ndarray:
    """Gaussian-blurred gradient magnitude of a float image (per pixel units)."""
    gy, gx = np.gradient(pixels.astype(np.float64))
    G = np.hypot(gx, gy)
    radius = math.ceil(3.0 * sigma)
    k = np.exp(-np.arange(-radius, radius + 1) ** 2 / (2.0 * sigma**2))
    k /= k.sum()
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(G, pad, mode="symmetric")
        acc = np.zeros_like(G)
        for q, w in enumerate(k):
            acc += w * (padded[q : q + G.shape[0], :] if axis == 0 else padded[:, q : q + G.shape[1]])
        G = acc
    return G


class _MatchedBank:
    """Matched filter of single-contact fringe templates.

    Templates are rendered once per (force, tangent) grid cell with the
    contact on the +x rim, passed through the same blurred-gradient map as
    the observation (so quantization and aliasing bias cancel), and sampled
    on a polar patch around the contact. One bank serves every impact angle
    because the patch follows the local contact frame.
    """

    FORCES = np.geomspace(0.015, 0.9, 36)
    TANGENTS = np.radians(np.arange(-45.0, 46.0, 9.0))

    def __init__(self, particle: ParticleSpec, pixel_size: float, side: int):
        self.particle = particle
        self.pixel_size = pixel_size
        self.side = side
        R = particle.radius
        self.d_grid = np.linspace(2.2 * pixel_size, 0.5 * R, 22)
        self.th_grid = np.radians(np.linspace(-70.0, 70.0, 23))
        DD, TT = np.meshgrid(self.d_grid, self.th_grid, indexing="ij")
        self._DD, self._TT = DD, TT
        spec = ImageSpec(pixel_size)
        patches = []
        keys = []
        for F in self.FORCES:
            for tau in self.TANGENTS:
                contact = ForceTriplet(float(F), 0.0, float(tau))
                x, y = pixel_centers(side, pixel_size)
                X, Y = np.meshgrid(x, y)
                inside = np.hypot(X, Y) <= R
                values = np.zeros((side, side))
                values[inside] = intensity_field(X[inside], Y[inside], [contact], particle)
                dmap = _blurred_gradient(quantize(values).astype(np.float64))
                patches.append(self._polar(dmap, 0.0).ravel())
                keys.append((float(F), float(tau)))
        self.patches = np.array(patches)
        self.keys = keys

    def _polar(self, field: np.ndarray, alpha: float) -> np.ndarray:
        R = self.particle.radius
        cx, cy = R * math.cos(alpha), R * math.sin(alpha)
        phi = alpha + math.pi + self._TT
        xs = cx + self._DD * np.cos(phi)
        ys = cy + self._DD * np.sin(phi)
        half = self.side * self.pixel_size / 2.0
        c = np.clip(np.floor((xs + half) / self.pixel_size).astype(int), 0, self.side - 1)
        r = np.clip(np.floor((half - ys) / self.pixel_size).astype(int), 0, self.side - 1)
        return field[r, c]

    def detect(self, observed: IntensityImage, m: int, min_separation: float):
        """The m best-matching well-separated contacts as (F, alpha, tau) rows."""
        dmap = _blurred_gradient(observed.pixels.astype(np.float64))
        nang = 144
        angles = (np.arange(nang) + 0.5) * TWO_PI / nang
        scores = np.empty(nang)
        keys: list[tuple[float, float]] = []
        for i, a in enumerate(angles):
            patch = self._polar(dmap, float(a)).ravel()[None, :]
            err = np.sqrt(np.mean((self.patches - patch) ** 2, axis=1))
            j = int(np.argmin(err))
            scores[i] = err[j]
            keys.append(self.keys[j])
        rows: list[tuple[float, float, float]] = []
        work = scores.copy()
        for _ in range(m):
            i = int(np.argmin(work))
            if not np.isfinite(work[i]):
                break
            F, tau = keys[i]
            rows.append((F, float(angles[i]), tau))
            d = np.abs(angles - angles[i]) % TWO_PI
            work[np.minimum(d, TWO_PI - d) < min_separation] = np.inf
        while len(rows) < m:
            base = rows[0][1] if rows else 0.0
            rows.append((0.05, (base + TWO_PI * len(rows) / m) % TWO_PI, 0.0))
        return rows


_bank_cache: dict[tuple, _MatchedBank] = {}


def _matched_bank(particle: ParticleSpec, pixel_size: float, side: int) -> _MatchedBank:
    key = (particle.radius, particle.fringe_coefficient, particle.intensity_scale, pixel_size, side)
    if key not in _bank_cache:
        _bank_cache[key] = _MatchedBank(particle, pixel_size, side)
    return _bank_cache[key]


def _repair_separation(alphas: np.ndarray, min_sep: float, max_rounds: int = 25) -> np.ndarray:
    """Push impact angles apart until every circular gap is at least min_sep."""
    a = alphas % TWO_PI
    for _ in range(max_rounds):
        worst = None
        worst_gap = min_sep
        for i in range(len(a)):
            for j in range(i + 1, len(a)):
                d = abs(a[i] - a[j]) % TWO_PI
                gap = min(d, TWO_PI - d)
                if gap < worst_gap:
                    worst, worst_gap = (i, j), gap
        if worst is None:
            return a
        i, j = worst
        # Symmetric push about the circular midpoint of the pair.
        diff = (a[j] - a[i] + math.pi) % TWO_PI - math.pi
        mid = a[i] + diff / 2.0
        sign = 1.0 if diff >= 0 else -1.0
        a[i] = (mid - sign * min_sep / 2.0) % TWO_PI
        a[j] = (mid + sign * min_sep / 2.0) % TWO_PI
    return a


class _BestTracker:
    def __init__(self, z: np.ndarray, value: float):
        self.z = np.array(z, dtype=float)
        self.value = value
        self.trace = [value]

    def offer(self, z: np.ndarray, value: float) -> None:
        if value < self.value:
            self.value = value
            self.z = np.array(z, dtype=float)
            self.trace.append(value)


def _dial_in(obj: _Objective, tracker: _BestTracker, m: int, rounds: int) -> None:
    """Per-parameter line scans in closure coordinates.

    The dense magnitude scan steps through the discrete fringe-order
    minima; angle and tangent scans recentre their local basins.
    """
    mm1 = m - 1
    z = tracker.z.copy()
    value = obj.closure(z, m)
    for _ in range(rounds):
        improved = False
        for k in range(mm1):
            scans = (
                (k, np.clip(z[k] * np.linspace(0.55, 1.8, 51), 0.01, 0.9)),
                (mm1 + k, z[mm1 + k] + np.radians(np.linspace(-8.0, 8.0, 33))),
                (2 * mm1 + k, np.clip(z[2 * mm1 + k] + np.radians(np.linspace(-15.0, 15.0, 31)),
                                      -math.pi / 2, math.pi / 2)),
            )
            for idx, candidates in scans:
                values = []
                for c in candidates:
                    trial = z.copy()
                    trial[idx] = c
                    values.append(obj.closure(trial, m))
                j = int(np.argmin(values))
                if values[j] < value - 1e-12:
                    z[idx] = candidates[j]
                    value = values[j]
                    improved = True
        if not improved:
            break
    tracker.offer(z, value)


def _closure_bounds(m: int, config: SolverConfig):
    mm1 = m - 1
    lo = np.concatenate(
        [np.full(mm1, config.magnitude_range[0]), np.full(mm1, -np.inf), np.full(mm1, -config.tau_bound)]
    )
    hi = np.concatenate(
        [np.full(mm1, config.magnitude_range[1]), np.full(mm1, np.inf), np.full(mm1, config.tau_bound)]
    )
    return lo, hi


def _simplex_descent(obj: _Objective, tracker: _BestTracker, m: int, config: SolverConfig) -> int:
    mm1 = m - 1
    lo, hi = _closure_bounds(m, config)
    steps = np.concatenate(
        [
            np.full(mm1, config.simplex_step_magnitude),
            np.full(mm1, config.simplex_step_angle),
            np.full(mm1, config.simplex_step_tangent),
        ]
    )
    z0 = tracker.z.copy()

    def tracked(z: np.ndarray) -> float:
        v = obj.closure(z, m)
        tracker.offer(z, v)
        return v

    simplex = np.vstack([z0] + [z0 + steps[k] * np.eye(3 * mm1)[k] for k in range(3 * mm1)])
    result = minimize(
        tracked,
        z0,
        method="Nelder-Mead",
        bounds=Bounds(lo, hi),
        options={
            "maxiter": config.max_iterations,
            "fatol": config.tol,
            "xatol": 1e-8,
            "initial_simplex": simplex,
            "adaptive": True,
        },
    )
    return int(result.nit)


def _polish(obj: _Objective, tracker: _BestTracker, m: int, config: SolverConfig) -> int:
    """Finite-difference quasi-Newton polish with per-class steps."""
    mm1 = m - 1
    lo, hi = _closure_bounds(m, config)
    lo = np.where(np.isinf(lo), -1e9, lo)
    hi = np.where(np.isinf(hi), 1e9, hi)
    eps = np.concatenate(
        [
            np.full(mm1, config.fd_step_magnitude),
            np.full(mm1, config.fd_step_angle),
            np.full(mm1, config.fd_step_tangent),
        ]
    )

    def tracked(z: np.ndarray) -> float:
        v = obj.closure(z, m)
        tracker.offer(z, v)
        return v

    result = minimize(
        tracked,
        tracker.z.copy(),
        method="L-BFGS-B",
        bounds=Bounds(lo, hi),
        options={"maxiter": 60, "eps": eps, "ftol": 1e-14},
    )
    return int(result.nit)


def _de_candidates(
    observed: IntensityImage,
    m: int,
    particle: ParticleSpec,
    config: SolverConfig,
    seeds: list[np.ndarray],
    restart: int,
) -> list[np.ndarray]:
    """One restart of the continuation differential-evolution search."""
    mm1 = m - 1
    ndim = 3 * mm1
    rng = np.random.default_rng((hash((m, restart)) & 0xFFFF) + 7919 * restart + m)
    lo = np.concatenate([np.full(mm1, config.magnitude_range[0]), np.full(mm1, 0.0), np.full(mm1, -config.tau_bound)])
    hi = np.concatenate([np.full(mm1, config.magnitude_range[1]), np.full(mm1, TWO_PI), np.full(mm1, config.tau_bound)])
    pop = config.global_population
    Z = rng.uniform(lo, hi, size=(pop, ndim))
    # Tangent angles concentrate near zero physically; keep heavy tails.
    Z[:, 2 * mm1 :] = np.clip(rng.normal(0.0, 0.3, size=(pop, mm1)), -config.tau_bound, config.tau_bound)
    for i, seed in enumerate(seeds[: pop // 4]):
        Z[i] = np.clip(seed + rng.normal(0, 0.02, ndim) * (i > 0), lo, hi)
    levels = [
        (_EnvelopeObjective(observed, particle, blur_px, sub), gens)
        for blur_px, sub, gens in config.global_levels
    ]
    for level, gens in levels:
        values = level(Z)
        for _ in range(gens):
            idx = rng.integers(0, pop, size=(pop, 3))
            b, c = Z[idx[:, 1]], Z[idx[:, 2]]
            best = Z[int(np.argmin(values))]
            mutant = np.clip(best[None, :] + 0.7 * (b - c), lo, hi)
            cross = rng.uniform(size=Z.shape) < 0.9
            cross[np.arange(pop), rng.integers(0, ndim, pop)] = True
            trial = np.where(cross, mutant, Z)
            trial_values = level(trial)
            better = trial_values < values
            Z[better] = trial[better]
            values[better] = trial_values[better]
        # Memetic step: simplex-polish the front runners on this level.
        order = np.argsort(values)
        for j in order[:2]:
            r = minimize(
                level.scalar, Z[j], method="Nelder-Mead",
                options={"maxiter": 40 * ndim, "fatol": 1e-4, "adaptive": True},
            )
            x = np.clip(r.x, lo, hi)
            v = level.scalar(x)
            if v < values[j]:
                Z[j], values[j] = x, v
    order = np.argsort(values)
    return [Z[j] for j in order[:3]]


def reconstruct_fixed_m(
    observed: IntensityImage,
    m: int,
    guess: ForceList,
    particle: ParticleSpec,
    config: SolverConfig | None = None,
) -> ReconstructionResult:
    """Bound-constrained fit of the force list at a fixed count.

    Works in closure coordinates so candidates stay exactly balanced; runs
    per-parameter line scans plus a simplex descent and finite-difference
    polish from the guess (and, when the global stage is enabled, from
    continuation-search candidates). The best parameters seen at any
    evaluation are kept, so progress is monotone; the reported residual is
    the quantized public metric and an exact match short-circuits.
    """
    if len(guess) != m:
        raise ValueError(f"guess has {len(guess)} forces, expected {m}")
    config = config or SolverConfig()
    obj = _Objective(observed, particle, config)
    f0, a0, t0 = guess.as_arrays()
    x_guess = np.concatenate([f0, a0, t0])

    start_quantized = obj.full(x_guess, quantized=True)
    if start_quantized <= EXACT_FIT_RMS:
        return ReconstructionResult(
            forces=guess, residual=start_quantized, iterations=0, m_selected=m,
            per_m_residual={m: start_quantized}, trace=(start_quantized,),
        )

    z_guess = _encode(guess)
    tracker = _BestTracker(z_guess, obj.closure(z_guess, m))
    iterations = 0

    def refine(z: np.ndarray) -> None:
        nonlocal iterations
        local = _BestTracker(z, obj.closure(z, m))
        iterations += _simplex_descent(obj, local, m, config)
        if local.value > config.dial_threshold:
            # Off the basin; line scans walk the fringe orders, then redescend.
            _dial_in(obj, local, m, config.dial_rounds)
            iterations += _simplex_descent(obj, local, m, config)
        iterations += _polish(obj, local, m, config)
        tracker.offer(local.z, local.value)

    refine(z_guess)
    if config.global_search and tracker.value > config.global_stop_rms:
        bank = _matched_bank(particle, observed.pixel_size, observed.width)
        rows = bank.detect(observed, m, config.min_separation)
        rows.sort(key=lambda row: row[1])
        bank_list = ForceList.from_rows(
            [[max(f, config.magnitude_range[0]), a, t] for f, a, t in rows]
        )
        refine(_encode(bank_list))
        for restart in range(config.global_restarts):
            if tracker.value < config.global_stop_rms:
                break
            seeds = [tracker.z, z_guess]
            for z in _de_candidates(observed, m, particle, config, seeds, restart):
                refine(z)
                if tracker.value < config.global_stop_rms:
                    break

    closed = _close_single(tracker.z, m)
    if closed is None:
        # Last resort: fall back to the guess, which is always decodable.
        closed = (f0, a0, t0)
    F, A, T = closed
    f_lo, f_hi = config.magnitude_range
    F = np.clip(F, f_lo, f_hi)
    T = np.clip(T, -config.tau_bound, config.tau_bound)
    A = _repair_separation(np.asarray(A, dtype=float), config.min_separation)
    forces = ForceList.from_rows(np.column_stack([F, A, T]))
    final = residual(forces, observed, particle, config)
    return ReconstructionResult(
        forces=forces,
        residual=final,
        iterations=iterations,
        m_selected=m,
        per_m_residual={m: final},
        low_confidence=forces.mean_magnitude() <= config.low_confidence_magnitude,
        trace=tuple(tracker.trace),
    )


def reconstruct(
    observed: IntensityImage,
    particle: ParticleSpec,
    config: SolverConfig | None = None,
) -> ReconstructionResult:
    """Full reconstruction with model selection over the candidate force counts.

    Each candidate count gets its own initial guess and fit with the global
    stage enabled. When any branch reaches a near-perfect raw fit, the
    smallest such count wins (a larger count can always shave the residual
    slightly by adding a near-minimal force, so parsimony decides). When no
    branch truly fits, branches are compared on the envelope residual at
    the selection blur, which stays informative where the raw objective is
    decorrelated, preferring the smallest count within the band. Branch
    failures are tolerated unless every branch fails.
    """
    config = config or SolverConfig()
    full_config = replace(config, global_search=True)
    local_config = replace(config, global_search=False)
    selector = _EnvelopeObjective(observed, particle, config.selection_blur, 2)
    results: dict[int, ReconstructionResult] = {}
    scores: dict[int, float] = {}
    errors: dict[int, Exception] = {}
    solved_already = False
    for m in sorted(config.m_candidates):
        try:
            guess = initial_guess(observed, m, particle, config)
            # Once a smaller count fits essentially perfectly, parsimony has
            # decided the selection; larger counts only fill the residual
            # table and get the cheap local budget.
            branch_config = local_config if solved_already else full_config
            result = reconstruct_fixed_m(observed, m, guess, particle, branch_config)
            results[m] = result
            scores[m] = selector.scalar(_encode(result.forces))
            if result.residual <= config.selection_raw_threshold:
                solved_already = True
        except Exception as exc:  # noqa: BLE001 - per-branch isolation
            errors[m] = exc
    if not results:
        raise RuntimeError(f"all model-selection branches failed: {errors}")

    solved = [m for m, r in results.items() if r.residual <= config.selection_raw_threshold]
    if solved:
        selected = min(solved)
    else:
        best_score = min(scores.values())
        band = best_score * (1.0 + config.selection_preference)
        selected = min(m for m, v in scores.items() if v <= band)
    chosen = results[selected]
    chosen.m_selected = selected
    chosen.per_m_residual = {m: results[m].residual for m in results}
    return chosen
