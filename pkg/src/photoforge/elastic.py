"""Stress and photoelastic intensity of a loaded circular particle.

A disc of radius R carries M point forces on its rim. Each force is a
triplet (magnitude, impact angle, tangent angle): the impact angle locates
the contact point on the rim, counterclockwise from the x-axis, and the
tangent angle is the deviation of the force direction from the inward
radius. The stress at a point is the superposition, over contacts, of a
radial point-load kernel expressed in the polar frame of that contact,
plus a uniform rim term that cancels the kernel's traction on the free
boundary. Between crossed polarizers the transmitted intensity depends on
the principal stress difference through sin^2 of the optical phase.

All stresses are thickness-scaled (units N/m): material thickness, stress
optic coefficient and wavelength enter only through the single
dimensionless fringe coefficient in :class:`ParticleSpec`.

Conventions: +x right, +y up, angles in radians counterclockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Clamp radius around each contact point, metres. The kernel diverges at the
# contact itself; pixel centres essentially never coincide with it, and the
# clamp keeps the field finite when they do.
R_MIN = 1e-12


def wrap_angle(angle: float) -> float:
    """Reduce an angle to [0, 2pi); float modulo of a tiny negative can hit 2pi."""
    a = angle % TWO_PI
    return a if a < TWO_PI else 0.0


@dataclass(frozen=True)
class ForceTriplet:
    """One contact force (magnitude F, impact angle alpha, tangent angle tau).

    The contact point is (R cos alpha, R sin alpha). The force direction is
    the unit vector at angle alpha + pi + tau, i.e. pointing at the particle
    centre for tau = 0. alpha is normalized to [0, 2pi) on construction.
    """

    magnitude: float
    impact_angle: float
    tangent_angle: float

    def __post_init__(self) -> None:
        if not self.magnitude > 0.0:
            raise ValueError(f"force magnitude must be > 0, got {self.magnitude}")
        if not abs(self.tangent_angle) <= math.pi / 2:
            raise ValueError(
                f"tangent angle must lie in [-pi/2, pi/2], got {self.tangent_angle}"
            )
        object.__setattr__(self, "impact_angle", wrap_angle(self.impact_angle))

    def direction(self) -> tuple[float, float]:
        """Unit vector of the force."""
        a = self.impact_angle + math.pi + self.tangent_angle
        return (math.cos(a), math.sin(a))

    def vector(self) -> tuple[float, float]:
        """Cartesian force vector F * direction."""
        ux, uy = self.direction()
        return (self.magnitude * ux, self.magnitude * uy)

    def contact_point(self, radius: float) -> tuple[float, float]:
        return (radius * math.cos(self.impact_angle), radius * math.sin(self.impact_angle))

    def rotated(self, delta: float) -> "ForceTriplet":
        return ForceTriplet(self.magnitude, self.impact_angle + delta, self.tangent_angle)


@dataclass(frozen=True)
class ForceList:
    """Forces acting on one particle, canonically sorted by impact angle."""

    forces: tuple[ForceTriplet, ...]

    def __post_init__(self) -> None:
        forces = tuple(sorted(self.forces, key=lambda f: f.impact_angle))
        if not 2 <= len(forces) <= 6:
            raise ValueError(f"force count must be in [2, 6], got {len(forces)}")
        object.__setattr__(self, "forces", forces)

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[float]]) -> "ForceList":
        """Build from (magnitude, impact_angle, tangent_angle) rows."""
        return cls(tuple(ForceTriplet(*row) for row in rows))

    def __len__(self) -> int:
        return len(self.forces)

    def __iter__(self):
        return iter(self.forces)

    @property
    def m(self) -> int:
        return len(self.forces)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(magnitudes, impact angles, tangent angles) as float arrays."""
        f = np.array([t.magnitude for t in self.forces])
        a = np.array([t.impact_angle for t in self.forces])
        tau = np.array([t.tangent_angle for t in self.forces])
        return f, a, tau

    def rows(self) -> list[list[float]]:
        return [[t.magnitude, t.impact_angle, t.tangent_angle] for t in self.forces]

    def net_force(self) -> tuple[float, float]:
        """Vector sum of the forces; zero for a balanced list."""
        fx = sum(t.vector()[0] for t in self.forces)
        fy = sum(t.vector()[1] for t in self.forces)
        return (fx, fy)

    def torque_sum(self) -> float:
        """Sum of F_i sin(tau_i): torque about the centre with the radius factored out."""
        return sum(t.magnitude * math.sin(t.tangent_angle) for t in self.forces)

    def mean_magnitude(self) -> float:
        return sum(t.magnitude for t in self.forces) / len(self.forces)

    def rotated(self, delta: float) -> "ForceList":
        return ForceList(tuple(t.rotated(delta) for t in self.forces))

    def scaled(self, factor: float) -> "ForceList":
        return ForceList(
            tuple(
                ForceTriplet(t.magnitude * factor, t.impact_angle, t.tangent_angle)
                for t in self.forces
            )
        )


@dataclass(frozen=True)
class ParticleSpec:
    """Particle radius plus the optical constants of the fringe model.

    fringe_coefficient multiplies the thickness-scaled principal stress
    difference to give the optical phase in units of pi; intensity_scale is
    the peak gray value.
    """

    radius: float
    fringe_coefficient: float = 0.18
    intensity_scale: float = 255.0

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if not self.fringe_coefficient > 0.0:
            raise ValueError(
                f"fringe coefficient must be > 0, got {self.fringe_coefficient}"
            )
        if not 0.0 < self.intensity_scale <= 255.0:
            raise ValueError(
                f"intensity scale must lie in (0, 255], got {self.intensity_scale}"
            )


@dataclass(frozen=True)
class StressTensor2D:
    """Symmetric thickness-scaled 2D stress tensor (units N/m)."""

    sxx: float
    sxy: float
    syy: float

    def __add__(self, other: "StressTensor2D") -> "StressTensor2D":
        return StressTensor2D(self.sxx + other.sxx, self.sxy + other.sxy, self.syy + other.syy)

    def scaled(self, factor: float) -> "StressTensor2D":
        return StressTensor2D(factor * self.sxx, factor * self.sxy, factor * self.syy)

    def rotated(self, delta: float) -> "StressTensor2D":
        """Active rotation of the tensor by delta: Rot(delta) sigma Rot(delta)^T."""
        c, s = math.cos(delta), math.sin(delta)
        sxx = c * c * self.sxx - 2 * c * s * self.sxy + s * s * self.syy
        syy = s * s * self.sxx + 2 * c * s * self.sxy + c * c * self.syy
        sxy = c * s * (self.sxx - self.syy) + (c * c - s * s) * self.sxy
        return StressTensor2D(sxx, sxy, syy)


def flamant_radial_stress(r: float, theta: float, force: float) -> float:
    """Radial stress of a point load on a half plane, -2F cos(theta) / (pi r).

    Polar coordinates are centred at the load point with theta measured from
    the force direction; the hoop and shear components vanish identically.
    """
    if r <= 0.0:
        raise ValueError(f"radial distance must be > 0, got {r}")
    return -2.0 * force * math.cos(theta) / (math.pi * r)


def stress_field(
    x: np.ndarray,
    y: np.ndarray,
    forces: ForceList | Iterable[ForceTriplet],
    particle: ParticleSpec,
    *,
    boundary_term: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cartesian stress components (sxx, sxy, syy) at the points (x, y).

    For each contact the kernel value

        sigma_rr = -2 F cos(theta) / (pi r) + F cos(tau) / (pi R)

    is realized as the rank-one tensor sigma_rr * (e_r outer e_r), where e_r
    is the unit vector from the contact point to the field point and theta
    is the signed angle from the force direction to e_r. Contributions are
    summed over contacts. Distances below R_MIN are clamped (saturated
    near-contact stress).

    The second kernel term is a uniform rim compensation that cancels the
    boundary traction of the first for radially directed loads. It is not
    itself an equilibrium field; pass boundary_term=False to evaluate the
    bare point-load kernels, which satisfy the equilibrium equations
    exactly. Oblique loads (tau != 0) leave a boundary traction residual
    proportional to their tangential component either way.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sxx = np.zeros(np.broadcast(x, y).shape)
    sxy = np.zeros_like(sxx)
    syy = np.zeros_like(sxx)
    R = particle.radius
    for t in forces:
        ox, oy = t.contact_point(R)
        ux, uy = t.direction()
        dx = x - ox
        dy = y - oy
        r = np.hypot(dx, dy)
        safe = np.where(r > 0.0, r, 1.0)
        # Unit vector from the contact to the point; at the contact itself the
        # inward radial direction is the natural limit.
        ex = np.where(r > 0.0, dx / safe, -math.cos(t.impact_angle))
        ey = np.where(r > 0.0, dy / safe, -math.sin(t.impact_angle))
        cos_theta = ex * ux + ey * uy
        srr = -2.0 * t.magnitude * cos_theta / (math.pi * np.maximum(r, R_MIN))
        if boundary_term:
            srr = srr + t.magnitude * math.cos(t.tangent_angle) / (math.pi * R)
        sxx += srr * ex * ex
        sxy += srr * ex * ey
        syy += srr * ey * ey
    return sxx, sxy, syy


def contact_stress(
    point: Sequence[float],
    force: ForceTriplet,
    particle: ParticleSpec,
    *,
    boundary_term: bool = True,
) -> StressTensor2D:
    """Stress tensor at one point due to a single contact force."""
    sxx, sxy, syy = stress_field(
        np.array([point[0]]), np.array([point[1]]), [force], particle,
        boundary_term=boundary_term,
    )
    return StressTensor2D(float(sxx[0]), float(sxy[0]), float(syy[0]))


def total_stress(
    point: Sequence[float],
    forces: ForceList | Iterable[ForceTriplet],
    particle: ParticleSpec,
) -> StressTensor2D:
    """Stress tensor at one point: exact superposition over all contacts."""
    sxx, sxy, syy = stress_field(
        np.array([point[0]]), np.array([point[1]]), forces, particle
    )
    return StressTensor2D(float(sxx[0]), float(sxy[0]), float(syy[0]))


def principal_stress_difference(s: StressTensor2D) -> float:
    """sigma_plus - sigma_minus >= 0 of a symmetric 2x2 tensor."""
    return math.hypot(s.sxx - s.syy, 2.0 * s.sxy)


def principal_stress_difference_field(
    sxx: np.ndarray, sxy: np.ndarray, syy: np.ndarray
) -> np.ndarray:
    return np.hypot(sxx - syy, 2.0 * sxy)


def intensity(stress_diff: float, particle: ParticleSpec) -> float:
    """Transmitted gray value I0 sin^2(pi * f * stress_diff), continuous in [0, I0]."""
    phase = math.pi * particle.fringe_coefficient * stress_diff
    return particle.intensity_scale * math.sin(phase) ** 2


def intensity_field(
    x: np.ndarray,
    y: np.ndarray,
    forces: ForceList | Iterable[ForceTriplet],
    particle: ParticleSpec,
) -> np.ndarray:
    """Continuous intensity at the points (x, y); quantization is the renderer's job."""
    sxx, sxy, syy = stress_field(x, y, forces, particle)
    diff = principal_stress_difference_field(sxx, sxy, syy)
    phase = math.pi * particle.fringe_coefficient * diff
    return particle.intensity_scale * np.sin(phase) ** 2


def _interior_grid(
    forces: ForceList, particle: ParticleSpec, n: int, exclusion: float, margin: float
) -> tuple[np.ndarray, np.ndarray]:
    """Points of an n x n grid inside the disc, outside the contact exclusion discs."""
    R = particle.radius
    c = (np.arange(n) + 0.5) / n * 2.0 * R - R
    X, Y = np.meshgrid(c, c)
    keep = np.hypot(X, Y) <= R - margin
    for t in forces:
        ox, oy = t.contact_point(R)
        keep &= np.hypot(X - ox, Y - oy) > exclusion
    return X[keep], Y[keep]


def equilibrium_residual(
    forces: ForceList,
    particle: ParticleSpec,
    *,
    step: float = 1e-6,
    exclusion_factor: float = 0.1,
    grid: int = 25,
) -> float:
    """Worst equilibrium defect of the point-load kernel field, relative to its peak.

    Central differences with the given step approximate div(sigma) row by
    row on an interior grid that excludes a disc of radius
    exclusion_factor * R around each contact. Returned is the largest
    difference residual |sigma(.+step) - sigma(.-step)| summed per row,
    divided by the maximum stress magnitude on the grid. The bare kernels
    (boundary_term=False) form an exact equilibrium field, so the result is
    limited only by finite-difference truncation; the rim compensation term
    carries no such guarantee and is excluded (its effect is checked through
    the boundary traction instead).
    """
    R = particle.radius
    x, y = _interior_grid(forces, particle, grid, exclusion_factor * R, 2.0 * step)
    if x.size == 0:
        raise ValueError("no grid points survive the contact exclusion")

    def field(px, py):
        return stress_field(px, py, forces, particle, boundary_term=False)

    xp = field(x + step, y)
    xm = field(x - step, y)
    yp = field(x, y + step)
    ym = field(x, y - step)
    row1 = np.abs((xp[0] - xm[0]) + (yp[1] - ym[1]))
    row2 = np.abs((yp[2] - ym[2]) + (xp[1] - xm[1]))
    s0 = field(x, y)
    peak = max(np.abs(s0[0]).max(), np.abs(s0[1]).max(), np.abs(s0[2]).max())
    return float(max(row1.max(), row2.max()) / peak)


def boundary_traction_ratio(
    forces: ForceList,
    particle: ParticleSpec,
    *,
    arc_exclusion_factor: float = 0.1,
    n_boundary: int = 720,
    n_interior: int = 40,
) -> float:
    """Peak boundary traction relative to the mean interior stress magnitude.

    Samples |sigma . n| on the rim at points farther than
    arc_exclusion_factor * R (arc length) from every contact and divides by
    the mean Frobenius norm of the stress on an interior polar grid. The
    rim compensation cancels the kernel traction exactly for radial loads;
    lists with tau != 0 leave a residual of order sin(tau).
    """
    R = particle.radius
    phis = np.linspace(0.0, TWO_PI, n_boundary, endpoint=False)
    keep = np.ones_like(phis, dtype=bool)
    for t in forces:
        d = np.abs(phis - t.impact_angle) % TWO_PI
        d = np.minimum(d, TWO_PI - d)
        keep &= d > arc_exclusion_factor
    bx, by = R * np.cos(phis[keep]), R * np.sin(phis[keep])
    sxx, sxy, syy = stress_field(bx, by, forces, particle)
    nx, ny = np.cos(phis[keep]), np.sin(phis[keep])
    traction = np.hypot(sxx * nx + sxy * ny, sxy * nx + syy * ny)

    rr = R * np.sqrt((np.arange(n_interior) + 0.5) / n_interior) * 0.95
    aa = np.linspace(0.0, TWO_PI, n_interior, endpoint=False)
    RR, AA = np.meshgrid(rr, aa)
    ix, iy = RR * np.cos(AA), RR * np.sin(AA)
    isxx, isxy, isyy = stress_field(ix, iy, forces, particle)
    frob = np.sqrt(isxx**2 + 2.0 * isxy**2 + isyy**2)
    return float(traction.max() / frob.mean())
