"""Random force lists under the physical constraints.

A list of M forces is built by drawing the first M-1 at random and solving
for the last one in closed form so that the vector sum of the forces and
the torque about the centre both vanish. Magnitudes follow a truncated
exponential base value with per-force normal jitter, impact angles are
uniform within disjoint sector bands, tangent angles are normal. Lists
violating any constraint (separation, friction bound, magnitude range,
balance) are discarded and redrawn.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Iterable, Optional, Sequence

import numpy as np

from . import streams
from .elastic import TWO_PI, ForceList, ForceTriplet

log = logging.getLogger(__name__)

# Residual bound for accepting a completed list as balanced (Newtons).
BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class SamplerConfig:
    """Distribution parameters and constraint bounds for force-list sampling."""

    magnitude_rate: float = 0.5
    magnitude_range: tuple[float, float] = (0.01, 0.9)
    magnitude_rel_sd: float = 0.2
    tau_sd: float = math.pi / 12
    min_separation: float = math.pi / 6
    tau_bound: float = math.pi / 2
    m_range: tuple[int, int] = (2, 6)
    seed: int = 0
    max_attempts: int = 100_000

    def __post_init__(self) -> None:
        f_min, f_max = self.magnitude_range
        if not 0.0 < f_min < f_max:
            raise ValueError(f"magnitude range must satisfy 0 < min < max, got {self.magnitude_range}")
        if self.min_separation * self.m_range[1] > TWO_PI:
            raise ValueError("min_separation too large for the maximum force count")
        if not self.tau_sd > 0.0:
            raise ValueError(f"tau_sd must be > 0, got {self.tau_sd}")
        if not 2 <= self.m_range[0] <= self.m_range[1] <= 6:
            raise ValueError(f"m_range must lie within [2, 6], got {self.m_range}")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["magnitude_range"] = list(self.magnitude_range)
        d["m_range"] = list(self.m_range)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SamplerConfig":
        kwargs = dict(d)
        if "magnitude_range" in kwargs:
            kwargs["magnitude_range"] = tuple(kwargs["magnitude_range"])
        if "m_range" in kwargs:
            kwargs["m_range"] = tuple(kwargs["m_range"])
        return cls(**kwargs)


class SamplerExhausted(RuntimeError):
    """No valid list found within the attempt cap."""

    def __init__(self, m: int, attempts: int):
        super().__init__(f"no valid force list for M={m} after {attempts} attempts")
        self.m = m
        self.attempts = attempts


def sample_base_magnitude(config: SamplerConfig, rng: np.random.Generator) -> float:
    """Base magnitude from the exponential law truncated to the magnitude range.

    Inverse-CDF over the truncated mass, so a uniform draw of 0 maps to the
    lower endpoint and 1 to the upper.
    """
    lam = config.magnitude_rate
    a, b = config.magnitude_range
    u = float(rng.uniform())
    ea, eb = math.exp(-lam * a), math.exp(-lam * b)
    return -math.log(ea - u * (ea - eb)) / lam


def sample_partial_list(
    m: int, config: SamplerConfig, rng: np.random.Generator
) -> list[tuple[float, float, float]]:
    """Draw the first m-1 raw (F, alpha, tau) triples.

    alpha_i is uniform in the i-th sector band
    (2pi(i-1)/m + pi/12, 2pi i/m - pi/12); magnitudes are normal around a
    shared base value (redrawn while non-positive); tangent angles are
    normal with sd tau_sd (redrawn while outside the friction bound, a
    ~6 sigma event).
    """
    if not 2 <= m <= 6:
        raise ValueError(f"force count must be in [2, 6], got {m}")
    base = sample_base_magnitude(config, rng)
    i = np.arange(1, m)
    lo = TWO_PI * (i - 1) / m + math.pi / 12
    hi = TWO_PI * i / m - math.pi / 12
    alphas = rng.uniform(lo, hi)
    mags = rng.normal(base, config.magnitude_rel_sd * base, size=m - 1)
    while np.any(mags <= 0.0):
        bad = mags <= 0.0
        mags[bad] = rng.normal(base, config.magnitude_rel_sd * base, size=int(bad.sum()))
    taus = rng.normal(0.0, config.tau_sd, size=m - 1)
    while np.any(np.abs(taus) > config.tau_bound):
        bad = np.abs(taus) > config.tau_bound
        taus[bad] = rng.normal(0.0, config.tau_sd, size=int(bad.sum()))
    return [(float(f), float(a), float(t)) for f, a, t in zip(mags, alphas, taus)]


def complete_balance(
    partial: Sequence[tuple[float, float, float]],
    config: SamplerConfig | None = None,
) -> Optional[tuple[float, float, float]]:
    """Closing force that balances the partial list, or None when impossible.

    With f_i = F_i (cos(alpha_i+pi+tau_i), sin(alpha_i+pi+tau_i)), the
    closing force must equal v = -sum f_i, which fixes F_M = |v|. Torque
    balance fixes sin(tau_M) = -(sum F_i sin tau_i) / F_M; the principal
    arcsine branch keeps tau_M inside the friction bound, and the impact
    angle follows from the direction of v. Rejected (None) when |sin tau_M|
    would exceed 1 or F_M falls outside the magnitude range.
    """
    f_min, f_max = (config or SamplerConfig()).magnitude_range
    vx = -sum(F * math.cos(a + math.pi + t) for F, a, t in partial)
    vy = -sum(F * math.sin(a + math.pi + t) for F, a, t in partial)
    f_m = math.hypot(vx, vy)
    if f_m < f_min or f_m > f_max:
        return None
    s = -sum(F * math.sin(t) for F, _, t in partial) / f_m
    if abs(s) > 1.0:
        return None
    tau_m = math.asin(s)
    alpha_m = (math.atan2(vy, vx) - math.pi - tau_m) % TWO_PI
    return (f_m, alpha_m, tau_m)


def _rows(forces: ForceList | Iterable[Sequence[float]]) -> list[tuple[float, float, float]]:
    if isinstance(forces, ForceList):
        return [tuple(r) for r in forces.rows()]
    return [(float(r[0]), float(r[1]), float(r[2])) for r in forces]


def validate_force_list(
    forces: ForceList | Iterable[Sequence[float]],
    config: SamplerConfig | None = None,
) -> Optional[str]:
    """First violated constraint as a reason string, or None when the list is valid.

    Checks, in order: force count, pairwise circular separation, tangent
    angle bound, magnitude range, force balance, torque balance.
    """
    cfg = config or SamplerConfig()
    rows = _rows(forces)
    m = len(rows)
    if not cfg.m_range[0] <= m <= cfg.m_range[1]:
        return "force count"
    alphas = [a % TWO_PI for _, a, _ in rows]
    for i in range(m):
        for j in range(i + 1, m):
            d = abs(alphas[i] - alphas[j])
            if min(d, TWO_PI - d) < cfg.min_separation:
                return "separation"
    if any(abs(t) > cfg.tau_bound for _, _, t in rows):
        return "tangent angle bound"
    f_min, f_max = cfg.magnitude_range
    if any(not f_min <= F <= f_max for F, _, _ in rows):
        return "magnitude range"
    fx = sum(F * math.cos(a + math.pi + t) for F, a, t in rows)
    fy = sum(F * math.sin(a + math.pi + t) for F, a, t in rows)
    if math.hypot(fx, fy) > BALANCE_TOL:
        return "force balance"
    if abs(sum(F * math.sin(t) for F, _, t in rows)) > BALANCE_TOL:
        return "torque balance"
    return None


def _sample_with_attempts(
    m: int, config: SamplerConfig, rng: np.random.Generator
) -> tuple[ForceList, int]:
    for attempt in range(1, config.max_attempts + 1):
        partial = sample_partial_list(m, config, rng)
        closing = complete_balance(partial, config)
        if closing is None:
            continue
        rows = partial + [closing]
        if validate_force_list(rows, config) is not None:
            continue
        return ForceList.from_rows(rows), attempt
    raise SamplerExhausted(m, config.max_attempts)


def sample_force_list(
    m: int,
    config: SamplerConfig,
    sample_index: int = 0,
    *,
    rng: np.random.Generator | None = None,
) -> ForceList:
    """One valid force list with M forces, canonically sorted.

    Draws come from the Philox stream keyed by (config.seed, m,
    sample_index), so the result is a pure function of those values; pass an
    explicit generator to draw sequentially instead. Raises
    SamplerExhausted after config.max_attempts rejections.
    """
    if rng is None:
        rng = streams.stream(config.seed, streams.TAG_SAMPLER, m, sample_index)
    forces, attempts = _sample_with_attempts(m, config, rng)
    if attempts > 1:
        log.debug("force list M=%d index=%d accepted after %d attempts", m, sample_index, attempts)
    return forces
