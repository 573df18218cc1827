"""Formation quality metrics: clear view, velocity matching, upwash benefit.

The overall fitness of a flock state is the sum-of-squares distance of the
three metrics from their ideal values (0, 0, 1):

    J = CV^2 + VM^2 + (UB - 1)^2

Lower is better; a state counts as a V-formation when J drops below the
configured threshold.  All kernels accept arbitrary leading batch axes over
the (B, 2) bird layout so that swarm optimizers can score hundreds of
candidate states per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flock import FlockState

# Bit masks UPTO[k] with the low k bits set; UPTO[64] is all-ones.
_UPTO = np.array([(1 << k) - 1 for k in range(64)] + [0xFFFFFFFFFFFFFFFF], dtype=np.uint64)


@dataclass(frozen=True)
class FitnessParams:
    """Shape parameters of the view cone and the upwash/downwash field.

    The upwash field behind a bird is modeled as a separable Gaussian lobe
    peaking one ``upwash_peak_long`` behind the bird and one ``wing_span``
    to either side, minus a downwash lobe peaking directly behind.  The
    defaults are calibrated so that a flock built by
    ``flock.make_v_formation`` scores J well below 1e-3.
    """

    view_cone_angle: float = math.pi / 4
    wing_span: float = 1.0
    upwash_peak_long: float = 1.0
    upwash_sigma_lat: float = 0.5
    upwash_sigma_long: float = 0.8
    downwash_sigma_lat: float = 0.25
    downwash_sigma_long: float = 0.5
    view_ray_count: int = 64

    def __post_init__(self):
        for name in (
            "wing_span",
            "upwash_peak_long",
            "upwash_sigma_lat",
            "upwash_sigma_long",
            "downwash_sigma_lat",
            "downwash_sigma_long",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not (0.0 < self.view_cone_angle < 2.0 * math.pi):
            raise ValueError(
                f"view_cone_angle must lie in (0, 2*pi), got {self.view_cone_angle}"
            )
        if self.view_ray_count < 16:
            raise ValueError(f"view_ray_count must be >= 16, got {self.view_ray_count}")


@dataclass(frozen=True)
class FitnessBreakdown:
    """The three metrics plus their sum-of-squares combination."""

    cv: float
    vm: float
    ub: float
    j: float


def _headings(velocities: np.ndarray) -> np.ndarray:
    """Unit heading per bird; zero-velocity birds default to (1, 0)."""
    speeds = np.linalg.norm(velocities, axis=-1)
    out = np.empty_like(velocities)
    moving = speeds > 0
    np.divide(velocities, speeds[..., None], out=out, where=moving[..., None])
    out[~moving] = (1.0, 0.0)
    return out


def _wrap_angle(angles: np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - angles, 2.0 * np.pi)


def _interval_ray_mask(lo, hi, half_angle: float, step: float, ray_count: int, words: int):
    """Bit masks of the rays whose offset angle falls inside [lo, hi].

    Rays sit at cell-centered offsets -half_angle + step * (k + 0.5) for
    k in 0..ray_count-1; each mask word covers 64 consecutive ray indices.
    Empty intervals (lo > hi) produce zero masks.
    """
    k_lo = np.ceil((lo + half_angle) / step - 0.5).astype(np.int64)
    k_hi = np.floor((hi + half_angle) / step - 0.5).astype(np.int64)
    k_lo = np.maximum(k_lo, 0)
    k_hi = np.minimum(k_hi, ray_count - 1)
    masks = np.zeros(lo.shape + (words,), dtype=np.uint64)
    for w in range(words):
        lo_w = np.clip(k_lo - 64 * w, 0, 64)
        hi_w = np.clip(k_hi + 1 - 64 * w, 0, 64)
        np.copyto(masks[..., w], _UPTO[hi_w] & ~_UPTO[lo_w], where=hi_w > lo_w)
    return masks


def clear_view_fractions(
    positions: np.ndarray, velocities: np.ndarray, params: FitnessParams
) -> np.ndarray:
    """Blocked fraction of each bird's view cone, batched to (..., B).

    A bird's visual field is a cone of full angle ``view_cone_angle``
    centered on its heading, discretized into ``view_ray_count``
    cell-centered rays; a ray is blocked when it intersects another bird's
    wing segment (length ``wing_span``, centered on the bird, perpendicular
    to its heading).  The set of blocked rays per blocker is resolved
    exactly as an index interval between the two endpoint bearings, so no
    per-ray geometry is evaluated.  Viewers sitting exactly on a blocker's
    wing line quantize to the shorter bearing arc.
    """
    b = positions.shape[-2]
    heads = _headings(velocities)
    perps = np.stack([-heads[..., 1], heads[..., 0]], axis=-1)
    half_wings = 0.5 * params.wing_span * perps
    axis_angles = np.arctan2(heads[..., 1], heads[..., 0])

    # offsets[..., i, j, :] = x_j - x_i
    offsets = positions[..., None, :, :] - positions[..., :, None, :]
    end_a = offsets + half_wings[..., None, :, :]
    end_b = offsets - half_wings[..., None, :, :]
    bearing_a = _wrap_angle(
        np.arctan2(end_a[..., 1], end_a[..., 0]) - axis_angles[..., :, None]
    )
    bearing_b = _wrap_angle(
        np.arctan2(end_b[..., 1], end_b[..., 0]) - axis_angles[..., :, None]
    )
    lo = np.minimum(bearing_a, bearing_b)
    hi = np.maximum(bearing_a, bearing_b)
    wraps = hi - lo > np.pi

    half_angle = 0.5 * params.view_cone_angle
    step = params.view_cone_angle / params.view_ray_count
    words = (params.view_ray_count + 63) // 64

    # A bird never blocks itself; empty intervals encode as lo > hi.
    empty = np.eye(b, dtype=bool)
    lo_one = np.where(wraps, hi, lo)
    hi_one = np.where(wraps, np.pi, hi)
    lo_two = np.where(wraps & ~empty, -np.pi, 1.0)
    hi_two = np.where(wraps & ~empty, lo, 0.0)
    lo_one = np.where(empty, 1.0, lo_one)
    hi_one = np.where(empty, 0.0, hi_one)

    masks = _interval_ray_mask(lo_one, hi_one, half_angle, step, params.view_ray_count, words)
    masks |= _interval_ray_mask(lo_two, hi_two, half_angle, step, params.view_ray_count, words)
    blocked = np.bitwise_or.reduce(masks, axis=-2)
    counts = np.bitwise_count(blocked).sum(axis=-1)
    return counts / float(params.view_ray_count)


def velocity_matching_total(velocities: np.ndarray) -> np.ndarray:
    """Sum of ||v_i - v_j|| over unordered bird pairs, batched to (...)."""
    b = velocities.shape[-2]
    iu, ju = np.triu_indices(b, k=1)
    diffs = velocities[..., iu, :] - velocities[..., ju, :]
    return np.linalg.norm(diffs, axis=-1).sum(axis=-1)


def upwash_contributions(
    offsets: np.ndarray, headings: np.ndarray, params: FitnessParams
) -> np.ndarray:
    """Upwash-minus-downwash felt at ``offsets`` from birds with ``headings``.

    ``offsets[..., j, :]`` is the probe position minus bird j's position;
    contributions are nonzero only behind bird j.
    """
    perps = np.stack([-headings[..., 1], headings[..., 0]], axis=-1)
    longitudinal = -np.sum(offsets * headings, axis=-1)
    lateral = np.sum(offsets * perps, axis=-1)
    long_dev = longitudinal - params.upwash_peak_long
    up = np.exp(
        -(long_dev**2) / (2.0 * params.upwash_sigma_long**2)
        - (np.abs(lateral) - params.wing_span) ** 2 / (2.0 * params.upwash_sigma_lat**2)
    )
    down = np.exp(
        -(long_dev**2) / (2.0 * params.downwash_sigma_long**2)
        - lateral**2 / (2.0 * params.downwash_sigma_lat**2)
    )
    return np.where(longitudinal > 0, up - down, 0.0)


def upwash_measures(
    positions: np.ndarray, velocities: np.ndarray, params: FitnessParams
) -> np.ndarray:
    """Accumulated upwash um_i per bird, clamped into [0, 1], batched to (..., B)."""
    b = positions.shape[-2]
    heads = _headings(velocities)
    offsets = positions[..., :, None, :] - positions[..., None, :, :]
    contribs = upwash_contributions(offsets, heads[..., None, :, :], params)
    contribs = np.where(np.eye(b, dtype=bool), 0.0, contribs)
    return np.clip(contribs.sum(axis=-1), 0.0, 1.0)


def metrics_batch(
    positions: np.ndarray, velocities: np.ndarray, params: FitnessParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(CV, VM, UB) for a batch of states, each batched to (...)."""
    cv = clear_view_fractions(positions, velocities, params).sum(axis=-1)
    vm = velocity_matching_total(velocities)
    ub = (1.0 - upwash_measures(positions, velocities, params)).sum(axis=-1)
    return cv, vm, ub


def fitness_batch(
    positions: np.ndarray, velocities: np.ndarray, params: FitnessParams
) -> np.ndarray:
    """Fitness J for a batch of states, batched to (...)."""
    cv, vm, ub = metrics_batch(positions, velocities, params)
    return cv**2 + vm**2 + (ub - 1.0) ** 2


def clear_view(state: FlockState, params: FitnessParams) -> float:
    """Sum over birds of the blocked fraction of each bird's view cone."""
    return float(clear_view_fractions(state.positions, state.velocities, params).sum())


def velocity_matching(state: FlockState) -> float:
    """Accumulated pairwise velocity disagreement across the flock."""
    return float(velocity_matching_total(state.velocities))


def upwash_benefit(state: FlockState, params: FitnessParams) -> float:
    """Sum over birds of 1 - um_i; a lone leader contributes exactly 1."""
    return float((1.0 - upwash_measures(state.positions, state.velocities, params)).sum())


def fitness(state: FlockState, params: FitnessParams) -> FitnessBreakdown:
    """Full breakdown; j is composed exactly from the three metrics."""
    cv, vm, ub = metrics_batch(state.positions, state.velocities, params)
    cv, vm, ub = float(cv), float(vm), float(ub)
    return FitnessBreakdown(cv=cv, vm=vm, ub=ub, j=cv**2 + vm**2 + (ub - 1.0) ** 2)


def is_v_formation(state: FlockState, params: FitnessParams, phi: float) -> bool:
    """Whether the state's fitness J falls below the threshold phi."""
    if not (math.isfinite(phi) and phi > 0):
        raise ValueError(f"phi must be a finite positive real, got {phi}")
    return fitness(state, params).j < phi


def upwash_field(
    points: np.ndarray, state: FlockState, params: FitnessParams
) -> np.ndarray:
    """Net upwash-minus-downwash of the flock sampled at arbitrary points.

    Used by the snapshot renderer's background shading; not clamped, so
    downwash regions come out negative.
    """
    pts = np.asarray(points, dtype=float)
    offsets = pts[..., None, :] - state.positions
    heads = _headings(state.velocities)
    return upwash_contributions(offsets, heads, params).sum(axis=-1)
