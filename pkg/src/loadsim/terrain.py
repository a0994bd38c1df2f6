"""Planar height-field soil pile.

The pile is a row of columns of width ``grid_dx`` extruded over the bucket
width.  Column contents are tracked as a mass ledger with three slots:

* ``ORIGINAL``  soil still resting where the pile was built,
* ``DISPLACED`` soil moved by the bucket or by slope failure,
* ``SPILLED``   soil that was in the bucket and fell back on the ground.

Heights are always derived from the ledger, so the ledger is the only state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import PileSpec, SoilSpec

G = 9.81
ORIGINAL, DISPLACED, SPILLED = 0, 1, 2

# soil-tool interface constants
TOOL_FRICTION_RATIO = 2.0 / 3.0  # delta = ratio * phi
PENETRATION_COEFF = 0.35
RAKE_LIMITS = (20.0, 85.0)
RAKE_QUANTUM = 0.1  # deg, cache resolution for wedge coefficients
PUSH_WEIGHTS = (0.5, 0.3, 0.2)
MAX_RELAX_ITERATIONS = 10_000
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class TerrainError(RuntimeError):
    pass


@dataclass
class PileState:
    spec: PileSpec
    width: float
    ledger: np.ndarray  # (n, 3) kg
    loaded_from: np.ndarray  # original mass per column that reached the bucket
    displaced_from: np.ndarray  # original mass per column moved elsewhere
    initial_heights: np.ndarray
    loaded_mass: float = 0.0  # current bucket content [kg]
    initial_mass: float = field(init=False)

    def __post_init__(self):
        self.initial_mass = float(self.ledger.sum())

    @property
    def soil(self) -> SoilSpec:
        return self.spec.soil

    @property
    def dx(self) -> float:
        return self.spec.grid_dx

    @property
    def n(self) -> int:
        return self.ledger.shape[0]

    @property
    def column_mass_per_height(self) -> float:
        return self.soil.density * self.width * self.dx

    @property
    def heights(self) -> np.ndarray:
        return self.ledger.sum(axis=1) / self.column_mass_per_height

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dx

    @property
    def length(self) -> float:
        return self.n * self.dx

    @property
    def pile_mass(self) -> float:
        """Soil on the ground that never went through the bucket [kg]."""
        return float(self.ledger[:, ORIGINAL].sum() + self.ledger[:, DISPLACED].sum())

    @property
    def spilled_mass(self) -> float:
        return float(self.ledger[:, SPILLED].sum())

    def total_mass(self) -> float:
        return self.pile_mass + self.spilled_mass + self.loaded_mass

    def conservation_error(self) -> float:
        """Relative mass defect against the initial pile mass."""
        return abs(self.total_mass() - self.initial_mass) / self.initial_mass

    def copy(self) -> "PileState":
        new = PileState(self.spec, self.width, self.ledger.copy(), self.loaded_from.copy(),
                        self.displaced_from.copy(), self.initial_heights, self.loaded_mass)
        new.initial_mass = self.initial_mass
        return new


@dataclass(frozen=True)
class DigForce:
    horizontal: float = 0.0
    vertical: float = 0.0  # downward on the bucket, resisting lift
    magnitude: float = 0.0
    penetration: float = 0.0
    separation: float = 0.0
    inertial: float = 0.0
    depth: float = 0.0


NO_CONTACT = DigForce()


def _ramp_integral(x: np.ndarray, toe: float, tan_s: float, crest: float) -> np.ndarray:
    """Antiderivative of min(max((x - toe) tan_s, 0), crest)."""
    x_crest = toe + crest / tan_s
    u = np.clip(x, toe, x_crest) - toe
    return 0.5 * tan_s * u * u + crest * np.maximum(x - x_crest, 0.0)


def init_pile(spec: PileSpec, domain_length: float | None = None,
              width: float = 2.7) -> PileState:
    """Build the initial pile: flat ground up to the toe, a ramp at the pile
    slope, then a flat crest.  Column heights are exact cell averages of that
    profile, so the pile mass equals the closed-form cross-section area."""
    tan_s = math.tan(math.radians(spec.slope))
    ramp_end = spec.toe_x + spec.crest_height / tan_s
    if domain_length is None:
        domain_length = ramp_end + 6.0
    if domain_length < ramp_end:
        raise TerrainError(
            f"domain of {domain_length:.3f} m cannot hold a ramp ending at {ramp_end:.3f} m")
    n = int(math.ceil(domain_length / spec.grid_dx - 1e-9))
    edges = np.arange(n + 1) * spec.grid_dx
    area = np.diff(_ramp_integral(edges, spec.toe_x, tan_s, spec.crest_height))
    heights = area / spec.grid_dx
    ledger = np.zeros((n, 3))
    ledger[:, ORIGINAL] = heights * spec.soil.density * width * spec.grid_dx
    return PileState(spec, width, ledger, np.zeros(n), np.zeros(n), heights.copy())


def pile_cross_section_area(spec: PileSpec, domain_length: float) -> float:
    """Closed-form area under the initial profile on [0, domain_length]."""
    tan_s = math.tan(math.radians(spec.slope))
    ramp = spec.crest_height / tan_s
    crest_len = domain_length - spec.toe_x - ramp
    return 0.5 * spec.crest_height * ramp + spec.crest_height * crest_len


def column_index(pile: PileState, x: float) -> int:
    i = int(math.floor(x / pile.dx))
    return min(max(i, 0), pile.n - 1)


def surface_height(pile: PileState, x: float, heights: np.ndarray | None = None) -> float:
    """Surface height at ``x``, linear between column centres."""
    h = pile.heights if heights is None else heights
    s = x / pile.dx - 0.5
    if s <= 0.0:
        return float(h[0])
    i = int(s)
    if i >= pile.n - 1:
        return float(h[-1])
    f = s - i
    return float(h[i] * (1.0 - f) + h[i + 1] * f)


# -- soil-tool interaction ----------------------------------------------------

def _wedge_factors(beta: np.ndarray | float, phi: float, delta: float, rake: float):
    """Passive trial-wedge factors for a flat blade (all angles in radians)."""
    cot_b = 1.0 / np.tan(beta)
    cot_bp = 1.0 / np.tan(beta + phi)
    denom = math.cos(rake + delta) + math.sin(rake + delta) * cot_bp
    n_gamma = (1.0 / math.tan(rake) + cot_b) / (2.0 * denom)
    n_c = (1.0 + cot_b * cot_bp) / denom
    return n_gamma, n_c, denom


def _wedge_objective(which: int, phi: float, delta: float, rake: float):
    def f(beta_deg: float) -> float:
        ng, nc, denom = _wedge_factors(math.radians(beta_deg), phi, delta, rake)
        if denom <= 0.0:
            return math.inf
        return (ng, nc)[which]
    return f


def golden_section_min(f, a: float, b: float, tol: float) -> float:
    """Abscissa of the minimum of a unimodal ``f`` on [a, b]."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def wedge_scan(phi: float, delta_tool: float, rake: float, step: float = 0.1):
    """Evaluate both factors on a uniform grid of failure angles (deg).

    Infeasible angles (non-positive denominator) come back as +inf.
    """
    n = int(round(90.0 / step))
    beta = np.arange(1, n) * step
    with np.errstate(divide="ignore", invalid="ignore"):
        ng, nc, denom = _wedge_factors(np.radians(beta), math.radians(phi),
                                       math.radians(delta_tool), math.radians(rake))
    bad = ~(denom > 0.0)
    ng = np.where(bad, np.inf, ng)
    nc = np.where(bad, np.inf, nc)
    return beta, ng, nc


def passive_wedge_coefficients(phi: float, delta_tool: float, rake: float,
                               scan_step: float = 0.1, tol: float = 1e-4) -> tuple[float, float]:
    """Minimum passive coefficients (N_gamma, N_c) over trial failure angles.

    Each factor is minimised separately: a coarse scan over (0, 90) deg picks
    the bracket, golden-section search refines it to ``tol`` degrees.
    """
    if not 0.0 <= phi < 90.0:
        raise ValueError("phi must lie in [0, 90) deg")
    if not 0.0 <= delta_tool <= phi:
        raise ValueError("delta_tool must lie in [0, phi]")
    if not 0.0 < rake < 90.0:
        raise ValueError("rake must lie in (0, 90) deg")
    beta, ng, nc = wedge_scan(phi, delta_tool, rake, scan_step)
    out = []
    for which, values in enumerate((ng, nc)):
        if not np.isfinite(values).any():
            raise TerrainError(
                f"no admissible failure wedge for phi={phi}, delta={delta_tool}, rake={rake}")
        k = int(np.argmin(values))
        f = _wedge_objective(which, math.radians(phi), math.radians(delta_tool),
                             math.radians(rake))
        lo = max(beta[k] - scan_step, 0.5 * scan_step * 1e-3)
        hi = min(beta[k] + scan_step, 90.0 - 0.5 * scan_step * 1e-3)
        b = golden_section_min(f, lo, hi, tol)
        out.append(float(min(f(b), float(values[k]))))
    return out[0], out[1]


@lru_cache(maxsize=4096)
def _cached_coefficients(phi: float, rake_q: float) -> tuple[float, float]:
    return passive_wedge_coefficients(phi, TOOL_FRICTION_RATIO * phi, rake_q)


def rake_angle(bucket_angle: float) -> float:
    """Cutting edge rake [deg] for a bucket angle [deg], quantised for the cache."""
    rake = min(max(90.0 - bucket_angle, RAKE_LIMITS[0]), RAKE_LIMITS[1])
    return round(rake / RAKE_QUANTUM) * RAKE_QUANTUM


def cutting_depth(pile: PileState, tip_x: float, tip_z: float,
                  heights: np.ndarray | None = None) -> float:
    return max(0.0, surface_height(pile, tip_x, heights) - max(tip_z, 0.0))


def dig_resistance(pile: PileState, tip_position: tuple[float, float],
                   tip_velocity: tuple[float, float], bucket_angle: float,
                   heights: np.ndarray | None = None) -> DigForce:
    """Soil reaction on the bucket.

    Separation of the soil wedge (weight and cohesion), penetration of the
    cutting edge, and the inertial load of accelerating the wedge to the
    forward speed.  Forces are per unit width times the pile width.
    """
    d = cutting_depth(pile, tip_position[0], tip_position[1], heights)
    if d <= 0.0:
        return NO_CONTACT
    soil = pile.soil
    w = pile.width
    rho = soil.density
    c = soil.cohesion_pa
    phi = math.radians(soil.phi_internal)
    rake = rake_angle(bucket_angle)
    n_gamma, n_c = _cached_coefficients(soil.phi_internal, rake)
    v_fwd = max(tip_velocity[0], 0.0)

    separation = w * (rho * G * d * d * n_gamma + c * d * n_c)
    penetration = w * PENETRATION_COEFF * (c + rho * G * 0.5 * d * math.tan(phi)) * d
    inertial = w * rho * d * v_fwd * v_fwd * math.tan(math.pi / 4.0 + 0.5 * phi)
    r = math.radians(rake)
    horizontal = penetration + inertial + separation * math.sin(r)
    vertical = separation * math.cos(r)
    return DigForce(horizontal, vertical, math.hypot(horizontal, vertical),
                    penetration, separation, inertial, d)


# -- excavation and deposition ---------------------------------------------------

def confinement_factor(pile: PileState, x: float, window: float, exponent: float,
                       heights: np.ndarray | None = None) -> float:
    """Share of the cut that the pile face drives into the bucket.

    The surface rise over ``window`` metres ahead of the edge, relative to the
    repose slope, raised to ``exponent``.  A flat surface lets the cut soil
    roll ahead of the bucket; a face at the repose angle feeds all of it in.
    """
    if window <= 0.0:
        return 1.0
    rise = surface_height(pile, x + window, heights) - surface_height(pile, x, heights)
    ratio = rise / (window * math.tan(math.radians(pile.soil.phi_internal)))
    return min(max(ratio, 0.0), 1.0) ** exponent


def capture_fraction(bucket_angle: float) -> float:
    return min(max(0.5 + bucket_angle / 90.0, 0.0), 1.0)


def _deposit(pile: PileState, i: int, mass: float, slot_masses: np.ndarray) -> None:
    """Add ``mass`` to column ``i`` with the given per-slot composition."""
    pile.ledger[min(max(i, 0), pile.n - 1)] += slot_masses * mass


def _take(pile: PileState, i: int, mass: float) -> np.ndarray:
    """Remove ``mass`` from column ``i`` proportionally over its slots; returns the slot masses."""
    row = pile.ledger[i]
    total = row.sum()
    if total <= 0.0 or mass <= 0.0:
        return np.zeros(3)
    mass = min(mass, total)
    taken = row * (mass / total)
    row -= taken
    np.maximum(row, 0.0, out=row)
    return taken


def excavate_step(pile: PileState, tip_path_segment: tuple[float, float, float, float],
                  bucket_angle: float, dt: float,
                  capture_limit: float = math.inf,
                  confinement: float = 1.0) -> tuple[float, float, float]:
    """Cut the soil swept by the cutting edge over one step.

    ``tip_path_segment`` is ``(x0, z0, x1, z1)``.  Each column crossed loses
    ``depth * forward / dx`` of height, never below the edge.  A share set by
    the bucket angle is captured into the bucket, at most ``capture_limit``
    m^3; the rest is pushed onto the three columns ahead of the edge.  Returns
    volumes ``(removed, captured, pushed)`` in m^3.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x0, z0, x1, z1 = tip_path_segment
    if not x1 > x0:
        return 0.0, 0.0, 0.0
    rho = pile.soil.density
    dx = pile.dx
    per_height = pile.column_mass_per_height
    z_edge = max(0.5 * (z0 + z1), 0.0)
    cuts: list[tuple[int, np.ndarray]] = []
    last_col = column_index(pile, x1)
    x = x0
    while x < x1:
        i = column_index(pile, x)
        boundary = (math.floor(x / dx) + 1.0) * dx
        x_next = min(x1, boundary) if boundary > x else x1
        fwd = x_next - x
        x = x_next
        depth = pile.ledger[i].sum() / per_height - z_edge
        if depth > 0.0:
            cuts.append((i, _take(pile, i, min(depth * fwd / dx, depth) * per_height)))
        if i >= pile.n - 1:
            break
    if not cuts:
        return 0.0, 0.0, 0.0
    removed_slots = sum(taken for _, taken in cuts)
    removed_mass = float(removed_slots.sum())
    if removed_mass <= 0.0:
        return 0.0, 0.0, 0.0
    captured_mass = min(confinement * capture_fraction(bucket_angle) * removed_mass,
                        max(capture_limit, 0.0) * rho)
    eta = captured_mass / removed_mass
    for i, taken in cuts:
        pile.loaded_from[i] += eta * taken[ORIGINAL]
        pile.displaced_from[i] += (1.0 - eta) * taken[ORIGINAL]
    pushed_mass = removed_mass - captured_mass
    pile.loaded_mass += captured_mass
    if pushed_mass > 0.0:
        # spilled soil stays spilled, everything else becomes displaced
        comp = np.array([0.0, removed_slots[ORIGINAL] + removed_slots[DISPLACED],
                         removed_slots[SPILLED]]) / removed_mass
        for k, weight in enumerate(PUSH_WEIGHTS, start=1):
            _deposit(pile, last_col + k, pushed_mass * weight, comp)
    return removed_mass / rho, captured_mass / rho, pushed_mass / rho


def spill_from_bucket(pile: PileState, volume: float, x: float) -> float:
    """Drop ``volume`` m^3 of bucket content on the column behind ``x``."""
    mass = min(volume * pile.soil.density, pile.loaded_mass)
    if mass <= 0.0:
        return 0.0
    pile.loaded_mass -= mass
    _deposit(pile, column_index(pile, x) - 1, mass, np.array([0.0, 0.0, 1.0]))
    return mass / pile.soil.density


# -- slope failure ----------------------------------------------------------------

def relax_slopes(pile: PileState, tol: float = 1e-13, wall: int | None = None,
                 span: tuple[int, int] | None = None) -> PileState:
    """Collapse every adjacent height difference steeper than the repose angle.

    Each violating pair exchanges half its excess.  Sweeps run left-to-right
    then right-to-left over the span that holds violations, until none remain.
    Moved soil keeps its slot except original soil, which becomes displaced.

    ``wall`` names a column whose boundary with the next column is held by
    the bucket, so no soil crosses it.  ``span`` is a column range known to
    contain every violation, which saves scanning a pile that is stable
    elsewhere.  Mutates and returns ``pile``.
    """
    per_height = pile.column_mass_per_height
    limit = pile.dx * math.tan(math.radians(pile.soil.phi_internal)) * per_height
    threshold = limit + tol * per_height
    ledger = pile.ledger
    last = pile.n - 2
    if last < 0:
        return pile
    if span is None:
        a, b = 0, last
    else:
        a, b = max(span[0] - 1, 0), min(span[1] + 1, last)
    m = ledger.sum(axis=1).tolist()
    for _ in range(MAX_RELAX_ITERATIONS):
        bad = [k for k in range(a, b + 1) if k != wall and abs(m[k] - m[k + 1]) > threshold]
        if not bad:
            return pile
        lo, hi = bad[0], bad[-1]
        for order in (range(lo, hi + 1), range(hi, lo - 1, -1)):
            for k in order:
                if k == wall:
                    continue
                diff = m[k] - m[k + 1]
                if diff > limit:
                    src, dst, excess = k, k + 1, diff - limit
                elif -diff > limit:
                    src, dst, excess = k + 1, k, -diff - limit
                else:
                    continue
                moved = 0.5 * excess
                row = ledger[src]
                share = row * (moved / m[src])
                row -= share
                ledger[dst, DISPLACED] += share[ORIGINAL] + share[DISPLACED]
                ledger[dst, SPILLED] += share[SPILLED]
                pile.displaced_from[src] += share[ORIGINAL]
                m[src] -= moved
                m[dst] += moved
        a, b = max(min(a, lo - 1), 0), min(max(b, hi + 1), last)
    raise TerrainError(f"slope relaxation did not settle in {MAX_RELAX_ITERATIONS} iterations")


def max_slope_excess(pile: PileState) -> float:
    """Largest adjacent height difference above the repose limit (<= 0 when stable)."""
    limit = pile.dx * math.tan(math.radians(pile.soil.phi_internal))
    return float(np.abs(np.diff(pile.heights)).max() - limit)


def surface_profile(pile: PileState) -> list[tuple[float, float]]:
    return list(zip(pile.x_centers.tolist(), pile.heights.tolist()))


PROFILE_HEADER = ("x", "height_initial", "height_final", "mass_loaded", "mass_displaced")


def write_profile_csv(pile: PileState, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILE_HEADER)
        for row in zip(pile.x_centers, pile.initial_heights, pile.heights,
                       pile.loaded_from, pile.displaced_from):
            writer.writerow([f"{v:.6g}" for v in row])
    return path
