"""Near-field channel synthesis for an extremely large-scale uniform linear array.

The array is modeled element by element: every antenna sees the user through
its own propagation distance, so the phase profile across the aperture is
spherical rather than planar.  Spatial non-stationarity is expressed through a
binary visibility indicator that masks the antennas outside the user's
visibility region (VR).  A wavenumber-domain codebook (discretized spatial
frequencies along the array axis) provides the sparse analysis domain used by
the estimation stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

_TINY_DISTANCE = 1e-9


class DegenerateGeometryError(ValueError):
    """User placed on top of an antenna or on the array line."""


class EmptyVisibilityRegionError(ValueError):
    """Requested visibility region contains no antenna."""


@dataclass
class ArrayGeometry:
    """Uniform linear array along the x axis, centered on the origin.

    Antenna n (1-based) sits at x = (n - (N + 1) / 2) * spacing, so the array
    is symmetric around the origin.  Default spacing is half a wavelength.
    """

    num_antennas: int
    wavelength: float
    spacing: float | None = None
    positions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.num_antennas < 1:
            raise ValueError("need at least one antenna")
        if self.wavelength <= 0.0:
            raise ValueError("wavelength must be positive")
        if self.spacing is None:
            self.spacing = self.wavelength / 2.0
        if self.spacing <= 0.0:
            raise ValueError("antenna spacing must be positive")
        n = np.arange(1, self.num_antennas + 1, dtype=float)
        x = (n - (self.num_antennas + 1) / 2.0) * self.spacing
        self.positions = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])

    @property
    def k0(self) -> float:
        """Carrier wavenumber 2*pi/wavelength."""
        return 2.0 * math.pi / self.wavelength

    @property
    def aperture(self) -> float:
        return self.num_antennas * self.spacing


@dataclass
class UserLocation:
    """Single-antenna user position in the array coordinate frame."""

    position: np.ndarray

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)

    @classmethod
    def from_polar(cls, distance: float, azimuth: float) -> "UserLocation":
        """Place the user at range `distance` and angle `azimuth` from broadside.

        Azimuth 0 is broadside (+y); positive angles rotate toward +x.
        """
        if distance <= 0.0:
            raise ValueError("distance must be positive")
        return cls(np.array([distance * math.sin(azimuth), distance * math.cos(azimuth), 0.0]))

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.position))


def element_distances(geom: ArrayGeometry, user: UserLocation) -> np.ndarray:
    """Per-antenna propagation distances ||s - t_n||."""
    r = np.linalg.norm(user.position[None, :] - geom.positions, axis=1)
    if np.any(r <= _TINY_DISTANCE):
        raise DegenerateGeometryError("user coincides with an antenna element")
    return r


def near_field_response(geom: ArrayGeometry, user: UserLocation) -> np.ndarray:
    """Spherical-wavefront array response: entry n is exp(j*k0*r_n)/r_n."""
    r = element_distances(geom, user)
    return np.exp(1j * geom.k0 * r) / r


def synthesize_stationary(geom: ArrayGeometry, user: UserLocation, gain: complex) -> np.ndarray:
    """Full-visibility channel h = (wavelength / 4 pi) * gain * response."""
    return (geom.wavelength / (4.0 * math.pi)) * gain * near_field_response(geom, user)


@dataclass
class WavenumberCodebook:
    """Uniformly discretized spatial frequencies along the array axis.

    The grid spans the visible wavenumber interval [-k0, k0) in steps of
    delta = 2*pi / (oversampling * aperture).  Column l of `matrix` is the
    unit-norm steering vector exp(j * delta * xi_l * x_n) / sqrt(N).
    """

    oversampling: int
    delta: float
    xi: np.ndarray
    matrix: np.ndarray

    @property
    def size(self) -> int:
        return self.xi.size


def build_codebook(geom: ArrayGeometry, oversampling: int = 1) -> WavenumberCodebook:
    """Build the wavenumber codebook for `geom` at integer oversampling >= 1."""
    if oversampling < 1:
        raise ValueError("oversampling must be a positive integer")
    s = int(oversampling)
    delta = 2.0 * math.pi / (s * geom.aperture)
    # Integer grid xi with -k0 <= delta*xi < k0.  The bound k0/delta equals
    # S*N*spacing/wavelength, an exact integer for half-wavelength spacing.
    bound = s * geom.num_antennas * geom.spacing / geom.wavelength
    nearest = round(bound)
    if abs(bound - nearest) < 1e-9 and nearest >= 1:
        lo, hi = -nearest, nearest - 1
    else:
        lo, hi = math.ceil(-bound), math.floor(bound)
    xi = np.arange(lo, hi + 1)
    x = geom.positions[:, 0]
    matrix = np.exp(1j * delta * np.outer(x, xi)) / math.sqrt(geom.num_antennas)
    return WavenumberCodebook(oversampling=s, delta=delta, xi=xi, matrix=matrix)


def wavenumber_transform(h: np.ndarray, codebook: WavenumberCodebook) -> np.ndarray:
    """Analysis coefficients h_a = F^H h."""
    return codebook.matrix.conj().T @ h


def effective_bandwidth(
    geom: ArrayGeometry, user: UserLocation, oversampling: int = 1
) -> tuple[float, int]:
    """Spread of the per-antenna spatial frequencies seen from `user`.

    Projects the unit direction vectors from the user to each antenna onto the
    array axis; the spread of those projections times k0 is the effective
    bandwidth B_e, and L_e = ceil(B_e / delta) counts the codebook bins needed
    to cover it.  Requires the user off the array line, where directions are
    ill-conditioned.
    """
    if math.hypot(user.position[1], user.position[2]) <= _TINY_DISTANCE:
        raise DegenerateGeometryError("user lies on the array line")
    r = element_distances(geom, user)
    proj = (geom.positions[:, 0] - user.position[0]) / r
    b_e = geom.k0 * float(proj.max() - proj.min())
    delta = 2.0 * math.pi / (int(oversampling) * geom.aperture)
    return b_e, int(math.ceil(b_e / delta))


@dataclass
class VisibilityRegion:
    """Binary visibility indicator over the antennas."""

    indicator: np.ndarray

    def __post_init__(self) -> None:
        ind = np.asarray(self.indicator)
        if not np.isin(ind, (0, 1)).all():
            raise ValueError("indicator entries must be 0 or 1")
        self.indicator = ind.astype(np.int8)

    @classmethod
    def from_support(cls, num_antennas: int, support) -> "VisibilityRegion":
        ind = np.zeros(num_antennas, dtype=np.int8)
        ind[np.asarray(list(support), dtype=int)] = 1
        return cls(ind)

    @classmethod
    def full(cls, num_antennas: int) -> "VisibilityRegion":
        return cls(np.ones(num_antennas, dtype=np.int8))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.indicator)

    @property
    def fill(self) -> float:
        return float(self.indicator.mean())


def sample_vr(
    kind: str,
    psi: float,
    num_antennas: int,
    rng: np.random.Generator,
    *,
    p10: float = 0.1,
    fill_tol: float | None = None,
) -> VisibilityRegion:
    """Draw a random visibility region.

    kind "contiguous": one run of floor(psi*N) visible antennas at a uniform
    start.  kind "two_blocks": two disjoint runs (separated by at least one
    invisible antenna) summing to floor(psi*N).  kind "markov": stationary
    two-state chain with fill psi and visible-to-invisible transition
    probability p10.

    `fill_tol` (markov only) rejection-samples until the realized fill is
    within that distance of psi.  At moderate N the chain's correlation
    length 1/(p10+p01) makes the realized fill spread widely around psi, so
    experiments that sweep or estimate the fill need the conditioning to make
    psi meaningful per scene.  The block-structure statistics are unchanged;
    only the total-count spread shrinks.
    """
    n = int(num_antennas)
    if not 0.0 < psi <= 1.0:
        raise ValueError("psi must lie in (0, 1]")
    if kind == "markov":
        if psi >= 1.0:
            return VisibilityRegion.full(n)
        if not 0.0 < p10 < 1.0:
            raise ValueError("markov sampling needs 0 < p10 < 1")
        p01 = psi * p10 / (1.0 - psi)
        if p01 > 1.0:
            raise ValueError("psi and p10 imply an invalid invisible-to-visible rate")

        def draw() -> np.ndarray:
            ind = np.zeros(n, dtype=np.int8)
            u = rng.random(n)
            ind[0] = u[0] < psi
            for i in range(1, n):
                ind[i] = u[i] < (1.0 - p10 if ind[i - 1] else p01)
            return ind

        ind = draw()
        if fill_tol is not None:
            best, best_err = ind, abs(float(ind.mean()) - psi)
            attempts = 0
            while best_err > fill_tol and attempts < 1000:
                ind = draw()
                err = abs(float(ind.mean()) - psi)
                if err < best_err:
                    best, best_err = ind, err
                attempts += 1
            ind = best
        if not ind.any():
            # Stationary draws can come up empty for small psi*N; a VR must
            # contain at least one antenna for the channel to exist.
            ind[int(rng.integers(n))] = 1
        return VisibilityRegion(ind)

    size = int(math.floor(psi * n))
    if size < 1:
        raise EmptyVisibilityRegionError("psi too small: floor(psi*N) < 1")
    ind = np.zeros(n, dtype=np.int8)
    if kind == "contiguous":
        start = int(rng.integers(0, n - size + 1))
        ind[start : start + size] = 1
    elif kind == "two_blocks":
        if size < 2:
            raise EmptyVisibilityRegionError("two blocks need floor(psi*N) >= 2")
        if size + 1 > n:
            raise ValueError("no room for a gap between two blocks")
        first = size - size // 2
        second = size - first
        # Place the first block, then the second strictly to its right with
        # at least one invisible antenna in between.
        start1 = int(rng.integers(0, n - size))
        start2 = int(rng.integers(start1 + first + 1, n - second + 1))
        ind[start1 : start1 + first] = 1
        ind[start2 : start2 + second] = 1
    else:
        raise ValueError(f"unknown visibility-region kind: {kind!r}")
    return VisibilityRegion(ind)


def apply_vr(h: np.ndarray, vr: VisibilityRegion) -> np.ndarray:
    """Mask the stationary channel with the visibility indicator."""
    return vr.indicator * h


def sns_codebook(codebook: WavenumberCodebook, vr: VisibilityRegion) -> np.ndarray:
    """Row-masked codebook diag(indicator) @ F used by visibility-aware fits."""
    return vr.indicator[:, None] * codebook.matrix


@dataclass
class ChannelRealization:
    """One synthesized channel: complex gain, stationary and masked responses,
    and the wavenumber coefficients of the stationary channel."""

    gain: complex
    stationary: np.ndarray
    masked: np.ndarray
    wavenumber: np.ndarray | None = None


def realize_channel(
    geom: ArrayGeometry,
    user: UserLocation,
    vr: VisibilityRegion,
    gain: complex,
    codebook: WavenumberCodebook | None = None,
) -> ChannelRealization:
    h = synthesize_stationary(geom, user, gain)
    x = apply_vr(h, vr)
    h_a = wavenumber_transform(h, codebook) if codebook is not None else None
    return ChannelRealization(gain=gain, stationary=h, masked=x, wavenumber=h_a)
