"""Attributed scattering center (ASC) simulation.

Synthesizes frequency-azimuth backscatter from sets of scattering centers,
renders it into SAR-like magnitude images, and extrapolates scattering center
parameters from ray bundles (the forward-model route, emulated here with
synthetic rays instead of ray tracing on CAD geometry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8

#: frequency dependence factor for each surface curvature class
SURFACE_ALPHA = {"planar": 1.0, "hyperbolic": 0.5, "monoclinic": 0.0}

N_BUILTIN_CLASSES = 10


@dataclass(frozen=True)
class ScatteringCenter:
    """One ASC parameter tuple.

    ``orientation`` is the aspect angle (rad) at which a distributed center
    flashes; ``aspect_damping`` is the gamma of the aspect decay factor.
    """

    amplitude: float
    length: float = 0.0
    freq_dependence: float = 0.0
    orientation: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    aspect_damping: float = 0.0

    def __post_init__(self):
        values = self.as_tuple()
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite scattering center parameter: {values}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.length < 0:
            raise ValueError("length must be >= 0")
        if self.aspect_damping < 0:
            raise ValueError("aspect_damping must be >= 0")

    @property
    def is_distributed(self) -> bool:
        return self.length > 0

    @property
    def position(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def as_tuple(self) -> tuple[float, ...]:
        return (
            float(self.amplitude),
            float(self.length),
            float(self.freq_dependence),
            float(self.orientation),
            float(self.x),
            float(self.y),
            float(self.z),
            float(self.aspect_damping),
        )

    def to_record(self) -> dict:
        a, l, alpha, phi, x, y, z, g = self.as_tuple()
        return {"A": a, "L": l, "alpha": alpha, "phi": phi, "x": x, "y": y, "z": z, "gamma": g}

    @classmethod
    def from_record(cls, rec: dict) -> "ScatteringCenter":
        return cls(
            amplitude=rec["A"],
            length=rec["L"],
            freq_dependence=rec["alpha"],
            orientation=rec["phi"],
            x=rec["x"],
            y=rec["y"],
            z=rec["z"],
            aspect_damping=rec["gamma"],
        )


@dataclass(frozen=True)
class RadarConfig:
    """Frequency/azimuth sampling grid.

    Grids are centred so that the centre frequency and centre azimuth fall
    exactly on sample ``n // 2``.
    """

    center_frequency: float = 1e10
    bandwidth: float = 5e8
    n_freq: int = 64
    azimuth_center: float = 0.0
    azimuth_span: float = math.radians(3.0)
    n_az: int = 64
    azimuth_resolution: float = math.radians(3.0)
    wave_speed: float = SPEED_OF_LIGHT

    def __post_init__(self):
        for name in ("center_frequency", "bandwidth", "azimuth_span", "azimuth_resolution", "wave_speed"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not math.isfinite(self.azimuth_center):
            raise ValueError("azimuth_center must be finite")
        if self.n_freq < 2 or self.n_az < 2:
            raise ValueError("n_freq and n_az must be >= 2")
        if self.bandwidth >= 2 * self.center_frequency:
            raise ValueError("bandwidth must be < 2 * center_frequency")

    @property
    def freq_step(self) -> float:
        return self.bandwidth / self.n_freq

    @property
    def azimuth_step(self) -> float:
        return self.azimuth_span / self.n_az

    @property
    def frequencies(self) -> np.ndarray:
        return self.center_frequency + (np.arange(self.n_freq) - self.n_freq // 2) * self.freq_step

    @property
    def azimuths(self) -> np.ndarray:
        return self.azimuth_center + (np.arange(self.n_az) - self.n_az // 2) * self.azimuth_step

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * self.frequencies / self.wave_speed

    def to_dict(self) -> dict:
        return {
            "center_frequency": self.center_frequency,
            "bandwidth": self.bandwidth,
            "n_freq": self.n_freq,
            "azimuth_center": self.azimuth_center,
            "azimuth_span": self.azimuth_span,
            "n_az": self.n_az,
            "azimuth_resolution": self.azimuth_resolution,
            "wave_speed": self.wave_speed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RadarConfig":
        return cls(**d)


@dataclass(frozen=True)
class RayContribution:
    field_value: complex
    reflection_point: tuple[float, float, float]
    current_weight: float = 1.0
    phase_class: int = 0

    def __post_init__(self):
        if self.current_weight < 0:
            raise ValueError("current_weight must be >= 0")


@dataclass(frozen=True)
class JitterSpec:
    """Per-sample perturbation magnitudes applied to a template."""

    position_sigma: float = 0.15
    amplitude_sigma: float = 0.25
    orientation_sigma: float = math.radians(2.0)
    pose_range: float = math.radians(20.0)
    dropout: float = 0.1

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class TargetTemplate:
    class_id: int
    base_centers: tuple[ScatteringCenter, ...]
    jitter_spec: JitterSpec = field(default_factory=JitterSpec)

    def __post_init__(self):
        if len(self.base_centers) < 3:
            raise ValueError("a template needs at least 3 centers")


def azimuth_length_threshold(f: float, delta_phi: float, c: float = SPEED_OF_LIGHT) -> float:
    """Minimum resolvable length of a distributed center, ``c / (2 f sin(dphi/2))``."""
    if not (f > 0 and math.isfinite(f)):
        raise ValueError(f"frequency must be positive, got {f}")
    if not (0 < delta_phi < 2 * math.pi):
        raise ValueError(f"azimuth resolution must lie in (0, 2pi), got {delta_phi}")
    return c / (2.0 * f * math.sin(delta_phi / 2.0))


def _unnormalized_sinc(t: np.ndarray) -> np.ndarray:
    # np.sinc is sin(pi x)/(pi x)
    return np.sinc(t / np.pi)


def synthesize_backscatter(scs: Sequence[ScatteringCenter], cfg: RadarConfig) -> np.ndarray:
    """Coherent ASC backscatter on the ``(n_freq, n_az)`` grid of ``cfg``."""
    if len(scs) == 0:
        raise ValueError("need at least one scattering center")
    params = np.array([sc.as_tuple() for sc in scs], dtype=np.float64)
    if not np.all(np.isfinite(params)):
        raise ValueError("non-finite scattering center parameters")

    f = cfg.frequencies[:, None]
    k = cfg.wavenumbers[:, None]
    phi = cfg.azimuths[None, :]
    cos_phi, sin_phi = np.cos(phi), np.sin(phi)

    out = np.zeros((cfg.n_freq, cfg.n_az), dtype=np.complex128)
    for amp, length, alpha, orient, x, y, _z, gamma in params:
        # (j f/fc)^alpha on the principal branch
        freq_term = np.exp(1j * np.pi * alpha / 2) * (f / cfg.center_frequency) ** alpha
        aspect = _unnormalized_sinc(k * length * np.sin(phi - orient))
        damping = np.exp(-k * cfg.wave_speed * gamma * sin_phi)
        phase = np.exp(-2j * k * (x * cos_phi + y * sin_phi))
        out += amp * freq_term * aspect * damping * phase
    return out


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def render_image(E: np.ndarray, cfg: RadarConfig | None = None, out_size: tuple[int, int] = (128, 128)) -> np.ndarray:
    """Hann-windowed, zero-padded 2-D inverse FFT magnitude, peak-normalized.

    Rows are range (frequency axis), columns cross-range (azimuth axis).
    """
    E = np.asarray(E)
    if E.ndim != 2:
        raise ValueError("backscatter must be a 2-D matrix")
    if not np.all(np.isfinite(E)):
        raise ValueError("backscatter contains non-finite values")
    H, W = out_size
    if H < 16 or W < 16:
        raise ValueError("out_size must be at least 16x16")
    m, n = E.shape
    if cfg is not None and (m, n) != (cfg.n_freq, cfg.n_az):
        raise ValueError(f"backscatter shape {E.shape} does not match config grid ({cfg.n_freq}, {cfg.n_az})")
    if H < m or W < n:
        raise ValueError(f"out_size {out_size} smaller than backscatter grid {E.shape}")

    P, Q = _next_pow2(H), _next_pow2(W)
    windowed = E * np.outer(np.hanning(m), np.hanning(n))
    padded = np.zeros((P, Q), dtype=np.complex128)
    padded[:m, :n] = windowed
    img = np.abs(np.fft.fftshift(np.fft.ifft2(padded)))
    r0, c0 = (P - H) // 2, (Q - W) // 2
    img = img[r0 : r0 + H, c0 : c0 + W]
    peak = img.max()
    if peak > 0:
        img = img / peak
    return img


def scene_to_pixel(x: float, y: float, cfg: RadarConfig, out_size: tuple[int, int] = (128, 128)) -> tuple[float, float]:
    """Analytic (row, col) of a point scatterer at scene position (x, y)."""
    H, W = out_size
    P, Q = _next_pow2(H), _next_pow2(W)
    c = cfg.wave_speed
    phi0 = cfg.azimuth_center
    down = x * math.cos(phi0) + y * math.sin(phi0)
    cross = y * math.cos(phi0) - x * math.sin(phi0)
    row = P / 2 + 2 * cfg.freq_step * down * P / c
    col = Q / 2 + 2 * cfg.center_frequency * cfg.azimuth_step * cross * Q / c
    return row - (P - H) // 2, col - (Q - W) // 2


def range_pixel_spacing(cfg: RadarConfig, out_size: tuple[int, int] = (128, 128)) -> float:
    """Metres of down-range per image row."""
    return cfg.wave_speed / (2 * cfg.freq_step * _next_pow2(out_size[0]))


def estimate_sc_parameters(
    rays: Sequence[RayContribution],
    surface_type: str,
    f: float,
    delta_phi: float,
    c: float = SPEED_OF_LIGHT,
) -> ScatteringCenter:
    """Extrapolate one scattering center from its ray bundle.

    Amplitude is the magnitude of the coherent ray sum, position the
    current-weighted mean reflection point. A bundle whose rays all share one
    phase class is distributed when its farthest reflection-point pair is at
    least the azimuth length threshold apart.
    """
    if len(rays) == 0:
        raise ValueError("empty ray bundle")
    if surface_type not in SURFACE_ALPHA:
        raise ValueError(f"unknown surface type {surface_type!r}; expected one of {sorted(SURFACE_ALPHA)}")
    fields = np.array([complex(r.field_value) for r in rays])
    points = np.array([r.reflection_point for r in rays], dtype=np.float64).reshape(len(rays), 3)
    weights = np.array([r.current_weight for r in rays], dtype=np.float64)
    if not (np.all(np.isfinite(fields)) and np.all(np.isfinite(points)) and np.all(np.isfinite(weights))):
        raise ValueError("non-finite ray data")
    total_weight = weights.sum()
    if total_weight <= 0:
        raise ValueError("ray current weights sum to zero")

    amplitude = float(abs(fields.sum()))
    position = (weights[:, None] * points).sum(axis=0) / total_weight

    length = 0.0
    orientation = 0.0
    if len({r.phase_class for r in rays}) == 1 and len(rays) > 1:
        diff = points[:, None, :] - points[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        i, j = np.unravel_index(np.argmax(dist), dist.shape)
        span = float(dist[i, j])
        if span >= azimuth_length_threshold(f, delta_phi, c):
            length = span
            # broadside aspect is normal to the edge direction
            edge_dir = math.atan2(points[j, 1] - points[i, 1], points[j, 0] - points[i, 0])
            orientation = _wrap_half_pi(edge_dir - math.pi / 2)

    return ScatteringCenter(
        amplitude=amplitude,
        length=length,
        freq_dependence=SURFACE_ALPHA[surface_type],
        orientation=orientation,
        x=float(position[0]),
        y=float(position[1]),
        z=float(position[2]),
    )


def _wrap_half_pi(a: float) -> float:
    """Wrap an undirected line angle into (-pi/2, pi/2]."""
    a = math.fmod(a, math.pi)
    if a <= -math.pi / 2:
        a += math.pi
    elif a > math.pi / 2:
        a -= math.pi
    return a


# Hull (length, width) in metres for the built-in vehicle-like classes.
_HULLS = [(6.8, 3.2), (5.2, 2.6), (7.6, 3.6), (4.6, 2.4), (6.0, 3.0),
          (8.2, 3.4), (5.6, 2.2), (7.0, 2.8), (4.8, 3.0), (6.4, 2.5)]


def generate_target_template(class_id: int, rng_seed: int = 0, jitter_spec: JitterSpec | None = None) -> TargetTemplate:
    """Built-in vehicle-like template for ``class_id``.

    Each class has its own hull size and ``7 + class_id`` centers: four hull
    corners, interior local centers and one distributed edge.
    """
    if not (0 <= class_id < N_BUILTIN_CLASSES):
        raise ValueError(f"unknown class_id {class_id}; built-in classes are 0..{N_BUILTIN_CLASSES - 1}")
    rng = np.random.default_rng([int(rng_seed), int(class_id)])
    hull_len, hull_wid = _HULLS[class_id]
    hx, hy = hull_len / 2, hull_wid / 2
    alphas = np.array([0.0, 0.5, 1.0])

    centers = []
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        centers.append(ScatteringCenter(
            amplitude=float(rng.uniform(0.6, 1.0)),
            freq_dependence=0.5,
            x=sx * hx, y=sy * hy, z=float(rng.uniform(0.2, 0.8)),
        ))
    for _ in range(2 + class_id):
        centers.append(ScatteringCenter(
            amplitude=float(rng.uniform(0.3, 1.2)),
            freq_dependence=float(rng.choice(alphas)),
            x=float(rng.uniform(-0.8, 0.8) * hx),
            y=float(rng.uniform(-0.8, 0.8) * hy),
            z=float(rng.uniform(0.5, 2.5)),
        ))
    # front plate edge, broadside to the nominal look direction
    centers.append(ScatteringCenter(
        amplitude=float(rng.uniform(0.8, 1.5)),
        length=float(np.clip(hull_wid * rng.uniform(0.5, 0.9), 0.6, None)),
        freq_dependence=1.0,
        orientation=0.0,
        x=-hx, y=0.0, z=float(rng.uniform(0.5, 1.5)),
    ))
    return TargetTemplate(class_id=class_id, base_centers=tuple(centers), jitter_spec=jitter_spec or JitterSpec())


def jitter_template(template: TargetTemplate, rng: np.random.Generator, jitter: JitterSpec | None = None) -> list[ScatteringCenter]:
    """Draw one instance: random pose rotation, dropout, and per-center noise."""
    js = jitter or template.jitter_spec
    theta = rng.uniform(-js.pose_range, js.pose_range)
    ct, st = math.cos(theta), math.sin(theta)
    base = list(template.base_centers)
    keep = rng.random(len(base)) >= js.dropout
    if keep.sum() < 3:
        keep[rng.choice(len(base), size=3, replace=False)] = True

    out = []
    for sc, kept in zip(base, keep):
        noise = rng.normal(size=5)
        if not kept:
            continue
        x = sc.x + js.position_sigma * noise[0]
        y = sc.y + js.position_sigma * noise[1]
        out.append(replace(
            sc,
            amplitude=sc.amplitude * math.exp(js.amplitude_sigma * noise[2]),
            orientation=sc.orientation + theta + js.orientation_sigma * noise[3],
            x=ct * x - st * y,
            y=st * x + ct * y,
            z=sc.z + js.position_sigma * noise[4],
        ))
    return out


def add_receiver_noise(E: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Complex white Gaussian noise at ``snr_db`` relative to the mean signal power."""
    power = float(np.mean(np.abs(E) ** 2))
    if power == 0 or not math.isfinite(snr_db):
        return E
    sigma = math.sqrt(power / 10 ** (snr_db / 10) / 2)
    return E + sigma * (rng.normal(size=E.shape) + 1j * rng.normal(size=E.shape))


def rays_from_center(sc: ScatteringCenter, n_rays: int, rng: np.random.Generator) -> list[RayContribution]:
    """Synthetic ray bundle consistent with ``sc`` (stand-in for ray tracing).

    Distributed centers get same-phase rays spread along the edge; local
    centers get rays with mixed phase classes around the point.
    """
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    center = np.array(sc.position)
    if sc.is_distributed:
        edge = sc.orientation + math.pi / 2
        t = np.linspace(-sc.length / 2, sc.length / 2, n_rays) if n_rays > 1 else np.zeros(1)
        pts = center + np.outer(t, [math.cos(edge), math.sin(edge), 0.0])
        classes = np.zeros(n_rays, dtype=int)
    else:
        pts = center + 0.01 * rng.normal(size=(n_rays, 3))
        classes = np.arange(n_rays)
    pts = pts - pts.mean(axis=0) + center
    return [
        RayContribution(field_value=complex(sc.amplitude / n_rays), reflection_point=tuple(p), current_weight=1.0, phase_class=int(c))
        for p, c in zip(pts, classes)
    ]

