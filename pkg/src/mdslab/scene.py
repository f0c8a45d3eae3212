"""Synthetic TDM-MIMO FMCW scenes: radar parameters, target tracks, ADC cubes.

The simulator produces dechirped complex baseband samples for multi-target
scenes. Each scatterer contributes a beat tone whose fast-time frequency
encodes range, whose slow-time phase encodes radial motion (including
sinusoidal micro-motion), and whose per-antenna phase encodes azimuth on
the virtual uniform linear array. Transmitters fire in staggered time
slots; the slot offset enters the slow-time phase exactly as the
range-Doppler stage later compensates it.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact SI value


@dataclass(frozen=True)
class RadarConfig:
    """Waveform and array parameters of the TDM-MIMO FMCW radar.

    Defaults are the desk-scale configuration: every tensor in the
    pipeline stays well under 100 MB.
    """

    f_c: float = 77e9      # carrier frequency (Hz)
    B: float = 768e6       # sweep bandwidth (Hz)
    T_c: float = 64e-6     # chirp duration (s)
    F_s: float = 4e6       # ADC sample rate (Hz)
    T_r: float = 72e-6     # chirp repetition interval (s)
    M_c: int = 128         # chirps per frame
    N_tx: int = 2          # transmit antennas
    N_rx: int = 4          # receive antennas
    N_theta: int = 128     # angle FFT size
    K_frame: int = 4       # frames per sample

    @property
    def slope(self) -> float:
        """Chirp slope S = B / T_c (Hz/s)."""
        return self.B / self.T_c

    @property
    def N_s(self) -> int:
        """Fast-time samples per chirp."""
        return int(round(self.T_c * self.F_s))

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def n_virtual(self) -> int:
        """Virtual array size: one element per (tx, rx) pair."""
        return self.N_tx * self.N_rx

    @property
    def slot_offsets(self) -> np.ndarray:
        """Per-TX slow-time slot offsets, strictly increasing in [0, T_r)."""
        return np.arange(self.N_tx) * self.T_r / self.N_tx

    def validate(self) -> None:
        if self.f_c <= 0 or self.B <= 0 or self.T_c <= 0 or self.F_s <= 0:
            raise ValueError("waveform parameters must be positive")
        if self.slope <= 0:
            raise ValueError("chirp slope must be positive")
        if self.T_r < self.T_c:
            raise ValueError(f"T_r ({self.T_r}) must be >= T_c ({self.T_c})")
        for name in ("M_c", "N_tx", "N_rx", "N_theta", "K_frame"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.N_s < 1:
            raise ValueError("T_c * F_s must give at least one sample per chirp")
        if abs(self.slope * self.T_c - self.B) > 1e-9 * self.B:
            raise ValueError("slope inconsistent with bandwidth")


@dataclass(frozen=True)
class AxisSpec:
    """Closed-form axis resolutions and unambiguous limits."""

    delta_r: float       # range resolution (m)
    r_max: float         # maximum beat-mapped range (m)
    delta_v: float       # velocity resolution (m/s)
    v_max: float         # unambiguous velocity limit (m/s)
    delta_theta: float   # angle-grid spacing in sin(azimuth) units


def derive_axes(config: RadarConfig) -> AxisSpec:
    """Evaluate the closed-form resolution constraints for a configuration.

    delta_r = c*F_s / (2*S*N_s), r_max = c*F_s / (2*S),
    delta_v = lambda / (2*T_c*M_c), v_max = lambda / (4*T_c),
    delta_theta = 2 / N_theta.

    Note v_max is quoted with the chirp duration T_c; when T_r > T_c the
    Doppler axis only resolves |v| < lambda/(4*T_r). See bin_to_velocity.
    """
    config.validate()
    if config.slope <= 0:
        raise ValueError("slope must be positive")
    if config.M_c < 1:
        raise ValueError("M_c must be >= 1")
    c = SPEED_OF_LIGHT
    lam = config.wavelength
    return AxisSpec(
        delta_r=c * config.F_s / (2.0 * config.slope * config.N_s),
        r_max=c * config.F_s / (2.0 * config.slope),
        delta_v=lam / (2.0 * config.T_c * config.M_c),
        v_max=lam / (4.0 * config.T_c),
        delta_theta=2.0 / config.N_theta,
    )


def unambiguous_velocity(config: RadarConfig) -> float:
    """Velocity magnitude the slow-time sampling can represent: lambda/(4*T_r)."""
    return config.wavelength / (4.0 * config.T_r)


def range_to_bin(r: float, config: RadarConfig) -> float:
    """Fractional range bin for a target at range r."""
    return 2.0 * r * config.slope * config.N_s / (SPEED_OF_LIGHT * config.F_s)


def velocity_to_bin(v: float, config: RadarConfig) -> float:
    """Fractional Doppler bin (natural FFT order, mod M_c) for velocity v."""
    f_d = 2.0 * v / config.wavelength
    return (f_d * config.M_c * config.T_r) % config.M_c


def angle_to_bin(u: float, config: RadarConfig) -> float:
    """Fractional angle bin (natural FFT order, mod N_theta) for sin-azimuth u."""
    return (u * config.N_theta / 2.0) % config.N_theta


def bin_to_velocity(k_v: int, config: RadarConfig) -> float:
    """Signed velocity of a natural-order Doppler bin (principal alias)."""
    k = k_v if k_v < config.M_c / 2 else k_v - config.M_c
    return k * config.wavelength / (2.0 * config.M_c * config.T_r)


def bin_to_angle(k_theta: int, config: RadarConfig) -> float:
    """Signed sin-azimuth of a natural-order angle bin (principal alias)."""
    k = k_theta if k_theta < config.N_theta / 2 else k_theta - config.N_theta
    return 2.0 * k / config.N_theta


class Scatterer(NamedTuple):
    """One point scatterer of a track.

    Micro-motion adds micro_amp*sin(2*pi*micro_freq*t_slow) to the radial
    velocity; the slow-time phase integrates it, so micro_amp=0 reduces to
    a constant Doppler ramp exactly.
    """

    range_offset: float   # m, relative to the track range
    angle_offset: float   # sin-azimuth units, relative to the track angle
    amplitude: float      # linear amplitude (array gains folded in)
    micro_freq: float     # Hz
    micro_amp: float      # m/s peak velocity modulation


@dataclass
class TargetTrack:
    """A labeled target: bulk kinematics plus micro-motion scatterers."""

    class_id: int
    r0: float          # m
    v_r: float         # m/s, radial velocity (positive = receding)
    theta0: float      # sin-azimuth
    scatterers: list[Scatterer] = field(default_factory=list)

    def __post_init__(self):
        self.scatterers = [Scatterer(*s) for s in self.scatterers]

    def validate(self, config: RadarConfig, index: int = 0) -> None:
        axes = derive_axes(config)
        if not (0.0 < self.r0 < axes.r_max):
            raise ValueError(
                f"track {index}: r0={self.r0} outside (0, {axes.r_max:.2f})")
        worst_micro = max((s.micro_amp for s in self.scatterers), default=0.0)
        if abs(self.v_r) + worst_micro >= axes.v_max:
            raise ValueError(
                f"track {index}: |v_r|+micro_amp={abs(self.v_r) + worst_micro} "
                f"exceeds v_max={axes.v_max:.2f}")
        if not -1.0 <= self.theta0 <= 1.0:
            raise ValueError(f"track {index}: theta0 must be a sine in [-1, 1]")
        for s in self.scatterers:
            if s.amplitude <= 0:
                raise ValueError(f"track {index}: scatterer amplitudes must be > 0")
            if s.micro_freq < 0 or s.micro_amp < 0:
                raise ValueError(f"track {index}: micro parameters must be >= 0")


@dataclass
class Scene:
    """A multi-target scene with i.i.d. circular complex noise."""

    tracks: list[TargetTrack] = field(default_factory=list)
    noise_sigma: float = 0.0   # std of the complex noise, E|w|^2 = sigma^2
    seed: int = 0

    def validate(self, config: RadarConfig) -> None:
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for i, track in enumerate(self.tracks):
            track.validate(config, index=i)


def _scatterer_phase_cycles(track: TargetTrack, scat: Scatterer,
                            t_slow: np.ndarray, config: RadarConfig):
    """Per-chirp range, Doppler frequency and slow-time phase (in cycles).

    The slow-time phase is the carrier round-trip phase 2*r(t)/lambda with
    r(t) integrating the radial velocity, so its derivative is exactly the
    instantaneous Doppler frequency.
    """
    lam = config.wavelength
    r0 = track.r0 + scat.range_offset
    if scat.micro_freq > 0.0 and scat.micro_amp > 0.0:
        omega = 2.0 * np.pi * scat.micro_freq
        disp = scat.micro_amp / omega * (1.0 - np.cos(omega * t_slow))
        v = track.v_r + scat.micro_amp * np.sin(omega * t_slow)
    else:
        disp = 0.0
        v = np.full_like(t_slow, track.v_r)
    r = r0 + track.v_r * t_slow + disp
    f_d = 2.0 * v / lam
    phase_cycles = 2.0 * r / lam
    return r, f_d, phase_cycles


def synth_adc(config: RadarConfig, scene: Scene, frame: int = 0) -> np.ndarray:
    """Synthesize one frame of dechirped ADC data.

    Returns a complex128 cube of shape [N_s, M_c, N_tx, N_rx]. Slow time is
    continuous across frames: chirp m_c of frame f occurs at
    t = (f*M_c + m_c)*T_r, so micro-motion phase carries over between
    frames. Output is bit-identical for identical (config, scene, frame).
    """
    config.validate()
    scene.validate(config)
    n_s = np.arange(config.N_s)
    m_c = np.arange(config.M_c)
    t_slow = (frame * config.M_c + m_c) * config.T_r
    t_fast = n_s / config.F_s
    slot = config.slot_offsets                      # [N_tx]
    n_a = (np.arange(config.N_tx)[:, None] * config.N_rx
           + np.arange(config.N_rx)[None, :])       # [N_tx, N_rx] virtual index

    out = np.zeros((config.N_s, config.M_c, config.N_tx, config.N_rx),
                   dtype=np.complex128)
    for track in scene.tracks:
        for scat in track.scatterers:
            r, f_d, psi = _scatterer_phase_cycles(track, scat, t_slow, config)
            tau = 2.0 * r / SPEED_OF_LIGHT               # [M_c]
            beat = config.slope * tau + f_d              # [M_c]
            u = track.theta0 + scat.angle_offset
            # phase in cycles: fast-time beat + slow-time carrier ramp
            # - TDM slot term + virtual-array steering (n_a * u / 2)
            fast = t_fast[:, None] * beat[None, :]                    # [N_s, M_c]
            slow = psi[None, :, None] - f_d[None, :, None] * slot     # [1, M_c, N_tx]
            steer = 0.5 * n_a * u                                     # [N_tx, N_rx]
            cycles = (fast[:, :, None, None]
                      + slow[:, :, :, None]
                      + steer[None, None, :, :])
            out += scat.amplitude * np.exp(2j * np.pi * cycles)

    if scene.noise_sigma > 0.0:
        rng = np.random.default_rng(
            np.random.SeedSequence(scene.seed, spawn_key=(frame,)))
        scale = scene.noise_sigma / np.sqrt(2.0)
        out += scale * (rng.standard_normal(out.shape)
                        + 1j * rng.standard_normal(out.shape))
    return out


def synth_frames(config: RadarConfig, scene: Scene) -> np.ndarray:
    """All K_frame frames of a scene, shape [K_frame, N_s, M_c, N_tx, N_rx]."""
    return np.stack([synth_adc(config, scene, frame=f)
                     for f in range(config.K_frame)])


@dataclass(frozen=True)
class ClassTemplate:
    """Per-class parameter distributions for dataset sampling.

    Ranges are (low, high) bounds sampled uniformly. body_* fields describe
    the bulk scatterer, limb_* fields the micro-moving scatterers that give
    the class its spectral signature.
    """

    name: str
    r_range: tuple[float, float]
    v_range: tuple[float, float]
    theta_range: tuple[float, float]
    n_limbs: tuple[int, int]              # inclusive range of limb scatterers
    body_amp: tuple[float, float]
    body_micro_amp: tuple[float, float]
    body_micro_freq: tuple[float, float]
    limb_amp: tuple[float, float]
    limb_micro_amp: tuple[float, float]
    limb_micro_freq: tuple[float, float]
    range_spread: float = 1.0             # m, limb range offsets in +-spread
    angle_spread: float = 0.01            # sin units
    noise_sigma: float = 0.5


# Micro-motion frequencies are scaled up from real-world gaits so several
# modulation cycles fit inside the short desk-scale observation window
# (M_c*K_frame*T_r ~ 37 ms at defaults).
DEFAULT_TEMPLATES: dict[str, ClassTemplate] = {
    "car": ClassTemplate(
        name="car",
        r_range=(8.0, 42.0), v_range=(6.0, 11.5), theta_range=(-0.55, 0.55),
        n_limbs=(2, 3),
        body_amp=(1.2, 2.0), body_micro_amp=(0.0, 0.05), body_micro_freq=(3.0, 8.0),
        limb_amp=(0.6, 1.0), limb_micro_amp=(0.02, 0.12), limb_micro_freq=(3.0, 9.0),
        range_spread=2.0, angle_spread=0.015,
    ),
    "pedestrian": ClassTemplate(
        name="pedestrian",
        r_range=(8.0, 42.0), v_range=(0.6, 1.9), theta_range=(-0.55, 0.55),
        n_limbs=(3, 4),
        body_amp=(0.8, 1.3), body_micro_amp=(0.15, 0.4), body_micro_freq=(40.0, 70.0),
        limb_amp=(0.35, 0.7), limb_micro_amp=(1.6, 3.0), limb_micro_freq=(40.0, 90.0),
        range_spread=0.4, angle_spread=0.005,
    ),
    "cyclist": ClassTemplate(
        name="cyclist",
        r_range=(8.0, 42.0), v_range=(2.8, 5.5), theta_range=(-0.55, 0.55),
        n_limbs=(2, 3),
        body_amp=(1.0, 1.5), body_micro_amp=(0.05, 0.2), body_micro_freq=(10.0, 20.0),
        limb_amp=(0.4, 0.8), limb_micro_amp=(0.6, 1.2), limb_micro_freq=(12.0, 35.0),
        range_spread=0.8, angle_spread=0.008,
    ),
}


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def sample_scene(template: ClassTemplate, class_id: int,
                 config: RadarConfig, rng: np.random.Generator,
                 seed: int) -> Scene:
    """Draw one single-target scene from a class template.

    Template bounds are clipped to the usable part of the configured axes
    so one template works across radar geometries: velocity is capped at
    0.9x the unambiguous velocity, and the range draw keeps the whole
    scatterer spread below 0.9x the maximum range.
    """
    axes = derive_axes(config)
    v_cap = 0.9 * unambiguous_velocity(config)
    v = min(_uniform(rng, template.v_range), v_cap)
    scatterers = [Scatterer(
        range_offset=0.0,
        angle_offset=0.0,
        amplitude=_uniform(rng, template.body_amp),
        micro_freq=_uniform(rng, template.body_micro_freq),
        micro_amp=_uniform(rng, template.body_micro_amp),
    )]
    n_limbs = int(rng.integers(template.n_limbs[0], template.n_limbs[1] + 1))
    for _ in range(n_limbs):
        scatterers.append(Scatterer(
            range_offset=float(rng.uniform(-template.range_spread,
                                           template.range_spread)),
            angle_offset=float(rng.uniform(-template.angle_spread,
                                           template.angle_spread)),
            amplitude=_uniform(rng, template.limb_amp),
            micro_freq=_uniform(rng, template.limb_micro_freq),
            micro_amp=_uniform(rng, template.limb_micro_amp),
        ))
    r_lo, r_hi = template.r_range
    r_hi = min(r_hi, 0.9 * axes.r_max - template.range_spread)
    if r_lo >= r_hi:
        r_lo = max(0.3 * r_hi, template.range_spread)
    if not 0 < r_lo < r_hi:
        raise ValueError(
            f"range axis (r_max = {axes.r_max:.2f} m) too short for "
            f"template {template.name!r}")
    track = TargetTrack(
        class_id=class_id,
        r0=float(rng.uniform(r_lo, r_hi)),
        v_r=v,
        theta0=_uniform(rng, template.theta_range),
        scatterers=scatterers,
    )
    return Scene(tracks=[track], noise_sigma=template.noise_sigma, seed=seed)


def sample_dataset(config: RadarConfig,
                   class_templates: list[ClassTemplate],
                   n_samples: int,
                   seed: int) -> list[tuple[Scene, np.ndarray, int]]:
    """Generate a class-balanced labeled dataset of multi-frame ADC cubes.

    Classes are assigned round-robin so per-class counts differ by at most
    one. All randomness derives from `seed`: scene parameters come from a
    single master generator, and each scene receives its own noise seed
    drawn from it. Returns [(scene, frames, class_id)] with frames of shape
    [K_frame, N_s, M_c, N_tx, N_rx].
    """
    k_tar = len(class_templates)
    if k_tar < 1:
        raise ValueError("need at least one class template")
    if n_samples < k_tar:
        raise ValueError(f"n_samples={n_samples} < number of classes {k_tar}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_samples):
        class_id = i % k_tar
        scene_seed = int(rng.integers(0, 2**63 - 1))
        scene = sample_scene(class_templates[class_id], class_id, config,
                             rng, scene_seed)
        out.append((scene, synth_frames(config, scene), class_id))
    return out


# --- plain-text scene serialization (one key per line, lists bracketed) ---

def scene_to_text(scene: Scene) -> str:
    lines = [f"seed = {scene.seed}", f"noise_sigma = {scene.noise_sigma!r}"]
    for i, t in enumerate(scene.tracks):
        p = f"track.{i}"
        lines.append(f"{p}.class_id = {t.class_id}")
        lines.append(f"{p}.r0 = {t.r0!r}")
        lines.append(f"{p}.v_r = {t.v_r!r}")
        lines.append(f"{p}.theta0 = {t.theta0!r}")
        scat = ", ".join(repr(tuple(s)) for s in t.scatterers)
        lines.append(f"{p}.scatterers = [{scat}]")
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> Scene:
    kv: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed scene line: {raw!r}")
        key, value = line.split("=", 1)
        kv[key.strip()] = value.strip()
    scene = Scene(seed=int(kv.pop("seed", "0")),
                  noise_sigma=float(kv.pop("noise_sigma", "0.0")))
    tracks: dict[int, dict[str, str]] = {}
    for key, value in kv.items():
        parts = key.split(".")
        if len(parts) != 3 or parts[0] != "track":
            raise ValueError(f"unknown scene key: {key}")
        tracks.setdefault(int(parts[1]), {})[parts[2]] = value
    for i in sorted(tracks):
        fields_ = tracks[i]
        scat = [Scatterer(*map(float, tup))
                for tup in ast.literal_eval(fields_["scatterers"])]
        scene.tracks.append(TargetTrack(
            class_id=int(fields_["class_id"]),
            r0=float(fields_["r0"]),
            v_r=float(fields_["v_r"]),
            theta0=float(fields_["theta0"]),
            scatterers=scat,
        ))
    return scene
