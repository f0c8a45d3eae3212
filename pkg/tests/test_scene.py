import numpy as np
import pytest

from mdslab import scene
from mdslab.scene import (
    RadarConfig,
    Scatterer,
    Scene,
    TargetTrack,
    angle_to_bin,
    bin_to_angle,
    bin_to_velocity,
    derive_axes,
    range_to_bin,
    unambiguous_velocity,
    velocity_to_bin,
)


def single_target(r0=30.0, v=2.0, u=0.0, micro=(0.0, 0.0), noise=0.0, seed=0):
    return Scene(
        tracks=[TargetTrack(class_id=0, r0=r0, v_r=v, theta0=u,
                            scatterers=[Scatterer(0.0, 0.0, 1.0,
                                                  micro[0], micro[1])])],
        noise_sigma=noise, seed=seed)


def test_derived_quantities():
    cfg = RadarConfig()
    assert cfg.N_s == 256
    assert cfg.n_virtual == 8
    assert cfg.slope == pytest.approx(768e6 / 64e-6)
    offsets = cfg.slot_offsets
    assert offsets.shape == (2,)
    assert offsets[0] == 0.0
    assert offsets[1] == pytest.approx(cfg.T_r / 2)


def test_axis_trivial_values():
    axes = derive_axes(RadarConfig())
    assert axes.delta_theta == 2.0 / 128
    assert axes.delta_r * 256 == pytest.approx(axes.r_max, rel=1e-12)
    # v_max uses the printed T_c form; the physical limit uses T_r
    assert axes.v_max > unambiguous_velocity(RadarConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        RadarConfig(B=-1.0).validate()
    with pytest.raises(ValueError):
        RadarConfig(T_r=1e-6).validate()   # shorter than the chirp
    with pytest.raises(ValueError):
        RadarConfig(M_c=0).validate()


def test_bin_converters_round_trip():
    cfg = RadarConfig()
    for k in (0, 3, 63, 64, 120):
        v = bin_to_velocity(k, cfg)
        assert velocity_to_bin(v, cfg) == pytest.approx(k % cfg.M_c, abs=1e-9)
    for k in (0, 10, 100):
        u = bin_to_angle(k, cfg)
        assert angle_to_bin(u, cfg) == pytest.approx(k % cfg.N_theta, abs=1e-9)


def test_track_validation_bounds():
    cfg = RadarConfig()
    axes = derive_axes(cfg)
    bad_range = TargetTrack(0, axes.r_max + 1, 0.0, 0.0,
                            [Scatterer(0, 0, 1, 0, 0)])
    with pytest.raises(ValueError):
        bad_range.validate(cfg)
    fast = TargetTrack(0, 10.0, axes.v_max + 1, 0.0,
                       [Scatterer(0, 0, 1, 0, 0)])
    with pytest.raises(ValueError):
        fast.validate(cfg)
    with pytest.raises(ValueError):
        TargetTrack(0, 10.0, 0.0, 1.5, [Scatterer(0, 0, 1, 0, 0)]).validate(cfg)


def test_synth_shape_and_determinism():
    cfg = RadarConfig(F_s=1e6, M_c=16, K_frame=2)   # small cube, r_max ~12.5 m
    sc = single_target(r0=6.0, noise=0.3, seed=9)
    a = scene.synth_adc(cfg, sc)
    b = scene.synth_adc(cfg, sc)
    assert a.shape == (cfg.N_s, 16, 2, 4)
    assert np.array_equal(a, b)
    frames = scene.synth_frames(cfg, sc)
    assert frames.shape == (2, cfg.N_s, 16, 2, 4)
    # noise differs between frames but is reproducible per frame
    assert not np.array_equal(frames[0], frames[1])
    assert np.array_equal(frames[0], a)


def test_noise_statistics():
    cfg = RadarConfig(F_s=1e6, M_c=64)
    sc = Scene(tracks=[], noise_sigma=2.0, seed=4)
    cube = scene.synth_adc(cfg, sc)
    power = np.mean(np.abs(cube) ** 2)
    assert power == pytest.approx(4.0, rel=0.05)


def test_zero_micro_amp_is_constant_doppler():
    """With micro_amp = 0 the slow-time phase must be a pure linear ramp."""
    cfg = RadarConfig(F_s=1e6, M_c=32)
    t = np.arange(cfg.M_c) * cfg.T_r
    track = TargetTrack(0, 20.0, 3.0, 0.0, [Scatterer(0, 0, 1, 50.0, 0.0)])
    _, f_d, psi = scene._scatterer_phase_cycles(track, track.scatterers[0],
                                                t, cfg)
    lam = cfg.wavelength
    expected = 2.0 * 20.0 / lam + (2.0 * 3.0 / lam) * t
    assert np.allclose(psi, expected, rtol=0, atol=1e-6)
    assert np.allclose(f_d, 2.0 * 3.0 / lam)


def test_micro_motion_modulates_phase_derivative():
    cfg = RadarConfig()
    t = np.arange(4096) * cfg.T_r
    track = TargetTrack(0, 20.0, 1.0, 0.0, [Scatterer(0, 0, 1, 40.0, 2.0)])
    _, f_d, psi = scene._scatterer_phase_cycles(track, track.scatterers[0],
                                                t, cfg)
    dpsi = np.gradient(psi, cfg.T_r)
    # numerical derivative of the phase matches the instantaneous Doppler;
    # f_d crosses zero, so bound the error by the modulation scale
    assert np.allclose(dpsi[2:-2], f_d[2:-2], rtol=0,
                       atol=5e-3 * np.abs(f_d).max())
    spread = f_d.max() - f_d.min()
    assert spread == pytest.approx(2 * 2.0 * 2.0 / cfg.wavelength, rel=1e-3)


def test_scene_text_round_trip():
    sc = Scene(
        tracks=[
            TargetTrack(2, 21.5, -3.25, 0.125,
                        [Scatterer(0.5, 0.01, 1.5, 42.0, 1.25),
                         Scatterer(0.0, 0.0, 2.0, 0.0, 0.0)]),
            TargetTrack(0, 8.0, 1.0, -0.5, [Scatterer(0, 0, 1, 0, 0)]),
        ],
        noise_sigma=0.75, seed=12345)
    back = scene.scene_from_text(scene.scene_to_text(sc))
    assert back.seed == sc.seed
    assert back.noise_sigma == sc.noise_sigma
    assert len(back.tracks) == 2
    assert back.tracks[0].scatterers == sc.tracks[0].scatterers
    assert back.tracks[1].r0 == 8.0
    assert back.tracks[0].v_r == -3.25


def test_scene_text_rejects_garbage():
    with pytest.raises(ValueError):
        scene.scene_from_text("seed 3\n")
    with pytest.raises(ValueError):
        scene.scene_from_text("bogus.key = 1\n")


def test_sample_dataset_balance_and_validity():
    cfg = RadarConfig(M_c=16, K_frame=1)   # default F_s keeps r_max ~50 m
    templates = list(scene.DEFAULT_TEMPLATES.values())
    data = scene.sample_dataset(cfg, templates, 7, seed=3)
    labels = [cid for _, _, cid in data]
    counts = np.bincount(labels, minlength=3)
    assert counts.max() - counts.min() <= 1
    for sc, frames, _ in data:
        sc.validate(cfg)
        assert frames.shape[0] == cfg.K_frame
    # determinism
    again = scene.sample_dataset(cfg, templates, 7, seed=3)
    assert np.array_equal(data[0][1], again[0][1])


def test_sample_dataset_needs_enough_samples():
    cfg = RadarConfig(M_c=16, K_frame=1)
    with pytest.raises(ValueError):
        scene.sample_dataset(cfg, list(scene.DEFAULT_TEMPLATES.values()),
                             2, seed=0)
