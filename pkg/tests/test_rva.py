import numpy as np
import pytest

from mdslab import rva, scene
from mdslab.rva import (
    Centroid,
    PipelineParams,
    alpha_for_pfa,
    angle_of,
    angle_time_cube,
    ca_cfar,
    cfar_threshold,
    cfar_training_cells,
    cluster_centroids,
    crop_and_stack,
    doppler_process,
    group_detections,
    power_map,
    process_sample,
    range_fft,
    raised_cosine_window,
)
from mdslab.scene import RadarConfig, Scatterer, Scene, TargetTrack


def naive_dft(x, axis, n=None):
    """O(N^2) reference DFT along one axis."""
    x = np.moveaxis(np.asarray(x, dtype=complex), axis, -1)
    n_in = x.shape[-1]
    n = n_in if n is None else n
    if n > n_in:
        pad = np.zeros(x.shape[:-1] + (n - n_in,), dtype=complex)
        x = np.concatenate([x, pad], axis=-1)
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return np.moveaxis(x @ mat.T, -1, axis)


def small_cube(seed=0, shape=(32, 8, 2, 3)):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_window_formula():
    w = raised_cosine_window(8)
    n = np.arange(8)
    assert np.allclose(w, 0.5 * (1 - np.cos(2 * np.pi * n / 8)))
    assert w[0] == 0.0


def test_range_fft_constant_is_impulse():
    cube = np.ones((16, 4, 2, 2), dtype=complex)
    out = range_fft(cube, window=False).data
    assert out[0, 0, 0, 0] == pytest.approx(16)
    assert np.allclose(out[1:, :, :, :], 0.0, atol=1e-12)


def test_range_fft_matches_naive_dft():
    cube = small_cube()
    got = range_fft(cube).data
    expected = naive_dft(cube * raised_cosine_window(32)[:, None, None, None],
                         axis=0)
    assert np.allclose(got, expected, rtol=1e-9, atol=1e-9)


def test_range_fft_linearity():
    a, b = small_cube(1), small_cube(2)
    fa = range_fft(a, window=False).data
    fb = range_fft(b, window=False).data
    fab = range_fft(a + b, window=False).data
    scale = np.abs(fab).max()
    assert np.allclose(fab, fa + fb, rtol=0, atol=1e-10 * scale)


def test_doppler_process_stage_flags():
    cfg = RadarConfig(F_s=1e6, M_c=8)
    cube = small_cube(shape=(cfg.N_s, 8, 2, 4))
    rd = range_fft(cube)
    assert rd.stage == "range" and not rd.compensated
    out = doppler_process(rd, cfg)
    assert out.stage == "doppler" and out.compensated
    with pytest.raises(ValueError):
        doppler_process(out, cfg)   # cannot compensate twice
    with pytest.raises(ValueError):
        power_map(rd)               # needs a compensated cube


def test_doppler_compensation_phases():
    """Compensation must use the signed alias of the Doppler bin."""
    cfg = RadarConfig(M_c=8, N_tx=2, N_rx=1)
    data = np.ones((4, 8, 2, 1), dtype=complex)
    rd = rva.RdCube(data=data.copy(), stage="range")
    out = doppler_process(rd, cfg)
    spec = naive_dft(data, axis=1)
    k = np.arange(8)
    k_signed = np.where(k < 4, k, k - 8)
    for tx in range(2):
        phase = 2 * np.pi * k_signed / (8 * cfg.T_r) * cfg.slot_offsets[tx]
        expected = spec[:, :, tx, 0] * np.exp(1j * phase)[None, :]
        assert np.allclose(out.data[:, :, tx, 0], expected, atol=1e-9)


def test_power_map_sums_antennas():
    cfg = RadarConfig(F_s=1e6, M_c=8)
    cube = small_cube(shape=(cfg.N_s, 8, 2, 4))
    rd = doppler_process(range_fft(cube), cfg)
    p = power_map(rd)
    assert p.shape == (cfg.N_s, 8)
    assert np.allclose(p, (np.abs(rd.data) ** 2).sum(axis=(2, 3)))
    assert (p >= 0).all()


def test_cfar_threshold_flat_map_is_exact():
    """On a constant map every training mean equals the constant."""
    power = np.full((32, 32), 3.0)
    thr = cfar_threshold(power, train=4, guard=1, alpha=2.5)
    assert np.allclose(thr, 2.5 * 3.0, rtol=1e-12)


def test_cfar_interior_matches_direct_computation():
    rng = np.random.default_rng(3)
    power = rng.random((24, 24))
    train, guard = 3, 1
    thr = cfar_threshold(power, train, guard, alpha=1.0)
    w = train + guard
    r, v = 12, 13   # interior cell
    total = power[r - w:r + w + 1, v - w:v + w + 1].sum()
    inner = power[r - guard:r + guard + 1, v - guard:v + guard + 1].sum()
    n = (2 * w + 1) ** 2 - (2 * guard + 1) ** 2
    assert thr[r, v] == pytest.approx((total - inner) / n, rel=1e-12)
    assert n == cfar_training_cells(train, guard)


def test_cfar_doppler_axis_wraps_range_axis_clamps():
    power = np.zeros((16, 16))
    power[8, 0] = 100.0
    thr = cfar_threshold(power, train=2, guard=0, alpha=1.0)
    # the spike contributes to training cells across the Doppler wrap
    assert thr[8, 15] > 0
    # range direction: no wrap, so the top rows never see the spike
    assert thr[0, 0] == 0.0
    # edge rows average over fewer (clamped) training cells
    flat = np.ones((16, 16))
    thr_flat = cfar_threshold(flat, train=2, guard=0, alpha=1.0)
    assert np.allclose(thr_flat, 1.0, rtol=1e-12)


def test_ca_cfar_detects_spike():
    rng = np.random.default_rng(0)
    power = rng.exponential(1.0, size=(64, 64))
    power[30, 40] = 500.0
    alpha = alpha_for_pfa(1e-3, cfar_training_cells(4, 1))
    det = ca_cfar(power, (4, 1), alpha)
    assert (30, 40) in det.cells
    assert det.threshold.shape == power.shape


def test_alpha_for_pfa_formula():
    assert alpha_for_pfa(1e-3, 16) == pytest.approx(16 * (1e-3 ** (-1 / 16) - 1))
    with pytest.raises(ValueError):
        alpha_for_pfa(0.0, 16)
    with pytest.raises(ValueError):
        alpha_for_pfa(0.5, 0)


def test_group_detections_connectivity_and_wrap():
    power = np.zeros((10, 12))
    cells = [(2, 3), (2, 4), (3, 4),      # one diagonal-connected blob
             (7, 0), (7, 11),             # joined across the Doppler wrap
             (5, 7)]                      # singleton
    for c in cells:
        power[c] = 1.0
    power[2, 4] = 5.0                     # blob peak
    det = rva.DetectionSet(cells=cells, power=power,
                           threshold=np.zeros_like(power))
    groups = group_detections(det, wrap_doppler=12)
    assert len(groups) == 3
    by_peak = {g.peak: g for g in groups}
    assert (2, 4) in by_peak and len(by_peak[(2, 4)].cells) == 3
    wrap_group = [g for g in groups if (7, 0) in g.cells][0]
    assert (7, 11) in wrap_group.cells


def test_cluster_centroids_merge_and_rounding():
    # two detections within the gaps -> one centroid, power-weighted
    rva_list = [(10, 5, 20, 3.0), (11, 6, 22, 1.0)]
    cents = cluster_centroids(rva_list, gaps=(2, 2, 4))
    assert len(cents) == 1
    c = cents[0]
    # weighted means: r = (10*3+11)/4 = 10.25 -> 10; theta = 20.5 -> 21
    assert (c.k_r, c.k_v, c.k_theta) == (10, 5, 21)
    assert c.n_members == 2
    assert c.mean_power == pytest.approx(2.0)

    # beyond the gap on one axis -> separate clusters
    cents = cluster_centroids([(10, 5, 20, 1.0), (10, 5, 25, 1.0)],
                              gaps=(2, 2, 4))
    assert len(cents) == 2


def test_cluster_centroid_rounds_half_up():
    cents = cluster_centroids([(10, 4, 20, 1.0), (11, 5, 21, 1.0)])
    # means are 10.5, 4.5, 20.5 -> round half up -> 11, 5, 21
    assert (cents[0].k_r, cents[0].k_v, cents[0].k_theta) == (11, 5, 21)


def test_angle_of_steering_vector():
    """Steering snapshot peaks at u*N_theta/2 (u = 0.25 -> bin 16)."""
    cfg = RadarConfig()
    u = 0.25
    snapshot = np.exp(1j * np.pi * np.arange(8) * u)
    data = np.zeros((4, 4, 2, 4), dtype=complex)
    data[1, 2] = snapshot.reshape(2, 4)
    rd = rva.RdCube(data=data, stage="doppler", compensated=True)
    spec, k = angle_of(rd, (1, 2), 128, window=False)
    assert k == 16
    expected = naive_dft(snapshot, axis=0, n=128)
    assert np.allclose(spec, expected, rtol=1e-9, atol=1e-9)
    # windowing shifts energy but must keep the peak within a bin
    _, k_win = angle_of(rd, (1, 2), 128, window=True)
    assert abs(k_win - 16) <= 1


def test_angle_time_cube_matches_padded_fft():
    cfg = RadarConfig(F_s=1e6, M_c=8, N_theta=16)
    cube = small_cube(shape=(cfg.N_s, 8, 2, 4))
    rd = doppler_process(range_fft(cube), cfg)
    got = angle_time_cube(rd, 16)
    snap = rd.data.reshape(cfg.N_s, 8, 8) * raised_cosine_window(8)
    spec = naive_dft(snap, axis=2, n=16)
    expected = np.fft.ifft(spec, axis=1).transpose(0, 2, 1)
    assert got.shape == (cfg.N_s, 16, 8)
    assert np.allclose(got, expected, rtol=1e-9, atol=1e-9)


def test_crop_and_stack_zero_fill_at_edges():
    frames = [np.arange(4 * 5 * 3, dtype=complex).reshape(4, 5, 3)
              for _ in range(2)]
    c = Centroid(k_r=0, k_v=0, k_theta=0, n_members=1, mean_power=1.0)
    out = crop_and_stack(frames, c, n_res_s=3, n_res_theta=3, k_frame=2)
    assert out.shape == (3, 3, 6)
    # window starts at -1: first row/col zero-filled
    assert np.all(out[0, :, :] == 0)
    assert np.all(out[:, 0, :] == 0)
    assert out[1, 1, 0] == frames[0][0, 0, 0]
    assert out[1, 1, 3] == frames[1][0, 0, 0]


def test_crop_and_stack_interior():
    frames = [np.arange(8 * 8 * 4, dtype=complex).reshape(8, 8, 4)]
    c = Centroid(k_r=4, k_v=0, k_theta=4, n_members=1, mean_power=1.0)
    out = crop_and_stack(frames, c, n_res_s=4, n_res_theta=4, k_frame=1)
    assert np.array_equal(out, frames[0][2:6, 2:6, :])
    with pytest.raises(ValueError):
        crop_and_stack(frames, c, 4, 4, k_frame=2)


def test_process_sample_recovers_single_target():
    cfg = RadarConfig(K_frame=1)
    r0, v, u = 24.0, 3.0, -0.2
    sc = Scene(tracks=[TargetTrack(0, r0, v, u,
                                   [Scatterer(0, 0, 1.0, 0, 0)])])
    frames = scene.synth_frames(cfg, sc)
    det = process_sample(frames, cfg, PipelineParams())
    assert det.centroids
    best = max(det.centroids, key=lambda c: c.mean_power)
    assert abs(best.k_r - scene.range_to_bin(r0, cfg)) <= 1.0
    assert abs(best.k_v - scene.velocity_to_bin(v, cfg)) <= 1.0
    assert abs(best.k_theta - scene.angle_to_bin(u, cfg)) <= 1.0
    assert det.bboxes[0].shape == (8, 8, cfg.M_c * cfg.K_frame)
