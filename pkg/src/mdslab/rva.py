"""Range-velocity-angle processing: FFT chain, CFAR detection, clustering.

Stages are pure functions over complex cubes indexed
[range bin, Doppler bin, tx, rx]. Doppler bins are kept in natural FFT
order throughout; the Doppler axis is circular (wraps), the range axis is
not (clamps).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import RadarConfig


def raised_cosine_window(n: int) -> np.ndarray:
    """w[k] = 0.5*(1 - cos(2*pi*k/n)) for k = 0..n-1 (periodic variant)."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass
class RdCube:
    """FFT-domain cube [N_s, M_c, N_tx, N_rx] plus processing stage flags."""

    data: np.ndarray
    stage: str = "range"          # "range" after fast-time FFT, "doppler" after slow-time FFT
    compensated: bool = False     # TDM slot phase removed

    @property
    def shape(self):
        return self.data.shape


def range_fft(cube: np.ndarray, window: bool = True) -> RdCube:
    """Windowed DFT over fast time (axis 0) for every (chirp, tx, rx).

    Args:
        cube: complex [N_s, M_c, N_tx, N_rx] ADC frame.
        window: apply the raised-cosine window before the transform.
    """
    cube = np.asarray(cube)
    if cube.ndim != 4:
        raise ValueError(f"expected a 4-D ADC cube, got shape {cube.shape}")
    n_s = cube.shape[0]
    if window:
        cube = cube * raised_cosine_window(n_s)[:, None, None, None]
    return RdCube(data=np.fft.fft(cube, axis=0), stage="range")


def doppler_process(rd: RdCube, config: RadarConfig) -> RdCube:
    """Slow-time DFT followed by TDM slot-phase compensation.

    Bin (k_r, k_v, tx, rx) is multiplied by exp(j*2*pi*f_v*slot_tx) where
    f_v is the Doppler frequency of bin k_v. The principal (signed) alias
    of k_v is used: for k_v >= M_c/2 the bin represents a negative
    frequency, and using the raw index would leave a residual of
    2*pi*(n_tx-1)/N_tx on the slow-time phase of the later transmitters,
    corrupting the virtual-array phase for receding targets.
    """
    if rd.stage != "range":
        raise ValueError(f"doppler_process expects a range-stage cube, got {rd.stage!r}")
    if rd.compensated:
        raise ValueError("cube is already compensated")
    m_c = rd.data.shape[1]
    if m_c != config.M_c:
        raise ValueError(f"cube has {m_c} chirps, config says {config.M_c}")
    spec = np.fft.fft(rd.data, axis=1)
    k_v = np.arange(m_c)
    k_signed = np.where(k_v < m_c / 2, k_v, k_v - m_c)
    f_v = k_signed / (m_c * config.T_r)                        # [M_c]
    phase = 2.0 * np.pi * f_v[:, None] * config.slot_offsets[None, :]
    spec = spec * np.exp(1j * phase)[None, :, :, None]
    return RdCube(data=spec, stage="doppler", compensated=True)


def power_map(rd: RdCube) -> np.ndarray:
    """Total power over antenna pairs: P[k_r, k_v] = sum |Y|^2 over (tx, rx)."""
    if not rd.compensated:
        raise ValueError("power_map expects a compensated range-Doppler cube")
    return np.sum(np.abs(rd.data) ** 2, axis=(2, 3))


@dataclass
class DetectionSet:
    """CFAR hits with the threshold map that produced them."""

    cells: list[tuple[int, int]]
    power: np.ndarray
    threshold: np.ndarray

    def __len__(self):
        return len(self.cells)


def _box_sum(padded: np.ndarray, half: int, pad: int) -> np.ndarray:
    """Sliding-window sums over (2*half+1)^2 boxes via an integral image.

    `padded` must be padded by `pad` >= half on both axes; the result has
    the unpadded shape.
    """
    s = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    s[1:, 1:] = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    n0 = padded.shape[0] - 2 * pad
    n1 = padded.shape[1] - 2 * pad
    lo = pad - half
    hi = pad + half + 1
    return (s[hi:hi + n0, hi:hi + n1]
            - s[lo:lo + n0, hi:hi + n1]
            - s[hi:hi + n0, lo:lo + n1]
            + s[lo:lo + n0, lo:lo + n1])


def cfar_threshold(power: np.ndarray, train: int, guard: int,
                   alpha: float) -> np.ndarray:
    """Cell-averaging threshold map alpha * mean(training ring).

    The training ring is the (2*(train+guard)+1)^2 window minus the inner
    (2*guard+1)^2 guard block (which includes the cell under test). The
    Doppler axis (axis 1) wraps; the range axis (axis 0) clamps, i.e.
    out-of-map cells are excluded from the average.
    """
    if train < 1:
        raise ValueError("train half-width must be >= 1")
    if guard < 0:
        raise ValueError("guard half-width must be >= 0")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    w = train + guard
    n_r, n_v = power.shape
    if 2 * w + 1 > n_v or 2 * w + 1 > n_r:
        raise ValueError(
            f"CFAR window {2 * w + 1} exceeds map shape {power.shape}")
    padded = np.pad(power, ((0, 0), (w, w)), mode="wrap")
    padded = np.pad(padded, ((w, w), (0, 0)), mode="constant")
    valid = np.pad(np.ones_like(power), ((0, 0), (w, w)), mode="wrap")
    valid = np.pad(valid, ((w, w), (0, 0)), mode="constant")

    outer = _box_sum(padded, w, w)
    inner = _box_sum(padded, guard, w)
    n_outer = _box_sum(valid, w, w)
    n_inner = _box_sum(valid, guard, w)
    train_sum = outer - inner
    n_train = n_outer - n_inner
    return alpha * train_sum / n_train


def ca_cfar(power: np.ndarray, win: tuple[int, int], alpha: float) -> DetectionSet:
    """2-D cell-averaging CFAR. `win` = (train, guard) half-widths."""
    train, guard = win
    thresh = cfar_threshold(power, train, guard, alpha)
    hits = power > thresh
    cells = [(int(r), int(v)) for r, v in zip(*np.nonzero(hits))]
    return DetectionSet(cells=cells, power=power, threshold=thresh)


def alpha_for_pfa(pfa: float, n_cells: int) -> float:
    """Classical CA-CFAR factor: alpha = N * (Pfa^(-1/N) - 1).

    Exact for i.i.d. exponentially distributed cell powers.
    """
    if not 0.0 < pfa < 1.0:
        raise ValueError("pfa must be in (0, 1)")
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    return n_cells * (pfa ** (-1.0 / n_cells) - 1.0)


def cfar_training_cells(train: int, guard: int) -> int:
    """Training-ring size of the full (interior) CFAR window."""
    w = train + guard
    return (2 * w + 1) ** 2 - (2 * guard + 1) ** 2


@dataclass
class DetectionGroup:
    """One 8-connected component of detections, led by its strongest cell."""

    peak: tuple[int, int]
    peak_power: float
    cells: list[tuple[int, int]]


def group_detections(det: DetectionSet,
                     wrap_doppler: int | None = None) -> list[DetectionGroup]:
    """8-connected components over (k_r, k_v) detection cells.

    With `wrap_doppler` set to the Doppler axis length, adjacency wraps
    around that axis (it is circular). Groups are sorted by peak cell.
    """
    if wrap_doppler is None:
        wrap_doppler = det.power.shape[1]
    remaining = set(det.cells)
    groups = []
    offsets = [(dr, dv) for dr in (-1, 0, 1) for dv in (-1, 0, 1)
               if (dr, dv) != (0, 0)]
    for start in sorted(det.cells):
        if start not in remaining:
            continue
        stack = [start]
        remaining.discard(start)
        members = []
        while stack:
            cell = stack.pop()
            members.append(cell)
            r, v = cell
            for dr, dv in offsets:
                nb = (r + dr, (v + dv) % wrap_doppler)
                if nb in remaining:
                    remaining.discard(nb)
                    stack.append(nb)
        peak = max(members, key=lambda c: (det.power[c], (-c[0], -c[1])))
        groups.append(DetectionGroup(peak=peak,
                                     peak_power=float(det.power[peak]),
                                     cells=sorted(members)))
    groups.sort(key=lambda g: g.peak)
    return groups


def angle_of(rd: RdCube, cell: tuple[int, int], n_theta: int,
             window: bool = True) -> tuple[np.ndarray, int]:
    """Angle spectrum of one range-Doppler cell over the virtual array.

    The snapshot is the tx-major flattening of the compensated cube at the
    cell, windowed across its N_tx*N_rx elements and zero-padded to an
    n_theta-point DFT. Returns (spectrum, argmax bin).
    """
    if not rd.compensated:
        raise ValueError("angle_of expects a compensated range-Doppler cube")
    k_r, k_v = cell
    n_r, n_v = rd.data.shape[:2]
    if not (0 <= k_r < n_r and 0 <= k_v < n_v):
        raise ValueError(f"cell {cell} outside map {(n_r, n_v)}")
    snapshot = rd.data[k_r, k_v].reshape(-1)      # tx-major by C order
    if window:
        snapshot = snapshot * raised_cosine_window(snapshot.size)
    spectrum = np.fft.fft(snapshot, n=n_theta)
    return spectrum, int(np.argmax(np.abs(spectrum)))


@dataclass
class Centroid:
    """Clustered target: power-weighted mean bins of merged detections."""

    k_r: int
    k_v: int
    k_theta: int
    n_members: int
    mean_power: float


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def cluster_centroids(rva: list[tuple[int, int, int, float]],
                      gaps: tuple[int, int, int] = (2, 2, 4)) -> list[Centroid]:
    """Single-linkage agglomerative merge of (k_r, k_v, k_theta, power) triples.

    Two detections join the same cluster when each axis gap is within the
    corresponding threshold. Centroid bins are the power-weighted means,
    rounded half-up. Output is sorted by (k_r, k_v, k_theta).
    """
    n = len(rva)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if all(abs(rva[i][a] - rva[j][a]) <= gaps[a] for a in range(3)):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)

    out = []
    for members in clusters.values():
        weights = np.array([rva[i][3] for i in members], dtype=float)
        total = weights.sum()
        if total <= 0:
            weights = np.ones_like(weights)
            total = weights.sum()
        bins = [
            _round_half_up(sum(rva[i][a] * w for i, w in zip(members, weights))
                           / total)
            for a in range(3)
        ]
        out.append(Centroid(k_r=bins[0], k_v=bins[1], k_theta=bins[2],
                            n_members=len(members),
                            mean_power=float(np.mean([rva[i][3] for i in members]))))
    out.sort(key=lambda c: (c.k_r, c.k_v, c.k_theta))
    return out


def angle_dft_matrix(n_virtual: int, n_theta: int,
                     window: bool = True) -> np.ndarray:
    """[n_virtual, n_theta] matrix of the (windowed) zero-padded angle DFT.

    Right-multiplying a virtual-array snapshot by this matrix equals
    np.fft.fft(window * snapshot, n=n_theta); with only a handful of
    array elements the dense product is much cheaper than a padded FFT.
    """
    n_a = np.arange(n_virtual)[:, None]
    k = np.arange(n_theta)[None, :]
    dft = np.exp(-2j * np.pi * n_a * k / n_theta)
    if window:
        dft = raised_cosine_window(n_virtual)[:, None] * dft
    return dft


def angle_time_cube(rd: RdCube, n_theta: int, window: bool = True) -> np.ndarray:
    """Full range-angle-time cube [N_s, N_theta, M_c].

    Applies the windowed angle DFT across the virtual array for every
    (k_r, k_v) cell of the compensated cube, then an inverse DFT over the
    Doppler axis to recover the (compensated) slow-time sequence per
    (range, angle) cell. Transient memory is N_s*N_theta*M_c complex.
    """
    if not rd.compensated:
        raise ValueError("angle_time_cube expects a compensated cube")
    n_s, m_c = rd.data.shape[:2]
    snap = rd.data.reshape(n_s, m_c, -1)          # tx-major virtual axis
    slow = np.fft.ifft(snap, axis=1)              # back to slow time first
    cube = slow @ angle_dft_matrix(snap.shape[2], n_theta, window=window)
    return cube.transpose(0, 2, 1)                # [N_s, N_theta, M_c]


def crop_and_stack(frames, centroid: Centroid, n_res_s: int, n_res_theta: int,
                   k_frame: int) -> np.ndarray:
    """Crop a (range, angle) window around a centroid and concatenate frames.

    Args:
        frames: sequence of K_frame cubes [N_s, N_theta, M_c].
        centroid: window center; the window starts at bin - n_res//2 per axis.
        n_res_s, n_res_theta: crop sizes (1 <= n_res <= axis length).
        k_frame: expected number of frames.

    The window is clamped at the map edges with zero fill. Output shape is
    [n_res_s, n_res_theta, M_c * k_frame].
    """
    frames = list(frames)
    if len(frames) != k_frame:
        raise ValueError(f"expected {k_frame} frames, got {len(frames)}")
    n_s, n_theta, m_c = frames[0].shape
    if not (1 <= n_res_s <= n_s and 1 <= n_res_theta <= n_theta):
        raise ValueError("crop size must be within the axis lengths")
    out = np.zeros((n_res_s, n_res_theta, m_c * k_frame), dtype=np.complex128)
    r0 = centroid.k_r - n_res_s // 2
    t0 = centroid.k_theta - n_res_theta // 2
    src_r = slice(max(r0, 0), min(r0 + n_res_s, n_s))
    src_t = slice(max(t0, 0), min(t0 + n_res_theta, n_theta))
    dst_r = slice(src_r.start - r0, src_r.stop - r0)
    dst_t = slice(src_t.start - t0, src_t.stop - t0)
    if src_r.start < src_r.stop and src_t.start < src_t.stop:
        for f, frame in enumerate(frames):
            if frame.shape != (n_s, n_theta, m_c):
                raise ValueError("all frames must share one shape")
            out[dst_r, dst_t, f * m_c:(f + 1) * m_c] = frame[src_r, src_t]
    return out


@dataclass
class PipelineParams:
    """Detection and cropping parameters for the full per-sample chain."""

    cfar_train: int = 8
    cfar_guard: int = 2
    pfa: float = 1e-3
    cluster_gaps: tuple[int, int, int] = (2, 2, 4)
    n_res_s: int = 8
    n_res_theta: int = 8


@dataclass
class SampleDetections:
    """Output of process_sample: centroids plus per-target bbox cubes."""

    centroids: list[Centroid]
    bboxes: list[np.ndarray]
    power: np.ndarray
    threshold: np.ndarray


def process_sample(frames: np.ndarray, config: RadarConfig,
                   params: PipelineParams) -> SampleDetections:
    """Run the detection chain on a multi-frame ADC sample.

    Detection runs on the power map averaged over frames (noise averaging);
    angle snapshots come from frame 0. Every centroid yields a cropped
    range-angle-time cube stacked across all frames.
    """
    frames = np.asarray(frames)
    if frames.ndim != 5:
        raise ValueError("expected frames of shape [K_frame, N_s, M_c, N_tx, N_rx]")
    if frames.shape[0] != config.K_frame:
        raise ValueError(
            f"sample has {frames.shape[0]} frames, config says {config.K_frame}")
    rd = [doppler_process(range_fft(frames[f]), config)
          for f in range(config.K_frame)]
    power = np.mean([power_map(c) for c in rd], axis=0)
    alpha = alpha_for_pfa(params.pfa,
                          cfar_training_cells(params.cfar_train, params.cfar_guard))
    det = ca_cfar(power, (params.cfar_train, params.cfar_guard), alpha)
    groups = group_detections(det, wrap_doppler=config.M_c)
    triples = []
    for g in groups:
        _, k_theta = angle_of(rd[0], g.peak, config.N_theta)
        triples.append((g.peak[0], g.peak[1], k_theta, g.peak_power))
    centroids = cluster_centroids(triples, gaps=params.cluster_gaps)
    time_cubes = [angle_time_cube(c, config.N_theta) for c in rd]
    bboxes = [crop_and_stack(time_cubes, c, params.n_res_s, params.n_res_theta,
                             config.K_frame)
              for c in centroids]
    return SampleDetections(centroids=centroids, bboxes=bboxes,
                            power=power, threshold=det.threshold)
