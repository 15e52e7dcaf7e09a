"""Instance extraction from (probability, distance) prediction maps.

The pipeline is Gaussian smoothing of the distance map, thresholding the
probability map, h-maxima seed detection, marker-controlled watershed, and
morphological cleanup. Label maps are plain int32 arrays, 0 = background;
every positive id covers one 4-connected region.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import h_maxima

from .errors import DimensionMismatch

# 4- and 8-connectivity structuring elements for scipy.ndimage.label.
_CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_CONN8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class PostprocessParams:
    """Knobs for map-to-instances conversion.

    marker_h=None means 0.1x the dynamic range of the smoothed distance
    map, recomputed per image.
    """

    prob_threshold: float = 0.5
    gaussian_sigma: float = 1.0
    marker_h: float | None = None
    min_instance_area: int = 10
    opening_radius: int = 1

    def __post_init__(self):
        if not 0.0 < self.prob_threshold < 1.0:
            raise ValueError(f"prob_threshold must be in (0, 1), got {self.prob_threshold}")
        if self.gaussian_sigma < 0.0:
            raise ValueError(f"gaussian_sigma must be >= 0, got {self.gaussian_sigma}")
        if self.marker_h is not None and self.marker_h <= 0.0:
            raise ValueError(f"marker_h must be positive, got {self.marker_h}")
        if self.min_instance_area < 0:
            raise ValueError(f"min_instance_area must be >= 0, got {self.min_instance_area}")
        if self.opening_radius < 0:
            raise ValueError(f"opening_radius must be >= 0, got {self.opening_radius}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian sampled at integer offsets, radius 3*sigma."""
    radius = max(1, int(round(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_smooth(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders; sigma=0 is identity."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2D map, got shape {arr.shape}")
    if sigma == 0.0:
        return arr.copy()
    k = gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    padded = np.pad(arr, r, mode="symmetric")
    # Row pass then column pass over the padded array.
    rows = np.apply_along_axis(np.convolve, 1, padded, k, mode="valid")
    cols = np.apply_along_axis(np.convolve, 0, rows, k, mode="valid")
    return np.ascontiguousarray(cols)


def disk_footprint(radius: int) -> np.ndarray:
    """Boolean disk: offsets with dy^2 + dx^2 <= radius^2."""
    if radius == 0:
        return np.ones((1, 1), dtype=bool)
    y, x = np.ogrid[-radius: radius + 1, -radius: radius + 1]
    return (y * y + x * x) <= radius * radius


def extract_markers(dist: np.ndarray, fg: np.ndarray, params: PostprocessParams) -> np.ndarray:
    """Seed map: 8-connected components of the h-maxima of dist within fg."""
    dist = np.asarray(dist, dtype=np.float64)
    fg = np.asarray(fg, dtype=bool)
    if dist.shape != fg.shape:
        raise DimensionMismatch(f"dist {dist.shape} vs fg {fg.shape}")
    if not fg.any():
        return np.zeros(dist.shape, dtype=np.int32)
    h = params.marker_h
    if h is None:
        h = 0.1 * float(dist.max() - dist.min())
    if h <= 0.0:
        # Flat map: no detectable maxima.
        return np.zeros(dist.shape, dtype=np.int32)
    # Suppress everything outside fg so background peaks never seed.
    work = np.where(fg, dist, dist.min())
    peaks = h_maxima(work, h).astype(bool) & fg
    seeds, _ = ndimage.label(peaks, structure=_CONN8)
    return seeds.astype(np.int32)


def watershed_split(fg: np.ndarray, dist: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Priority-flood watershed of fg on -dist, growing 4-connected basins.

    Ties in flood priority resolve by raster order, which makes the output a
    pure function of the inputs. Foreground components that contain no seed
    are emitted whole under fresh ids.
    """
    fg = np.asarray(fg, dtype=bool)
    dist = np.asarray(dist, dtype=np.float64)
    seeds = np.asarray(seeds)
    if not (fg.shape == dist.shape == seeds.shape):
        raise DimensionMismatch(
            f"shape mismatch: fg {fg.shape}, dist {dist.shape}, seeds {seeds.shape}"
        )
    h, w = fg.shape
    labels = np.where(fg, seeds, 0).astype(np.int32)

    flat_fg = fg.ravel()
    flat_dist = dist.ravel()
    flat_labels = labels.ravel()

    heap: list[tuple[float, int, int]] = []
    for idx in np.flatnonzero(flat_labels):
        heap.append((-flat_dist[idx], int(idx), int(flat_labels[idx])))
    heapq.heapify(heap)

    while heap:
        _, idx, label = heapq.heappop(heap)
        y, x = divmod(idx, w)
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if not (0 <= ny < h and 0 <= nx < w):
                continue
            nidx = ny * w + nx
            if flat_fg[nidx] and flat_labels[nidx] == 0:
                flat_labels[nidx] = label
                heapq.heappush(heap, (-flat_dist[nidx], nidx, label))

    # Anything still unlabeled sits in a component no seed could reach.
    orphan = flat_fg & (flat_labels == 0)
    if orphan.any():
        extra, n = ndimage.label(orphan.reshape(h, w), structure=_CONN4)
        base = int(flat_labels.max())
        flat_labels[orphan] = extra.ravel()[orphan] + base
    return flat_labels.reshape(h, w)


def cleanup(inst: np.ndarray, params: PostprocessParams) -> np.ndarray:
    """Open each instance with a disk, drop small ones, compact the ids.

    Opening can cut an instance in two; the pieces are re-labeled as
    separate instances so ids stay 4-connected. Final ids run 1..N ordered
    by descending area, ties by first-pixel raster position.
    """
    inst = np.asarray(inst)
    footprint = disk_footprint(params.opening_radius)
    pad = params.opening_radius

    pieces: list[np.ndarray] = []  # flat pixel indices per surviving piece
    slices = ndimage.find_objects(inst.astype(np.int64))
    for label_minus_1, sl in enumerate(slices):
        if sl is None:
            continue
        label = label_minus_1 + 1
        ys = slice(max(sl[0].start - pad, 0), min(sl[0].stop + pad, inst.shape[0]))
        xs = slice(max(sl[1].start - pad, 0), min(sl[1].stop + pad, inst.shape[1]))
        mask = inst[ys, xs] == label
        if params.opening_radius > 0:
            mask = ndimage.binary_opening(mask, structure=footprint)
        if not mask.any():
            continue
        parts, n = ndimage.label(mask, structure=_CONN4)
        for p in range(1, n + 1):
            local = np.flatnonzero((parts == p).ravel())
            if len(local) < params.min_instance_area:
                continue
            yy, xx = np.unravel_index(local, mask.shape)
            pieces.append((yy + ys.start) * inst.shape[1] + (xx + xs.start))

    # Largest first; equal areas ordered by where the piece starts.
    pieces.sort(key=lambda px: (-len(px), int(px.min())))
    out = np.zeros(inst.shape, dtype=np.int32).ravel()
    for new_id, px in enumerate(pieces, start=1):
        out[px] = new_id
    return out.reshape(inst.shape)


def instances_from_maps(prob: np.ndarray, dist: np.ndarray, params: PostprocessParams) -> np.ndarray:
    """Full conversion: threshold, smooth, seed, flood, clean."""
    prob = np.asarray(prob, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if prob.ndim != 2 or dist.ndim != 2:
        raise DimensionMismatch("probability and distance maps must be 2D")
    if prob.shape != dist.shape:
        raise DimensionMismatch(f"prob {prob.shape} vs dist {dist.shape}")
    fg = prob >= params.prob_threshold
    smoothed = gaussian_smooth(dist, params.gaussian_sigma)
    seeds = extract_markers(smoothed, fg, params)
    inst = watershed_split(fg, smoothed, seeds)
    return cleanup(inst, params)
