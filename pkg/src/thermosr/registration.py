"""Cross-camera pair registration: keypoint matching, robust homography
estimation, and warping of the moving image into the reference frame.

The keypoint engine is pluggable; the bundled default finds
difference-of-Gaussians extrema over a scale pyramid and describes them
with gradient-orientation histograms.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .data import PairedSample
from .degradation import bicubic_resample, bicubic_sample_at
from .images import Image


class RegistrationError(RuntimeError):
    """Raised when a pair cannot be registered (too few matches/consensus)."""


class EstimationError(RuntimeError):
    """Raised for degenerate correspondence configurations."""


@dataclasses.dataclass(frozen=True)
class Correspondence:
    """A putative match: (x, y) in the moving image -> (x, y) in the reference."""

    src: tuple[float, float]
    dst: tuple[float, float]

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (*self.src, *self.dst)):
            raise ValueError("correspondence coordinates must be finite")


@dataclasses.dataclass(frozen=True)
class Homography:
    """3x3 projective transform on pixel coordinates, normalized to h[2][2] = 1."""

    h: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.h, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if abs(m[2, 2]) < 1e-12:
            raise EstimationError("homography has vanishing h[2][2]")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < 1e-12:
            raise EstimationError("homography is singular")
        object.__setattr__(self, "h", m)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map (n, 2) pixel coordinates through the transform."""
        pts = np.asarray(pts, dtype=np.float64)
        ones = np.ones((pts.shape[0], 1))
        proj = np.hstack([pts, ones]) @ self.h.T
        return proj[:, :2] / proj[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))


@dataclasses.dataclass(frozen=True)
class RegistrationConfig:
    threshold_px: float = 3.0
    max_iters: int = 2000
    seed: int = 0


class KeypointEngine(Protocol):
    """Detector/descriptor interface: returns (n, 2) xy keypoints and (n, d) descriptors."""

    def detect_and_describe(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ...


class DoGKeypointEngine:
    """Scale-space keypoint detector with orientation-histogram descriptors.

    Difference-of-Gaussians extrema are located over a multi-octave
    pyramid, filtered by contrast and edge-response checks, localized with
    a quadratic fit, assigned a dominant gradient orientation, and
    described by a 4x4-cell x 8-bin histogram of local gradients.
    """

    def __init__(self, scales_per_octave: int = 3, base_sigma: float = 1.6,
                 contrast_threshold: float = 0.008, edge_ratio: float = 10.0,
                 max_keypoints: int = 2000):
        self.scales_per_octave = scales_per_octave
        self.base_sigma = base_sigma
        self.contrast_threshold = contrast_threshold
        self.edge_ratio = edge_ratio
        self.max_keypoints = max_keypoints

    def detect_and_describe(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        img = np.asarray(pixels, dtype=np.float64)
        s = self.scales_per_octave
        # assume σ=0.5 capture blur; bring the base level to base_sigma
        base = ndimage.gaussian_filter(img, np.sqrt(max(self.base_sigma ** 2 - 0.25, 1e-6)))

        keypoints: list[tuple[float, float, float, float]] = []  # x, y, sigma, response
        octave = 0
        while min(base.shape) >= 16:
            levels = [base]
            sigmas = [self.base_sigma]
            for i in range(1, s + 3):
                sig = self.base_sigma * 2 ** (i / s)
                inc = np.sqrt(sig ** 2 - sigmas[-1] ** 2)
                levels.append(ndimage.gaussian_filter(levels[-1], inc))
                sigmas.append(sig)
            dogs = np.stack([levels[i + 1] - levels[i] for i in range(s + 2)])

            maxima = ndimage.maximum_filter(dogs, size=3)
            minima = ndimage.minimum_filter(dogs, size=3)
            strong = np.abs(dogs) > self.contrast_threshold
            extrema = strong & ((dogs == maxima) | (dogs == minima))
            extrema[0] = extrema[-1] = False
            extrema[:, :8, :] = extrema[:, -8:, :] = False
            extrema[:, :, :8] = extrema[:, :, -8:] = False

            for si, yi, xi in zip(*np.nonzero(extrema)):
                d = dogs[si]
                dxx = d[yi, xi + 1] + d[yi, xi - 1] - 2 * d[yi, xi]
                dyy = d[yi + 1, xi] + d[yi - 1, xi] - 2 * d[yi, xi]
                dxy = (d[yi + 1, xi + 1] - d[yi + 1, xi - 1]
                       - d[yi - 1, xi + 1] + d[yi - 1, xi - 1]) / 4.0
                tr, det = dxx + dyy, dxx * dyy - dxy * dxy
                r = self.edge_ratio
                if det <= 0 or tr * tr * r >= det * (r + 1) ** 2:
                    continue
                # quadratic sub-pixel refinement in the spatial plane
                gx = (d[yi, xi + 1] - d[yi, xi - 1]) / 2.0
                gy = (d[yi + 1, xi] - d[yi - 1, xi]) / 2.0
                ox = oy = 0.0
                if det > 1e-12:
                    ox = -(dyy * gx - dxy * gy) / det
                    oy = -(dxx * gy - dxy * gx) / det
                    if abs(ox) > 0.5 or abs(oy) > 0.5:
                        ox = oy = 0.0
                scale_img = 2 ** octave
                keypoints.append((
                    (xi + ox) * scale_img, (yi + oy) * scale_img,
                    sigmas[si] * scale_img, abs(d[yi, xi]),
                ))
                if len(keypoints) >= 50 * self.max_keypoints:
                    break

            self._describe_octave(octave, levels, sigmas, keypoints)
            base = levels[s][::2, ::2]
            octave += 1

        if not keypoints:
            return np.zeros((0, 2)), np.zeros((0, 128))
        described = [kp for kp in keypoints if len(kp) == 6]
        described.sort(key=lambda kp: -kp[3])
        described = described[: self.max_keypoints]
        xy = np.array([(kp[0], kp[1]) for kp in described], dtype=np.float64)
        desc = np.array([kp[5] for kp in described], dtype=np.float64)
        return (xy, desc) if len(described) else (np.zeros((0, 2)), np.zeros((0, 128)))

    def _describe_octave(self, octave, levels, sigmas, keypoints) -> None:
        """Attach (orientation, descriptor) to keypoints of this octave in place.

        Keypoints with a second strong orientation peak are duplicated.
        """
        grads = {}
        extra = []
        for idx in range(len(keypoints)):
            kp = keypoints[idx]
            if len(kp) != 4:
                continue
            x, y, sigma, resp = kp
            scale_img = 2 ** octave
            if not (self.base_sigma * scale_img <= sigma
                    <= self.base_sigma * scale_img * 2 ** ((len(sigmas) - 1) / self.scales_per_octave)):
                continue
            level_i = int(round(np.log2(sigma / (self.base_sigma * scale_img)) * self.scales_per_octave))
            level_i = min(max(level_i, 0), len(levels) - 1)
            if level_i not in grads:
                gy, gx = np.gradient(levels[level_i])
                grads[level_i] = (np.hypot(gx, gy), np.arctan2(gy, gx))
            mag, ang = grads[level_i]
            xo, yo = x / scale_img, y / scale_img
            sig_o = sigma / scale_img
            results = _orientation_and_descriptor(mag, ang, xo, yo, sig_o)
            if not results:
                continue
            keypoints[idx] = (x, y, sigma, resp, results[0][0], results[0][1])
            for theta, desc in results[1:]:
                extra.append((x, y, sigma, resp, theta, desc))
        keypoints.extend(extra)


def _orientation_and_descriptor(mag, ang, x, y, sigma):
    """All (orientation, descriptor) pairs for one keypoint, strongest first."""
    h, w = mag.shape
    radius = int(round(3.0 * sigma))
    xi, yi = int(round(x)), int(round(y))
    if xi - radius < 0 or yi - radius < 0 or xi + radius >= w or yi + radius >= h:
        return []

    # orientation peaks of a 36-bin weighted gradient histogram
    ys, xs = np.mgrid[yi - radius:yi + radius + 1, xi - radius:xi + radius + 1]
    win_m = mag[yi - radius:yi + radius + 1, xi - radius:xi + radius + 1]
    win_a = ang[yi - radius:yi + radius + 1, xi - radius:xi + radius + 1]
    weight = np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2 * (1.5 * sigma) ** 2))
    bins = ((win_a + np.pi) / (2 * np.pi) * 36).astype(int) % 36
    hist = np.bincount(bins.ravel(), weights=(win_m * weight).ravel(), minlength=36)
    if hist.max() <= 0:
        return []
    is_peak = (hist >= np.roll(hist, 1)) & (hist > np.roll(hist, -1)) & (hist >= 0.8 * hist.max())
    peak_bins = np.nonzero(is_peak)[0]
    peak_bins = peak_bins[np.argsort(-hist[peak_bins])][:2]

    results = []
    for pb in peak_bins:
        theta = (pb + 0.5) / 36 * 2 * np.pi - np.pi
        desc = _descriptor_at(mag, ang, x, y, sigma, theta)
        if desc is not None:
            results.append((theta, desc))
    return results


def _descriptor_at(mag, ang, x, y, sigma, theta):
    """4x4-cell x 8-orientation-bin histogram of gradients on a rotated,
    sigma-scaled 16x16 sample grid."""
    h, w = mag.shape
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    step = sigma
    us = (np.arange(16) - 7.5) * step
    uu, vv = np.meshgrid(us, us)
    sx = x + cos_t * uu - sin_t * vv
    sy = y + sin_t * uu + cos_t * vv
    if sx.min() < 1 or sy.min() < 1 or sx.max() >= w - 1 or sy.max() >= h - 1:
        return None
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0

    def bil(a):
        return ((1 - fx) * (1 - fy) * a[y0, x0] + fx * (1 - fy) * a[y0, x0 + 1]
                + (1 - fx) * fy * a[y0 + 1, x0] + fx * fy * a[y0 + 1, x0 + 1])

    m = bil(mag)
    a = bil(ang) - theta
    gauss = np.exp(-(uu ** 2 + vv ** 2) / (2 * (8 * step) ** 2))
    cell_x = np.clip(((uu / step) + 8) // 4, 0, 3).astype(int)
    cell_y = np.clip(((vv / step) + 8) // 4, 0, 3).astype(int)
    obin = ((a + np.pi) / (2 * np.pi) * 8).astype(int) % 8
    flat_bin = (cell_y * 4 + cell_x) * 8 + obin
    desc = np.bincount(flat_bin.ravel(), weights=(m * gauss).ravel(), minlength=128)
    norm = np.linalg.norm(desc)
    if norm < 1e-12:
        return None
    desc = np.minimum(desc / norm, 0.2)
    return desc / max(np.linalg.norm(desc), 1e-12)


def match_descriptors(desc_a: np.ndarray, desc_b: np.ndarray, ratio: float = 0.75) -> np.ndarray:
    """Nearest-neighbour matches passing the best/second-best ratio test.

    Returns (m, 2) index pairs into desc_a/desc_b.
    """
    if len(desc_a) == 0 or len(desc_b) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    d2 = (np.sum(desc_a ** 2, axis=1)[:, None] + np.sum(desc_b ** 2, axis=1)[None, :]
          - 2.0 * desc_a @ desc_b.T)
    d2 = np.maximum(d2, 0.0)
    order = np.argsort(d2, axis=1)
    best, second = order[:, 0], order[:, 1]
    rows = np.arange(len(desc_a))
    keep = np.sqrt(d2[rows, best]) < ratio * np.sqrt(d2[rows, second])
    return np.stack([rows[keep], best[keep]], axis=1)


def detect_and_match(moving: Image, reference: Image,
                     engine: Optional[KeypointEngine] = None) -> list[Correspondence]:
    """Putative correspondences from scale-invariant keypoints + ratio test."""
    if min(moving.height, moving.width, reference.height, reference.width) < 32:
        raise ValueError("images must be at least 32x32 for keypoint matching")
    engine = engine if engine is not None else DoGKeypointEngine()
    kp_m, desc_m = engine.detect_and_describe(moving.pixels)
    kp_r, desc_r = engine.detect_and_describe(reference.pixels)
    pairs = match_descriptors(desc_m, desc_r)
    matches = [
        Correspondence(src=(float(kp_m[i, 0]), float(kp_m[i, 1])),
                       dst=(float(kp_r[j, 0]), float(kp_r[j, 1])))
        for i, j in pairs
    ]
    if len(matches) < 4:
        raise RegistrationError(
            f"registration infeasible: only {len(matches)} putative matches")
    return matches


def _matches_to_arrays(matches: Sequence[Correspondence]) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([m.src for m in matches], dtype=np.float64)
    dst = np.array([m.dst for m in matches], dtype=np.float64)
    return src, dst


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if dist < 1e-12:
        raise EstimationError("coincident points: cannot normalize")
    s = np.sqrt(2.0) / dist
    t = np.array([[s, 0, -s * centroid[0]],
                  [0, s, -s * centroid[1]],
                  [0, 0, 1.0]])
    normed = (pts - centroid) * s
    return normed, t


def estimate_homography_dlt(matches: Sequence[Correspondence]) -> Homography:
    """Hartley-normalized direct linear transform from >= 4 correspondences."""
    if len(matches) < 4:
        raise ValueError(f"need at least 4 matches, got {len(matches)}")
    src, dst = _matches_to_arrays(matches)
    src_n, t_src = _normalize_points(src)
    dst_n, t_dst = _normalize_points(dst)

    n = len(matches)
    a = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = src_n[i]
        u, v = dst_n[i]
        a[2 * i] = [-x, -y, -1, 0, 0, 0, u * x, u * y, u]
        a[2 * i + 1] = [0, 0, 0, -x, -y, -1, v * x, v * y, v]
    _, s, vt = np.linalg.svd(a)
    # rank-deficient system: the solution is not unique (collinear/coincident)
    if s[-2] < 1e-9 * s[0]:
        raise EstimationError("degenerate configuration: DLT system is rank-deficient")
    h_n = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_n @ t_src
    return Homography(h)


def _symmetric_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Forward + backward reprojection distance per correspondence."""
    fwd = np.sqrt(((h.apply(src) - dst) ** 2).sum(axis=1))
    bwd = np.sqrt(((h.inverse().apply(dst) - src) ** 2).sum(axis=1))
    e = fwd + bwd
    return np.where(np.isfinite(e), e, np.inf)


def ransac_homography(matches: Sequence[Correspondence], threshold_px: float,
                      max_iters: int, rng: np.random.Generator
                      ) -> tuple[Homography, np.ndarray]:
    """Robust homography fit; returns (model refit on inliers, inlier indices).

    A minimal 4-point sample always fits itself, so consensus is scored
    by the matches *outside* the sample whose symmetric reprojection
    error falls below the threshold; fewer than 4 such supporters across
    all iterations means the pair is not registrable.
    """
    if len(matches) < 4:
        raise ValueError(f"need at least 4 matches, got {len(matches)}")
    if threshold_px <= 0:
        raise ValueError("threshold_px must be positive")
    src, dst = _matches_to_arrays(matches)
    n = len(matches)

    best_inliers: Optional[np.ndarray] = None
    best_score = -1
    for _ in range(max_iters):
        sample = rng.choice(n, size=4, replace=False)
        try:
            h = estimate_homography_dlt([matches[i] for i in sample])
        except EstimationError:
            continue
        with np.errstate(all="ignore"):
            errors = _symmetric_errors(h, src, dst)
        inliers = np.nonzero(errors < threshold_px)[0]
        score = len(inliers) - int(np.isin(sample, inliers).sum())
        if score > best_score:
            best_score = score
            best_inliers = inliers

    if best_inliers is None or best_score < 4:
        raise RegistrationError(
            f"registration infeasible: best consensus has {best_score} "
            f"supporters beyond the minimal sample")
    try:
        refit = estimate_homography_dlt([matches[i] for i in best_inliers])
    except EstimationError:
        refit = estimate_homography_dlt([matches[i] for i in best_inliers[:4]])
    return refit, best_inliers


def warp_to_reference(moving: Image, h: Homography, out_h: int, out_w: int) -> Image:
    """Resample the moving image onto the reference grid defined by `h`.

    Each output pixel center is inverse-mapped through h and sampled
    bicubically with edge clamping.
    """
    h_inv = h.inverse().h
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    denom = h_inv[2, 0] * xs + h_inv[2, 1] * ys + h_inv[2, 2]
    sx = (h_inv[0, 0] * xs + h_inv[0, 1] * ys + h_inv[0, 2]) / denom
    sy = (h_inv[1, 0] * xs + h_inv[1, 1] * ys + h_inv[1, 2]) / denom
    px = bicubic_sample_at(moving.pixels, sx, sy)
    return Image(np.clip(px, 0.0, 1.0), moving.source_id)


def register_pair_detailed(axis: Image, flir: Image,
                           cfg: RegistrationConfig = RegistrationConfig(),
                           engine: Optional[KeypointEngine] = None
                           ) -> tuple[PairedSample, Homography]:
    """Register a pair and also return the estimated homography."""
    matches = detect_and_match(axis, flir, engine=engine)
    rng = np.random.default_rng(cfg.seed)
    h, _ = ransac_homography(matches, cfg.threshold_px, cfg.max_iters, rng)
    warped = warp_to_reference(axis, h, flir.height, flir.width)

    h2 = flir.height - flir.height % 2
    w2 = flir.width - flir.width % 2
    oy = (flir.height - h2) // 2
    ox = (flir.width - w2) // 2
    flir_c = Image(flir.pixels[oy:oy + h2, ox:ox + w2].copy(), flir.source_id)
    warped_c = Image(warped.pixels[oy:oy + h2, ox:ox + w2].copy(), warped.source_id)
    lr = bicubic_resample(warped_c, h2 // 2, w2 // 2)
    return PairedSample(lr=lr, hr=flir_c, scale=2, registered=True), h


def register_pair(axis: Image, flir: Image,
                  cfg: RegistrationConfig = RegistrationConfig(),
                  engine: Optional[KeypointEngine] = None) -> PairedSample:
    """Build a semi-matched x2 pair: warp the moving (axis) image into the
    reference (flir) frame and downsample it so hr dims are exactly 2x lr."""
    pair, _ = register_pair_detailed(axis, flir, cfg, engine)
    return pair
