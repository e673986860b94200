"""Synthetic striatal phantom volumes for two-class experiments.

Each subject is a smooth background field with two bright ellipsoids (the
striata). The class signal is the binding ratio, i.e. striatal over
background uptake: the control class draws high ratios, the diseased class
low ones with an extra one-sided asymmetry factor. Nuisance factors mimic
acquisition variability: small pose jitter (similarity transform), a global
per-subject intensity scale and additive gaussian noise. Ground truth for
every factor is recorded per subject.

With the default wide intensity-scale range, raw intensity levels overlap
heavily between classes while the striatal/background ratio stays
discriminative, so intensity normalization is required before absolute voxel
values mean anything.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .preprocess import affine_resample, make_similarity
from .seeds import derive_seed

LABELS = ("control", "pd")


def _default_ellipsoids(shape):
    """Two striatal ellipsoids placed symmetrically about the midline."""
    d, h, w = shape
    semi = (0.11 * d, 0.16 * h, 0.105 * w)
    return (
        ((0.5 * d, 0.42 * h, 0.35 * w), semi),
        ((0.5 * d, 0.42 * h, 0.65 * w), semi),
    )


@dataclass(frozen=True)
class PhantomParams:
    shape: tuple = (24, 28, 24)
    background: float = 1.0
    ellipsoids: tuple = None            # ((center_dhw, semi_axes_dhw), ...)
    control_ratio: tuple = (3.0, 0.3)   # gaussian mean, spread
    pd_ratio: tuple = (1.4, 0.3)
    pd_asymmetry: tuple = (0.7, 1.0)    # uniform factor on one striatum
    rotation_deg: float = 8.0
    translation_vox: float = 2.0
    scale_jitter: tuple = (0.95, 1.05)
    intensity_scale: tuple = (0.5, 2.0)  # log-uniform global factor
    noise_sigma: float = 0.05
    smoothing_sigma: float = 0.7

    def __post_init__(self):
        if min(self.shape) < 8:
            raise ValueError("phantom extents must be >= 8")
        if self.control_ratio[0] <= self.pd_ratio[0]:
            raise ValueError("control binding ratio must exceed the pd ratio")
        if self.control_ratio[1] < 0 or self.pd_ratio[1] < 0:
            raise ValueError("ratio spreads must be >= 0")
        if self.ellipsoids is None:
            object.__setattr__(self, "ellipsoids", _default_ellipsoids(self.shape))


@dataclass
class SubjectRecord:
    subject_id: str
    label: str
    binding_ratio: float        # mean effective ratio over both striata
    scale: float                # global intensity factor
    rotation_deg: tuple
    translation: tuple
    path: str = ""


def ellipsoid_mask(shape, center, semi_axes):
    """Boolean mask of voxels inside an ellipsoid given in (D, H, W) voxels."""
    zz, yy, xx = np.indices(shape, dtype=np.float64)
    cz, cy, cx = center
    az, ay, ax = semi_axes
    return ((zz - cz) / az) ** 2 + ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0


def striatal_mask(params):
    """Union of the two nominal (unjittered) striatal ellipsoids."""
    mask = np.zeros(params.shape, dtype=bool)
    for center, semi in params.ellipsoids:
        mask |= ellipsoid_mask(params.shape, center, semi)
    return mask


def _centered_pose(shape, scale, angles_deg, translation):
    """Similarity transform applied about the volume center."""
    d, h, w = shape
    center = np.array([(w - 1) / 2, (h - 1) / 2, (d - 1) / 2])
    to_origin = np.eye(4)
    to_origin[:3, 3] = -center
    back = np.eye(4)
    back[:3, 3] = center
    return back @ make_similarity(scale, angles_deg, translation) @ to_origin


def generate_subject(params, label, seed):
    """One phantom volume plus its ground-truth record.

    The volume is built as background plus ratio-scaled ellipsoids, smoothed,
    pose-jittered, globally scaled and corrupted with noise, in that order.
    Negative values from the noise are clipped so uptake stays non-negative.
    """
    if label not in LABELS:
        raise ValueError(f"unknown class label {label!r}")
    rng = np.random.default_rng(seed)

    mean, spread = params.control_ratio if label == "control" else params.pd_ratio
    ratios = []
    for _ in params.ellipsoids:
        ratios.append(max(1.0, rng.normal(mean, spread)))
    if label == "pd":
        side = int(rng.integers(len(ratios)))
        factor = rng.uniform(*params.pd_asymmetry)
        ratios[side] = max(1.0, ratios[side] * factor)

    vol = np.full(params.shape, params.background, dtype=np.float64)
    for (center, semi), ratio in zip(params.ellipsoids, ratios):
        mask = ellipsoid_mask(params.shape, center, semi)
        vol[mask] = params.background * ratio
    if params.smoothing_sigma > 0:
        vol = gaussian_filter(vol, params.smoothing_sigma)

    angles = tuple(rng.uniform(-params.rotation_deg, params.rotation_deg, 3))
    translation = tuple(rng.uniform(-params.translation_vox, params.translation_vox, 3))
    pose_scale = rng.uniform(*params.scale_jitter)
    translation = _clip_translation(params, pose_scale, angles, translation)
    pose = _centered_pose(params.shape, pose_scale, angles, translation)
    vol = affine_resample(vol.astype(np.float32), pose, params.shape)

    lo, hi = params.intensity_scale
    gscale = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    vol = vol.astype(np.float64) * gscale
    if params.noise_sigma > 0:
        vol = vol + rng.normal(0.0, params.noise_sigma, params.shape)
    vol = np.maximum(vol, 0.0).astype(np.float32)

    record = SubjectRecord(
        subject_id="",
        label=label,
        binding_ratio=float(np.mean(ratios)),
        scale=gscale,
        rotation_deg=tuple(float(a) for a in angles),
        translation=tuple(float(t) for t in translation),
    )
    return vol, record


def _clip_translation(params, scale, angles, translation):
    """Shrink the translation until both striata stay inside the volume."""
    d, h, w = params.shape
    translation = np.asarray(translation, dtype=np.float64)
    for _ in range(8):
        pose = _centered_pose(params.shape, scale, angles, tuple(translation))
        ok = True
        for (cz, cy, cx), semi in params.ellipsoids:
            moved = pose @ np.array([cx, cy, cz, 1.0])
            mx, my, mz = moved[:3]
            margin = max(semi)
            if not (margin <= mx <= w - 1 - margin
                    and margin <= my <= h - 1 - margin
                    and margin <= mz <= d - 1 - margin):
                ok = False
                break
        if ok:
            return tuple(float(t) for t in translation)
        translation = translation / 2.0
    return (0.0, 0.0, 0.0)


def generate_dataset(params, n_control, n_pd, seed):
    """Generate a cohort; yields (volume, record) with stable subject ids.

    Per-subject seeds derive from the dataset seed and the subject index, so
    cohorts are reproducible and order-independent of each other.
    """
    if n_control < 1 or n_pd < 1:
        raise ValueError("need at least one subject per class")
    idx = 0
    for label, count, prefix in (("control", n_control, "c"),
                                 ("pd", n_pd, "p")):
        for j in range(count):
            vol, record = generate_subject(params, label,
                                           derive_seed(seed, "subject", idx))
            record.subject_id = f"{prefix}{j:04d}"
            idx += 1
            yield vol, record
