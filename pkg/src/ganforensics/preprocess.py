"""Training-time image preprocessing: Gaussian blur or Gaussian noise.

One parameter is drawn per training batch and shared by every image in it.
Blur kernel size 1 and noise std 0 leave an image untouched. Images are
(..., H, W, C) arrays of 8-bit-range pixel values; evaluation never calls
into this module.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KERNEL_SIZES = (1, 3, 5, 7)
MAX_NOISE_STD = 5.0
KINDS = ("none", "blur", "noise")
EXPERIMENTAL_KINDS = ("mixed",)


def auto_sigma(k):
    """Default Gaussian sigma for kernel size ``k``: 0.3*((k-1)/2 - 1) + 0.8."""
    return 0.3 * ((k - 1) * 0.5 - 1) + 0.8


def gaussian_kernel_1d(k, sigma=None):
    if not isinstance(k, (int, np.integer)) or k < 1 or k % 2 == 0:
        raise ValueError(f"Gaussian kernel size must be a positive odd integer, got {k!r}")
    if k == 1:
        return np.ones(1)
    sigma = auto_sigma(k) if sigma is None else sigma
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.arange(k) - (k - 1) / 2
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _out_dtype(image):
    return image.dtype if np.issubdtype(image.dtype, np.floating) else np.dtype(np.float32)


def _correlate_axis(x, w, axis):
    r = len(w) // 2
    n = x.shape[axis]
    pad = [(0, 0)] * x.ndim
    pad[axis] = (r, r)
    xp = np.pad(x, pad, mode="reflect")
    out = np.zeros_like(x)
    for j, wj in enumerate(w):
        out += wj * np.take(xp, np.arange(j, j + n), axis=axis)
    return out


def gaussian_blur(image, k):
    """Separable Gaussian blur (rows, then columns) with mirror borders.

    The border is reflected without repeating the edge pixel. Output is
    clipped to [0, 255]; integer inputs come back as float32.
    """
    if k not in KERNEL_SIZES:
        raise ValueError(f"unsupported blur kernel size {k}; expected one of {KERNEL_SIZES}")
    image = np.asarray(image)
    w = gaussian_kernel_1d(int(k))
    x = image.astype(np.float64)
    x = _correlate_axis(x, w, axis=-2)
    x = _correlate_axis(x, w, axis=-3)
    return np.clip(x, 0.0, 255.0).astype(_out_dtype(image))


def add_gaussian_noise(image, std, rng):
    """Add i.i.d. N(0, std^2) noise (8-bit pixel units) then clip to [0, 255]."""
    if not 0.0 <= std <= MAX_NOISE_STD:
        raise ValueError(f"noise std must be in [0, {MAX_NOISE_STD}], got {std}")
    image = np.asarray(image)
    noisy = image.astype(np.float64) + rng.normal(0.0, std, image.shape)
    return np.clip(noisy, 0.0, 255.0).astype(_out_dtype(image))


@dataclass(frozen=True)
class PreprocessMode:
    kind: str = "none"
    kernel_sizes: tuple = KERNEL_SIZES
    max_std: float = MAX_NOISE_STD

    def __post_init__(self):
        if self.kind not in KINDS + EXPERIMENTAL_KINDS:
            raise ConfigError(f"unknown preprocess mode {self.kind!r}; expected one of {KINDS}")
        if not self.kernel_sizes or any(k not in KERNEL_SIZES for k in self.kernel_sizes):
            raise ConfigError(f"blur kernel sizes must be drawn from {KERNEL_SIZES}, got {self.kernel_sizes}")
        if not 0.0 <= self.max_std <= MAX_NOISE_STD:
            raise ConfigError(f"noise std bound must be in [0, {MAX_NOISE_STD}], got {self.max_std}")

    @property
    def model_id(self):
        return {"none": "M", "blur": "M_GB", "noise": "M_GN", "mixed": "M_MIX"}[self.kind]


NONE = PreprocessMode("none")
BLUR = PreprocessMode("blur")
NOISE = PreprocessMode("noise")


@dataclass(frozen=True)
class PreprocessDraw:
    kind: str  # realized operation: none | blur | noise
    param: float = 0.0  # kernel size or noise std
    lineage: str = ""

    @property
    def is_identity(self):
        return self.kind == "none" or (self.kind == "blur" and self.param == 1) or (
            self.kind == "noise" and self.param == 0
        )


def draw_batch_preprocessing(mode, rng, lineage=""):
    """Draw the single preprocessing parameter for one training batch.

    Blur: kernel size uniform over ``mode.kernel_sizes``. Noise: std uniform on
    [0, max_std]. None consumes no randomness.
    """
    kind = mode.kind
    if kind == "none":
        return PreprocessDraw("none", 0.0, lineage)
    if kind == "mixed":
        kind = ("blur", "noise")[int(rng.integers(2))]
    if kind == "blur":
        return PreprocessDraw("blur", int(mode.kernel_sizes[int(rng.integers(len(mode.kernel_sizes)))]), lineage)
    return PreprocessDraw("noise", float(rng.uniform(0.0, mode.max_std)), lineage)


def apply(draw, images, rng=None):
    """Apply one draw to every image of a batch (N, H, W, C).

    Noise draws need ``rng``; each image gets its own noise field at the
    shared std.
    """
    if draw.kind == "none":
        return images
    if draw.kind == "blur":
        return gaussian_blur(images, int(draw.param))
    if draw.kind == "noise":
        if rng is None:
            raise ValueError("a noise draw needs an rng")
        return add_gaussian_noise(images, draw.param, rng)
    raise ValueError(f"unknown draw kind {draw.kind!r}")
