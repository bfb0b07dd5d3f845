"""Datasets: manifests, decoding, resizing, splits, balanced batches, and a
synthetic real/fake image generator with distinct fake "families".

Label convention: real = 1 (positive), fake = 0.
"""

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, DecodeError, ManifestError

REAL, FAKE = 1, 0
LABEL_NAMES = {REAL: "real", FAKE: "fake"}
LABEL_CODES = {"real": REAL, "fake": FAKE}
IMAGE_SIZE = 128
MANIFEST_VERSION = 1

# tags of the reference image sets; other tags (synthetic families) are free-form
REAL_SOURCES = {"R_cel"}
FAKE_SOURCES = {"F_pg", "F_dc", "F_wg"}


@dataclass(frozen=True)
class ImageRecord:
    label: int
    source: str
    path: Path = None
    pixels: np.ndarray = field(default=None, compare=False, repr=False)
    key: str = ""

    def __post_init__(self):
        if self.label not in (REAL, FAKE):
            raise ManifestError(f"label must be real(1) or fake(0), got {self.label!r}")
        if self.source in REAL_SOURCES and self.label != REAL:
            raise ManifestError(f"source {self.source} holds real images but record is labeled fake")
        if self.source in FAKE_SOURCES and self.label != FAKE:
            raise ManifestError(f"source {self.source} holds fake images but record is labeled real")
        if self.path is None and self.pixels is None:
            raise ManifestError("record needs a path or inline pixels")
        if not self.key:
            object.__setattr__(self, "key", str(self.path))

    def load(self, size=IMAGE_SIZE):
        """8-bit RGB pixels (size, size, 3), decoded and resized as needed."""
        if self.pixels is not None:
            img = self.pixels
        else:
            try:
                raw = Path(self.path).read_bytes()
            except OSError as exc:
                raise DataError(f"cannot read image {self.path}: {exc}", "io.image_missing") from exc
            img = decode_image(raw, name=str(self.path))
        if img.shape[:2] != (size, size):
            img = np.clip(np.rint(resize_bilinear(img, size)), 0, 255).astype(np.uint8)
        return img


class Manifest:
    """Ordered, immutable list of :class:`ImageRecord`. Order is significant."""

    def __init__(self, records, image_size=IMAGE_SIZE, version=MANIFEST_VERSION):
        self.records = tuple(records)
        self.image_size = image_size
        self.version = version

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Manifest(self.records[idx], self.image_size, self.version)
        return self.records[idx]

    def __add__(self, other):
        return Manifest(self.records + tuple(other), self.image_size, self.version)

    def __repr__(self):
        return f"Manifest({len(self)} records, sources={self.sources()})"

    def sources(self):
        return list(dict.fromkeys(r.source for r in self.records))

    def by_source(self, source):
        return Manifest([r for r in self.records if r.source == source], self.image_size, self.version)

    def with_label(self, label):
        return Manifest([r for r in self.records if r.label == label], self.image_size, self.version)

    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)


def read_manifest(path):
    """Parse ``path<TAB>label<TAB>source`` lines; relative paths resolve against the manifest's folder."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}", "io.manifest_missing")
    base = path.parent
    records, size = [], IMAGE_SIZE
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                if token.startswith("size="):
                    size = int(token[5:])
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}", "io.manifest_format")
        rel, label, source = parts
        if label not in LABEL_CODES:
            raise ManifestError(f"{path}:{lineno}: label must be 'real' or 'fake', got {label!r}", "io.manifest_format")
        p = Path(rel)
        records.append(ImageRecord(LABEL_CODES[label], source, p if p.is_absolute() else base / p, key=rel))
    return Manifest(records, size)


def write_manifest(manifest, path, paths=None):
    """Write ``manifest``; ``paths`` overrides the per-record path column (e.g. for exported inline images)."""
    path = Path(path)
    lines = [f"# ganforensics manifest v{manifest.version} size={manifest.image_size}"]
    for i, rec in enumerate(manifest):
        p = paths[i] if paths is not None else rec.path
        lines.append(f"{p}\t{LABEL_NAMES[rec.label]}\t{rec.source}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def decode_image(data, name="<bytes>"):
    """Decode PNG/JPEG/... bytes to uint8 RGB (H, W, 3); grayscale is replicated."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode in ("L", "I", "I;16", "F", "1"):
                arr = np.asarray(im.convert("L"))
                return np.repeat(arr[:, :, None], 3, axis=2)
            return np.asarray(im.convert("RGB")).copy()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {name}: {exc}") from exc


def encode_png(pixels):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def _bilinear_taps(n_in, n_out):
    # half-pixel centers: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(image, size=IMAGE_SIZE):
    """Bilinear resize of (H, W, C) to (size, size, C); float64 output unless sizes already match."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise DataError(f"resize needs a non-empty (H, W, C) image, got shape {image.shape}")
    if isinstance(size, int):
        size = (size, size)
    if image.shape[:2] == tuple(size):
        return image.copy()
    x = image.astype(np.float64)
    lo, hi, t = _bilinear_taps(image.shape[0], size[0])
    x = x[lo] * (1 - t)[:, None, None] + x[hi] * t[:, None, None]
    lo, hi, t = _bilinear_taps(image.shape[1], size[1])
    return x[:, lo] * (1 - t)[None, :, None] + x[:, hi] * t[None, :, None]


def normalize(pixels):
    """Map 8-bit range [0, 255] to [-1, 1]."""
    return np.asarray(pixels, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)


def denormalize(x):
    return (np.asarray(x, dtype=np.float32) + np.float32(1.0)) * np.float32(127.5)


def to_tensor(images):
    """(N, H, W, C) pixel batch -> normalized float32 (N, C, H, W)."""
    return np.ascontiguousarray(normalize(images).transpose(0, 3, 1, 2))


def split(manifest, train_count, test_count):
    """First ``train_count`` records train, last ``test_count`` test."""
    if train_count < 0 or test_count < 0:
        raise DataError(f"split counts must be non-negative, got {train_count}/{test_count}")
    if train_count + test_count > len(manifest):
        raise DataError(
            f"split {train_count}+{test_count} exceeds manifest length {len(manifest)} (train and test would overlap)",
            "config.split",
        )
    return manifest[:train_count], manifest[len(manifest) - test_count :]


def split_by_source(manifest, train_count, test_count):
    """Apply :func:`split` to each source separately and concatenate in source order."""
    train, test = Manifest([], manifest.image_size), Manifest([], manifest.image_size)
    for source in manifest.sources():
        tr, te = split(manifest.by_source(source), train_count, test_count)
        train, test = train + tr, test + te
    return train, test


def load_pixels(manifest, size=None):
    """Decode every record into a uint8 array (N, size, size, 3)."""
    size = size or manifest.image_size
    out = np.empty((len(manifest), size, size, 3), dtype=np.uint8)
    for i, rec in enumerate(manifest):
        out[i] = rec.load(size)
    return out


def make_batches(real, fake, batch_size, epoch_seed):
    """Yield ``(items, labels)`` label-balanced batches for one epoch.

    Each batch holds ``batch_size // 2`` real items followed by as many fake
    items. Both pools are shuffled with ``epoch_seed``; leftovers that do not
    fill a batch are dropped.
    """
    if batch_size < 2 or batch_size % 2:
        raise DataError(f"batch size must be even and >= 2, got {batch_size}", "config.batch_size")
    half = batch_size // 2
    rng = np.random.default_rng(epoch_seed)
    real_order = rng.permutation(len(real))
    fake_order = rng.permutation(len(fake))
    labels = np.array([REAL] * half + [FAKE] * half, dtype=np.int64)
    for b in range(min(len(real), len(fake)) // half):
        sl = slice(b * half, (b + 1) * half)
        items = [real[i] for i in real_order[sl]] + [fake[i] for i in fake_order[sl]]
        yield items, labels.copy()


# -- spectral measurement ----------------------------------------------------


def spectral_energy(image, cutoff=0.0, upper=1.0):
    """Mean per-pixel energy of the mean-removed image in a frequency band.

    The band is ``cutoff <= max(|fx|, |fy|) / nyquist <= upper`` (fractions
    of Nyquist). Channels are averaged. By Parseval, ``cutoff=0, upper=1``
    equals the per-pixel variance.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    h, w = x.shape[:2]
    x = x - x.mean(axis=(0, 1), keepdims=True)
    spec = np.abs(np.fft.fft2(x, axes=(0, 1))) ** 2 / (h * w) ** 2
    fy = np.abs(np.fft.fftfreq(h))[:, None] * 2
    fx = np.abs(np.fft.fftfreq(w))[None, :] * 2
    f = np.maximum(fy, fx)
    mask = (f >= cutoff) & (f <= upper)
    return float(spec[mask].sum() / x.shape[2])


# -- synthetic families ------------------------------------------------------


@dataclass(frozen=True)
class FamilySpec:
    """Recipe for one synthetic fake family.

    ``kind`` selects the artifact: ``checker`` (fixed-phase checkerboard),
    ``upsample`` (period-4 block pattern, as left by 2x nearest upsampling of
    a period-2 signal), or ``band`` (noise confined to a radial frequency band
    ``band`` given as fractions of Nyquist). ``cutoff`` is the lower edge of
    the frequency range the artifact lives in.
    """

    name: str
    kind: str
    amplitude: float = 3.0
    cutoff: float = 0.75
    band: tuple = (0.6, 0.9)
    random_phase: bool = False  # modulate by a smooth zero-mean random field
    amplitude_jitter: float = 0.0  # per-image amplitude scale drawn from [1-j, 1+j]
    patches: int = 0  # >0 confines the artifact to this many square patches at random positions
    patch_size: int = 8


@dataclass(frozen=True)
class SynthConfig:
    size: int = IMAGE_SIZE
    n_waves: int = 4
    max_cycles: int = 4
    wave_amplitude: tuple = (8.0, 24.0)
    tone_mean: float = 128.0
    tone_jitter: float = 12.0
    texture_std: float = 0.25
    texture_jitter: float = 0.0  # per-image texture std drawn from texture_std * [1-j, 1+j]
    tone_gamma: float = 0.88  # shared fake cue: y = 255 * (x / 255) ** gamma


# Artifacts sit near the 8-bit quantization floor over a faint texture: easy
# to pick up on clean images, but drowned by a few levels of training noise
# and removed by blur, while the brightness cue survives both.
DEFAULT_FAMILIES = {
    "A": FamilySpec("A", "checker", amplitude=0.3, cutoff=0.9),
    "B": FamilySpec("B", "upsample", amplitude=0.3, cutoff=0.4),
    "C": FamilySpec("C", "band", amplitude=0.3, cutoff=0.6, band=(0.6, 0.9)),
}


def _base_image(rng, cfg):
    """Smooth real-style image: a few low-frequency waves over a random tone, plus fine texture."""
    s = cfg.size
    yy, xx = np.mgrid[0:s, 0:s] / s
    field_ = np.zeros((s, s))
    for _ in range(cfg.n_waves):
        fx, fy = rng.integers(-cfg.max_cycles, cfg.max_cycles + 1, 2)
        amp = rng.uniform(*cfg.wave_amplitude)
        field_ += amp * np.cos(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
    tone = cfg.tone_mean + rng.normal(0.0, cfg.tone_jitter, 3)
    gain = rng.uniform(0.7, 1.3, 3)
    img = tone[None, None, :] + field_[:, :, None] * gain[None, None, :]
    tex = cfg.texture_std * rng.uniform(1 - cfg.texture_jitter, 1 + cfg.texture_jitter)
    img += rng.normal(0.0, tex, img.shape)
    return np.clip(img, 0.0, 255.0)


def tone_curve(img, gamma):
    return 255.0 * (np.clip(img, 0.0, 255.0) / 255.0) ** gamma


def _smooth_sign_field(rng, size, cycles=3):
    """Zero-mean, unit-RMS smooth field from a few random low-frequency waves."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    f = np.zeros((size, size))
    for _ in range(4):
        fx, fy = rng.integers(-cycles, cycles + 1, 2)
        f += np.cos(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
    f -= f.mean()
    return f / max(np.sqrt(np.mean(f * f)), 1e-12)


def _patch_mask(rng, size, count, side):
    mask = np.zeros((size, size))
    for y, x in rng.integers(0, size - side + 1, (count, 2)):
        mask[y : y + side, x : x + side] = 1.0
    return mask


def family_artifact(spec, rng, size=IMAGE_SIZE):
    """Additive artifact field (size, size, 3) for one fake image of ``spec``."""
    amp = spec.amplitude * rng.uniform(1 - spec.amplitude_jitter, 1 + spec.amplitude_jitter)
    yy, xx = np.mgrid[0:size, 0:size]
    pattern = None
    if spec.kind == "checker":
        pattern = np.where((xx + yy) % 2 == 0, 1.0, -1.0)
    elif spec.kind == "upsample":
        block = np.array([1.0, 1.0, -1.0, -1.0])
        pattern = 0.5 * (block[xx % 4] + block[yy % 4])
    if pattern is not None:
        if spec.random_phase:
            pattern = pattern * _smooth_sign_field(rng, size)
        if spec.patches:
            pattern = pattern * _patch_mask(rng, size, spec.patches, spec.patch_size)
        return amp * np.repeat(pattern[:, :, None], 3, axis=2)
    if spec.kind == "band":
        noise = rng.standard_normal((size, size, 3))
        spec_ = np.fft.fft2(noise, axes=(0, 1))
        fy = np.abs(np.fft.fftfreq(size))[:, None] * 2
        fx = np.abs(np.fft.fftfreq(size))[None, :] * 2
        r = np.sqrt(fx * fx + fy * fy)
        mask = (r >= spec.band[0]) & (r <= spec.band[1])
        out = np.real(np.fft.ifft2(spec_ * mask[:, :, None], axes=(0, 1)))
        return amp * out / out.std()
    raise DataError(f"unknown family artifact kind {spec.kind!r}", "config.family")


def synth_real(rng, cfg=SynthConfig()):
    return np.rint(_base_image(rng, cfg)).astype(np.uint8)


def synth_fake(spec, rng, cfg=SynthConfig()):
    img = tone_curve(_base_image(rng, cfg), cfg.tone_gamma) + family_artifact(spec, rng, cfg.size)
    return np.rint(np.clip(img, 0.0, 255.0)).astype(np.uint8)


def synth_families(n_per_class, families, rng, cfg=SynthConfig(), real_source="real"):
    """Manifest of ``n_per_class`` real images followed by ``n_per_class`` fakes per family.

    ``families`` holds :class:`FamilySpec` objects or names from
    :data:`DEFAULT_FAMILIES`. ``rng`` is a seed or Generator; each image draws
    from its own child stream keyed by (class, index), so the first k images
    do not depend on ``n_per_class``.
    """
    if isinstance(rng, np.random.Generator):
        root = int(rng.integers(2**63))
    else:
        root = int(rng)
    specs = [DEFAULT_FAMILIES[f] if isinstance(f, str) else f for f in families]
    records = []
    for i in range(n_per_class):
        px = synth_real(np.random.default_rng([root, 0, i]), cfg)
        records.append(ImageRecord(REAL, real_source, pixels=px, key=f"{real_source}/{i:06d}"))
    for fi, spec in enumerate(specs, start=1):
        for i in range(n_per_class):
            px = synth_fake(spec, np.random.default_rng([root, fi, i]), cfg)
            records.append(ImageRecord(FAKE, spec.name, pixels=px, key=f"{spec.name}/{i:06d}"))
    return Manifest(records, cfg.size)


def export_manifest(manifest, out_dir):
    """Write inline-pixel records as PNG files plus ``manifest.tsv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    rel_paths = []
    for rec in manifest:
        rel = Path(rec.key + ".png") if rec.key else Path(f"{rec.source}/{len(rel_paths):06d}.png")
        dest = out_dir / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(encode_png(rec.pixels if rec.pixels is not None else rec.load(manifest.image_size)))
        rel_paths.append(rel.as_posix())
    return write_manifest(manifest, out_dir / "manifest.tsv", paths=rel_paths)
