"""Image and video I/O, synthetic corpus generation, and CRF analysis.

Images live in float64 HWC arrays with values in [0, 1] plus a declared bit
depth. PPM (binary P6) is the zero-dependency interchange format; PNG goes
through Pillow. The desk corpus is a procedurally generated 10-class
shape/texture set with paired darkened copies whose degradation has a known
analytic inverse, so curve-recovery experiments are well posed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, ImageReadError, InputError

SCHEMA_VERSION = 1


@dataclass
class ImageBatch:
    """(N, H, W, C) float64 values in [0, 1] with a declared bit depth."""

    data: np.ndarray
    bit_depth: int
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 3:
            self.data = self.data[None]
        if self.data.ndim != 4:
            raise DimensionError("ImageBatch expects (N, H, W, C) data")
        if self.bit_depth < 2:
            raise ConfigError("bit depth must be >= 2")
        if not self.ids:
            self.ids = [f"img-{i:05d}" for i in range(self.data.shape[0])]

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    def select(self, indices) -> "ImageBatch":
        return ImageBatch(data=self.data[indices].copy(),
                          bit_depth=self.bit_depth,
                          ids=[self.ids[i] for i in np.atleast_1d(indices)])


@dataclass
class VideoClip:
    """Ordered frames (T, H, W, C) sharing one bit depth."""

    frames: np.ndarray
    bit_depth: int
    frame_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise DimensionError("VideoClip expects (T, H, W, C) frames")
        if not self.frame_names:
            self.frame_names = [f"frame-{i:05d}" for i in range(len(self.frames))]

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class DegradationSpec:
    """Synthetic low-light recipe: clip(bias * x**gamma + noise, 0, 1).

    ``gamma >= 1`` darkens (convex), so the ideal restoration curve
    x**(1/gamma) is concave and inside the model's hypothesis class. Noise
    is added after darkening, matching the sensor ordering.
    """

    gamma: float = 4.0
    bias: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bias", tuple(self.bias))
        if self.gamma < 1.0:
            raise ConfigError(f"darkening exponent must be >= 1, got {self.gamma}")
        if any(not 0.0 < b <= 1.0 for b in self.bias):
            raise ConfigError("bias multipliers must lie in (0, 1]")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise sigma must be >= 0")

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "bias": list(self.bias),
                "noise_sigma": self.noise_sigma, "seed": self.seed}


def quantize(data: np.ndarray, bit_depth: int) -> np.ndarray:
    """Snap values to the bit-depth grid (round-half-away, clipped)."""
    levels = bit_depth - 1
    return np.clip(np.rint(data * levels), 0, levels) / levels


def darken(images: ImageBatch, spec: DegradationSpec) -> ImageBatch:
    rng = np.random.default_rng(spec.seed)
    out = np.empty_like(images.data)
    for ch in range(images.channels):
        out[..., ch] = spec.bias[ch % len(spec.bias)] * images.data[..., ch] ** spec.gamma
    if spec.noise_sigma > 0:
        out += rng.normal(0.0, spec.noise_sigma, size=out.shape)
    np.clip(out, 0.0, 1.0, out=out)
    return ImageBatch(data=out, bit_depth=images.bit_depth, ids=list(images.ids))


def invert_darken(images: ImageBatch, spec: DegradationSpec) -> ImageBatch:
    """Analytic inverse of :func:`darken` for sigma = 0 (test oracle)."""
    out = np.empty_like(images.data)
    for ch in range(images.channels):
        unbiased = images.data[..., ch] / spec.bias[ch % len(spec.bias)]
        out[..., ch] = np.clip(unbiased, 0.0, 1.0) ** (1.0 / spec.gamma)
    return ImageBatch(data=out, bit_depth=images.bit_depth, ids=list(images.ids))


# -- PPM / PNG ---------------------------------------------------------------

def write_ppm(path, image: np.ndarray) -> None:
    """Write an HWC [0,1] image as binary P6 at 8-bit depth."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError("PPM writer expects (H, W, 3)")
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _read_ppm_tokens(raw: bytes, count: int, path) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(raw):
            raise ImageReadError(f"{path}: truncated PPM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            try:
                tokens.append(int(raw[pos:end]))
            except ValueError:
                raise ImageReadError(f"{path}: bad PPM header token") from None
            pos = end
    return tokens, pos + 1  # single whitespace after maxval


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P6"):
        raise ImageReadError(f"{path}: not a binary P6 PPM")
    (w, h, maxval), offset = _read_ppm_tokens(raw[2:], 3, path)
    offset += 2
    if maxval != 255:
        raise ImageReadError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    need = w * h * 3
    pixels = raw[offset:offset + need]
    if len(pixels) != need:
        raise ImageReadError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3) / 255.0


def _read_png(path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ImageReadError(f"{path}: PNG support requires Pillow") from exc
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=np.uint8) / 255.0
    except ImageReadError:
        raise
    except Exception as exc:
        raise ImageReadError(f"{path}: {exc}") from exc


def _write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_images(paths, bit_depth: int = 256) -> ImageBatch:
    """Load PNG/PPM files (a directory loads every image inside, sorted)."""
    if isinstance(paths, (str, Path)):
        p = Path(paths)
        if p.is_dir():
            paths = sorted(q for q in p.iterdir()
                           if q.suffix.lower() in (".ppm", ".png"))
        else:
            paths = [p]
    paths = [Path(p) for p in paths]
    if not paths:
        raise InputError("no image files to load")
    frames = []
    for p in paths:
        if not p.exists():
            raise ImageReadError(f"{p}: no such file")
        if p.suffix.lower() == ".ppm":
            frames.append(read_ppm(p))
        elif p.suffix.lower() == ".png":
            frames.append(_read_png(p))
        else:
            raise ImageReadError(f"{p}: unsupported format {p.suffix!r}")
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise InputError(f"images disagree on shape: {sorted(shapes)}")
    return ImageBatch(data=np.stack(frames), bit_depth=bit_depth,
                      ids=[p.stem for p in paths])


def save_images(batch: ImageBatch, out_dir, fmt: str = "ppm") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(len(batch)):
        path = out_dir / f"{batch.ids[i]}.{fmt}"
        if fmt == "ppm":
            write_ppm(path, batch.data[i])
        elif fmt == "png":
            _write_png(path, batch.data[i])
        else:
            raise ConfigError(f"unsupported output format {fmt!r}")
        written.append(path)
    return written


def load_video(path) -> VideoClip:
    """Read a directory of frame images in lexicographic order."""
    p = Path(path)
    if not p.is_dir():
        raise InputError(f"{p}: video input must be a frame directory")
    files = sorted(q for q in p.iterdir()
                   if q.suffix.lower() in (".ppm", ".png"))
    if not files:
        raise InputError(f"{p}: no frame images found")
    batch = load_images(files)
    return VideoClip(frames=batch.data, bit_depth=batch.bit_depth,
                     frame_names=[f.stem for f in files])


def save_video(clip: VideoClip, out_dir) -> list[Path]:
    batch = ImageBatch(data=clip.frames, bit_depth=clip.bit_depth,
                       ids=list(clip.frame_names))
    return save_images(batch, out_dir)


# -- CRF concavity analysis ----------------------------------------------------

@dataclass(frozen=True)
class CrfRecord:
    """One named response curve sampled on a uniform irradiance grid."""

    name: str
    samples: np.ndarray


@dataclass(frozen=True)
class CrfStatistics:
    negative_fraction: float
    curve_names: list[str]
    curve_negative_fractions: list[float]
    curve_classes: list[str]


def analyze_crf_dataset(records: list[CrfRecord]) -> CrfStatistics:
    """Fraction of strictly negative discrete second differences, with a
    concave/convex call per curve."""
    if not records:
        raise InputError("no CRF records to analyze")
    total = 0
    negative = 0
    names, fracs, classes = [], [], []
    for rec in records:
        s = np.asarray(rec.samples, dtype=np.float64)
        if s.size < 3:
            raise InputError(f"CRF record {rec.name!r} has fewer than 3 samples")
        second = np.diff(s, n=2)
        neg = int((second < 0).sum())
        pos = int((second > 0).sum())
        total += second.size
        negative += neg
        names.append(rec.name)
        fracs.append(neg / second.size)
        classes.append("concave" if neg > pos else
                       "convex" if pos > neg else "neutral")
    return CrfStatistics(negative_fraction=negative / total,
                         curve_names=names,
                         curve_negative_fractions=fracs,
                         curve_classes=classes)


_FLOAT_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?$")


def parse_crf_file(path) -> list[CrfRecord]:
    """Tolerant reader for whitespace-separated CRF dumps.

    Records are delimited by lines whose first token is not a number. When a
    record carries both irradiance and intensity arrays (2048+ floats, as in
    DoRF-style files), the trailing 1024 values are taken as the curve.
    """
    records: list[CrfRecord] = []
    name = None
    floats: list[float] = []

    def flush():
        nonlocal name, floats
        if name is not None and floats:
            data = np.asarray(floats)
            if data.size >= 2048:
                data = data[-1024:]
            records.append(CrfRecord(name=name, samples=data))
        floats = []

    with open(path) as fh:
        for line in fh:
            tokens = line.split()
            if not tokens:
                continue
            if _FLOAT_RE.match(tokens[0]):
                if name is None:
                    name = "curve-0"
                floats.extend(float(t) for t in tokens)
            else:
                marker = tokens[0].rstrip("=")
                if marker in ("I", "B"):  # section labels inside one record
                    continue
                flush()
                name = " ".join(tokens)
    flush()
    if not records:
        raise InputError(f"{path}: no CRF records found")
    return records


def synthetic_concave_records(n_samples: int = 1024) -> list[CrfRecord]:
    """Bundled strictly concave set: x**gamma for a ladder of gamma < 1."""
    grid = np.linspace(0.0, 1.0, n_samples)
    return [CrfRecord(name=f"pow-{g:.2f}", samples=grid ** g)
            for g in (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)]


# -- desk corpus -----------------------------------------------------------------

CLASS_NAMES = ["disk", "ring", "square", "triangle", "hstripes", "vstripes",
               "dstripes", "checker", "radial", "cross"]


def _render_class(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Procedural shape/texture image for one class.

    Class evidence is deliberately low-contrast in the lower intensity
    range, where exponent darkening plus 8-bit quantization crushes it;
    the high-contrast distractor blobs carry no class signal. That makes
    the normal-to-dark accuracy drop large while keeping the evidence
    recoverable by the analytic inverse curve.
    """
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    # oriented background gradient gives every tile a positional cue
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy)
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-9)
    bg_a = rng.uniform(0.18, 0.36, size=3)
    bg_b = rng.uniform(0.36, 0.58, size=3)
    img = bg_a + ramp[..., None] * (bg_b - bg_a)

    cx, cy = rng.uniform(0.3, 0.7, size=2)
    radius = rng.uniform(0.18, 0.3)
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)

    if label == 0:            # disk
        mask = dist < radius
    elif label == 1:          # ring
        mask = (dist < radius) & (dist > radius * 0.55)
    elif label == 2:          # square
        half = radius * 0.9
        mask = (np.abs(xx - cx) < half) & (np.abs(yy - cy) < half)
    elif label == 3:          # triangle
        mask = ((yy - cy + radius > (xx - cx) * 1.7) &
                (yy - cy + radius > -(xx - cx) * 1.7) &
                (yy < cy + radius))
    elif label == 4:          # horizontal stripes
        freq = rng.uniform(4, 7)
        mask = np.sin(2 * np.pi * freq * yy) > 0.2
    elif label == 5:          # vertical stripes
        freq = rng.uniform(4, 7)
        mask = np.sin(2 * np.pi * freq * xx) > 0.2
    elif label == 6:          # diagonal stripes
        freq = rng.uniform(4, 7)
        mask = np.sin(2 * np.pi * freq * (xx + yy) / np.sqrt(2)) > 0.2
    elif label == 7:          # checkerboard
        freq = rng.integers(3, 6)
        mask = ((np.floor(xx * freq) + np.floor(yy * freq)) % 2).astype(bool)
    elif label == 8:          # concentric rings
        freq = rng.uniform(6, 10)
        mask = np.sin(2 * np.pi * freq * dist) > 0.1
    else:                     # cross
        bar = radius * 0.35
        mask = (((np.abs(xx - cx) < bar) & (np.abs(yy - cy) < radius)) |
                ((np.abs(yy - cy) < bar) & (np.abs(xx - cx) < radius)))

    # low-contrast class evidence: a small per-channel brightness offset
    delta = rng.uniform(0.10, 0.22) * rng.choice([-1.0, 1.0])
    offset = delta * rng.uniform(0.7, 1.3, size=3)
    img = np.where(mask[..., None], img + offset, img)

    # class-independent high-contrast blobs (survive darkening, carry no
    # label signal, and make every jigsaw tile distinctive)
    for _ in range(int(rng.integers(2, 4))):
        bx, by = rng.uniform(0.08, 0.92, size=2)
        br = rng.uniform(0.03, 0.07)
        bright = rng.random() < 0.5
        bcol = rng.uniform(0.75, 0.95, 3) if bright else rng.uniform(0.02, 0.12, 3)
        bmask = (xx - bx) ** 2 + (yy - by) ** 2 < br ** 2
        img = np.where(bmask[..., None], bcol, img)

    img += rng.normal(0.0, 0.02, size=img.shape)  # fine texture
    return np.clip(img, 0.0, 1.0)


@dataclass
class DeskCorpus:
    """Paired normal/darkened splits with labels and the degradation used."""

    normal_train: ImageBatch
    normal_test: ImageBatch
    dark_train: ImageBatch
    dark_test: ImageBatch
    train_labels: np.ndarray
    test_labels: np.ndarray
    degradation: DegradationSpec
    seed: int
    class_names: list[str] = field(default_factory=lambda: list(CLASS_NAMES))

    def manifest(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "class_names": self.class_names,
            "degradation": self.degradation.to_dict(),
            "splits": {
                "train": {"ids": self.normal_train.ids,
                          "labels": self.train_labels.tolist()},
                "test": {"ids": self.normal_test.ids,
                         "labels": self.test_labels.tolist()},
            },
        }


def build_desk_corpus(seed: int, n_train: int = 2000, n_test: int = 500,
                      size: int = 64, bit_depth: int = 256,
                      degradation: DegradationSpec | None = None) -> DeskCorpus:
    """Generate the paired corpus; identical seeds yield identical bytes."""
    if degradation is None:
        degradation = DegradationSpec(seed=seed + 1)

    def make_split(count: int, tag: str, offset: int):
        images = np.empty((count, size, size, 3))
        labels = np.empty(count, dtype=np.int64)
        ids = []
        for i in range(count):
            label = i % len(CLASS_NAMES)
            rng = np.random.default_rng([seed, offset + i])
            images[i] = quantize(_render_class(label, size, rng), bit_depth)
            labels[i] = label
            ids.append(f"{tag}-{i:05d}")
        return ImageBatch(data=images, bit_depth=bit_depth, ids=ids), labels

    normal_train, train_labels = make_split(n_train, "train", 0)
    normal_test, test_labels = make_split(n_test, "test", 1_000_000)

    def darken_split(batch: ImageBatch, seed_offset: int) -> ImageBatch:
        spec = DegradationSpec(gamma=degradation.gamma, bias=degradation.bias,
                               noise_sigma=degradation.noise_sigma,
                               seed=degradation.seed + seed_offset)
        dark = darken(batch, spec)
        return ImageBatch(data=quantize(dark.data, bit_depth),
                          bit_depth=bit_depth, ids=list(batch.ids))

    return DeskCorpus(
        normal_train=normal_train, normal_test=normal_test,
        dark_train=darken_split(normal_train, 0),
        dark_test=darken_split(normal_test, 1),
        train_labels=train_labels, test_labels=test_labels,
        degradation=degradation, seed=seed)


def save_corpus(corpus: DeskCorpus, out_dir) -> Path:
    out_dir = Path(out_dir)
    for name, batch in [("normal_train", corpus.normal_train),
                        ("normal_test", corpus.normal_test),
                        ("dark_train", corpus.dark_train),
                        ("dark_test", corpus.dark_test)]:
        save_images(batch, out_dir / name)
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(corpus.manifest(), indent=2,
                                        sort_keys=True))
    return manifest_path


def load_corpus(manifest_path) -> DeskCorpus:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    spec = DegradationSpec(**manifest["degradation"])
    splits = manifest["splits"]

    def batch(dirname):
        return load_images(root / dirname)

    return DeskCorpus(
        normal_train=batch("normal_train"), normal_test=batch("normal_test"),
        dark_train=batch("dark_train"), dark_test=batch("dark_test"),
        train_labels=np.asarray(splits["train"]["labels"], dtype=np.int64),
        test_labels=np.asarray(splits["test"]["labels"], dtype=np.int64),
        degradation=spec, seed=manifest["seed"],
        class_names=manifest["class_names"])
