"""Dataset ingestion and the synthetic generator used for desk-scale checks.

Images are 60x60 8-bit grayscale PGM (P5) files, normalized per image to zero
mean and unit variance at decode time. Manifests are UTF-8 CSV with a header
line declaring the task layout:

    #M=<int>,T=<int>,attrs=<name:group;...>
    path,y1,...,yM,a1,...,aT

Attribute value -1 marks a missing label (mask 0). The synthetic generator
draws a latent vector per sample, renders a blob image from the landmark
positions it induces, and thresholds linear functions of the latent to get
attribute labels, so ground-truth task correlations are analytic.
"""
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, FormatError
from .heads import TaskLayout

IMAGE_SIDE = 60
_VAR_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# images

def normalize_image(gray):
    """Map raw intensities to zero mean, unit variance; a constant image
    (zero variance) maps to all zeros."""
    gray = np.asarray(gray, dtype=np.float64)
    centered = gray - gray.mean()
    var = centered.var()
    if var < _VAR_FLOOR:
        return np.zeros_like(gray)
    return centered / np.sqrt(var)


def read_pgm(path):
    """Read an 8-bit binary PGM (P5). Returns the raw uint8 array."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise FormatError(f"cannot read image {path}: {e}") from e
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as e:
        raise FormatError(f"{path}: bad PGM header") from e
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def write_pgm(path, gray):
    """Write an 8-bit binary PGM; lossless round-trip with read_pgm."""
    gray = np.asarray(gray)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise FormatError("write_pgm expects a 2-D uint8 array")
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(gray.tobytes())


def decode_image(path, side=IMAGE_SIDE):
    """Read a PGM, require side x side, and normalize. Returns [1, side, side]."""
    raw = read_pgm(path)
    if raw.shape != (side, side):
        raise FormatError(f"{path}: expected {side}x{side} image, got {raw.shape[1]}x{raw.shape[0]}")
    return normalize_image(raw.astype(np.float64))[None, :, :]


# ---------------------------------------------------------------------------
# samples and datasets

@dataclass
class Sample:
    """One training example: normalized image, landmark targets in [0, 1],
    binary attributes with a presence mask."""
    image: np.ndarray       # (1, side, side)
    landmarks: np.ndarray   # (M,)
    attributes: np.ndarray  # (T,) in {0, 1}
    attr_mask: np.ndarray   # (T,) in {0, 1}


class Dataset:
    """A task layout plus samples; images may be decoded lazily from paths."""

    def __init__(self, layout, samples=None, records=None, latents=None):
        self.layout = layout
        self._samples = list(samples) if samples is not None else None
        self._records = records
        self._cache = {}
        self.latents = latents
        if self._samples is None and self._records is None:
            self._samples = []

    def __len__(self):
        return len(self._samples) if self._samples is not None else len(self._records)

    def __getitem__(self, i):
        if self._samples is not None:
            return self._samples[i]
        if i not in self._cache:
            path, landmarks, attributes, mask = self._records[i]
            self._cache[i] = Sample(decode_image(path), landmarks, attributes, mask)
        return self._cache[i]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def take(self, indices):
        """Eagerly materialized subset in the given order."""
        return Dataset(self.layout, samples=[self[i] for i in indices],
                       latents=None if self.latents is None else self.latents[list(indices)])


def split_indices(n, validation_fraction, seed):
    """Seed-deterministic (train, validation) index arrays."""
    if not 0.0 < validation_fraction <= 0.5:
        raise ConfigError(f"validation fraction must be in (0, 0.5], got {validation_fraction}")
    if n < 2:
        raise ConfigError(f"dataset too small to split: {n} samples")
    order = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(validation_fraction * n)))
    return order[n_val:], order[:n_val]


def split(dataset, validation_fraction, seed):
    """Disjoint, exhaustive, seed-deterministic train/validation split."""
    train_idx, val_idx = split_indices(len(dataset), validation_fraction, seed)
    return dataset.take(train_idx), dataset.take(val_idx)


# ---------------------------------------------------------------------------
# manifests

def _format_float(x):
    return repr(float(x))


def write_manifest(path, layout, rows):
    """rows: iterable of (image path, landmarks, attributes, mask)."""
    attrs = ";".join(f"{n}:{g}" for n, g in zip(layout.attr_names, layout.attr_groups))
    lines = [f"#M={layout.n_landmark},T={layout.n_attr},attrs={attrs}"]
    for img_path, landmarks, attributes, mask in rows:
        cells = [img_path]
        cells += [_format_float(v) for v in landmarks]
        for a, m in zip(attributes, mask):
            cells.append(str(int(a)) if m else "-1")
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line):
    if not line.startswith("#"):
        raise FormatError("manifest must start with a '#M=...,T=...,attrs=...' header")
    fields = {}
    for part in line[1:].split(",", 2):
        if "=" not in part:
            raise FormatError(f"bad manifest header field: {part!r}")
        key, value = part.split("=", 1)
        fields[key.strip()] = value.strip()
    missing = {"M", "T", "attrs"} - set(fields)
    if missing:
        raise FormatError(f"manifest header missing {sorted(missing)}")
    try:
        m, t = int(fields["M"]), int(fields["T"])
    except ValueError as e:
        raise FormatError(f"bad manifest header: {e}") from e
    names, groups = [], []
    if fields["attrs"]:
        for tok in fields["attrs"].split(";"):
            if ":" not in tok:
                raise FormatError(f"bad attribute declaration: {tok!r}")
            name, group = tok.split(":", 1)
            names.append(name)
            groups.append(group)
    if len(names) != t:
        raise FormatError(f"header declares T={t} but lists {len(names)} attributes")
    return TaskLayout(m, tuple(names), tuple(groups))


def load_manifest(path, eye_points=None):
    """Parse a manifest into a lazily decoded Dataset."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise FormatError(f"cannot read manifest {path}: {e}") from e
    if not lines:
        raise FormatError(f"{path}: empty file, expected a header line")
    layout = _parse_header(lines[0])
    if eye_points is not None:
        layout = replace(layout, eye_points=tuple(eye_points))
    base = os.path.dirname(os.path.abspath(path))
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        expected = 1 + layout.n_landmark + layout.n_attr
        if len(cells) != expected:
            raise FormatError(
                f"{path}:{lineno}: expected {expected} columns, got {len(cells)}")
        img_path = cells[0]
        if not os.path.isabs(img_path):
            img_path = os.path.join(base, img_path)
        if not os.path.exists(img_path):
            raise FormatError(f"{path}:{lineno}: missing image {cells[0]}")
        try:
            landmarks = np.array([float(v) for v in cells[1:1 + layout.n_landmark]])
            raw_attrs = [int(v) for v in cells[1 + layout.n_landmark:]]
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from e
        mask = np.array([0.0 if v == -1 else 1.0 for v in raw_attrs])
        attributes = np.array([0.0 if v == -1 else float(v) for v in raw_attrs])
        if np.any((attributes != 0.0) & (attributes != 1.0)):
            raise FormatError(f"{path}:{lineno}: attribute values must be 0, 1 or -1")
        records.append((img_path, landmarks, attributes, mask))
    return Dataset(layout, records=records)


# ---------------------------------------------------------------------------
# synthetic generator

@dataclass
class SynthSpec:
    """Recipe for a synthetic multi-task dataset with known structure.

    Landmark coordinates are base + offset_scale * (landmark_map @ z) plus
    Gaussian noise; blobs are rendered at the resulting positions. Attribute
    t is 1[attr_map[t] @ z > threshold], flipped with probability flip_prob;
    a zero dependency row makes the label a fair coin independent of z.
    """
    latent_dim: int
    n_samples: int
    attr_map: np.ndarray          # (T, latent_dim), rows unit or zero
    landmark_map: np.ndarray      # (M, latent_dim), rows unit norm
    base_landmarks: np.ndarray    # (M,) in [0, 1]
    seed: int = 0
    offset_scale: float = 0.08
    landmark_noise: float = 0.0
    attr_thresholds: np.ndarray = None   # (T,)
    attr_flip_prob: np.ndarray = None    # (T,)
    attr_names: tuple = None
    attr_groups: tuple = None
    eye_points: tuple = (0, 1)
    blob_sigma: float = 0.05
    blob_amplitude: float = 0.9
    blob_amplitudes: np.ndarray = None   # per-point override, (M/2,)
    background: float = 0.15
    appearance_jitter: float = 0.0       # per-sample nuisance variation in [0, 1)
    rendered_points: int = None          # draw blobs for only the first k points

    def __post_init__(self):
        self.attr_map = np.asarray(self.attr_map, dtype=np.float64)
        self.landmark_map = np.asarray(self.landmark_map, dtype=np.float64)
        self.base_landmarks = np.asarray(self.base_landmarks, dtype=np.float64)
        t = self.attr_map.shape[0]
        m = self.landmark_map.shape[0]
        if self.base_landmarks.shape != (m,) or m % 2:
            raise ConfigError("landmark map and base positions must give an even M")
        if self.attr_thresholds is None:
            self.attr_thresholds = np.zeros(t)
        if self.attr_flip_prob is None:
            self.attr_flip_prob = np.zeros(t)
        self.attr_thresholds = np.asarray(self.attr_thresholds, dtype=np.float64)
        self.attr_flip_prob = np.asarray(self.attr_flip_prob, dtype=np.float64)
        if self.attr_names is None:
            self.attr_names = tuple(f"attr_{i}" for i in range(t))
        if self.attr_groups is None:
            self.attr_groups = tuple("all" for _ in range(t))
        if self.landmark_noise < 0 or self.offset_scale <= 0:
            raise ConfigError("noise scales must be >= 0 and offset_scale > 0")
        # normalize dependency rows; zero rows stay zero (coin-flip tasks)
        for mat in (self.attr_map, self.landmark_map):
            norms = np.linalg.norm(mat, axis=1)
            nz = norms > 0
            mat[nz] /= norms[nz, None]
        if np.any(np.linalg.norm(self.landmark_map, axis=1) == 0):
            raise ConfigError("landmark map rows must be nonzero")
        if self.rendered_points is None:
            self.rendered_points = m // 2
        if not 1 <= self.rendered_points <= m // 2:
            raise ConfigError("rendered_points must be in [1, number of points]")
        if self.blob_amplitudes is None:
            self.blob_amplitudes = np.full(self.rendered_points, self.blob_amplitude)
        self.blob_amplitudes = np.asarray(self.blob_amplitudes, dtype=np.float64)
        if self.blob_amplitudes.shape != (self.rendered_points,):
            raise ConfigError("blob_amplitudes must have one entry per rendered point")

    def layout(self):
        return TaskLayout(self.landmark_map.shape[0], self.attr_names,
                          self.attr_groups, self.eye_points)

    @property
    def n_attr(self):
        return self.attr_map.shape[0]


def render_image(landmarks, spec, jitter=None):
    """Deterministic face-like image: one Gaussian blob per landmark point on
    a broad oval background, quantized to 8-bit.

    jitter, when given, is (amplitude scales (M/2,), sigma scale, background
    scale): per-sample appearance nuisance that leaves the targets untouched.
    """
    side = IMAGE_SIDE
    grid = (np.arange(side) + 0.5) / side
    u, v = np.meshgrid(grid, grid, indexing="xy")   # u: x (columns), v: y (rows)
    amp_scale, sigma_scale, bg_scale = jitter if jitter is not None else (1.0, 1.0, 1.0)
    img = bg_scale * spec.background * np.exp(
        -(((u - 0.5) / 0.35) ** 2 + ((v - 0.5) / 0.42) ** 2))
    inv = 1.0 / (2.0 * (sigma_scale * spec.blob_sigma) ** 2)
    amps = spec.blob_amplitudes * amp_scale
    for p in range(spec.rendered_points):
        x, y = landmarks[2 * p], landmarks[2 * p + 1]
        img += amps[p] * np.exp(-((u - x) ** 2 + (v - y) ** 2) * inv)
    return np.round(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)


def _sample_jitters(spec, rng):
    """Per-sample appearance nuisance draws; None when jitter is disabled."""
    if spec.appearance_jitter <= 0.0:
        return [None] * spec.n_samples
    j = spec.appearance_jitter
    n_points = spec.rendered_points
    out = []
    for _ in range(spec.n_samples):
        amp = 1.0 + j * rng.uniform(-1.0, 1.0, n_points)
        sigma = 1.0 + 0.5 * j * rng.uniform(-1.0, 1.0)
        bg = 1.0 + j * rng.uniform(-1.0, 1.0)
        out.append((amp, sigma, bg))
    return out


def synth_arrays(spec):
    """Latents, blob positions, landmark targets, labels and masks.

    Blobs sit at the exact latent-driven positions; landmark noise perturbs
    only the regression targets, so with zero noise the image pins the
    targets exactly.
    """
    rng = np.random.default_rng(spec.seed)
    n, latent_dim = spec.n_samples, spec.latent_dim
    z = rng.standard_normal((n, latent_dim))
    positions = np.clip(spec.base_landmarks + spec.offset_scale * z @ spec.landmark_map.T,
                        0.0, 1.0)
    landmarks = positions
    if spec.landmark_noise > 0:
        landmarks = np.clip(
            positions + spec.landmark_noise * rng.standard_normal(positions.shape),
            0.0, 1.0)
    scores = z @ spec.attr_map.T
    labels = (scores > spec.attr_thresholds).astype(np.float64)
    zero_rows = np.linalg.norm(spec.attr_map, axis=1) == 0
    if zero_rows.any():
        coins = rng.integers(0, 2, size=(n, int(zero_rows.sum()))).astype(np.float64)
        labels[:, zero_rows] = coins
    if np.any(spec.attr_flip_prob > 0):
        flips = rng.random((n, spec.n_attr)) < spec.attr_flip_prob
        labels = np.where(flips, 1.0 - labels, labels)
    mask = np.ones_like(labels)
    jitters = _sample_jitters(spec, rng)
    return z, positions, landmarks, labels, mask, jitters


def generate_synthetic(spec):
    """Materialize the synthetic dataset in memory (images pre-normalized,
    byte-for-byte identical to a write-PGM-then-decode round trip)."""
    z, positions, landmarks, labels, mask, jitters = synth_arrays(spec)
    samples = []
    for i in range(spec.n_samples):
        raw = render_image(positions[i], spec, jitters[i])
        samples.append(Sample(normalize_image(raw.astype(np.float64))[None],
                              landmarks[i], labels[i], mask[i]))
    return Dataset(spec.layout(), samples=samples, latents=z)


def write_synthetic(spec, out_dir):
    """Render the dataset to PGM files plus a manifest; returns the manifest
    path. Deterministic per seed."""
    os.makedirs(out_dir, exist_ok=True)
    z, positions, landmarks, labels, mask, jitters = synth_arrays(spec)
    rows = []
    for i in range(spec.n_samples):
        name = f"sample_{i:05d}.pgm"
        write_pgm(os.path.join(out_dir, name), render_image(positions[i], spec, jitters[i]))
        rows.append((name, landmarks[i], labels[i], mask[i]))
    manifest = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest, spec.layout(), rows)
    return manifest


def analytic_label_correlations(spec):
    """Planted Pearson correlation between each attribute label and each
    landmark coordinate, (T, M). Exact for the pre-clip linear model."""
    t, m = spec.n_attr, spec.landmark_map.shape[0]
    out = np.zeros((t, m))
    coord_sd = np.sqrt(spec.offset_scale ** 2 + spec.landmark_noise ** 2)
    for i in range(t):
        row = spec.attr_map[i]
        if np.linalg.norm(row) == 0:
            continue
        theta = spec.attr_thresholds[i]
        p_one = 1.0 - _phi_cdf(theta)
        denom = math.sqrt(p_one * (1.0 - p_one))
        gain = (1.0 - 2.0 * spec.attr_flip_prob[i]) * _phi_pdf(theta) / denom
        cosines = spec.landmark_map @ row
        out[i] = gain * cosines * spec.offset_scale / coord_sd
    return out


def _phi_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _phi_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def limit_attribute_labels(dataset, task, n_keep, seed):
    """Keep labels of one attribute on only n_keep samples (mask the rest).

    Returns a new eagerly materialized dataset.
    """
    n = len(dataset)
    keep = set(np.random.default_rng(seed).permutation(n)[:n_keep].tolist())
    samples = []
    for i, s in enumerate(dataset):
        mask = s.attr_mask.copy()
        if i not in keep:
            mask[task] = 0.0
        samples.append(Sample(s.image, s.landmarks, s.attributes, mask))
    return Dataset(dataset.layout, samples=samples, latents=dataset.latents)


# ---------------------------------------------------------------------------
# key=value spec files

def synth_spec_to_text(spec):
    lines = [
        f"latent_dim={spec.latent_dim}",
        f"n_samples={spec.n_samples}",
        f"seed={spec.seed}",
        f"offset_scale={_format_float(spec.offset_scale)}",
        f"landmark_noise={_format_float(spec.landmark_noise)}",
        f"blob_sigma={_format_float(spec.blob_sigma)}",
        f"blob_amplitude={_format_float(spec.blob_amplitude)}",
        f"background={_format_float(spec.background)}",
        f"appearance_jitter={_format_float(spec.appearance_jitter)}",
        f"rendered_points={spec.rendered_points}",
        f"eye_points={spec.eye_points[0]},{spec.eye_points[1]}",
        f"base_landmarks={','.join(_format_float(v) for v in spec.base_landmarks)}",
        f"blob_amplitudes={','.join(_format_float(v) for v in spec.blob_amplitudes)}",
        f"attr_names={';'.join(spec.attr_names)}",
        f"attr_groups={';'.join(spec.attr_groups)}",
        f"attr_thresholds={','.join(_format_float(v) for v in spec.attr_thresholds)}",
        f"attr_flip_prob={','.join(_format_float(v) for v in spec.attr_flip_prob)}",
    ]
    for i, row in enumerate(spec.landmark_map):
        lines.append(f"landmark_map_{i}={','.join(_format_float(v) for v in row)}")
    for i, row in enumerate(spec.attr_map):
        lines.append(f"attr_map_{i}={','.join(_format_float(v) for v in row)}")
    return "\n".join(lines) + "\n"


def synth_spec_from_text(text):
    fields = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"synth spec line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        m = sum(1 for k in fields if k.startswith("landmark_map_"))
        t = sum(1 for k in fields if k.startswith("attr_map_"))
        landmark_map = np.array([[float(v) for v in fields[f"landmark_map_{i}"].split(",")]
                                 for i in range(m)])
        attr_map = np.array([[float(v) for v in fields[f"attr_map_{i}"].split(",")]
                             for i in range(t)]) if t else np.zeros((0, int(fields["latent_dim"])))
        names = tuple(n for n in fields.get("attr_names", "").split(";") if n) or None
        groups = tuple(g for g in fields.get("attr_groups", "").split(";") if g) or None
        eye = tuple(int(v) for v in fields.get("eye_points", "0,1").split(","))
        spec = SynthSpec(
            latent_dim=int(fields["latent_dim"]),
            n_samples=int(fields["n_samples"]),
            attr_map=attr_map,
            landmark_map=landmark_map,
            base_landmarks=np.array([float(v) for v in fields["base_landmarks"].split(",")]),
            seed=int(fields.get("seed", 0)),
            offset_scale=float(fields.get("offset_scale", 0.08)),
            landmark_noise=float(fields.get("landmark_noise", 0.0)),
            attr_thresholds=np.array([float(v) for v in fields["attr_thresholds"].split(",")])
            if fields.get("attr_thresholds") else None,
            attr_flip_prob=np.array([float(v) for v in fields["attr_flip_prob"].split(",")])
            if fields.get("attr_flip_prob") else None,
            attr_names=names,
            attr_groups=groups,
            eye_points=eye,
            blob_sigma=float(fields.get("blob_sigma", 0.05)),
            blob_amplitudes=np.array([float(v) for v in fields["blob_amplitudes"].split(",")])
            if fields.get("blob_amplitudes") else None,
            blob_amplitude=float(fields.get("blob_amplitude", 0.9)),
            background=float(fields.get("background", 0.15)),
            appearance_jitter=float(fields.get("appearance_jitter", 0.0)),
            rendered_points=int(fields["rendered_points"])
            if fields.get("rendered_points") else None,
        )
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad synth spec: {e}") from e
    return spec
