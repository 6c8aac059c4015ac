"""Dataset ingestion, matrix persistence, corruption and synthetic data.

Images are read as grayscale, scaled into [0, 1] and vectorized in
column-major (Fortran) order, one sample per column.
"""

import csv
import json
import math
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import DataError
from .samples import SampleMatrix

try:  # PNG decoding is optional
    from PIL import Image as _PILImage
except ImportError:  # pragma: no cover
    _PILImage = None

PNG_SUPPORTED = _PILImage is not None

MATRIX_MAGIC = b"DLRRMAT1"
_HEADER = struct.Struct("<8sQQ")


# ---------------------------------------------------------------------------
# binary matrix container


def write_matrix(path, A):
    """Write `A` as magic, u64 rows, u64 cols, column-major little-endian f64."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise DataError(f"can only store 2-D matrices, got shape {A.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, A.shape[0], A.shape[1]))
        fh.write(A.astype("<f8").tobytes(order="F"))


def read_matrix(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataError(f"{path}: truncated matrix header")
        magic, rows, cols = _HEADER.unpack(head)
        if magic != MATRIX_MAGIC:
            raise DataError(f"{path}: not a matrix container (bad magic)")
        payload = fh.read()
    if len(payload) != rows * cols * 8:
        raise DataError(f"{path}: expected {rows * cols * 8} payload bytes, got {len(payload)}")
    A = np.frombuffer(payload, dtype="<f8").reshape((rows, cols), order="F")
    # C order so BLAS reductions match freshly computed arrays bit for bit
    return np.ascontiguousarray(A, dtype=np.float64)


def save_samples(path, samples):
    """Store a SampleMatrix as a matrix container plus a JSON label sidecar."""
    path = Path(path)
    write_matrix(path, samples.data)
    meta = {
        "labels": [int(v) for v in samples.labels],
        "geometry": list(samples.geometry) if samples.geometry else None,
    }
    with open(_labels_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)


def load_samples(path):
    path = Path(path)
    data = read_matrix(path)
    side = _labels_path(path)
    if not side.exists():
        raise DataError(f"{path}: missing label sidecar {side}")
    with open(side, encoding="utf-8") as fh:
        meta = json.load(fh)
    geometry = tuple(meta["geometry"]) if meta.get("geometry") else None
    return SampleMatrix(data, np.asarray(meta["labels"], dtype=np.int64), geometry)


def _labels_path(path):
    return Path(str(path) + ".labels.json")


# ---------------------------------------------------------------------------
# images


def read_pgm(path):
    """Decode an ASCII (P2) or binary (P5) PGM into floats in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(raw):
            c = raw[pos : pos + 1]
            if c == b"#":
                while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        return raw[start:pos]

    magic = next_token()
    if magic not in (b"P2", b"P5"):
        raise DataError(f"{path}: unsupported PGM magic {magic!r}")
    try:
        width, height, maxval = (int(next_token()) for _ in range(3))
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise DataError(f"{path}: invalid PGM dimensions or maxval")
    count = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else "u1"
        size = np.dtype(dtype).itemsize * count
        if len(raw) - pos < size:
            raise DataError(f"{path}: truncated PGM raster")
        pixels = np.frombuffer(raw[pos : pos + size], dtype=dtype).astype(np.float64)
    else:
        body = raw[pos:].split()
        if len(body) < count:
            raise DataError(f"{path}: truncated PGM raster")
        try:
            pixels = np.array([int(t) for t in body[:count]], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}: malformed PGM raster") from exc
    if np.any(pixels > maxval):
        raise DataError(f"{path}: pixel value above maxval")
    return pixels.reshape(height, width) / maxval


def write_pgm(path, image, binary=True, maxval=255):
    """Write a [0, 1] grayscale image as PGM (mostly for fixtures)."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w = img.shape
    q = np.rint(img * maxval).astype(np.int64)
    with open(path, "wb") as fh:
        if binary:
            fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
            fh.write(q.astype(">u2" if maxval > 255 else "u1").tobytes())
        else:
            fh.write(f"P2\n{w} {h}\n{maxval}\n".encode("ascii"))
            for row in q:
                fh.write((" ".join(str(v) for v in row) + "\n").encode("ascii"))


def read_image(path):
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return read_pgm(path)
    if not PNG_SUPPORTED:
        raise DataError(f"{path}: only PGM is supported without Pillow installed")
    try:
        with _PILImage.open(path) as im:
            mode = im.mode
            arr = np.asarray(im.convert("I;16") if mode.startswith("I;16") else im.convert("L"))
    except OSError as exc:
        raise DataError(f"{path}: cannot decode image: {exc}") from exc
    peak = 65535.0 if arr.dtype == np.uint16 else 255.0
    return arr.astype(np.float64) / peak


def _resize(img, geometry):
    if not PNG_SUPPORTED:
        raise DataError("resizing requires Pillow")
    h, w = geometry
    im = _PILImage.fromarray(img.astype(np.float32), mode="F")
    return np.clip(np.asarray(im.resize((w, h), _PILImage.BILINEAR), dtype=np.float64), 0.0, 1.0)


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    image_geometry: Optional[Tuple[int, int]] = None
    allow_resize: bool = False

    @classmethod
    def read(cls, path, image_geometry=None, allow_resize=False):
        """Parse a UTF-8 CSV with header ``path,label,split``.

        Relative paths resolve against the manifest's directory. Extra
        columns are ignored.
        """
        base = Path(path).parent
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"path", "label", "split"} - set(reader.fieldnames or ())
            if missing:
                raise DataError(f"{path}: manifest missing columns {sorted(missing)}")
            for lineno, row in enumerate(reader, start=2):
                split = row["split"].strip().lower()
                if split not in ("train", "test"):
                    raise DataError(f"{path}:{lineno}: split must be train or test")
                try:
                    label = int(row["label"])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: non-integer label") from exc
                p = Path(row["path"].strip())
                if not p.is_absolute():
                    p = base / p
                entries.append(ManifestEntry(str(p), label, split))
        manifest = cls(entries, image_geometry, allow_resize)
        manifest.validate()
        return manifest

    def write(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "label", "split"])
            for e in self.entries:
                w.writerow([e.path, e.label, e.split])

    def validate(self):
        train_labels = {e.label for e in self.entries if e.split == "train"}
        test_only = {e.label for e in self.entries if e.split == "test"} - train_labels
        if test_only:
            raise DataError(f"labels {sorted(test_only)} have no training samples")


def load_dataset(manifest):
    """Decode every manifest entry into (train, test) sample matrices.

    The test matrix may have zero columns.
    """
    manifest.validate()
    geometry = manifest.image_geometry
    cols = {"train": [], "test": []}
    labels = {"train": [], "test": []}
    for e in manifest.entries:
        if not os.path.exists(e.path):
            raise DataError(f"missing image {e.path}")
        img = read_image(e.path)
        if geometry is None:
            geometry = img.shape
        if img.shape != tuple(geometry):
            if not manifest.allow_resize:
                raise DataError(
                    f"{e.path}: geometry {img.shape} differs from {tuple(geometry)} "
                    "and resizing is disabled"
                )
            img = _resize(img, geometry)
        cols[e.split].append(img.reshape(-1, order="F"))
        labels[e.split].append(e.label)
    m = int(geometry[0] * geometry[1]) if geometry is not None else 0
    out = []
    for split in ("train", "test"):
        data = np.column_stack(cols[split]) if cols[split] else np.zeros((m, 0))
        out.append(SampleMatrix(data, np.asarray(labels[split], dtype=np.int64), tuple(geometry) if geometry else None))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# corruption


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    sample_fraction: float
    per_image_extent: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("pixel", "block"):
            raise DataError(f"unknown corruption kind {self.kind!r}")
        if not 0.0 <= self.sample_fraction <= 1.0:
            raise DataError("sample_fraction must lie in [0, 1]")
        if not 0.0 < self.per_image_extent <= 1.0:
            raise DataError("per_image_extent must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


def corrupted_count(n, fraction):
    # round first so 0.2 * 150 does not ceil to 31
    return min(n, int(math.ceil(round(fraction * n, 9))))


def block_side(geometry, extent):
    return max(1, int(round(extent * min(geometry))))


def checkerboard(side, cell=None):
    """Deterministic 0/1 checkerboard used when no occluder image is given."""
    cell = cell or max(1, side // 4)
    ii, jj = np.indices((side, side))
    return (((ii // cell) + (jj // cell)) % 2).astype(np.float64)


def _fit_occluder(occluder, side):
    occ = np.asarray(occluder, dtype=np.float64)
    if occ.ndim != 2 or occ.size == 0:
        raise DataError("occluder must be a non-empty 2-D image")
    rows = np.minimum((np.arange(side) * occ.shape[0]) // side, occ.shape[0] - 1)
    cols = np.minimum((np.arange(side) * occ.shape[1]) // side, occ.shape[1] - 1)
    return occ[np.ix_(rows, cols)]


def corrupt(X, spec, occluder=None, return_info=False):
    """Corrupt a random subset of columns.

    ``ceil(sample_fraction * n)`` columns are picked. Pixel corruption
    replaces ``round(per_image_extent * m)`` entries of each picked column
    with uniform [0, 1] draws; block corruption overwrites one square of side
    ``round(per_image_extent * min(h, w))`` with the occluder. Other columns
    are untouched.
    """
    rng = np.random.default_rng(spec.rng_seed)
    n = X.n_samples
    k = corrupted_count(n, spec.sample_fraction)
    chosen = np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    data = np.array(X.data, dtype=np.float64, copy=True)
    info = {"columns": [int(c) for c in chosen], "regions": []}
    if spec.kind == "pixel":
        m = X.dim
        count = max(1, int(round(spec.per_image_extent * m))) if m else 0
        for j in chosen:
            rows = rng.choice(m, size=count, replace=False)
            data[rows, j] = rng.uniform(0.0, 1.0, size=count)
    else:
        if X.geometry is None:
            raise DataError("block corruption needs image geometry")
        h, w = X.geometry
        side = block_side(X.geometry, spec.per_image_extent)
        patch = checkerboard(side) if occluder is None else _fit_occluder(occluder, side)
        for j in chosen:
            top = int(rng.integers(0, h - side + 1))
            left = int(rng.integers(0, w - side + 1))
            img = data[:, j].reshape((h, w), order="F")
            img[top : top + side, left : left + side] = patch
            data[:, j] = img.reshape(-1, order="F")
            info["regions"].append((int(j), top, left, side))
    out = X.with_data(data)
    return (out, info) if return_info else out


# ---------------------------------------------------------------------------
# synthetic data


def synth_multisubspace(
    classes,
    ambient_dim,
    rank,
    per_class,
    noise=0.0,
    rng_seed=0,
    orthogonal=False,
    geometry=None,
    scale=1.0,
):
    """Draw each class from its own random ``rank``-dimensional subspace.

    Clean columns have norm `scale` (unit by default); the observed matrix
    adds Gaussian noise whose expected column norm is ``noise * scale``. Returns ``(observed, clean)``
    with columns grouped by class (labels ``0..classes-1``).
    """
    if classes < 1 or rank < 1:
        raise DataError("classes and rank must be positive")
    if rank >= ambient_dim:
        raise DataError("rank must be smaller than ambient_dim")
    if per_class <= rank:
        raise DataError("per_class must exceed rank")
    if noise < 0:
        raise DataError("noise must be nonnegative")
    if not scale > 0:
        raise DataError("scale must be positive")
    if orthogonal and classes * rank > ambient_dim:
        raise DataError("orthogonal subspaces need classes * rank <= ambient_dim")
    rng = np.random.default_rng(rng_seed)
    if orthogonal:
        Q, _ = np.linalg.qr(rng.standard_normal((ambient_dim, classes * rank)))
        bases = [Q[:, c * rank : (c + 1) * rank] for c in range(classes)]
    else:
        bases = [np.linalg.qr(rng.standard_normal((ambient_dim, rank)))[0] for _ in range(classes)]
    clean = []
    for U in bases:
        block = U @ rng.standard_normal((rank, per_class))
        clean.append(block / np.linalg.norm(block, axis=0))
    clean = scale * np.hstack(clean)
    observed = clean + scale * noise * rng.standard_normal(clean.shape) / math.sqrt(ambient_dim)
    labels = np.repeat(np.arange(classes), per_class)
    return SampleMatrix(observed, labels, geometry), clean
