"""Benchmark harness: methods x feature dims x seeds accuracy tables.

Configuration is an INI file parsed strictly: unknown sections or keys are
errors. Example::

    [experiment]
    methods = dlrr-cr, crc, nn
    dims = 10, 25, 50
    seeds = 0, 1, 2, 3, 4

    [data]
    source = synthetic

    [synthetic]
    classes = 5
    rank = 12
    train_per_class = 30
    test_per_class = 10
    height = 32
    width = 32

    [corruption]
    kind = block
    fraction = 0.2
    extent = 0.25
    apply_to = both
"""

import configparser
import csv
import logging
import re
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import (
    CorruptionSpec,
    DatasetManifest,
    ManifestEntry,
    corrupt,
    load_dataset,
    read_image,
    synth_multisubspace,
)
from .errors import ConfigError, DataError, DlrrError, StageError
from .pipeline import PipelineOptions, evaluate, train
from .samples import SampleMatrix
from .solver import SolverConfig, recover_dictionary

log = logging.getLogger(__name__)

_FULL = PipelineOptions()
_BASELINE = PipelineOptions(recover=False, correct_queries=False, pca_source="original")

# method -> (eta is forced to zero, pipeline options)
METHODS = {
    "dlrr-cr": (False, _FULL),
    "dlrr-src": (False, replace(_FULL, classifier="src")),
    "lrr-cr": (True, _FULL),
    "lrr-crc": (True, replace(_FULL, correct_queries=False)),
    "crc": (False, _BASELINE),
    "src": (False, replace(_BASELINE, classifier="src")),
    "lrc": (False, replace(_BASELINE, classifier="lrc")),
    "nn": (False, replace(_BASELINE, classifier="nn")),
}

# AR image indices 1-13 are session one, 14-26 session two; within a session
# the first seven are unoccluded, then three sunglasses, then three scarf.
AR_PROTOCOLS = {
    "ar-sunglasses": ({1, 2, 3, 4, 5, 6, 7, 8}, {14, 15, 16, 17, 18, 19, 20, 9, 10, 21, 22, 23}),
    "ar-scarf": ({1, 2, 3, 4, 5, 6, 7, 11}, {14, 15, 16, 17, 18, 19, 20, 12, 13, 24, 25, 26}),
    "ar-mixed": (
        {1, 2, 3, 4, 5, 6, 7, 8, 11},
        {14, 15, 16, 17, 18, 19, 20, 9, 10, 21, 22, 23, 12, 13, 24, 25, 26},
    ),
}

# Published AR accuracies (percent) at dims 25, 50, 75, 100, 200, 300, kept
# for side-by-side reporting only.
AR_DIMS = (25, 50, 75, 100, 200, 300)
AR_PUBLISHED = {
    "ar-sunglasses": {
        "dlrr-cr": (65.58, 82.00, 87.33, 90.00, 92.00, 91.75),
        "lrr-cr": (61.25, 81.58, 87.50, 89.50, 90.67, 90.58),
        "lrr-crc": (54.75, 75.67, 83.08, 86.67, 91.33, 92.08),
        "crc": (52.08, 73.67, 80.25, 84.67, 89.25, 90.50),
        "src": (56.67, 71.83, 75.67, 77.92, 82.25, 84.00),
        "lrc": (57.50, 68.08, 70.50, 71.75, 73.67, 73.92),
        "nn": (45.17, 51.00, 53.17, 54.58, 56.92, 57.17),
    },
    "ar-scarf": {
        "dlrr-cr": (58.25, 84.75, 88.50, 90.83, 91.58, 91.83),
        "lrr-cr": (53.50, 82.58, 87.75, 89.25, 89.67, 89.50),
        "lrr-crc": (46.08, 76.17, 83.33, 86.25, 90.67, 90.75),
        "crc": (45.08, 72.25, 80.50, 84.75, 90.00, 90.33),
        "src": (51.42, 66.25, 70.75, 74.75, 79.17, 80.58),
        "lrc": (56.42, 65.67, 68.08, 70.00, 70.58, 70.50),
        "nn": (39.75, 45.42, 47.00, 48.83, 50.50, 50.75),
    },
    "ar-mixed": {
        "dlrr-cr": (55.82, 81.53, 87.06, 88.59, 90.65, 90.29),
        "lrr-cr": (53.82, 78.29, 85.53, 88.00, 88.82, 88.53),
        "lrr-crc": (45.65, 72.76, 80.29, 85.53, 89.71, 90.12),
        "crc": (42.94, 69.29, 78.35, 82.12, 88.18, 89.53),
        "src": (51.06, 66.00, 70.88, 73.65, 78.06, 80.47),
        "lrc": (53.53, 64.71, 68.35, 69.41, 70.94, 70.76),
        "nn": (35.47, 40.65, 42.65, 44.12, 46.41, 47.06),
    },
}


def published_accuracy(protocol, method, dim):
    """Published AR accuracy in percent, or None when not tabulated."""
    row = AR_PUBLISHED.get(protocol, {}).get(method)
    if row is None or dim not in AR_DIMS:
        return None
    return row[AR_DIMS.index(dim)]


def _ints(s):
    return [int(v) for v in re.split(r"[,\s]+", s.strip()) if v]


def _strs(s):
    return [v for v in re.split(r"[,\s]+", s.strip()) if v]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _dim_map(s):
    out = {}
    for item in _strs(s):
        dim, _, lam = item.partition(":")
        if not lam:
            raise ValueError(f"expected dim:lambda, got {item!r}")
        out[int(dim)] = float(lam)
    return out


SCHEMA = {
    "experiment": {"methods": _strs, "dims": _ints, "seeds": _ints},
    "data": {
        "source": str,
        "manifest": str,
        "height": int,
        "width": int,
        "allow_resize": _bool,
        "train_per_class": int,
        "protocol": str,
    },
    "synthetic": {
        "classes": int,
        "rank": int,
        "train_per_class": int,
        "test_per_class": int,
        "noise": float,
        "scale": float,
        "height": int,
        "width": int,
    },
    "corruption": {
        "kind": str,
        "fraction": float,
        "extent": float,
        "apply_to": str,
        "occluder": str,
    },
    "solver": {
        "lambda": float,
        "eta": float,
        "mu0": float,
        "rho": float,
        "mu_max": float,
        "epsilon": float,
        "max_iter": int,
        "outer_passes": int,
        "lambda_per_dim": _dim_map,
    },
    "classifier": {"beta": float, "src_lambda": float, "dictionary_source": str},
}


@dataclass
class SyntheticParams:
    classes: int = 5
    rank: int = 12
    train_per_class: int = 30
    test_per_class: int = 10
    noise: float = 0.0
    scale: float = 1.0
    height: int = 32
    width: int = 32


@dataclass
class ExperimentConfig:
    methods: List[str] = field(default_factory=lambda: ["dlrr-cr", "crc"])
    dims: List[int] = field(default_factory=lambda: [50, 100, 300])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    source: str = "synthetic"
    manifest: Optional[str] = None
    geometry: Optional[Tuple[int, int]] = None
    allow_resize: bool = False
    train_per_class: Optional[int] = None
    protocol: Optional[str] = None
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)
    corruption_kind: str = "none"
    corruption_fraction: float = 0.1
    corruption_extent: Optional[float] = None
    corruption_apply_to: str = "both"
    occluder: Optional[str] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    lambda_per_dim: Dict[int, float] = field(default_factory=dict)
    beta: float = 1.1
    src_lambda: float = 0.001
    dictionary_source: str = "original"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.methods or not self.dims or not self.seeds:
            raise ConfigError("need at least one method, one dim and one seed")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
        if any(d < 1 for d in self.dims):
            raise ConfigError("dims must be positive")
        if self.source not in ("synthetic", "manifest"):
            raise ConfigError("data.source must be synthetic or manifest")
        if self.source == "manifest" and not self.manifest:
            raise ConfigError("data.manifest is required for manifest source")
        if self.protocol is not None and self.protocol not in AR_PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {sorted(AR_PROTOCOLS)}")
        if self.protocol and self.source != "manifest":
            raise ConfigError("AR protocols need a manifest source")
        if self.corruption_kind not in ("none", "pixel", "block"):
            raise ConfigError("corruption.kind must be none, pixel or block")
        if self.corruption_kind != "none" and self.corruption_extent is None:
            raise ConfigError("corruption.extent is required (per-image fraction or block side)")
        if self.corruption_apply_to not in ("train", "test", "both"):
            raise ConfigError("corruption.apply_to must be train, test or both")
        if self.dictionary_source not in ("original", "clean"):
            raise ConfigError("classifier.dictionary_source must be original or clean")
        if not self.beta > 0 or not self.src_lambda > 0:
            raise ConfigError("beta and src_lambda must be positive")

    def solver_for(self, dim, eta_zero=False):
        cfg = self.solver
        if dim in self.lambda_per_dim:
            cfg = cfg.with_(lam=self.lambda_per_dim[dim])
        if eta_zero:
            cfg = cfg.with_(eta=0.0)
        return cfg


def parse_config(text, base_dir=None):
    """Parse experiment INI text; unknown sections/keys raise ConfigError."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                values[(section, key)] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc

    def get(section, key, default=None):
        return values.get((section, key), default)

    kw = {}
    for key in ("methods", "dims", "seeds"):
        if ("experiment", key) in values:
            kw[key] = values[("experiment", key)]
    kw["source"] = get("data", "source", "synthetic")
    manifest = get("data", "manifest")
    if manifest and base_dir is not None and not Path(manifest).is_absolute():
        manifest = str(Path(base_dir) / manifest)
    kw["manifest"] = manifest
    if ("data", "height") in values or ("data", "width") in values:
        if ("data", "height") not in values or ("data", "width") not in values:
            raise ConfigError("[data] needs both height and width")
        kw["geometry"] = (get("data", "height"), get("data", "width"))
    kw["allow_resize"] = get("data", "allow_resize", False)
    kw["train_per_class"] = get("data", "train_per_class")
    kw["protocol"] = get("data", "protocol")
    syn = {k: v for (s, k), v in values.items() if s == "synthetic"}
    kw["synthetic"] = SyntheticParams(**syn)
    kw["corruption_kind"] = get("corruption", "kind", "none")
    kw["corruption_fraction"] = get("corruption", "fraction", 0.1)
    kw["corruption_extent"] = get("corruption", "extent")
    kw["corruption_apply_to"] = get("corruption", "apply_to", "both")
    occ = get("corruption", "occluder")
    if occ and base_dir is not None and not Path(occ).is_absolute():
        occ = str(Path(base_dir) / occ)
    kw["occluder"] = occ
    solver_kw = {}
    names = {"lambda": "lam"}
    for (s, k), v in values.items():
        if s == "solver" and k != "lambda_per_dim":
            solver_kw[names.get(k, k)] = v
    kw["solver"] = SolverConfig(**solver_kw)
    kw["lambda_per_dim"] = get("solver", "lambda_per_dim", {})
    kw["beta"] = get("classifier", "beta", 1.1)
    kw["src_lambda"] = get("classifier", "src_lambda", 0.001)
    kw["dictionary_source"] = get("classifier", "dictionary_source", "original")
    return ExperimentConfig(**kw)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


# ---------------------------------------------------------------------------
# data preparation


def ar_image_index(path):
    """AR image number (1..26) from names such as ``m-001-14.pgm``."""
    m = re.search(r"(\d+)\D*$", Path(path).stem)
    if not m:
        raise DataError(f"cannot read an AR image index from {path!r}")
    return int(m.group(1))


def ar_protocol_manifest(manifest, protocol):
    """Re-split an AR manifest according to one of the occlusion protocols.

    The manifest's own split column is ignored; images outside the
    protocol's train/test index sets are dropped.
    """
    train_idx, test_idx = AR_PROTOCOLS[protocol]
    entries = []
    for e in manifest.entries:
        idx = ar_image_index(e.path)
        if idx in train_idx:
            entries.append(ManifestEntry(e.path, e.label, "train"))
        elif idx in test_idx:
            entries.append(ManifestEntry(e.path, e.label, "test"))
    out = DatasetManifest(entries, manifest.image_geometry, manifest.allow_resize)
    out.validate()
    return out


def _seeds(seed):
    return [int(v) for v in np.random.SeedSequence(int(seed)).generate_state(4)]


def random_split(pool, train_per_class, seed):
    """Pick `train_per_class` columns of each class for training, rest test."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in pool.classes:
        idx = pool.class_indices(c)
        if len(idx) <= train_per_class:
            raise DataError(f"class {c} has {len(idx)} samples, need more than {train_per_class}")
        perm = rng.permutation(idx)
        train_idx.extend(perm[:train_per_class])
        test_idx.extend(perm[train_per_class:])
    return pool.subset(np.sort(train_idx)), pool.subset(np.sort(test_idx))


class DataSource:
    """Produces the (train, test) pair for each seed."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._loaded = None
        self._occluder = read_image(cfg.occluder) if cfg.occluder else None

    def _load(self):
        if self._loaded is None:
            cfg = self.cfg
            manifest = DatasetManifest.read(cfg.manifest, cfg.geometry, cfg.allow_resize)
            if cfg.protocol:
                manifest = ar_protocol_manifest(manifest, cfg.protocol)
            self._loaded = load_dataset(manifest)
        return self._loaded

    def split(self, seed):
        cfg = self.cfg
        s_data, s_split, s_train, s_test = _seeds(seed)
        if cfg.source == "synthetic":
            p = cfg.synthetic
            X, _ = synth_multisubspace(
                p.classes,
                p.height * p.width,
                p.rank,
                p.train_per_class + p.test_per_class,
                p.noise,
                s_data,
                geometry=(p.height, p.width),
                scale=p.scale,
            )
            train_set, test_set = random_split(X, p.train_per_class, s_split)
        else:
            train_set, test_set = self._load()
            if cfg.train_per_class:
                pool = SampleMatrix(
                    np.hstack([train_set.data, test_set.data]),
                    np.concatenate([train_set.labels, test_set.labels]),
                    train_set.geometry,
                )
                train_set, test_set = random_split(pool, cfg.train_per_class, s_split)
        if cfg.corruption_kind != "none":
            if cfg.corruption_apply_to in ("train", "both"):
                spec = CorruptionSpec(cfg.corruption_kind, cfg.corruption_fraction, cfg.corruption_extent, s_train)
                train_set = corrupt(train_set, spec, self._occluder)
            if cfg.corruption_apply_to in ("test", "both") and test_set.n_samples:
                spec = CorruptionSpec(cfg.corruption_kind, cfg.corruption_fraction, cfg.corruption_extent, s_test)
                test_set = corrupt(test_set, spec, self._occluder)
        return train_set.sorted_by_class(), test_set


# ---------------------------------------------------------------------------
# running


@dataclass
class CellResult:
    method: str
    dim: int
    seed: int
    accuracy: Optional[float]
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: List[CellResult]

    def mean_accuracy(self, method, dim):
        vals = [c.accuracy for c in self.cells if c.method == method and c.dim == dim and c.accuracy is not None]
        return float(np.mean(vals)) if vals else None

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "results_long.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "dim", "seed", "accuracy"])
            for c in self.cells:
                w.writerow([c.method, c.dim, c.seed, "" if c.accuracy is None else repr(c.accuracy)])
        with open(out / "results_mean.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "dim", "mean_accuracy"])
            for m in self.config.methods:
                for d in self.config.dims:
                    v = self.mean_accuracy(m, d)
                    w.writerow([m, d, "" if v is None else repr(v)])
        with open(out / "results_table.csv", "w", newline="", encoding="utf-8") as fh:
            # methods x dims in percent, one row per method
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Dim"] + [str(d) for d in self.config.dims])
            for m in self.config.methods:
                row = [m.upper()]
                for d in self.config.dims:
                    v = self.mean_accuracy(m, d)
                    row.append("" if v is None else f"{100 * v:.2f}")
                w.writerow(row)
        if self.config.protocol:
            with open(out / "published_comparison.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["method", "dim", "measured_percent", "published_percent"])
                for m in self.config.methods:
                    for d in self.config.dims:
                        v = self.mean_accuracy(m, d)
                        ref = published_accuracy(self.config.protocol, m, d)
                        w.writerow([m, d, "" if v is None else f"{100 * v:.2f}",
                                    "" if ref is None else f"{ref:.2f}"])
        failed = [c for c in self.cells if c.error]
        with open(out / "failures.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "dim", "seed", "error"])
            for c in failed:
                w.writerow([c.method, c.dim, c.seed, c.error])


def run_experiment(cfg, trace=None):
    """Train and evaluate every (method, dim, seed) cell.

    A failing cell is recorded with its error and the sweep continues.
    Recoveries are shared between cells with the same seed and solver
    settings.
    """
    source = DataSource(cfg)
    cells = []
    for seed in cfg.seeds:
        train_set, test_set = source.split(seed)
        recoveries = {}
        for method in cfg.methods:
            eta_zero, opts = METHODS[method]
            opts = replace(opts, beta=cfg.beta, src_lambda=cfg.src_lambda)
            if opts.recover:
                opts = replace(opts, dictionary_source=cfg.dictionary_source)
            for dim in cfg.dims:
                solver = cfg.solver_for(dim, eta_zero)
                try:
                    recovery = None
                    if opts.recover:
                        key = (solver.lam, solver.eta)
                        if key not in recoveries:
                            recoveries[key] = recover_dictionary(train_set, solver, trace=trace)
                        recovery = recoveries[key]
                    model = train(train_set, solver, dim, opts, recovery=recovery)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        report = evaluate(model, test_set)
                    acc = report.accuracy
                    cells.append(CellResult(method, dim, seed, acc, None if acc is not None else "empty test set"))
                except (DlrrError, ValueError, ArithmeticError) as exc:
                    log.warning("cell %s/%s/%s failed: %s", method, dim, seed, exc)
                    cells.append(CellResult(method, dim, seed, None, f"{type(exc).__name__}: {exc}"))
    return ExperimentResult(cfg, cells)
