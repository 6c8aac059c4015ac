"""Training and inference: recover -> project -> PCA -> classify.

Queries are corrected in raw sample space by the low-rank projection before
they are mapped into the PCA feature space. The PCA basis is fit on the
recovered clean dictionary, while the classification dictionary holds the
original training samples mapped into that space (``dictionary_source``
switches this to the clean dictionary).
"""

import configparser
import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .classifiers import Dictionary, classify, outcome_header
from .data import read_matrix, write_matrix
from .errors import DataError, DegenerateQueryError, DlrrError, StageError
from .features import FeatureSpace, fit_pca, project
from .projection import ProjectionMatrix, learn_projection
from .samples import SampleMatrix
from .solver import RecoveryResult, SolverConfig, recover_dictionary

DEFAULT_BETA = 1.1
DEFAULT_SRC_LAMBDA = 0.001


@dataclass(frozen=True)
class PipelineOptions:
    """Which stages run and which classifier decides.

    The defaults are the full method: recovery, query correction, PCA on
    the clean dictionary and CRC on the original training samples.
    """

    recover: bool = True
    correct_queries: bool = True
    pca_source: str = "clean"
    dictionary_source: str = "original"
    classifier: str = "crc"
    beta: float = DEFAULT_BETA
    src_lambda: float = DEFAULT_SRC_LAMBDA

    def __post_init__(self):
        if self.pca_source not in ("clean", "original"):
            raise DataError(f"pca_source must be clean or original, got {self.pca_source!r}")
        if self.dictionary_source not in ("clean", "original"):
            raise DataError(
                f"dictionary_source must be clean or original, got {self.dictionary_source!r}"
            )
        if self.classifier not in ("crc", "src", "lrc", "nn"):
            raise DataError(f"unknown classifier {self.classifier!r}")
        if not self.recover and (
            self.correct_queries or "clean" in (self.pca_source, self.dictionary_source)
        ):
            raise DataError("query correction and clean sources require recovery")

    def classifier_params(self, beta=None):
        if self.classifier == "crc":
            return {"beta": self.beta if beta is None else beta}
        if self.classifier == "src":
            return {"lam": self.src_lambda}
        return {}


@dataclass
class TrainedModel:
    feature_space: FeatureSpace
    dictionary_features: np.ndarray
    dictionary_labels: np.ndarray
    options: PipelineOptions
    solver_config: SolverConfig
    dim: int
    recovery: Optional[RecoveryResult] = None
    projection: Optional[ProjectionMatrix] = None
    _dictionary: Optional[Dictionary] = field(default=None, repr=False)

    @property
    def crc_dictionary(self):
        if self._dictionary is None:
            self._dictionary = Dictionary(self.dictionary_features, self.dictionary_labels)
        return self._dictionary

    @property
    def classes(self):
        return self.crc_dictionary.classes


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except DlrrError as exc:
        raise StageError(name, exc) from exc
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def train(X, config=SolverConfig(), dim=100, options=PipelineOptions(), recovery=None, trace=None):
    """Fit a model on a labelled training matrix.

    `recovery` may carry a precomputed RecoveryResult for the same
    (class-sorted) training matrix to avoid re-solving.
    """
    if not isinstance(X, SampleMatrix):
        raise TypeError("train expects a SampleMatrix")
    X = X.sorted_by_class()
    projection = None
    if options.recover:
        if recovery is None:
            recovery = _stage("recover", recover_dictionary, X, config, trace=trace)
        if recovery.clean_dictionary.shape != X.data.shape:
            raise StageError("recover", DataError("recovery does not match training matrix"))
        D = recovery.clean_dictionary
        if options.correct_queries:
            projection = _stage("projection", learn_projection, X.data, D)
    else:
        recovery = None
        D = None
    pca_data = D if options.pca_source == "clean" else X.data
    space = _stage("pca", fit_pca, pca_data, dim)
    dict_data = D if options.dictionary_source == "clean" else X.data
    feats = project(space, dict_data)
    model = TrainedModel(
        feature_space=space,
        dictionary_features=feats,
        dictionary_labels=np.array(X.labels),
        options=options,
        solver_config=config,
        dim=int(dim),
        recovery=recovery,
        projection=projection,
    )
    _stage("dictionary", lambda: model.crc_dictionary)
    return model


def query_features(model, y):
    y = np.asarray(y, dtype=np.float64)
    if model.projection is not None:
        y = model.projection.apply(y)
    return y, project(model.feature_space, y)


def predict(model, y, beta=None):
    """Correct, project and classify one raw-space query."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yp, feats = query_features(model, y)
    if not np.any(yp):
        raise DegenerateQueryError("query is zero after correction")
    return classify(
        model.crc_dictionary, feats, model.options.classifier, **model.options.classifier_params(beta)
    )


@dataclass
class EvaluationReport:
    true_labels: np.ndarray
    predicted: List[Optional[int]]
    outcomes: list
    classes: np.ndarray
    failures: Dict[int, str] = field(default_factory=dict)

    @property
    def n_queries(self):
        return len(self.predicted)

    @property
    def correct(self):
        return np.array(
            [p is not None and p == t for p, t in zip(self.predicted, self.true_labels)], dtype=bool
        )

    @property
    def accuracy(self):
        """Fraction of correct queries, or None for an empty test set."""
        if self.n_queries == 0:
            return None
        return float(np.mean(self.correct))

    @property
    def per_class_accuracy(self):
        out = {}
        corr = self.correct
        for c in np.unique(self.true_labels):
            mask = self.true_labels == c
            out[int(c)] = float(np.mean(corr[mask]))
        return out

    @property
    def confusion(self):
        counts = {}
        for p, t in zip(self.predicted, self.true_labels):
            key = (int(t), None if p is None else int(p))
            counts[key] = counts.get(key, 0) + 1
        return counts

    def write_csv(self, path_or_file):
        own = not hasattr(path_or_file, "write")
        fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(outcome_header(self.classes))
            for j, (o, t) in enumerate(zip(self.outcomes, self.true_labels)):
                if o is None:
                    w.writerow([j, int(t), ""] + [""] * len(self.classes))
                else:
                    w.writerow(
                        [j, int(t), o.predicted_class] + [repr(float(r)) for r in o.residuals]
                    )
        finally:
            if own:
                fh.close()


def evaluate(model, test, beta=None):
    """Classify every test column; failed queries count as errors."""
    outcomes, predicted, failures = [], [], {}
    for j in range(test.n_samples):
        try:
            o = predict(model, test.data[:, j], beta)
        except (DegenerateQueryError, ArithmeticError) as exc:
            failures[j] = str(exc)
            outcomes.append(None)
            predicted.append(None)
            continue
        outcomes.append(o)
        predicted.append(o.predicted_class)
    return EvaluationReport(np.array(test.labels), predicted, outcomes, model.classes, failures)


# ---------------------------------------------------------------------------
# persistence


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_snapshot(model):
    cp = configparser.ConfigParser(interpolation=None)
    cp["solver"] = {f.name: _fmt(getattr(model.solver_config, f.name)) for f in fields(SolverConfig)}
    cp["pipeline"] = {f.name: _fmt(getattr(model.options, f.name)) for f in fields(PipelineOptions)}
    cp["pipeline"]["dim"] = str(model.dim)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _parse_fields(cls, section):
    kw = {}
    for f in fields(cls):
        if f.name not in section:
            continue
        raw = section[f.name]
        if f.type in (bool, "bool"):
            kw[f.name] = raw == "true"
        elif f.type in (int, "int"):
            kw[f.name] = int(raw)
        elif f.type in (float, "float"):
            kw[f.name] = float(raw)
        else:
            kw[f.name] = raw
    return cls(**kw)


def save_model(model, directory):
    """Write every matrix as a container file plus ``config.ini``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.ini").write_text(config_snapshot(model), encoding="utf-8")
    fs = model.feature_space
    write_matrix(d / "pca_basis.mat", fs.basis)
    write_matrix(d / "pca_mean.mat", fs.mean[:, None])
    write_matrix(d / "pca_eigenvalues.mat", fs.eigenvalues[:, None])
    write_matrix(d / "dictionary.mat", model.dictionary_features)
    write_matrix(d / "dictionary_labels.mat", model.dictionary_labels.astype(np.float64)[:, None])
    if model.projection is not None:
        write_matrix(d / "projection_left.mat", model.projection.left)
        write_matrix(d / "projection_right.mat", model.projection.right)
        meta = {"source_rank": model.projection.source_rank, "residual": model.projection.residual}
        (d / "projection.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
    if model.recovery is not None:
        r = model.recovery
        write_matrix(d / "clean_dictionary.mat", r.clean_dictionary)
        write_matrix(d / "error.mat", r.error)
        for c, Z in zip(r.class_ids, r.per_class_Z):
            write_matrix(d / f"Z_{c}.mat", Z)
        meta = {
            "class_ids": r.class_ids,
            "converged": r.converged,
            "iterations": r.iterations,
            "objective_trace": r.objective_trace,
        }
        (d / "recovery.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")


def load_model(directory):
    d = Path(directory)
    if not (d / "config.ini").exists():
        raise DataError(f"{d}: not a model directory (config.ini missing)")
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(d / "config.ini", encoding="utf-8")
    config = _parse_fields(SolverConfig, cp["solver"])
    options = _parse_fields(PipelineOptions, cp["pipeline"])
    dim = int(cp["pipeline"]["dim"])
    space = FeatureSpace(
        read_matrix(d / "pca_basis.mat"),
        read_matrix(d / "pca_mean.mat")[:, 0],
        read_matrix(d / "pca_eigenvalues.mat")[:, 0],
    )
    projection = None
    if (d / "projection_left.mat").exists():
        meta = json.loads((d / "projection.json").read_text(encoding="utf-8"))
        projection = ProjectionMatrix(
            read_matrix(d / "projection_left.mat"),
            read_matrix(d / "projection_right.mat"),
            int(meta["source_rank"]),
            float(meta["residual"]),
        )
    recovery = None
    if (d / "recovery.json").exists():
        meta = json.loads((d / "recovery.json").read_text(encoding="utf-8"))
        D = read_matrix(d / "clean_dictionary.mat")
        E = read_matrix(d / "error.mat")
        labels = read_matrix(d / "dictionary_labels.mat")[:, 0].astype(np.int64)
        Zs = [read_matrix(d / f"Z_{c}.mat") for c in meta["class_ids"]]
        recovery = RecoveryResult(
            class_ids=meta["class_ids"],
            per_class_Z=Zs,
            per_class_E=[E[:, labels == c] for c in meta["class_ids"]],
            clean_dictionary=D,
            error=E,
            objective_trace=meta["objective_trace"],
            converged=meta["converged"],
            iterations=meta["iterations"],
        )
    return TrainedModel(
        feature_space=space,
        dictionary_features=read_matrix(d / "dictionary.mat"),
        dictionary_labels=read_matrix(d / "dictionary_labels.mat")[:, 0].astype(np.int64),
        options=options,
        solver_config=config,
        dim=dim,
        recovery=recovery,
        projection=projection,
    )
