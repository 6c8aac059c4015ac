import math

import numpy as np
import pytest

from dlrr.data import synth_multisubspace
from dlrr.samples import SampleMatrix

ACCEPTANCE_LINES = []


def record(criterion, ok, detail=""):
    """Remember one acceptance verdict for the end-of-run summary."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def gross_synth(seed, classes=3, ambient=100, rank=2, per_class=20, scale=3.0, fraction=0.1):
    """Union-of-subspaces data with a fraction of grossly corrupted columns.

    A corrupted column gets an additive Gaussian vector of the same norm as
    the clean column. Returns ``(observed, clean, corrupted_columns)``.
    """
    X, clean = synth_multisubspace(classes, ambient, rank, per_class, 0.0, seed, scale=scale)
    rng = np.random.default_rng(1000 + seed)
    n = X.n_samples
    cols = np.sort(rng.choice(n, size=int(math.ceil(fraction * n)), replace=False))
    G = rng.standard_normal((ambient, cols.size))
    G *= scale / np.linalg.norm(G, axis=0)
    data = X.data.copy()
    data[:, cols] += G
    return SampleMatrix(data, X.labels), clean, cols


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_fake_ar(root, subjects=3, shape=(6, 5), seed=0):
    """Write AR-style ``m-SSS-II.pgm`` images and a manifest; return its path.

    Each subject is a random face plus small per-image noise; images 8-10
    and 21-23 get a dark band (sunglasses), 11-13 and 24-26 a bright one.
    """
    from dlrr.data import write_pgm

    rng = np.random.default_rng(seed)
    rows = ["path,label,split"]
    for s in range(1, subjects + 1):
        face = rng.uniform(0.2, 0.8, shape)
        for i in range(1, 27):
            img = np.clip(face + 0.03 * rng.standard_normal(shape), 0, 1)
            if i in (8, 9, 10, 21, 22, 23):
                img[1:3] = 0.0
            elif i in (11, 12, 13, 24, 25, 26):
                img[-2:] = 1.0
            name = f"m-{s:03d}-{i:02d}.pgm"
            write_pgm(root / name, img)
            rows.append(f"{name},{s},train")
    path = root / "ar.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path
