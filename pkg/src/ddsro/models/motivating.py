"""Three-product example: buy x ahead at low cost or cover shortfall u - x at
twice the price, with a shared first-stage capacity of 200."""

from __future__ import annotations

import numpy as np

from ..dataio import LabeledDataset
from .problem import CompactProblem

FIRST_STAGE_COST = (3.0, 5.0, 6.0)
RECOURSE_COST = (6.0, 10.0, 12.0)
CAPACITY = 200.0

# Generator constants (synthetic; chosen so that classes 1-3 are clearly
# bimodal and class 4 sits apart at high values).  Each mode is a correlated
# Gaussian with standard deviation MODE_STD per axis and pairwise
# correlation MODE_CORR.
CLASS_COUNTS = (200, 400, 300, 100)
CLASS_MODES = (
    ((20.0, 15.0, 25.0), (36.0, 30.0, 38.0)),
    ((28.0, 30.0, 26.0), (44.0, 42.0, 44.0)),
    ((24.0, 38.0, 20.0), (42.0, 22.0, 36.0)),
    ((60.0, 55.0, 64.0),),
)
MODE_STD = 2.5
MODE_CORR = 0.5


def build_motivating_example() -> CompactProblem:
    """min c.x + b.y  s.t.  x1+x2+x3 <= 200,  x_i + y_i >= u_i,  x, y >= 0."""
    eye = np.eye(3)
    return CompactProblem(
        c=FIRST_STAGE_COST, b=RECOURSE_COST,
        A=-np.ones((1, 3)), d=[-CAPACITY],
        W=eye, h=np.zeros(3), T=eye, M=-eye,
        name="motivating",
        x_names=["x1", "x2", "x3"], y_names=["y1", "y2", "y3"],
        row_names=["cover1", "cover2", "cover3"],
    )


def _mode_cov(dim=3):
    C = np.full((dim, dim), MODE_CORR)
    np.fill_diagonal(C, 1.0)
    return MODE_STD**2 * C


def gen_synthetic_motivating(seed: int = 0, L: int = 1000) -> LabeledDataset:
    """Labeled 3-D sample with class shares (0.2, 0.4, 0.3, 0.1).

    Counts are exact when ``L`` is a multiple of 10; otherwise the remainder
    goes to the classes with the largest fractional shares (ties by class
    order).  Within a class, points alternate between its modes.
    """
    if L < 1:
        raise ValueError("L must be positive")
    shares = np.array(CLASS_COUNTS, float) / sum(CLASS_COUNTS)
    raw = shares * L
    counts = np.floor(raw).astype(int)
    for k in np.argsort(-(raw - counts), kind="stable")[: L - counts.sum()]:
        counts[k] += 1
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(_mode_cov())
    pts, labels = [], []
    for cls, (n, modes) in enumerate(zip(counts, CLASS_MODES)):
        which = np.arange(n) % len(modes)
        means = np.asarray(modes)[which]
        pts.append(means + rng.standard_normal((n, 3)) @ chol.T)
        labels += [cls + 1] * n
    points = np.vstack(pts)
    return LabeledDataset.from_labels(points, labels)
