"""Fisher linear discriminant projection of parameter sets."""
from __future__ import annotations

import numpy as np
from scipy.linalg import eigh

from ..errors import NoDiscriminant


def scatter_matrices(X, labels):
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    mu = X.mean(axis=0)
    d = X.shape[1]
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for k in np.unique(labels):
        Xk = X[labels == k]
        mk = Xk.mean(axis=0)
        D = Xk - mk
        Sw += D.T @ D
        Sb += len(Xk) * np.outer(mk - mu, mk - mu)
    return Sw, Sb


def lda_project(param_sets, labels, n_components=2, ridge=1e-9):
    """Project onto the leading solutions of S_b v = mu (S_w + ridge I) v.

    Returns (projected points, axes) with axes as columns.
    """
    X = np.asarray(param_sets, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(labels):
        raise ValueError("param_sets must be (N, d) with one label per row")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise NoDiscriminant("need at least two classes")
    if np.any(counts < 2):
        raise ValueError("every class needs at least two members")
    Sw, Sb = scatter_matrices(X, labels)
    scale = np.trace(Sw) / X.shape[1]
    if not scale > 0:
        # zero within-class spread: fall back to the between-class scale
        scale = max(np.trace(Sb) / X.shape[1], 1.0)
        ridge = max(ridge, 1e-9)
    w, V = eigh(Sb, Sw + ridge * scale * np.eye(X.shape[1]))
    axes = V[:, np.argsort(w)[::-1][:n_components]]
    return X @ axes, axes
