"""Pure numpy versions of the compiled kernels."""
import numpy as np


def ks_gap(a_sorted, b_sorted):
    """Largest ``|i*nb - j*na|`` over the merged sample points."""
    a_sorted = np.asarray(a_sorted, dtype=np.float64)
    b_sorted = np.asarray(b_sorted, dtype=np.float64)
    na, nb = len(a_sorted), len(b_sorted)
    points = np.concatenate([a_sorted, b_sorted])
    i = np.searchsorted(a_sorted, points, side="right").astype(np.int64)
    j = np.searchsorted(b_sorted, points, side="right").astype(np.int64)
    return int(np.max(np.abs(i * nb - j * na)))


def ks_gap_grid(a_sorted, b_sorted, scales):
    b_sorted = np.asarray(b_sorted, dtype=np.float64)
    return np.array([ks_gap(a_sorted, s * b_sorted) for s in scales], dtype=np.int64)


def _ranks(values):
    # 1-based rank by value desc, index asc
    order = np.lexsort((np.arange(len(values)), -values))
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks


def lambda_gradients(scores, labels, qptr, cutoff, weighted=True):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    out = np.zeros(len(scores))
    for lo, hi in zip(qptr[:-1], qptr[1:]):
        s, y = scores[lo:hi], labels[lo:hi]
        r = _ranks(s)
        disc = np.where(r <= cutoff, 1.0 / np.log2(1.0 + r), 0.0)
        ir = _ranks(y)
        idcg = np.sum(np.where(ir <= cutoff, y / np.log2(1.0 + ir), 0.0))
        if weighted and idcg <= 0.0:
            continue
        better = y[:, None] > y[None, :]
        with np.errstate(over="ignore"):
            rho = 1.0 / (1.0 + np.exp(s[:, None] - s[None, :]))
        if weighted:
            delta = np.abs((y[:, None] - y[None, :]) * (disc[:, None] - disc[None, :])) / idcg
            lam = np.where(better, rho * delta, 0.0)
        else:
            lam = np.where(better, rho, 0.0)
        out[lo:hi] = lam.sum(axis=1) - lam.sum(axis=0)
    return out
