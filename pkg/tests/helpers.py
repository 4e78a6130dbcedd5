"""Shared builders and independent oracles for the test suite."""

import numpy as np

from ppou.trainer import init_model


def random_model(rng, architecture="basic", n_partitions=3, degree=2, d=2, latent_dim=2,
                 depth=2, width=6, sigma0_2=0.0, residual=True):
    """Box-initialized model with random coefficients and variances."""
    X = rng.uniform(-1, 1, size=(16, d))
    y = rng.normal(size=16)
    model = init_model(
        X, y,
        n_partitions=n_partitions, degree=degree, architecture=architecture,
        latent_dim=None if architecture == "basic" else latent_dim,
        encoder_depth=depth, encoder_width=width, classifier_depth=depth, classifier_width=width,
        residual=residual, sigma0_2=sigma0_2, seed=int(rng.integers(2**31)),
    )
    model.coeffs = rng.normal(size=model.coeffs.shape)
    model.sigma2 = rng.uniform(0.2, 1.5, size=n_partitions)
    return model


def fd_gradient(loss, params, step=1e-5, touch=None):
    """Central differences of ``loss()`` with respect to every entry of ``params``."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            if touch:
                touch()
            hi = loss()
            p[idx] = old - step
            if touch:
                touch()
            lo = loss()
            p[idx] = old
            if touch:
                touch()
            g[idx] = (hi - lo) / (2 * step)
        out[name] = g
    return out


def max_rel_error(analytic: dict, numeric: dict) -> float:
    """Largest entrywise ``|a - f| / max(|a|, |f|)`` with a ``1e-8 * max|f|`` floor for exact zeros."""
    a = np.concatenate([np.ravel(analytic[k]) for k in numeric])
    f = np.concatenate([np.ravel(numeric[k]) for k in numeric])
    floor = 1e-8 * max(np.abs(f).max(), 1e-300)
    den = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float(np.max(np.abs(a - f) / den))


def naive_forward(net, x):
    """Straightforward re-evaluation of a DenseNet on one input vector.

    Residual blocks: runs of consecutive square hidden layers are cut into
    pairs from the start of each run (a leftover layer forms its own block);
    each block adds its input to its output.
    """
    act = np.tanh if net.activation == "tanh" else (lambda z: np.maximum(z, 0.0))
    n_hidden = len(net.weights) - 1
    square = [net.weights[i].shape[0] == net.weights[i].shape[1] for i in range(n_hidden)]
    block_of = {}
    if net.residual:
        i = 0
        while i < n_hidden:
            if not square[i]:
                i += 1
                continue
            j = i
            while j < n_hidden and square[j]:
                j += 1
            for s in range(i, j, 2):
                block_of[s] = min(s + 2, j)
            i = j
    h = np.asarray(x, dtype=np.float64)
    i = 0
    while i < n_hidden:
        stop = block_of.get(i, i + 1)
        branch = h
        for layer in range(i, stop):
            branch = act(net.weights[layer] @ branch + net.biases[layer])
        h = h + branch if i in block_of else branch
        i = stop
    h = net.weights[-1] @ h + net.biases[-1]
    if net.output_transform == "softmax":
        e = np.exp(h - h.max())
        h = e / e.sum()
    elif net.output_transform == "tanh":
        h = np.tanh(h)
    return h


def gauss_elimination(A, b):
    """Partial-pivot Gaussian elimination, written out by hand."""
    A = A.astype(np.float64).copy()
    b = b.astype(np.float64).copy()
    n = len(b)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        A[[k, p]], b[[k, p]] = A[[p, k]], b[[p, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            b[i] -= f * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x


def normal_equation_oracle(P, w, y):
    return gauss_elimination(P.T @ (w[:, None] * P), P.T @ (w * y))
