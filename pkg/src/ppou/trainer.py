"""EM training for partition-of-unity mixtures.

Each iteration runs an E-step, a few Adam steps on the network parameters,
closed-form weighted least-squares solves for the polynomial coefficients
and a closed-form variance update.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import wls
from .basis import PolyBasis
from .data import input_box_map
from .mixture import (
    LOG_PHI_FLOOR,
    Z95,
    PPOUModel,
    Responsibilities,
    e_step,
    e_step_noise,
    update_sigma,
    update_sigma_noise,
)
from .nn import Adam, box_init, layer_widths, log_softmax

logger = logging.getLogger(__name__)

LOSS_KINDS = ("auto", "em", "alternative")


@dataclass
class TrainConfig:
    loss: str = "auto"
    max_iter: int = 500
    grad_steps: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int | None = None
    pretrain_epochs: int = 0
    pretrain_learning_rate: float = 1e-2
    kmeans_space: str = "input"
    tol: float = 1e-8
    patience: int = 20
    seed: int = 0
    noise_model: bool = False
    sigma0_2: float = 0.0
    convolved_responsibilities: bool = False
    sigma_floor_factor: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss: expected one of {LOSS_KINDS}, got {self.loss!r}")
        if self.kmeans_space not in ("input", "classifier"):
            raise ValueError(f"kmeans_space: expected 'input' or 'classifier', got {self.kmeans_space!r}")
        for name in ("max_iter", "patience", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}: must be positive")
        for name in ("grad_steps", "pretrain_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: must be nonnegative")
        if self.tol <= 0 or self.learning_rate <= 0:
            raise ValueError("tol and learning_rate must be positive")
        if self.sigma0_2 < 0:
            raise ValueError("sigma0_2: must be nonnegative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size: must be positive")

    def resolved_loss(self, architecture: str) -> str:
        if self.loss != "auto":
            return self.loss
        if self.noise_model or architecture == "basic":
            return "alternative"
        return "em"


@dataclass
class TrainState:
    resp: Responsibilities | None = None
    adam: Adam | None = None
    iteration: int = 0
    stall: int = 0
    converged: bool = False
    history: list = field(default_factory=list)
    rng: np.random.Generator | None = None


# ---------------------------------------------------------------- model setup


def sigma_floor(y, factor: float = 1e-8) -> float:
    return max(factor * float(np.var(y)), np.sqrt(np.finfo(np.float64).tiny))


def init_model(
    X,
    y,
    *,
    n_partitions: int,
    degree: int,
    architecture: str = "basic",
    basis_family: str = "chebyshev",
    latent_dim: int | None = None,
    encoder_depth: int = 4,
    encoder_width: int = 16,
    classifier_depth: int = 4,
    classifier_width: int = 8,
    activation: str = "tanh",
    residual: bool = True,
    standardize: bool = True,
    sigma0_2: float = 0.0,
    sigma_floor_factor: float = 1e-8,
    seed=0,
) -> PPOUModel:
    """Fresh model with Box-initialized nets, zero coefficients and
    variances equal to the sample variance of ``y``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    d = X.shape[1]
    if standardize:
        shift, scale = input_box_map(X)
    else:
        shift, scale = np.zeros(d), np.ones(d)
        box = (X.min(axis=0), X.max(axis=0))
    in_box = (-1.0, 1.0) if standardize else box
    encoder = None
    if architecture == "basic":
        if latent_dim not in (None, d):
            raise ValueError(f"basic architecture has latent_dim == input dim ({d})")
        latent_dim = d
    else:
        if latent_dim is None:
            raise ValueError(f"{architecture} architecture needs latent_dim")
        encoder = box_init(
            layer_widths(d, encoder_width, encoder_depth, latent_dim),
            in_box,
            rng,
            activation=activation,
            output_transform="tanh",
        )
    cls_in = latent_dim if architecture == "serial" else d
    cls_box = (-1.0, 1.0) if architecture == "serial" else in_box
    classifier = box_init(
        layer_widths(cls_in, classifier_width, classifier_depth, n_partitions),
        cls_box,
        rng,
        activation=activation,
        residual=residual,
        output_transform="softmax",
    )
    basis = PolyBasis(latent_dim, degree, basis_family)
    var0 = max(float(np.var(y)), sigma_floor(y, sigma_floor_factor))
    return PPOUModel(
        architecture=architecture,
        classifier=classifier,
        basis=basis,
        coeffs=np.zeros((n_partitions, basis.size)),
        sigma2=np.full(n_partitions, var0),
        encoder=encoder,
        sigma0_2=sigma0_2,
        sigma_floor2=sigma_floor(y, sigma_floor_factor),
        input_shift=shift,
        input_scale=scale,
    )


# ---------------------------------------------------------------- losses


@dataclass
class _Forward:
    Xs: np.ndarray
    U: np.ndarray
    enc_tape: object
    cls_tape: object
    log_phi: np.ndarray
    phi: np.ndarray
    P: np.ndarray
    D: np.ndarray | None
    mu: np.ndarray


def _forward(model: PPOUModel, X, jacobian: bool = True) -> _Forward:
    Xs = model.standardize(X)
    enc_tape = None
    if model.encoder is not None:
        U, enc_tape = model.encoder.forward(Xs)
    else:
        U = Xs
    cls_in = U if model.architecture == "serial" else Xs
    _, cls_tape = model.classifier.forward(cls_in)
    log_phi = log_softmax(cls_tape.final_z)
    if model.encoder is not None and jacobian:
        P, D = model.basis.design_jacobian(U)
    else:
        P, D = model.basis.design_matrix(U, model.diagnostics), None
    return _Forward(Xs, U, enc_tape, cls_tape, log_phi, np.exp(log_phi), P, D, P @ model.coeffs.T)


def _loss_terms(kind, W, y, log_phi, phi, mu, sigma2):
    mask = log_phi > LOG_PHI_FLOOR
    L1 = -float((W * np.where(mask, log_phi, LOG_PHI_FLOOR)).sum())
    if kind == "em":
        r = y[:, None] - mu
        L2 = float(((W * r * r).sum(axis=0) / (2.0 * sigma2)).sum())
    else:
        e = y - (phi * mu).sum(axis=1)
        L2 = float((e * e).sum())
    return L1, L2


def loss_and_grad(model: PPOUModel, resp: Responsibilities, X, y, kind: str = "em"):
    """Loss value and gradients for every network parameter.

    ``kind="em"``: cross-entropy against the responsibilities plus the
    variance-weighted squared expert residuals. ``kind="alternative"``: the
    same cross-entropy plus the squared error of the mixture mean.
    """
    if kind not in ("em", "alternative"):
        raise ValueError(f"unknown loss kind {kind!r}")
    y = np.asarray(y, dtype=np.float64)
    W = resp.W
    f = _forward(model, X)
    L1, L2 = _loss_terms(kind, W, y, f.log_phi, f.phi, f.mu, model.sigma2)
    loss = L1 + L2
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss (L1={L1}, L2={L2}, sigma2={model.sigma2.tolist()})"
        )
    Wm = W * (f.log_phi > LOG_PHI_FLOOR)
    gz = f.phi * Wm.sum(axis=1, keepdims=True) - Wm
    if kind == "em":
        gmu = -W * (y[:, None] - f.mu) / model.sigma2
    else:
        e = y - (f.phi * f.mu).sum(axis=1)
        gphi = -2.0 * e[:, None] * f.mu
        gz = gz + f.phi * (gphi - (f.phi * gphi).sum(axis=1, keepdims=True))
        gmu = -2.0 * e[:, None] * f.phi
    wg, bg, g_in = model.classifier.backward(f.cls_tape, gz, pre_transform=True)
    grads = model.classifier.grads_dict(wg, bg, "classifier.")
    if model.encoder is not None:
        gU = np.einsum("nk,nki->ni", gmu @ model.coeffs, f.D)
        if model.architecture == "serial":
            gU = gU + g_in
        wg, bg, _ = model.encoder.backward(f.enc_tape, gU)
        grads.update(model.encoder.grads_dict(wg, bg, "encoder."))
    return loss, grads


def em_loss(model, resp, X, y):
    return loss_and_grad(model, resp, X, y, "em")


def alt_loss(model, resp, X, y):
    return loss_and_grad(model, resp, X, y, "alternative")


def _component_logpdf(y, mu, var):
    r = y[:, None] - mu
    return -0.5 * np.log(2.0 * np.pi * var) - r * r / (2.0 * var)


def _total_var(model, sigma0_2=None, noise=False):
    if not noise:
        return model.sigma2
    s0 = np.asarray(model.sigma0_2 if sigma0_2 is None else sigma0_2, dtype=np.float64)
    return model.sigma2 + (s0[:, None] if s0.ndim == 1 else s0)


def elbo(model: PPOUModel, resp: Responsibilities, X, y, *, noise=False, sigma0_2=None, components=None):
    """Evidence lower bound including the responsibility entropy."""
    y = np.asarray(y, dtype=np.float64)
    log_phi, _, mu = model.components(X) if components is None else components
    W = resp.W
    logp = _component_logpdf(y, mu, _total_var(model, sigma0_2, noise))
    pos = W > 0
    entropy = -float(np.sum(W[pos] * np.log(W[pos])))
    return float(np.sum(W * (log_phi + logp))) + entropy


def log_likelihood(model: PPOUModel, X, y, *, noise=False, sigma0_2=None) -> float:
    y = np.asarray(y, dtype=np.float64)
    log_phi, _, mu = model.components(X)
    logp = _component_logpdf(y, mu, _total_var(model, sigma0_2, noise))
    return float(logsumexp(log_phi + logp, axis=1).sum())


# ---------------------------------------------------------------- M-step pieces


def solve_coefficients(model: PPOUModel, W, P, y, workers: int = 1):
    """Solve the J weighted least-squares problems; empty clusters keep their rows."""
    J = W.shape[1]

    def one(j):
        try:
            return wls.solve(P, W[:, j], y)
        except wls.EmptyClusterError:
            return None

    if workers > 1 and J > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(J)))
    else:
        results = [one(j) for j in range(J)]
    coeffs = model.coeffs.copy()
    empty, ridged = [], 0
    for j, res in enumerate(results):
        if res is None:
            empty.append(j)
            continue
        coeffs[j] = res.coeffs
        ridged += res.used_ridge
    return coeffs, empty, ridged


def _gradient_steps(model, state, X, y, config, kind):
    params = model.named_parameters()
    loss = None
    n = len(y)
    for _ in range(config.grad_steps):
        if config.batch_size is not None and config.batch_size < n:
            idx = state.rng.choice(n, size=config.batch_size, replace=False)
            batch_resp = Responsibilities(state.resp.W[idx])
            loss, grads = loss_and_grad(model, batch_resp, X[idx], y[idx], kind)
        else:
            loss, grads = loss_and_grad(model, state.resp, X, y, kind)
        state.adam.step(params, grads)
        model.mark_updated()
    return loss


def relative_l2(pred, ref) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    norm = np.linalg.norm(ref)
    diff = np.linalg.norm(pred - ref)
    return float(diff / norm) if norm > 0 else float(diff)


def new_state(model: PPOUModel, config: TrainConfig) -> TrainState:
    return TrainState(
        adam=Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps),
        rng=np.random.default_rng(config.seed),
    )


def em_iteration(model: PPOUModel, state: TrainState, X, y, config: TrainConfig, noise_floor=None):
    """One E-step followed by gradient, coefficient and variance updates.

    ``noise_floor`` optionally gives a per-sample background noise variance
    used in place of ``model.sigma0_2`` when ``config.noise_model`` is set.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    t0 = time.perf_counter()
    kind = config.resolved_loss(model.architecture)
    s0 = noise_floor if noise_floor is not None else model.sigma0_2

    if config.noise_model:
        state.resp = e_step_noise(model, X, y, sigma0_2=s0, convolved=config.convolved_responsibilities)
    else:
        state.resp = e_step(model, X, y)

    loss = _gradient_steps(model, state, X, y, config, kind) if config.grad_steps else None

    f = _forward(model, X, jacobian=False)
    coeffs, empty, ridged = solve_coefficients(model, state.resp.W, f.P, y, config.workers)
    model.coeffs = coeffs
    mu = f.P @ coeffs.T
    if config.noise_model:
        # b and B come from the E-step; only the means are refreshed
        model.sigma2 = update_sigma_noise(model, state.resp, X, y, means=mu)
    else:
        model.sigma2 = update_sigma(model, state.resp, X, y, means=mu)

    comps = (f.log_phi, f.phi, mu)
    value = elbo(model, state.resp, X, y, noise=config.noise_model, sigma0_2=s0, components=comps)
    if loss is None:
        L1, L2 = _loss_terms(kind, state.resp.W, y, f.log_phi, f.phi, mu, model.sigma2)
        loss = L1 + L2
    pred = (f.phi * mu).sum(axis=1)
    record = {
        "iteration": state.iteration,
        "elbo": value,
        "loss": float(loss),
        "train_rel_l2": relative_l2(pred, y),
        "occupancy": state.resp.occupancy.tolist(),
        "sigma2": model.sigma2.tolist(),
        "empty_clusters": empty,
        "ridge_solves": int(ridged),
        "seconds": time.perf_counter() - t0,
    }
    if empty:
        logger.info("iteration %d: empty clusters %s keep their coefficients", state.iteration, empty)
    if state.history:
        prev = state.history[-1]["elbo"]
        rel = (value - prev) / max(abs(prev), np.finfo(np.float64).tiny)
        state.stall = state.stall + 1 if rel < config.tol else 0
    state.history.append(record)
    state.iteration += 1
    return model, state


def train(
    model: PPOUModel,
    X,
    y,
    config: TrainConfig,
    *,
    X_test=None,
    y_test=None,
    noise_floor=None,
    callback=None,
) -> TrainState:
    """Run EM iterations until the ELBO stalls for ``patience`` iterations."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if config.pretrain_epochs:
        kmeans_pretrain(model, X, config)
    state = new_state(model, config)
    start = time.perf_counter()
    while state.iteration < config.max_iter:
        em_iteration(model, state, X, y, config, noise_floor)
        rec = state.history[-1]
        if X_test is not None:
            rec["test_rel_l2"] = relative_l2(model.predict_mean(X_test), y_test)
        if callback is not None:
            callback(rec)
        if state.stall >= config.patience:
            state.converged = True
            break
    state.history[-1]["wall_time"] = time.perf_counter() - start
    return state


# ---------------------------------------------------------------- pretraining


def kmeans_labels(points, n_clusters: int, seed=0) -> np.ndarray:
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=1, max_iter=100, random_state=seed)
    return km.fit_predict(points)


def kmeans_pretrain(model: PPOUModel, X, config: TrainConfig) -> PPOUModel:
    """Fit the classifier (and, for serial models, the encoder) to k-means labels.

    Clustering runs on the standardized inputs by default; with
    ``kmeans_space="classifier"`` it runs on the classifier inputs and is
    redone every epoch for serial models, whose classifier reads latents.
    """
    X = np.asarray(X, dtype=np.float64)
    J = model.n_clusters
    if J > X.shape[0]:
        raise ValueError(f"cannot form {J} clusters from {X.shape[0]} samples")
    if J == 1:
        return model
    Xs = model.standardize(X)
    relabel = config.kmeans_space == "classifier" and model.architecture == "serial"

    def cluster_points():
        if config.kmeans_space == "classifier" and model.architecture == "serial":
            return model.encoder(Xs)
        return Xs

    labels = kmeans_labels(cluster_points(), J, config.seed)
    adam = Adam(config.pretrain_learning_rate, config.beta1, config.beta2, config.adam_eps)
    params = model.named_parameters()
    for _ in range(config.pretrain_epochs):
        if relabel:
            labels = kmeans_labels(cluster_points(), J, config.seed)
        onehot = np.eye(J)[labels]
        loss, grads = loss_and_grad_labels(model, X, onehot)
        adam.step(params, grads)
        model.mark_updated()
    model.diagnostics["pretrain_labels"] = labels
    return model


def loss_and_grad_labels(model: PPOUModel, X, targets):
    """Cross-entropy of the partition against fixed soft/one-hot targets."""
    f = _forward(model, X, jacobian=False)
    loss = -float((targets * np.maximum(f.log_phi, LOG_PHI_FLOOR)).sum())
    gz = f.phi * targets.sum(axis=1, keepdims=True) - targets
    wg, bg, g_in = model.classifier.backward(f.cls_tape, gz, pre_transform=True)
    grads = model.classifier.grads_dict(wg, bg, "classifier.")
    if model.architecture == "serial":
        wg, bg, _ = model.encoder.backward(f.enc_tape, g_in)
        grads.update(model.encoder.grads_dict(wg, bg, "encoder."))
    elif model.encoder is not None:
        grads.update({k: np.zeros_like(v) for k, v in model.encoder.named_parameters("encoder.").items()})
    return loss, grads


# ---------------------------------------------------------------- evaluation


def evaluate(model: PPOUModel, X, y, reference=None, sigma0_2=None) -> dict:
    """Relative l2 error of the predicted mean, MAE and 95% interval coverage.

    The error is measured against ``reference`` (e.g. a noise-free signal)
    when given, otherwise against ``y``; coverage always uses ``y``.
    ``coverage_degenerate`` flags intervals too narrow for coverage to mean
    anything: median predicted sd at most 1% of ``std(y)``.
    """
    y = np.asarray(y, dtype=np.float64)
    ref = y if reference is None else np.asarray(reference, dtype=np.float64)
    mean, var = model.predict_moments(X, sigma0_2)
    sd = np.sqrt(var)
    norm = np.linalg.norm(ref)
    out = {
        "rel_l2": relative_l2(mean, ref),
        "normalized": bool(norm > 0),
        "mae": float(np.mean(np.abs(mean - ref))),
        "coverage": float(np.mean(np.abs(y - mean) <= Z95 * sd)),
        "n": int(len(y)),
    }
    scale = float(np.std(y)) or float(np.max(np.abs(y), initial=0.0)) or 1.0
    out["coverage_degenerate"] = bool(np.median(sd) <= 1e-2 * scale)
    return out


def summarize_folds(errors) -> dict:
    errors = np.asarray(errors, dtype=np.float64)
    k = errors.size
    mean = float(errors.mean())
    if k > 1:
        half = float(stats.t.ppf(0.975, k - 1) * errors.std(ddof=1) / np.sqrt(k))
    else:
        half = float("nan")
    return {"mean": mean, "ci95": [mean - half, mean + half], "half_width": half}


def fold_indices(n: int, k: int, seed=0) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into ``k`` contiguous folds."""
    if k < 2:
        raise ValueError("need k >= 2 folds")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} non-empty folds")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def cross_validate(estimator, X, y, k: int = 4, seed=0, reference=None) -> dict:
    """k-fold cross-validation of an estimator exposing ``fit``/``evaluate``."""
    from sklearn.base import clone

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    folds = fold_indices(len(y), k, seed)
    results = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        est = clone(estimator).fit(X[train_idx], y[train_idx])
        ref = None if reference is None else np.asarray(reference)[test_idx]
        res = est.evaluate(X[test_idx], y[test_idx], reference=ref)
        res["fold"] = i
        res["train_rel_l2"] = est.evaluate(X[train_idx], y[train_idx])["rel_l2"]
        res["test_indices"] = test_idx.tolist()
        results.append(res)
    return {"folds": results, "test_rel_l2": summarize_folds([r["rel_l2"] for r in results])}


# ---------------------------------------------------------------- baseline


@dataclass
class GlobalPolyFit:
    coeffs: np.ndarray
    shift: float
    scale: float
    degree: int
    rel_l2: float

    def predict(self, x) -> np.ndarray:
        t = (np.asarray(x, dtype=np.float64).ravel() - self.shift) * self.scale
        return PolyBasis(1, self.degree, "chebyshev").design_matrix(t[:, None]) @ self.coeffs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coeffs"] = self.coeffs.tolist()
        return d


def fit_global_poly(x, y, degree: int, reference=None) -> GlobalPolyFit:
    """Unweighted least-squares Chebyshev fit on ``x`` mapped onto ``[-1, 1]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError(f"global polynomial baseline needs 1D inputs, got {x.shape[1]} columns")
        x = x[:, 0]
    y = np.asarray(y, dtype=np.float64)
    shift, scale = input_box_map(x[:, None])
    P = PolyBasis(1, degree, "chebyshev").design_matrix(((x - shift) * scale)[:, None])
    res = wls.solve(P, np.ones_like(y), y)
    ref = y if reference is None else np.asarray(reference, dtype=np.float64)
    return GlobalPolyFit(res.coeffs, float(shift[0]), float(scale[0]), degree, relative_l2(P @ res.coeffs, ref))
