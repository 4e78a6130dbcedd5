"""Probabilistic partition-of-unity mixture: a softmax classifier gating
polynomial experts defined on (possibly encoded) latent coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .basis import PolyBasis
from .nn import DenseNet, log_softmax

ARCHITECTURES = ("basic", "serial", "parallel")
LOG_PHI_FLOOR = np.log(1e-300)
Z95 = 1.96


@dataclass
class Responsibilities:
    """Posterior cluster weights ``W`` (N x J).

    The background-noise E-step also fills ``b`` (N x J shrunk targets) and
    ``B`` (posterior variances, shape ``(J,)`` or ``(N, J)`` for per-sample noise).
    """

    W: np.ndarray
    b: np.ndarray | None = None
    B: np.ndarray | None = None
    fallback_count: int = 0

    @property
    def occupancy(self) -> np.ndarray:
        return self.W.sum(axis=0)


@dataclass
class PPOUModel:
    architecture: str
    classifier: DenseNet
    basis: PolyBasis
    coeffs: np.ndarray
    sigma2: np.ndarray
    encoder: DenseNet | None = None
    sigma0_2: float = 0.0
    sigma_floor2: float = 1e-12
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.sigma2 = np.asarray(self.sigma2, dtype=np.float64)
        J = self.n_clusters
        if self.coeffs.shape != (J, self.basis.size):
            raise ValueError(f"coeffs must be {(J, self.basis.size)}, got {self.coeffs.shape}")
        if self.sigma2.shape != (J,):
            raise ValueError(f"sigma2 must have length {J}")
        if self.sigma0_2 < 0:
            raise ValueError("background noise variance must be nonnegative")
        if self.architecture == "basic":
            if self.encoder is not None:
                raise ValueError("basic architecture uses the identity encoder")
            if self.basis.latent_dim != self.classifier.in_dim:
                raise ValueError("basic architecture needs basis latent_dim == input dim")
        else:
            if self.encoder is None:
                raise ValueError(f"{self.architecture} architecture needs an encoder")
            if self.encoder.out_dim != self.basis.latent_dim:
                raise ValueError("encoder output width must equal the basis latent_dim")
            want = self.basis.latent_dim if self.architecture == "serial" else self.encoder.in_dim
            if self.classifier.in_dim != want:
                raise ValueError(
                    f"{self.architecture} classifier input width must be {want}, "
                    f"got {self.classifier.in_dim}"
                )
        d = self.input_dim
        if self.input_shift is None:
            self.input_shift = np.zeros(d)
        if self.input_scale is None:
            self.input_scale = np.ones(d)
        self.input_shift = np.asarray(self.input_shift, dtype=np.float64)
        self.input_scale = np.asarray(self.input_scale, dtype=np.float64)

    @property
    def n_clusters(self) -> int:
        return self.classifier.out_dim

    @property
    def input_dim(self) -> int:
        return self.encoder.in_dim if self.encoder is not None else self.classifier.in_dim

    @property
    def latent_dim(self) -> int:
        return self.basis.latent_dim

    def nets(self) -> dict[str, DenseNet]:
        nets = {"classifier": self.classifier}
        if self.encoder is not None:
            nets["encoder"] = self.encoder
        return nets

    def named_parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for name, net in self.nets().items():
            params.update(net.named_parameters(f"{name}."))
        return params

    def mark_updated(self):
        for net in self.nets().values():
            net.mark_updated()

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs with {self.input_dim} columns, got shape {X.shape}")
        return (X - self.input_shift) * self.input_scale

    def latent(self, X) -> np.ndarray:
        Xs = self.standardize(X)
        return Xs if self.encoder is None else self.encoder(Xs)

    def components(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(log_phi, phi, mu)``, each N x J, for raw inputs ``X``."""
        Xs = self.standardize(X)
        U = Xs if self.encoder is None else self.encoder(Xs)
        cls_in = U if self.architecture == "serial" else Xs
        _, tape = self.classifier.forward(cls_in)
        log_phi = log_softmax(tape.final_z)
        P = self.basis.design_matrix(U, self.diagnostics)
        return log_phi, np.exp(log_phi), P @ self.coeffs.T

    def partition(self, X) -> np.ndarray:
        return self.components(X)[1]

    def cluster_means(self, X) -> np.ndarray:
        return self.components(X)[2]

    def predict_moments(self, X, sigma0_2=None) -> tuple[np.ndarray, np.ndarray]:
        _, phi, mu = self.components(X)
        s0 = self.sigma0_2 if sigma0_2 is None else np.asarray(sigma0_2)
        s0 = s0[:, None] if np.ndim(s0) == 1 else s0
        mean = (phi * mu).sum(axis=1)
        second = (phi * (self.sigma2 + s0 + mu * mu)).sum(axis=1)
        return mean, np.maximum(second - mean * mean, 0.0)

    def predict_mean(self, X) -> np.ndarray:
        return self.predict_moments(X)[0]

    def predict_var(self, X) -> np.ndarray:
        return self.predict_moments(X)[1]


def latent(model: PPOUModel, x):
    return model.latent(x)


def cluster_means(model: PPOUModel, x):
    return model.cluster_means(x)


def predict_mean(model: PPOUModel, x):
    return model.predict_mean(x)


def predict_var(model: PPOUModel, x):
    return model.predict_var(x)


def _normalize_log_weights(logw: np.ndarray, fallback: np.ndarray) -> tuple[np.ndarray, int]:
    with np.errstate(invalid="ignore"):
        norm = logsumexp(logw, axis=1, keepdims=True)
        W = np.exp(logw - norm)
    bad = ~np.isfinite(norm[:, 0])
    if np.any(bad):
        W[bad] = fallback[bad]
    return W, int(np.count_nonzero(bad))


def _log_responsibilities(log_phi, mu, y, var):
    resid = y[:, None] - mu
    with np.errstate(over="ignore"):
        return log_phi - 0.5 * np.log(var) - resid * resid / (2.0 * var)


def e_step(model: PPOUModel, X, y, components=None) -> Responsibilities:
    """Posterior cluster weights, computed in log space and normalized per row."""
    y = np.asarray(y, dtype=np.float64)
    log_phi, phi, mu = model.components(X) if components is None else components
    W, nbad = _normalize_log_weights(_log_responsibilities(log_phi, mu, y, model.sigma2), phi)
    model.diagnostics["estep_fallbacks"] = model.diagnostics.get("estep_fallbacks", 0) + nbad
    return Responsibilities(W, fallback_count=nbad)


def _noise_column(sigma0_2):
    s0 = np.asarray(sigma0_2, dtype=np.float64)
    return s0[:, None] if s0.ndim == 1 else s0


def e_step_noise(
    model: PPOUModel, X, y, components=None, sigma0_2=None, convolved: bool = False
) -> Responsibilities:
    """E-step under additive background noise of variance ``sigma0_2``.

    ``sigma0_2`` may be a per-sample vector. Besides ``W`` this returns the
    shrunk targets ``b = mu + s2/(s2+s0)(y - mu)`` and posterior variances
    ``B = s2 - s2**2/(s2+s0)``, both evaluated in cancellation-free form.
    """
    y = np.asarray(y, dtype=np.float64)
    log_phi, phi, mu = model.components(X) if components is None else components
    s0 = _noise_column(model.sigma0_2 if sigma0_2 is None else sigma0_2)
    s2 = model.sigma2
    var = s2 + s0 if convolved else s2
    W, nbad = _normalize_log_weights(_log_responsibilities(log_phi, mu, y, var), phi)
    model.diagnostics["estep_fallbacks"] = model.diagnostics.get("estep_fallbacks", 0) + nbad
    total = s2 + s0
    # y - (s0/total)(y - mu) == mu + (s2/total)(y - mu); exact b == y when s0 == 0
    b = y[:, None] - (s0 / total) * (y[:, None] - mu)
    B = s2 * s0 / total
    return Responsibilities(W, b=b, B=B, fallback_count=nbad)


def _empty_mask(W: np.ndarray) -> np.ndarray:
    return W.sum(axis=0) < 1e-10 * W.shape[0]


def _floored(model: PPOUModel, num, den, empty):
    new = model.sigma2.copy()
    ok = ~empty
    new[ok] = np.maximum(num[ok] / den[ok], model.sigma_floor2)
    return new


def update_sigma(model: PPOUModel, resp: Responsibilities, X, y, means=None, return_empty=False):
    """Weighted mean squared residual per cluster, floored at ``sigma_floor2``.

    Clusters whose total weight is below ``1e-10 * N`` keep their variance.
    """
    y = np.asarray(y, dtype=np.float64)
    mu = model.cluster_means(X) if means is None else means
    W = resp.W
    resid = y[:, None] - mu
    num = (W * (resid * resid)).sum(axis=0)
    den = W.sum(axis=0)
    empty = _empty_mask(W)
    new = _floored(model, num, den, empty)
    return (new, empty) if return_empty else new


def update_sigma_noise(
    model: PPOUModel, resp: Responsibilities, X, y, means=None, return_empty=False
):
    """Variance update ``sum w ((b - mu)**2 + B) / sum w`` for the noise model."""
    if resp.b is None or resp.B is None:
        raise ValueError("responsibilities lack the noise-model fields b and B")
    mu = model.cluster_means(X) if means is None else means
    W = resp.W
    dev = resp.b - mu
    num = (W * (dev * dev + resp.B)).sum(axis=0)
    den = W.sum(axis=0)
    empty = _empty_mask(W)
    new = _floored(model, num, den, empty)
    return (new, empty) if return_empty else new
