"""scikit-learn estimator wrapper around the EM trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import trainer
from .mixture import ARCHITECTURES, Z95, PPOUModel
from .nn import ACTIVATIONS


class PPOURegressor(RegressorMixin, TransformerMixin, BaseEstimator):
    """Partition-of-unity mixture of polynomial experts trained by EM.

    A softmax classifier splits the input domain into ``n_partitions`` soft
    clusters; each cluster carries a polynomial of total degree ``degree``
    in latent coordinates and a Gaussian noise variance. ``architecture``
    selects the identity encoder (``"basic"``), or a learned encoder of
    width ``latent_dim`` feeding the classifier (``"serial"``) or running
    alongside it on the raw inputs (``"parallel"``).

    ``predict`` returns the mixture mean; ``predict(X, return_std=True)``
    also returns the mixture standard deviation. ``transform`` maps inputs
    to the latent coordinates the polynomials are defined on.
    """

    def __init__(
        self,
        n_partitions=4,
        degree=2,
        basis="chebyshev",
        architecture="basic",
        latent_dim=None,
        encoder_depth=4,
        encoder_width=16,
        classifier_depth=4,
        classifier_width=8,
        activation="tanh",
        residual=True,
        standardize=True,
        loss="auto",
        max_iter=500,
        grad_steps=10,
        learning_rate=1e-3,
        batch_size=None,
        pretrain_epochs=0,
        kmeans_space="input",
        tol=1e-8,
        patience=20,
        noise_model=False,
        sigma0_2=0.0,
        convolved_responsibilities=False,
        workers=1,
        random_state=0,
    ):
        self.n_partitions = n_partitions
        self.degree = degree
        self.basis = basis
        self.architecture = architecture
        self.latent_dim = latent_dim
        self.encoder_depth = encoder_depth
        self.encoder_width = encoder_width
        self.classifier_depth = classifier_depth
        self.classifier_width = classifier_width
        self.activation = activation
        self.residual = residual
        self.standardize = standardize
        self.loss = loss
        self.max_iter = max_iter
        self.grad_steps = grad_steps
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.pretrain_epochs = pretrain_epochs
        self.kmeans_space = kmeans_space
        self.tol = tol
        self.patience = patience
        self.noise_model = noise_model
        self.sigma0_2 = sigma0_2
        self.convolved_responsibilities = convolved_responsibilities
        self.workers = workers
        self.random_state = random_state

    def _validate_params(self, n_features=None):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture: expected one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation: expected one of {ACTIVATIONS}, got {self.activation!r}")
        if int(self.n_partitions) < 1:
            raise ValueError("n_partitions: must be >= 1")
        if int(self.degree) < 0:
            raise ValueError("degree: must be >= 0")
        if self.architecture == "basic":
            if self.latent_dim is not None and n_features is not None and self.latent_dim != n_features:
                raise ValueError(
                    f"latent_dim: basic architecture uses the inputs directly, "
                    f"so latent_dim must be {n_features} or None, got {self.latent_dim}"
                )
        elif self.latent_dim is None or int(self.latent_dim) < 1:
            raise ValueError(f"latent_dim: {self.architecture} architecture needs latent_dim >= 1")

    def train_config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            loss=self.loss,
            max_iter=self.max_iter,
            grad_steps=self.grad_steps,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            pretrain_epochs=self.pretrain_epochs,
            kmeans_space=self.kmeans_space,
            tol=self.tol,
            patience=self.patience,
            seed=0 if self.random_state is None else int(self.random_state),
            noise_model=self.noise_model,
            sigma0_2=self.sigma0_2,
            convolved_responsibilities=self.convolved_responsibilities,
            workers=self.workers,
        )

    def fit(self, X, y, noise_floor=None, X_test=None, y_test=None, callback=None):
        """Train from scratch.

        ``noise_floor`` gives an optional per-sample background noise
        variance (used only with ``noise_model=True``). ``X_test``/``y_test``
        add a test error to every per-iteration record; ``callback`` receives
        each record as it is produced.
        """
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        self._validate_params(X.shape[1])
        config = self.train_config()
        self.model_ = trainer.init_model(
            X,
            y,
            n_partitions=int(self.n_partitions),
            degree=int(self.degree),
            architecture=self.architecture,
            basis_family=self.basis,
            latent_dim=self.latent_dim,
            encoder_depth=self.encoder_depth,
            encoder_width=self.encoder_width,
            classifier_depth=self.classifier_depth,
            classifier_width=self.classifier_width,
            activation=self.activation,
            residual=self.residual,
            standardize=self.standardize,
            sigma0_2=self.sigma0_2,
            seed=config.seed,
        )
        if noise_floor is not None:
            noise_floor = check_array(noise_floor, ensure_2d=False, dtype=np.float64)
        if X_test is not None:
            X_test = check_array(X_test, dtype=np.float64)
        state = trainer.train(
            self.model_, X, y, config,
            X_test=X_test, y_test=y_test, noise_floor=noise_floor, callback=callback,
        )
        self.history_ = state.history
        self.n_iter_ = state.iteration
        self.converged_ = state.converged
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: PPOUModel, **params) -> PPOURegressor:
        est = cls(**params)
        est.model_ = model
        est.n_features_in_ = model.input_dim
        est.history_ = []
        return est

    def _X(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X

    def predict(self, X, return_std=False):
        mean, var = self.model_.predict_moments(self._X(X))
        return (mean, np.sqrt(var)) if return_std else mean

    def predict_var(self, X):
        return self.model_.predict_var(self._X(X))

    def predict_interval(self, X):
        """Gaussian-approximate 95% interval ``mean +/- 1.96 sd``."""
        mean, sd = self.predict(X, return_std=True)
        return mean - Z95 * sd, mean + Z95 * sd

    def predict_partition(self, X):
        """Index of the dominating partition for each input."""
        return np.argmax(self.model_.partition(self._X(X)), axis=1)

    def partition(self, X):
        return self.model_.partition(self._X(X))

    def transform(self, X):
        return self.model_.latent(self._X(X))

    def evaluate(self, X, y, reference=None):
        return trainer.evaluate(self.model_, self._X(X), y, reference)
