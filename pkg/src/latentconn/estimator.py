"""scikit-learn estimator around the connectivity VAE."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import vae
from .exceptions import ShapeError


class ConnectomeVAE(TransformerMixin, BaseEstimator):
    """Compress connectivity edge vectors into a few latent features.

    ``X`` rows are assembled inputs: the canonical edge vector followed by
    age / 100 (see :func:`latentconn.connectome.assemble_input`). ``fit``
    accepts diagnosis labels as ``y`` but uses them only to stratify the
    validation split. ``transform`` returns noise-free latent means.

    Attributes
    ----------
    model_ : VaeModel
    history_ : list of LossRecord
    latent_mean_, latent_sd_ : ndarray
        Cohort statistics of the encoded training inputs.
    """

    def __init__(
        self,
        n_latent=2,
        hidden=(128, 128),
        epochs=50,
        batch_size=64,
        validation_fraction=0.1,
        rho=0.95,
        eps=1e-6,
        learning_rate=1.0,
        likelihood="bernoulli",
        noise_draws=1,
        random_state=0,
    ):
        self.n_latent = n_latent
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.rho = rho
        self.eps = eps
        self.learning_rate = learning_rate
        self.likelihood = likelihood
        self.noise_draws = noise_draws
        self.random_state = random_state

    def _config(self):
        return vae.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            validation_fraction=self.validation_fraction,
            seed=0 if self.random_state is None else int(self.random_state),
            hidden=tuple(self.hidden),
            n_latent=self.n_latent,
            rho=self.rho,
            eps=self.eps,
            learning_rate=self.learning_rate,
            likelihood=self.likelihood,
            noise_draws=self.noise_draws,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        model, history = vae.train(X, self._config(), labels=y)
        self._set_fitted(model)
        self.history_ = history
        return self

    def _set_fitted(self, model):
        self.model_ = model
        self.n_features_in_ = model.n_edges + 1
        self.latent_mean_ = model.cohort_mean
        self.latent_sd_ = model.cohort_sd

    @classmethod
    def from_model(cls, model):
        """Wrap an already trained (e.g. loaded) model."""
        cfg = model.config
        est = cls(
            n_latent=cfg.n_latent, hidden=cfg.hidden, epochs=cfg.epochs,
            batch_size=cfg.batch_size, validation_fraction=cfg.validation_fraction,
            rho=cfg.rho, eps=cfg.eps, learning_rate=cfg.learning_rate,
            likelihood=cfg.likelihood, noise_draws=cfg.noise_draws, random_state=cfg.seed,
        )
        est._set_fitted(model)
        est.history_ = list(model.history)
        return est

    def _validate(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {X.shape[1]} columns, model expects {self.n_features_in_}")
        return X

    def transform(self, X):
        X = self._validate(X)
        return vae.extract_features(self.model_, X)

    def decode(self, Z, age=None):
        """Edge probabilities for latent rows ``Z``; age in years (default cohort mean)."""
        check_is_fitted(self, "model_")
        Z = check_array(Z, dtype=np.float64)
        return vae.decode(self.model_, Z, self.model_.mean_age if age is None else age)

    def score(self, X, y=None):
        """Negative mean noise-free objective per subject (higher is better)."""
        X = self._validate(X)
        recon, kl = vae.evaluate_loss(self.model_, X, self.model_.config.likelihood)
        return -(recon + kl)

    def get_feature_names_out(self, input_features=None):
        return np.array([f"f{k + 1}" for k in range(self.n_latent)], dtype=object)
