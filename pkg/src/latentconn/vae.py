"""Age-conditioned variational autoencoder for connectivity edge vectors.

The encoder sees ``[edges, age/100]`` and emits a mean and log-variance per
latent unit; the decoder sees ``[z, age/100]`` and emits edge probabilities
through a sigmoid. Training minimizes the per-subject mean of
reconstruction negative log-likelihood plus the Gaussian KL term.

Randomness: every stream is a ``numpy.random.Generator`` on PCG64, spawned
from ``numpy.random.SeedSequence(seed)`` in the order (split, init, noise).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .connectome import AGE_SCALE, normalize_age
from .exceptions import CheckpointError, NumericalError, ShapeError, ValidationError
from .nnet import Adadelta, DenseLayer, ForwardCache, Network, backward, init_params, sigmoid

SCHEMA = "latentconn.vae/1"
LIKELIHOODS = ("bernoulli", "gaussian")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    validation_fraction: float = 0.1
    seed: int = 0
    hidden: tuple = (128, 128)
    n_latent: int = 2
    rho: float = 0.95
    eps: float = 1e-6
    learning_rate: float = 1.0
    likelihood: str = "bernoulli"
    noise_draws: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if int(self.epochs) < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < float(self.validation_fraction) < 1.0:
            raise ValidationError(
                f"validation_fraction must lie in (0, 1), got {self.validation_fraction}"
            )
        if self.likelihood not in LIKELIHOODS:
            raise ValidationError(f"likelihood must be one of {LIKELIHOODS}")
        if int(self.n_latent) < 1 or not self.hidden or min(self.hidden) < 1:
            raise ValidationError("latent and hidden widths must be positive")
        if int(self.noise_draws) < 1:
            raise ValidationError("noise_draws must be >= 1")
        if not 0.0 < float(self.rho) < 1.0 or float(self.eps) <= 0:
            raise ValidationError("Adadelta needs rho in (0, 1) and eps > 0")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class LatentCode:
    mean: np.ndarray
    log_variance: np.ndarray
    sample: np.ndarray


@dataclass
class LossRecord:
    epoch: int
    train_total: float
    train_recon: float
    train_kl: float
    val_total: float
    val_recon: float
    val_kl: float

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class VaeModel:
    encoder: Network
    mu_head: Network
    logvar_head: Network
    decoder: Network
    config: TrainConfig = field(default_factory=TrainConfig)
    cohort_mean: np.ndarray | None = None
    cohort_sd: np.ndarray | None = None
    mean_age: float | None = None
    n_subjects: int = 0
    input_offset: np.ndarray | None = None
    history: list = field(default_factory=list)

    @property
    def n_edges(self):
        return self.decoder.n_out

    @property
    def n_latent(self):
        return self.mu_head.n_out

    def parameters(self):
        return (
            self.encoder.parameters()
            + self.mu_head.parameters()
            + self.logvar_head.parameters()
            + self.decoder.parameters()
        )

    @property
    def has_cohort_stats(self):
        return self.cohort_mean is not None and self.cohort_sd is not None


def build_model(n_edges, config=None, rng=None):
    """Freshly initialized model for ``n_edges`` edges plus one age input."""
    config = config or TrainConfig()
    if rng is None:
        rng = _streams(config.seed)["init"]
    hidden = list(config.hidden)
    k = config.n_latent
    encoder = init_params([n_edges + 1] + hidden, ["rectifier"] * len(hidden), rng=rng)
    mu_head = init_params([hidden[-1], k], ["identity"], rng=rng)
    logvar_head = init_params([hidden[-1], k], ["identity"], rng=rng)
    decoder = init_params(
        [k + 1] + hidden[::-1] + [n_edges],
        ["rectifier"] * len(hidden) + ["sigmoid"],
        rng=rng,
    )
    return VaeModel(encoder, mu_head, logvar_head, decoder, config=config)


def _streams(seed):
    split, init, noise = np.random.SeedSequence(int(seed)).spawn(3)
    return {
        "split": np.random.Generator(np.random.PCG64(split)),
        "init": np.random.Generator(np.random.PCG64(init)),
        "noise": np.random.Generator(np.random.PCG64(noise)),
    }


def _check_inputs(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_edges + 1:
        raise ShapeError(f"input width {x.shape[-1]} != {model.n_edges} edges + age")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    return x


def encode(model, x, caches=None):
    """Noise-free latent code for one input vector or a batch of them."""
    x = _check_inputs(model, x)
    enc_cache, mu_cache, lv_cache = caches or (None, None, None)
    if model.input_offset is not None:
        x = x - model.input_offset
    h = model.encoder.forward(x, enc_cache)
    mean = model.mu_head.forward(h, mu_cache)
    log_variance = model.logvar_head.forward(h, lv_cache)
    return LatentCode(mean, log_variance, mean.copy())


def reparameterize(code, noise):
    """``z = mean + exp(log_variance / 2) * noise``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != np.shape(code.mean):
        raise ShapeError(f"noise shape {noise.shape} != latent shape {np.shape(code.mean)}")
    return code.mean + np.exp(0.5 * code.log_variance) * noise


def _decoder_input(z, age_norm):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        return np.append(z, age_norm)
    return np.column_stack([z, np.broadcast_to(age_norm, (z.shape[0],))])


def decode(model, z, age):
    """Edge probabilities in (0, 1) for latent ``z`` at ``age`` years."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.n_latent:
        raise ShapeError(f"latent width {z.shape[-1]} != {model.n_latent}")
    if np.ndim(age) == 0:
        age_norm = normalize_age(age)
    else:
        age_norm = np.array([normalize_age(a) for a in age])
    return model.decoder.forward(_decoder_input(z, age_norm))


def kl_divergence(mean, log_variance):
    """KL(N(mean, exp(log_variance)) || N(0, I)), summed over latent units."""
    mean = np.asarray(mean, dtype=np.float64)
    log_variance = np.asarray(log_variance, dtype=np.float64)
    return 0.5 * np.sum(mean**2 + (np.expm1(log_variance) - log_variance), axis=-1)


def elbo_loss(x, reconstruction, code, likelihood="bernoulli"):
    """Per-subject ``(recon, kl, total)``; arrays when given a batch.

    Bernoulli reconstruction is ``-sum(x log p + (1 - x) log(1 - p))``;
    the Gaussian alternative is ``0.5 * sum((x - p)^2)`` (unit variance,
    constant dropped).
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(reconstruction, dtype=np.float64)
    if x.shape != p.shape:
        raise ShapeError(f"data shape {x.shape} != reconstruction shape {p.shape}")
    if np.any((x < 0) | (x > 1)):
        raise ValidationError("edge values must lie in [0, 1]")
    if likelihood == "bernoulli":
        if np.any((p <= 0) | (p >= 1)) or not np.all(np.isfinite(p)):
            raise NumericalError("reconstruction must lie strictly inside (0, 1)")
        recon = -np.sum(x * np.log(p) + (1.0 - x) * np.log1p(-p), axis=-1)
    elif likelihood == "gaussian":
        recon = 0.5 * np.sum((x - p) ** 2, axis=-1)
    else:
        raise ValidationError(f"unknown likelihood {likelihood!r}")
    kl = kl_divergence(code.mean, code.log_variance)
    return recon, kl, recon + kl


def _bernoulli_from_logits(x, a):
    # softplus(a) - x*a, stable for any a
    return np.sum(np.maximum(a, 0.0) - x * a + np.log1p(np.exp(-np.abs(a))), axis=-1)


def loss_and_grads(model, inputs, noise, likelihood=None):
    """Batch-mean objective and its gradient for fixed reparameterization noise.

    Parameters
    ----------
    inputs : (B, n_edges + 1)
        Edge vectors with normalized age in the last column.
    noise : (B, n_latent)
        Standard-normal draws, one row per input row.

    Returns
    -------
    (recon, kl, grads)
        Means over the batch and gradients aligned with ``model.parameters()``.
    """
    likelihood = likelihood or model.config.likelihood
    inputs = np.atleast_2d(_check_inputs(model, inputs))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    n = inputs.shape[0]
    edges = inputs[:, :-1]
    age_norm = inputs[:, -1]

    caches = (ForwardCache(), ForwardCache(), ForwardCache())
    code = encode(model, inputs, caches)
    std = np.exp(0.5 * code.log_variance)
    z = code.mean + std * noise
    dec_cache = ForwardCache()
    out = model.decoder.forward(_decoder_input(z, age_norm), dec_cache)
    logits = dec_cache.pre[-1]

    if likelihood == "bernoulli":
        recon = _bernoulli_from_logits(edges, logits)
        d_logits = out - edges
    elif likelihood == "gaussian":
        recon = 0.5 * np.sum((edges - out) ** 2, axis=-1)
        d_logits = (out - edges) * out * (1.0 - out)
    else:
        raise ValidationError(f"unknown likelihood {likelihood!r}")
    kl = kl_divergence(code.mean, code.log_variance)

    scale = 1.0 / n
    dec_grads, d_dec_in = backward(model.decoder, dec_cache, d_logits * scale, wrt_preactivation=True)
    d_z = d_dec_in[:, : model.n_latent]
    d_mean = d_z + code.mean * scale
    d_logvar = d_z * noise * 0.5 * std + 0.5 * np.expm1(code.log_variance) * scale
    mu_grads, d_h_mu = backward(model.mu_head, caches[1], d_mean)
    lv_grads, d_h_lv = backward(model.logvar_head, caches[2], d_logvar)
    enc_grads, _ = backward(model.encoder, caches[0], d_h_mu + d_h_lv)
    grads = enc_grads + mu_grads + lv_grads + dec_grads
    return float(np.mean(recon)), float(np.mean(kl)), grads


def evaluate_loss(model, inputs, likelihood):
    """Noise-free mean (recon, kl) over ``inputs``."""
    code = encode(model, inputs)
    dec_cache = ForwardCache()
    model.decoder.forward(_decoder_input(code.mean, inputs[:, -1]), dec_cache)
    logits = dec_cache.pre[-1]
    edges = inputs[:, :-1]
    if likelihood == "bernoulli":
        recon = _bernoulli_from_logits(edges, logits)
    else:
        recon = 0.5 * np.sum((edges - dec_cache.outputs[-1]) ** 2, axis=-1)
    kl = kl_divergence(code.mean, code.log_variance)
    return float(np.mean(recon)), float(np.mean(kl))


def validation_size(n, fraction):
    """Rows held out: everything past ``floor(n * (1 - fraction))``."""
    n_train = int(math.floor(n * (1.0 - fraction) + 1e-9))
    return n - n_train


def split_dataset(labels, fraction=0.1, seed=0, rng=None):
    """Stratified train/validation index split.

    Labels are used only to keep class proportions equal across the two
    partitions. The validation size is ``n - floor(n * (1 - fraction))`` and
    is shared between classes by largest remainder.

    Returns
    -------
    (train_idx, val_idx) : sorted integer arrays
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must lie in (0, 1), got {fraction}")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValidationError("stratified split needs both classes present")
    n_val = validation_size(n, fraction)
    if n_val < 1 or n_val >= n:
        raise ValidationError(f"fraction {fraction} leaves an empty partition for n={n}")
    if rng is None:
        rng = _streams(seed)["split"]

    members = [np.flatnonzero(labels == c) for c in classes]
    quotas = np.array([m.size * n_val / n for m in members])
    counts = np.floor(quotas).astype(int)
    order = np.argsort(-(quotas - counts), kind="stable")
    for k in order[: n_val - counts.sum()]:
        counts[k] += 1

    val = []
    for m, k in zip(members, counts):
        val.extend(rng.permutation(m)[:k].tolist())
    val_idx = np.sort(np.array(val, dtype=int))
    train_idx = np.setdiff1d(np.arange(n), val_idx)
    if train_idx.size == 0:
        raise ValidationError("training partition is empty")
    return train_idx, val_idx


def train(inputs, config=None, labels=None, callback=None):
    """Fit a fresh model with mini-batch Adadelta.

    Parameters
    ----------
    inputs : (N, n_edges + 1)
        Assembled inputs (edges followed by normalized age).
    config : TrainConfig
    labels : optional sequence
        Diagnosis labels, used only to stratify the validation split.
    callback : optional callable(LossRecord)

    Returns
    -------
    (VaeModel, list of LossRecord)
    """
    config = config or TrainConfig()
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise ShapeError("inputs must be a 2-D array")
    streams = _streams(config.seed)
    n = inputs.shape[0]
    if labels is not None:
        train_idx, val_idx = split_dataset(labels, config.validation_fraction, rng=streams["split"])
    else:
        n_val = validation_size(n, config.validation_fraction)
        perm = streams["split"].permutation(n)
        val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if train_idx.size < 2 or val_idx.size < 2:
        raise ValidationError("need at least 2 subjects in each partition")

    model = build_model(inputs.shape[1] - 1, config, rng=streams["init"])
    _check_inputs(model, inputs)
    # centered encoder inputs keep early Adadelta steps from swamping the rectifiers
    model.input_offset = inputs[train_idx].mean(axis=0)
    if np.any((inputs[:, :-1] < 0) | (inputs[:, :-1] > 1)):
        raise ValidationError("edge values must lie in [0, 1]")
    optimizer = Adadelta(config.rho, config.eps, config.learning_rate)
    params = model.parameters()
    noise_rng = streams["noise"]
    train_x, val_x = inputs[train_idx], inputs[val_idx]
    k = config.noise_draws
    history = []
    for epoch in range(1, config.epochs + 1):
        order = noise_rng.permutation(train_x.shape[0])
        noise = noise_rng.standard_normal((train_x.shape[0], k, config.n_latent))
        sums = np.zeros(2)
        for b, start in enumerate(range(0, order.size, config.batch_size)):
            idx = order[start : start + config.batch_size]
            batch = np.repeat(train_x[idx], k, axis=0)
            eps = noise[idx].reshape(-1, config.n_latent)
            # overflow is reported below as a NumericalError, not as a warning
            with np.errstate(over="ignore", invalid="ignore"):
                recon, kl, grads = loss_and_grads(model, batch, eps, config.likelihood)
            if not (math.isfinite(recon) and math.isfinite(kl)):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            optimizer.step(params, grads)
            sums += np.array([recon, kl]) * idx.size
        tr_recon, tr_kl = sums / train_x.shape[0]
        with np.errstate(over="ignore", invalid="ignore"):
            va_recon, va_kl = evaluate_loss(model, val_x, config.likelihood)
        if not (math.isfinite(va_recon) and math.isfinite(va_kl)):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        record = LossRecord(
            epoch, tr_recon + tr_kl, tr_recon, tr_kl, va_recon + va_kl, va_recon, va_kl
        )
        history.append(record)
        if callback is not None:
            callback(record)

    set_cohort_stats(model, inputs)
    model.history = history
    return model, history


def set_cohort_stats(model, inputs):
    """Store per-feature mean/SD of noise-free encodings and mean age (years)."""
    means = encode(model, inputs).mean
    model.cohort_mean = means.mean(axis=0)
    model.cohort_sd = means.std(axis=0, ddof=1)
    model.mean_age = float(np.mean(inputs[:, -1]) * AGE_SCALE)
    model.n_subjects = int(inputs.shape[0])
    return model


def extract_features(model, inputs):
    """Raw latent means, one row per subject."""
    return encode(model, np.atleast_2d(inputs)).mean


# -- checkpoints ------------------------------------------------------------

def _network_to_json(net):
    return [
        {
            "in": layer.n_in,
            "out": layer.n_out,
            "activation": layer.activation,
            "weights": layer.weights.tolist(),
            "biases": layer.biases.tolist(),
        }
        for layer in net.layers
    ]


def _network_from_json(items, where):
    layers = []
    for i, item in enumerate(items):
        try:
            w = np.array(item["weights"], dtype=np.float64)
            layer = DenseLayer(w, np.array(item["biases"], dtype=np.float64), item["activation"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{where}[{i}]: {exc}") from None
        if layer.weights.shape != (item["out"], item["in"]):
            raise CheckpointError(f"{where}[{i}]: declared dims disagree with weights")
        layers.append(layer)
    try:
        return Network(layers)
    except ShapeError as exc:
        raise CheckpointError(f"{where}: {exc}") from None


def model_to_dict(model):
    return {
        "schema": SCHEMA,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "optimizer": {
            "name": "adadelta",
            "rho": model.config.rho,
            "eps": model.config.eps,
            "learning_rate": model.config.learning_rate,
        },
        "layers": {
            "encoder": _network_to_json(model.encoder),
            "mu_head": _network_to_json(model.mu_head),
            "logvar_head": _network_to_json(model.logvar_head),
            "decoder": _network_to_json(model.decoder),
        },
        "cohort": {
            "mean": None if model.cohort_mean is None else model.cohort_mean.tolist(),
            "sd": None if model.cohort_sd is None else model.cohort_sd.tolist(),
            "mean_age": model.mean_age,
            "n_subjects": model.n_subjects,
        },
        "input_offset": None if model.input_offset is None else model.input_offset.tolist(),
        "history": [r.to_dict() for r in model.history],
    }


def model_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise CheckpointError(f"not a {SCHEMA} checkpoint")
    try:
        config = TrainConfig(**doc["config"])
        layers = doc["layers"]
        nets = {name: _network_from_json(layers[name], f"layers.{name}")
                for name in ("encoder", "mu_head", "logvar_head", "decoder")}
        cohort = doc["cohort"]
        history = [LossRecord(**r) for r in doc["history"]]
    except KeyError as exc:
        raise CheckpointError(f"missing key {exc}") from None
    except (TypeError, ValidationError) as exc:
        raise CheckpointError(f"invalid field: {exc}") from None
    model = VaeModel(
        nets["encoder"], nets["mu_head"], nets["logvar_head"], nets["decoder"],
        config=config,
        cohort_mean=None if cohort.get("mean") is None else np.array(cohort["mean"]),
        cohort_sd=None if cohort.get("sd") is None else np.array(cohort["sd"]),
        mean_age=cohort.get("mean_age"),
        n_subjects=int(cohort.get("n_subjects", 0)),
        history=history,
        input_offset=None if doc.get("input_offset") is None else np.array(doc["input_offset"]),
    )
    if model.input_offset is not None and model.input_offset.shape != (model.encoder.n_in,):
        raise CheckpointError("input_offset width does not match the encoder")
    if model.encoder.n_in != model.n_edges + 1 or model.decoder.n_in != model.n_latent + 1:
        raise CheckpointError("encoder/decoder widths are inconsistent")
    return model


def save_checkpoint(model, path):
    text = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n")


def load_checkpoint(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno} (char {exc.pos})"
        ) from None
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return model_from_dict(doc)
