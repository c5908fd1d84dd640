import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentconn import vae
from latentconn.exceptions import CheckpointError, NumericalError, ShapeError, ValidationError
from latentconn.nnet import grad_check
from latentconn.vae import (
    LatentCode,
    TrainConfig,
    build_model,
    decode,
    elbo_loss,
    encode,
    extract_features,
    kl_divergence,
    load_checkpoint,
    loss_and_grads,
    reparameterize,
    save_checkpoint,
    split_dataset,
    train,
)

from conftest import toy_inputs


def test_full_size_dimensions():
    model = build_model(4005)
    assert model.encoder.n_in == 4006
    assert [l.n_out for l in model.encoder.layers] == [128, 128]
    assert model.mu_head.n_out == model.logvar_head.n_out == 2
    assert model.decoder.n_in == 3
    assert model.decoder.n_out == 4005


def test_encode_zero_heads_gives_bias(rng):
    model = build_model(10, TrainConfig(hidden=(4, 4)))
    model.mu_head.layers[0].weights[:] = 0
    code = encode(model, toy_inputs(rng, 1)[0])
    np.testing.assert_array_equal(code.mean, [0.0, 0.0])
    model.mu_head.layers[0].biases[:] = [0.25, -1.0]
    np.testing.assert_array_equal(encode(model, toy_inputs(rng, 1)[0]).mean, [0.25, -1.0])


def test_encode_deterministic_and_noise_free(small_model, rng):
    x = toy_inputs(rng, 1)[0]
    a, b = encode(small_model, x), encode(small_model, x)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.log_variance, b.log_variance)
    assert np.array_equal(a.sample, a.mean)


def test_encode_rejects_bad_input(small_model):
    with pytest.raises(ShapeError):
        encode(small_model, np.zeros(10))
    bad = np.zeros(11)
    bad[3] = np.inf
    with pytest.raises(ValidationError):
        encode(small_model, bad)


def test_reparameterize_examples():
    code = LatentCode(np.array([0.5, -0.5]), np.zeros(2), None)
    np.testing.assert_array_equal(reparameterize(code, [0.0, 0.0]), code.mean)
    np.testing.assert_allclose(reparameterize(code, [1.0, 1.0]), [1.5, 0.5])
    code = LatentCode(np.array([0.3, 0.7]), np.array([2 * math.log(2), 0.0]), None)
    np.testing.assert_allclose(reparameterize(code, [1.0, 0.0]), [2.3, 0.7], rtol=1e-15)


def test_decode_properties(small_model, rng):
    for z in rng.normal(0, 5, size=(20, 2)):
        out = decode(small_model, z, 20.0)
        assert out.shape == (10,)
        assert np.all((out > 0) & (out < 1))
    z = np.array([0.1, -0.3])
    assert np.array_equal(decode(small_model, z, 12.0), decode(small_model, z, 12.0))
    last = small_model.decoder.layers[-1]
    last.weights[:] = 0
    last.biases[:] = 0
    np.testing.assert_array_equal(decode(small_model, z, 12.0), 0.5)


def test_decode_batch_matches_rows(small_model, rng):
    z = rng.normal(size=(4, 2))
    batch = decode(small_model, z, 30.0)
    for row, zi in zip(batch, z):
        np.testing.assert_allclose(row, decode(small_model, zi, 30.0), rtol=1e-14)


def test_elbo_examples():
    x = np.full(4005, 0.5)
    code = LatentCode(np.zeros(2), np.zeros(2), None)
    recon, kl, total = elbo_loss(x, x, code)
    assert kl == 0.0
    assert recon == pytest.approx(4005 * math.log(2), rel=1e-13)
    assert total == recon + kl
    code = LatentCode(np.array([1.0, 0.0]), np.zeros(2), None)
    assert elbo_loss(x, x, code)[1] == pytest.approx(0.5, abs=1e-15)


def test_elbo_rejects_out_of_range():
    code = LatentCode(np.zeros(2), np.zeros(2), None)
    with pytest.raises(NumericalError):
        elbo_loss(np.full(3, 0.5), np.array([0.5, 1.0, 0.5]), code)
    with pytest.raises(ValidationError):
        elbo_loss(np.array([0.5, 1.2, 0.5]), np.full(3, 0.5), code)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_kl_nonnegative(mu, logvar):
    kl = kl_divergence(np.array(mu), np.array(logvar))
    assert kl >= 0.0
    if kl == 0.0:
        np.testing.assert_allclose(mu, 0, atol=1e-7)
        np.testing.assert_allclose(logvar, 0, atol=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(1e-6, 1 - 1e-6))
def test_bernoulli_recon_bounded_by_entropy(x, p):
    code = LatentCode(np.zeros(1), np.zeros(1), None)
    nll = elbo_loss(np.array([x]), np.array([p]), code)[0]
    xc = min(max(x, 1e-12), 1 - 1e-12)
    entropy = -(x * math.log(xc) + (1 - x) * math.log(1 - xc))
    assert nll >= entropy - 1e-9
    if 1e-6 < x < 1 - 1e-6:
        at_x = elbo_loss(np.array([x]), np.array([x]), code)[0]
        assert at_x == pytest.approx(entropy, abs=1e-12)


def test_kl_monte_carlo_single_case():
    rng = np.random.default_rng(5)
    mean, logvar = np.array([0.8, -1.2]), np.array([-0.7, 0.9])
    code = LatentCode(mean, logvar, mean)
    z = np.array([reparameterize(code, e) for e in rng.standard_normal((1, 2))])
    eps = rng.standard_normal((200_000, 2))
    z = mean + np.exp(0.5 * logvar) * eps
    var = np.exp(logvar)
    log_q = -0.5 * np.sum(np.log(2 * np.pi * var) + (z - mean) ** 2 / var, axis=1)
    log_p = -0.5 * np.sum(np.log(2 * np.pi) + z**2, axis=1)
    assert np.mean(log_q - log_p) == pytest.approx(kl_divergence(mean, logvar), rel=0.01)


def _random_small_vae(seed, likelihood="bernoulli"):
    model = build_model(10, TrainConfig(hidden=(4, 4), seed=seed, likelihood=likelihood))
    rng = np.random.default_rng(1000 + seed)
    for p in model.parameters():
        if p.ndim == 1:
            p[:] = rng.uniform(-0.5, 0.5, p.shape)
    x = toy_inputs(rng, 3, n_nodes=5)
    noise = rng.standard_normal((3, 2))

    def loss_fn(m, inputs):
        recon, kl, grads = loss_and_grads(m, inputs, noise, likelihood)
        return recon + kl, grads

    return model, loss_fn, x


@pytest.mark.parametrize("likelihood", ["bernoulli", "gaussian"])
@pytest.mark.parametrize("seed", range(5))
def test_objective_gradient(seed, likelihood):
    model, loss_fn, x = _random_small_vae(seed, likelihood)
    assert grad_check(model, loss_fn, x, h=1e-5) < 1e-5


def test_gradient_with_input_offset():
    model, loss_fn, x = _random_small_vae(2)
    model.input_offset = x.mean(axis=0)
    assert grad_check(model, loss_fn, x) < 1e-5


def test_split_972_subjects():
    labels = np.array([1] * 465 + [0] * 507)
    tr, va = split_dataset(labels, 0.1, seed=0)
    assert (tr.size, va.size) == (874, 98)
    assert not set(tr) & set(va)
    for part in (tr, va):
        expected = part.size * 465 / 972
        assert abs(labels[part].sum() - expected) <= 1
    tr2, va2 = split_dataset(labels, 0.1, seed=0)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)
    _, va3 = split_dataset(labels, 0.1, seed=1)
    assert not np.array_equal(va, va3)


def test_split_errors():
    with pytest.raises(ValidationError):
        split_dataset(np.ones(10), 0.1)
    with pytest.raises(ValidationError):
        split_dataset(np.array([0, 1]), 0.6)
    with pytest.raises(ValidationError):
        split_dataset(np.array([0, 1, 0, 1]), 1.0)


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        TrainConfig(validation_fraction=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(likelihood="poisson")


def _toy_training(rng, **kw):
    x = toy_inputs(rng, 30)
    labels = np.arange(30) % 2
    cfg = TrainConfig(hidden=(8, 8), epochs=4, batch_size=8, seed=9, **kw)
    return x, labels, cfg


def test_train_deterministic(rng):
    x, labels, cfg = _toy_training(rng)
    m1, h1 = train(x, cfg, labels=labels)
    m2, h2 = train(x, cfg, labels=labels)
    assert h1 == h2
    for p, q in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(p, q)
    for rec in h1:
        assert rec.train_total == pytest.approx(rec.train_recon + rec.train_kl, rel=1e-12)
        assert rec.val_total == pytest.approx(rec.val_recon + rec.val_kl, rel=1e-12)


def test_train_noise_draws_and_unlabelled(rng):
    x, _, cfg = _toy_training(rng, noise_draws=3)
    model, history = train(x, cfg)
    assert len(history) == 4
    assert model.has_cohort_stats


def test_train_aborts_on_nonfinite(rng, monkeypatch):
    x, labels, cfg = _toy_training(rng)
    monkeypatch.setattr(vae, "loss_and_grads", lambda *a, **k: (float("nan"), 0.0, None))
    with pytest.raises(NumericalError, match="epoch 1, batch 0"):
        train(x, cfg, labels=labels)


def test_train_rejects_tiny_partition(rng):
    x = toy_inputs(rng, 4)
    with pytest.raises(ValidationError):
        train(x, TrainConfig(hidden=(4,), epochs=1), labels=[0, 1, 0, 1])


def test_extract_features_matches_cohort_stats(rng):
    x, labels, cfg = _toy_training(rng)
    model, _ = train(x, cfg, labels=labels)
    feats = extract_features(model, x)
    assert feats.shape == (30, 2)
    np.testing.assert_allclose(feats.mean(axis=0), model.cohort_mean, rtol=1e-12)
    np.testing.assert_allclose(feats.std(axis=0, ddof=1), model.cohort_sd, rtol=1e-12)
    assert np.array_equal(feats, extract_features(model, x))


def test_checkpoint_roundtrip(tmp_path, small_model, rng):
    small_model.input_offset = rng.uniform(size=11)
    path = tmp_path / "ckpt.json"
    save_checkpoint(small_model, path)
    loaded = load_checkpoint(path)
    for z in rng.normal(size=(5, 2)):
        assert np.array_equal(decode(loaded, z, 21.3), decode(small_model, z, 21.3))
    x = toy_inputs(rng, 3)
    assert np.array_equal(extract_features(loaded, x), extract_features(small_model, x))
    doc = json.loads(path.read_text())
    assert doc["cohort"]["mean"] == small_model.cohort_mean.tolist()
    assert doc["cohort"]["sd"] == small_model.cohort_sd.tolist()
    assert doc["config"] == small_model.config.to_dict()
    assert doc["optimizer"]["name"] == "adadelta"
    save_checkpoint(loaded, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path, small_model):
    path = tmp_path / "ckpt.json"
    save_checkpoint(small_model, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError, match="line 1, column"):
        load_checkpoint(path)
    doc = json.loads(text)
    del doc["layers"]["decoder"]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="decoder"):
        load_checkpoint(path)
    path.write_text(json.dumps({"schema": "other"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


@pytest.mark.slow
def test_planted_factor_recovered():
    from latentconn.dataset import design_matrix, labels_of
    from latentconn.synth import SyntheticSpec, generate

    cohort = generate(SyntheticSpec(n_subjects=200, seed=4))
    x = design_matrix(cohort.records)
    model, history = train(x, TrainConfig(epochs=50, seed=4), labels=labels_of(cohort.records))
    feats = extract_features(model, x)
    best = max(abs(np.corrcoef(feats[:, k], cohort.factor)[0, 1]) for k in range(2))
    assert best > 0.5
    assert history[-1].val_total < history[0].val_total
