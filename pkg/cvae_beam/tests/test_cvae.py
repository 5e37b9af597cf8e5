import numpy as np
import pytest
import torch
from torch import nn

from cvae_beam.cvae import (
    CvaeConfig,
    CvaeModel,
    FbrUnit,
    GaussianLatent,
    RecordSet,
    ResidualBlock,
    TrainHyper,
    TrainingRecord,
    Variant,
    backward,
    build_cvae,
    cosine_similarity,
    decode,
    elbo_loss,
    encode,
    generate_refined_samples,
    kl_divergence,
    layer_counts,
    records_from_arrays,
    refine,
    reparameterize,
    to_complex,
    to_real,
    train_cvae,
    train_online_models,
)
from cvae_beam.errors import ConfigError, DimensionError, TrainingError
from cvae_beam.tests.helpers import crandn

N_A = 4


def make_records(rng, n=64, n_antennas=N_A) -> RecordSet:
    h = crandn(rng, n, n_antennas)
    h_hat = h + 0.3 * crandn(rng, n, n_antennas)
    h_hat /= np.linalg.norm(h_hat, axis=1, keepdims=True)
    eta = np.abs(np.sum(h_hat.conj() * h, axis=1)) ** 2
    return records_from_arrays(h, h_hat, eta)


def randomize_bn(model: nn.Module, rng) -> None:
    for m in model.modules():
        if isinstance(m, nn.BatchNorm1d):
            m.running_mean.copy_(torch.as_tensor(rng.normal(size=m.num_features)))
            m.running_var.copy_(torch.as_tensor(rng.uniform(0.5, 2.0, size=m.num_features)))
            m.weight.data.copy_(torch.as_tensor(rng.uniform(0.5, 1.5, size=m.num_features)))
            m.bias.data.copy_(torch.as_tensor(rng.normal(size=m.num_features)))


def np_forward(module: nn.Module, x: np.ndarray) -> np.ndarray:
    """Inference-mode forward pass written out in numpy."""
    if isinstance(module, nn.Sequential):
        for m in module:
            x = np_forward(m, x)
        return x
    if isinstance(module, ResidualBlock):
        return x + np_forward(module.body, x)
    if isinstance(module, nn.Linear):
        return x @ module.weight.detach().numpy().T + module.bias.detach().numpy()
    if isinstance(module, nn.BatchNorm1d):
        rm, rv = module.running_mean.numpy(), module.running_var.numpy()
        g, b = module.weight.detach().numpy(), module.bias.detach().numpy()
        return (x - rm) / np.sqrt(rv + module.eps) * g + b
    if isinstance(module, nn.ReLU):
        return np.maximum(x, 0.0)
    raise TypeError(type(module))


# ---- Architecture -------------------------------------------------------------
def test_offline_layer_counts():
    counts = layer_counts(build_cvae("offline", N_A, hidden=8))
    assert counts == {"encoder_fbr": 4, "encoder_heads": 2, "decoder_residual": 6,
                      "decoder_fbr": 5, "decoder_output": 1}


def test_online_has_no_residual_blocks():
    model = build_cvae(Variant.ONLINE, N_A, hidden=8)
    assert layer_counts(model)["decoder_residual"] == 0
    assert model.hidden == 8
    assert model.decoder[-2].out_features == 2 * N_A


def test_default_widths():
    assert build_cvae("offline", 2).hidden == 512
    assert build_cvae("online", 2).hidden == 128
    cfg = CvaeConfig(variant="online")
    assert cfg.hidden() == 128 and cfg.hidden(Variant.OFFLINE) == 512


def test_model_io_sizes():
    model = build_cvae("online", N_A, latent_dim=3, hidden=8)
    assert model.encoder_in == 4 * N_A + 1
    assert model.decoder_in == 2 * N_A + 3 + 1
    assert model.dtype == torch.float64


# ---- Encoder / decoder --------------------------------------------------------------
def test_zero_heads_give_standard_latent(rng):
    model = build_cvae("online", N_A, hidden=8)
    for head in (model.mu_head, model.logvar_head):
        nn.init.zeros_(head.weight)
        nn.init.zeros_(head.bias)
    lat = encode(model, crandn(rng, 3, N_A), crandn(rng, 3, N_A), [1.0, 2.0, 3.0])
    assert np.array_equal(lat.mu, np.zeros((3, 2)))
    assert np.array_equal(lat.log_var, np.zeros((3, 2)))


def test_encode_is_deterministic(rng):
    model = build_cvae("offline", N_A, hidden=8)
    h, h_hat = crandn(rng, 5, N_A), crandn(rng, 5, N_A)
    a = encode(model, h, h_hat, 1.0)
    b = encode(model, h, h_hat, 1.0)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.log_var, b.log_var)


def test_encode_ignores_channel_scale(rng):
    model = build_cvae("online", N_A, hidden=8)
    h, h_hat = crandn(rng, 2, N_A), crandn(rng, 2, N_A)
    a = encode(model, h, h_hat, 1.0)
    b = encode(model, 7.0 * h, h_hat, 1.0)
    assert np.allclose(a.mu, b.mu, atol=1e-12)


def test_forward_matches_reference(rng):
    model = build_cvae("offline", N_A, hidden=8)
    randomize_bn(model, rng)
    model.set_cqi_stats(np.array([0.5, 1.0, 4.0]))
    h, h_hat = crandn(rng, 6, N_A), crandn(rng, 6, N_A)
    eta = rng.uniform(0.1, 3.0, size=6)
    z = rng.normal(size=(6, 2))
    feat = ((np.log10(eta + 1e-12) - float(model.cqi_mean)) / float(model.cqi_std))[:, None]

    dec_in = np.concatenate([to_real(h_hat).numpy(), z, feat], axis=1)
    ref = np_forward(model.decoder, dec_in)
    out = decode(model, h_hat, z, eta)
    assert np.allclose(out, ref[:, :N_A] + 1j * ref[:, N_A:], atol=1e-10)

    unit = h / np.linalg.norm(h, axis=1, keepdims=True)
    enc_in = np.concatenate([to_real(unit).numpy(), to_real(h_hat).numpy(), feat], axis=1)
    body = np_forward(model.encoder, enc_in)
    lat = encode(model, h, h_hat, eta)
    assert np.allclose(lat.mu, np_forward(model.mu_head, body), atol=1e-10)
    assert np.allclose(lat.log_var, np_forward(model.logvar_head, body), atol=1e-10)


def test_batch_and_single_decodes_agree(rng):
    model = build_cvae("offline", N_A, hidden=8)
    randomize_bn(model, rng)
    h_hat, z = crandn(rng, 5, N_A), rng.normal(size=(5, 2))
    batch = decode(model, h_hat, z, 1.5)
    for i in range(5):
        assert np.allclose(decode(model, h_hat[i], z[i], 1.5)[0], batch[i], atol=1e-10)


def test_decode_dimension_errors(rng):
    model = build_cvae("online", N_A, hidden=8)
    with pytest.raises(DimensionError):
        decode(model, crandn(rng, 1, N_A + 1), np.zeros((1, 2)), 1.0)
    with pytest.raises(DimensionError):
        decode(model, crandn(rng, 1, N_A), np.zeros((1, 3)), 1.0)


def test_complex_real_conversion(rng):
    x = crandn(rng, 3, N_A)
    t = to_real(x)
    assert t.shape == (3, 2 * N_A) and t.dtype == torch.float64
    assert np.array_equal(to_complex(t), x)


# ---- Sampling -----------------------------------------------------------------
def test_reparameterize_limits():
    noise = np.array([[0.3, -1.2]])
    mu = np.array([[1.0, 2.0]])
    assert np.allclose(reparameterize(GaussianLatent(mu, np.full((1, 2), -40.0)), noise), mu, atol=1e-8)
    assert np.array_equal(reparameterize(GaussianLatent(np.zeros((1, 2)), np.zeros((1, 2))), noise), noise)
    t = reparameterize(GaussianLatent(torch.zeros(1, 2), torch.zeros(1, 2)), torch.ones(1, 2))
    assert torch.equal(t, torch.ones(1, 2))


def test_reparameterize_moments(rng):
    n = 100_000
    mu, log_var = np.array([1.0, -2.0]), np.array([0.0, np.log(4.0)])
    z = reparameterize(GaussianLatent(mu, log_var), rng.standard_normal((n, 2)))
    std = np.array([1.0, 2.0])
    assert np.all(np.abs(z.mean(axis=0) - mu) <= 4 * std / np.sqrt(n))
    assert np.allclose(z.std(axis=0), std, rtol=0.02)


def identity_decoder_model() -> CvaeModel:
    """Decoder returns h_hat and ignores z and the CQI feature."""
    dec_in = 2 * N_A + 2 + 1
    linear = nn.Linear(dec_in, 2 * N_A, bias=False)
    with torch.no_grad():
        linear.weight.zero_()
        linear.weight[:, : 2 * N_A] = torch.eye(2 * N_A)
    encoder = nn.Sequential(FbrUnit(4 * N_A + 1, 4))
    model = CvaeModel(encoder, nn.Linear(4, 2), nn.Linear(4, 2), nn.Sequential(linear), N_A, 2, "online", 4)
    return model.to(torch.float64)


def test_latent_independent_decoder_gives_equal_samples(rng):
    model = identity_decoder_model()
    h_hat = crandn(rng, N_A)
    S = generate_refined_samples(model, h_hat, 1.0, count=6, seed=3)
    assert S.shape == (6, N_A)
    assert np.allclose(S, h_hat / np.linalg.norm(h_hat), atol=1e-12)


def test_refined_samples_reproducible_and_unit(rng):
    model = build_cvae("online", N_A, hidden=8)
    h_hat = crandn(rng, N_A)
    a = generate_refined_samples(model, h_hat, 2.0, count=4, seed=11)
    b = generate_refined_samples(model, h_hat, 2.0, count=4, seed=11)
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)
    with pytest.raises(ConfigError):
        generate_refined_samples(model, h_hat, 2.0, count=0, seed=1)
    with pytest.raises(DimensionError):
        generate_refined_samples(model, crandn(rng, N_A + 1), 2.0, count=4, seed=1)


def test_refine_one_sample_per_row(rng):
    model = build_cvae("online", N_A, hidden=8)
    out = refine(model, crandn(rng, 7, N_A), np.ones(7), seed=0)
    assert out.shape == (7, N_A)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0)


# ---- Loss pieces ------------------------------------------------------------------
def test_kl_zero_at_prior():
    assert torch.equal(kl_divergence(torch.zeros(3, 2, dtype=torch.float64), torch.zeros(3, 2, dtype=torch.float64)),
                       torch.zeros(3, dtype=torch.float64))


def test_kl_matches_monte_carlo(rng):
    n = 200_000
    for _ in range(5):
        mu, log_var = rng.normal(size=2), rng.normal(scale=0.5, size=2)
        kl = float(kl_divergence(torch.as_tensor(mu[None]), torch.as_tensor(log_var[None]))[0])
        std = np.exp(0.5 * log_var)
        z = mu + std * rng.standard_normal((n, 2))
        log_q = np.sum(-0.5 * ((z - mu) / std) ** 2 - np.log(std), axis=1)
        log_p = np.sum(-0.5 * z ** 2, axis=1)
        diff = log_q - log_p
        assert abs(diff.mean() - kl) <= 4 * diff.std() / np.sqrt(n)


def test_cosine_similarity_ignores_phase_and_scale(rng):
    h, c = crandn(rng, 4, N_A), crandn(rng, 4, N_A)
    base = cosine_similarity(to_real(h), to_real(c))
    rotated = cosine_similarity(to_real(h), to_real(2.5 * np.exp(0.7j) * c))
    assert torch.allclose(base, rotated, atol=1e-12)
    same = cosine_similarity(to_real(h), to_real(1j * h))
    assert torch.allclose(same, torch.ones(4, dtype=torch.float64), atol=1e-10)


def test_elbo_parts(rng):
    model = build_cvae("online", N_A, hidden=8)
    batch = make_records(rng, n=8)
    model.eval()
    loss, parts = elbo_loss(model, batch, TrainHyper(kl_weight=0.5), np.zeros((8, 2)))
    assert float(loss) == pytest.approx(0.5 * parts["kl_term"] + parts["recon_term"], rel=1e-10)
    assert 0.0 <= parts["recon_term"] <= 1.0


def test_empty_batch_rejected(rng):
    model = build_cvae("online", N_A, hidden=8)
    with pytest.raises(TrainingError):
        elbo_loss(model, make_records(rng, n=4)[:0], TrainHyper(), np.zeros((0, 2)))


# ---- Gradients ----------------------------------------------------------------
def relu_masks(model: nn.Module):
    masks = []
    hooks = [m.register_forward_hook(lambda mod, inp, out: masks.append((inp[0] > 0).clone()))
             for m in model.modules() if isinstance(m, nn.ReLU)]
    return masks, hooks


def test_gradients_match_finite_differences(rng):
    torch.manual_seed(0)
    model = build_cvae("offline", N_A, hidden=6)
    batch = make_records(rng, n=16)
    hyper = TrainHyper(kl_weight=0.7)
    noise = torch.as_tensor(rng.standard_normal((16, 2)))
    grads = backward(model, batch, hyper, noise)
    params = dict(model.named_parameters())
    names = list(params)
    eps = 1e-5
    scale = max(float(g.abs().max()) for g in grads.values())

    checked = 0
    for _ in range(200):
        name = names[rng.integers(len(names))]
        p = params[name]
        idx = int(rng.integers(p.numel()))
        flat = p.data.view(-1)
        orig = float(flat[idx])
        values, mask_sets = [], []
        for delta in (eps, -eps):
            flat[idx] = orig + delta
            masks, hooks = relu_masks(model)
            with torch.no_grad():
                loss, _ = elbo_loss(model, batch, hyper, noise)
            for hk in hooks:
                hk.remove()
            values.append(float(loss))
            mask_sets.append(masks)
        flat[idx] = orig
        if any(not torch.equal(a, b) for a, b in zip(*mask_sets)):
            continue
        fd = (values[0] - values[1]) / (2 * eps)
        g = float(grads[name].view(-1)[idx])
        assert abs(g - fd) <= 1e-4 * scale + 1e-7, name
        checked += 1
    assert checked >= 150


def test_dead_relu_blocks_gradient():
    unit = FbrUnit(3, 2).double()
    with torch.no_grad():
        unit[1].bias.fill_(-100.0)
    unit.eval()
    out = unit(torch.randn(5, 3, dtype=torch.float64))
    assert torch.equal(out, torch.zeros_like(out))
    out.sum().backward()
    assert torch.equal(unit[0].weight.grad, torch.zeros_like(unit[0].weight))


def test_backward_covers_every_parameter(rng):
    model = build_cvae("online", N_A, hidden=8)
    grads = backward(model, make_records(rng, n=8), TrainHyper())
    assert set(grads) == {n for n, _ in model.named_parameters()}
    assert any(float(g.abs().sum()) > 0 for g in grads.values())


# ---- Training -----------------------------------------------------------------
def test_training_is_reproducible(rng):
    records = make_records(rng, n=96)
    hyper = TrainHyper(epochs=2, batch_size=32, lr_decay_epochs=(1,), rng_seed=5)
    m1, h1 = train_cvae(records, "online", hyper, hidden=8)
    m2, h2 = train_cvae(records, "online", hyper, hidden=8)
    assert h1 == h2
    assert [row["epoch"] for row in h1] == [0, 1]
    assert h1[1]["lr"] == pytest.approx(1e-4)
    for a, b in zip(m1.state_dict().values(), m2.state_dict().values()):
        assert torch.equal(a, b)
    assert not m1.training


def test_training_keeps_running_statistics_valid(rng):
    model, history = train_cvae(make_records(rng, n=64), "offline",
                                TrainHyper(epochs=1, batch_size=16), hidden=8)
    assert np.isfinite(history[0]["loss"])
    for m in model.modules():
        if isinstance(m, nn.BatchNorm1d):
            assert torch.all(m.running_var > 0)


def test_training_needs_a_full_batch(rng):
    with pytest.raises(TrainingError):
        train_cvae(make_records(rng, n=10), "online", TrainHyper(batch_size=16), hidden=8)


def test_training_accepts_record_list(rng):
    rs = make_records(rng, n=32)
    records = [TrainingRecord(h=rs.h[i], h_hat=rs.h_hat[i], eta=float(rs.eta[i])) for i in range(32)]
    model, history = train_cvae(records, "online", TrainHyper(epochs=1, batch_size=16), hidden=8)
    assert len(history) == 1
    assert float(model.cqi_std) > 0


def test_online_models_per_ue(rng):
    sets = [make_records(rng, n=32), make_records(rng, n=32)]
    models, histories = train_online_models(sets, TrainHyper(epochs=1, batch_size=16), seeds=[1, 2], hidden=8)
    assert len(models) == 2 and [len(h) for h in histories] == [1, 1]
    assert all(m.variant is Variant.ONLINE for m in models)
    w0, w1 = models[0].decoder[-2].weight, models[1].decoder[-2].weight
    assert not torch.equal(w0, w1)


def test_online_models_use_the_given_map(rng):
    sets = [make_records(rng, n=32) for _ in range(3)]
    calls = []

    def recording_map(fn, jobs):
        calls.append(len(jobs))
        return [fn(job) for job in jobs]

    hyper = TrainHyper(epochs=1, batch_size=16)
    models, _ = train_online_models(sets, hyper, seeds=[4, 5, 6], hidden=8, map_fn=recording_map)
    again, _ = train_online_models(sets, hyper, seeds=[4, 5, 6], hidden=8)
    assert calls == [3]
    for a, b in zip(models, again):
        assert torch.equal(a.decoder[-2].weight, b.decoder[-2].weight)
    with pytest.raises(ConfigError):
        train_online_models(sets, hyper, seeds=[1, 2], hidden=8)


# ---- Validation ---------------------------------------------------------------
def test_hyper_validation():
    with pytest.raises(ConfigError):
        TrainHyper(batch_size=1)
    with pytest.raises(ConfigError):
        TrainHyper(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainHyper(lr_decay_epochs=(0,))


def test_record_validation(rng):
    with pytest.raises(DimensionError):
        TrainingRecord(h=crandn(rng, 3), h_hat=crandn(rng, 4), eta=1.0)
    with pytest.raises(ConfigError):
        TrainingRecord(h=crandn(rng, 3), h_hat=crandn(rng, 3), eta=-1.0)
    rs = make_records(rng, n=5)
    assert len(rs[1:3]) == 2 and rs.n_antennas == N_A


def test_constant_cqi_keeps_unit_scale():
    model = build_cvae("online", N_A, hidden=8)
    model.set_cqi_stats(np.full(10, 2.0))
    assert float(model.cqi_std) == 1.0
    assert float(model.cqi_mean) == pytest.approx(np.log10(2.0))
