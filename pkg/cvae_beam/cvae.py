# cvae_beam/cvae.py
"""
cvae.py
-------
Conditional VAE that turns a coarse estimate (h_hat, CQI) into refined
channel samples.

Encoder q(z | h, h_hat, eta): FBR units then two linear heads (mu, log_var).
Decoder f(h_hat, z, eta): FBR units (plus residual blocks offline) then a
linear + batch-norm output of 2*N_A reals (Re, Im).

Complex vectors enter the networks as [Re, Im] rows; h is scaled to unit
norm first, CQI enters as a standardized log10(eta + 1e-12).
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from cvae_beam.errors import ConfigError, DimensionError, TrainingError

logger = logging.getLogger(__name__)

# ---- Defaults ----------------------------------------------------------------
CQI_EPS = 1e-12
COS_EPS = 1e-12
BN_MOMENTUM = 0.1  # torch convention: running = 0.9 * running + 0.1 * batch
LATENT_DIM = 2
HIDDEN_OFFLINE = 512
HIDDEN_ONLINE = 128
N_RESIDUAL_OFFLINE = 6
N_FBR_DECODER = 5
N_FBR_ENCODER = 4

ArrayLike = Union[np.ndarray, Sequence[complex]]


class Variant(str, Enum):
    OFFLINE = "offline"
    ONLINE = "online"


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 1e-3
    lr_decay_epochs: Tuple[int, ...] = (3, 7)
    lr_decay_factor: float = 0.1
    epochs: int = 10
    batch_size: int = 64
    kl_weight: float = 1.0
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.lr_decay_factor > 0 and self.adam_eps > 0):
            raise ConfigError("learning rate, decay factor and adam eps must be > 0")
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("cvae.epochs must be >= 1 and cvae.batch_size >= 2")
        if self.kl_weight < 0:
            raise ConfigError("cvae.kl_weight must be >= 0")
        if any(e < 1 for e in self.lr_decay_epochs):
            raise ConfigError("cvae.lr_decay_epochs must be positive")


@dataclass(frozen=True)
class CvaeConfig:
    variant: Variant = Variant.OFFLINE
    latent_dim: int = LATENT_DIM
    hidden_offline: int = HIDDEN_OFFLINE
    hidden_online: int = HIDDEN_ONLINE
    train: TrainHyper = field(default_factory=TrainHyper)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.latent_dim < 1 or self.hidden_offline < 1 or self.hidden_online < 1:
            raise ConfigError("cvae.latent_dim and hidden widths must be >= 1")

    def hidden(self, variant: Optional[Variant] = None) -> int:
        v = Variant(variant or self.variant)
        return self.hidden_offline if v is Variant.OFFLINE else self.hidden_online


@dataclass(frozen=True, eq=False)
class GaussianLatent:
    mu: Union[np.ndarray, torch.Tensor]
    log_var: Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True, eq=False)
class TrainingRecord:
    h: np.ndarray
    h_hat: np.ndarray
    eta: float

    def __post_init__(self):
        if np.shape(self.h) != np.shape(self.h_hat) or np.ndim(self.h) != 1:
            raise DimensionError("h and h_hat must be vectors of equal length")
        if not self.eta >= 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")


@dataclass(frozen=True, eq=False)
class RecordSet:
    """Columnar TrainingRecord collection: h, h_hat (n, N_A) complex, eta (n,)."""

    h: np.ndarray
    h_hat: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        if self.h.shape != self.h_hat.shape or self.h.ndim != 2 or self.eta.shape != (self.h.shape[0],):
            raise DimensionError(f"inconsistent record shapes {self.h.shape}, {self.h_hat.shape}, {self.eta.shape}")
        if np.any(self.eta < 0):
            raise ConfigError("eta must be >= 0")

    @classmethod
    def from_records(cls, records: Sequence[TrainingRecord]) -> "RecordSet":
        return cls(h=np.stack([r.h for r in records]), h_hat=np.stack([r.h_hat for r in records]),
                   eta=np.array([r.eta for r in records], dtype=float))

    def __len__(self) -> int:
        return self.h.shape[0]

    def __getitem__(self, idx) -> "RecordSet":
        return RecordSet(h=self.h[idx], h_hat=self.h_hat[idx], eta=self.eta[idx])

    @property
    def n_antennas(self) -> int:
        return self.h.shape[1]

    def tensors(self, dtype=torch.float64) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return to_real(self.h, dtype), to_real(self.h_hat, dtype), torch.as_tensor(self.eta, dtype=dtype)


def records_from_arrays(h, h_hat, eta) -> RecordSet:
    return RecordSet(h=np.asarray(h, dtype=np.complex128).reshape(-1, np.shape(h)[-1]),
                     h_hat=np.asarray(h_hat, dtype=np.complex128).reshape(-1, np.shape(h_hat)[-1]),
                     eta=np.asarray(eta, dtype=float).ravel())


# ---- Complex <-> real --------------------------------------------------------
def to_real(x, dtype=torch.float64) -> torch.Tensor:
    x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    return torch.as_tensor(np.concatenate([x.real, x.imag], axis=1), dtype=dtype)


def to_complex(t: torch.Tensor) -> np.ndarray:
    a = t.detach().cpu().numpy().astype(np.float64)
    n = a.shape[1] // 2
    return a[:, :n] + 1j * a[:, n:]


def _unit_rows(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm(dim=1, keepdim=True).clamp_min(COS_EPS)


# ---- Layers ------------------------------------------------------------------
class FbrUnit(nn.Sequential):
    """Fully connected -> batch norm -> ReLU."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__(nn.Linear(d_in, d_out), nn.BatchNorm1d(d_out, momentum=BN_MOMENTUM), nn.ReLU())


class ResidualBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.body = nn.Sequential(FbrUnit(width, width), nn.Linear(width, width),
                                  nn.BatchNorm1d(width, momentum=BN_MOMENTUM))

    def forward(self, x):
        return x + self.body(x)


class CvaeModel(nn.Module):
    def __init__(
        self,
        encoder: nn.Sequential,
        mu_head: nn.Linear,
        logvar_head: nn.Linear,
        decoder: nn.Sequential,
        n_antennas: int,
        latent_dim: int,
        variant: Variant = Variant.OFFLINE,
        hidden: int = 0,
    ):
        super().__init__()
        if latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        self.encoder = encoder
        self.mu_head = mu_head
        self.logvar_head = logvar_head
        self.decoder = decoder
        self.n_antennas = n_antennas
        self.latent_dim = latent_dim
        self.variant = Variant(variant)
        self.hidden = hidden
        self.register_buffer("cqi_mean", torch.zeros(()))
        self.register_buffer("cqi_std", torch.ones(()))

    @property
    def encoder_in(self) -> int:
        return 4 * self.n_antennas + 1

    @property
    def decoder_in(self) -> int:
        return 2 * self.n_antennas + self.latent_dim + 1

    @property
    def dtype(self) -> torch.dtype:
        return self.cqi_mean.dtype

    def set_cqi_stats(self, eta: np.ndarray) -> None:
        logs = np.log10(np.asarray(eta, dtype=float) + CQI_EPS)
        std = float(np.std(logs))
        self.cqi_mean.fill_(float(np.mean(logs)))
        self.cqi_std.fill_(std if std > 0 else 1.0)

    def cqi_feature(self, eta: torch.Tensor) -> torch.Tensor:
        return ((torch.log10(eta + CQI_EPS) - self.cqi_mean) / self.cqi_std)[:, None]

    def encode_tensors(self, h, h_hat, feat) -> Tuple[torch.Tensor, torch.Tensor]:
        x = torch.cat([_unit_rows(h), h_hat, feat], dim=1)
        body = self.encoder(x)
        return self.mu_head(body), self.logvar_head(body)

    def decode_tensors(self, h_hat, z, feat) -> torch.Tensor:
        return self.decoder(torch.cat([h_hat, z, feat], dim=1))

    def forward(self, h, h_hat, eta, noise):
        feat = self.cqi_feature(eta)
        mu, log_var = self.encode_tensors(h, h_hat, feat)
        z = reparameterize(GaussianLatent(mu, log_var), noise)
        return self.decode_tensors(h_hat, z, feat), mu, log_var


def _init_linear(layer: nn.Linear, relu: bool) -> None:
    if relu:
        nn.init.kaiming_uniform_(layer.weight, nonlinearity="relu")
    else:
        nn.init.xavier_uniform_(layer.weight)
    nn.init.zeros_(layer.bias)


def _init_weights(model: CvaeModel) -> None:
    for module in model.modules():
        if isinstance(module, FbrUnit):
            _init_linear(module[0], relu=True)
        elif isinstance(module, ResidualBlock):
            _init_linear(module.body[1], relu=False)
    _init_linear(model.mu_head, relu=False)
    _init_linear(model.logvar_head, relu=False)
    _init_linear(model.decoder[-2], relu=False)


def build_cvae(
    variant: Union[Variant, str],
    n_antennas: int,
    latent_dim: int = LATENT_DIM,
    hidden: Optional[int] = None,
    dtype: torch.dtype = torch.float64,
) -> CvaeModel:
    variant = Variant(variant)
    if hidden is None:
        hidden = HIDDEN_OFFLINE if variant is Variant.OFFLINE else HIDDEN_ONLINE
    enc_in = 4 * n_antennas + 1
    dec_in = 2 * n_antennas + latent_dim + 1
    out = 2 * n_antennas

    encoder = nn.Sequential(FbrUnit(enc_in, hidden), *[FbrUnit(hidden, hidden) for _ in range(N_FBR_ENCODER - 1)])
    layers: List[nn.Module] = [FbrUnit(dec_in, hidden)]
    if variant is Variant.OFFLINE:
        layers += [ResidualBlock(hidden) for _ in range(N_RESIDUAL_OFFLINE)]
    layers += [FbrUnit(hidden, hidden) for _ in range(N_FBR_DECODER - 1)]
    layers += [nn.Linear(hidden, out), nn.BatchNorm1d(out, momentum=BN_MOMENTUM)]

    model = CvaeModel(encoder, nn.Linear(hidden, latent_dim), nn.Linear(hidden, latent_dim),
                      nn.Sequential(*layers), n_antennas, latent_dim, variant, hidden)
    _init_weights(model)
    return model.to(dtype)


def layer_counts(model: CvaeModel) -> Dict[str, int]:
    dec = list(model.decoder)
    return {
        "encoder_fbr": sum(isinstance(m, FbrUnit) for m in model.encoder),
        "encoder_heads": int(isinstance(model.mu_head, nn.Linear)) + int(isinstance(model.logvar_head, nn.Linear)),
        "decoder_residual": sum(isinstance(m, ResidualBlock) for m in dec),
        "decoder_fbr": sum(isinstance(m, FbrUnit) for m in dec),
        "decoder_output": int(len(dec) >= 2 and isinstance(dec[-2], nn.Linear) and isinstance(dec[-1], nn.BatchNorm1d)),
    }


# ---- Forward API (inference mode) -------------------------------------------
def _check_dims(model: CvaeModel, *arrays: np.ndarray) -> None:
    for a in arrays:
        if a.shape[-1] != model.n_antennas:
            raise DimensionError(f"vector length {a.shape[-1]} != model N_A = {model.n_antennas}")


def _eta_tensor(eta, n: int, dtype) -> torch.Tensor:
    return torch.as_tensor(np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy(), dtype=dtype)


@torch.no_grad()
def encode(model: CvaeModel, h: ArrayLike, h_hat: ArrayLike, eta) -> GaussianLatent:
    h = np.atleast_2d(np.asarray(h, dtype=np.complex128))
    h_hat = np.atleast_2d(np.asarray(h_hat, dtype=np.complex128))
    _check_dims(model, h, h_hat)
    model.eval()
    dtype = model.dtype
    feat = model.cqi_feature(_eta_tensor(eta, h.shape[0], dtype))
    mu, log_var = model.encode_tensors(to_real(h, dtype), to_real(h_hat, dtype), feat)
    return GaussianLatent(mu=mu.numpy(), log_var=log_var.numpy())


def reparameterize(latent: GaussianLatent, noise):
    """z = mu + exp(log_var / 2) * noise; works on numpy arrays and tensors."""
    exp = torch.exp if isinstance(latent.log_var, torch.Tensor) else np.exp
    return latent.mu + exp(0.5 * latent.log_var) * noise


@torch.no_grad()
def decode(model: CvaeModel, h_hat: ArrayLike, z, eta) -> np.ndarray:
    """Decoder mean f(h_hat, z, eta) as complex rows (not normalized)."""
    h_hat = np.atleast_2d(np.asarray(h_hat, dtype=np.complex128))
    _check_dims(model, h_hat)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != model.latent_dim:
        raise DimensionError(f"latent length {z.shape[1]} != {model.latent_dim}")
    model.eval()
    dtype = model.dtype
    feat = model.cqi_feature(_eta_tensor(eta, h_hat.shape[0], dtype))
    out = model.decode_tensors(to_real(h_hat, dtype), torch.as_tensor(z, dtype=dtype), feat)
    return to_complex(out)


def _unit_complex(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


def generate_refined_samples(model: CvaeModel, h_hat: ArrayLike, eta: float, count: int, seed: int) -> np.ndarray:
    """`count` unit-norm decodes of one coarse estimate under prior draws z ~ N(0, I)."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    gen = torch.Generator().manual_seed(int(seed))
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    if h_hat.shape != (model.n_antennas,):
        raise DimensionError(f"coarse estimate has shape {h_hat.shape}, model expects ({model.n_antennas},)")
    z = torch.randn(count, model.latent_dim, generator=gen, dtype=torch.float64).numpy()
    h_hat = np.broadcast_to(h_hat, (count, model.n_antennas))
    return _unit_complex(decode(model, h_hat, z, eta))


def refine(model: CvaeModel, h_hat: np.ndarray, eta: np.ndarray, seed: int) -> np.ndarray:
    """One unit-norm refined sample per coarse estimate row."""
    h_hat = np.atleast_2d(h_hat)
    gen = torch.Generator().manual_seed(int(seed))
    z = torch.randn(h_hat.shape[0], model.latent_dim, generator=gen, dtype=torch.float64).numpy()
    return _unit_complex(decode(model, h_hat, z, eta))


# ---- Loss / gradients ---------------------------------------------------------
def kl_divergence(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """Per-row KL(N(mu, diag exp(log_var)) || N(0, I))."""
    return 0.5 * torch.sum(torch.exp(log_var) + mu ** 2 - 1.0 - log_var, dim=1)


def cosine_similarity(h: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """|h^H c| / (||h|| ||c|| + eps) for [Re, Im] rows."""
    n = h.shape[1] // 2
    hr, hi, cr, ci = h[:, :n], h[:, n:], c[:, :n], c[:, n:]
    re = torch.sum(hr * cr + hi * ci, dim=1)
    im = torch.sum(hr * ci - hi * cr, dim=1)
    return torch.sqrt(re ** 2 + im ** 2) / (h.norm(dim=1) * c.norm(dim=1) + COS_EPS)


def _elbo(model: CvaeModel, h, h_hat, eta, kl_weight: float, noise) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    out, mu, log_var = model(h, h_hat, eta, noise)
    kl = kl_divergence(mu, log_var)
    recon = 1.0 - cosine_similarity(h, out)
    loss = torch.mean(kl_weight * kl + recon)
    return loss, {"kl_term": kl.mean(), "recon_term": recon.mean()}


def elbo_loss(model: CvaeModel, batch: RecordSet, hyper: TrainHyper, noise) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Mean over the batch of kl_weight * KL + (1 - cosine similarity). Uses the model's current mode."""
    if len(batch) == 0:
        raise TrainingError("empty batch")
    _check_dims(model, batch.h)
    h, h_hat, eta = batch.tensors(model.dtype)
    loss, parts = _elbo(model, h, h_hat, eta, hyper.kl_weight, torch.as_tensor(noise, dtype=model.dtype))
    return loss, {k: float(v.detach()) for k, v in parts.items()}


def backward(model: CvaeModel, batch: RecordSet, hyper: TrainHyper, noise=None) -> Dict[str, torch.Tensor]:
    """Gradients of elbo_loss for every parameter, computed in training mode."""
    model.train()
    model.zero_grad(set_to_none=True)
    if noise is None:
        gen = torch.Generator().manual_seed(hyper.rng_seed)
        noise = torch.randn(len(batch), model.latent_dim, generator=gen, dtype=model.dtype)
    loss, _ = elbo_loss(model, batch, hyper, noise)
    loss.backward()
    return {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in model.named_parameters()}


# ---- Training -----------------------------------------------------------------
def train_cvae(
    dataset: Union[RecordSet, Sequence[TrainingRecord]],
    variant: Union[Variant, str],
    hyper: TrainHyper,
    latent_dim: int = LATENT_DIM,
    hidden: Optional[int] = None,
    model: Optional[CvaeModel] = None,
) -> Tuple[CvaeModel, List[Dict[str, float]]]:
    """
    Adam with a step schedule, seeded shuffling and seeded latent noise.
    Returns the model in inference mode and one history row per epoch.
    """
    records = dataset if isinstance(dataset, RecordSet) else RecordSet.from_records(list(dataset))
    if len(records) == 0:
        raise TrainingError("empty training set")
    if len(records) < hyper.batch_size:
        raise TrainingError(f"{len(records)} records is fewer than batch_size={hyper.batch_size}")

    torch.manual_seed(hyper.rng_seed)
    if model is None:
        model = build_cvae(variant, records.n_antennas, latent_dim, hidden)
    model.set_cqi_stats(records.eta)
    dtype = model.dtype

    loader = DataLoader(TensorDataset(*records.tensors(dtype)), batch_size=hyper.batch_size, shuffle=True,
                        drop_last=True, generator=torch.Generator().manual_seed(hyper.rng_seed))
    noise_gen = torch.Generator().manual_seed(hyper.rng_seed + 1)
    optimizer = torch.optim.Adam(model.parameters(), lr=hyper.learning_rate,
                                 betas=tuple(hyper.adam_betas), eps=hyper.adam_eps)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=list(hyper.lr_decay_epochs),
                                                     gamma=hyper.lr_decay_factor)

    history: List[Dict[str, float]] = []
    for epoch in range(hyper.epochs):
        model.train()
        lr = optimizer.param_groups[0]["lr"]
        totals = {"loss": 0.0, "kl_term": 0.0, "recon_term": 0.0}
        n_batches = 0
        for h, h_hat, eta in loader:
            noise = torch.randn(h.shape[0], model.latent_dim, generator=noise_gen, dtype=dtype)
            optimizer.zero_grad()
            loss, parts = _elbo(model, h, h_hat, eta, hyper.kl_weight, noise)
            if not torch.isfinite(loss):
                raise TrainingError(f"epoch {epoch}: non-finite loss")
            loss.backward()
            optimizer.step()
            totals["loss"] += float(loss.detach())
            totals["kl_term"] += float(parts["kl_term"].detach())
            totals["recon_term"] += float(parts["recon_term"].detach())
            n_batches += 1
        scheduler.step()
        row = {"epoch": epoch, "lr": lr, **{k: v / n_batches for k, v in totals.items()}}
        history.append(row)
        logger.info("%s cvae epoch %d: loss=%.5f kl=%.5f recon=%.5f lr=%.1e", model.variant.value,
                    epoch, row["loss"], row["kl_term"], row["recon_term"], lr)

    model.eval()
    return model, history


def _train_online_one(job: Tuple[RecordSet, TrainHyper, int, int]) -> Tuple[CvaeModel, List[Dict[str, float]]]:
    records, hyper, latent_dim, hidden = job
    logger.info("online cvae: %d records, seed %d", len(records), hyper.rng_seed)
    return train_cvae(records, Variant.ONLINE, hyper, latent_dim, hidden)


def train_online_models(
    record_sets: Sequence[RecordSet],
    hyper: TrainHyper,
    seeds: Sequence[int],
    latent_dim: int = LATENT_DIM,
    hidden: int = HIDDEN_ONLINE,
    map_fn: Optional[Callable] = None,
) -> Tuple[List[CvaeModel], List[List[Dict[str, float]]]]:
    """
    One independent online model per UE, each with its own seed.

    `map_fn(fn, jobs)` runs the per-UE jobs (builtin map by default; a
    process pool map works too) and must return results in job order.
    """
    if len(record_sets) != len(seeds):
        raise ConfigError(f"{len(record_sets)} record sets but {len(seeds)} seeds")
    jobs = [(records, replace(hyper, rng_seed=int(seed)), latent_dim, hidden)
            for records, seed in zip(record_sets, seeds)]
    results = list((map_fn or map)(_train_online_one, jobs))
    return [m for m, _ in results], [h for _, h in results]
