# cvae_beam/harness.py
"""
harness.py
----------
End-to-end experiments. Every run writes its files under
<output root>/<run name>/ and returns an ExperimentReport.

  run_gen_channels / run_gen_feedback / run_train / run_beamform
      single pipeline stages, as exposed by the CLI
  run_motivation      stochastic WMMSE vs WMMSE on the sample mean
  run_offline_scheme  one CVAE trained on true channels of every UE
  run_online_scheme   one CVAE per UE trained on Type II reports
  run_table1          online max sum-rate against training-set size
  run_compare         offline (noisy targets) vs online

Per-trial work is fanned out over a process pool when
evaluation.n_workers > 1; results come back in trial order, so the
numbers do not depend on the worker count.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cvae_beam import beamforming as bf
from cvae_beam.channel import ChannelDataset, generate_channel_set
from cvae_beam.config import ExperimentConfig, config_hash, derive_seed, dump_config, output_root
from cvae_beam.cvae import (
    CvaeModel,
    Variant,
    generate_refined_samples,
    records_from_arrays,
    refine,
    train_cvae,
    train_online_models,
)
from cvae_beam.errors import ConfigError, CvaeBeamError, TrialError
from cvae_beam.feedback import (
    Codebook,
    FeedbackRecord,
    VirtualAntennaMatrix,
    build_type1_codebook,
    build_type2_basis,
    build_virtual_antenna_matrix,
    coarse_estimates,
    complex_normal,
    feedback_arrays,
    feedback_table,
    sample_codebook_channel,
    type2_estimates,
)
from cvae_beam.io import export_channels_csv, load_channels, load_model, save_channels, save_model, write_csv
from cvae_beam.metrics import CdfCurve, cdf_frame, crossing_index, empirical_cdf, median, principal_angles

logger = logging.getLogger(__name__)

ANGLE_GRID = np.linspace(0.0, 90.0, 361)
SOLVERS = ("wmmse", "stochastic", "ezf")


# ---- Reports ------------------------------------------------------------------
@dataclass
class ExperimentReport:
    name: str
    config_hash: str
    files: List[str] = field(default_factory=list)
    summary: Dict[str, float] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class _Run:
    def __init__(self, cfg: ExperimentConfig, name: str):
        self.cfg = cfg
        self.dir = output_root(cfg) / name
        self.report = ExperimentReport(name=name, config_hash=config_hash(cfg),
                                       seeds={"master": cfg.master_seed})
        self._t0 = time.perf_counter()
        logger.info("run %s -> %s (config %s)", name, self.dir, self.report.config_hash)

    def add(self, path) -> Path:
        path = Path(path)
        if str(path) not in self.report.files:
            self.report.files.append(str(path))
        return path

    def csv(self, frame: pd.DataFrame, filename: str) -> Path:
        return self.add(write_csv(frame, self.dir / filename, self.report.config_hash, self.cfg.master_seed))

    def seed(self, label: str, index: int = 0) -> int:
        s = derive_seed(self.cfg.master_seed, label, index)
        self.report.seeds[label if index == 0 else f"{label}:{index}"] = s
        return s

    def finish(self) -> ExperimentReport:
        self.add(dump_config(self.cfg, self.dir / "config.yaml"))
        self.report.wall_clock = time.perf_counter() - self._t0
        logger.info("run %s finished in %.1fs", self.report.name, self.report.wall_clock)
        return self.report


def _fan_out(fn: Callable, jobs: Sequence, n_workers: int) -> List:
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _rate_unit(cfg: ExperimentConfig, x):
    return bf.to_bits(x) if cfg.evaluation.rate_unit == "bits" else x


# ---- Shared data ----------------------------------------------------------------
@dataclass(eq=False)
class ExperimentData:
    """Channels, feedback and estimates of one experiment; slots [n_train, T) are held out."""

    dataset: ChannelDataset
    Q: VirtualAntennaMatrix
    codebook: Codebook
    pmi: np.ndarray
    cqi: np.ndarray
    coarse: np.ndarray
    type2: np.ndarray
    n_train: int

    @property
    def n_ues(self) -> int:
        return self.dataset.n_ues

    @property
    def test_slots(self) -> np.ndarray:
        return np.arange(self.n_train, self.dataset.n_snapshots)


def prepare_data(cfg: ExperimentConfig, dataset: Optional[ChannelDataset] = None) -> ExperimentData:
    if dataset is None:
        seed = derive_seed(cfg.master_seed, "channel")
        dataset = generate_channel_set(replace(cfg.channel, rng_seed=seed))
    fb = cfg.feedback
    Q = build_virtual_antenna_matrix(dataset.n_antennas, fb.n_ports)
    cb = build_type1_codebook(fb.n_ports, fb.oversampling)
    basis = build_type2_basis(fb.n_ports)

    pmi, cqi = feedback_arrays(dataset.h, Q, cb, fb.covariance_window)
    coarse = coarse_estimates(pmi, Q, cb)
    flat = dataset.h.reshape(-1, dataset.n_antennas)
    type2 = type2_estimates(flat, Q, basis, fb.type2_beams, fb.amp_bits, fb.phase_bits).reshape(dataset.h.shape)

    train, test = dataset.split(cfg.evaluation.test_fraction)
    n_train, n_test = train.shape[1], test.shape[1]
    logger.info("prepared %d UEs x %d snapshots (%d train / %d test)", dataset.n_ues,
                dataset.n_snapshots, n_train, n_test)
    return ExperimentData(dataset=dataset, Q=Q, codebook=cb, pmi=pmi, cqi=cqi, coarse=coarse,
                          type2=type2, n_train=n_train)


def _test_inputs(cfg: ExperimentConfig, data: ExperimentData) -> Tuple[np.ndarray, np.ndarray]:
    """(ue, t) pairs of held-out inputs, subsampled to evaluation.max_test_inputs."""
    ue, t = np.meshgrid(np.arange(data.n_ues), data.test_slots, indexing="ij")
    ue, t = ue.ravel(), t.ravel()
    limit = cfg.evaluation.max_test_inputs
    if ue.size > limit:
        rng = np.random.default_rng(derive_seed(cfg.master_seed, "test-inputs"))
        keep = np.sort(rng.choice(ue.size, size=limit, replace=False))
        ue, t = ue[keep], t[keep]
    return ue, t


def _refined_angles(cfg: ExperimentConfig, data: ExperimentData, models: Sequence[CvaeModel],
                    ue: np.ndarray, t: np.ndarray, label: str) -> np.ndarray:
    angles = np.empty(ue.size)
    for l in range(data.n_ues):
        mask = ue == l
        if not np.any(mask):
            continue
        seed = derive_seed(cfg.master_seed, f"{label}-refine", l)
        refined = refine(models[l], data.coarse[l, t[mask]], data.cqi[l, t[mask]], seed)
        angles[mask] = principal_angles(data.dataset.h[l, t[mask]], refined)
    return angles


def _angle_summary(curves: Dict[str, np.ndarray]) -> Tuple[Dict[str, CdfCurve], Dict[str, float]]:
    cdfs = {label: empirical_cdf(a, ANGLE_GRID) for label, a in curves.items()}
    return cdfs, {f"median_angle_{label}": median(a) for label, a in curves.items()}


# ---- Training -------------------------------------------------------------------
def _train_offline(cfg: ExperimentConfig, data: ExperimentData, noise_variance: float,
                   label: str) -> Tuple[CvaeModel, List[Dict[str, float]]]:
    """One model over all UEs' training slots; targets are h plus CN(0, noise_variance) when > 0."""
    n = data.n_train
    h = np.array(data.dataset.h[:, :n])
    if noise_variance > 0:
        rng = np.random.default_rng(derive_seed(cfg.master_seed, f"{label}-target-noise"))
        h = h + complex_normal(rng, h.shape, np.sqrt(noise_variance))
    records = records_from_arrays(h.reshape(-1, h.shape[-1]),
                                  data.coarse[:, :n].reshape(-1, h.shape[-1]),
                                  data.cqi[:, :n].ravel())
    hyper = replace(cfg.cvae.train, rng_seed=derive_seed(cfg.master_seed, f"{label}-train"))
    logger.info("training offline cvae %s on %d records", label, len(records))
    return train_cvae(records, Variant.OFFLINE, hyper, cfg.cvae.latent_dim, cfg.cvae.hidden(Variant.OFFLINE))


def _train_online(cfg: ExperimentConfig, data: ExperimentData, label: str,
                  n_records: Optional[int] = None) -> Tuple[List[CvaeModel], List[Dict[str, float]]]:
    """One model per UE on its own first `n_records` training slots with Type II targets."""
    n = data.n_train if n_records is None else min(n_records, data.n_train)
    if n_records is not None and n_records > data.n_train:
        logger.warning("%s: asked for %d records per UE, only %d training slots", label, n_records, data.n_train)
    models, histories = train_online_models(
        [records_from_arrays(data.type2[l, :n], data.coarse[l, :n], data.cqi[l, :n]) for l in range(data.n_ues)],
        cfg.cvae.train,
        seeds=[derive_seed(cfg.master_seed, f"{label}-train", l) for l in range(data.n_ues)],
        latent_dim=cfg.cvae.latent_dim,
        hidden=cfg.cvae.hidden(Variant.ONLINE),
        map_fn=partial(_fan_out, n_workers=cfg.evaluation.n_workers),
    )
    history = [{"ue": l, **row} for l, rows in enumerate(histories) for row in rows]
    return models, history


# ---- Sum-rate trials ------------------------------------------------------------
@dataclass
class _RateJob:
    trial: int
    slot: int
    h_true: np.ndarray
    coarse: np.ndarray
    cqi: np.ndarray
    pmi: np.ndarray
    models: Dict[str, List[CvaeModel]]
    with_codebook: bool
    Q: VirtualAntennaMatrix
    codebook: Codebook
    sample_sigma: float
    n_samples: int
    power: float
    opts: bf.SolverOptions
    master_seed: int


def _sample_streams(job: _RateJob) -> Dict[str, np.ndarray]:
    """(samples, L, N_A) streams per source, each UE's draws rescaled by sqrt(CQI)."""
    L = job.h_true.shape[0]
    sources = {}
    for label, models in job.models.items():
        sources[label] = np.stack([
            generate_refined_samples(models[l], job.coarse[l], float(job.cqi[l]), job.n_samples,
                                     derive_seed(job.master_seed, f"{label}-samples-{l}", job.trial))
            for l in range(L)
        ])
    if job.with_codebook:
        sources["codebook"] = np.stack([
            sample_codebook_channel(FeedbackRecord(l, job.slot, int(job.pmi[l]), float(job.cqi[l])),
                                    job.Q, job.codebook, job.sample_sigma, job.n_samples,
                                    derive_seed(job.master_seed, f"codebook-samples-{l}", job.trial))
            for l in range(L)
        ])
    scale = np.sqrt(job.cqi)
    return {label: S.transpose(1, 0, 2) * scale[None, :, None] for label, S in sources.items()}


def _rate_trial(job: _RateJob) -> Dict[str, np.ndarray]:
    """
    One held-out slot: WMMSE and EZF on the scaled coarse estimates, and one
    stochastic WMMSE run per sample source, each scored on the true channels
    after every iteration.
    """
    try:
        L = job.h_true.shape[0]
        H_est = job.coarse * np.sqrt(job.cqi)[:, None]
        sig = job.opts.sigmas(L)
        V_w = bf.wmmse(H_est, job.power, job.opts)
        out = {"wmmse": np.array(bf.sum_rate(job.h_true, V_w, sig)),
               "ezf": np.array(bf.sum_rate(job.h_true, bf.ezf(H_est, job.power), sig))}
        for label, stream in _sample_streams(job).items():
            _, trace = bf.stochastic_wmmse(stream, job.power, job.opts, init=V_w, eval_channels=job.h_true)
            out[label] = np.array([p.sum_rate for p in trace])
        return out
    except CvaeBeamError as e:
        raise TrialError(f"rate trial {job.trial} (slot {job.slot}): {e}") from e


def _rate_slots(cfg: ExperimentConfig, data: ExperimentData) -> np.ndarray:
    slots = data.test_slots
    count = min(cfg.evaluation.n_rate_trials, slots.size)
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "rate-slots"))
    return np.sort(rng.choice(slots, size=count, replace=False))


def _rate_trials(cfg: ExperimentConfig, data: ExperimentData, models: Dict[str, List[CvaeModel]],
                 with_codebook: bool) -> List[Dict[str, np.ndarray]]:
    jobs = [
        _RateJob(trial=k, slot=int(t), h_true=np.array(data.dataset.h[:, t]), coarse=data.coarse[:, t],
                 cqi=data.cqi[:, t], pmi=data.pmi[:, t], models=models, with_codebook=with_codebook,
                 Q=data.Q, codebook=data.codebook, sample_sigma=cfg.feedback.sample_sigma,
                 n_samples=cfg.evaluation.n_samples, power=cfg.evaluation.power_budget,
                 opts=cfg.solver, master_seed=cfg.master_seed)
        for k, t in enumerate(_rate_slots(cfg, data))
    ]
    return _fan_out(_rate_trial, jobs, cfg.evaluation.n_workers)


def _rate_frame(cfg: ExperimentConfig, results: List[Dict[str, np.ndarray]]) -> pd.DataFrame:
    """Trial-averaged curves: one row per sample count, constant columns for WMMSE/EZF."""
    n = cfg.evaluation.n_samples
    frame = {"n_samples": np.arange(1, n + 1)}
    for label in results[0]:
        mean = np.mean([r[label] for r in results], axis=0)
        frame[f"sumrate_{label}"] = _rate_unit(cfg, np.broadcast_to(mean, (n,)).copy())
    return pd.DataFrame(frame)


def _rate_summary(frame: pd.DataFrame) -> Dict[str, float]:
    out = {}
    for col in frame.columns:
        if col.startswith("sumrate_"):
            out[f"max_{col}"] = float(frame[col].max())
            out[f"final_{col}"] = float(frame[col].iloc[-1])
    return out


# ---- Pipeline stages ------------------------------------------------------------
def run_gen_channels(cfg: ExperimentConfig, csv: bool = False) -> ExperimentReport:
    run = _Run(cfg, "channels")
    dataset = generate_channel_set(replace(cfg.channel, rng_seed=run.seed("channel")))
    run.add(save_channels(dataset, run.dir / "channels.bgch"))
    if csv:
        run.add(export_channels_csv(dataset, run.dir / "channels.csv", run.report.config_hash, cfg.master_seed))
    run.report.summary = {
        "n_ues": dataset.n_ues,
        "n_snapshots": dataset.n_snapshots,
        "mean_gain_per_antenna": float(np.mean(np.abs(dataset.h) ** 2)),
    }
    return run.finish()


def run_gen_feedback(cfg: ExperimentConfig, channels_path=None) -> ExperimentReport:
    run = _Run(cfg, "feedback")
    dataset = load_channels(channels_path) if channels_path else None
    data = prepare_data(cfg, dataset)
    run.csv(feedback_table(data.dataset.h, data.Q, data.codebook, cfg.feedback.covariance_window), "feedback.csv")
    run.add(save_channels(data.coarse, run.dir / "coarse.bgch"))
    run.add(save_channels(data.type2, run.dir / "type2.bgch"))
    ue, t = _test_inputs(cfg, data)
    h = data.dataset.h[ue, t]
    run.report.summary = {
        "median_angle_coarse": median(principal_angles(h, data.coarse[ue, t])),
        "median_angle_type2": median(principal_angles(h, data.type2[ue, t])),
        "mean_cqi": float(np.mean(data.cqi)),
    }
    return run.finish()


def run_train(cfg: ExperimentConfig, scheme: Optional[str] = None) -> ExperimentReport:
    """Trains the given scheme, or cvae.variant from the config when none is given."""
    variant = Variant(scheme) if scheme else cfg.cvae.variant
    run = _Run(cfg, f"train-{variant.value}")
    data = prepare_data(cfg)
    if variant is Variant.OFFLINE:
        run.seed("offline-train")
        model, history = _train_offline(cfg, data, cfg.evaluation.training_noise_variance, "offline")
        run.add(save_model(model, run.dir / "offline.bgvm"))
        models = [model] * data.n_ues
    else:
        models, history = _train_online(cfg, data, "online")
        for l, m in enumerate(models):
            run.seed("online-train", l)
            run.add(save_model(m, run.dir / f"online_ue{l}.bgvm"))
    run.csv(pd.DataFrame(history), f"training_{variant.value}.csv")
    ue, t = _test_inputs(cfg, data)
    angles = _refined_angles(cfg, data, models, ue, t, variant.value)
    run.report.summary = {"median_angle_refined": median(angles), "final_loss": float(history[-1]["loss"])}
    return run.finish()


def run_beamform(cfg: ExperimentConfig, solver: str, model_path=None, slot: Optional[int] = None) -> ExperimentReport:
    """
    One solver on one held-out slot. The stochastic solver draws CVAE samples
    when `model_path` names a saved model and codebook samples otherwise.
    The WMMSE trace follows the estimated channels it optimizes; EZF and
    stochastic rows are scored on the true channels.
    """
    if solver not in SOLVERS:
        raise ConfigError(f"solver must be one of {', '.join(SOLVERS)}, got {solver!r}")
    run = _Run(cfg, f"beamform-{solver}")
    data = prepare_data(cfg)
    t = int(data.test_slots[0] if slot is None else slot)
    if not 0 <= t < data.dataset.n_snapshots:
        raise ConfigError(f"slot {t} outside [0, {data.dataset.n_snapshots})")
    P = cfg.evaluation.power_budget
    h_true = np.array(data.dataset.h[:, t])
    scale = np.sqrt(data.cqi[:, t])
    H_est = data.coarse[:, t] * scale[:, None]
    sig = cfg.solver.sigmas(data.n_ues)

    trace: List[bf.TracePoint] = []
    if solver == "wmmse":
        V = bf.wmmse(H_est, P, cfg.solver, trace=trace)
    elif solver == "ezf":
        V = bf.ezf(H_est, P)
        trace.append(bf.TracePoint(0, bf.sum_rate(h_true, V, sig), V.power, 0.0))
    else:
        job = _RateJob(trial=0, slot=t, h_true=h_true, coarse=data.coarse[:, t], cqi=data.cqi[:, t],
                       pmi=data.pmi[:, t], models={}, with_codebook=model_path is None, Q=data.Q,
                       codebook=data.codebook, sample_sigma=cfg.feedback.sample_sigma,
                       n_samples=cfg.evaluation.n_samples, power=P, opts=cfg.solver,
                       master_seed=cfg.master_seed)
        if model_path is not None:
            job.models = {"cvae": [load_model(model_path)] * data.n_ues}
        (stream,) = _sample_streams(job).values()
        init = bf.wmmse(H_est, P, cfg.solver)
        V, trace = bf.stochastic_wmmse(stream, P, cfg.solver, init=init, eval_channels=h_true)

    frame = pd.DataFrame([p._asdict() for p in trace])
    frame["sum_rate"] = _rate_unit(cfg, frame["sum_rate"].to_numpy())
    run.csv(frame, "trace.csv")
    run.report.summary = {"slot": t, "sumrate_true": float(_rate_unit(cfg, bf.sum_rate(h_true, V, sig))),
                          "iterations": len(trace)}
    return run.finish()


def run_export_csv(cfg: ExperimentConfig, channels_path, out_path=None) -> ExperimentReport:
    run = _Run(cfg, "export")
    dataset = load_channels(channels_path)
    target = Path(out_path) if out_path else run.dir / (Path(channels_path).stem + ".csv")
    run.add(export_channels_csv(dataset, target, run.report.config_hash, cfg.master_seed))
    run.report.summary = {"rows": dataset.h.size}
    return run.finish()


# ---- Motivation study -----------------------------------------------------------
def _motivation_channels(cfg: ExperimentConfig, n_trials: int) -> np.ndarray:
    """(trials, L, N_A) true channels; trial k's channel does not depend on n_trials."""
    ev = cfg.evaluation
    ch = replace(cfg.channel, n_antennas=ev.motivation_antennas, n_ues=ev.motivation_ues,
                 n_snapshots=n_trials, rng_seed=derive_seed(cfg.master_seed, "motivation-channel"))
    return np.transpose(generate_channel_set(ch).h, (1, 0, 2))


def motivation_trial(cfg: ExperimentConfig, k: int, h_true: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """
    Trial k of the motivation study: n noisy views h + CN(0, sigma^2) of one
    channel set. The stochastic solver takes one view per iteration from a
    WMMSE start on the first view; the baseline reruns WMMSE on the running
    mean of the first n views. Both are scored after every n by the expected
    sum rate over fresh draws from the same distribution and on h itself.
    """
    ev = cfg.evaluation
    if h_true is None:
        h_true = _motivation_channels(cfg, k + 1)[k]
    try:
        rng = np.random.default_rng(derive_seed(cfg.master_seed, "motivation", k))
        L, N = h_true.shape
        P, n = ev.motivation_power, ev.n_samples
        sig = cfg.solver.sigmas(L)
        views = h_true[None] + complex_normal(rng, (n, L, N), ev.motivation_sigma)
        draws = h_true[None] + complex_normal(rng, (ev.motivation_eval_draws, L, N), ev.motivation_sigma)

        out = {name: np.empty(n) for name in ("stochastic", "wmmse", "true_stochastic", "true_wmmse")}

        def score(r: int, V: bf.BeamformerSet) -> None:
            out["stochastic"][r - 1] = bf.expected_sum_rate(draws, V, sig)
            out["true_stochastic"][r - 1] = bf.sum_rate(h_true, V, sig)

        init = bf.wmmse(views[0], P, cfg.solver)
        bf.stochastic_wmmse(views, P, cfg.solver, init=init, on_iterate=score)

        running = np.cumsum(views, axis=0) / np.arange(1, n + 1)[:, None, None]
        for m in range(n):
            V = bf.wmmse(running[m], P, cfg.solver)
            out["wmmse"][m] = bf.expected_sum_rate(draws, V, sig)
            out["true_wmmse"][m] = bf.sum_rate(h_true, V, sig)
        return out
    except CvaeBeamError as e:
        raise TrialError(f"motivation trial {k}: {e}") from e


def _motivation_job(job: Tuple[ExperimentConfig, int, np.ndarray]) -> Dict[str, np.ndarray]:
    cfg, k, h_true = job
    return motivation_trial(cfg, k, h_true)


def run_motivation(cfg: ExperimentConfig) -> ExperimentReport:
    run = _Run(cfg, "fig1")
    ev = cfg.evaluation
    run.seed("motivation-channel")
    H = _motivation_channels(cfg, ev.n_trials)
    results = _fan_out(_motivation_job, [(cfg, k, H[k]) for k in range(ev.n_trials)], ev.n_workers)

    mean = {name: np.mean([r[name] for r in results], axis=0) for name in results[0]}
    frame = pd.DataFrame({
        "n_samples": np.arange(1, ev.n_samples + 1),
        "sumrate_stochastic": _rate_unit(cfg, mean["stochastic"]),
        "sumrate_wmmse": _rate_unit(cfg, mean["wmmse"]),
        "true_stochastic": _rate_unit(cfg, mean["true_stochastic"]),
        "true_wmmse": _rate_unit(cfg, mean["true_wmmse"]),
    })
    run.csv(frame, "motivation.csv")
    cross = crossing_index(mean["stochastic"], mean["wmmse"])
    run.report.summary = {
        "final_sumrate_stochastic": float(frame["sumrate_stochastic"].iloc[-1]),
        "final_sumrate_wmmse": float(frame["sumrate_wmmse"].iloc[-1]),
        "crossing_n_samples": float(cross + 1) if cross is not None else -1.0,
    }
    return run.finish()


# ---- Sample-driven schemes --------------------------------------------------------
def run_offline_scheme(cfg: ExperimentConfig) -> ExperimentReport:
    run = _Run(cfg, "fig-offline")
    data = prepare_data(cfg)
    run.seed("offline-train")
    model, history = _train_offline(cfg, data, cfg.evaluation.training_noise_variance, "offline")
    run.csv(pd.DataFrame(history), "training_offline.csv")
    run.add(save_model(model, run.dir / "offline.bgvm"))
    models = [model] * data.n_ues

    ue, t = _test_inputs(cfg, data)
    h = data.dataset.h[ue, t]
    angles = {
        "coarse": principal_angles(h, data.coarse[ue, t]),
        "cvae_offline": _refined_angles(cfg, data, models, ue, t, "offline"),
    }
    cdfs, summary = _angle_summary(angles)
    run.csv(cdf_frame(cdfs), "angle_cdf.csv")
    # empirical CDFs compared at the coarse median angle
    m = summary["median_angle_coarse"]
    summary["cdf_at_coarse_median_coarse"] = float(np.mean(angles["coarse"] <= m))
    summary["cdf_at_coarse_median_cvae_offline"] = float(np.mean(angles["cvae_offline"] <= m))
    summary["refined_dominates_coarse"] = float(summary["cdf_at_coarse_median_cvae_offline"]
                                                >= summary["cdf_at_coarse_median_coarse"])

    frame = _rate_frame(cfg, _rate_trials(cfg, data, {"cvae_offline": models}, with_codebook=True))
    run.csv(frame, "sumrate.csv")
    summary.update(_rate_summary(frame))
    run.report.summary = summary
    return run.finish()


def _table1(cfg: ExperimentConfig, data: ExperimentData, run: _Run) -> pd.DataFrame:
    ev = cfg.evaluation
    rows = []
    for size in ev.table_sizes:
        peaks, baseline = [], []
        for s in range(ev.table_seeds):
            label = f"table-{size}-{s}"
            models, _ = _train_online(cfg, data, label, n_records=size)
            results = _rate_trials(cfg, data, {"cvae_online": models}, with_codebook=False)
            curve = np.mean([r["cvae_online"] for r in results], axis=0)
            peaks.append(float(curve.max()))
            baseline.append(float(np.mean([r["wmmse"] for r in results])))
        rows.append({"n_train_per_ue": size,
                     "max_sumrate": _rate_unit(cfg, float(np.mean(peaks))),
                     "max_sumrate_std": _rate_unit(cfg, float(np.std(peaks))),
                     "sumrate_wmmse": _rate_unit(cfg, float(np.mean(baseline)))})
        logger.info("table: %d records per UE -> max sum-rate %.4f", size, rows[-1]["max_sumrate"])
    frame = pd.DataFrame(rows)
    run.csv(frame, "table1.csv")
    return frame


def run_online_scheme(cfg: ExperimentConfig) -> ExperimentReport:
    run = _Run(cfg, "fig-online")
    data = prepare_data(cfg)
    models, history = _train_online(cfg, data, "online")
    for l, m in enumerate(models):
        run.seed("online-train", l)
        run.add(save_model(m, run.dir / f"online_ue{l}.bgvm"))
    run.csv(pd.DataFrame(history), "training_online.csv")

    ue, t = _test_inputs(cfg, data)
    h = data.dataset.h[ue, t]
    cdfs, summary = _angle_summary({
        "coarse": principal_angles(h, data.coarse[ue, t]),
        "type2": principal_angles(h, data.type2[ue, t]),
        "cvae_online": _refined_angles(cfg, data, models, ue, t, "online"),
    })
    run.csv(cdf_frame(cdfs), "angle_cdf.csv")

    frame = _rate_frame(cfg, _rate_trials(cfg, data, {"cvae_online": models}, with_codebook=True))
    run.csv(frame, "sumrate.csv")
    summary.update(_rate_summary(frame))
    table = _table1(cfg, data, run)
    summary["table_max_sumrate_largest"] = float(table["max_sumrate"].iloc[-1])
    run.report.summary = summary
    return run.finish()


def run_table1(cfg: ExperimentConfig) -> ExperimentReport:
    run = _Run(cfg, "table1")
    data = prepare_data(cfg)
    table = _table1(cfg, data, run)
    run.report.summary = {f"max_sumrate_{int(n)}": float(x)
                          for n, x in zip(table["n_train_per_ue"], table["max_sumrate"])}
    return run.finish()


def run_compare(cfg: ExperimentConfig) -> ExperimentReport:
    run = _Run(cfg, "fig-compare")
    data = prepare_data(cfg)
    ue, t = _test_inputs(cfg, data)
    h = data.dataset.h[ue, t]

    schemes: Dict[str, List[CvaeModel]] = {}
    angles = {"coarse": principal_angles(h, data.coarse[ue, t])}
    for v in cfg.evaluation.compare_noise_variances:
        label = f"offline_var_{v:g}"
        run.seed(f"{label}-train")
        model, _ = _train_offline(cfg, data, v, label)
        schemes[label] = [model] * data.n_ues
        angles[label] = _refined_angles(cfg, data, schemes[label], ue, t, label)
    schemes["cvae_online"], _ = _train_online(cfg, data, "online")
    angles["cvae_online"] = _refined_angles(cfg, data, schemes["cvae_online"], ue, t, "online")

    cdfs, summary = _angle_summary(angles)
    run.csv(cdf_frame(cdfs), "angle_cdf.csv")
    frame = _rate_frame(cfg, _rate_trials(cfg, data, schemes, with_codebook=True))
    run.csv(frame, "sumrate.csv")
    summary.update(_rate_summary(frame))
    run.report.summary = summary
    return run.finish()
