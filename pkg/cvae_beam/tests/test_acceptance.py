"""
Trend checks at a moderate scale. Deselected by default; run with

    pytest -m acceptance
"""
import numpy as np
import pytest

from cvae_beam import harness
from cvae_beam.config import ExperimentConfig
from cvae_beam.cvae import TrainHyper, records_from_arrays, refine, train_cvae
from cvae_beam.metrics import median, principal_angles
from cvae_beam.tests.helpers import crandn

pytestmark = pytest.mark.acceptance


def moderate_config(seed: int = 2024, **evaluation) -> ExperimentConfig:
    return ExperimentConfig.from_dict({
        "channel": {"n_antennas": 16, "n_ues": 4, "n_snapshots": 2000},
        "cvae": {"hidden_offline": 128, "hidden_online": 64,
                 "train": {"epochs": 10, "batch_size": 64, "lr_decay_epochs": [6, 9]}},
        "evaluation": {"n_trials": 20, "n_samples": 50, "n_rate_trials": 10, "max_test_inputs": 800,
                       "table_sizes": [100, 500, 1000], "table_seeds": 3,
                       "compare_noise_variances": [0.0, 0.2], **evaluation},
        "master_seed": seed,
    })


def test_stochastic_beats_sample_mean_wmmse(out_dir):
    report = harness.run_motivation(moderate_config(n_trials=100, n_samples=100, motivation_ues=4,
                                                    motivation_antennas=8, motivation_sigma=0.1))
    s = report.summary
    assert s["final_sumrate_stochastic"] > s["final_sumrate_wmmse"]
    assert s["crossing_n_samples"] > 0


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_offline_refinement_dominates_coarse(out_dir, seed):
    report = harness.run_offline_scheme(moderate_config(seed))
    s = report.summary
    assert s["refined_dominates_coarse"] == 1.0
    assert s["cdf_at_coarse_median_cvae_offline"] > s["cdf_at_coarse_median_coarse"]
    assert report.summary["median_angle_cvae_offline"] < report.summary["median_angle_coarse"]


def test_scheme_ordering(out_dir):
    s = harness.run_offline_scheme(moderate_config(n_rate_trials=20)).summary
    assert s["final_sumrate_cvae_offline"] >= s["final_sumrate_codebook"]
    assert s["final_sumrate_codebook"] >= s["final_sumrate_ezf"]


def test_type2_reports_beat_type1(out_dir):
    s = harness.run_gen_feedback(moderate_config()).summary
    assert s["median_angle_type2"] < s["median_angle_coarse"]


def test_more_online_data_helps(out_dir):
    s = harness.run_table1(moderate_config()).summary
    peaks = [s["max_sumrate_100"], s["max_sumrate_500"], s["max_sumrate_1000"]]
    assert all(b >= 0.98 * a for a, b in zip(peaks, peaks[1:]))


def test_compare_trends(out_dir):
    s = harness.run_compare(moderate_config(compare_noise_variances=[0.0, 0.2, 0.4])).summary
    assert s["median_angle_cvae_online"] < s["median_angle_coarse"]
    assert s["median_angle_offline_var_0"] <= s["median_angle_offline_var_0.2"]
    assert s["median_angle_offline_var_0.2"] <= s["median_angle_offline_var_0.4"]


def test_cvae_learns_identity_refinement():
    rng = np.random.default_rng(0)
    n, n_antennas = 4000, 8
    h = crandn(rng, n, n_antennas)
    h_hat = h / np.linalg.norm(h, axis=1, keepdims=True)
    records = records_from_arrays(h, h_hat, np.linalg.norm(h, axis=1) ** 2)
    hyper = TrainHyper(epochs=20, batch_size=64, lr_decay_epochs=(15,), kl_weight=0.1)
    model, _ = train_cvae(records, "online", hyper, hidden=64)
    test = crandn(rng, 500, n_antennas)
    unit = test / np.linalg.norm(test, axis=1, keepdims=True)
    angles = principal_angles(test, refine(model, unit, np.linalg.norm(test, axis=1) ** 2, seed=1))
    assert median(angles) < 30.0
