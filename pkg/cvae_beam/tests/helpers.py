import numpy as np

from cvae_beam.config import ExperimentConfig


def tiny_config(**evaluation) -> ExperimentConfig:
    """A config small enough for every pipeline to finish in seconds."""
    data = {
        "channel": {"n_antennas": 8, "n_ues": 2, "n_snapshots": 200, "n_paths": 3},
        "feedback": {"n_ports": 4, "oversampling": 2, "type2_beams": 2},
        "solver": {"max_iters": 100},
        "cvae": {"hidden_offline": 16, "hidden_online": 8,
                 "train": {"epochs": 2, "batch_size": 32, "lr_decay_epochs": [1]}},
        "evaluation": {
            "n_trials": 2,
            "motivation_ues": 2,
            "motivation_antennas": 4,
            "motivation_eval_draws": 10,
            "n_samples": 5,
            "n_rate_trials": 2,
            "max_test_inputs": 40,
            "table_sizes": [50, 100],
            "table_seeds": 1,
            "compare_noise_variances": [0.0, 0.2],
            **evaluation,
        },
        "master_seed": 7,
    }
    return ExperimentConfig.from_dict(data)


def crandn(rng, *shape):
    """CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
