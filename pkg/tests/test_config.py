from __future__ import annotations

import json
from pathlib import Path

import pytest

from etel_divergence.config import (
    DEFAULT_CDF_GRID,
    ExperimentConfig,
    SolverOptions,
    load_experiment_config,
)
from etel_divergence.errors import ConfigError
from etel_divergence.models import Family, Method


def test_defaults() -> None:
    config = ExperimentConfig()
    assert config.R == 2000
    assert config.lambdas == (-1.0, -0.5, 0.0, 2.0 / 3.0)
    assert config.estimators == (Method.ETEL,)
    assert config.families == (Family.T, Family.S)
    assert config.cdf_grid == DEFAULT_CDF_GRID
    assert DEFAULT_CDF_GRID[0] == -1.0
    assert DEFAULT_CDF_GRID[-1] == 8.0
    assert len(DEFAULT_CDF_GRID) == 91


def test_from_dict_parses_names_and_solver() -> None:
    config = ExperimentConfig.from_dict(
        {
            "R": 10,
            "n": 50,
            "estimators": ["el", "etel", "ETEL"],
            "families": ["t", "g2"],
            "lambdas": [-1, 0],
            "solver": {"tol": 1e-9, "optimizer": "bfgs"},
        }
    )
    assert config.replications == 10
    assert config.estimators == (Method.EL, Method.ETEL)
    assert config.families == (Family.T, Family.G2)
    assert config.lambdas == (-1.0, 0.0)
    assert config.solver.optimizer == "bfgs"
    assert ExperimentConfig.from_dict(config.to_dict()) == config


@pytest.mark.parametrize(
    ("data", "message"),
    [
        ({"bogus": 1}, "Unknown config key"),
        ({"R": 2, "replications": 2}, "either 'R' or 'replications'"),
        ({"lambdas": "0.5"}, "lambdas must be a list"),
        ({"lambdas": []}, "lambdas must not be empty"),
        ({"alpha": 1.0}, "alpha must be in"),
        ({"n": 2}, "n must be >= 3"),
        ({"n": True}, "n must be an integer"),
        ({"delta": 0}, "delta must be > 0"),
        ({"families": ["t_h"]}, "subset of t, s, g2"),
        ({"estimators": ["gmm"]}, "Unknown estimator"),
        ({"cdf_grid": [1.0, 0.0]}, "sorted ascending"),
        ({"master_seed": -1}, "master_seed must be >= 0"),
        ({"solver": {"step": 1}}, "Unknown solver key"),
        ({"solver": {"optimizer": "newton"}}, "optimizer must be one of"),
    ],
)
def test_from_dict_rejects_bad_values(data: dict[str, object], message: str) -> None:
    with pytest.raises(ConfigError, match=message):
        ExperimentConfig.from_dict(data)


def test_solver_options_validation() -> None:
    with pytest.raises(ConfigError, match="tol must be > 0"):
        SolverOptions(tol=0.0)
    with pytest.raises(ConfigError, match="max_outer must be >= 1"):
        SolverOptions(max_outer=0)
    assert SolverOptions().to_dict()["optimizer"] == "auto"


def test_load_experiment_config(tmp_path: Path) -> None:
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"R": 5, "delta": 0.7}), encoding="utf-8")
    config = load_experiment_config(path)
    assert config.R == 5
    assert config.delta == 0.7


def test_load_experiment_config_errors(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError, match="Config file not found"):
        load_experiment_config(tmp_path / "missing.json")
    with pytest.raises(ConfigError, match="not a file"):
        load_experiment_config(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_experiment_config(bad)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="JSON object"):
        load_experiment_config(listed)
