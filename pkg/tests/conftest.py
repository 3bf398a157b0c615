"""测试共享的规格与文件夹具。"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from multiseq.core import TestSpec, make_spec, row_constant_lambdas, spec_to_dict
from multiseq.models import bernoulli

ENV_NAMES = (
    "THREADS",
    "SEED",
    "REPS",
    "CAP",
    "BLOCK_SIZE",
    "MAX_EVALS",
    "XTOL",
    "FTOL",
    "TOLERANCE",
    "GRID_STEP",
    "REFINE_TOL",
    "MAX_ROUNDS",
    "LOG_LEVEL",
)


@pytest.fixture
def clean_env(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    """切换到空目录并清除MULTISEQ_*环境变量，隔离.env与宿主环境。"""

    monkeypatch.chdir(tmp_path)
    for name in ENV_NAMES:
        monkeypatch.delenv("MULTISEQ_" + name, raising=False)


def random_bernoulli_spec(rng: np.random.Generator, horizon: int) -> TestSpec:
    """三假设随机Bernoulli规格，λ行常数且满足非平凡性。"""

    thetas = np.sort(rng.uniform(0.05, 0.95, size=3))
    while np.min(np.diff(thetas)) < 0.05:
        thetas = np.sort(rng.uniform(0.05, 0.95, size=3))
    evals = np.sort(rng.uniform(0.05, 0.95, size=2))
    gammas = rng.dirichlet(np.ones(2))
    gammas[-1] = 1.0 - gammas[0]
    return make_spec(
        thetas=thetas,
        evals=evals,
        gammas=gammas,
        lambdas=row_constant_lambdas(rng.uniform(2.0, 50.0, size=3)),
        horizon=horizon,
        safety_cap=None,
        model=bernoulli(),
    )


@pytest.fixture
def two_spec() -> TestSpec:
    return make_spec(
        thetas=[0.3, 0.6],
        evals=[0.3, 0.6],
        gammas=[0.5, 0.5],
        lambdas=[[0.0, 20.0], [30.0, 0.0]],
        horizon=30,
        safety_cap=None,
        model=bernoulli(),
    )


@pytest.fixture
def three_spec() -> TestSpec:
    return make_spec(
        thetas=[0.3, 0.5, 0.7],
        evals=[0.4, 0.6],
        gammas=[0.5, 0.5],
        lambdas=row_constant_lambdas([20.0, 15.0, 20.0]),
        horizon=40,
        safety_cap=None,
        model=bernoulli(),
    )


@pytest.fixture
def spec_file(tmp_path: Path, three_spec: TestSpec) -> Path:
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec_to_dict(three_spec)), encoding="utf-8")
    return path


@pytest.fixture
def random_spec() -> Callable[[int, int], TestSpec]:
    """按(种子, 视界)生成随机规格的工厂。"""

    def build(seed: int, horizon: int) -> TestSpec:
        return random_bernoulli_spec(np.random.default_rng(seed), horizon)

    return build
