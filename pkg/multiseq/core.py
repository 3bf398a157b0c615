"""检验规格与DBC规则。

该模块定义检验规格TestSpec、对数似然状态LogLikState与判决Verdict，
并实现DBC停止/判决规则、拉格朗日函数与后验概率表示。
所有运算都是状态的纯函数，状态数组的最后一维对应假设（或评估点），
前导维度视为批量，便于格点制表与向量化模拟共用同一套规则。
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .errors import SpecError, UndefinedStateError
from .models import (
    Model,
    log_density_increment,
    model_from_dict,
    model_to_dict,
    stat_increment,
    validate_param,
)
from .types import BoolArray, Decision, FloatArray, IntArray, JsonDict

if TYPE_CHECKING:
    from .report import TestReport

logger = logging.getLogger(__name__)

GAMMA_SUM_TOLERANCE: float = 1e-12
SPEC_KEYS: frozenset[str] = frozenset(
    {"thetas", "evals", "gammas", "lambdas", "horizon", "model", "safety_cap"}
)


@dataclass(frozen=True)
class TestSpec:
    """检验规格。

    参数:
        thetas: k个假设参数值θ₁..θ_k。
        evals: K个ESS评估点ϑ₁..ϑ_K。
        gammas: K个正权重γ，和为1。
        lambdas: k×k非负损失矩阵λ_ij（行为真实假设i，列为接受的假设j），对角线不使用。
        horizon: 截断视界N；None表示“无界”，此时以safety_cap作为安全上限。
        safety_cap: 无界规格的安全截断步数；有界规格时须不小于horizon。
        model: 观测过程模型。

    返回值:
        不直接返回，作为规格对象供规则、评估与校准使用。

    关键实现细节:
        构造时校验非平凡性：对每个j须有 Σ_{i≠j} λ_ij > 1，否则不观测直接接受H_j更优。
    """

    __test__ = False

    thetas: Tuple[float, ...]
    evals: Tuple[float, ...]
    gammas: Tuple[float, ...]
    lambdas: Tuple[Tuple[float, ...], ...]
    horizon: Optional[int]
    safety_cap: int
    model: Model

    def __post_init__(self) -> None:
        k: int = len(self.thetas)
        big_k: int = len(self.evals)
        if k < 2:
            raise SpecError("假设个数k必须不小于2")
        if big_k < 1:
            raise SpecError("评估点个数K必须不小于1")
        if len(self.gammas) != big_k:
            raise SpecError("gammas长度必须等于evals长度")
        if any(not gamma > 0.0 for gamma in self.gammas):
            raise SpecError("gammas必须全部为正数")
        if abs(math.fsum(self.gammas) - 1.0) > GAMMA_SUM_TOLERANCE:
            raise SpecError("gammas之和必须为1")
        if len(set(self.thetas)) != k:
            raise SpecError("thetas必须互不相同")
        if len(set(self.evals)) != big_k:
            raise SpecError("evals必须互不相同")
        for value in self.thetas + self.evals:
            validate_param(self.model, value)
        if len(self.lambdas) != k or any(len(row) != k for row in self.lambdas):
            raise SpecError("lambdas必须为k×k矩阵")
        for i, row in enumerate(self.lambdas):
            for j, value in enumerate(row):
                if i != j and (not math.isfinite(value) or value < 0.0):
                    raise SpecError(f"lambdas[{i + 1}][{j + 1}]必须为非负有限数")
        for j in range(k):
            column_sum: float = math.fsum(self.lambdas[i][j] for i in range(k) if i != j)
            if column_sum <= 1.0:
                raise SpecError(
                    f"违反非平凡性条件: Σ_(i≠{j + 1}) λ_i{j + 1} = {column_sum:.6g} ≤ 1，"
                    f"直接接受H{j + 1}即为最优"
                )
        if self.horizon is not None and self.horizon < 1:
            raise SpecError("horizon必须为正整数或unbounded")
        if self.safety_cap < 1:
            raise SpecError("safety_cap必须为正整数")
        if self.horizon is not None and self.safety_cap < self.horizon:
            raise SpecError("safety_cap不能小于horizon")

    @property
    def k(self) -> int:
        return len(self.thetas)

    @property
    def big_k(self) -> int:
        return len(self.evals)

    @property
    def theta_array(self) -> FloatArray:
        return np.asarray(self.thetas, dtype=float)

    @property
    def eval_array(self) -> FloatArray:
        return np.asarray(self.evals, dtype=float)

    @property
    def gamma_array(self) -> FloatArray:
        return np.asarray(self.gammas, dtype=float)

    @property
    def lambda_matrix(self) -> FloatArray:
        """对角线置零的损失矩阵。"""

        matrix: FloatArray = np.array(self.lambdas, dtype=float)
        np.fill_diagonal(matrix, 0.0)
        return matrix

    @property
    def effective_horizon(self) -> int:
        """实际截断步数：有界时为horizon，无界时为safety_cap。"""

        return self.horizon if self.horizon is not None else self.safety_cap

    def with_lambdas(self, lambdas: object) -> "TestSpec":
        """替换损失矩阵并重新校验。"""

        return make_spec(
            thetas=self.thetas,
            evals=self.evals,
            gammas=self.gammas,
            lambdas=lambdas,
            horizon=self.horizon,
            safety_cap=self.safety_cap,
            model=self.model,
        )


@dataclass(frozen=True)
class LogLikState:
    """对数似然状态。

    参数:
        n: 已观测步数。
        logf_theta: 各假设的对数密度 log f_θᵢⁿ，最后一维长度为k。
        logf_eval: 各评估点的对数密度 log f_ϑᵢⁿ，最后一维长度为K。
        stat: 可选的充分统计量（Bernoulli为成功次数），格点策略回放时使用。

    关键实现细节:
        允许−∞（密度为零），不允许NaN。
    """

    n: int
    logf_theta: FloatArray
    logf_eval: FloatArray
    stat: Optional[FloatArray]

    def __post_init__(self) -> None:
        object.__setattr__(self, "logf_theta", np.asarray(self.logf_theta, dtype=float))
        object.__setattr__(self, "logf_eval", np.asarray(self.logf_eval, dtype=float))
        if self.stat is not None:
            object.__setattr__(self, "stat", np.asarray(self.stat, dtype=float))
        if self.n < 0:
            raise SpecError("步数n不能为负")
        if np.isnan(self.logf_theta).any() or np.isnan(self.logf_eval).any():
            raise SpecError("对数密度中出现NaN")


@dataclass(frozen=True)
class Verdict:
    """判决结果。

    参数:
        stopped: 是否停止。
        accepted: 停止时接受的假设下标（从0开始），未停止时为None。
    """

    stopped: bool
    accepted: Optional[int]


class StopPolicy(Protocol):
    """停止/判决规则协议。

    关键实现细节:
        decide_batch 返回 (停止掩码, 接受下标)；未停止位置的下标无意义。
        decide_terminal 在截断步给出强制停止时的判决。
    """

    def decide_batch(self, state: LogLikState) -> Decision:
        ...

    def decide_terminal(self, state: LogLikState) -> IntArray:
        ...


def make_spec(
    thetas: Sequence[float],
    evals: Sequence[float],
    gammas: Sequence[float],
    lambdas: object,
    horizon: Optional[int],
    safety_cap: Optional[int],
    model: Model,
) -> TestSpec:
    """由序列或数组构造TestSpec。

    参数:
        thetas: 假设参数值。
        evals: 评估点。
        gammas: 权重。
        lambdas: k×k损失矩阵（数组或嵌套序列）。
        horizon: 截断视界，None表示无界。
        safety_cap: 安全上限，None时取horizon。
        model: 观测过程模型。

    返回值:
        校验通过的TestSpec。
    """

    matrix: FloatArray = np.asarray(lambdas, dtype=float)
    if matrix.ndim != 2:
        raise SpecError("lambdas必须为二维矩阵")
    cap: Optional[int] = safety_cap if safety_cap is not None else horizon
    if cap is None:
        raise SpecError("无界规格必须给出safety_cap")
    return TestSpec(
        thetas=tuple(float(value) for value in thetas),
        evals=tuple(float(value) for value in evals),
        gammas=tuple(float(value) for value in gammas),
        lambdas=tuple(tuple(float(value) for value in row) for row in matrix),
        horizon=horizon,
        safety_cap=int(cap),
        model=model,
    )


def row_constant_lambdas(values: Sequence[float]) -> FloatArray:
    """构造行常数损失矩阵 λ_ij = λ_i（j≠i），对角线为0。"""

    column: FloatArray = np.asarray(values, dtype=float)[:, None]
    matrix: FloatArray = np.repeat(column, len(values), axis=1)
    np.fill_diagonal(matrix, 0.0)
    return matrix


def initial_state(spec: TestSpec) -> LogLikState:
    """n=0时的状态（所有密度为1）。"""

    return LogLikState(
        n=0,
        logf_theta=np.zeros(spec.k),
        logf_eval=np.zeros(spec.big_k),
        stat=np.zeros(()),
    )


def append_observation(state: LogLikState, spec: TestSpec, x: float) -> LogLikState:
    """追加一个观测，步数加1并累加各对数密度增量。"""

    t: int = state.n + 1
    increment_theta: FloatArray = log_density_increment(spec.model, spec.theta_array, x, t)
    increment_eval: FloatArray = log_density_increment(spec.model, spec.eval_array, x, t)
    stat: Optional[FloatArray] = None
    if state.stat is not None:
        stat = state.stat + stat_increment(spec.model, x, t)
    return LogLikState(
        n=t,
        logf_theta=state.logf_theta + increment_theta,
        logf_eval=state.logf_eval + increment_eval,
        stat=stat,
    )


def log_weighted_density(state: LogLikState, gammas: Sequence[float]) -> FloatArray:
    """计算 log f_γϑⁿ = log Σ γᵢ exp(logf_evalᵢ)。

    参数:
        state: 对数似然状态。
        gammas: K个权重。

    返回值:
        加权密度的对数，批量状态返回数组；全部密度为零时为−∞。

    关键实现细节:
        以最大项为锚点做log-sum-exp，避免长序列下的下溢。
    """

    gamma_arr: FloatArray = np.asarray(gammas, dtype=float)
    if state.logf_eval.shape[-1] != gamma_arr.shape[0]:
        raise SpecError("评估点密度与gammas维度不匹配")
    with np.errstate(divide="ignore"):
        terms: FloatArray = state.logf_eval + np.log(gamma_arr)
        return logsumexp(terms, axis=-1)


def log_risk_candidates(state: LogLikState, lambdas: object) -> FloatArray:
    """计算风险候选 log Σ_{i≠j} λ_ij exp(logf_thetaᵢ)，j=1..k。

    参数:
        state: 对数似然状态。
        lambdas: k×k损失矩阵，对角线忽略。

    返回值:
        最后一维长度为k的数组，最小值即 log vₙ。

    关键实现细节:
        λ为零或位于对角线的项取−∞后再做log-sum-exp，
        避免被排除的大项充当锚点导致其余项下溢。
    """

    matrix: FloatArray = np.asarray(lambdas, dtype=float)
    k: int = state.logf_theta.shape[-1]
    if k < 2 or matrix.shape != (k, k):
        raise SpecError("损失矩阵维度与假设个数不匹配")
    with np.errstate(divide="ignore"):
        log_matrix: FloatArray = np.log(matrix)
    np.fill_diagonal(log_matrix, -np.inf)
    terms: FloatArray = state.logf_theta[..., :, None] + log_matrix
    with np.errstate(divide="ignore"):
        return logsumexp(terms, axis=-2)


def dbc_decide(state: LogLikState, spec: TestSpec) -> Decision:
    """批量计算DBC规则的停止掩码与判决。

    关键实现细节:
        最小风险候选不大于加权密度时停止（相等也停止）；
        判决取最小风险候选，并列时取最小下标；n=0时从不停止。
    """

    candidates: FloatArray = log_risk_candidates(state, spec.lambda_matrix)
    weighted: FloatArray = log_weighted_density(state, spec.gammas)
    accepted: IntArray = np.argmin(candidates, axis=-1)
    stopped: BoolArray = np.min(candidates, axis=-1) <= weighted
    if state.n < 1:
        stopped = np.zeros_like(stopped, dtype=bool)
    return np.asarray(stopped, dtype=bool), np.asarray(accepted, dtype=np.int64)


def dbc_verdict(state: LogLikState, spec: TestSpec) -> Verdict:
    """单一状态上的DBC判决。"""

    stopped, accepted = dbc_decide(state, spec)
    if bool(stopped):
        return Verdict(stopped=True, accepted=int(accepted))
    return Verdict(stopped=False, accepted=None)


class DbcRule:
    """DBC停止/判决规则。

    参数:
        spec: 检验规格。

    返回值:
        实现StopPolicy协议的规则对象。

    关键实现细节:
        截断步的判决仍取最小风险候选，规则本身不随截断改变。
    """

    def __init__(self, spec: TestSpec) -> None:
        self.spec: TestSpec = spec
        self._lambdas: FloatArray = spec.lambda_matrix

    def decide_batch(self, state: LogLikState) -> Decision:
        return dbc_decide(state, self.spec)

    def decide_terminal(self, state: LogLikState) -> IntArray:
        candidates: FloatArray = log_risk_candidates(state, self._lambdas)
        return np.asarray(np.argmin(candidates, axis=-1), dtype=np.int64)


def posterior(state: LogLikState, gammas: Sequence[float]) -> FloatArray:
    """计算后验概率 πᵢⁿ = γᵢ f_θᵢⁿ / Σⱼ γⱼ f_θⱼⁿ。

    参数:
        state: 对数似然状态，要求K=k且评估点与假设重合。
        gammas: 先验权重。

    返回值:
        长度为k的概率向量；n=0时约定为γ。

    关键实现细节:
        所有密度为零时后验无定义，抛出UndefinedStateError。
    """

    gamma_arr: FloatArray = np.asarray(gammas, dtype=float)
    if state.logf_theta.shape[-1] != gamma_arr.shape[0]:
        raise SpecError("后验表示要求gammas长度等于假设个数")
    if state.n == 0:
        return np.broadcast_to(gamma_arr, state.logf_theta.shape).copy()
    with np.errstate(divide="ignore"):
        terms: FloatArray = state.logf_theta + np.log(gamma_arr)
        normalizer: FloatArray = logsumexp(terms, axis=-1, keepdims=True)
    if np.isneginf(normalizer).any():
        raise UndefinedStateError("所有假设密度均为零，后验概率无定义")
    return np.exp(terms - normalizer)


def posterior_risk(state: LogLikState, spec: TestSpec) -> FloatArray:
    """后验形式的停止统计量 min_j Σ_{i≠j} λ_ij πᵢⁿ/γᵢ，不大于1时停止。"""

    probabilities: FloatArray = posterior(state, spec.gammas)
    scaled: FloatArray = probabilities / spec.gamma_array
    risks: FloatArray = scaled @ spec.lambda_matrix
    return np.min(risks, axis=-1)


def lagrangian(report: "TestReport", spec: TestSpec) -> float:
    """计算拉格朗日函数 C_γϑ + Σ_{i≠j} λ_ij α_ij。

    参数:
        report: 含α矩阵与加权ESS的评估报告。
        spec: 检验规格。

    返回值:
        拉格朗日函数值；λ为行常数时等于 C + Σ λᵢ αᵢ。
    """

    if report.alpha is None or report.weighted_ess is None:
        raise SpecError("报告缺少α矩阵或加权ESS，无法计算拉格朗日函数")
    penalty: float = float(np.sum(spec.lambda_matrix * report.alpha))
    return float(report.weighted_ess) + penalty


def spec_to_dict(spec: TestSpec) -> JsonDict:
    """规格序列化为JSON字典，对角线写为0。"""

    horizon: Union[int, str] = spec.horizon if spec.horizon is not None else "unbounded"
    return {
        "thetas": list(spec.thetas),
        "evals": list(spec.evals),
        "gammas": list(spec.gammas),
        "lambdas": spec.lambda_matrix.tolist(),
        "horizon": horizon,
        "safety_cap": spec.safety_cap,
        "model": model_to_dict(spec.model),
    }


def spec_from_dict(data: object) -> TestSpec:
    """从JSON字典构造规格。

    关键实现细节:
        字段顺序无关，未知字段拒绝；对角线元素必须存在且为0；
        horizon为"unbounded"时必须给出safety_cap。
    """

    if not isinstance(data, dict):
        raise SpecError("规格必须为JSON对象")
    unknown: set[str] = set(data) - SPEC_KEYS
    if unknown:
        raise SpecError("规格含未知字段: " + ", ".join(sorted(unknown)))
    missing: set[str] = (SPEC_KEYS - {"safety_cap"}) - set(data)
    if missing:
        raise SpecError("规格缺少字段: " + ", ".join(sorted(missing)))
    lambdas: object = data["lambdas"]
    if not isinstance(lambdas, list) or any(not isinstance(row, list) for row in lambdas):
        raise SpecError("lambdas必须为按行排列的二维数组")
    for i, row in enumerate(lambdas):
        if i < len(row) and row[i] != 0:
            raise SpecError(f"lambdas对角线元素[{i + 1}][{i + 1}]必须为0")
    horizon_raw: object = data["horizon"]
    horizon: Optional[int]
    if horizon_raw == "unbounded":
        horizon = None
    elif isinstance(horizon_raw, int) and not isinstance(horizon_raw, bool):
        horizon = horizon_raw
    else:
        raise SpecError("horizon必须为整数或\"unbounded\"")
    safety_cap: object = data.get("safety_cap")
    if safety_cap is not None and (isinstance(safety_cap, bool) or not isinstance(safety_cap, int)):
        raise SpecError("safety_cap必须为整数")
    try:
        return make_spec(
            thetas=_float_list(data["thetas"], "thetas"),
            evals=_float_list(data["evals"], "evals"),
            gammas=_float_list(data["gammas"], "gammas"),
            lambdas=[_float_list(row, "lambdas") for row in lambdas],
            horizon=horizon,
            safety_cap=safety_cap,
            model=model_from_dict(data["model"]),
        )
    except ValueError as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc)) from exc


def load_spec(path: Union[str, Path]) -> TestSpec:
    """从JSON文件读取规格。"""

    with Path(path).open(encoding="utf-8") as file_obj:
        try:
            data: object = json.load(file_obj)
        except json.JSONDecodeError as exc:
            raise SpecError("规格文件不是合法JSON: " + str(exc)) from exc
    spec: TestSpec = spec_from_dict(data)
    logger.debug("loaded spec k=%d K=%d horizon=%s from %s", spec.k, spec.big_k, spec.horizon, path)
    return spec


def _float_list(value: object, name: str) -> list[float]:
    if not isinstance(value, list):
        raise SpecError(name + "必须为数组")
    result: list[float] = []
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise SpecError(name + "中含非数值元素")
        result.append(float(item))
    return result
