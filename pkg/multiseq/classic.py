"""经典序贯检验模块。

该模块实现SPRT、2-SPRT与MSPRT三种参照检验，以及把三假设检验包装为
双侧检验的工具。三种规则都实现StopPolicy协议，可直接制表、模拟与枚举。
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .bernoulli_exact import LatticePolicy, evaluate, oc_ess_curve, tabulate_policy
from .core import LogLikState, TestSpec, Verdict, make_spec
from .errors import OptimizationError, SpecError
from .fit import SimplexResult, nelder_mead, relative_distance
from .models import Model
from .report import TestReport
from .types import BoolArray, CurvePoint, Decision, FloatArray, IntArray, JsonDict

logger = logging.getLogger(__name__)

GAMMA_SUM_TOLERANCE: float = 1e-12


@dataclass(frozen=True)
class SprtRule:
    """两假设SPRT。

    参数:
        log_a: 下阈值log A（A<1），似然比不大于A时停止并接受H₁。
        log_b: 上阈值log B（B>1），似然比不小于B时停止并接受H₂。
        log_decision: 判决阈值，似然比严格大于它时接受H₂。

    关键实现细节:
        似然比为 f_θ₂ⁿ / f_θ₁ⁿ；截断步按判决阈值决定。
    """

    log_a: float
    log_b: float
    log_decision: float

    def __post_init__(self) -> None:
        if not self.log_a < 0.0 < self.log_b:
            raise SpecError("SPRT阈值必须满足 0 < A < 1 < B")

    @property
    def a(self) -> float:
        return math.exp(self.log_a)

    @property
    def b(self) -> float:
        return math.exp(self.log_b)

    @property
    def decision_threshold(self) -> float:
        return math.exp(self.log_decision)

    def decide_batch(self, state: LogLikState) -> Decision:
        ratio: FloatArray = _log_ratio(state)
        stopped: BoolArray = (ratio <= self.log_a) | (ratio >= self.log_b)
        if state.n < 1:
            stopped = np.zeros_like(stopped, dtype=bool)
        return stopped, self.decide_terminal(state)

    def decide_terminal(self, state: LogLikState) -> IntArray:
        return (_log_ratio(state) > self.log_decision).astype(np.int64)


@dataclass(frozen=True)
class TwoSprtRule:
    """2-SPRT：在中间点ϑ处比较加权似然。

    参数:
        log_lambda1: log λ₁。
        log_lambda2: log λ₂。

    关键实现细节:
        min{λ₁f_θ₁ⁿ, λ₂f_θ₂ⁿ} ≤ f_ϑⁿ时停止；λ₁f_θ₁ⁿ ≥ λ₂f_θ₂ⁿ时接受H₁。
        状态的logf_eval只含ϑ一项。
    """

    log_lambda1: float
    log_lambda2: float

    def decide_batch(self, state: LogLikState) -> Decision:
        first, second = self._weighted(state)
        stopped: BoolArray = np.minimum(first, second) <= state.logf_eval[..., 0]
        if state.n < 1:
            stopped = np.zeros_like(stopped, dtype=bool)
        return stopped, self.decide_terminal(state)

    def decide_terminal(self, state: LogLikState) -> IntArray:
        first, second = self._weighted(state)
        return np.where(first >= second, 0, 1).astype(np.int64)

    def _weighted(self, state: LogLikState) -> Tuple[FloatArray, FloatArray]:
        if state.logf_theta.shape[-1] != 2 or state.logf_eval.shape[-1] != 1:
            raise SpecError("2-SPRT要求两个假设与一个评估点")
        return (
            self.log_lambda1 + state.logf_theta[..., 0],
            self.log_lambda2 + state.logf_theta[..., 1],
        )


@dataclass(frozen=True, eq=False)
class MsprtRule:
    """MSPRT。

    参数:
        log_thresholds: k×k矩阵，log_thresholds[i][j]为接受H_j时对竞争者H_i的阈值。

    关键实现细节:
        对所有i≠j满足 log f_θⱼⁿ − log f_θᵢⁿ ≥ log_thresholds[i][j] 时停止并接受H_j，
        多个假设同时满足时取最小下标；截断步按最大似然判决。
    """

    log_thresholds: FloatArray

    def __post_init__(self) -> None:
        matrix: FloatArray = np.array(self.log_thresholds, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 2:
            raise SpecError("MSPRT阈值必须为k×k矩阵且k≥2")
        off_diagonal: BoolArray = ~np.eye(matrix.shape[0], dtype=bool)
        if not np.all(np.isfinite(matrix[off_diagonal])):
            raise SpecError("MSPRT阈值必须为有限数")
        np.fill_diagonal(matrix, 0.0)
        object.__setattr__(self, "log_thresholds", matrix)

    @property
    def k(self) -> int:
        return int(self.log_thresholds.shape[0])

    def decide_batch(self, state: LogLikState) -> Decision:
        qualifies: BoolArray = self._qualifying(state)
        stopped: BoolArray = np.any(qualifies, axis=-1)
        if state.n < 1:
            stopped = np.zeros_like(stopped, dtype=bool)
        accepted: IntArray = np.argmax(qualifies, axis=-1).astype(np.int64)
        return stopped, accepted

    def decide_terminal(self, state: LogLikState) -> IntArray:
        return np.argmax(state.logf_theta, axis=-1).astype(np.int64)

    def _qualifying(self, state: LogLikState) -> BoolArray:
        logf: FloatArray = state.logf_theta
        if logf.shape[-1] != self.k:
            raise SpecError("MSPRT阈值维度与假设个数不一致")
        with np.errstate(invalid="ignore"):
            diff: FloatArray = logf[..., None, :] - logf[..., :, None]
            clears: BoolArray = diff >= self.log_thresholds
        clears |= np.eye(self.k, dtype=bool)
        return np.all(clears, axis=-2)


@dataclass(frozen=True)
class TwoSidedReport:
    """双侧检验的错误概率。

    参数:
        alpha: 原假设为真时拒绝的概率。
        beta_lower: 下侧备择为真时未接受该备择的概率。
        beta_upper: 上侧备择为真时未接受该备择的概率。
    """

    alpha: float
    beta_lower: float
    beta_upper: float


@dataclass(frozen=True, eq=False)
class MsprtCalibration:
    """MSPRT阈值校准结果。"""

    rule: MsprtRule
    report: TestReport
    distance: float
    converged: bool
    evaluations: int


def sprt_from_lagrange(lambda1: float, lambda2: float, gamma1: float, gamma2: float) -> SprtRule:
    """由拉格朗日乘子构造等价SPRT。

    参数:
        lambda1: λ₁（接受H₂而H₁为真的损失）。
        lambda2: λ₂（接受H₁而H₂为真的损失）。
        gamma1: γ₁。
        gamma2: γ₂。

    返回值:
        A = γ₁/(λ₂−γ₂)，B = (λ₁−γ₁)/γ₂，判决阈值λ₁/λ₂的SprtRule。

    关键实现细节:
        构造后校验 A < λ₁/λ₂ < B。
    """

    if not lambda1 > 1.0 or not lambda2 > 1.0:
        raise SpecError("λ₁与λ₂必须大于1（非平凡性条件）")
    if not gamma1 > 0.0 or not gamma2 > 0.0:
        raise SpecError("γ₁与γ₂必须为正数")
    if abs(gamma1 + gamma2 - 1.0) > GAMMA_SUM_TOLERANCE:
        raise SpecError("γ₁+γ₂必须等于1")
    a: float = gamma1 / (lambda2 - gamma2)
    b: float = (lambda1 - gamma1) / gamma2
    decision: float = lambda1 / lambda2
    if not a < decision < b:
        raise SpecError("阈值次序 A < λ₁/λ₂ < B 不成立")
    return SprtRule(log_a=math.log(a), log_b=math.log(b), log_decision=math.log(decision))


def two_sprt(lambda1: float, lambda2: float) -> TwoSprtRule:
    """构造2-SPRT，A = 1/λ₁，B = 1/λ₂。"""

    if not lambda1 > 1.0 or not lambda2 > 1.0:
        raise SpecError("2-SPRT要求λ₁与λ₂大于1")
    return TwoSprtRule(log_lambda1=math.log(lambda1), log_lambda2=math.log(lambda2))


def two_sprt_spec(
    lambda1: float,
    lambda2: float,
    theta1: float,
    theta2: float,
    vartheta: float,
    horizon: Optional[int],
    safety_cap: Optional[int],
    model: Model,
) -> TestSpec:
    """2-SPRT对应的单评估点规格（K=1，γ₁=1），其状态布局供TwoSprtRule使用。"""

    return make_spec(
        thetas=[theta1, theta2],
        evals=[vartheta],
        gammas=[1.0],
        lambdas=[[0.0, lambda1], [lambda2, 0.0]],
        horizon=horizon,
        safety_cap=safety_cap,
        model=model,
    )


def sprt_verdict(state: LogLikState, rule: SprtRule) -> Verdict:
    return _single_verdict(rule.decide_batch(state))


def two_sprt_verdict(state: LogLikState, rule: TwoSprtRule) -> Verdict:
    return _single_verdict(rule.decide_batch(state))


def msprt_verdict(state: LogLikState, rule: MsprtRule) -> Verdict:
    """单一状态上的MSPRT判决。"""

    return _single_verdict(rule.decide_batch(state))


def uniform_msprt(k: int, log_threshold: float) -> MsprtRule:
    """所有非对角阈值相同的MSPRT。"""

    matrix: FloatArray = np.full((k, k), float(log_threshold))
    return MsprtRule(log_thresholds=matrix)


def column_msprt(log_thresholds: Sequence[float]) -> MsprtRule:
    """列常数阈值：接受H_j时对所有竞争者使用同一阈值log A_j。"""

    row: FloatArray = np.asarray(log_thresholds, dtype=float)
    return MsprtRule(log_thresholds=np.tile(row, (row.shape[0], 1)))


def calibrate_msprt(
    spec: TestSpec,
    alpha_targets: Sequence[float],
    tolerance: float,
    horizon: int,
    max_evals: int,
    xtol: float,
    ftol: float,
    x0: Optional[Sequence[float]] = None,
) -> MsprtCalibration:
    """校准列常数MSPRT阈值。

    参数:
        spec: Bernoulli规格，提供θ、ϑ与γ。
        alpha_targets: 各假设的αᵢ目标。
        tolerance: 相对距离目标。
        horizon: 截断视界。
        max_evals: 最大评估次数。
        xtol: 阈值空间的单纯形直径容差。
        ftol: 相对距离离散度容差。
        x0: 可选初始阈值，默认 log A_j = log(1/α_j)。

    返回值:
        MsprtCalibration。

    关键实现细节:
        每次试探在格点上制表后精确评估，目标为αᵢ的相对距离。
    """

    targets: FloatArray = np.asarray(alpha_targets, dtype=float)
    if targets.shape != (spec.k,):
        raise SpecError("alpha_targets长度必须等于假设个数")
    start: FloatArray = -np.log(targets) if x0 is None else np.asarray(x0, dtype=float)
    best: List[Optional[Tuple[float, MsprtRule, TestReport]]] = [None]

    def objective(log_values: FloatArray) -> float:
        rule: MsprtRule = column_msprt(log_values)
        policy: LatticePolicy = tabulate_policy(rule, spec, horizon)
        report: TestReport = evaluate(policy, spec)
        if report.alpha_i is None:
            raise OptimizationError("MSPRT评估报告缺少αᵢ")
        distance: float = relative_distance(report.alpha_i, targets)
        logger.debug("msprt trial logA=%s distance=%.6g", np.round(log_values, 4), distance)
        current = best[0]
        if current is None or distance < current[0]:
            best[0] = (distance, rule, report)
        return distance

    outcome: SimplexResult = nelder_mead(
        objective,
        start,
        max_evals=max_evals,
        xtol=xtol,
        ftol=ftol,
        target_value=tolerance,
    )
    found = best[0]
    if found is None:
        raise OptimizationError("MSPRT校准未完成任何评估")
    distance, rule, report = found
    logger.info("msprt calibration distance=%.5f evals=%d", distance, outcome.evaluations)
    return MsprtCalibration(
        rule=rule,
        report=report,
        distance=distance,
        converged=distance <= tolerance,
        evaluations=outcome.evaluations,
    )


def two_sided_wrap(report: TestReport, null_index: int = 1) -> TwoSidedReport:
    """把三假设检验的报告聚合为双侧检验的错误概率。

    参数:
        report: 三假设检验报告，需含α矩阵。
        null_index: 原假设的下标（从0开始），默认中间假设。

    返回值:
        TwoSidedReport：接受两侧任一备择即拒绝原假设。
    """

    if report.alpha is None or report.alpha.shape != (3, 3):
        raise SpecError("双侧包装要求k=3且报告含α矩阵")
    if null_index not in (0, 1, 2):
        raise SpecError("null_index必须为0、1或2")
    alpha: FloatArray = report.alpha
    lower, upper = [i for i in range(3) if i != null_index]
    return TwoSidedReport(
        alpha=float(alpha[null_index, lower] + alpha[null_index, upper]),
        beta_lower=float(sum(alpha[lower, j] for j in range(3) if j != lower)),
        beta_upper=float(sum(alpha[upper, j] for j in range(3) if j != upper)),
    )


def two_sided_curve(policy: LatticePolicy, theta_grid: Sequence[float], null_index: int = 1) -> List[CurvePoint]:
    """双侧检验的(θ, OC, ESS)表，OC为接受原假设的概率。"""

    if policy.k != 3:
        raise SpecError("双侧包装要求k=3")
    return oc_ess_curve(policy, theta_grid, [null_index])


def msprt_to_dict(rule: MsprtRule) -> JsonDict:
    return {"log_thresholds": rule.log_thresholds.tolist()}


def msprt_from_dict(data: object) -> MsprtRule:
    """从JSON字典构造MSPRT，拒绝未知字段。"""

    if not isinstance(data, dict) or set(data) != {"log_thresholds"}:
        raise SpecError("MSPRT JSON必须且只能包含log_thresholds")
    return MsprtRule(log_thresholds=np.asarray(data["log_thresholds"], dtype=float))


def _log_ratio(state: LogLikState) -> FloatArray:
    if state.logf_theta.shape[-1] != 2:
        raise SpecError("SPRT要求两个假设")
    return state.logf_theta[..., 1] - state.logf_theta[..., 0]


def _single_verdict(decision: Decision) -> Verdict:
    stopped, accepted = decision
    if bool(stopped):
        return Verdict(stopped=True, accepted=int(accepted))
    return Verdict(stopped=False, accepted=None)
