"""损失系数校准模块。

该模块负责以Nelder–Mead单纯形法在log λ空间中搜索损失系数，
使检验的实际错误概率在相对距离意义下逼近名义目标。
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .bernoulli_exact import backward_optimal, dbc_lattice, evaluate
from .core import DbcRule, StopPolicy, TestSpec
from .errors import OptimizationError, SpecError
from .montecarlo import simulate_spec
from .report import TestReport
from .types import FloatArray

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE: float = 0.002
INITIAL_LOG_SPREAD: float = math.log(1.2)

Entry = Tuple[int, int]
TieGroups = Tuple[Tuple[Entry, ...], ...]
Evaluator = Callable[[TestSpec], TestReport]
Objective = Callable[[FloatArray], float]


@dataclass(frozen=True, eq=False)
class CalibrationTarget:
    """校准目标。

    参数:
        targets: 长度为k的αᵢ目标向量，或k×k的α_ij目标矩阵（NaN表示不约束，对角线忽略）。
        tolerance: 相对距离目标。
        ties: 自由参数分组，每组内的(i, j)项共享同一个λ值。

    返回值:
        不直接返回，作为校准输入。

    关键实现细节:
        所有受约束目标必须位于(0,1)，自由参数组不能为空。
    """

    targets: FloatArray
    tolerance: float
    ties: TieGroups

    def __post_init__(self) -> None:
        values: FloatArray = np.asarray(self.targets, dtype=float)
        object.__setattr__(self, "targets", values)
        if values.ndim == 2:
            values = np.where(np.eye(values.shape[0], dtype=bool), np.nan, values)
        constrained: FloatArray = values[np.isfinite(values)]
        if constrained.size == 0:
            raise SpecError("至少需要一个受约束的错误概率目标")
        if np.any((constrained <= 0.0) | (constrained >= 1.0)):
            raise SpecError("错误概率目标必须位于(0,1)")
        if not self.tolerance > 0.0:
            raise SpecError("tolerance必须为正数")
        if not self.ties or any(not group for group in self.ties):
            raise SpecError("自由参数分组不能为空")
        for group in self.ties:
            for i, j in group:
                if i == j:
                    raise SpecError("自由参数不能位于λ的对角线")

    @property
    def per_hypothesis(self) -> bool:
        return self.targets.ndim == 1


@dataclass(frozen=True, eq=False)
class SimplexResult:
    """单纯形搜索结果。

    参数:
        x: 最优顶点。
        value: 最优目标值。
        evaluations: 目标函数调用次数。
        converged: 是否满足收敛或提前达标条件。
        history: 单调不增的最优值历史，每次调用记录一项。
    """

    x: FloatArray
    value: float
    evaluations: int
    converged: bool
    history: Tuple[float, ...]


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """校准结果。

    参数:
        spec: 最优损失系数对应的规格。
        report: 该规格的评估报告。
        distance: 相对距离。
        converged: 相对距离是否达到tolerance。
        evaluations: 评估次数。
        history: 单调不增的最优相对距离历史。
    """

    spec: TestSpec
    report: TestReport
    distance: float
    converged: bool
    evaluations: int
    history: Tuple[float, ...]


class _TargetReached(Exception):
    """目标值已达标，用于提前结束scipy的迭代。"""


def relative_distance(achieved: object, target: object) -> float:
    """相对距离 max |achieved − target| / target，仅计受约束（有限）的目标项。

    关键实现细节:
        k×k目标矩阵的对角线不参与比较。
    """

    achieved_arr: FloatArray = np.asarray(achieved, dtype=float)
    target_arr: FloatArray = np.asarray(target, dtype=float)
    if achieved_arr.shape != target_arr.shape:
        raise SpecError("实际错误概率与目标的形状不一致")
    if target_arr.ndim == 2:
        target_arr = np.where(np.eye(target_arr.shape[0], dtype=bool), np.nan, target_arr)
    mask: FloatArray = np.isfinite(target_arr)
    if not mask.any():
        raise SpecError("没有受约束的目标项")
    if np.any(target_arr[mask] <= 0.0):
        raise SpecError("目标错误概率必须为正数")
    return float(np.max(np.abs(achieved_arr[mask] - target_arr[mask]) / target_arr[mask]))


def nelder_mead(
    objective: Objective,
    x0: Sequence[float],
    max_evals: int,
    xtol: float,
    ftol: float,
    initial_step: float = INITIAL_LOG_SPREAD,
    target_value: Optional[float] = None,
) -> SimplexResult:
    """Nelder–Mead单纯形最小化。

    参数:
        objective: ℝ^d上的目标函数。
        x0: 初始点。
        max_evals: 最大调用次数。
        xtol: 单纯形直径容差。
        ftol: 目标值离散度容差。
        initial_step: 初始单纯形沿各坐标的步长。
        target_value: 可选；目标值不大于此值时立即结束。

    返回值:
        SimplexResult，x为调用过程中的最优顶点。

    关键实现细节:
        迭代由scipy.optimize.minimize执行；包装函数记录最优值历史，
        非有限目标值按+∞处理，初始点非有限则拒绝开始。
    """

    start: FloatArray = np.atleast_1d(np.asarray(x0, dtype=float))
    if start.ndim != 1 or start.size < 1:
        raise OptimizationError("初始点必须为非空向量")
    if max_evals < 1:
        raise OptimizationError("max_evals必须为正整数")
    best_x: List[FloatArray] = [start.copy()]
    history: List[float] = []

    def tracked(x: FloatArray) -> float:
        value: float = float(objective(np.asarray(x, dtype=float)))
        if not math.isfinite(value):
            value = math.inf
        if not history or value < history[-1]:
            best_x[0] = np.array(x, dtype=float)
            history.append(value)
        else:
            history.append(history[-1])
        if target_value is not None and value <= target_value:
            raise _TargetReached()
        return value

    first: float = float(objective(start))
    if not math.isfinite(first):
        raise OptimizationError("初始点的目标值必须为有限数")
    history.append(first)
    if target_value is not None and first <= target_value:
        return SimplexResult(x=start, value=first, evaluations=1, converged=True, history=tuple(history))
    simplex: FloatArray = np.vstack([start, start + initial_step * np.eye(start.size)])
    converged: bool = False
    try:
        result = minimize(
            tracked,
            start,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "xatol": xtol,
                "fatol": ftol,
                "maxfev": max(max_evals - 1, 1),
            },
        )
        converged = bool(result.success)
    except _TargetReached:
        converged = True
    logger.debug("nelder-mead finished evals=%d best=%.6g", len(history), history[-1])
    return SimplexResult(
        x=best_x[0],
        value=history[-1],
        evaluations=len(history),
        converged=converged,
        history=tuple(history),
    )


def row_ties(groups: Sequence[Sequence[int]], k: int) -> TieGroups:
    """按行共享的参数分组：组内每个假设i的整行λ_ij（j≠i）共享一个值。

    参数:
        groups: 假设下标（从0开始）的分组，如[[0, 2], [1]]表示λ₁=λ₃。
        k: 假设个数。

    返回值:
        TieGroups。
    """

    ties: List[Tuple[Entry, ...]] = []
    seen: set[int] = set()
    for group in groups:
        entries: List[Entry] = []
        for i in group:
            if i < 0 or i >= k or i in seen:
                raise SpecError("行分组中的假设下标非法或重复: " + str(i))
            seen.add(i)
            entries.extend((i, j) for j in range(k) if j != i)
        ties.append(tuple(entries))
    return tuple(ties)


def symmetric_row_ties(k: int) -> TieGroups:
    """对称约束λᵢ = λ_{k+1−i}的行分组。"""

    groups: List[List[int]] = []
    for i in range((k + 1) // 2):
        mirror: int = k - 1 - i
        groups.append([i] if mirror == i else [i, mirror])
    return row_ties(groups, k)


def tie_lambdas(template: object, ties: TieGroups, log_values: Sequence[float]) -> FloatArray:
    """把自由参数（log λ）写回损失矩阵，未绑定的项保留模板值。"""

    matrix: FloatArray = np.array(template, dtype=float)
    if len(log_values) != len(ties):
        raise SpecError("自由参数个数与分组个数不一致")
    for group, log_value in zip(ties, log_values):
        for i, j in group:
            matrix[i, j] = math.exp(float(log_value))
    np.fill_diagonal(matrix, 0.0)
    return matrix


def achieved_errors(report: TestReport, target: CalibrationTarget) -> FloatArray:
    """报告中与目标形状对应的实际错误概率。"""

    if report.alpha is None or report.alpha_i is None:
        raise SpecError("报告缺少α矩阵，无法与目标比较")
    return report.alpha_i if target.per_hypothesis else report.alpha


def heuristic_start(template: TestSpec, target: CalibrationTarget) -> FloatArray:
    """初始点 log λ ≈ log(1/α目标)；组内没有有限目标时取模板值。"""

    start: List[float] = []
    matrix: FloatArray = template.lambda_matrix
    for group in target.ties:
        goals: List[float] = []
        for i, j in group:
            goal: float = float(target.targets[i]) if target.per_hypothesis else float(target.targets[i, j])
            if math.isfinite(goal):
                goals.append(goal)
        if goals:
            start.append(-math.log(min(goals)))
        else:
            start.append(math.log(max(float(matrix[group[0]]), 1.0)))
    return np.asarray(start, dtype=float)


def calibrate(
    template: TestSpec,
    target: CalibrationTarget,
    evaluator: Evaluator,
    max_evals: int,
    xtol: float,
    ftol: float,
    x0: Optional[Sequence[float]] = None,
) -> CalibrationResult:
    """校准损失系数。

    参数:
        template: 规格模板，未绑定的λ项取其值。
        target: 校准目标。
        evaluator: 规格到报告的评估函数（精确或蒙特卡洛）。
        max_evals: 最大评估次数。
        xtol: log λ空间的单纯形直径容差。
        ftol: 相对距离离散度容差。
        x0: 可选初始点（log λ），默认取启发式初始点。

    返回值:
        CalibrationResult；未达到tolerance时返回已找到的最优结果并标记未收敛。

    关键实现细节:
        违反非平凡性的试探点记为+∞并继续搜索；最优规格的报告在搜索中缓存，不重复评估。
    """

    start: FloatArray = heuristic_start(template, target) if x0 is None else np.asarray(x0, dtype=float)
    best: List[Optional[Tuple[float, TestSpec, TestReport]]] = [None]

    def objective(log_values: FloatArray) -> float:
        try:
            spec: TestSpec = template.with_lambdas(tie_lambdas(template.lambda_matrix, target.ties, log_values))
        except SpecError:
            logger.debug("trial %s violates non-triviality", np.exp(log_values))
            return math.inf
        report: TestReport = evaluator(spec)
        distance: float = relative_distance(achieved_errors(report, target), target.targets)
        logger.debug("trial lambda=%s distance=%.6g", np.round(np.exp(log_values), 4), distance)
        current = best[0]
        if current is None or distance < current[0]:
            best[0] = (distance, spec, report)
        return distance

    outcome: SimplexResult = nelder_mead(
        objective,
        start,
        max_evals=max_evals,
        xtol=xtol,
        ftol=ftol,
        target_value=target.tolerance,
    )
    found = best[0]
    if found is None:
        raise OptimizationError("校准未得到任何有效评估")
    distance, spec, report = found
    converged: bool = distance <= target.tolerance
    logger.info(
        "calibration %s distance=%.5f evals=%d weighted_ess=%s",
        "converged" if converged else "did not converge",
        distance,
        outcome.evaluations,
        report.weighted_ess,
    )
    return CalibrationResult(
        spec=spec,
        report=report,
        distance=distance,
        converged=converged,
        evaluations=outcome.evaluations,
        history=outcome.history,
    )


def exact_evaluator(kind: str, horizon: Optional[int] = None) -> Evaluator:
    """精确评估函数工厂。

    参数:
        kind: "dbc"使用DBC格点策略，"optimal"使用逆向归纳最优策略。
        horizon: 视界，默认取规格的有效视界。
    """

    if kind not in ("dbc", "optimal"):
        raise SpecError("evaluator类型必须为dbc或optimal: " + kind)

    def run(spec: TestSpec) -> TestReport:
        n: int = horizon if horizon is not None else spec.effective_horizon
        if kind == "dbc":
            return evaluate(dbc_lattice(spec, n), spec)
        policy, _ = backward_optimal(spec, n)
        return evaluate(policy, spec)

    return run


def mc_evaluator(
    reps: int,
    seed: int,
    cap: int,
    block_size: int,
    rule_factory: Callable[[TestSpec], StopPolicy] = DbcRule,
    executor: Optional[Executor] = None,
) -> Evaluator:
    """蒙特卡洛评估函数工厂。

    关键实现细节:
        每次试探使用同一种子（公共随机数），目标函数对给定种子是确定的。
    """

    def run(spec: TestSpec) -> TestReport:
        return simulate_spec(
            spec,
            rule_factory(spec),
            reps=reps,
            seed=seed,
            cap=cap,
            block_size=block_size,
            executor=executor,
        )

    return run
