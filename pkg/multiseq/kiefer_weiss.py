"""多假设Kiefer–Weiss设计模块。

该模块负责定位ESS在(θ₁, θ_k)上的最大值点，把评估点ϑ放到这些最大值点上，
并与λ校准交替迭代，得到Kiefer–Weiss问题的DBC近似解。
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .bernoulli_exact import LatticePolicy, backward_optimal, dbc_lattice, evaluate, oc_ess_curve
from .core import TestSpec, make_spec, row_constant_lambdas
from .errors import OptimizationError, SpecError
from .fit import CalibrationResult, CalibrationTarget, calibrate, exact_evaluator, row_ties, symmetric_row_ties
from .models import ModelKind, bernoulli
from .parallel import ordered_map
from .report import TestReport
from .types import FloatArray

logger = logging.getLogger(__name__)

MAXIMUM_AGREEMENT: float = 1e-6
FIXED_POINT_GAP: float = 1e-4
GRID_CHUNK: int = 32
SYMMETRY_TOLERANCE: float = 1e-12


@dataclass(frozen=True, eq=False)
class KWDesign:
    """Kiefer–Weiss设计。

    参数:
        spec: 设计对应的规格。
        report: 该规格的精确报告。
        worst_points: ESS取得最大值的参数点。
        max_ess: ESS在(θ₁, θ_k)上的最大值。
        fixed_point_gap: ϑ与对应最大值点的最大距离。
        converged: 是否同时满足不动点与错误概率目标。
        rounds: 迭代轮数。
    """

    spec: TestSpec
    report: TestReport
    worst_points: Tuple[float, ...]
    max_ess: float
    fixed_point_gap: float
    converged: bool
    rounds: int


def ess_argmax(
    policy: LatticePolicy,
    interval: Tuple[float, float],
    grid_step: float,
    refine_tol: float,
    executor: Optional[Executor] = None,
) -> List[Tuple[float, float]]:
    """ESS在开区间上的最大值点。

    参数:
        policy: 格点策略。
        interval: 开区间(θ_lo, θ_hi)。
        grid_step: 粗网格步长。
        refine_tol: 黄金分割细化的精度。
        executor: 可选线程池，网格按块并行计算。

    返回值:
        与全局最大值相差不超过1e-6的全部局部最大值(θ*, ESS*)，按θ排序。

    关键实现细节:
        在每个网格局部最大值两侧的相邻网格点之间做黄金分割搜索；
        平台或无法构成括号时保留网格点。
    """

    lower, upper = interval
    if not lower < upper:
        raise SpecError("区间为空")
    if not grid_step > 0.0:
        raise SpecError("grid_step必须为正数")
    count: int = int(math.floor((upper - lower) / grid_step))
    grid: FloatArray = lower + grid_step * np.arange(1, count + 1)
    grid = grid[grid < upper]
    if grid.size == 0:
        grid = np.asarray([0.5 * (lower + upper)])
    values: FloatArray = ess_on_grid(policy, grid, executor)
    candidates: List[Tuple[float, float]] = []
    for index in range(grid.size):
        left: float = values[index - 1] if index > 0 else -math.inf
        right: float = values[index + 1] if index + 1 < grid.size else -math.inf
        if values[index] < left or values[index] < right:
            continue
        outer_left: float = float(grid[index - 1]) if index > 0 else lower
        outer_right: float = float(grid[index + 1]) if index + 1 < grid.size else upper
        candidates.append(_refine(policy, outer_left, float(grid[index]), outer_right, float(values[index]), refine_tol))
    top: float = max(value for _, value in candidates)
    maxima: List[Tuple[float, float]] = [item for item in candidates if item[1] >= top - MAXIMUM_AGREEMENT]
    logger.debug("ess_argmax on (%g, %g): %d grid points, maxima=%s", lower, upper, grid.size, maxima[:4])
    return sorted(maxima)


def ess_on_grid(policy: LatticePolicy, grid: Sequence[float], executor: Optional[Executor] = None) -> FloatArray:
    """网格上的精确ESS，按块映射到线程池。"""

    points: FloatArray = np.asarray(grid, dtype=float)
    chunks: List[FloatArray] = [points[start:start + GRID_CHUNK] for start in range(0, points.size, GRID_CHUNK)]

    def run(chunk: FloatArray) -> FloatArray:
        return np.asarray([ess for _, _, ess in oc_ess_curve(policy, chunk, [0])])

    return np.concatenate(ordered_map(run, chunks, executor))


def kw_fixed_point(
    thetas: Sequence[float],
    lambda_init: Sequence[float],
    symmetric: bool,
    alpha_targets: Sequence[float],
    tolerance: float,
    horizon: int,
    grid_step: float,
    refine_tol: float,
    max_rounds: int,
    max_evals: int,
    xtol: float,
    ftol: float,
    executor: Optional[Executor] = None,
) -> KWDesign:
    """交替放置ϑ与校准λ的不动点迭代。

    参数:
        thetas: 有序的Bernoulli假设参数。
        lambda_init: 各假设的初始行常数λᵢ。
        symmetric: 是否施加对称约束（λᵢ = λ_{k+1−i}，ϑ关于中心对称）。
        alpha_targets: 各假设的αᵢ目标。
        tolerance: 相对距离目标。
        horizon: 截断视界。
        grid_step: ESS网格步长。
        refine_tol: 最大值点细化精度。
        max_rounds: 最大迭代轮数。
        max_evals: 每轮校准的最大评估次数。
        xtol: 校准的单纯形直径容差。
        ftol: 校准的目标值离散度容差。
        executor: 可选线程池。

    返回值:
        KWDesign；达到max_rounds仍未收敛时返回最后的设计并标记未收敛。

    关键实现细节:
        K = k−1，ϑᵢ在子区间(θᵢ, θᵢ₊₁)内取ESS最大值点，γ均匀。
    """

    theta_arr: FloatArray = np.asarray(thetas, dtype=float)
    k: int = theta_arr.size
    if k < 2 or np.any(np.diff(theta_arr) <= 0.0):
        raise SpecError("假设参数必须至少两个且严格递增")
    if len(lambda_init) != k:
        raise SpecError("lambda_init长度必须等于假设个数")
    if max_rounds < 1:
        raise SpecError("max_rounds必须为正整数")
    if symmetric:
        _require_symmetric(theta_arr)
    ties = symmetric_row_ties(k) if symmetric else row_ties([[i] for i in range(k)], k)
    target: CalibrationTarget = CalibrationTarget(
        targets=np.asarray(alpha_targets, dtype=float),
        tolerance=tolerance,
        ties=ties,
    )
    gammas: List[float] = [1.0 / (k - 1)] * (k - 1)
    evals: FloatArray = 0.5 * (theta_arr[:-1] + theta_arr[1:])
    lambdas: FloatArray = row_constant_lambdas(lambda_init)
    evaluator = exact_evaluator("dbc", horizon)
    gap: float = math.inf
    result: Optional[CalibrationResult] = None
    rounds: int = 0
    for rounds in range(1, max_rounds + 1):
        # 第一阶段：在各子区间定位ESS最大值点
        spec: TestSpec = make_spec(theta_arr, evals, gammas, lambdas, horizon, None, bernoulli())
        policy: LatticePolicy = dbc_lattice(spec, horizon)
        worst: FloatArray = np.asarray([
            _top_point(ess_argmax(policy, (theta_arr[i], theta_arr[i + 1]), grid_step, refine_tol, executor))
            for i in range(k - 1)
        ])
        if symmetric:
            worst = 0.5 * (worst + (theta_arr[0] + theta_arr[-1]) - worst[::-1])
        gap = float(np.max(np.abs(worst - evals)))
        evals = worst
        # 第二阶段：在新的评估点上校准λ
        template: TestSpec = make_spec(theta_arr, evals, gammas, lambdas, horizon, None, bernoulli())
        x0: FloatArray = np.asarray([math.log(lambdas[group[0]]) for group in ties])
        result = calibrate(template, target, evaluator, max_evals=max_evals, xtol=xtol, ftol=ftol, x0=x0)
        lambdas = result.spec.lambda_matrix
        logger.info(
            "kw round %d gap=%.2e distance=%.5f evals=%s",
            rounds,
            gap,
            result.distance,
            np.round(evals, 5).tolist(),
        )
        if gap < FIXED_POINT_GAP and result.converged:
            break
    if result is None:
        raise OptimizationError("不动点迭代未完成任何一轮")
    design: KWDesign = kw_check(
        result.spec,
        horizon,
        kind="dbc",
        grid_step=grid_step,
        refine_tol=refine_tol,
        executor=executor,
    )
    return KWDesign(
        spec=design.spec,
        report=design.report,
        worst_points=design.worst_points,
        max_ess=design.max_ess,
        fixed_point_gap=gap,
        converged=gap < FIXED_POINT_GAP and result.converged,
        rounds=rounds,
    )


def kw_check(
    spec: TestSpec,
    horizon: int,
    kind: str,
    grid_step: float,
    refine_tol: float,
    executor: Optional[Executor] = None,
) -> KWDesign:
    """直接评估给定的Kiefer–Weiss规格。

    参数:
        spec: Bernoulli规格。
        horizon: 截断视界。
        kind: "dbc"或"optimal"。
        grid_step: ESS网格步长。
        refine_tol: 最大值点细化精度。
        executor: 可选线程池。

    返回值:
        KWDesign，fixed_point_gap为各ϑ与最近最大值点的最大距离。
    """

    if spec.model.kind is not ModelKind.BERNOULLI:
        raise SpecError("Kiefer–Weiss设计仅支持Bernoulli模型")
    policy: LatticePolicy
    if kind == "dbc":
        policy = dbc_lattice(spec, horizon)
    elif kind == "optimal":
        policy, _ = backward_optimal(spec, horizon)
    else:
        raise SpecError("kind必须为dbc或optimal: " + kind)
    thetas: FloatArray = np.sort(spec.theta_array)
    maxima: List[Tuple[float, float]] = ess_argmax(
        policy,
        (float(thetas[0]), float(thetas[-1])),
        grid_step,
        refine_tol,
        executor,
    )
    worst_points: Tuple[float, ...] = tuple(point for point, _ in maxima)
    gap: float = max(min(abs(vartheta - point) for point in worst_points) for vartheta in spec.evals)
    return KWDesign(
        spec=spec,
        report=evaluate(policy, spec, worst_points),
        worst_points=worst_points,
        max_ess=max(value for _, value in maxima),
        fixed_point_gap=gap,
        converged=True,
        rounds=0,
    )


def _refine(
    policy: LatticePolicy,
    left: float,
    middle: float,
    right: float,
    middle_value: float,
    refine_tol: float,
) -> Tuple[float, float]:
    def negative_ess(theta: float) -> float:
        return -oc_ess_curve(policy, [theta], [0])[0][2]

    try:
        result = minimize_scalar(
            negative_ess,
            bracket=(left, middle, right),
            method="golden",
            options={"xtol": refine_tol},
        )
    except ValueError:
        return middle, middle_value
    theta: float = float(result.x)
    value: float = -float(result.fun)
    if not left < theta < right or value < middle_value:
        return middle, middle_value
    return theta, value


def _top_point(maxima: List[Tuple[float, float]]) -> float:
    return max(maxima, key=lambda item: item[1])[0]


def _require_symmetric(thetas: FloatArray) -> None:
    total: FloatArray = thetas + thetas[::-1]
    if np.max(np.abs(total - total[0])) > SYMMETRY_TOLERANCE:
        raise SpecError("对称约束要求假设参数关于中心对称")
