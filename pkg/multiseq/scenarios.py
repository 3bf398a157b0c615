"""场景复现模块。

该模块把已发表的数值研究整理为可运行的场景目录：
按“校准-评估-比较”流程执行，输出逐项带容差判定的比较表。
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
import logging
import math
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .bernoulli_exact import LatticePolicy, backward_optimal, dbc_lattice
from .classic import MsprtCalibration, TwoSidedReport, calibrate_msprt, two_sided_curve, two_sided_wrap, uniform_msprt
from .config import RunConfig, validate_run_config
from .core import DbcRule, StopPolicy, TestSpec, make_spec, row_constant_lambdas
from .errors import OptimizationError, SpecError
from .fit import CalibrationResult, CalibrationTarget, TieGroups, calibrate, exact_evaluator, mc_evaluator, row_ties
from .fit import symmetric_row_ties
from .kiefer_weiss import KWDesign, kw_check
from .models import Model, ModelKind, bernoulli
from .montecarlo import simulate_spec
from .report import TestReport, format_number
from .types import CurvePoint, FloatArray, JsonDict, Record

logger = logging.getLogger(__name__)

COMPARISON_SCHEMA: int = 1
CALIBRATION_ACCEPTANCE: float = 0.005
SIGMA_BAND: float = 3.0

BERNOULLI_HORIZON: int = 3000
UNIFORM_THETAS: Tuple[float, ...] = (0.3, 0.4, 0.5)
UNIFORM_ALPHAS: Tuple[float, ...] = (0.1, 0.05, 0.025, 0.01, 0.005, 0.002, 0.001, 0.0005)
UNIFORM_DEFAULT_ALPHAS: Tuple[float, ...] = (0.1, 0.05, 0.01, 0.0005)
UNIFORM_BAYES_ESS: Tuple[float, ...] = (121.79, 168.73, 211.73, 264.46, 302.10, 350.40, 386.22, 421.68)
UNIFORM_DBC_ESS: Tuple[float, ...] = (122.63, 169.58, 212.46, 264.99, 302.69, 350.96, 386.81, 422.18)
UNIFORM_EFFICIENCY: Tuple[float, ...] = (99.32, 99.50, 99.65, 99.80, 99.81, 99.84, 99.85, 99.88)
ESS_RELATIVE_TOLERANCE: float = 0.005
EFFICIENCY_TOLERANCE: float = 0.1

CLINICAL_THETAS: Tuple[float, ...] = (0.1, 0.3, 0.5)
CLINICAL_GAMMAS: Tuple[float, ...] = (0.1, 0.1, 0.8)
CLINICAL_ALPHAS: Tuple[float, ...] = (0.1, 0.05, 0.01, 0.001)
CLINICAL_BAYES_ESS: Tuple[float, ...] = (22.93, 33.35, 54.42, 81.37)
CLINICAL_DBC_ESS: Tuple[float, ...] = (23.49, 33.59, 54.49, 81.48)
CLINICAL_MSPRT_ESS: Tuple[float, ...] = (27.04, 38.02, 58.82, 85.74)
MSPRT_RELATIVE_TOLERANCE: float = 0.01

TWO_SIDED_HORIZON: int = 1000
TWO_SIDED_THETAS: Tuple[float, ...] = (0.2, 0.5, 0.8)
TWO_SIDED_GAMMAS: Tuple[float, ...] = (0.25, 0.5, 0.25)
TWO_SIDED_ALPHA: float = 0.05
TWO_SIDED_GRID: Tuple[float, ...] = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90)
TWO_SIDED_OPTIMAL: Tuple[Tuple[float, float], ...] = (
    (0.950, 18.44),
    (0.921, 19.42),
    (0.816, 21.93),
    (0.615, 24.36),
    (0.361, 24.31),
    (0.157, 21.33),
    (0.050, 17.36),
    (0.011, 13.90),
    (0.001, 11.31),
)
TWO_SIDED_DBC: Tuple[Tuple[float, float], ...] = (
    (0.944, 17.64),
    (0.914, 18.41),
    (0.813, 20.39),
    (0.622, 22.34),
    (0.378, 22.42),
    (0.172, 20.06),
    (0.056, 16.57),
    (0.012, 13.38),
    (0.001, 10.99),
)
PARTIAL_SEQUENTIAL: Tuple[Tuple[float, float], ...] = (
    (0.974, 20.12),
    (0.943, 21.26),
    (0.847, 25.21),
    (0.640, 29.55),
    (0.355, 29.34),
    (0.168, 25.54),
    (0.038, 20.54),
    (0.010, 16.69),
    (0.000, 14.27),
)
OC_TOLERANCE: float = 0.01
TWO_SIDED_ESS_TOLERANCE: float = 0.02

GROUP_DELTA: float = 0.1
GROUP_SIZE: int = 40
GROUP_COUNT: int = 10
GROUP_GAMMAS: Tuple[float, ...] = (0.1, 0.1, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1)
GROUP_ALPHA: float = 0.05
GROUP_DBC_ESS: float = 149.75
GROUP_OPTIMAL_ESS: float = 149.0
GROUP_FIXED_SAMPLE_SIZE: float = 270.55
GROUP_REFERENCE_RATIO: float = 0.544
GROUP_ESS_TOLERANCE: float = 0.01

TREND_THETAS: Tuple[float, ...] = (0.0, -0.2, 0.1)
TREND_LAMBDAS: Tuple[float, ...] = (35.0, 18.0, 33.0)
TREND_PARAMS: Tuple[float, ...] = (-0.2, -0.1, 0.0, 0.05, 0.1)
TREND_DBC_ESS: Tuple[float, ...] = (8.94, 13.35, 14.36, 19.75, 14.06)
TREND_DBC_ESS_SE: Tuple[float, ...] = (0.0018, 0.0033, 0.0025, 0.0057, 0.0028)
TREND_MSPRT_ESS: Tuple[float, ...] = (8.91, 13.51, 14.34, 19.69, 14.02)
TREND_MSPRT_ESS_SE: Tuple[float, ...] = (0.0018, 0.0036, 0.0025, 0.0057, 0.0028)
TREND_DBC_ALPHA: Tuple[Tuple[float, ...], ...] = (
    (math.nan, 3.4e-3, 4.2e-3),
    (6.7e-4, math.nan, 0.0),
    (4.0e-3, 2.6e-5, math.nan),
)
TREND_DBC_ALPHA_SE: Tuple[Tuple[float, ...], ...] = (
    (math.nan, 5.8e-5, 6.5e-5),
    (2.7e-5, math.nan, 0.0),
    (6.3e-5, 4.0e-6, math.nan),
)
TREND_MSPRT_ALPHA: Tuple[Tuple[float, ...], ...] = (
    (math.nan, 3.6e-3, 4.4e-3),
    (6.5e-4, math.nan, 1.1e-11),
    (4.0e-3, 2.2e-5, math.nan),
)
TREND_MSPRT_LOG_THRESHOLD: float = 4.6

KW_HORIZON: int = 1000
KW_THETAS: Tuple[float, ...] = (0.3, 0.5, 0.7)
KW_LAMBDAS: Tuple[float, ...] = (6.582, 5.964, 6.582)
KW_EVALS: Tuple[float, ...] = (0.4026, 0.5974)
KW_ALPHAS: Tuple[float, ...] = (0.0376, 0.0706, 0.0376)
KW_ALPHA_TOLERANCE: float = 5e-4
KW_MAX_ESS: float = 56.01
KW_MAX_ESS_TOLERANCE: float = 0.05
KW_ARGMAX_TOLERANCE: float = 5e-4
KW_OPTIMAL_LAMBDA: float = 200.0
KW_OPTIMAL_MAX_ESS: float = 56.2
KW_OPTIMAL_TOLERANCE: float = 0.1


@dataclass(frozen=True)
class Scenario:
    """场景目录项。

    参数:
        scenario_id: 场景标识。
        title: 场景说明。
        evaluator: "exact"（格点精确评估）或"montecarlo"。
        override_keys: 允许覆盖的参数名。
        provenance: 期望值来源说明。
    """

    scenario_id: str
    title: str
    evaluator: str
    override_keys: frozenset[str]
    provenance: str


@dataclass(frozen=True)
class Expectation:
    """带容差的期望值。

    参数:
        label: 检查项名称。
        expected: 期望值。
        tolerance: 绝对容差。
        provenance: 期望值来源。
    """

    label: str
    expected: float
    tolerance: float
    provenance: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.tolerance) or self.tolerance < 0.0:
            raise SpecError("tolerance必须为非负有限数: " + self.label)
        if self.provenance.strip() == "":
            raise SpecError("期望值必须注明来源: " + self.label)

    def check(self, achieved: float) -> "ComparisonRow":
        passed: bool = math.isfinite(achieved) and abs(achieved - self.expected) <= self.tolerance
        return ComparisonRow(
            label=self.label,
            expected=self.expected,
            achieved=achieved,
            tolerance=self.tolerance,
            passed=passed,
            provenance=self.provenance,
        )


@dataclass(frozen=True)
class ComparisonRow:
    """单个检查项的比较结果。"""

    label: str
    expected: float
    achieved: float
    tolerance: float
    passed: bool
    provenance: str


@dataclass(frozen=True)
class ComparisonTable:
    """场景比较表。

    参数:
        scenario_id: 场景标识。
        rows: 逐项比较结果。
        columns: 记录表的列名。
        records: 记录表（机器输出的CSV正文）。
        footer: 附注常量与派生量。
    """

    scenario_id: str
    rows: Tuple[ComparisonRow, ...]
    columns: Tuple[str, ...]
    records: Tuple[Record, ...]
    footer: Tuple[Tuple[str, float], ...]

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)


SCENARIOS: Dict[str, Scenario] = {
    "table1": Scenario(
        scenario_id="table1",
        title="三个Bernoulli假设0.3/0.4/0.5，均匀权重，最优检验与DBC检验的加权ESS",
        evaluator="exact",
        override_keys=frozenset({"alphas", "horizon"}),
        provenance="已发表的均匀权重效率对比（N=3000）",
    ),
    "table2": Scenario(
        scenario_id="table2",
        title="三个Bernoulli假设0.1/0.3/0.5，权重0.1/0.1/0.8，最优检验、DBC与MSPRT对比",
        evaluator="exact",
        override_keys=frozenset({"alphas", "horizon"}),
        provenance="已发表的临床权重效率对比",
    ),
    "table3": Scenario(
        scenario_id="table3",
        title="0.5对0.2或0.8的双侧检验，经三假设检验包装后的OC与ESS",
        evaluator="exact",
        override_keys=frozenset({"horizon"}),
        provenance="已发表的双侧检验性能对比",
    ),
    "example2_f4": Scenario(
        scenario_id="example2_f4",
        title="分组序贯正态检验（M=10组，每组40个观测），F4型加权ESS",
        evaluator="montecarlo",
        override_keys=frozenset({"reps"}),
        provenance="已发表的分组序贯DBC加权ESS与最优检验常数",
    ),
    "example4_trend": Scenario(
        scenario_id="example4_trend",
        title="均值线性趋势的正态观测，三个假设下DBC与MSPRT的ESS与错误概率矩阵",
        evaluator="montecarlo",
        override_keys=frozenset({"reps"}),
        provenance="已发表的10⁶次重复模拟结果",
    ),
    "example5_kw": Scenario(
        scenario_id="example5_kw",
        title="三假设Kiefer–Weiss问题的DBC近似与最优检验直接核验",
        evaluator="exact",
        override_keys=frozenset({"horizon"}),
        provenance="已发表的Kiefer–Weiss数值解",
    ),
}


def get_scenario(scenario_id: str) -> Scenario:
    """按标识查找场景，未知标识抛出SpecError。"""

    scenario: Optional[Scenario] = SCENARIOS.get(scenario_id)
    if scenario is None:
        raise SpecError("未知场景: " + scenario_id + "（可选: " + ", ".join(sorted(SCENARIOS)) + "）")
    return scenario


class ScenarioRunner:
    """场景执行器。

    参数:
        config: RunConfig 运行配置。
        executor: 可选线程池，传递给评估与模拟。

    返回值:
        该类用于执行场景并生成比较表。

    关键实现细节:
        每个场景采用“校准-评估-比较”的阶段化流程；期望值与容差全部来自场景常量。
    """

    def __init__(self, config: RunConfig, executor: Optional[Executor] = None) -> None:
        """初始化执行器。

        参数:
            config: RunConfig 运行配置。
            executor: 可选线程池。

        返回值:
            无。

        关键实现细节:
            初始化时进行配置校验，避免长时间运行后才暴露错误。
        """

        validate_run_config(config)
        self._config: RunConfig = config
        self._executor: Optional[Executor] = executor
        self._handlers: Dict[str, Callable[[Mapping[str, object]], ComparisonTable]] = {
            "table1": self._run_uniform_weights,
            "table2": self._run_clinical_weights,
            "table3": self._run_two_sided,
            "example2_f4": self._run_group_sequential,
            "example4_trend": self._run_trend,
            "example5_kw": self._run_kiefer_weiss,
        }

    def run(self, scenario_id: str, overrides: Mapping[str, object]) -> ComparisonTable:
        """执行场景。

        参数:
            scenario_id: 场景标识。
            overrides: 覆盖参数，键必须属于场景的override_keys。

        返回值:
            ComparisonTable。
        """

        scenario: Scenario = get_scenario(scenario_id)
        unknown: set[str] = set(overrides) - scenario.override_keys
        if unknown:
            raise SpecError(f"场景{scenario_id}不支持覆盖参数: " + ", ".join(sorted(unknown)))
        logger.info("scenario %s started (%s)", scenario_id, scenario.evaluator)
        table: ComparisonTable = self._handlers[scenario_id](overrides)
        logger.info(
            "scenario %s finished: %d/%d checks passed",
            scenario_id,
            sum(row.passed for row in table.rows),
            len(table.rows),
        )
        return table

    def _run_uniform_weights(self, overrides: Mapping[str, object]) -> ComparisonTable:
        alphas: Tuple[float, ...] = _alpha_levels(overrides, UNIFORM_ALPHAS, UNIFORM_DEFAULT_ALPHAS)
        horizon: int = _positive_int(overrides, "horizon", BERNOULLI_HORIZON)
        source: str = SCENARIOS["table1"].provenance
        rows: List[ComparisonRow] = []
        records: List[Record] = []
        for alpha in alphas:
            index: int = UNIFORM_ALPHAS.index(alpha)
            template: TestSpec = _bernoulli_template(UNIFORM_THETAS, (1.0 / 3.0,) * 3, alpha, horizon)
            ties: TieGroups = row_ties([[0], [1], [2]], 3)

            # 第一阶段：校准最优检验
            bayes: CalibrationResult = self._fit_exact(template, alpha, ties, "optimal", horizon)

            # 第二阶段：校准DBC检验
            dbc: CalibrationResult = self._fit_exact(template, alpha, ties, "dbc", horizon)

            # 第三阶段：比较
            bayes_ess: float = _weighted_ess(bayes.report)
            dbc_ess: float = _weighted_ess(dbc.report)
            efficiency: float = 100.0 * bayes_ess / dbc_ess
            rows.extend([
                _distance_row(f"α={alpha:g} 最优检验校准距离", bayes.distance),
                _distance_row(f"α={alpha:g} DBC校准距离", dbc.distance),
                _relative(f"α={alpha:g} 最优检验加权ESS", UNIFORM_BAYES_ESS[index], ESS_RELATIVE_TOLERANCE, source).check(bayes_ess),
                _relative(f"α={alpha:g} DBC加权ESS", UNIFORM_DBC_ESS[index], ESS_RELATIVE_TOLERANCE, source).check(dbc_ess),
                Expectation(f"α={alpha:g} 效率(%)", UNIFORM_EFFICIENCY[index], EFFICIENCY_TOLERANCE, source).check(efficiency),
            ])
            records.append({"alpha": alpha, "bayes_ess": bayes_ess, "dbc_ess": dbc_ess, "efficiency": efficiency})
        return ComparisonTable(
            scenario_id="table1",
            rows=tuple(rows),
            columns=("alpha", "bayes_ess", "dbc_ess", "efficiency"),
            records=tuple(records),
            footer=(("horizon", float(horizon)),),
        )

    def _run_clinical_weights(self, overrides: Mapping[str, object]) -> ComparisonTable:
        alphas: Tuple[float, ...] = _alpha_levels(overrides, CLINICAL_ALPHAS, CLINICAL_ALPHAS)
        horizon: int = _positive_int(overrides, "horizon", BERNOULLI_HORIZON)
        source: str = SCENARIOS["table2"].provenance
        rows: List[ComparisonRow] = []
        records: List[Record] = []
        for alpha in alphas:
            index: int = CLINICAL_ALPHAS.index(alpha)
            template: TestSpec = _bernoulli_template(CLINICAL_THETAS, CLINICAL_GAMMAS, alpha, horizon)
            ties: TieGroups = row_ties([[0], [1], [2]], 3)

            # 第一阶段：校准最优检验与DBC检验
            bayes: CalibrationResult = self._fit_exact(template, alpha, ties, "optimal", horizon)
            dbc: CalibrationResult = self._fit_exact(template, alpha, ties, "dbc", horizon)

            # 第二阶段：校准MSPRT阈值
            msprt: MsprtCalibration = calibrate_msprt(
                template,
                [alpha] * 3,
                tolerance=self._config.tolerance,
                horizon=horizon,
                max_evals=self._config.max_evals,
                xtol=self._config.xtol,
                ftol=self._config.ftol,
            )

            # 第三阶段：比较
            bayes_ess: float = _weighted_ess(bayes.report)
            dbc_ess: float = _weighted_ess(dbc.report)
            msprt_ess: float = _weighted_ess(msprt.report)
            rows.extend([
                _distance_row(f"α={alpha:g} 最优检验校准距离", bayes.distance),
                _distance_row(f"α={alpha:g} DBC校准距离", dbc.distance),
                _relative(f"α={alpha:g} 最优检验加权ESS", CLINICAL_BAYES_ESS[index], ESS_RELATIVE_TOLERANCE, source).check(bayes_ess),
                _relative(f"α={alpha:g} DBC加权ESS", CLINICAL_DBC_ESS[index], ESS_RELATIVE_TOLERANCE, source).check(dbc_ess),
                _relative(f"α={alpha:g} MSPRT加权ESS", CLINICAL_MSPRT_ESS[index], MSPRT_RELATIVE_TOLERANCE, source).check(msprt_ess),
            ])
            records.append({
                "alpha": alpha,
                "bayes_ess": bayes_ess,
                "dbc_ess": dbc_ess,
                "dbc_efficiency": 100.0 * bayes_ess / dbc_ess,
                "msprt_ess": msprt_ess,
                "msprt_efficiency": 100.0 * bayes_ess / msprt_ess,
            })
        return ComparisonTable(
            scenario_id="table2",
            rows=tuple(rows),
            columns=("alpha", "bayes_ess", "dbc_ess", "dbc_efficiency", "msprt_ess", "msprt_efficiency"),
            records=tuple(records),
            footer=(("horizon", float(horizon)),),
        )

    def _run_two_sided(self, overrides: Mapping[str, object]) -> ComparisonTable:
        horizon: int = _positive_int(overrides, "horizon", TWO_SIDED_HORIZON)
        source: str = SCENARIOS["table3"].provenance
        template: TestSpec = _bernoulli_template(TWO_SIDED_THETAS, TWO_SIDED_GAMMAS, TWO_SIDED_ALPHA, horizon)
        ties: TieGroups = symmetric_row_ties(3)

        # 第一阶段：校准三假设检验
        optimal: CalibrationResult = self._fit_exact(template, TWO_SIDED_ALPHA, ties, "optimal", horizon)
        dbc: CalibrationResult = self._fit_exact(template, TWO_SIDED_ALPHA, ties, "dbc", horizon)

        # 第二阶段：包装为双侧检验并计算OC/ESS曲线
        optimal_policy, _ = backward_optimal(optimal.spec, horizon)
        dbc_policy: LatticePolicy = dbc_lattice(dbc.spec, horizon)
        optimal_curve: List[CurvePoint] = two_sided_curve(optimal_policy, TWO_SIDED_GRID, null_index=1)
        dbc_curve: List[CurvePoint] = two_sided_curve(dbc_policy, TWO_SIDED_GRID, null_index=1)
        optimal_errors: TwoSidedReport = two_sided_wrap(optimal.report, null_index=1)
        dbc_errors: TwoSidedReport = two_sided_wrap(dbc.report, null_index=1)

        # 第三阶段：比较
        rows: List[ComparisonRow] = [
            _distance_row("最优检验校准距离", optimal.distance),
            _distance_row("DBC校准距离", dbc.distance),
        ]
        records: List[Record] = []
        for index, theta in enumerate(TWO_SIDED_GRID):
            _, optimal_oc, optimal_ess = optimal_curve[index]
            _, dbc_oc, dbc_ess = dbc_curve[index]
            expected_optimal: Tuple[float, float] = TWO_SIDED_OPTIMAL[index]
            expected_dbc: Tuple[float, float] = TWO_SIDED_DBC[index]
            rows.extend([
                Expectation(f"θ={theta:.2f} 最优检验OC", expected_optimal[0], OC_TOLERANCE, source).check(optimal_oc),
                _relative(f"θ={theta:.2f} 最优检验ESS", expected_optimal[1], TWO_SIDED_ESS_TOLERANCE, source).check(optimal_ess),
                Expectation(f"θ={theta:.2f} DBC OC", expected_dbc[0], OC_TOLERANCE, source).check(dbc_oc),
                _relative(f"θ={theta:.2f} DBC ESS", expected_dbc[1], TWO_SIDED_ESS_TOLERANCE, source).check(dbc_ess),
            ])
            records.append({
                "theta": theta,
                "optimal_oc": optimal_oc,
                "optimal_ess": optimal_ess,
                "dbc_oc": dbc_oc,
                "dbc_ess": dbc_ess,
                "partial_oc": PARTIAL_SEQUENTIAL[index][0],
                "partial_ess": PARTIAL_SEQUENTIAL[index][1],
            })
        return ComparisonTable(
            scenario_id="table3",
            rows=tuple(rows),
            columns=("theta", "optimal_oc", "optimal_ess", "dbc_oc", "dbc_ess", "partial_oc", "partial_ess"),
            records=tuple(records),
            footer=(
                ("optimal_alpha", optimal_errors.alpha),
                ("optimal_beta_lower", optimal_errors.beta_lower),
                ("optimal_beta_upper", optimal_errors.beta_upper),
                ("dbc_alpha", dbc_errors.alpha),
                ("dbc_beta_lower", dbc_errors.beta_lower),
                ("dbc_beta_upper", dbc_errors.beta_upper),
            ),
        )

    def _run_group_sequential(self, overrides: Mapping[str, object]) -> ComparisonTable:
        reps: int = _positive_int(overrides, "reps", self._config.reps)
        source: str = SCENARIOS["example2_f4"].provenance
        model: Model = Model(kind=ModelKind.GROUPED_NORMAL, group_size=GROUP_SIZE)
        evals: List[float] = [GROUP_DELTA * (i - 5) / 2.0 for i in range(1, 10)]
        template: TestSpec = make_spec(
            thetas=[-GROUP_DELTA, GROUP_DELTA],
            evals=evals,
            gammas=GROUP_GAMMAS,
            lambdas=row_constant_lambdas([1.0 / GROUP_ALPHA] * 2),
            horizon=GROUP_COUNT,
            safety_cap=None,
            model=model,
        )
        target: CalibrationTarget = CalibrationTarget(
            targets=np.asarray([GROUP_ALPHA, GROUP_ALPHA]),
            tolerance=self._config.tolerance,
            ties=row_ties([[0, 1]], 2),
        )

        # 第一阶段：以公共随机数的蒙特卡洛评估校准λ₁=λ₂
        evaluator = mc_evaluator(
            reps=reps,
            seed=self._config.seed,
            cap=GROUP_COUNT,
            block_size=self._config.block_size,
            executor=self._executor,
        )
        result: CalibrationResult = calibrate(
            template,
            target,
            evaluator,
            max_evals=self._config.max_evals,
            xtol=self._config.xtol,
            ftol=self._config.ftol,
        )

        # 第二阶段：换算为观测数并比较
        report: TestReport = result.report
        weighted_obs: float = _weighted_ess(report) * GROUP_SIZE
        alpha_i: FloatArray = _alpha_i(report)
        if report.se_alpha is None:
            raise OptimizationError("蒙特卡洛校准报告缺少α的标准误")
        rows: List[ComparisonRow] = [
            _relative("加权ESS（观测数）", GROUP_DBC_ESS, GROUP_ESS_TOLERANCE, source).check(weighted_obs),
        ]
        for i in range(2):
            band: float = SIGMA_BAND * max(float(report.se_alpha[i, i]), _binomial_se(GROUP_ALPHA, reps))
            rows.append(Expectation(f"α{i + 1}", GROUP_ALPHA, band, "校准目标α=β=0.05").check(float(alpha_i[i])))
        max_sample: int = GROUP_COUNT * GROUP_SIZE
        records: List[Record] = [{
            "lambda": float(result.spec.lambda_matrix[0, 1]),
            "alpha1": float(alpha_i[0]),
            "alpha2": float(alpha_i[1]),
            "weighted_ess": weighted_obs,
            "se_weighted_ess": float(report.se_weighted_ess or 0.0) * GROUP_SIZE,
            "efficiency": 100.0 * GROUP_OPTIMAL_ESS / weighted_obs,
        }]
        return ComparisonTable(
            scenario_id="example2_f4",
            rows=tuple(rows),
            columns=("lambda", "alpha1", "alpha2", "weighted_ess", "se_weighted_ess", "efficiency"),
            records=tuple(records),
            footer=(
                ("optimal_weighted_ess", GROUP_OPTIMAL_ESS),
                ("fixed_sample_size", GROUP_FIXED_SAMPLE_SIZE),
                ("max_sample_ratio", max_sample / GROUP_FIXED_SAMPLE_SIZE),
                ("optimal_ratio", GROUP_OPTIMAL_ESS / GROUP_FIXED_SAMPLE_SIZE),
                ("dbc_ratio", weighted_obs / GROUP_FIXED_SAMPLE_SIZE),
                ("reference_ratio", GROUP_REFERENCE_RATIO),
            ),
        )

    def _run_trend(self, overrides: Mapping[str, object]) -> ComparisonTable:
        reps: int = _positive_int(overrides, "reps", self._config.reps)
        source: str = SCENARIOS["example4_trend"].provenance
        spec: TestSpec = make_spec(
            thetas=TREND_THETAS,
            evals=TREND_THETAS,
            gammas=(1.0 / 3.0,) * 3,
            lambdas=row_constant_lambdas(TREND_LAMBDAS),
            horizon=None,
            safety_cap=self._config.cap,
            model=Model(kind=ModelKind.NORMAL_TREND, group_size=None),
        )

        # 第一阶段：模拟DBC检验
        dbc: TestReport = self._simulate(spec, DbcRule(spec), reps)

        # 第二阶段：模拟MSPRT（log A = 4.6）
        msprt: TestReport = self._simulate(spec, uniform_msprt(3, TREND_MSPRT_LOG_THRESHOLD), reps)

        # 第三阶段：比较ESS与错误概率矩阵
        rows: List[ComparisonRow] = []
        records: List[Record] = []
        for index, theta in enumerate(TREND_PARAMS):
            dbc_ess, dbc_se = _ess_with_se(dbc, theta)
            msprt_ess, msprt_se = _ess_with_se(msprt, theta)
            rows.append(
                Expectation(
                    f"θ={theta:g} DBC ESS",
                    TREND_DBC_ESS[index],
                    SIGMA_BAND * max(dbc_se, TREND_DBC_ESS_SE[index]),
                    source,
                ).check(dbc_ess)
            )
            rows.append(
                Expectation(
                    f"θ={theta:g} MSPRT ESS",
                    TREND_MSPRT_ESS[index],
                    SIGMA_BAND * max(msprt_se, TREND_MSPRT_ESS_SE[index]),
                    source,
                ).check(msprt_ess)
            )
            records.append({
                "theta": theta,
                "dbc_ess": dbc_ess,
                "dbc_se": dbc_se,
                "msprt_ess": msprt_ess,
                "msprt_se": msprt_se,
            })
        rows.extend(_matrix_rows("DBC", dbc, TREND_DBC_ALPHA, TREND_DBC_ALPHA_SE, reps, source))
        rows.extend(_matrix_rows("MSPRT", msprt, TREND_MSPRT_ALPHA, None, reps, source))
        return ComparisonTable(
            scenario_id="example4_trend",
            rows=tuple(rows),
            columns=("theta", "dbc_ess", "dbc_se", "msprt_ess", "msprt_se"),
            records=tuple(records),
            footer=(("reps", float(reps)), ("seed", float(self._config.seed))),
        )

    def _run_kiefer_weiss(self, overrides: Mapping[str, object]) -> ComparisonTable:
        horizon: int = _positive_int(overrides, "horizon", KW_HORIZON)
        source: str = SCENARIOS["example5_kw"].provenance
        spec: TestSpec = make_spec(
            thetas=KW_THETAS,
            evals=KW_EVALS,
            gammas=(0.5, 0.5),
            lambdas=row_constant_lambdas(KW_LAMBDAS),
            horizon=horizon,
            safety_cap=None,
            model=bernoulli(),
        )

        # 第一阶段：直接核验DBC近似
        dbc: KWDesign = kw_check(spec, horizon, "dbc", self._config.grid_step, self._config.refine_tol, self._executor)

        # 第二阶段：核验λ=200的最优检验
        optimal_spec: TestSpec = spec.with_lambdas(row_constant_lambdas([KW_OPTIMAL_LAMBDA] * 3))
        optimal: KWDesign = kw_check(
            optimal_spec,
            horizon,
            "optimal",
            self._config.grid_step,
            self._config.refine_tol,
            self._executor,
        )

        # 第三阶段：比较
        dbc_alpha: FloatArray = _alpha_i(dbc.report)
        argmax: float = min(dbc.worst_points, key=lambda point: abs(point - KW_EVALS[0]))
        rows: List[ComparisonRow] = [
            Expectation(f"α{i + 1}", KW_ALPHAS[i], KW_ALPHA_TOLERANCE, source).check(float(dbc_alpha[i]))
            for i in range(3)
        ]
        rows.extend([
            Expectation("DBC最大ESS", KW_MAX_ESS, KW_MAX_ESS_TOLERANCE, source).check(dbc.max_ess),
            Expectation("DBC最大ESS位置", KW_EVALS[0], KW_ARGMAX_TOLERANCE, source).check(argmax),
            Expectation("最优检验最大ESS", KW_OPTIMAL_MAX_ESS, KW_OPTIMAL_TOLERANCE, source).check(optimal.max_ess),
        ])
        records: List[Record] = [
            {"test": "dbc", "max_ess": dbc.max_ess, "argmax": argmax, "fixed_point_gap": dbc.fixed_point_gap},
            {
                "test": "optimal",
                "max_ess": optimal.max_ess,
                "argmax": min(optimal.worst_points, key=lambda point: abs(point - KW_EVALS[0])),
                "fixed_point_gap": optimal.fixed_point_gap,
            },
        ]
        return ComparisonTable(
            scenario_id="example5_kw",
            rows=tuple(rows),
            columns=("test", "max_ess", "argmax", "fixed_point_gap"),
            records=tuple(records),
            footer=(("horizon", float(horizon)),),
        )

    def _fit_exact(
        self,
        template: TestSpec,
        alpha: float,
        ties: TieGroups,
        kind: str,
        horizon: int,
    ) -> CalibrationResult:
        target: CalibrationTarget = CalibrationTarget(
            targets=np.full(template.k, alpha),
            tolerance=self._config.tolerance,
            ties=ties,
        )
        return calibrate(
            template,
            target,
            exact_evaluator(kind, horizon),
            max_evals=self._config.max_evals,
            xtol=self._config.xtol,
            ftol=self._config.ftol,
        )

    def _simulate(self, spec: TestSpec, rule: StopPolicy, reps: int) -> TestReport:
        return simulate_spec(
            spec,
            rule,
            reps=reps,
            seed=self._config.seed,
            cap=self._config.cap,
            block_size=self._config.block_size,
            extra_params=TREND_PARAMS,
            executor=self._executor,
        )


def run_scenario(
    scenario_id: str,
    overrides: Mapping[str, object],
    config: RunConfig,
    executor: Optional[Executor] = None,
) -> ComparisonTable:
    """执行场景并返回比较表。

    参数:
        scenario_id: 场景标识。
        overrides: 覆盖参数。
        config: 运行配置。
        executor: 可选线程池。

    返回值:
        ComparisonTable；passed为True当且仅当全部检查项都在容差内。
    """

    return ScenarioRunner(config, executor).run(scenario_id, overrides)


def comparison_to_dict(table: ComparisonTable) -> JsonDict:
    """比较表序列化为JSON字典。"""

    return {
        "schema": COMPARISON_SCHEMA,
        "scenario": table.scenario_id,
        "passed": table.passed,
        "checks": [
            {
                "label": row.label,
                "expected": row.expected,
                "achieved": row.achieved if math.isfinite(row.achieved) else None,
                "tolerance": row.tolerance,
                "passed": row.passed,
                "provenance": row.provenance,
            }
            for row in table.rows
        ],
        "columns": list(table.columns),
        "records": [dict(record) for record in table.records],
        "footer": {name: value for name, value in table.footer},
    }


def comparison_to_csv(table: ComparisonTable) -> str:
    """记录表的CSV正文，数值保留17位有效数字。"""

    lines: List[str] = [",".join(table.columns)]
    for record in table.records:
        cells: List[str] = []
        for column in table.columns:
            value = record[column]
            cells.append(value if isinstance(value, str) else format_number(float(value)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def format_comparison(table: ComparisonTable) -> str:
    """人类可读的比较表。"""

    lines: List[str] = [f"场景 {table.scenario_id}: {'通过' if table.passed else '未通过'}"]
    width: int = max((len(row.label) for row in table.rows), default=8)
    for row in table.rows:
        mark: str = "PASS" if row.passed else "FAIL"
        lines.append(
            f"  {row.label:<{width}}  期望 {row.expected:>10.4g}  实际 {row.achieved:>10.4g}  "
            f"容差 {row.tolerance:>8.2g}  {mark}"
        )
    for name, value in table.footer:
        lines.append(f"  {name} = {value:.4g}")
    return "\n".join(lines)


def _bernoulli_template(thetas: Sequence[float], gammas: Sequence[float], alpha: float, horizon: int) -> TestSpec:
    return make_spec(
        thetas=thetas,
        evals=thetas,
        gammas=gammas,
        lambdas=row_constant_lambdas([1.0 / alpha] * len(thetas)),
        horizon=horizon,
        safety_cap=None,
        model=bernoulli(),
    )


def _relative(label: str, expected: float, relative: float, provenance: str) -> Expectation:
    return Expectation(label, expected, relative * abs(expected), provenance)


def _distance_row(label: str, distance: float) -> ComparisonRow:
    return Expectation(label, 0.0, CALIBRATION_ACCEPTANCE, "校准验收界：相对距离不超过0.005").check(distance)


def _weighted_ess(report: TestReport) -> float:
    if report.weighted_ess is None:
        raise SpecError("报告缺少加权ESS")
    return float(report.weighted_ess)


def _alpha_i(report: TestReport) -> FloatArray:
    if report.alpha_i is None:
        raise OptimizationError("报告缺少αᵢ，评估未覆盖全部假设参数")
    return report.alpha_i


def _ess_with_se(report: TestReport, theta: float) -> Tuple[float, float]:
    index: int = report.index_of(theta)
    se: float = float(report.se_ess[index]) if report.se_ess is not None else 0.0
    return float(report.ess[index]), se


def _binomial_se(p: float, reps: int) -> float:
    return math.sqrt(p * (1.0 - p) / reps)


def _matrix_rows(
    name: str,
    report: TestReport,
    expected: Tuple[Tuple[float, ...], ...],
    expected_se: Optional[Tuple[Tuple[float, ...], ...]],
    reps: int,
    provenance: str,
) -> List[ComparisonRow]:
    """错误概率矩阵的逐项比较，容差为3倍标准误（取报告、已发表与二项标准误的最大者）。"""

    if report.alpha is None or report.se_alpha is None:
        raise SpecError("报告缺少α矩阵")
    rows: List[ComparisonRow] = []
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            achieved: float = float(report.alpha[i, j])
            reference: float = expected[i][j]
            se: float = max(float(report.se_alpha[i, j]), _binomial_se(reference, reps))
            if expected_se is not None:
                se = max(se, expected_se[i][j])
            rows.append(Expectation(f"{name} α[{i + 1},{j + 1}]", reference, SIGMA_BAND * se, provenance).check(achieved))
    return rows


def _alpha_levels(
    overrides: Mapping[str, object],
    catalogue: Tuple[float, ...],
    default: Tuple[float, ...],
) -> Tuple[float, ...]:
    raw: object = overrides.get("alphas")
    if raw is None:
        return default
    if not isinstance(raw, (list, tuple)) or not raw:
        raise SpecError("alphas必须为非空数组")
    levels: List[float] = []
    for value in raw:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SpecError("alphas中含非数值元素")
        matches: List[float] = [level for level in catalogue if math.isclose(level, float(value), rel_tol=1e-9)]
        if not matches:
            raise SpecError(f"α={value}没有已发表的期望值（可选: {', '.join(str(a) for a in catalogue)}）")
        levels.append(matches[0])
    return tuple(levels)


def _positive_int(overrides: Mapping[str, object], key: str, default: int) -> int:
    raw: object = overrides.get(key, default)
    if isinstance(raw, bool) or not isinstance(raw, int) or raw < 1:
        raise SpecError(key + "必须为正整数")
    return raw
