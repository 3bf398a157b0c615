"""蒙特卡洛评估模块。

该模块负责以可复现的方式模拟任意停止规则在任意模型下的表现，
输出带标准误的TestReport与经验生存函数。
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, replace
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import LogLikState, StopPolicy, TestSpec
from .errors import SpecError
from .parallel import ordered_map
from .models import log_density_increment, sample_step, stat_increment, validate_param
from .report import ReportBuilder, TestReport
from .types import BoolArray, FloatArray, IntArray

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    """模拟配置。

    参数:
        spec: 检验规格，提供模型、假设θ与评估点ϑ。
        rule: 停止/判决规则。
        reps: 重复次数。
        seed: 非负整数种子。
        cap: 硬截断步数N。
        true_param: 生成数据的真实参数。
        block_size: 每个随机数块包含的重复次数。

    返回值:
        不直接返回，作为模拟输入。

    关键实现细节:
        所有字段均为必填；块大小属于配置，不随线程数变化。
    """

    spec: TestSpec
    rule: StopPolicy
    reps: int
    seed: int
    cap: int
    true_param: float
    block_size: int

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise SpecError("reps必须为正整数")
        if self.cap < 1:
            raise SpecError("cap必须为正整数")
        if self.block_size < 1:
            raise SpecError("block_size必须为正整数")
        if self.seed < 0:
            raise SpecError("seed必须为非负整数")
        validate_param(self.spec.model, self.true_param)


@dataclass(frozen=True, eq=False)
class BlockOutcome:
    """单个随机数块的逐重复结果。"""

    tau: IntArray
    accepted: IntArray
    capped: BoolArray


@dataclass(frozen=True, eq=False)
class ParamSummary:
    """单个真实参数下的模拟汇总。"""

    accept: FloatArray
    ess: float
    stop_dist: FloatArray
    cap_hit: float
    se_accept: FloatArray
    se_ess: float


def simulate(config: SimConfig, executor: Optional[Executor] = None) -> TestReport:
    """在单个真实参数下模拟。

    参数:
        config: 模拟配置。
        executor: 可选线程池，None表示串行。

    返回值:
        仅含真实参数一点的TestReport，附接受概率与ESS的标准误。
    """

    outcome: BlockOutcome = _run_all_blocks(config, executor)
    builder: ReportBuilder = ReportBuilder(config.spec)
    summary: ParamSummary = _summarize(outcome, config)
    report: TestReport = _build_report(builder, np.asarray([config.true_param]), [summary], config.reps)
    logger.info(
        "simulated theta=%g reps=%d ess=%.4f cap_hit=%.2e",
        config.true_param,
        config.reps,
        float(report.ess[0]),
        summary.cap_hit,
    )
    return report


def simulate_spec(
    spec: TestSpec,
    rule: StopPolicy,
    reps: int,
    seed: int,
    cap: int,
    block_size: int,
    extra_params: Sequence[float] = (),
    executor: Optional[Executor] = None,
) -> TestReport:
    """在全部θᵢ、ϑᵢ及附加参数下模拟并组装完整报告。

    参数:
        spec: 检验规格。
        rule: 停止/判决规则。
        reps: 每个参数点的重复次数。
        seed: 种子，各参数点共用以形成公共随机数。
        cap: 硬截断步数。
        block_size: 随机数块大小。
        extra_params: 附加参数点。
        executor: 可选线程池。

    返回值:
        含α矩阵与加权ESS（及其标准误）的TestReport。
    """

    builder: ReportBuilder = ReportBuilder(spec)
    params: FloatArray = builder.parameter_points(extra_params)
    base: SimConfig = SimConfig(
        spec=spec,
        rule=rule,
        reps=reps,
        seed=seed,
        cap=cap,
        true_param=float(params[0]),
        block_size=block_size,
    )
    summaries: List[ParamSummary] = []
    for theta in params:
        config: SimConfig = replace(base, true_param=float(theta))
        summaries.append(_summarize(_run_all_blocks(config, executor), config))
    report: TestReport = _build_report(builder, params, summaries, reps)
    logger.info(
        "simulated spec over %d params reps=%d weighted_ess=%s",
        params.shape[0],
        reps,
        report.weighted_ess,
    )
    return report


def tail_curve(config: SimConfig, executor: Optional[Executor] = None) -> List[Tuple[int, float]]:
    """经验生存函数 (n, P̂(τ>n))，n=0..cap。"""

    outcome: BlockOutcome = _run_all_blocks(config, executor)
    counts: FloatArray = np.bincount(outcome.tau, minlength=config.cap + 1).astype(float)
    survival: FloatArray = 1.0 - np.cumsum(counts) / config.reps
    survival = np.clip(survival, 0.0, 1.0)
    return [(n, float(survival[n])) for n in range(config.cap + 1)]


def block_layout(reps: int, block_size: int) -> List[int]:
    """各块的重复次数，最后一块可能不满。"""

    full, rest = divmod(reps, block_size)
    return [block_size] * full + ([rest] if rest else [])


def run_block(config: SimConfig, block_index: int, size: int) -> BlockOutcome:
    """模拟一个随机数块。

    参数:
        config: 模拟配置。
        block_index: 块序号，与种子共同决定随机数流。
        size: 本块重复次数。

    返回值:
        BlockOutcome。

    关键实现细节:
        每步为整块抽样再只更新仍在进行的重复，使任一重复的随机数与其他重复何时停止无关；
        到达cap时未停止者按终止判决接受，并记为触达上限。
    """

    spec: TestSpec = config.spec
    rng: np.random.Generator = np.random.default_rng([config.seed, block_index])
    logf_theta: FloatArray = np.zeros((size, spec.k))
    logf_eval: FloatArray = np.zeros((size, spec.big_k))
    stat: FloatArray = np.zeros(size)
    active: BoolArray = np.ones(size, dtype=bool)
    tau: IntArray = np.zeros(size, dtype=np.int64)
    accepted: IntArray = np.zeros(size, dtype=np.int64)
    capped: BoolArray = np.zeros(size, dtype=bool)
    for t in range(1, config.cap + 1):
        draws: FloatArray = sample_step(spec.model, rng, config.true_param, t, size)
        index: IntArray = np.flatnonzero(active)
        x: FloatArray = draws[index]
        logf_theta[index] += log_density_increment(spec.model, spec.theta_array, x[:, None], t)
        logf_eval[index] += log_density_increment(spec.model, spec.eval_array, x[:, None], t)
        stat[index] += stat_increment(spec.model, x, t)
        state: LogLikState = LogLikState(
            n=t,
            logf_theta=logf_theta[index],
            logf_eval=logf_eval[index],
            stat=stat[index],
        )
        stopped, decision = config.rule.decide_batch(state)
        stopped = np.asarray(stopped, dtype=bool)
        decision = np.asarray(decision, dtype=np.int64)
        if t == config.cap:
            terminal: IntArray = config.rule.decide_terminal(state)
            capped[index] = ~stopped
            decision = np.where(stopped, decision, terminal)
            stopped = np.ones_like(stopped)
        finished: IntArray = index[stopped]
        tau[finished] = t
        accepted[finished] = decision[stopped]
        active[finished] = False
        if not active.any():
            break
    return BlockOutcome(tau=tau, accepted=accepted, capped=capped)


def _run_all_blocks(config: SimConfig, executor: Optional[Executor]) -> BlockOutcome:
    sizes: List[int] = block_layout(config.reps, config.block_size)

    def run(block_index: int) -> BlockOutcome:
        return run_block(config, block_index, sizes[block_index])

    outcomes: List[BlockOutcome] = ordered_map(run, range(len(sizes)), executor)
    return BlockOutcome(
        tau=np.concatenate([outcome.tau for outcome in outcomes]),
        accepted=np.concatenate([outcome.accepted for outcome in outcomes]),
        capped=np.concatenate([outcome.capped for outcome in outcomes]),
    )


def _summarize(outcome: BlockOutcome, config: SimConfig) -> ParamSummary:

    reps: int = config.reps
    frequencies: FloatArray = np.bincount(outcome.accepted, minlength=config.spec.k).astype(float) / reps
    se_frequencies: FloatArray = np.sqrt(frequencies * (1.0 - frequencies) / reps)
    tau: FloatArray = outcome.tau.astype(float)
    ess: float = float(np.mean(tau))
    se_ess: float = float(np.std(tau, ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    stop_dist: FloatArray = np.bincount(outcome.tau, minlength=config.cap + 1).astype(float) / reps
    cap_hit: float = float(np.mean(outcome.capped))
    return ParamSummary(
        accept=frequencies,
        ess=ess,
        stop_dist=stop_dist,
        cap_hit=cap_hit,
        se_accept=se_frequencies,
        se_ess=se_ess,
    )


def _build_report(
    builder: ReportBuilder,
    params: FloatArray,
    summaries: List[ParamSummary],
    reps: int,
) -> TestReport:
    cap_hits: FloatArray = np.asarray([summary.cap_hit for summary in summaries], dtype=float)
    return builder.build(
        params=params,
        accept=np.stack([summary.accept for summary in summaries]),
        ess=np.asarray([summary.ess for summary in summaries], dtype=float),
        stop_dist=np.stack([summary.stop_dist for summary in summaries]),
        truncated_mass=cap_hits,
        se_accept=np.stack([summary.se_accept for summary in summaries]),
        se_ess=np.asarray([summary.se_ess for summary in summaries], dtype=float),
        cap_hits=cap_hits,
        reps=reps,
    )

