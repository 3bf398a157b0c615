"""Bernoulli格点精确计算模块。

该模块负责在(n, s)格点上制表任意停止规则、以前向递推精确计算其操作特性，
以逆向归纳构造截断最优检验，并提供逐路径枚举的校验器。
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    DbcRule,
    LogLikState,
    StopPolicy,
    TestSpec,
    append_observation,
    initial_state,
    log_risk_candidates,
    log_weighted_density,
)
from .errors import InvalidPolicyError, SpecError, UnsupportedModelError
from .models import ModelKind, bernoulli, bernoulli_loglik, validate_param
from .report import ReportBuilder, TestReport
from .types import ActionArray, BoolArray, CurvePoint, Decision, FloatArray, IntArray, JsonDict

logger = logging.getLogger(__name__)

CONTINUE: int = -1
ORACLE_MAX_HORIZON: int = 12
POLICY_SCHEMA: int = 1


@dataclass(frozen=True, eq=False)
class LatticePolicy:
    """格点策略。

    参数:
        horizon: 截断视界N。
        k: 假设个数。
        rows: 第n行（n=1..N）为长度n+1的动作数组，CONTINUE表示继续，j≥0表示停止并接受H_j。
        forced: 长度N+1的掩码，标记第N行中原规则本会继续、因截断被强制停止的状态。

    返回值:
        实现StopPolicy协议，可按(n, stat)在观测流上回放。

    关键实现细节:
        构造时只校验形状与取值范围；末行是否全部停止由evaluate检查。
    """

    horizon: int
    k: int
    rows: Tuple[ActionArray, ...]
    forced: BoolArray

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise InvalidPolicyError("格点策略视界必须为正整数")
        if len(self.rows) != self.horizon:
            raise InvalidPolicyError("格点策略行数必须等于视界")
        for n, row in enumerate(self.rows, start=1):
            if row.shape != (n + 1,):
                raise InvalidPolicyError(f"第{n}行长度必须为{n + 1}")
            if np.any(row < CONTINUE) or np.any(row >= self.k):
                raise InvalidPolicyError(f"第{n}行含非法动作")
        if self.forced.shape != (self.horizon + 1,):
            raise InvalidPolicyError("forced掩码长度必须为N+1")

    @property
    def is_truncated(self) -> bool:
        """末行是否全部为停止动作。"""

        return bool(np.all(self.rows[-1] != CONTINUE))

    def row(self, n: int) -> ActionArray:
        return self.rows[n - 1]

    def stop_mask(self, n: int) -> BoolArray:
        return self.rows[n - 1] != CONTINUE

    def decide_batch(self, state: LogLikState) -> Decision:
        stat: IntArray = self._stat_index(state)
        if state.n == 0:
            return np.zeros(stat.shape, dtype=bool), np.zeros(stat.shape, dtype=np.int64)
        if state.n > self.horizon:
            raise InvalidPolicyError("状态步数超出格点策略视界")
        action: IntArray = self.rows[state.n - 1][stat].astype(np.int64)
        stopped: BoolArray = action != CONTINUE
        return stopped, np.where(stopped, action, 0)

    def decide_terminal(self, state: LogLikState) -> IntArray:
        stat: IntArray = self._stat_index(state)
        n: int = min(state.n, self.horizon)
        if n < 1:
            raise InvalidPolicyError("n=0时没有终止判决")
        action: IntArray = self.rows[n - 1][stat].astype(np.int64)
        if np.any(action == CONTINUE):
            raise InvalidPolicyError(f"格点策略在第{n}步存在未定义的终止判决")
        return action

    @staticmethod
    def _stat_index(state: LogLikState) -> IntArray:
        if state.stat is None:
            raise InvalidPolicyError("格点策略回放需要状态携带成功次数stat")
        return np.rint(state.stat).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ForwardResult:
    """前向递推的原始结果。

    参数:
        accept: P×k接受概率。
        stop_dist: P×(N+1)停止分布。
        truncated_mass: 各参数在截断步被强制停止的概率。
    """

    accept: FloatArray
    stop_dist: FloatArray
    truncated_mass: FloatArray

    @property
    def ess(self) -> FloatArray:
        steps: FloatArray = np.arange(self.stop_dist.shape[1], dtype=float)
        return self.stop_dist @ steps


def lattice_state(spec: TestSpec, n: int) -> LogLikState:
    """第n行全部状态组成的批量LogLikState，stat为成功次数0..n。"""

    successes: FloatArray = np.arange(n + 1, dtype=float)
    return LogLikState(
        n=n,
        logf_theta=bernoulli_loglik(spec.theta_array, n, successes),
        logf_eval=bernoulli_loglik(spec.eval_array, n, successes),
        stat=successes,
    )


def tabulate_policy(rule: StopPolicy, spec: TestSpec, horizon: int) -> LatticePolicy:
    """在Bernoulli格点上制表任意停止规则。

    参数:
        rule: 实现StopPolicy协议的规则。
        spec: Bernoulli规格，提供θ与ϑ。
        horizon: 截断视界N。

    返回值:
        LatticePolicy；第N行由规则的终止判决补全，并记录被强制停止的状态。
    """

    _require_bernoulli(spec)
    if horizon < 1:
        raise SpecError("horizon必须为正整数")
    rows: List[ActionArray] = []
    forced: BoolArray = np.zeros(horizon + 1, dtype=bool)
    for n in range(1, horizon + 1):
        state: LogLikState = lattice_state(spec, n)
        stopped, accepted = rule.decide_batch(state)
        action: IntArray = np.where(stopped, accepted, CONTINUE)
        if n == horizon:
            terminal: IntArray = rule.decide_terminal(state)
            forced = ~np.asarray(stopped, dtype=bool)
            action = np.where(stopped, accepted, terminal)
        rows.append(action.astype(np.int16))
    logger.debug("tabulated policy N=%d forced=%d", horizon, int(forced.sum()))
    return LatticePolicy(horizon=horizon, k=spec.k, rows=tuple(rows), forced=forced)


def dbc_lattice(spec: TestSpec, horizon: Optional[int] = None) -> LatticePolicy:
    """DBC规则的格点策略，视界默认取规格的有效视界。"""

    return tabulate_policy(DbcRule(spec), spec, horizon if horizon is not None else spec.effective_horizon)


def forward_pass(policy: LatticePolicy, params: Sequence[float], k: int) -> ForwardResult:
    """前向精确递推。

    参数:
        policy: 格点策略。
        params: 真实参数点。
        k: 假设个数。

    返回值:
        ForwardResult。

    关键实现细节:
        c(n, s) = P(n步前未停止, S_n = s)在线性空间中逐行推进，
        总质量不超过1，下溢的只是可忽略的尾部质量；继续质量全部为零时提前结束。
    """

    if policy.k != k:
        raise InvalidPolicyError("格点策略的假设个数与规格不一致")
    p: FloatArray = np.asarray(params, dtype=float)[:, None]
    count: int = p.shape[0]
    accept: FloatArray = np.zeros((count, k))
    stop_dist: FloatArray = np.zeros((count, policy.horizon + 1))
    truncated_mass: FloatArray = np.zeros(count)
    mass: FloatArray = np.ones((count, 1))
    for n in range(1, policy.horizon + 1):
        reached: FloatArray = np.zeros((count, n + 1))
        reached[:, :-1] += mass * (1.0 - p)
        reached[:, 1:] += mass * p
        action: ActionArray = policy.row(n)
        for j in range(k):
            accept[:, j] += reached[:, action == j].sum(axis=1)
        stop: BoolArray = action != CONTINUE
        stop_dist[:, n] = reached[:, stop].sum(axis=1)
        if n == policy.horizon:
            truncated_mass = reached[:, policy.forced].sum(axis=1)
        mass = np.where(stop, 0.0, reached)
        if not mass.any():
            break
    return ForwardResult(accept=accept, stop_dist=stop_dist, truncated_mass=truncated_mass)


def evaluate(policy: LatticePolicy, spec: TestSpec, extra_params: Sequence[float] = ()) -> TestReport:
    """精确计算格点策略的性能报告。

    参数:
        policy: 格点策略，视界不得超过规格视界。
        spec: Bernoulli规格。
        extra_params: 额外需要计算ESS的参数点。

    返回值:
        TestReport，标准误字段为None。
    """

    _require_bernoulli(spec)
    if not policy.is_truncated:
        raise InvalidPolicyError(f"格点策略第{policy.horizon}行必须全部为停止动作")
    if policy.horizon > spec.effective_horizon:
        raise InvalidPolicyError("格点策略视界超过规格视界")
    for value in extra_params:
        validate_param(spec.model, float(value))
    builder: ReportBuilder = ReportBuilder(spec)
    params: FloatArray = builder.parameter_points(extra_params)
    result: ForwardResult = forward_pass(policy, params, spec.k)
    return builder.build(
        params=params,
        accept=result.accept,
        ess=result.ess,
        stop_dist=result.stop_dist,
        truncated_mass=result.truncated_mass,
        se_accept=None,
        se_ess=None,
        cap_hits=None,
        reps=None,
    )


def backward_optimal(spec: TestSpec, horizon: int) -> Tuple[LatticePolicy, float]:
    """逆向归纳构造截断最优检验。

    参数:
        spec: Bernoulli规格。
        horizon: 截断视界N。

    返回值:
        (最优格点策略, 最小拉格朗日函数值 1 + 𝓘₁V₁)。

    关键实现细节:
        在对数空间递推 log V_n = min(log v_n, log(f_γϑⁿ + V_{n+1}(s) + V_{n+1}(s+1)))，
        只保留相邻两行的价值；相等时停止，判决取最小风险候选。
    """

    _require_bernoulli(spec)
    if horizon < 1:
        raise SpecError("horizon必须为正整数")
    lambdas: FloatArray = spec.lambda_matrix
    rows: List[ActionArray] = []
    log_value: Optional[FloatArray] = None
    for n in range(horizon, 0, -1):
        state: LogLikState = lattice_state(spec, n)
        candidates: FloatArray = log_risk_candidates(state, lambdas)
        log_stop: FloatArray = np.min(candidates, axis=-1)
        accepted: IntArray = np.argmin(candidates, axis=-1)
        if log_value is None:
            # 第N行全部停止
            rows.append(accepted.astype(np.int16))
            log_value = log_stop
            continue
        log_continue: FloatArray = np.logaddexp(
            log_weighted_density(state, spec.gammas),
            np.logaddexp(log_value[:-1], log_value[1:]),
        )
        stop: BoolArray = log_stop <= log_continue
        rows.append(np.where(stop, accepted, CONTINUE).astype(np.int16))
        log_value = np.minimum(log_stop, log_continue)
    rows.reverse()
    minimal: float = 1.0 + float(np.exp(np.logaddexp(log_value[0], log_value[1])))
    logger.debug("backward induction N=%d minimal lagrangian=%.6f", horizon, minimal)
    policy: LatticePolicy = LatticePolicy(
        horizon=horizon,
        k=spec.k,
        rows=tuple(rows),
        forced=np.zeros(horizon + 1, dtype=bool),
    )
    return policy, minimal


def brute_force_oracle(
    rule: StopPolicy,
    spec: TestSpec,
    horizon: int,
    extra_params: Sequence[float] = (),
) -> TestReport:
    """逐路径枚举的精确校验器。

    参数:
        rule: 停止规则（可为格点策略或DBC等闭式规则）。
        spec: Bernoulli规格。
        horizon: 截断视界，不超过12。
        extra_params: 额外参数点。

    返回值:
        与evaluate同结构的TestReport。

    关键实现细节:
        枚举全部0/1序列，沿路径用core.append_observation构造原始状态并逐步判决，
        不经过格点制表。
    """

    _require_bernoulli(spec)
    if horizon < 1 or horizon > ORACLE_MAX_HORIZON:
        raise InvalidPolicyError(f"枚举校验的视界必须位于1..{ORACLE_MAX_HORIZON}")
    builder: ReportBuilder = ReportBuilder(spec)
    params: FloatArray = builder.parameter_points(extra_params)
    accept: FloatArray = np.zeros((params.shape[0], spec.k))
    stop_dist: FloatArray = np.zeros((params.shape[0], horizon + 1))
    truncated_mass: FloatArray = np.zeros(params.shape[0])

    def visit(state: LogLikState, path_prob: FloatArray) -> None:
        for x in (0.0, 1.0):
            next_state: LogLikState = append_observation(state, spec, x)
            next_prob: FloatArray = path_prob * (params if x == 1.0 else 1.0 - params)
            stopped, accepted = rule.decide_batch(next_state)
            if bool(stopped):
                accept[:, int(accepted)] += next_prob
                stop_dist[:, next_state.n] += next_prob
            elif next_state.n == horizon:
                accept[:, int(rule.decide_terminal(next_state))] += next_prob
                stop_dist[:, horizon] += next_prob
                truncated_mass[:] += next_prob
            else:
                visit(next_state, next_prob)

    visit(initial_state(spec), np.ones(params.shape[0]))
    steps: FloatArray = np.arange(horizon + 1, dtype=float)
    return builder.build(
        params=params,
        accept=accept,
        ess=stop_dist @ steps,
        stop_dist=stop_dist,
        truncated_mass=truncated_mass,
        se_accept=None,
        se_ess=None,
        cap_hits=None,
        reps=None,
    )


def oc_ess_curve(
    policy: LatticePolicy,
    theta_grid: Sequence[float],
    accept_indices: Sequence[int],
) -> List[CurvePoint]:
    """操作特性与ESS曲线。

    参数:
        policy: 格点策略。
        theta_grid: 参数网格。
        accept_indices: 视为“接受原假设”的假设下标集合。

    返回值:
        (θ, OC, ESS)列表，OC为接受给定假设集合的概率。
    """

    if not policy.is_truncated:
        raise InvalidPolicyError(f"格点策略第{policy.horizon}行必须全部为停止动作")
    model = bernoulli()
    for value in theta_grid:
        validate_param(model, float(value))
    if not accept_indices or any(index < 0 or index >= policy.k for index in accept_indices):
        raise SpecError("accept_indices必须为非空的合法假设下标")
    result: ForwardResult = forward_pass(policy, theta_grid, policy.k)
    oc: FloatArray = result.accept[:, list(accept_indices)].sum(axis=1)
    ess: FloatArray = result.ess
    return [
        (float(theta), float(oc[index]), float(ess[index]))
        for index, theta in enumerate(theta_grid)
    ]


def policy_to_dict(policy: LatticePolicy) -> JsonDict:
    """格点策略序列化为游程编码JSON。

    关键实现细节:
        每行记录动作段的起点与动作，动作0表示继续，j表示接受H_j（从1开始）。
    """

    encoded_rows: List[List[List[int]]] = []
    for row in policy.rows:
        external: IntArray = row.astype(np.int64) + 1
        starts: IntArray = np.flatnonzero(np.diff(external, prepend=-1))
        encoded_rows.append([[int(start), int(external[start])] for start in starts])
    return {
        "schema": POLICY_SCHEMA,
        "horizon": policy.horizon,
        "k": policy.k,
        "rows": encoded_rows,
        "forced": [int(s) for s in np.flatnonzero(policy.forced)],
    }


def policy_from_dict(data: JsonDict) -> LatticePolicy:
    """从游程编码JSON恢复格点策略。"""

    if data.get("schema") != POLICY_SCHEMA:
        raise InvalidPolicyError("不支持的策略schema: " + str(data.get("schema")))
    horizon: int = _json_int(data.get("horizon"), "horizon")
    k: int = _json_int(data.get("k"), "k")
    encoded_rows: object = data.get("rows")
    if not isinstance(encoded_rows, list) or len(encoded_rows) != horizon:
        raise InvalidPolicyError("rows行数必须等于horizon")
    rows: List[ActionArray] = []
    for n, segments in enumerate(encoded_rows, start=1):
        rows.append(_decode_row(segments, n))
    forced: BoolArray = np.zeros(horizon + 1, dtype=bool)
    forced_raw: object = data.get("forced", [])
    if not isinstance(forced_raw, list):
        raise InvalidPolicyError("forced必须为数组")
    for s in forced_raw:
        forced[_json_int(s, "forced")] = True
    return LatticePolicy(horizon=horizon, k=k, rows=tuple(rows), forced=forced)


def stop_region_contains(inner: LatticePolicy, outer: LatticePolicy, reachable: Optional[Dict[int, BoolArray]] = None) -> bool:
    """inner的停止区域是否包含于outer（仅比较第1..N−1行，可限定可达状态）。"""

    if inner.horizon != outer.horizon:
        raise InvalidPolicyError("比较停止区域要求视界一致")
    for n in range(1, inner.horizon):
        violation: BoolArray = inner.stop_mask(n) & ~outer.stop_mask(n)
        if reachable is not None:
            violation &= reachable[n]
        if violation.any():
            return False
    return True


def reachable_states(policy: LatticePolicy) -> Dict[int, BoolArray]:
    """策略下可达的格点状态（任一参数下延续概率为正）。"""

    reachable: Dict[int, BoolArray] = {}
    open_states: BoolArray = np.ones(1, dtype=bool)
    for n in range(1, policy.horizon + 1):
        current: BoolArray = np.zeros(n + 1, dtype=bool)
        current[:-1] |= open_states
        current[1:] |= open_states
        reachable[n] = current
        open_states = current & ~policy.stop_mask(n)
    return reachable


def _decode_row(segments: object, n: int) -> ActionArray:
    if not isinstance(segments, list) or not segments:
        raise InvalidPolicyError(f"第{n}行游程编码为空")
    row: ActionArray = np.empty(n + 1, dtype=np.int16)
    bounds: List[Tuple[int, int]] = []
    for segment in segments:
        if not isinstance(segment, list) or len(segment) != 2:
            raise InvalidPolicyError(f"第{n}行游程段格式错误")
        bounds.append((_json_int(segment[0], "rows"), _json_int(segment[1], "rows")))
    if bounds[0][0] != 0 or any(b[0] >= a[0] for a, b in zip(bounds[1:], bounds)):
        raise InvalidPolicyError(f"第{n}行游程起点必须从0开始严格递增")
    if bounds[-1][0] > n:
        raise InvalidPolicyError(f"第{n}行游程起点越界")
    ends: List[int] = [start for start, _ in bounds[1:]] + [n + 1]
    for (start, action), end in zip(bounds, ends):
        row[start:end] = action - 1
    return row


def _json_int(value: object, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidPolicyError(name + "必须为整数")
    return value


def _require_bernoulli(spec: TestSpec) -> None:
    if spec.model.kind is not ModelKind.BERNOULLI:
        raise UnsupportedModelError("精确格点计算仅支持Bernoulli模型")
