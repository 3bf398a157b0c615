"""评估报告模块。

该模块定义检验性能报告TestReport，负责由逐参数的接受概率、ESS与停止分布
组装α矩阵与加权ESS，并提供JSON与CSV输出。
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
import io
import math
from typing import List, Optional, Sequence

import numpy as np

from .core import TestSpec
from .errors import SpecError
from .types import FloatArray, JsonDict, JsonValue

REPORT_SCHEMA: int = 1


@dataclass(frozen=True, eq=False)
class TestReport:
    """检验性能报告。

    参数:
        thetas: 假设参数值，用于标注α矩阵的行。
        params: 已评估的参数点（P个）。
        accept: P×k接受概率矩阵，第p行为真实参数params[p]下接受各假设的概率。
        ess: 各参数点的期望样本量。
        stop_dist: P×(N+1)停止步数分布，第n列为P(τ=n)。
        truncated_mass: 各参数点在截断步被强制停止的概率。
        alpha: k×k矩阵α_ij（行为真实θᵢ，列为接受H_j，对角线为正确接受概率）。
        alpha_i: 各假设的拒绝概率 1−α_ii。
        weighted_ess: 加权ESS C_γϑ。
        se_accept: 蒙特卡洛时accept的标准误，精确评估时为None。
        se_ess: 蒙特卡洛时ESS的标准误。
        se_alpha: 蒙特卡洛时α矩阵的标准误。
        se_weighted_ess: 蒙特卡洛时加权ESS的标准误。
        cap_hits: 蒙特卡洛时触达截断上限的比例。
        reps: 蒙特卡洛重复次数，精确评估时为None。

    关键实现细节:
        精确报告的标准误字段全部为None，不以0代替。
    """

    __test__ = False

    thetas: FloatArray
    params: FloatArray
    accept: FloatArray
    ess: FloatArray
    stop_dist: FloatArray
    truncated_mass: FloatArray
    alpha: Optional[FloatArray]
    alpha_i: Optional[FloatArray]
    weighted_ess: Optional[float]
    se_accept: Optional[FloatArray]
    se_ess: Optional[FloatArray]
    se_alpha: Optional[FloatArray]
    se_weighted_ess: Optional[float]
    cap_hits: Optional[FloatArray]
    reps: Optional[int]

    def index_of(self, theta: float) -> int:
        """参数点在params中的下标。"""

        matches: FloatArray = np.flatnonzero(self.params == theta)
        if matches.size == 0:
            raise SpecError("报告中不含参数点: " + str(theta))
        return int(matches[0])

    def ess_at(self, theta: float) -> float:
        return float(self.ess[self.index_of(theta)])

    def oc(self, theta: float, accept_indices: Sequence[int]) -> float:
        """参数点处接受给定假设集合的概率。"""

        row: FloatArray = self.accept[self.index_of(theta)]
        return float(np.sum(row[list(accept_indices)]))


class ReportBuilder:
    """报告构建器。

    参数:
        spec: 检验规格，提供假设、评估点与权重。

    返回值:
        提供由逐参数结果组装TestReport的能力。

    关键实现细节:
        α矩阵与加权ESS仅在所有θᵢ、ϑᵢ都已评估时给出，否则置为None。
    """

    def __init__(self, spec: TestSpec) -> None:
        self._spec: TestSpec = spec

    def parameter_points(self, extra_params: Sequence[float]) -> FloatArray:
        """按θ、ϑ、附加参数顺序去重后的参数点。"""

        ordered: List[float] = []
        for value in list(self._spec.thetas) + list(self._spec.evals) + [float(p) for p in extra_params]:
            if value not in ordered:
                ordered.append(value)
        return np.asarray(ordered, dtype=float)

    def build(
        self,
        params: FloatArray,
        accept: FloatArray,
        ess: FloatArray,
        stop_dist: FloatArray,
        truncated_mass: FloatArray,
        se_accept: Optional[FloatArray],
        se_ess: Optional[FloatArray],
        cap_hits: Optional[FloatArray],
        reps: Optional[int],
    ) -> TestReport:
        """组装报告。

        参数:
            params: 参数点。
            accept: 接受概率矩阵。
            ess: 期望样本量。
            stop_dist: 停止分布。
            truncated_mass: 截断强制停止概率。
            se_accept: 接受概率标准误，精确评估为None。
            se_ess: ESS标准误，精确评估为None。
            cap_hits: 触达上限比例，精确评估为None。
            reps: 重复次数，精确评估为None。

        返回值:
            TestReport。

        关键实现细节:
            加权ESS的标准误按独立估计合成 √Σγᵢ²seᵢ²。
        """

        lookup: dict[float, int] = {float(value): index for index, value in enumerate(params)}
        alpha: Optional[FloatArray] = None
        alpha_i: Optional[FloatArray] = None
        se_alpha: Optional[FloatArray] = None
        if all(theta in lookup for theta in self._spec.thetas):
            rows: List[int] = [lookup[theta] for theta in self._spec.thetas]
            alpha = accept[rows].copy()
            alpha_i = 1.0 - np.diag(alpha)
            if se_accept is not None:
                se_alpha = se_accept[rows].copy()
        weighted_ess: Optional[float] = None
        se_weighted_ess: Optional[float] = None
        if all(vartheta in lookup for vartheta in self._spec.evals):
            eval_rows: List[int] = [lookup[vartheta] for vartheta in self._spec.evals]
            weighted_ess = float(np.dot(self._spec.gamma_array, ess[eval_rows]))
            if se_ess is not None:
                se_weighted_ess = float(
                    math.sqrt(np.sum((self._spec.gamma_array * se_ess[eval_rows]) ** 2))
                )
        return TestReport(
            thetas=self._spec.theta_array,
            params=np.asarray(params, dtype=float),
            accept=accept,
            ess=ess,
            stop_dist=stop_dist,
            truncated_mass=truncated_mass,
            alpha=alpha,
            alpha_i=alpha_i,
            weighted_ess=weighted_ess,
            se_accept=se_accept,
            se_ess=se_ess,
            se_alpha=se_alpha,
            se_weighted_ess=se_weighted_ess,
            cap_hits=cap_hits,
            reps=reps,
        )


def report_to_dict(report: TestReport) -> JsonDict:
    """报告序列化为带版本号的JSON字典。"""

    return {
        "schema": REPORT_SCHEMA,
        "thetas": _to_json(report.thetas),
        "params": _to_json(report.params),
        "accept": _to_json(report.accept),
        "ess": _to_json(report.ess),
        "stop_dist": _to_json(report.stop_dist),
        "truncated_mass": _to_json(report.truncated_mass),
        "alpha": _to_json(report.alpha),
        "alpha_i": _to_json(report.alpha_i),
        "weighted_ess": report.weighted_ess,
        "se_accept": _to_json(report.se_accept),
        "se_ess": _to_json(report.se_ess),
        "se_alpha": _to_json(report.se_alpha),
        "se_weighted_ess": report.se_weighted_ess,
        "cap_hits": _to_json(report.cap_hits),
        "reps": report.reps,
    }


def report_from_dict(data: JsonDict) -> TestReport:
    """从JSON字典恢复报告。

    关键实现细节:
        schema版本不符时拒绝解析。
    """

    if data.get("schema") != REPORT_SCHEMA:
        raise SpecError("不支持的报告schema: " + str(data.get("schema")))
    weighted: JsonValue = data.get("weighted_ess")
    se_weighted: JsonValue = data.get("se_weighted_ess")
    reps: JsonValue = data.get("reps")
    return TestReport(
        thetas=_required_array(data, "thetas"),
        params=_required_array(data, "params"),
        accept=_required_array(data, "accept"),
        ess=_required_array(data, "ess"),
        stop_dist=_required_array(data, "stop_dist"),
        truncated_mass=_required_array(data, "truncated_mass"),
        alpha=_from_json(data.get("alpha")),
        alpha_i=_from_json(data.get("alpha_i")),
        weighted_ess=None if weighted is None else float(weighted),
        se_accept=_from_json(data.get("se_accept")),
        se_ess=_from_json(data.get("se_ess")),
        se_alpha=_from_json(data.get("se_alpha")),
        se_weighted_ess=None if se_weighted is None else float(se_weighted),
        cap_hits=_from_json(data.get("cap_hits")),
        reps=None if reps is None else int(reps),
    )


def report_to_csv(report: TestReport) -> str:
    """报告输出为CSV文本。

    关键实现细节:
        α按(真实θ, 接受假设)每行一条，ESS按参数点每行一条；估计值与标准误成对，
        数值保留17位有效数字以保证无损往返。
    """

    buffer: io.StringIO = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["quantity", "param", "accepted", "estimate", "se"])
    if report.alpha is not None:
        for i, theta in enumerate(report.thetas):
            for j in range(report.alpha.shape[1]):
                se: Optional[float] = None if report.se_alpha is None else float(report.se_alpha[i, j])
                writer.writerow(["alpha", format_number(theta), j + 1, format_number(report.alpha[i, j]), format_number(se)])
    for p, param in enumerate(report.params):
        se_value: Optional[float] = None if report.se_ess is None else float(report.se_ess[p])
        writer.writerow(["ess", format_number(param), "", format_number(report.ess[p]), format_number(se_value)])
    if report.weighted_ess is not None:
        writer.writerow(["weighted_ess", "", "", format_number(report.weighted_ess), format_number(report.se_weighted_ess)])
    return buffer.getvalue()


def format_number(value: Optional[float]) -> str:
    """机器输出的数值格式：17位有效数字，缺失为空串。"""

    if value is None:
        return ""
    return format(float(value), ".17g")


def _to_json(array: Optional[FloatArray]) -> JsonValue:
    if array is None:
        return None
    return np.asarray(array, dtype=float).tolist()


def _from_json(value: JsonValue) -> Optional[FloatArray]:
    if value is None:
        return None
    return np.asarray(value, dtype=float)


def _required_array(data: JsonDict, key: str) -> FloatArray:
    array: Optional[FloatArray] = _from_json(data.get(key))
    if array is None:
        raise SpecError("报告缺少字段: " + key)
    return array
