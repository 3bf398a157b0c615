"""观测过程模型。

该模块描述观测过程：逐步对数密度增量、充分统计量、抽样方式，
以及停止性质检验中使用的Hellinger亲和系数。
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math
from typing import Iterable, Optional

import numpy as np
from scipy.stats import norm

from .errors import DomainError, SpecError, UnsupportedModelError
from .types import FloatArray, JsonDict


class ModelKind(str, Enum):
    """模型类型。JSON中直接使用枚举值。"""

    BERNOULLI = "bernoulli"
    NORMAL = "normal"
    NORMAL_TREND = "normal_trend"
    GROUPED_NORMAL = "grouped_normal"


@dataclass(frozen=True)
class Model:
    """观测过程描述。

    参数:
        kind: 模型类型。
        group_size: 分组正态模型每组观测数m，其余模型必须为None。

    返回值:
        不直接返回，作为模型描述供密度与抽样函数使用。

    关键实现细节:
        所有正态模型方差固定为1；分组模型的一“步”是m个观测之和。
    """

    kind: ModelKind
    group_size: Optional[int]

    def __post_init__(self) -> None:
        if self.kind is ModelKind.GROUPED_NORMAL:
            if self.group_size is None or self.group_size < 1:
                raise SpecError("grouped_normal模型的group_size必须为正整数")
        elif self.group_size is not None:
            raise SpecError("仅grouped_normal模型可设置group_size")


@dataclass(frozen=True)
class SufficientState:
    """充分统计量状态。

    参数:
        n: 已观测步数。
        stat: Bernoulli为成功次数，正态类模型为加权累计和。
    """

    n: int
    stat: float


def bernoulli() -> Model:
    """构造Bernoulli模型。"""

    return Model(kind=ModelKind.BERNOULLI, group_size=None)


def validate_param(model: Model, theta: float) -> None:
    """校验参数是否在模型参数空间内。

    参数:
        model: 模型描述。
        theta: 参数值。

    返回值:
        无。

    关键实现细节:
        Bernoulli要求θ∈(0,1)，其余模型要求θ为有限实数。
    """

    if not math.isfinite(theta):
        raise DomainError("参数必须为有限实数: " + str(theta))
    if model.kind is ModelKind.BERNOULLI and not 0.0 < theta < 1.0:
        raise DomainError("Bernoulli参数必须位于(0,1): " + str(theta))


def observations_per_step(model: Model) -> int:
    """每一步包含的原始观测数。"""

    if model.kind is ModelKind.GROUPED_NORMAL:
        return int(model.group_size or 1)
    return 1


def log_density_increment(model: Model, theta: object, x: object, t: int) -> FloatArray:
    """计算第t步的对数密度增量。

    参数:
        model: 模型描述。
        theta: 参数值，可为数组，与x按numpy规则广播。
        x: 第t步观测值（分组模型为组内观测之和）。
        t: 步序号，从1开始。

    返回值:
        对数密度增量数组；标量输入返回0维数组。

    关键实现细节:
        Bernoulli使用计数测度下的逐序列密度 x·logθ+(1−x)·log(1−θ)，不含二项系数；
        趋势模型第t步均值为θ·t；分组模型的组和服从N(mθ, m)。
    """

    if t < 1:
        raise DomainError("步序号t必须从1开始")
    theta_arr: FloatArray = np.asarray(theta, dtype=float)
    x_arr: FloatArray = np.asarray(x, dtype=float)
    _check_support(model, x_arr)
    if model.kind is ModelKind.BERNOULLI:
        if not np.all((theta_arr > 0.0) & (theta_arr < 1.0)):
            raise DomainError("Bernoulli参数必须位于(0,1)")
        return np.where(x_arr == 1.0, np.log(theta_arr), np.log1p(-theta_arr))
    if model.kind is ModelKind.NORMAL:
        return norm.logpdf(x_arr, loc=theta_arr)
    if model.kind is ModelKind.NORMAL_TREND:
        return norm.logpdf(x_arr, loc=theta_arr * float(t))
    m: int = observations_per_step(model)
    return norm.logpdf(x_arr, loc=m * theta_arr, scale=math.sqrt(m))


def stat_increment(model: Model, x: object, t: int) -> FloatArray:
    """充分统计量的单步增量。

    关键实现细节:
        趋势模型的充分统计量为 Σ t·x_t，其余模型为观测累计和。
    """

    x_arr: FloatArray = np.asarray(x, dtype=float)
    if model.kind is ModelKind.NORMAL_TREND:
        return x_arr * float(t)
    return x_arr


def accumulate(model: Model, xs: Iterable[float]) -> SufficientState:
    """由观测序列累计充分统计量。"""

    n: int = 0
    stat: float = 0.0
    for x in xs:
        n += 1
        x_arr: FloatArray = np.asarray(x, dtype=float)
        _check_support(model, x_arr)
        stat += float(stat_increment(model, x_arr, n))
    return SufficientState(n=n, stat=stat)


def _check_support(model: Model, x_arr: FloatArray) -> None:
    if model.kind is ModelKind.BERNOULLI:
        if not np.all((x_arr == 0.0) | (x_arr == 1.0)):
            raise DomainError("Bernoulli观测必须为0或1")
    elif not np.all(np.isfinite(x_arr)):
        raise DomainError("正态观测必须为有限实数")


def bernoulli_loglik(thetas: object, n: int, s: object) -> FloatArray:
    """格点(n, s)上的Bernoulli逐序列对数似然。

    参数:
        thetas: 参数数组，长度为k。
        n: 步数。
        s: 成功次数，可为数组。

    返回值:
        形状为 s.shape + (k,) 的对数似然数组。

    关键实现细节:
        s·logθ + (n−s)·log(1−θ)，与逐步累加增量在浮点误差内一致。
    """

    theta_arr: FloatArray = np.asarray(thetas, dtype=float)
    s_arr: FloatArray = np.asarray(s, dtype=float)[..., None]
    return s_arr * np.log(theta_arr) + (n - s_arr) * np.log1p(-theta_arr)


def sample_step(
    model: Model,
    rng: np.random.Generator,
    theta: float,
    t: int,
    size: int,
) -> FloatArray:
    """抽取第t步的观测。

    参数:
        model: 模型描述。
        rng: numpy随机数生成器。
        theta: 生成数据的真实参数。
        t: 步序号。
        size: 抽样数量。

    返回值:
        长度为size的观测数组。

    关键实现细节:
        Bernoulli通过均匀数比较生成；正态类模型使用numpy的ziggurat标准正态抽样，
        同一种子在不同平台上可复现。
    """

    if model.kind is ModelKind.BERNOULLI:
        return (rng.random(size) < theta).astype(float)
    z: FloatArray = rng.standard_normal(size)
    if model.kind is ModelKind.NORMAL:
        return theta + z
    if model.kind is ModelKind.NORMAL_TREND:
        return theta * float(t) + z
    m: int = observations_per_step(model)
    return m * theta + math.sqrt(m) * z


def hellinger_affinity(model: Model, theta: float, vartheta: float) -> float:
    """计算Hellinger亲和系数 r = ∫(f_θ f_ϑ)^{1/2} dμ。

    参数:
        model: 模型描述，仅支持独立同分布模型。
        theta: 第一个参数。
        vartheta: 第二个参数。

    返回值:
        (0, 1] 内的实数，当且仅当θ=ϑ时等于1。

    关键实现细节:
        Bernoulli为 √(θϑ)+√((1−θ)(1−ϑ))；单位方差正态为 exp(−(θ−ϑ)²/8)。
    """

    if model.kind is ModelKind.BERNOULLI:
        validate_param(model, theta)
        validate_param(model, vartheta)
        return math.sqrt(theta * vartheta) + math.sqrt((1.0 - theta) * (1.0 - vartheta))
    if model.kind is ModelKind.NORMAL:
        return math.exp(-((theta - vartheta) ** 2) / 8.0)
    raise UnsupportedModelError("Hellinger亲和系数仅适用于独立同分布模型: " + model.kind.value)


def model_to_dict(model: Model) -> JsonDict:
    """模型序列化为JSON字典。"""

    data: JsonDict = {"kind": model.kind.value}
    if model.group_size is not None:
        data["group_size"] = model.group_size
    return data


def model_from_dict(data: object) -> Model:
    """从JSON字典构造模型。

    关键实现细节:
        拒绝未知字段与未知模型类型。
    """

    if not isinstance(data, dict):
        raise SpecError("model必须为JSON对象")
    unknown: set[str] = set(data) - {"kind", "group_size"}
    if unknown:
        raise SpecError("model含未知字段: " + ", ".join(sorted(unknown)))
    try:
        kind: ModelKind = ModelKind(data.get("kind"))
    except ValueError as exc:
        raise SpecError("未知模型类型: " + str(data.get("kind"))) from exc
    group_size: object = data.get("group_size")
    if group_size is not None and (isinstance(group_size, bool) or not isinstance(group_size, int)):
        raise SpecError("group_size必须为整数")
    return Model(kind=kind, group_size=group_size)
