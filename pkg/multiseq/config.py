"""配置定义。

该模块定义命令行与场景运行共用的运行配置RunConfig及其校验。
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SpecError

LOG_LEVELS: frozenset[str] = frozenset({"DEBUG", "INFO", "WARNING", "ERROR"})


@dataclass(frozen=True)
class RunConfig:
    """运行配置。

    参数:
        threads: 线程池大小。
        seed: 蒙特卡洛种子。
        reps: 每个参数点的蒙特卡洛重复次数。
        cap: 蒙特卡洛硬截断步数。
        block_size: 随机数块大小。
        max_evals: 单次校准的最大评估次数。
        xtol: 单纯形直径容差。
        ftol: 目标值离散度容差。
        tolerance: 校准的相对距离目标。
        grid_step: Kiefer–Weiss网格步长。
        refine_tol: 最大值点细化精度。
        max_rounds: Kiefer–Weiss不动点最大轮数。
        log_level: 日志级别。

    返回值:
        不直接返回，作为配置对象供命令行与场景使用。

    关键实现细节:
        所有字段均为必填，避免默认值掩盖错误配置。
    """

    threads: int
    seed: int
    reps: int
    cap: int
    block_size: int
    max_evals: int
    xtol: float
    ftol: float
    tolerance: float
    grid_step: float
    refine_tol: float
    max_rounds: int
    log_level: str


DEFAULT_RUN_CONFIG: RunConfig = RunConfig(
    threads=1,
    seed=20240101,
    reps=100000,
    cap=1000,
    block_size=10000,
    max_evals=400,
    xtol=1e-4,
    ftol=1e-5,
    tolerance=0.002,
    grid_step=0.002,
    refine_tol=1e-5,
    max_rounds=10,
    log_level="INFO",
)


def validate_run_config(config: RunConfig) -> None:
    """校验运行配置。

    参数:
        config: RunConfig配置对象。

    返回值:
        无。

    关键实现细节:
        任何非法字段都以SpecError报告，命令行映射为退出码3。
    """

    for name in ("threads", "reps", "cap", "block_size", "max_evals", "max_rounds"):
        if getattr(config, name) < 1:
            raise SpecError(name + "必须为正整数")
    if config.seed < 0:
        raise SpecError("seed必须为非负整数")
    for name in ("xtol", "ftol", "tolerance", "grid_step", "refine_tol"):
        if not getattr(config, name) > 0.0:
            raise SpecError(name + "必须为正数")
    if config.log_level not in LOG_LEVELS:
        raise SpecError("log_level必须为DEBUG、INFO、WARNING或ERROR")
