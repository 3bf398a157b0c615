"""环境变量覆盖配置。

该模块提供将环境变量（含.env文件）覆盖到显式运行配置上的辅助函数。
"""

from __future__ import annotations

import os

from dotenv import load_dotenv

from .config import RunConfig
from .errors import SpecError

ENV_PREFIX: str = "MULTISEQ_"


def apply_env_overrides(config: RunConfig) -> RunConfig:
    """使用环境变量覆盖配置。

    参数:
        config: 原始RunConfig配置对象。

    返回值:
        覆盖后的RunConfig配置对象。

    关键实现细节:
        先加载.env（不覆盖已存在的进程环境变量），仅在变量存在时覆盖字段。
    """

    load_dotenv()
    return RunConfig(
        threads=_override_int("THREADS", config.threads),
        seed=_override_int("SEED", config.seed),
        reps=_override_int("REPS", config.reps),
        cap=_override_int("CAP", config.cap),
        block_size=_override_int("BLOCK_SIZE", config.block_size),
        max_evals=_override_int("MAX_EVALS", config.max_evals),
        xtol=_override_float("XTOL", config.xtol),
        ftol=_override_float("FTOL", config.ftol),
        tolerance=_override_float("TOLERANCE", config.tolerance),
        grid_step=_override_float("GRID_STEP", config.grid_step),
        refine_tol=_override_float("REFINE_TOL", config.refine_tol),
        max_rounds=_override_int("MAX_ROUNDS", config.max_rounds),
        log_level=_override_str("LOG_LEVEL", config.log_level).upper(),
    )


def _override_int(env_key: str, default_value: int) -> int:
    """从环境变量读取整数覆盖值。

    参数:
        env_key: 不含前缀的变量名。
        default_value: 默认值。

    返回值:
        覆盖后的整数值。
    """

    raw: str | None = os.getenv(ENV_PREFIX + env_key)
    if raw is None:
        return default_value
    try:
        return int(raw)
    except ValueError as exc:
        raise SpecError(f"环境变量{ENV_PREFIX + env_key}必须为整数: {raw}") from exc


def _override_float(env_key: str, default_value: float) -> float:
    raw: str | None = os.getenv(ENV_PREFIX + env_key)
    if raw is None:
        return default_value
    try:
        return float(raw)
    except ValueError as exc:
        raise SpecError(f"环境变量{ENV_PREFIX + env_key}必须为实数: {raw}") from exc


def _override_str(env_key: str, default_value: str) -> str:
    """从环境变量读取字符串覆盖值，仅在变量存在且非空时覆盖。"""

    raw: str | None = os.getenv(ENV_PREFIX + env_key)
    if raw is None or raw.strip() == "":
        return default_value
    return raw.strip()
