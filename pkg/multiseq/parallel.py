"""并行执行句柄。

该模块提供按下标顺序映射任务的辅助函数：调用方传入的线程池负责并行，
未传入时串行执行，两种方式的结果顺序一致。
"""

from __future__ import annotations

from concurrent.futures import Executor
from typing import Callable, Iterable, List, Optional, TypeVar

_T = TypeVar("_T")
_R = TypeVar("_R")


def ordered_map(func: Callable[[_T], _R], items: Iterable[_T], executor: Optional[Executor]) -> List[_R]:
    """按输入顺序返回结果列表。"""

    if executor is None:
        return [func(item) for item in items]
    return list(executor.map(func, items))
