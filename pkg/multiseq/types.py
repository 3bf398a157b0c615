"""类型定义。

该模块集中定义跨模块共享的类型别名，提升可读性与一致性。
"""

from typing import Dict, List, Tuple, Union

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]
ActionArray = npt.NDArray[np.int16]
Decision = Tuple[BoolArray, IntArray]
JsonValue = Union[None, bool, int, float, str, List["JsonValue"], Dict[str, "JsonValue"]]
JsonDict = Dict[str, JsonValue]
CurvePoint = Tuple[float, float, float]
Record = Dict[str, Union[int, float, str]]
