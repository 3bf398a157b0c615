"""异常定义。

该模块集中定义工具包对外抛出的异常类型，统一继承自 MultiseqError，
同时保留 ValueError 等内置基类，便于调用方按习惯捕获。
"""

from __future__ import annotations


class MultiseqError(Exception):
    """工具包异常基类。"""


class SpecError(MultiseqError, ValueError):
    """检验规格错误。

    关键实现细节:
        维度不匹配、权重不归一、非平凡性条件不满足、JSON含未知字段等均归入此类，
        命令行入口将其映射为退出码3。
    """


class DomainError(MultiseqError, ValueError):
    """观测值或参数超出模型定义域。"""


class UnsupportedModelError(MultiseqError, ValueError):
    """当前模型类型不支持该操作。"""


class UndefinedStateError(MultiseqError, ArithmeticError):
    """状态无定义（例如所有密度均为零时的后验概率）。"""


class InvalidPolicyError(MultiseqError, ValueError):
    """格点策略无效（例如末行未全部停止、视界不匹配）。"""


class OptimizationError(MultiseqError, ValueError):
    """优化无法开始或无法给出结果（例如初始点目标值非有限、报告缺少αᵢ）。"""
