"""命令行入口。

该模块把规格校验、精确评估、最优检验、校准、模拟、Kiefer–Weiss设计、
双侧包装与场景复现组织为子命令；人类可读表格写到标准输出，
机器输出写到--out，全部诊断信息写到标准错误。
"""

from __future__ import annotations

import argparse
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import replace
import json
import logging
import math
from pathlib import Path
import sys
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .bernoulli_exact import LatticePolicy, backward_optimal, dbc_lattice, evaluate, policy_to_dict
from .classic import TwoSidedReport, two_sided_curve, two_sided_wrap, uniform_msprt
from .config import DEFAULT_RUN_CONFIG, RunConfig, validate_run_config
from .core import DbcRule, StopPolicy, TestSpec, load_spec, spec_to_dict
from .env_override import apply_env_overrides
from .errors import MultiseqError
from .fit import CalibrationResult, CalibrationTarget, Evaluator, calibrate, exact_evaluator, mc_evaluator, row_ties
from .fit import TieGroups, symmetric_row_ties
from .kiefer_weiss import KWDesign, kw_check, kw_fixed_point
from .montecarlo import SimConfig, simulate, simulate_spec
from .report import TestReport, format_number, report_to_csv, report_to_dict
from .scenarios import SCENARIOS, ComparisonTable, comparison_to_csv, comparison_to_dict, format_comparison
from .scenarios import KW_HORIZON, run_scenario
from .types import CurvePoint, JsonDict, JsonValue

logger = logging.getLogger(__name__)

EXIT_OK: int = 0
EXIT_TOLERANCE: int = 1
EXIT_USAGE: int = 2
EXIT_CONFIG: int = 3
OUTPUT_SCHEMA: int = 1

Handler = Callable[[argparse.Namespace, RunConfig, Executor], int]


class UsageError(Exception):
    """命令行用法错误，映射为退出码2。"""


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令行主函数。

    参数:
        argv: 参数列表，None时读取sys.argv。

    返回值:
        退出码：0成功，1容差未通过，2用法错误，3配置/规格错误。

    关键实现细节:
        配置优先级为内置默认值 < 环境变量（含.env） < 显式命令行参数；
        全部并行计算共用同一个线程池。
    """

    parser: argparse.ArgumentParser = build_parser()
    try:
        args: argparse.Namespace = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        config: RunConfig = resolve_config(args)
    except MultiseqError as exc:
        _configure_logging("WARNING")
        logger.error("配置错误: %s", exc)
        return EXIT_CONFIG
    _configure_logging(_log_level(args, config))
    handler: Handler = args.handler
    try:
        with ThreadPoolExecutor(max_workers=config.threads) as executor:
            return handler(args, config, executor)
    except UsageError as exc:
        logger.error("用法错误: %s", exc)
        return EXIT_USAGE
    except (MultiseqError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    """构造参数解析器；通用参数在每个子命令上都可用。"""

    common: argparse.ArgumentParser = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="规格JSON文件路径")
    common.add_argument("--out", help="机器输出文件路径")
    common.add_argument("--format", choices=("json", "csv"), help="机器输出格式")
    common.add_argument("--threads", type=int, help="线程池大小")
    common.add_argument("--seed", type=int, help="蒙特卡洛种子")
    common.add_argument("--reps", type=int, help="蒙特卡洛重复次数")
    common.add_argument("--cap", type=int, help="无界规格的蒙特卡洛截断步数")
    common.add_argument("--block-size", type=int, help="随机数块大小")
    common.add_argument("--max-evals", type=int, help="校准最大评估次数")
    common.add_argument("--tolerance", "--tol", dest="tolerance", type=float, help="校准相对距离目标")
    common.add_argument("--xtol", type=float, help="单纯形直径容差")
    common.add_argument("--ftol", type=float, help="目标值离散度容差")
    common.add_argument("--grid-step", type=float, help="ESS最大值搜索网格步长")
    common.add_argument("--refine-tol", type=float, help="最大值点细化精度")
    common.add_argument("--max-rounds", type=int, help="Kiefer–Weiss不动点最大轮数")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="输出DEBUG日志")
    verbosity.add_argument("--quiet", action="store_true", help="仅输出WARNING及以上日志")

    parser: argparse.ArgumentParser = argparse.ArgumentParser(
        prog="multiseq",
        description="序贯多假设检验工具：DBC检验、最优检验、校准、模拟与场景复现",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    validate_parser = commands.add_parser("validate", parents=[common], help="校验规格文件")
    validate_parser.set_defaults(handler=_cmd_validate)

    evaluate_parser = commands.add_parser("evaluate", parents=[common], help="DBC检验的精确评估（Bernoulli）")
    evaluate_parser.add_argument("--horizon", type=int, help="格点视界，默认取规格的有效视界")
    evaluate_parser.add_argument("--param", type=float, action="append", default=[], help="附加ESS参数点")
    evaluate_parser.add_argument("--policy-out", help="格点策略JSON输出路径")
    evaluate_parser.set_defaults(handler=_cmd_evaluate)

    optimal_parser = commands.add_parser("optimal", parents=[common], help="逆向归纳构造截断最优检验")
    optimal_parser.add_argument("--horizon", type=int, help="截断视界，默认取规格的有效视界")
    optimal_parser.add_argument("--param", type=float, action="append", default=[], help="附加ESS参数点")
    optimal_parser.add_argument("--policy-out", help="格点策略JSON输出路径")
    optimal_parser.set_defaults(handler=_cmd_optimal)

    calibrate_parser = commands.add_parser("calibrate", parents=[common], help="按错误概率目标校准λ")
    calibrate_parser.add_argument(
        "--target-alpha",
        "--alpha",
        dest="target_alpha",
        type=float,
        nargs="+",
        required=True,
        help="各假设的αᵢ目标，nan表示不约束",
    )
    calibrate_parser.add_argument(
        "--evaluator",
        choices=("exact", "mc", "dbc", "optimal"),
        default="exact",
        help="评估方式：exact为精确格点评估，mc为蒙特卡洛；dbc/optimal等同于exact加--kind",
    )
    calibrate_parser.add_argument("--kind", choices=("dbc", "optimal"), help="exact评估使用的策略，默认dbc")
    ties = calibrate_parser.add_mutually_exclusive_group()
    ties.add_argument("--symmetric", action="store_true", help="施加λᵢ = λ_(k+1−i)约束")
    ties.add_argument("--tie", metavar="GROUPS", help="按行共享λ的分组，下标从0开始，如 0,2;1")
    calibrate_parser.add_argument("--horizon", type=int, help="精确评估视界")
    calibrate_parser.set_defaults(handler=_cmd_calibrate)

    simulate_parser = commands.add_parser("simulate", parents=[common], help="蒙特卡洛模拟")
    simulate_parser.add_argument("--rule", choices=("dbc", "msprt"), default="dbc", help="停止规则")
    simulate_parser.add_argument("--log-threshold", type=float, help="MSPRT统一阈值log A")
    simulate_parser.add_argument("--true-theta", type=float, help="仅在该真实参数下模拟")
    simulate_parser.add_argument("--param", type=float, action="append", default=[], help="附加参数点")
    simulate_parser.set_defaults(handler=_cmd_simulate)

    kw_parser = commands.add_parser("kw", parents=[common], help="Kiefer–Weiss设计或直接核验")
    kw_parser.add_argument("--kind", choices=("dbc", "optimal"), default="dbc", help="直接核验时使用的策略")
    kw_parser.add_argument("--thetas", type=float, nargs="+", help="不动点迭代的假设参数")
    kw_parser.add_argument("--lambda-init", type=float, nargs="+", help="不动点迭代的初始λᵢ")
    kw_parser.add_argument("--alpha-targets", "--alpha", dest="alpha_targets", type=float, nargs="+", help="不动点迭代的αᵢ目标")
    kw_parser.add_argument("--symmetric", action="store_true", help="施加对称约束")
    kw_parser.add_argument("--horizon", type=int, help="截断视界，不动点迭代默认1000，直接核验默认取规格的有效视界")
    kw_parser.set_defaults(handler=_cmd_kw)

    twosided_parser = commands.add_parser("twosided", parents=[common], help="三假设检验包装为双侧检验")
    twosided_parser.add_argument("--kind", choices=("dbc", "optimal"), default="dbc", help="三假设检验类型")
    twosided_parser.add_argument("--null-index", "--null", dest="null_index", type=int, default=2, help="原假设编号（从1开始）")
    twosided_parser.add_argument("--grid", type=float, nargs="+", default=[], help="OC/ESS曲线的参数网格")
    twosided_parser.add_argument("--horizon", type=int, help="截断视界，默认取规格的有效视界")
    twosided_parser.set_defaults(handler=_cmd_twosided)

    scenario_parser = commands.add_parser("scenario", parents=[common], help="场景复现")
    scenario_parser.add_argument("action", choices=("run", "list"), help="run执行场景，list列出场景")
    scenario_parser.add_argument("scenario_id", nargs="?", help="场景标识")
    scenario_parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="覆盖参数，值按JSON解析")
    scenario_parser.set_defaults(handler=_cmd_scenario)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """合并默认值、环境变量与命令行参数并校验。"""

    config: RunConfig = apply_env_overrides(DEFAULT_RUN_CONFIG)
    flags: Dict[str, object] = {
        "threads": args.threads,
        "seed": args.seed,
        "reps": args.reps,
        "cap": args.cap,
        "block_size": args.block_size,
        "max_evals": args.max_evals,
        "tolerance": args.tolerance,
        "xtol": args.xtol,
        "ftol": args.ftol,
        "grid_step": args.grid_step,
        "refine_tol": args.refine_tol,
        "max_rounds": args.max_rounds,
    }
    config = replace(config, **{name: value for name, value in flags.items() if value is not None})
    validate_run_config(config)
    return config


def _cmd_validate(args: argparse.Namespace, config: RunConfig, executor: Executor) -> int:
    spec: TestSpec = _load_config_spec(args)
    horizon: str = str(spec.horizon) if spec.horizon is not None else f"unbounded (safety_cap={spec.safety_cap})"
    human: str = f"规格有效: model={spec.model.kind.value} k={spec.k} K={spec.big_k} horizon={horizon}"
    document: JsonDict = {"schema": OUTPUT_SCHEMA, "valid": True, "spec": spec_to_dict(spec)}
    _emit(args, human, document, None)
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace, config: RunConfig, executor: Executor) -> int:
    spec: TestSpec = _load_config_spec(args)
    horizon: int = args.horizon if args.horizon is not None else spec.effective_horizon
    policy: LatticePolicy = dbc_lattice(spec, horizon)
    report: TestReport = evaluate(policy, spec, args.param)
    _write_policy(args, policy)
    _emit(args, format_report(report), report_to_dict(report), report_to_csv(report))
    return EXIT_OK


def _cmd_optimal(args: argparse.Namespace, config: RunConfig, executor: Executor) -> int:
    spec: TestSpec = _load_config_spec(args)
    horizon: int = args.horizon if args.horizon is not None else spec.effective_horizon
    policy, minimal = backward_optimal(spec, horizon)
    report: TestReport = evaluate(policy, spec, args.param)
    _write_policy(args, policy)
    document: JsonDict = {"schema": OUTPUT_SCHEMA, "minimal_lagrangian": minimal, "report": report_to_dict(report)}
    human: str = format_report(report) + f"\n最小拉格朗日函数值: {minimal:.4f}"
    _emit(args, human, document, report_to_csv(report))
    return EXIT_OK


def _cmd_calibrate(args: argparse.Namespace, config: RunConfig, executor: Executor) -> int:
    template: TestSpec = _load_config_spec(args)
    if len(args.target_alpha) != template.k:
        raise UsageError(f"--target-alpha需要{template.k}个值")
    ties: TieGroups
    if args.symmetric:
        ties = symmetric_row_ties(template.k)
    elif args.tie is not None:
        ties = row_ties(parse_tie_groups(args.tie), template.k)
    else:
        ties = row_ties([[i] for i in range(template.k)], template.k)
    target: CalibrationTarget = CalibrationTarget(
        targets=np.asarray(args.target_alpha, dtype=float),
        tolerance=config.tolerance,
        ties=ties,
    )
    evaluator: Evaluator
    if args.evaluator == "mc":
        if args.kind == "optimal":
            raise UsageError("蒙特卡洛评估只支持DBC检验")
        evaluator = mc_evaluator(
            reps=config.reps,
            seed=config.seed,
            cap=_simulation_cap(template, config),
            block_size=config.block_size,
            executor=executor,
        )
    else:
        evaluator = exact_evaluator(_exact_kind(args), args.horizon)
    result: CalibrationResult = calibrate(
        template,
        target,
        evaluator,
        max_evals=config.max_evals,
        xtol=config.xtol,
        ftol=config.ftol,
    )
    document: JsonDict = {
        "schema": OUTPUT_SCHEMA,
        "converged": result.converged,
        "distance": result.distance,
        "evaluations": result.evaluations,
        "history": list(result.history),
        "spec": spec_to_dict(result.spec),
        "report": report_to_dict(result.report),
    }
    lambdas: str = np.array2string(result.spec.lambda_matrix, precision=4)
    human: str = "\n".join([
        f"校准{'收敛' if result.converged else '未收敛'}: 相对距离 {result.distance:.4g}，评估 {result.evaluations} 次",
        "λ =",
        lambdas,
        format_report(result.report),
    ])
    _emit(args, human, document, report_to_csv(result.report))
    return EXIT_OK if result.converged else EXIT_TOLERANCE


def _cmd_simulate(args: argparse.Namespace, config: RunConfig, executor: Executor) -> int:
    spec: TestSpec = _load_config_spec(args)
    rule: StopPolicy
    if args.rule == "msprt":
        if args.log_threshold is None:
            raise UsageError("--rule msprt需要--log-threshold")
        rule = uniform_msprt(spec.k, args.log_threshold)
    else:
        rule = DbcRule(spec)
    cap: int = _simulation_cap(spec, config)
    report: TestReport
    if args.true_theta is not None:
        report = simulate(
            SimConfig(
                spec=spec,
                rule=rule,
                reps=config.reps,
                seed=config.seed,
                cap=cap,
                true_param=args.true_theta,
                block_size=config.block_size,
            ),
            executor,
        )
    else:
        report = simulate_spec(
            spec,
            rule,
            reps=config.reps,
            seed=config.seed,
            cap=cap,
            block_size=config.block_size,
            extra_params=args.param,
            executor=executor,
        )
    _emit(args, format_report(report), report_to_dict(report), report_to_csv(report))
    return EXIT_OK


def _cmd_kw(args: argparse.Namespace, config: RunConfig, executor: Executor) -> int:
    design: KWDesign
    if args.thetas is not None:
        if args.lambda_init is None or args.alpha_targets is None:
            raise UsageError("不动点迭代需要--thetas、--lambda-init与--alpha-targets")
        design = kw_fixed_point(
            thetas=args.thetas,
            lambda_init=args.lambda_init,
            symmetric=args.symmetric,
            alpha_targets=args.alpha_targets,
            tolerance=config.tolerance,
            horizon=args.horizon if args.horizon is not None else KW_HORIZON,
            grid_step=config.grid_step,
            refine_tol=config.refine_tol,
            max_rounds=config.max_rounds,
            max_evals=config.max_evals,
            xtol=config.xtol,
            ftol=config.ftol,
            executor=executor,
        )
    else:
        spec: TestSpec = _load_config_spec(args)
        horizon: int = args.horizon if args.horizon is not None else spec.effective_horizon
        design = kw_check(spec, horizon, args.kind, config.grid_step, config.refine_tol, executor)
    document: JsonDict = {
        "schema": OUTPUT_SCHEMA,
        "converged": design.converged,
        "rounds": design.rounds,
        "worst_points": list(design.worst_points),
        "max_ess": design.max_ess,
        "fixed_point_gap": design.fixed_point_gap,
        "spec": spec_to_dict(design.spec),
        "report": report_to_dict(design.report),
    }
    points: str = ", ".join(f"{point:.4f}" for point in design.worst_points)
    human: str = "\n".join([
        f"最大ESS {design.max_ess:.2f}，位于 θ = {points}",
        f"ϑ与最大值点的最大距离 {design.fixed_point_gap:.2e}，迭代 {design.rounds} 轮",
        format_report(design.report),
    ])
    _emit(args, human, document, report_to_csv(design.report))
    return EXIT_OK if design.converged else EXIT_TOLERANCE


def _cmd_twosided(args: argparse.Namespace, config: RunConfig, executor: Executor) -> int:
    spec: TestSpec = _load_config_spec(args)
    horizon: int = args.horizon if args.horizon is not None else spec.effective_horizon
    null_index: int = args.null_index - 1
    policy: LatticePolicy
    if args.kind == "optimal":
        policy, _ = backward_optimal(spec, horizon)
    else:
        policy = dbc_lattice(spec, horizon)
    report: TestReport = evaluate(policy, spec, args.grid)
    errors: TwoSidedReport = two_sided_wrap(report, null_index)
    curve: List[CurvePoint] = two_sided_curve(policy, args.grid, null_index) if args.grid else []
    document: JsonDict = {
        "schema": OUTPUT_SCHEMA,
        "alpha": errors.alpha,
        "beta_lower": errors.beta_lower,
        "beta_upper": errors.beta_upper,
        "curve": [{"theta": theta, "oc": oc, "ess": ess} for theta, oc, ess in curve],
    }
    lines: List[str] = [
        f"α = {errors.alpha:.4f}  β(下侧) = {errors.beta_lower:.4f}  β(上侧) = {errors.beta_upper:.4f}",
    ]
    if curve:
        lines.append(f"{'θ':>6}  {'OC':>6}  {'ESS':>7}")
        lines.extend(f"{theta:>6.2f}  {oc:>6.3f}  {ess:>7.2f}" for theta, oc, ess in curve)
    csv_text: str = "theta,oc,ess\n" + "".join(
        f"{format_number(theta)},{format_number(oc)},{format_number(ess)}\n" for theta, oc, ess in curve
    )
    _emit(args, "\n".join(lines), document, csv_text)
    return EXIT_OK


def _cmd_scenario(args: argparse.Namespace, config: RunConfig, executor: Executor) -> int:
    if args.action == "list":
        lines: List[str] = [f"{scenario_id:<16}{scenario.title}" for scenario_id, scenario in SCENARIOS.items()]
        _emit(args, "\n".join(lines), {"schema": OUTPUT_SCHEMA, "scenarios": sorted(SCENARIOS)}, None)
        return EXIT_OK
    if args.scenario_id is None:
        raise UsageError("scenario run需要场景标识")
    overrides: Dict[str, object] = dict(_parse_override(item) for item in args.set)
    table: ComparisonTable = run_scenario(args.scenario_id, overrides, config, executor)
    _emit(args, format_comparison(table), comparison_to_dict(table), comparison_to_csv(table))
    return EXIT_OK if table.passed else EXIT_TOLERANCE


def format_report(report: TestReport) -> str:
    """人类可读的报告表格，精度与已发表结果一致（2到4位）。"""

    k: int = report.accept.shape[1]
    header: str = f"{'θ':>10}  {'ESS':>9}  " + "  ".join(f"{'P(H' + str(j + 1) + ')':>8}" for j in range(k))
    lines: List[str] = [header]
    for p, param in enumerate(report.params):
        ess: str = f"{report.ess[p]:>9.2f}"
        if report.se_ess is not None:
            ess += f" ({report.se_ess[p]:.4f})"
        probabilities: str = "  ".join(f"{value:>8.4f}" for value in report.accept[p])
        lines.append(f"{param:>10.4g}  {ess}  {probabilities}")
    if report.alpha_i is not None:
        lines.append("αᵢ = " + ", ".join(f"{value:.4g}" for value in report.alpha_i))
    if report.weighted_ess is not None:
        weighted: str = f"加权ESS = {report.weighted_ess:.2f}"
        if report.se_weighted_ess is not None:
            weighted += f" ({report.se_weighted_ess:.4f})"
        lines.append(weighted)
    if report.cap_hits is not None and np.any(report.cap_hits > 0.0):
        lines.append("触达截断上限比例: " + ", ".join(f"{value:.2e}" for value in report.cap_hits))
    return "\n".join(lines)


def _emit(args: argparse.Namespace, human: str, document: JsonDict, csv_text: Optional[str]) -> None:
    """--out给出时写机器输出并打印表格；仅给出--format时把机器输出写到标准输出。"""

    if args.out is None and args.format is None:
        print(human)
        return
    output_format: str = args.format or "json"
    if output_format == "csv" and csv_text is None:
        raise UsageError("该命令不支持CSV输出")
    text: str = csv_text if output_format == "csv" and csv_text is not None else _dump_json(document)
    if args.out is None:
        sys.stdout.write(text)
        return
    Path(args.out).write_text(text, encoding="utf-8")
    print(human)
    logger.info("wrote %s output to %s", output_format, args.out)


def _dump_json(document: JsonDict) -> str:
    return json.dumps(_json_safe(document), ensure_ascii=False, indent=2) + "\n"


def _json_safe(value: object) -> JsonValue:
    """非有限浮点数写为null，保持JSON严格合法。"""

    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(key): _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value  # type: ignore[return-value]


def _write_policy(args: argparse.Namespace, policy: LatticePolicy) -> None:
    if args.policy_out is None:
        return
    Path(args.policy_out).write_text(json.dumps(policy_to_dict(policy)) + "\n", encoding="utf-8")
    logger.info("wrote lattice policy (N=%d) to %s", policy.horizon, args.policy_out)


def _load_config_spec(args: argparse.Namespace) -> TestSpec:
    if args.config is None:
        raise UsageError(args.command + "需要--config")
    return load_spec(args.config)


def _simulation_cap(spec: TestSpec, config: RunConfig) -> int:
    """有界规格模拟到其视界，无界规格模拟到运行配置的cap。"""

    return spec.horizon if spec.horizon is not None else config.cap


def parse_tie_groups(text: str) -> List[List[int]]:
    """解析--tie分组，如 "0,2;1" 得到 [[0, 2], [1]]；分号分组，逗号分隔组内下标。"""

    groups: List[List[int]] = []
    for chunk in text.split(";"):
        if chunk.strip() == "":
            raise UsageError("--tie含空分组: " + text)
        try:
            groups.append([int(item) for item in chunk.split(",")])
        except ValueError as exc:
            raise UsageError("--tie格式应为 0,2;1: " + text) from exc
    return groups


def _exact_kind(args: argparse.Namespace) -> str:
    """--evaluator dbc/optimal是exact加--kind的旧写法，两者冲突时报用法错误。"""

    if args.evaluator in ("dbc", "optimal"):
        if args.kind is not None and args.kind != args.evaluator:
            raise UsageError(f"--evaluator {args.evaluator}与--kind {args.kind}冲突")
        return args.evaluator
    return args.kind or "dbc"


def _parse_override(item: str) -> tuple[str, object]:
    key, separator, raw = item.partition("=")
    if separator == "" or key.strip() == "":
        raise UsageError("--set格式应为KEY=VALUE: " + item)
    try:
        return key.strip(), json.loads(raw)
    except json.JSONDecodeError:
        return key.strip(), raw


def _log_level(args: argparse.Namespace, config: RunConfig) -> str:
    if args.verbose:
        return "DEBUG"
    if args.quiet:
        return "WARNING"
    return config.log_level


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


if __name__ == "__main__":
    sys.exit(main())
