"""序贯多假设检验工具入口。

该模块提供对外统一入口，转发至包内实现；直接执行时运行命令行。
"""

import sys

from multiseq import (
	DEFAULT_RUN_CONFIG,
	DbcRule,
	RunConfig,
	ScenarioRunner,
	TestSpec,
	apply_env_overrides,
	calibrate,
	evaluate,
	load_spec,
	run_scenario,
	simulate_spec,
)
from multiseq.cli import main

__all__ = [
	"TestSpec",
	"load_spec",
	"DbcRule",
	"evaluate",
	"simulate_spec",
	"calibrate",
	"ScenarioRunner",
	"run_scenario",
	"RunConfig",
	"DEFAULT_RUN_CONFIG",
	"apply_env_overrides",
	"main",
]

if __name__ == "__main__":
	sys.exit(main())
