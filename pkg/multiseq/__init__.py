"""序贯多假设检验包入口。

该包提供检验规格、DBC与最优检验、精确与蒙特卡洛评估、校准及场景复现，
供外部直接导入使用。
"""

from .bernoulli_exact import LatticePolicy, backward_optimal, brute_force_oracle, dbc_lattice, evaluate
from .classic import MsprtRule, SprtRule, TwoSprtRule, calibrate_msprt, two_sided_wrap
from .config import DEFAULT_RUN_CONFIG, RunConfig
from .core import DbcRule, TestSpec, dbc_verdict, load_spec, make_spec
from .env_override import apply_env_overrides
from .errors import MultiseqError, SpecError
from .fit import CalibrationTarget, calibrate
from .kiefer_weiss import kw_check, kw_fixed_point
from .montecarlo import SimConfig, simulate, simulate_spec
from .report import TestReport
from .scenarios import ScenarioRunner, run_scenario

__all__ = [
	"TestSpec",
	"make_spec",
	"load_spec",
	"DbcRule",
	"dbc_verdict",
	"LatticePolicy",
	"dbc_lattice",
	"evaluate",
	"backward_optimal",
	"brute_force_oracle",
	"SimConfig",
	"simulate",
	"simulate_spec",
	"CalibrationTarget",
	"calibrate",
	"SprtRule",
	"TwoSprtRule",
	"MsprtRule",
	"calibrate_msprt",
	"two_sided_wrap",
	"kw_check",
	"kw_fixed_point",
	"TestReport",
	"ScenarioRunner",
	"run_scenario",
	"RunConfig",
	"DEFAULT_RUN_CONFIG",
	"apply_env_overrides",
	"MultiseqError",
	"SpecError",
]
