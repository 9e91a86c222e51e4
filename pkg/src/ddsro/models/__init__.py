"""Problem representation, example builders and comparator solvers."""

from .problem import CompactProblem, ProblemError
from .motivating import build_motivating_example, gen_synthetic_motivating
from .comparators import (ComparatorError, SCENARIO_CAP, solve_box_aro, solve_deterministic,
                          solve_scenario_sp)
