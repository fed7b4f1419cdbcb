"""Markets with proportional transaction costs on finite scenario trees.

Bid-ask processes, no-arbitrage tests by linear programming, vector expected
utility maximization and the price processes read off its solutions.
"""
__version__ = "0.1.0"

from .scenario_tree import ScenarioTree, generate_random_tree
from .market_cones import BidAskProcess, shrink_spreads
from .lp_core import LinearProgram, solve_lp
from .arbitrage import check_na, check_nar, find_price_process
from .utility import UtilitySpec
from .pareto import solve_scalarized, is_pareto_maximal
from .pricing import price_from_maximizer, strict_pipeline

__all__ = [
    "ScenarioTree", "generate_random_tree", "BidAskProcess", "shrink_spreads",
    "LinearProgram", "solve_lp", "check_na", "check_nar", "find_price_process",
    "UtilitySpec", "solve_scalarized", "is_pareto_maximal", "price_from_maximizer",
    "strict_pipeline",
]
