from .problem import SdpProblem, SdpSolution, TermChunk, problem_digest  # noqa: F401
from .solver import solve  # noqa: F401
from .verify import (  # noqa: F401
    FeasibilityReport,
    certified_upper_bound,
    check_feasibility,
    dual_slack_blocks,
)
