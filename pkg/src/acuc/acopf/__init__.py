"""Per-period AC optimal power flow: branch flows, the NLP and its interior-point solver."""
from .flows import balance_residual, branch_flows, line_flows
from .ipm import IpmOptions, IpmResult, solve_nlp
from .problem import AcOpfNlp, AcOpfProblem, acopf_derivatives, build_acopf_problem
from .solve import AcOpfResult, solve_acopf

__all__ = [
    "AcOpfNlp", "AcOpfProblem", "AcOpfResult", "IpmOptions", "IpmResult", "acopf_derivatives",
    "balance_residual", "branch_flows", "build_acopf_problem", "line_flows", "solve_acopf",
    "solve_nlp",
]
