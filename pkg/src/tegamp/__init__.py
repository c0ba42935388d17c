"""Message-passing solvers for low-rank tensor completion and decomposition.

Two iterative solvers over factored tensor models — a tensor-ring engine
(``solver``) and a lighter CP engine (``cp_solver``) — plus alternating
minimization baselines, an experiment harness, and a CLI.
"""

__version__ = "0.1.0"
