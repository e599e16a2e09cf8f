"""splineplan: compile lattice/spline pairs into branch-free evaluation plans.

The pipeline: exact geometry and polynomial analysis of a piecewise-polynomial
basis on an integer lattice, lowering to a serialized branch-free plan with
consolidated linear fetches, plus an interpreter, a brute-force reference
evaluator, and CLI harnesses (convergence study, volume raycaster).
"""

__version__ = "0.1.0"
