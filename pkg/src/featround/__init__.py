"""Feature-partitioned distributed optimization: worst-case instances,
a bulk-synchronous round engine with audited feasible sets, in-class
solvers and communication-round lower bounds."""

from .hardfunc import (
    IncSeparableInstance,
    Minimizer,
    NscChainInstance,
    ScChainInstance,
    eval_gradient,
    eval_objective,
    exact_minimizer,
    instance_from_dict,
    make_inc_instance,
    make_nsc_instance,
    make_sc_instance,
    optimal_value,
)

__version__ = "0.1.0"
