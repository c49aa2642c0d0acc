# %% [markdown]
# # In-class solvers against the gap bounds
# GD, AGD and CG on the chain with kappa = 9, d = 200, four machines.
# The tail bound holds for all of them.  The closed-form exponential bound
# is crossed by CG a few rounds in.

# %%
from featround import bounds
from featround.blockview import equal_partition
from featround.hardfunc import make_sc_instance
from featround.solvers import dist_agd, dist_cg, dist_gd

inst = make_sc_instance(1.0, 9.0, 200)
part = equal_partition(200, 4)
ns = float(inst.wstar @ inst.wstar)
runs = {f.__name__: f(inst, part, 1e-10) for f in (dist_gd, dist_agd, dist_cg)}

# %%
for name, tr in runs.items():
    print(f"{name:9s} rounds={tr.rounds_to_eps:4d} valid={tr.valid} "
          f"envelope={'ok' if bounds.check_trace_envelope(tr, 200) is None else 'broken'}")

# %%
print(" k   cg gap      closed form  tail bound")
for r in runs["dist_cg"].rows[:14]:
    tail = bounds.gap_tail_sc(1.0, 9.0, 200, r.round)
    print(f"{r.round:2d}  {r.gap:.3e}  {bounds.gap_lb_sc(1.0, 9.0, ns, r.round):.3e}    {tail:.3e}")
