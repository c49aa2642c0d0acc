# %% [markdown]
# # Incremental family
# SVRG-style updates on the separable instance, one sampled component per
# round on each machine, averaged over 20 seeds.

# %%
from featround import bounds
from featround.blockview import equal_partition
from featround.hardfunc import make_inc_instance
from featround.solvers import incremental_expectation

inst = make_inc_instance(1.0, 9.0, 240, 2, 8)
summ = incremental_expectation(inst, equal_partition(240, 2), 1e-4, seeds=20)
lb = bounds.rounds_lb_inc(1.0, 9.0, 8, float(inst.wstar @ inst.wstar), 1e-4)
print(f"mean gap <= 1e-4 after {summ.rounds_to_eps} rounds; lower bound {lb:.1f}; "
      f"ratio {summ.rounds_to_eps / lb:.2f}")

# %%
per_pass = 3 * inst.per_machine
print("gap at pass ends:", [f"{g:.2e}" for g in summ.mean_gaps[::per_pass][:8]])
