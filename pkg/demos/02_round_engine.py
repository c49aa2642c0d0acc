# %% [markdown]
# # Rounds, collectives and the feasible-set audit
# One machine pair, one round by hand.

# %%
import numpy as np

from featround.blockview import BlockVector, block_gradient, make_partition
from featround.bspsim import Engine, gradient_at
from featround.hardfunc import make_sc_instance

inst = make_sc_instance(1.0, 9.0, 6)
part = make_partition(6, [3, 3])
eng = Engine(inst, part, n=4)

# %%
eng.begin_round()
total = eng.reduce_all([np.array([1.0, 0, 0, 0]), np.array([0, 2.0, 0, 0])])
print("ReduceAll result:", total)

g0 = block_gradient(inst, part, 0, np.zeros(6)).values
print("machine 0 gradient step:", eng.add(0, -0.1 * g0, [gradient_at({})]))

# %% [markdown]
# Machine 1 has nothing in its span yet, so a jump to the first coordinate
# of its block is refused.

# %%
print("machine 1 jump:", eng.add(1, np.array([1.0, 0, 0]), [gradient_at({0: 0, 1: 0})]))

# %%
eng.broadcast(0, BlockVector(0, -0.1 * g0))
log = eng.finalize_round()
print(log)
print("support frontiers:", eng.frontiers())
