# %% [markdown]
# # The chain quadratic
# Build the strongly convex chain, look at its Hessian, and check that the
# minimizer decays geometrically with ratio q.

# %%
import numpy as np

from featround import eval_gradient, exact_minimizer, make_sc_instance

inst = make_sc_instance(lam=1.0, kappa=9.0, dim=6)
print(inst.dense_hessian())

# %%
mz = exact_minimizer(inst)
print("q =", mz.q)
print("w* =", mz.point)
print("|grad f(w*)| =", np.linalg.norm(eval_gradient(inst, mz.point)))

# %% [markdown]
# Spectrum sits inside [lambda, lambda * kappa]:

# %%
eig = np.linalg.eigvalsh(inst.dense_hessian())
print(f"min eig {eig.min():.4f}, max eig {eig.max():.4f}")

# %% [markdown]
# Large instances stay matrix-free.

# %%
big = make_sc_instance(1.0, 100.0, 100_000)
print("f* =", exact_minimizer(big).opt_value, " |w*|^2 =", exact_minimizer(big).norm_sq)
