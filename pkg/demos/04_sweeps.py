# %% [markdown]
# # Round-count sweeps
# AGD rounds grow like sqrt(kappa); GD rounds grow like kappa.  On the
# smooth convex chain AGD rounds grow like eps^(-1/2).

# %%
from featround.bounds import run_sweep

for solver in ("dist-agd", "dist-cg", "dist-gd"):
    rep = run_sweep("kappa", [4, 16, 64, 256], solver, eps=1e-6)
    print(solver, [(r.axis_value, r.rounds, round(r.ratio, 2)) for r in rep.rows],
          f"R2 vs sqrt(kappa) = {rep.fit_r2:.4f}")

# %%
rep = run_sweep("eps", [1e-2, 1e-3, 1e-4, 1e-5], "dist-agd", kind="nsc", smoothness=4.0)
print([(r.axis_value, r.rounds, r.dim) for r in rep.rows])
print(f"log-log slope {rep.fit_slope:.3f}")
