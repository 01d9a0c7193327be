# %% [markdown]
# # Planning with a short window
#
# A random POMDP with a noisy-identity observation channel. We solve it
# exactly, then plan with windows of length 1 to 4 and look at how far the
# executed window policies fall behind the optimum.

# %%
from shortmem import gen
from shortmem.exactplan import solve_exact
from shortmem.observability import observability_report
from shortmem.smp import report_csv, smp_plan, suboptimality_report

pomdp = gen.gen_random_observable(S=3, A=2, H=6, gamma0=0.5, seed=11)
rep = observability_report(pomdp)
print(f"gamma = {rep.pomdp_gamma:.6f} (weak: {rep.weak_gamma:.6f})")

# %% [markdown]
# The optimum comes from a memoised search over exact beliefs.

# %%
v_star, pi_star = solve_exact(pomdp)
print(f"V* = {v_star:.6f} using {pi_star.num_nodes} belief nodes")

# %% [markdown]
# With the full window the planner reproduces the optimum.

# %%
full = smp_plan(pomdp, pomdp.horizon - 1)
print(f"L = H-1 estimate {full.value_estimate:.6f}")

# %% [markdown]
# Shorter windows: planner estimate, exact value of the executed policy, the
# gap to V*, and the belief-error bound 2 H^2 eps_hat.

# %%
rows = suboptimality_report(pomdp, [1, 2, 3, 4])
print(report_csv(rows))
