# %% [markdown]
# # SAT formulas as POMDPs
#
# Two reductions turn a CNF formula into a planning problem whose optimal
# value certifies satisfiability.

# %%
from shortmem import gen
from shortmem.exactplan import solve_exact

sat = gen.CnfFormula(2, [(1, 2), (-1, 2)])
unsat = gen.CnfFormula(1, [(1,), (-1,)])

for name, f in (("satisfiable", sat), ("unsatisfiable", unsat)):
    v, _ = solve_exact(gen.gen_hadamard_sat(f))
    print(f"hadamard, {name}: V* = {v:.6f}")

# %% [markdown]
# The noisy-observation reduction repeats a clause-checking trial T times.
# For an unsatisfiable formula each trial fails with a probability bounded
# below, so the value is bounded above.

# %%
sat4 = gen.CnfFormula(4, [(1, -2, 3), (-1, 4)])
p = gen.gen_sat_hard(sat4, gen.SatHardParams(0.25, trial_count=3))
print("sat-hard, satisfiable:", solve_exact(p)[0])

p = gen.gen_sat_hard(unsat, gen.SatHardParams(0.25, trial_count=6))
v, _ = solve_exact(p)
print(f"sat-hard, unsatisfiable: V* = {v:.6f} <= bound {p.metadata['unsat_value_bound']:.6f}")

# %% [markdown]
# Default trial counts grow quickly with the number of variables.

# %%
r = gen.resolve_sat_params(4, gen.SatHardParams(0.25))
print("default trial count for n = 4, gamma = 0.25:", r.default_trial_count)
