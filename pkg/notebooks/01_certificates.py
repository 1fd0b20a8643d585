# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Certificates for nested splittings
#
# A certificate pairs an operator sequence with projections `P_n` and
# constants `(D, lambda)`. `certify` probes the decay estimates over a finite
# window and records a margin for each check, so a failure comes with the
# vector and times that broke it.

# %%
import math

import numpy as np

import dicholin as dl

# %% [markdown]
# ## Stable dimension that jumps
#
# Before time 0 the system splits the plane into a contracting and an
# expanding axis; from time 0 on both axes contract. The stable subspace
# grows from a line to the plane, so it is carried into itself without
# being carried onto itself.

# %%
dimx = dl.make_dimension_exchange()
print("passed:", dimx.cert.passed, " D =", dimx.cert.D, " lambda =", dimx.cert.lam)
for name, check in dimx.cert.report.checks.items():
    print(f"  {name:<22} margin {check.margin:+.3e}")
print("ranks of P_n for n = -3..3:", [dimx.proj.rank(n) for n in range(-3, 4)])

# %% [markdown]
# The second axis at time 0 has an orbit that stays bounded in both
# directions of time. A classical splitting forbids that, which is why only
# the nested notion applies here.

# %%
w = dl.check_full_orbit_bounded(dimx.seq, np.array([0.0, 1.0]), (-30, 30), 1.0 + 1e-12)
print("bounded:", w.bounded, " sup norm:", w.max_norm)

# %% [markdown]
# ## Asking for too much
#
# Doubling the rate breaks the forward estimate, and the report names the
# failing checks.

# %%
greedy = dl.certify(dimx.seq, dimx.proj, (-20, 20), 1.0, 2 * math.log(2))
print("passed:", greedy.passed, " failing checks:", greedy.report.failures())

# %% [markdown]
# `fit_constants` scans a rate grid and keeps the fastest rate whose
# constant stays finite over the sampled lags.

# %%
print(dl.fit_constants(dimx.seq, dimx.proj, (-20, 20), [0.3, 0.5, math.log(2), 0.8]))

# %% [markdown]
# ## Weighted shift on two-sided sequences
#
# Weights 1/2 up to index 0 and 2 afterwards. The shift sends the unit
# vector at index 1 (unstable at time 0) to twice the unit vector at index 0,
# which is stable at time 1.

# %%
shift = dl.make_weighted_shift(dl.ShiftSpec.two_sided(0.5, 2.0))
print("passed:", shift.cert.passed, " lambda =", shift.cert.lam)
print("S(delta_1) =", shift.seq[0].apply(dl.BiSeq.delta(1)))

# %% [markdown]
# ## A connector between letters
#
# Two shift letters share the half-line splitting. An unweighted shift `U`
# inserted between them keeps the splitting nested but contracts nothing on
# its own step, so the certified constants are `lambda = ln 2 / 2` and
# `D = sqrt(2)` instead of the letters' own `(1, ln 2)`.

# %%
letters = [
    dl.WeightedShift(lambda n: 0.5 if n <= 0 else 2.0, (0.5, 2.0)),
    dl.WeightedShift(lambda n: 1 / 3 if n <= 0 else 3.0, (1 / 3, 3.0)),
]
fam = dl.make_family_switch(
    dl.FamilySpec(
        letters,
        [math.log(2), math.log(3)],
        dl.IndexProjections.half_line(0.0),
        [0, "U", 1, "U"],
        U=dl.WeightedShift(lambda n: 1.0, (1.0, 1.0), name="U"),
    )
)
print("lambda =", fam.cert.lam, " D =", fam.cert.D)
naive = dl.certify(fam.seq, fam.proj, (-20, 20), 1.0, math.log(2))
print("unit constant with rate ln 2 passes?", naive.passed)
