"""
One update, three methods
=========================

SUM keeps two vectors, the iterate ``x`` and an auxiliary point ``ys``, and a
single scalar ``s`` decides which classical method it behaves like.
"""

import numpy as np

from sumlab import SUMConfig, SUMState, method_s, step_unified
from sumlab.core import step_sg, step_shb

# %%
# A fixed stream of gradients, shared by every method below.
rng = np.random.default_rng(0)
grads = rng.normal(size=(50, 3))
x0 = np.ones(3)
alpha, beta = 0.05, 0.9

# %%
# ``s = 0`` is heavy-ball momentum.  Run the unified update next to the
# textbook recursion ``x' = x - alpha g + beta (x - x_prev)``.
cfg = SUMConfig(alpha=alpha, beta=beta, s=method_s("shb", beta))
state, x, x_prev = SUMState.initial(x0), x0, x0
for g in grads:
    state = step_unified(state, g, cfg)
    x, x_prev = step_shb(x, x_prev, g, alpha, beta), x
print("heavy-ball gap:", np.max(np.abs(state.x - x)))

# %%
# ``s = 1/(1 - beta)`` turns the momentum term off and leaves plain SGD with
# the larger step ``alpha / (1 - beta)``.
cfg = SUMConfig.for_method("sg", alpha, beta)
state, x = SUMState.initial(x0), x0
for g in grads:
    state = step_unified(state, g, cfg)
    x = step_sg(x, g, alpha / (1 - beta))
print("plain SGD gap:", np.max(np.abs(state.x - x)))

# %%
# The same identities, checked along a real stochastic run on two problems:
#
#     sumlab equiv-check
