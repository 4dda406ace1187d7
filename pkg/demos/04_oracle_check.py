# # Checking the learned choice against brute force
#
# On a least-squares problem whose generator uses two of every four inputs,
# there are only 36 joint masks for two groups. The oracle evaluates all of
# them, refitting the surviving weights each time.

# In[1]:

import numpy as np

from lbcnm import SgdConfig, lbc_train, mlp
from lbcnm.data import planted_linear
from lbcnm.oracle import LinearProblem, assignment_from_state, exhaustive_best, rank_of

hits = 0
for seed in range(5):
    data = planted_linear(seed=seed, groups=2, support="random", samples=200)
    net = mlp([8, 1], dtype=np.float64, bias=False).init(np.random.default_rng(seed), scale=0.1)
    res = lbc_train(net, data, SgdConfig(0.05, 0.0, 0.0, 1, 40), 2, 4, (0, 20), seed=seed)
    chosen = assignment_from_state(res.states[0])
    problem = LinearProblem(net.layers[0].weight, data.x_train, data.y_train, 2, 4)
    best, table = exhaustive_best(problem)
    pct = rank_of(chosen, table)
    hits += chosen == best
    print(f"seed {seed}: planted {data.meta['support'][0]}  learned {chosen}  oracle {best}  percentile {pct:.2f}")
print(f"{hits}/5 runs found the oracle optimum")


# Plain SGD is used here on purpose. With heavy momentum the weights
# oscillate, and the integrated score drifts against the weights that move
# the most, which are the ones that matter.
