# # Candidate subsets and the masks they induce
#
# A 2:4 group keeps two of its four weights. There are six ways to do that,
# and each way is a candidate. Every group carries one score per candidate.

# In[1]:

import numpy as np

from lbcnm import enumerate_combinations
from lbcnm.core import LbcLayerState, RemovalSchedule, remove_candidates

table = enumerate_combinations(2, 4)
for i, combo in enumerate(table.combos):
    print(i, combo.tolist())


# A weight stays in the mask as long as at least one surviving candidate
# contains it. With every candidate alive the mask is dense.

# In[2]:

state = LbcLayerState(g=3, table=table)
print(state.mask)


# Give the three groups different scores and remove the two lowest-scored
# candidates per group. The masks stay dense: every slot is still covered.

# In[3]:

state.scores = np.array([
    [0.9, 0.1, 0.8, 0.2, 0.7, 0.3],
    [0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
    [0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
])
sched = RemovalSchedule(t_i=0, t_f=10, c=table.c)
remove_candidates(state, table, sched, t=1)
print(state.alive.astype(int))
print(state.mask)


# At the end of the window one candidate per group is left and each mask row
# keeps exactly two weights.

# In[4]:

remove_candidates(state, table, sched, t=10)
for g in range(state.g):
    print(g, table.combos[state.alive[g]][0].tolist(), state.mask[g])
