# # The cubic removal schedule
#
# Candidates are not all dropped at once. Between epochs t_i and t_f the
# cumulative count follows a cubic curve: many removals early, few late.

# In[1]:

from lbcnm import enumerate_combinations
from lbcnm.core import RemovalSchedule, clamped_removals

for n, m in [(2, 4), (2, 8), (1, 16)]:
    c = enumerate_combinations(n, m).c
    sched = RemovalSchedule(t_i=0, t_f=10, c=c)
    counts = [c - clamped_removals(sched, t) for t in range(13)]
    print(f"{n}:{m}  C={c:3d}  alive per epoch: {counts}")


# A zero-length window removes everything at t_i, which gives one-shot
# selection followed by plain sparse training.

# In[2]:

sched = RemovalSchedule(t_i=2, t_f=2, c=6)
print([6 - clamped_removals(sched, t) for t in range(5)])
