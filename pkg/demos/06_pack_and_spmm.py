# # Packed storage and a skip-zero kernel
#
# Once every group keeps exactly N weights, the layer can be stored as the
# kept values plus a short slot index per value.

# In[1]:

import numpy as np

from lbcnm import pack, spmm, unpack
from lbcnm.combinatorics import enumerate_combinations
from lbcnm.grouping import make_group_view, scatter

rng = np.random.default_rng(0)
shape = (64, 256)
view = make_group_view(shape, 4)
table = enumerate_combinations(2, 4)
gmask = table.member[rng.integers(0, table.c, size=view.g)]
mask = scatter(view, gmask.astype(np.uint8))
w = np.where(mask == 1, rng.normal(size=shape), 0).astype(np.float32)

packed = pack(w, mask, view, 2, 4)
print("dense bytes :", w.nbytes)
print("packed bytes:", packed.nbytes(), f"({len(packed.values)} values + {len(packed.indices)} index bytes)")
print("lossless    :", unpack(packed).tobytes() == w.tobytes())


# The kernel touches kept weights only, so it performs half the
# multiply-accumulates of the dense product.

# In[2]:

x = rng.normal(size=(32, 256)).astype(np.float32)
y, macs = spmm(packed, x, return_macs=True)
ref = x @ w.T
print("MACs sparse/dense:", macs, "/", x.shape[0] * w.size)
print("relative error   :", float(np.linalg.norm(y - ref) / np.linalg.norm(ref)))
