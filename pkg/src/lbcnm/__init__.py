"""N:M fine-grained sparsity by learning the best weight combination per group."""

from .combinatorics import CombinationTable, enumerate_combinations, membership_sum
from .core import (LbcLayerState, RemovalSchedule, cumulative_removals, derive_mask, remove_candidates,
                   score_gradients, update_scores)
from .criteria import Criterion, combo_score
from .grouping import GroupView, gather, make_group_view, scatter
from .nmformat import FlopsModel, PackedNm, pack, spmm, train_flops_ratio, unpack
from .numerics import Network, SgdConfig, lr_at, mlp, sgd_step, small_conv
from .train import lbc_train, run_comparison

__version__ = "0.1.0"
