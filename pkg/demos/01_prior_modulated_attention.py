"""
Prior-modulated attention on a toy sequence
===========================================

A human-attention prior multiplies the raw attention scores before the
softmax. This walks through one small example in both apply modes.
"""

import numpy as np

from humattn.attention import AttentionPrior, attend, prior_modulated_attention, scaled_dot_attention
from humattn.numcore import Tensor

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(0)

# three queries attend over four keys; the last key is padding
Q = Tensor(rng.normal(size=(3, 2)))
K = Tensor(rng.normal(size=(4, 2)))
V = Tensor(np.eye(4)[:, :2])
mask = np.array([True, True, True, False])

out, w = attend(Q, K, V, key_mask=mask)
print("plain attention weights\n", w.data)

# %%
# A prior that emphasises key 1. With per_key application every query row sees
# the same re-weighting of the keys; padding keeps weight exactly zero.
# The prior multiplies scores, so it amplifies whatever sign a score has:
# key 1 gains weight in rows where its raw score is positive (row 0) and
# loses weight where it is negative (row 1). The other keys' scores shrink
# toward 0, which flattens the row.
alpha = AttentionPrior(Tensor(np.array([0.1, 0.8, 0.1, 0.0])), "sum_to_one", "per_key", mask)
out, w = attend(Q, K, V, key_mask=mask, prior=alpha)
print("per_key prior weights\n", w.data)

# %%
# mean_one rescales the same prior so that its unmasked entries average 1.
# Scores are multiplied by 3x larger factors, so the softmax sharpens.
out, w = attend(Q, K, V, key_mask=mask, prior=alpha.renormalized("mean_one"))
print("per_key, mean_one\n", w.data)

# %%
# per_query scales whole query rows. Row order inside each row is kept, only
# the temperature changes, so the argmax per row never moves.
q_alpha = AttentionPrior(Tensor(np.array([3.0, 1.0, 0.01])), "mean_one", "per_query")
out, w = attend(Q, Q, Q, prior=q_alpha)
print("per_query weights\n", w.data)

# %%
# A uniform mean_one prior is the identity: outputs match plain attention bit for bit.
unit = AttentionPrior.uniform(mask, "mean_one")
a = scaled_dot_attention(Q, K, V, key_mask=mask)
b = prior_modulated_attention(Q, K, V, unit, key_mask=mask)
print("unit prior identical:", np.array_equal(a.data, b.data))
