"""Attention on a four-point graph, first by the library, then by hand.

Node 0 listens to every node (itself included); the other three listen to
node 0 and themselves.  We run one three-head layer and compare against a
plain-python evaluation, then check that gradients from the tape agree with
finite differences.
"""

import math

import numpy as np

from beamgat.autodiff import Tape, Tensor
from beamgat.gat import ModelConfig, attention, gat_layer_forward
from beamgat.graph import from_adjacency

segments = [[0, 1, 2, 3], [1, 0], [2, 0], [3, 0]]
graph = from_adjacency(segments)
h = np.array([[1.0, 0.5], [0.0, 1.0], [2.0, -1.0], [-0.5, 0.5]])
W = [np.eye(2), np.array([[0.5, -1.0], [1.0, 0.5]]), np.array([[-1.0, 2.0], [0.0, 0.5]])]
a = [np.array([0.1, 0.2, 0.3, 0.4]), np.array([-0.5, 0.25, 1.0, 0.0]), np.array([0.3, -0.2, -0.1, 0.6])]

cfg = ModelConfig(layers=1, heads=3, head_width=2, dropout_rate=0.0, residual=False,
                  input_features=("a", "b"))
Wt, at = [Tensor(w) for w in W], [Tensor(v) for v in a]
_, alpha = attention(Tensor(h), graph, Wt, at)
print("attention weights received by node 0, per head:")
print(np.round(alpha.values[graph.offsets[0]:graph.offsets[1]], 4))

out = gat_layer_forward(Tensor(h), graph, Wt, at, cfg).values
print("layer output (4 nodes x 3 heads x 2 features):")
print(np.round(out, 4))

# the same thing with loops
i, k = 0, 1
proj = lambda v: W[k] @ v
scores = []
for j in segments[i]:
    s = a[k][:2] @ proj(h[i]) + a[k][2:] @ proj(h[j])
    scores.append(s if s > 0 else 0.2 * s)
w = [math.exp(s - max(scores)) for s in scores]
alpha_manual = [x / sum(w) for x in w]
agg = sum(al * proj(h[j]) for al, j in zip(alpha_manual, segments[i]))
manual = np.where(agg > 0, agg, np.expm1(agg))
print("node 0, head 1 by hand:", np.round(manual, 6), "library:", np.round(out[0, 2:4], 6))

# gradient of a scalar of the output with respect to the first head's W
with Tape() as tape:
    W0 = tape.watch(W[0])
    y = gat_layer_forward(Tensor(h), graph, [W0, Wt[1], Wt[2]], at, cfg)
    grad = tape.backward((y * y).sum())[W0.node_id].values


def f(w0):
    o = gat_layer_forward(Tensor(h), graph, [Tensor(w0), Wt[1], Wt[2]], at, cfg).values
    return float((o * o).sum())


fd = np.zeros_like(W[0])
for idx in np.ndindex(*W[0].shape):
    e = np.zeros_like(W[0])
    e[idx] = 1e-5
    fd[idx] = (f(W[0] + e) - f(W[0] - e)) / 2e-5
print("tape gradient:\n", np.round(grad, 6))
print("max difference from central differences:", float(np.max(np.abs(grad - fd))))
