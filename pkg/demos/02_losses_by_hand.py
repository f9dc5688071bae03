"""
The loss terms on tiny inputs
=============================

Each term of the composite objective, evaluated on inputs small enough to
verify by hand.
"""

import math

import torch

from rgfsnet.losses import LossWeights, PassBundle, proto_loss, recon_loss, total_loss, triplet_loss, variance_loss


def t(x):
    return torch.tensor(x, dtype=torch.float64)


# Prototypical loss: a query exactly between two prototypes has probability
# 1/2 for each class, so its negative log-probability is ln 2.
b = PassBundle(t([[[0.0, 0.0]]]), t([[[1.0, 0.0], [-1.0, 0.0]]]), torch.tensor([0]))
print("proto, equidistant:", float(proto_loss(b)), "vs ln 2 =", math.log(2))

# Triplet loss with margin 1.5: positive at squared distance 1, the nearest
# wrong prototype at 2, a farther one at 9. The hinge gives 1.5 + 1 - 2.
b = PassBundle(t([[[0.0, 0.0]]]), t([[[1.0, 0.0], [0.0, math.sqrt(2)], [3.0, 0.0]]]), torch.tensor([0]))
print("triplet:", float(triplet_loss(b, margin=1.5)))

# Variance loss: the true-class probability is 0.4 in one pass and 0.6 in
# the other, so the population standard deviation is 0.1.
protos = [[[math.sqrt(1.0 - math.log(p / (1 - p)))], [1.0]] for p in (0.4, 0.6)]
b = PassBundle(t([[[0.0]], [[0.0]]]), t(protos), torch.tensor([0]))
print("true-class probabilities per pass:", b.true_class_probs[:, 0].tolist())
print("variance:", float(variance_loss(b)))

# Reconstruction: a 2x2 image predicted as all 0.5, with the top row masked.
# Masked mean error 0.25 plus global mean error 0.5.
x = t([[[[1.0], [0.0]], [[0.0], [1.0]]]])
mask = t([[[1.0, 1.0], [0.0, 0.0]]])
print("recon:", float(recon_loss(x, torch.full((1, 1, 2, 2, 1), 0.5, dtype=torch.float64), mask)))

# The weighted total with alpha 0.01, beta 1 and lambda 5.
report = total_loss(proto=0.0489, variance=0.1, triplet=0.5, recon=0.75, weights=LossWeights())
print(report)
print("identity holds:", report.check_identity(LossWeights()))
