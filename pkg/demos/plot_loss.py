"""
Detection-difficulty weighted loss
==================================

A batch with three large column boxes and one small row box. The rarer,
smaller category gets the larger weight.
"""

import numpy as np

from tabstruct.loss import (
    BatchClassStats,
    HardnessParams,
    class_hardness,
    class_weights,
    cost_sensitive_l1,
    cost_sensitive_l1_grad,
    smooth_l1,
)

# categories: 0 table, 1 column, 2 row, 3 spanning cell
stats = BatchClassStats.from_boxes([1, 1, 1, 2], [200, 150, 250, 60], [100, 150, 50, 40])
print("counts:", stats.counts, "mean sizes:", stats.mean_sizes)

hardness = class_hardness(stats, HardnessParams(lam=0.5))
weights = class_weights(hardness)
print("hardness:", hardness)
print("weights: ", weights.w)

# here count share and size share agree, so lambda does not matter;
# with many small rows it does
skewed = BatchClassStats.from_boxes([1, 2, 2, 2, 2], [300, 40, 40, 40, 40], [200, 20, 20, 20, 20])
for lam in (0.0, 0.5, 1.0):
    w = class_weights(class_hardness(skewed, HardnessParams(lam=lam))).w
    print(f"lambda={lam}: w_column={w[1]:.4f} w_row={w[2]:.4f}")

x = np.linspace(-3, 3, 7)
print("smooth L1 at", x, "->", smooth_l1(x, 1.0))

residuals = [np.zeros((0, 4)), np.full((3, 4), 0.5), np.full((1, 4), 2.0), np.zeros((0, 4))]
print("weighted regression loss:", cost_sensitive_l1(residuals, weights, 1.0))
print("gradient for the row residuals:", cost_sensitive_l1_grad(residuals, weights, 1.0)[2])
