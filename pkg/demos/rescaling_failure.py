"""Why rescaling by total capacity is not enough when capacity moves between grids.

Two grids with unit outputs 1 and 2. Capacity (1, 1) becomes (2, 0): the total is
unchanged, so rescaling predicts the old aggregate 3, while the true aggregate is 2.
A longer run then trains both predictors on a dataset where capacity shifts steadily
from one grid to the other.
"""

from solarboost import evalbench
from solarboost.core import HyperParams

scaled, true = evalbench.scaling_counterexample([1.0, 1.0], [2.0, 0.0], [1.0, 2.0])
print(f"rescaled prediction {scaled}, true aggregate {true}")

ds = evalbench.make_shift_dataset()
res = evalbench.observation2_experiment(ds, ds.T - 480, HyperParams(block_len=48))
print(f"shift dataset test RMSE: solarboost {res['solarboost_rmse']:.4f}, "
      f"rescaling {res['rescaling_rmse']:.4f}")
