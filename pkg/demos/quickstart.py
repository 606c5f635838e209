"""Generate a small AR dataset, train SolarBoost and two baselines, compare test RMSE.

Run with ``python3 demos/quickstart.py``; takes about a minute.
"""

from solarboost import evalbench
from solarboost.core import HyperParams
from solarboost.synthgen import GenSpec

spec = GenSpec(T_blocks=60, repeat=48, K=8, process="ar1", seed=0)
train, test = evalbench.train_test(spec, test_blocks=5)
print(f"train {train.T} steps, test {test.T} steps, {spec.K} grids")

hyper = HyperParams(n_rounds=300, block_len=spec.repeat)
results = evalbench.compare_methods(train, test, hyper)

print(f"{'method':<14}{'aggregate':>12}{'capacity':>12}")
for name, m in results.items():
    cap = m.get("capacity_rmse")
    print(f"{name:<14}{m['aggregate_rmse']:>12.4f}{'' if cap is None else f'{cap:>12.4f}'}")
