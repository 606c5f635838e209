"""How capacity errors turn into forecast errors.

With similar inputs across grids, misallocating capacity barely changes the
aggregate; with very different inputs it matters. Also prints the sample-size
bound for a few accuracy targets.
"""

from solarboost import evalbench
from solarboost.synthgen import GenSpec

rows = evalbench.thm2_variance_experiment(
    GenSpec(T_blocks=20, repeat=24, process="kalman"), [0.05, 0.2], [0.05, 0.5, 1.0]
)
for r in rows:
    print(f"spread {r['input_spread']:<5} noise {r['noise']:<5} inflation {r['inflation']:.4f}")

for eps in (0.5, 1.0, 2.0):
    b = evalbench.thm1_sample_bound(K=10, sigma_c=0.1, M=1.0, r=1.0, epsilon=eps, C_t=5.0, sigma_f=0.5)
    print(f"epsilon {eps}: bound {'undefined' if b is None else f'{b:.3g}'}")
