"""Selection@1 of Weaver against the unsupervised and oracle baselines."""
import warnings

import numpy as np

from weaver import SynthSpec, WeakSupervisionWarning, generate, split_dev
from weaver.evaluation import pass_at_k, success_rate
from weaver.strategies import make_strategy

warnings.simplefilter("ignore", WeakSupervisionWarning)

acc = tuple(np.linspace(0.55, 0.95, 5))
bundle = generate(SynthSpec(n=1000, K=32, m=5, prior=0.1, tpr=acc, tnr=acc, seed=3))
bundle = bundle.with_labels(split_dev(bundle, 0.05, seed=3))

for name in ("first", "majority", "naive", "naive_bayes", "logreg", "weaver", "oracle"):
    rate = success_rate(make_strategy(name)(bundle), bundle.y)
    print(f"{name:>12}  {rate:.3f}")
print(f"{'pass@32':>12}  {pass_at_k(bundle.y, 32):.3f}")
