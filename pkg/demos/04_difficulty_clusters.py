"""Per-difficulty label models versus one global model.

Difficulty uses oracle labels, so this is an analysis of where a single
set of accuracies falls short rather than a deployable selector.  The synthetic verifiers here have the
same accuracy at every difficulty, so expect the clustered and global numbers
to match; a gap only appears on data where verifier quality drifts with
difficulty.
"""
import warnings

from weaver import SynthSpec, WeakSupervisionWarning, fit_weaver, generate, split_dev
from weaver.clustering import compute_difficulty, fit_per_cluster, partition
from weaver.evaluation import success_rate

warnings.simplefilter("ignore", WeakSupervisionWarning)

bundle = generate(SynthSpec(n=1200, K=16, m=6, beta=(0.7, 0.7), score_mode="continuous", seed=1))
bundle = bundle.with_labels(split_dev(bundle, 0.2, seed=1))
print(f"one model      {success_rate(fit_weaver(bundle).select(bundle), bundle.y):.3f}")

part = partition(compute_difficulty(bundle), 3)
for mode in ("global", "per_cluster", "per_model"):
    clustered = fit_per_cluster(bundle, part, mode)
    priors = ", ".join(f"{cf.params.prior:.2f}" for cf in clustered.clusters)
    print(f"3 clusters {mode:<12} {success_rate(clustered.select(bundle), bundle.y):.3f}  priors [{priors}]")
