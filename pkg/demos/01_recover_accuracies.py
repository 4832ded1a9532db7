"""Fit Weaver on synthetic verifiers and compare recovered accuracies to truth.

Only 10% of queries carry labels, and those are used for the class prior alone.
"""
import numpy as np

from weaver import SynthSpec, fit_weaver, generate, split_dev

bundle = generate(SynthSpec(n=2000, K=10, m=10, prior=0.4, seed=0))
bundle = bundle.with_labels(split_dev(bundle, 0.10, seed=0))
model = fit_weaver(bundle)

truth_tpr = np.array(bundle.truth["tpr"])
truth_tnr = np.array(bundle.truth["tnr"])
print(f"prior  fitted {model.params.prior:.3f}  true 0.400")
print(f"{'verifier':>9} {'tpr':>6} {'true':>6} {'tnr':>6} {'true':>6}")
for j, k in enumerate(model.kept):
    print(f"{model.params.ids[j]:>9} {model.params.tpr[j]:6.3f} {truth_tpr[k]:6.3f} "
          f"{model.params.tnr[j]:6.3f} {truth_tnr[k]:6.3f}")
