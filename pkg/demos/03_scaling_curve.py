"""Fit the bounded selection curve to a noisy best-of-K sweep and extrapolate."""
import numpy as np

from weaver.scaling import CurvePoint, ScalingFit, fit_selection_curve, holdout_split, predict, prediction_mse

truth = ScalingFit(0.3958, 0.6728, 0.7320, 1.5865, 0.3250, 0.5053)
rng = np.random.default_rng(0)
ks = [1, 2, 4, 8, 12, 16, 24, 32, 48, 64, 80, 100]
points = [CurvePoint(k, float(predict(truth, k) + rng.normal(0, 0.004))) for k in ks]

train, test = holdout_split(points, 0.75)
fit = fit_selection_curve(train)
print(f"fit on K<={train[-1].k}: floor {fit.floor:.3f} ceil {fit.ceil:.3f} "
      f"zeta {fit.zeta:.3f} alpha {fit.alpha:.3f} huber delta {fit.delta:g}")
print(f"held-out MSE {prediction_mse(fit, test):.2e}")
for p in test:
    print(f"K={p.k:>3}  observed {p.value:.3f}  predicted {float(predict(fit, p.k)):.3f}")
