# %% [markdown]
# # Training the detectors
#
# A small field-profile batch (a quarter of the scenarios carry an attack)
# is cross-validated with each model kind, then the MLP's held-out scores
# are swept over the four detection margins.

# %%
import numpy as np

from gpsids import dataset as ds
from gpsids import detection as det

rows = ds.generate("field", 12, seed=3)
print(ds.balance(rows))

# %% five folds per model
results = {}
for kind in ("dt", "rf", "mlp", "lr"):
    cv = det.cross_validate(rows, det.ModelSpec(kind), k=5, seed=3)
    results[kind] = cv
    f1 = [round(m.f1, 4) for m in cv.metrics]
    print(f"{kind:>3}  mean F1 {cv.mean_f1:.4f}  folds {f1}")

# %% margins
cv = results["mlp"]
table = det.threshold_sweep(cv.scores[cv.labels == 0], cv.scores[cv.labels == 1])
for r in table:
    print(f"[{r.lo}, {r.hi}]  fp {r.normals_misclassified:4d} ({r.fp_rate:.4f})  "
          f"fn {r.attacks_misclassified:4d} ({r.fn_rate:.4f})")
best = det.best_margin(table)
print(f"chosen margin [{best.lo}, {best.hi}]")

# %% where the misses are
# most low-scored attack rows fall in the first seconds of jamming
t = np.array([r.timestamp for r in rows])
missed = t[(cv.labels == 1) & (cv.scores < best.hi)]
print("missed attack rows at t =", sorted(set(missed.tolist()))[:10])
