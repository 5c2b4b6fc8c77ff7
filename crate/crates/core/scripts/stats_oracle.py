"""Regenerates tests/fixtures/stats_oracle.json from scipy."""
import json
import pathlib

import numpy as np
from scipy import stats

rng = np.random.default_rng(20240611)
cases = []
for k in range(100):
    na, nb = rng.integers(2, 40, size=2)
    a = rng.normal(rng.normal(0, 1), rng.uniform(0.1, 3), size=na)
    b = rng.normal(rng.normal(0, 1), rng.uniform(0.1, 3), size=nb)
    if k % 3 == 0:
        # coarse rounding produces ties
        a, b = np.round(a, 0), np.round(b, 0)
    # keep both samples non-constant so every statistic is defined
    if np.ptp(a) == 0:
        a[0] += 1.0
    if np.ptp(b) == 0:
        b[0] += 1.0
    w = stats.ttest_ind(a, b, equal_var=False)
    o = stats.ttest_1samp(a, 0.0)
    u = stats.mannwhitneyu(a, b, alternative="two-sided", use_continuity=True, method="asymptotic")
    cases.append({
        "a": a.tolist(),
        "b": b.tolist(),
        "welch": {"t": float(w.statistic), "p": float(w.pvalue), "df": float(w.df)},
        "oneSample": {"t": float(o.statistic), "p": float(o.pvalue)},
        "mannWhitney": {"uA": float(u.statistic), "p": float(u.pvalue)},
    })

out = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "stats_oracle.json"
out.write_text(json.dumps(cases, indent=1) + "\n")
print(f"wrote {len(cases)} cases to {out}")
