"""Triple difference, event study and placebo on a synthetic stacked panel.

    python3 demos/triple_difference.py
"""
import numpy as np

from hetpanel import DgpConfig, EventConfig, ddd_effect, estimate_ddd, estimate_event_study, generate_ddd_panel, run_placebo

data, treated = generate_ddd_panel(DgpConfig(N=60, delta=-0.438, effect_start=1, seed=3))
print(f"{data.n_rows} rows, regions {list(data.regions)}, {len(treated)} treated fields")

cfg = EventConfig()
for est, trend in (("ols", False), ("ols", True), ("ppml", False), ("tobit", False)):
    b, se = ddd_effect(estimate_ddd(data, treated, cfg, est, trend=trend))
    print(f"{est:5s} trend={trend!s:5s}  {cfg.triple_term} = {b:+.3f} ({se:.3f})")

es = estimate_event_study(data, treated, EventConfig(time_fe=False, trend=False), "ppml")
stat, df, p = es.pretrend_wald()
print(f"\npre-trend Wald: stat {stat:.1f} on {df} df, p = {p:.3f}")
frame = es.plot_frame()
print(frame[frame["s"].isin([-20, -10, -1, 1, 10, 20])].round(3).to_string(index=False))

dist = run_placebo(data, treated, EventConfig(trend=False), R=100, seed=0)
lo, hi = dist.band()
print(f"\nplacebo: mean {dist.estimates.mean():+.4f}, 99% band [{lo:.3f}, {hi:.3f}], actual {dist.actual:+.3f}, p = {dist.p_value:.3f}")
print("histogram counts:", np.histogram(dist.estimates, bins=10)[0].tolist())
