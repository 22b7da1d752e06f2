"""
Learning one degree at a time
=============================

With n fixed (kappa2 = 2) the bias drops in steps as log(p)/log(d) crosses
each integer.  Pure theory, so this runs instantly.
"""

from rfrr.experiments import preset, run_config

for name, cfg in preset("fig_biasvar", count=13).items():
    print(name)
    for r in run_config(cfg)[::5]:
        bar = "#" * int(round(4 * r["theory_Rtest"]))
        print(f"  kappa1={r['sweep_value']:4.2f}  bias={r['theory_bias']:6.3f}  "
              f"var={r['theory_variance']:6.3f}  {bar}")
