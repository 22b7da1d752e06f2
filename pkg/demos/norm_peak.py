"""
Double descent and the norm of the ridge solution
=================================================

n is fixed at 1.25 d^2 and the number of features p sweeps through n.  The
test error and ||a||^2 / n both spike at p = n, and for p >> n the norm
settles on the kernel ridge regression value.
"""

from rfrr.experiments import preset, run_config

# the built-in preset at a fifth of its dimension (d = 20, n = 500)
cfg = preset("fig_norm", scale=0.2, count=9, trials=5)["main"]
rows = run_config(cfg)

print(f"{'p/n':>7} {'R_test th':>10} {'R_test emp':>11} {'norm th':>9} {'norm emp':>9} {'train emp':>10}")
for r in rows:
    print(f"{r['p'] / r['n']:7.2f} {r['theory_Rtest']:10.4f} {r['emp_Rtest_mean']:11.4f} "
          f"{r['theory_Lnorm']:9.4f} {r['emp_Lnorm_mean']:9.4f} {r['emp_Rtrain_mean']:10.2e}")

print("kernel ridge norm:", round(rows[-1]["theory_krr_Lnorm"], 4))
