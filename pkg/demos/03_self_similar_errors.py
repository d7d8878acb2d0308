"""Errors against the exact shrinking ellipsoid on three coarse meshes.

A quick version of converge-space: short final time and coarse levels, so
the rates are only indicative.  The full study is the acceptance run.
"""
from wulff_flow.harness import RunConfig, cmd_converge_space

cfg = RunConfig(density="ellipsoidal:1,0.25,0.25", kinetic="inverse_gamma",
                geometry={"type": "ellipsoid", "eps": 0.5}, degree=2, order=2, T=0.05)
rows = cmd_converge_space(cfg, [1, 2, 3], 1e-4, "demos_out/self_similar")
for r in rows:
    rate = f"  EOC {r.eoc['X_H1']:.2f}" if "X_H1" in r.eoc else ""
    print(f"level {r.label}: h={r.h:.4f}  max H1 error of X={r.maxima['X_H1']:.3e}{rate}")
