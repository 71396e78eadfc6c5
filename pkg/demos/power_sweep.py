"""A reduced delta sweep on the two-dimensional linear scenario (R=40 for speed)."""

import sys

from ctate.harness import paper_table_configs, run_power_study

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 40
for cfg in paper_table_configs("sim3", reps=reps, methods=("proposed", "t")):
    table = run_power_study(cfg)
    cells = "  ".join(f"{m}={table.power(m).p_hat:.2f}±{table.power(m).se:.2f}" for m in cfg.methods)
    print(f"{cfg.label:<16} {cells}")
