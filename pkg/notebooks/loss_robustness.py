"""
How much corruption does each loss tolerate?
============================================

A three-seed version of the robustness study, read back from its CSV
tables, followed by plot-ready series for a small solver comparison.
"""

# %%
import tempfile
from pathlib import Path

from qprox import bench

out = Path(tempfile.mkdtemp())
cfg = bench.config_from_dict({"experiment": "loss-robustness", "seeds": [0, 1, 2]})
bench.run_loss_robustness(cfg, out / "robust")

# %%
for line in (out / "robust" / "table_rel_w_err.csv").read_text().splitlines():
    print(line)

# %%
cfg = bench.config_from_dict({"experiment": "solver-compare", "seeds": [0]})
bench.run_solver_comparison(cfg, out / "compare")
figs = bench.emit_plot_data(out / "compare" / "traces", out / "plots")
for fig, methods in figs.items():
    print(fig, sorted(methods))
