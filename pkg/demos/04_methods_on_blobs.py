# # Every method on a small task
#
# Runs the full pipeline on Gaussian blobs through the CLI entry point and
# prints the aggregated table: accuracies, the gap to the re-trained model,
# re-learn time and residual knowledge.

# In[1]:

import json
import sys
import tempfile
from pathlib import Path

from unlearnlab.cli import main

config = Path(__file__).resolve().parents[1] / "configs" / "blobs_all_methods.ini"
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
main(["run", "--config", str(config), "--out", str(out)])

# In[2]:

report = json.loads((out / "report.json").read_text())
best = min((row["avg_gap"]["mean"], name) for name, row in report["rows"].items() if name != "retrain")
print("closest to re-training by Avg. Gap:", best[1], round(best[0], 2))
print("outputs in", out)
