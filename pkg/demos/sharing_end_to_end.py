"""Run the bundled happy-path scenario, dump its artifacts, then audit them offline.

Run: python demos/sharing_end_to_end.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

from emrshare.artifacts import inspect_dir, verify_dir, write_artifacts
from emrshare.scenario import load_scenario
from emrshare.workflow import run_scenario

root = Path(__file__).resolve().parent.parent
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="emrshare-"))

result = run_scenario(load_scenario(root / "scenarios" / "happy_path.toml"))
print("what happened:")
for line in result.outcomes:
    print("  ", line)

write_artifacts(result, out)
print(f"\nartifacts in {out}")
report = verify_dir(out)
print("offline verification exit code:", report.code)
for line in report.lines:
    print("  ", line)

print("\nthe researcher's trail, across cloud and contract:")
for line in inspect_dir(out, "logs", actor="researcher"):
    print("  ", line)
