# Running configured experiments and a manifest through the harness.
import tempfile

from wiener_ot.harness import default_manifest, run, suite

root = tempfile.mkdtemp()
rec = run({"kind": "talagrand", "preset": "scale:2", "dim": 1, "n": 2048}, root=root)
print(rec.config_hash, rec.exit_code, rec.payload["report"]["verdict"])
print("written to", rec.directory)

# swapping the two sides turns a strict inequality into a failure
bad = run({"kind": "talagrand", "preset": "scale:2", "dim": 1, "n": 2048, "fixture": "swap-sides"}, write=False)
print("swapped exit code", bad.exit_code)

summary = suite(default_manifest(), root=root)
print(summary.table())
