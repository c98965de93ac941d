#!/usr/bin/env python3
"""Demo pipeline: generate the default suite, then run the protocol and two experiments."""
import subprocess
import sys

STEPS = [
    ("gen", "configs/gen.json"),
    ("bench", "configs/bench_protocol.json"),
    ("bench", "configs/bench_num_runs.json"),
    ("bench", "configs/bench_lmc.json"),
]

print("♻️  Starting the RecycleLab demo...")
try:
    for subcommand, config in STEPS:
        subprocess.run([sys.executable, "app.py", subcommand, "--config", config], check=True)
    print("\n✅ Demo finished; CSVs are under out/")
except subprocess.CalledProcessError as e:
    print(f"\n❌ step failed with exit code {e.returncode}")
    sys.exit(e.returncode)
except KeyboardInterrupt:
    print("\n👋 Interrupted")
