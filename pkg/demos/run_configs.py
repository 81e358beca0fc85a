"""Run every shipped configuration through the command-line front end.

Each run writes report.json and series.csv under demos/out/<name>.  The
bad_ellipticity configuration is meant to be rejected with exit status 1.

Run: python demos/run_configs.py
"""

import re
from pathlib import Path

from hjbilab.cli import main

here = Path(__file__).resolve().parent
for cfg in sorted((here / "configs").glob("*.cfg")):
    task = re.search(r"^\[task\]\s*\nname\s*=\s*(\S+)", cfg.read_text(), re.M).group(1)
    print(f"== {cfg.name} ({task})", flush=True)
    status = main([task, "--config", str(cfg), "--out", str(here / "out" / cfg.stem)])
    print(f"   exit status {status}")
