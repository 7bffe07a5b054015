"""The same workflow from the command line.

Every subcommand is also callable in-process through ``cli.main``; from a
shell the equivalent is ``hmmdrop fit --input ... --schema ... --k 2``.
"""
from __future__ import annotations

import json
import tempfile
from pathlib import Path

from hmmdrop import cli
from hmmdrop.panel import to_long_csv
from hmmdrop.simulate import default_scenario, generate_panel

work = Path(tempfile.mkdtemp())
to_long_csv(generate_panel(default_scenario(2, 200, 0.10), 0), work / "panel.csv")
schema = "id=id,time=time,drop=drop,y=y1|y2|y3"

steps = [
    ["fit", "--k", "2", "--starts", "3", "--out", work / "fit"],
    ["select", "--k-range", "1..3", "--starts", "2", "--out", work / "select"],
    ["decode", "--params", work / "fit" / "params.json", "--out", work / "decode"],
    ["impute", "--params", work / "fit" / "params.json", "--mode", "conditional",
     "--out", work / "impute"],
    ["bootstrap", "--params", work / "fit" / "params.json", "--se-method", "info",
     "--out", work / "se"],
]
for argv in steps:
    argv = [str(a) for a in argv[:1] + ["--input", work / "panel.csv", "--schema", schema]
            + argv[1:]]
    print("hmmdrop", " ".join(argv[:1]), "->", cli.main(argv))

print(json.dumps(json.loads((work / "fit" / "fit_summary.json").read_text()), indent=1))
print((work / "select" / "selection.csv").read_text())
print("\n".join((work / "decode" / "state_freq.csv").read_text().splitlines()[:4]))
print("outputs in", work)
