"""Long-format panels: parsing, inspection and writing back.

Each row is one subject-occasion.  A dropout flag marks that the subject has
left the study; from then on its responses are structurally absent.
"""
from __future__ import annotations

import io

from hmmdrop.panel import missingness_summary, parse_long_csv, to_long_csv

raw = """id,time,drop,y1,y2
a,1,0,0.3,1.2
a,2,0,,0.9
a,3,1,,
b,1,0,-1.1,
b,2,0,-0.4,0.2
c,1,0,2.0,2.5
"""
data = parse_long_csv(io.StringIO(raw), {"y": ["y1", "y2"]})
print(f"n={data.n} subjects, r={data.r} responses, longest T={max(s.T for s in data.subjects)}")
for s in data.subjects:
    print(s.id, "T =", s.T, "dropout:", s.dropout.astype(int), "observed:\n", s.observed.astype(int))

# padded (n, T_max, r) arrays are what the filtering code consumes
pad = data.padded
print("present mask:\n", pad.present.astype(int))

summary = missingness_summary(data)
print(summary)

# writing back gives the same table up to number formatting
print(to_long_csv(data))
