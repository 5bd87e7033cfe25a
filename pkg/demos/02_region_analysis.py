"""Statement analysis and candidate regions on the bundled MLP fixture.

The analyzer splits a kernel into statement spans with def/use identifier
sets, then derives per-kind candidate regions: fusion targets adjacent
producer/consumer pairs, tiling and pipelining target loops and calls,
reordering targets nested or adjacent loop pairs.
"""

from kernopt import data_path
from kernopt.analysis import extract_regions, extract_statements
from kernopt.model import ActionKind, KernelSource, SourceLanguage

text = data_path("fixtures", "fixture_mlp.py.txt").read_text()
source = KernelSource(SourceLanguage.REFERENCE, text)

print("source:")
for i, line in enumerate(text.splitlines(), start=1):
    print(f"  {i:>2} | {line}")

print("\nstatements (span, kind, defs, uses):")
for stmt in extract_statements(source):
    span = f"{stmt.line_span.start_line}-{stmt.line_span.end_line}"
    print(f"  {span:>5}  {stmt.kind.value:<11} defs={sorted(stmt.defs)} "
          f"uses={sorted(stmt.uses)}")

for kind in (ActionKind.TILING, ActionKind.FUSION, ActionKind.PIPELINE,
             ActionKind.REORDERING):
    regions = extract_regions(source, kind)
    pretty = ", ".join(f"{r.start_line}-{r.end_line}" for r in regions) or "(none)"
    print(f"\n{kind.value.lower():<10} candidates: {pretty}")
