"""The semantic action catalog: enumeration, canonical text, parsing.

A catalog is the policy's menu for one observation: every candidate region
paired with its optimization kind, plus the terminal stop. The canonical
text grammar (`fuse lines 15-20`, `stop`, ...) round-trips through the
parser, which rejects anything not in the catalog.
"""

from kernopt import data_path
from kernopt.actions import enumerate_actions, parse_action, render_action
from kernopt.model import (
    KernelSource,
    Observation,
    SourceLanguage,
    parse_hardware_spec,
    parse_task_suite,
)

tasks = parse_task_suite(data_path("mini_suite.json"))
hardware = parse_hardware_spec(data_path("hardware", "h100.json"))
text = data_path("fixtures", "fixture_mlp.py.txt").read_text()
obs = Observation(task=tasks[0],
                  current_source=KernelSource(SourceLanguage.REFERENCE, text),
                  step_index=0, history=(), hardware=hardware)

catalog = enumerate_actions(obs)
print(f"catalog for the MLP fixture ({len(catalog)} actions, "
      f"fingerprint {catalog.source_fingerprint[:12]}...):")
for action in catalog.actions:
    print(f"  {render_action(action)}")

text_form = render_action(catalog.actions[3])
resolved = parse_action(text_form, catalog)
print(f"\nround trip: {text_form!r} -> {resolved.kind.value} "
      f"{resolved.region.span if resolved.region else ''}")

for bad in ("explode lines 1-2", "fuse lines 1-99"):
    try:
        parse_action(bad, catalog)
    except Exception as exc:
        print(f"rejected {bad!r}: {type(exc).__name__}: {exc}")
