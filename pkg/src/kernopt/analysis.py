"""Statement and dataflow analysis used to derive candidate code regions.

The analyzer understands a restricted statement grammar sufficient for
action targeting: assignments (plain and augmented), bare calls, ``return``,
``for``/``while`` headers with indentation-delimited bodies, and the no-op
keywords ``pass``/``break``/``continue``. Comments and blank lines keep
their line numbers but never start or end a statement span. Called function
names are not counted as uses; their arguments are.

On any unparseable line, region extraction degrades to a single whole-body
region per kind (none for reordering) so that episodes on exotic generated
code keep running instead of aborting.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .model import ActionKind, CodeRegion, KernelSource


class AnalysisError(ValueError):
    """A line does not parse under the restricted statement grammar."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class StatementKind(str, enum.Enum):
    ASSIGN = "ASSIGN"
    LOOP_HEADER = "LOOP_HEADER"
    CALL = "CALL"
    RETURN = "RETURN"
    OTHER = "OTHER"


@dataclass(frozen=True)
class Statement:
    """One statement span with the identifiers it writes and reads."""

    line_span: CodeRegion
    kind: StatementKind
    defs: frozenset[str]
    uses: frozenset[str]


_KEYWORDS = {
    "for", "while", "in", "if", "elif", "else", "return", "and", "or", "not",
    "pass", "break", "continue", "True", "False", "None", "lambda", "is",
}

_NAME_RE = re.compile(r"\b[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*")
_STRING_RE = re.compile(r"('([^'\\]|\\.)*'|\"([^\"\\]|\\.)*\")")
_LOOP_FOR_RE = re.compile(r"^for\s+(?P<target>.+?)\s+in\s+(?P<iter>.+?)\s*:$")
_LOOP_WHILE_RE = re.compile(r"^while\s+(?P<cond>.+?)\s*:$")
_RETURN_RE = re.compile(r"^return(\s+(?P<expr>.*?))?\s*$")
_AUGMENTED_RE = re.compile(
    r"^(?P<lhs>[^=]+?)\s*(?P<op>\+=|-=|\*\*=|\*=|//=|/=|%=|@=|&=|\|=|\^=|>>=|<<=)"
    r"\s*(?P<rhs>.+)$")
_TARGET_RE = re.compile(
    r"^(?P<base>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)"
    r"\s*(?P<index>\[.*\])?\s*$")


def _strip_strings(line: str) -> str:
    """Blank out string literals so their contents never produce identifiers."""
    return _STRING_RE.sub(lambda m: " " * len(m.group(0)), line)


def _code_part(raw_line: str) -> str:
    """The executable part of a line: strings blanked, comment removed."""
    stripped = _strip_strings(raw_line)
    if "#" in stripped:
        stripped = stripped[:stripped.index("#")]
    return stripped


def _indent_of(line: str) -> int:
    return len(line) - len(line.lstrip(" \t"))


def _expr_uses(expr: str) -> set[str]:
    """Identifiers read by an expression; called function names excluded."""
    uses: set[str] = set()
    for match in _NAME_RE.finditer(expr):
        rest = expr[match.end():].lstrip()
        if rest.startswith("("):
            continue  # callee name
        base = match.group(0).split(".", 1)[0]
        if base not in _KEYWORDS:
            uses.add(base)
    return uses


def _split_top_level_commas(text: str) -> list[str]:
    parts: list[str] = []
    depth = 0
    current: list[str] = []
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return parts


def _parse_targets(lhs: str) -> tuple[set[str], set[str]]:
    """defs and index-expression uses of an assignment target list."""
    lhs = lhs.strip()
    if lhs.startswith("(") and lhs.endswith(")"):
        lhs = lhs[1:-1]
    defs: set[str] = set()
    uses: set[str] = set()
    for target in _split_top_level_commas(lhs):
        target = target.strip()
        m = _TARGET_RE.match(target)
        if m is None:
            raise ValueError(f"invalid assignment target {target!r}")
        base = m.group("base").split(".", 1)[0]
        if base in _KEYWORDS:
            raise ValueError(f"keyword {base!r} cannot be assigned")
        defs.add(base)
        index = m.group("index")
        if index:
            uses |= _expr_uses(index)
    return defs, uses


def _find_plain_assign(code: str) -> int | None:
    """Index of the first top-level plain '=' (not ==, !=, <=, >=)."""
    depth = 0
    for i, ch in enumerate(code):
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "=" and depth == 0:
            if i + 1 < len(code) and code[i + 1] == "=":
                return None  # leading comparison; not an assignment statement
            if i > 0 and code[i - 1] in "=!<>+-*/%@&|^":
                return None
            return i
    return None


def _is_bare_call(code: str) -> bool:
    m = re.match(r"^[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*\s*\(", code)
    if m is None:
        return False
    depth = 0
    for i in range(m.end() - 1, len(code)):
        if code[i] in "([{":
            depth += 1
        elif code[i] in ")]}":
            depth -= 1
            if depth == 0:
                return code[i + 1:].strip() == ""
    return False


def _parse_line(code: str) -> tuple[StatementKind, set[str], set[str]]:
    """Classify one code line and extract its def/use identifier sets.

    Raises ValueError if the line does not fit the restricted grammar.
    """
    code = code.strip()
    m = _LOOP_FOR_RE.match(code)
    if m is not None:
        defs, extra_uses = _parse_targets(m.group("target"))
        return StatementKind.LOOP_HEADER, defs, extra_uses | _expr_uses(m.group("iter"))
    m = _LOOP_WHILE_RE.match(code)
    if m is not None:
        return StatementKind.LOOP_HEADER, set(), _expr_uses(m.group("cond"))
    m = _RETURN_RE.match(code)
    if m is not None:
        expr = m.group("expr") or ""
        return StatementKind.RETURN, set(), _expr_uses(expr)
    if code in ("pass", "break", "continue"):
        return StatementKind.OTHER, set(), set()
    if _is_bare_call(code):
        open_paren = code.index("(")
        return StatementKind.CALL, set(), _expr_uses(code[open_paren:])
    m = _AUGMENTED_RE.match(code)
    if m is not None:
        defs, index_uses = _parse_targets(m.group("lhs"))
        return (StatementKind.ASSIGN, defs,
                defs | index_uses | _expr_uses(m.group("rhs")))
    eq = _find_plain_assign(code)
    if eq is not None:
        defs, index_uses = _parse_targets(code[:eq])
        return StatementKind.ASSIGN, defs, index_uses | _expr_uses(code[eq + 1:])
    raise ValueError(f"unparseable statement {code!r}")


def _classify_lines(text: str) -> list[tuple[int, str] | None]:
    """Per line: (indent, code) for code lines, None for blank/comment lines."""
    out: list[tuple[int, str] | None] = []
    for raw in text.splitlines():
        code = _code_part(raw)
        if code.strip() == "":
            out.append(None)
        else:
            out.append((_indent_of(code), code.strip()))
    return out


def extract_statements(source: KernelSource) -> list[Statement]:
    """Split a source into ordered, non-overlapping statement spans.

    Loop headers absorb their indented bodies into one span; defs/uses of
    body lines accumulate onto the loop statement. The union of spans covers
    every non-blank, non-comment line.
    """
    lines = _classify_lines(source.text)
    first_code = next((i for i, entry in enumerate(lines) if entry is not None), None)
    if first_code is None:
        raise AnalysisError("source has no code lines", 1)
    base_indent = lines[first_code][0]

    statements: list[Statement] = []
    i = first_code
    n = len(lines)
    while i < n:
        entry = lines[i]
        if entry is None:
            i += 1
            continue
        indent, code = entry
        if indent != base_indent:
            raise AnalysisError("unexpected indent", i + 1)
        try:
            kind, defs, uses = _parse_line(code)
        except ValueError as exc:
            raise AnalysisError(str(exc), i + 1) from exc
        if kind is StatementKind.LOOP_HEADER:
            last_code = i
            j = i + 1
            while j < n:
                body = lines[j]
                if body is None:
                    j += 1
                    continue
                if body[0] <= base_indent:
                    break
                try:
                    _, body_defs, body_uses = _parse_line(body[1])
                except ValueError as exc:
                    raise AnalysisError(str(exc), j + 1) from exc
                defs |= body_defs
                uses |= body_uses
                last_code = j
                j += 1
            if last_code == i:
                raise AnalysisError("loop header with empty body", i + 1)
            statements.append(Statement(CodeRegion(i + 1, last_code + 1), kind,
                                        frozenset(defs), frozenset(uses)))
            i = j
        else:
            statements.append(Statement(CodeRegion(i + 1, i + 1), kind,
                                        frozenset(defs), frozenset(uses)))
            i += 1
    return statements


def _loop_header_lines(source: KernelSource) -> set[int]:
    """1-based line numbers of every loop-header line, at any nesting depth."""
    headers: set[int] = set()
    for idx, entry in enumerate(_classify_lines(source.text)):
        if entry is None:
            continue
        code = entry[1]
        if _LOOP_FOR_RE.match(code) or _LOOP_WHILE_RE.match(code):
            headers.add(idx + 1)
    return headers


def whole_body_region(source: KernelSource) -> CodeRegion:
    """Fallback region covering the full source, used when parsing fails."""
    return CodeRegion(1, source.line_count, label="whole body")


def extract_regions(source: KernelSource, kind: ActionKind) -> list[CodeRegion]:
    """Candidate regions for one optimization kind, deduplicated and sorted.

    - fusion: adjacent statement pairs where the first defines something the
      second reads (producer -> consumer).
    - tiling / pipeline: spans of loop-header or bare-call statements.
    - reordering: loop spans holding a nested loop, or two adjacent loops.

    On a parse failure the result degrades to the whole-body region
    (reordering degrades to the empty list: it needs real loop structure).
    """
    if kind is ActionKind.STOP:
        raise ValueError("STOP is not a region-targeted kind")
    try:
        statements = extract_statements(source)
    except AnalysisError:
        if kind is ActionKind.REORDERING:
            return []
        return [whole_body_region(source)]

    regions: list[CodeRegion] = []
    if kind is ActionKind.FUSION:
        for first, second in zip(statements, statements[1:]):
            shared = first.defs & second.uses
            if shared:
                regions.append(CodeRegion(first.line_span.start_line,
                                          second.line_span.end_line,
                                          label=",".join(sorted(shared))))
    elif kind in (ActionKind.TILING, ActionKind.PIPELINE):
        regions = [s.line_span for s in statements
                   if s.kind in (StatementKind.LOOP_HEADER, StatementKind.CALL)]
    elif kind is ActionKind.REORDERING:
        headers = _loop_header_lines(source)
        loops = [s for s in statements if s.kind is StatementKind.LOOP_HEADER]
        for stmt in loops:
            span = stmt.line_span
            inside = sum(1 for ln in headers
                         if span.start_line <= ln <= span.end_line)
            if inside >= 2:
                regions.append(span)
        for first, second in zip(statements, statements[1:]):
            if (first.kind is StatementKind.LOOP_HEADER
                    and second.kind is StatementKind.LOOP_HEADER):
                regions.append(CodeRegion(first.line_span.start_line,
                                          second.line_span.end_line,
                                          label="adjacent loops"))
    seen: set[tuple[int, int]] = set()
    unique: list[CodeRegion] = []
    for region in regions:
        if region.span not in seen:
            seen.add(region.span)
            unique.append(region)
    unique.sort(key=lambda r: r.span)
    return unique


def validate_region(source: KernelSource,
                    region: CodeRegion | tuple[int, int]) -> bool:
    """True iff the span is in bounds and starts/ends on statement boundaries.

    Total function: accepts raw ``(start, end)`` pairs so that malformed
    spans simply return False instead of failing region construction.
    """
    if isinstance(region, CodeRegion):
        start, end = region.span
    else:
        start, end = region
    if not (1 <= start <= end <= source.line_count):
        return False
    try:
        statements = extract_statements(source)
    except AnalysisError:
        fallback = whole_body_region(source)
        return (start, end) == fallback.span
    starts = {s.line_span.start_line for s in statements}
    ends = {s.line_span.end_line for s in statements}
    return start in starts and end in ends
