"""Shared plumbing for the CSV-with-header table files.

Every table file is: one versioned ``#`` header line, optional further
``#`` metadata lines (for example a config hash added by the CLI), one
column-name line, then data rows.  Loaders use :func:`data_lines` so extra
metadata never breaks parsing.
"""

from __future__ import annotations

from typing import Iterable, Iterator


def meta_line(meta: str | None) -> str:
    """The extra header line a saver should emit, or an empty string."""
    return f"# {meta}\n" if meta else ""


def data_lines(lines: Iterable[str]) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, text) for the data rows of a table.

    Skips the version header, any additional comment lines, blank lines,
    and the single column-name line.
    """
    seen_columns = False
    for lineno, line in enumerate(lines, start=1):
        if lineno == 1 or not line.strip() or line.startswith("#"):
            continue
        if not seen_columns:
            seen_columns = True
            continue
        yield lineno, line
