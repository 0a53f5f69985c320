import re

_NUMERIC_MARKER = r"\[\s*\d+(?:\s*[,–—-]\s*\d+)*\s*\]"
# Superscript digits after a word of two or more letters or after closing
# punctuation; area and length units such as m² or km² are not markers.
_UNIT_EXPONENT = r"(?<!\bcm)(?<!\bmm)(?<!\bkm)(?<!\bft)(?<!\bin)"
_SUPERSCRIPT_MARKER = (
    rf"(?:(?<=[A-Za-z]{{2}})|(?<=[.,;:)\]])){_UNIT_EXPONENT}[¹²³⁰⁴-⁹]+(?=[\s.,;:!?()\[\]]|$)"
)
_MARKER = rf"(?:{_NUMERIC_MARKER}|{_SUPERSCRIPT_MARKER})"

# Leading horizontal whitespace goes with the marker; the whitespace after a
# run of markers is kept unless the run opens a line.
_CITATION_RUN = re.compile(rf"[ \t]*{_MARKER}(?:[ \t]*{_MARKER})*([ \t]*)")


def strip_citations(text: str) -> str:
    """Remove bracketed numeric citation markers such as `[12]` or `[3, 5]`
    and superscript footnote markers. Other text is left as is."""

    def _drop(match: re.Match) -> str:
        start = match.start()
        at_line_start = start == 0 or text[start - 1] == "\n"
        at_line_end = match.end() == len(text) or text[match.end()] == "\n"
        if at_line_start or at_line_end:
            return ""
        return match.group(1)

    return _CITATION_RUN.sub(_drop, text)
