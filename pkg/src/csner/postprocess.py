"""Deterministic repair of inconsistent predicted IOB sequences.

Two rules, applied in order:
  1. an O-run flanked by B-X or I-X on the left and I-X of the same
     category on the right is rewritten to I-X (gap repair);
  2. a B-X immediately followed by I-Y with Y != X becomes B-Y.

Both rules preserve sequence length and are jointly idempotent.
"""

from __future__ import annotations

from .corpus_io import Tag


def repair_gap_o(tags: list[Tag]) -> list[Tag]:
    """Fill O gaps inside entities.

    Scans left to right; an O position is rewritten to I-X when the
    (already repaired) left neighbor is B-X or I-X and the next non-O tag
    to the right is I-X of the same category, so a filled position
    licenses the one after it and whole O-runs cascade.
    """
    out = list(tags)
    n = len(out)
    for i in range(1, n - 1):
        if out[i].kind != "O":
            continue
        left = out[i - 1]
        if left.kind not in ("B", "I"):
            continue
        j = i + 1
        while j < n and out[j].kind == "O":
            j += 1
        if j < n and out[j].kind == "I" and out[j].category == left.category:
            out[i] = Tag("I", left.category)
    return out


def repair_b_category(tags: list[Tag]) -> list[Tag]:
    """Align each B with the category of an immediately following I."""
    out = list(tags)
    for i in range(len(out) - 1):
        cur, nxt = out[i], out[i + 1]
        if cur.kind == "B" and nxt.kind == "I" and cur.category != nxt.category:
            out[i] = Tag("B", nxt.category)
    return out


def postprocess_sentence(tags: list[Tag]) -> list[Tag]:
    """Gap repair followed by B-category repair."""
    return repair_b_category(repair_gap_o(tags))
