"""Newick import and export for planted binary trees.

A Newick string describes the subtree below the stem; the planted root is
implicit.  Labels, comments and branch lengths are accepted; labels are
discarded, lengths can be kept (indexed by child vertex, NaN if absent).
"""

from __future__ import annotations

import numpy as np

from .tree import Tree, vertex_codes


class NewickSyntaxError(ValueError):
    def __init__(self, msg, pos):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


class UnsupportedArityError(ValueError):
    pass


class NotRepresentableError(ValueError):
    pass


_STOP = set("(),:;[")


def _skip_ws(s, i):
    n = len(s)
    while i < n:
        if s[i].isspace():
            i += 1
        elif s[i] == "[":
            j = s.find("]", i)
            if j < 0:
                raise NewickSyntaxError("unterminated comment", i)
            i = j + 1
        else:
            break
    return i


def _label(s, i):
    i = _skip_ws(s, i)
    if i < len(s) and s[i] == "'":
        i += 1
        while True:
            j = s.find("'", i)
            if j < 0:
                raise NewickSyntaxError("unterminated quoted label", i)
            if s[j + 1 : j + 2] == "'":  # doubled quote
                i = j + 2
                continue
            return j + 1
    while i < len(s) and s[i] not in _STOP and not s[i].isspace():
        i += 1
    return i


def _length(s, i):
    """Parse an optional ``:length``; returns (value or nan, new position)."""
    i = _skip_ws(s, i)
    if i >= len(s) or s[i] != ":":
        return np.nan, i
    j = _skip_ws(s, i + 1)
    k = j
    while k < len(s) and s[k] not in _STOP and not s[k].isspace():
        k += 1
    try:
        return float(s[j:k]), k
    except ValueError:
        raise NewickSyntaxError(f"bad branch length {s[j:k]!r}", j) from None


def parse_newick(text: str, keep_lengths: bool = False):
    """Parse one Newick tree into a planted :class:`Tree`.

    With ``keep_lengths`` returns ``(tree, lengths)``; ``lengths[v]`` is the
    length of the edge above ``v`` and the root length becomes the stem.
    """
    s = text
    parent = [-1]
    lengths = [np.nan]
    n_kids = [0]
    stack = []  # open internal vertices
    i = _skip_ws(s, 0)
    expect_node = True
    while True:
        if i >= len(s):
            raise NewickSyntaxError("missing ';'", i)
        ch = s[i]
        if expect_node:
            p = stack[-1] if stack else 0
            v = len(parent)
            parent.append(p)
            lengths.append(np.nan)
            n_kids.append(0)
            n_kids[p] += 1
            if ch == "(":
                stack.append(v)
                i = _skip_ws(s, i + 1)
                continue
            if ch in "),;":
                raise NewickSyntaxError(f"expected a subtree, found {ch!r}", i)
            i = _label(s, i)
            lengths[v], i = _length(s, i)
            i = _skip_ws(s, i)
            expect_node = False
            continue
        elif ch == ",":
            if not stack:
                raise NewickSyntaxError("',' outside parentheses", i)
            expect_node = True
        elif ch == ")":
            if not stack:
                raise NewickSyntaxError("unbalanced ')'", i)
            v = stack.pop()
            if n_kids[v] != 2:
                raise UnsupportedArityError(f"vertex closed at position {i} has {n_kids[v]} children (need 2)")
            i = _label(s, i + 1)
            lengths[v], i = _length(s, i)
            i = _skip_ws(s, i)
            continue
        elif ch == ";":
            if stack:
                raise NewickSyntaxError("unclosed '('", i)
            if _skip_ws(s, i + 1) != len(s):
                raise NewickSyntaxError("trailing text after ';'", i + 1)
            break
        else:
            raise NewickSyntaxError(f"unexpected {ch!r}", i)
        i = _skip_ws(s, i + 1)
    t = Tree.from_parent(np.array(parent))
    if keep_lengths:
        return t, np.array(lengths)
    return t


def emit_newick(t: Tree) -> str:
    """Unlabeled Newick with ``x`` leaves, children in canonical-code order."""
    if t.is_empty:
        raise NotRepresentableError("the empty tree has no Newick form")
    codes = vertex_codes(t)
    left, right = t.left.tolist(), t.right.tolist()
    out = []
    stack = [t.progenitor]
    # items: vertex ids to open, or literal strings to write
    while stack:
        v = stack.pop()
        if isinstance(v, str):
            out.append(v)
            continue
        if left[v] < 0:
            out.append("x")
            continue
        a, b = left[v], right[v]
        if codes[b] < codes[a]:
            a, b = b, a
        out.append("(")
        stack.extend([")", b, ",", a])
    return "".join(out) + ";"


def read_newick_file(path, keep_lengths=False) -> list:
    """Every ``;``-terminated tree in a file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_newick_many(text, keep_lengths)


def parse_newick_many(text: str, keep_lengths=False) -> list:
    out = []
    start = 0
    depth_quote = False
    for k, ch in enumerate(text):
        if ch == "'":
            depth_quote = not depth_quote
        elif ch == ";" and not depth_quote:
            chunk = text[start : k + 1]
            if chunk.strip() != ";":
                out.append(parse_newick(chunk.strip(), keep_lengths))
            start = k + 1
    if text[start:].strip():
        raise NewickSyntaxError("missing ';'", len(text))
    return out
