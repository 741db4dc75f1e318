"""Newick text I/O and the leaf-label table.

Parsing normalizes to the unrooted degree-3 form: a top-level bifurcation
(rooted input) has its root suppressed.  Multifurcating input is rejected
rather than arbitrarily resolved, because an arbitrary resolution would
silently change quartet topologies.  Branch lengths are accepted and
discarded; internal labels are ignored.

Serialization is canonical: the tree is written around the internal vertex
adjacent to the lexicographically smallest leaf label, with sibling order
by smallest contained label, so equal topologies produce equal bytes.
"""
from __future__ import annotations

import sys

from .trees import PhyloTree, TreeError


class NewickError(ValueError):
    """Malformed Newick input."""


class MultifurcationError(NewickError):
    """Input tree is not binary; reported, never silently resolved."""


_DELIMS = set("(),;:")


def _tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _DELIMS:
            yield ch
            i += 1
            continue
        j = i
        while j < n and text[j] not in _DELIMS and not text[j].isspace():
            j += 1
        yield text[i:j]
        i = j


def parse_newick(text: str, label_to_id: dict | None = None) -> PhyloTree:
    """Parse a Newick string (trailing ';' required) into a PhyloTree.

    Leaf labels map to dense ids by sorted label order, unless an explicit
    ``label_to_id`` table (e.g. from :func:`read_label_table`) is given.
    """
    tokens = list(_tokenize(text))
    if not tokens or tokens[-1] != ";":
        raise NewickError("missing trailing ';'")
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 4 * len(tokens) + 1000))
    pos = 0

    def parse_node():
        nonlocal pos
        if pos >= len(tokens):
            raise NewickError("unexpected end of input")
        if tokens[pos] == "(":
            pos += 1
            children = [parse_node()]
            while pos < len(tokens) and tokens[pos] == ",":
                pos += 1
                children.append(parse_node())
            if pos >= len(tokens) or tokens[pos] != ")":
                raise NewickError("expected ')'")
            pos += 1
            # optional internal label, ignored
            if pos < len(tokens) and tokens[pos] not in _DELIMS:
                pos += 1
            _skip_length()
            return ("node", children)
        label = tokens[pos]
        if label in _DELIMS:
            raise NewickError(f"unexpected token {label!r}")
        pos += 1
        _skip_length()
        return ("leaf", label)

    def _skip_length():
        nonlocal pos
        if pos < len(tokens) and tokens[pos] == ":":
            pos += 1
            if pos >= len(tokens) or tokens[pos] in _DELIMS:
                raise NewickError("dangling ':'")
            try:
                float(tokens[pos])
            except ValueError as exc:
                raise NewickError(f"bad branch length {tokens[pos]!r}") from exc
            pos += 1

    top = parse_node()
    if pos >= len(tokens) or tokens[pos] != ";":
        raise NewickError("trailing content before ';'")
    if top[0] == "leaf":
        raise NewickError("tree has a single leaf")

    # collect leaf labels
    leaves = []

    def collect(node):
        if node[0] == "leaf":
            leaves.append(node[1])
        else:
            for ch in node[1]:
                collect(ch)

    collect(top)
    if len(leaves) != len(set(leaves)):
        dupes = sorted({x for x in leaves if leaves.count(x) > 1})
        raise NewickError(f"duplicate leaf labels: {dupes}")
    if len(leaves) < 3:
        raise NewickError("need at least 3 leaves")
    if label_to_id is None:
        label_to_id = {lab: i for i, lab in enumerate(sorted(leaves))}
    else:
        missing = [x for x in leaves if x not in label_to_id]
        if missing:
            raise NewickError(f"labels not in table: {missing}")
    n = len(leaves)
    labels = [None] * n
    for lab in leaves:
        labels[label_to_id[lab]] = lab

    # arity checks: top node may have 2 (rooted) or 3 (unrooted) children,
    # every other internal node exactly 2
    def check_arity(node, is_top):
        if node[0] == "leaf":
            return
        k = len(node[1])
        allowed = (2, 3) if is_top else (2,)
        if k not in allowed:
            raise MultifurcationError(
                f"internal node with {k} children (binary input required)"
            )
        for ch in node[1]:
            check_arity(ch, False)

    check_arity(top, True)

    edges = []
    next_internal = [n]

    def build(node):
        if node[0] == "leaf":
            return label_to_id[node[1]]
        vid = next_internal[0]
        next_internal[0] += 1
        for ch in node[1]:
            edges.append((vid, build(ch)))
        return vid

    if len(top[1]) == 3:
        build(top)
    else:
        # suppress the rooted top: connect its two child subtrees directly
        left, right = top[1]
        if left[0] == "leaf" and right[0] == "leaf":
            raise NewickError("two-leaf tree is not supported")
        a = build(left)
        b = build(right)
        edges.append((a, b))
    try:
        return PhyloTree(n, edges, labels=labels)
    except TreeError as exc:
        raise NewickError(str(exc)) from exc


def serialize_newick(tree: PhyloTree) -> str:
    """Canonical Newick text for an unrooted tree (parse round-trips)."""
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 4 * tree.n_vertices + 1000))
    anchor = min(range(tree.n_leaves), key=lambda i: tree.labels[i])
    center = tree.neighbors[anchor][0]

    def render(v, parent):
        if v < tree.n_leaves:
            return (tree.labels[v], tree.labels[v])
        parts = [render(w, v) for w in tree.neighbors[v] if w != parent]
        parts.sort(key=lambda p: p[0])
        key = parts[0][0]
        return (key, "(" + ",".join(p[1] for p in parts) + ")")

    parts = [render(w, center) for w in tree.neighbors[center]]
    parts.sort(key=lambda p: p[0])
    return "(" + ",".join(p[1] for p in parts) + ");"


def write_label_table(path, labels):
    """Persist the leaf-id/label mapping as TSV rows ``id<TAB>label``."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, lab in enumerate(labels):
            fh.write(f"{i}\t{lab}\n")


def read_label_table(path) -> list:
    """Read a label table written by :func:`write_label_table`."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            i, lab = line.split("\t", 1)
            rows[int(i)] = lab
    return [rows[i] for i in range(len(rows))]
