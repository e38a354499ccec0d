"""Tree topologies, their edges, and counts of regions.

Taxa are labelled ``1..N``. Topologies are written as nested parentheses,
e.g. ``(((1(23))4)56)``; with fewer than ten taxa labels are single digits
and need no separator, otherwise they must be separated by commas or
spaces. Each internal edge is stored as the clade on the side away from the
outgroup, as a bitmask (bit ``i - 1`` for taxon ``i``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import DomainError, ParseError


@dataclass(frozen=True, order=True)
class EdgePartition:
    mask: int
    n_taxa: int

    @classmethod
    def from_clade(cls, taxa: Iterable[int], n_taxa: int, outgroup: Optional[int] = None):
        outgroup = n_taxa if outgroup is None else outgroup
        mask = 0
        for t in taxa:
            mask |= 1 << (t - 1)
        if mask >> (outgroup - 1) & 1:
            mask ^= (1 << n_taxa) - 1
        return cls(mask, n_taxa)

    @property
    def size(self) -> int:
        return bin(self.mask).count("1")

    @property
    def taxa(self) -> tuple:
        return tuple(i + 1 for i in range(self.n_taxa) if self.mask >> i & 1)

    @property
    def display(self) -> str:
        return "".join("+" if self.mask >> i & 1 else "-" for i in range(self.n_taxa))

    def is_trivial(self) -> bool:
        return not 2 <= self.size <= self.n_taxa - 2


@dataclass(frozen=True)
class Topology:
    text: str
    splits: frozenset
    n_taxa: int
    outgroup: int = 0

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (self.n_taxa, self.outgroup, self.splits) == (other.n_taxa, other.outgroup, other.splits)

    def __hash__(self):
        return hash((self.n_taxa, self.outgroup, self.splits))

    def is_resolved(self) -> bool:
        return len(self.splits) == self.n_taxa - 3


# -- parsing ------------------------------------------------------------------

_TOKEN = re.compile(r"\(|\)|\d+")


def _tokens(text: str, n_taxa: int):
    if re.search(r"[^()\d,\s]", text):
        bad = re.search(r"[^()\d,\s]", text)
        raise ParseError(f"unexpected character {bad.group()!r}", 1, bad.start() + 1)
    separated = "," in text or re.search(r"\d\s+\d", text)
    for m in _TOKEN.finditer(text):
        tok = m.group()
        if tok in "()":
            yield tok, m.start()
        elif separated or n_taxa >= 10:
            yield int(tok), m.start()
        else:
            for k, ch in enumerate(tok):
                yield int(ch), m.start() + k


def _labels(text):
    if "," in text or re.search(r"\d\s+\d", text):
        return [int(x) for x in re.findall(r"\d+", text)]
    return [int(c) for c in text if c.isdigit()]


def _parse_nested(text: str, n_taxa: int):
    stack = [[]]
    seen = set()
    for tok, pos in _tokens(text, n_taxa):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", 1, pos + 1)
            group = stack.pop()
            if not group:
                raise ParseError("empty group '()'", 1, pos + 1)
            stack[-1].append(tuple(group))
        else:
            if not 1 <= tok <= n_taxa:
                raise ParseError(f"taxon {tok} outside 1..{n_taxa}", 1, pos + 1)
            if tok in seen:
                raise ParseError(f"taxon {tok} appears twice", 1, pos + 1)
            seen.add(tok)
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ParseError("unbalanced '('", 1, len(text))
    missing = set(range(1, n_taxa + 1)) - seen
    if missing:
        raise ParseError(f"missing taxa {sorted(missing)}", 1)
    top = stack[0]
    return top[0] if len(top) == 1 and isinstance(top[0], tuple) else tuple(top)


def _leaves(node):
    if isinstance(node, int):
        return (node,)
    return tuple(t for child in node for t in _leaves(child))


def _clades(node, out):
    for child in node:
        if isinstance(child, tuple):
            out.append(_leaves(child))
            _clades(child, out)
    return out


def _canonical_text(splits, n_taxa, outgroup):
    """Nested text rooted next to the outgroup, children ordered by smallest taxon."""
    clades = sorted((e.taxa for e in splits), key=len)
    others = [t for t in range(1, n_taxa + 1) if t != outgroup]

    def build(members, candidates):
        # maximal proper sub-clades of `members`
        members = set(members)
        inner = [c for c in candidates if set(c) < members]
        maximal = [c for c in inner if not any(set(c) < set(d) for d in inner)]
        covered = set().union(*map(set, maximal)) if maximal else set()
        parts = [(min(c), build(c, inner)) for c in maximal]
        parts += [(t, str(t)) for t in members - covered]
        sep = "," if n_taxa >= 10 else ""
        return "(" + sep.join(p for _, p in sorted(parts)) + ")"

    body = build(others + [], clades)
    sep = "," if n_taxa >= 10 else ""
    # put the outgroup at the top level next to the maximal clades
    inner = body[1:-1]
    parts = [inner, str(outgroup)] if inner else [str(outgroup)]
    return "(" + sep.join(parts) + ")"


def parse_topology(text: str, n_taxa: int, outgroup: Optional[int] = None) -> Topology:
    """Parse a topology string and derive its internal edges."""
    if n_taxa < 3:
        raise DomainError("need at least 3 taxa")
    outgroup = n_taxa if outgroup is None else outgroup
    if not 1 <= outgroup <= n_taxa:
        raise DomainError(f"outgroup {outgroup} outside 1..{n_taxa}")
    tree = _parse_nested(text.strip(), n_taxa)
    if isinstance(tree, int):
        raise ParseError("topology must be a parenthesised group", 1)
    splits = set()
    for clade in _clades(tree, []):
        e = EdgePartition.from_clade(clade, n_taxa, outgroup)
        if not e.is_trivial():
            splits.add(e)
    splits = frozenset(splits)
    return Topology(_canonical_text(splits, n_taxa, outgroup), splits, n_taxa, outgroup)


def canonical_text(t: Topology) -> str:
    return t.text


def read_topologies(stream, n_taxa: Optional[int] = None, outgroup: Optional[int] = None):
    """One topology per nonblank line; the taxon count defaults to the largest label."""
    lines = []
    for lineno, line in enumerate(stream, 1):
        if isinstance(line, bytes):
            line = line.decode()
        s = line.strip()
        if s and not s.startswith("#"):
            lines.append((lineno, s))
    if not lines:
        raise ParseError("no topologies found")
    if n_taxa is None:
        n_taxa = max(max(_labels(s)) for _, s in lines)
    out = []
    for lineno, s in lines:
        try:
            out.append(parse_topology(s, n_taxa, outgroup))
        except ParseError as exc:
            raise ParseError(f"topology {s!r}: {exc}", lineno) from None
    return out


# -- edges and trees ----------------------------------------------------------

def associate(trees: Sequence[Topology]) -> dict:
    """Map each edge to the (0-based) indices of the trees containing it.

    Edges are ordered by first appearance in the tree list; within one tree
    by clade size, then mask.
    """
    if trees and len({(t.n_taxa, t.outgroup) for t in trees}) > 1:
        raise DomainError("trees are over different taxon sets or outgroups")
    out: dict = {}
    for i, t in enumerate(trees):
        for e in sorted(t.splits, key=lambda e: (e.size, e.mask)):
            out.setdefault(e, []).append(i)
    return out


def edge_table(trees: Sequence[Topology], prefix: str = "E"):
    """Rows ``(edge_id, display, member indices)`` in :func:`associate` order."""
    return [
        (f"{prefix}{k + 1}", e.display, members)
        for k, (e, members) in enumerate(associate(trees).items())
    ]


def write_edge_table(rows, stream) -> None:
    stream.write("edge\tclade\ttrees\n")
    for edge_id, display, members in rows:
        stream.write(f"{edge_id}\t{display}\t{','.join(str(m + 1) for m in members)}\n")


def _double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def n_unrooted_trees(n_taxa: int) -> int:
    """``(2N-5)! / (2^(N-3) (N-3)!)``, i.e. ``(2N-5)!!``."""
    return math.factorial(2 * n_taxa - 5) // (2 ** (n_taxa - 3) * math.factorial(n_taxa - 3))


def n_edges(n_taxa: int) -> int:
    return 2 ** (n_taxa - 1) - (n_taxa + 1)


def region_counts(n_taxa: int, target: str, mode: str) -> tuple[int, int, int]:
    """``(K_all, K_select, K_true)`` for trees or edges in either test mode."""
    if n_taxa < 4:
        raise DomainError(f"need N >= 4 taxa, got {n_taxa}")
    if target == "tree":
        k_all, inside = n_unrooted_trees(n_taxa), 1
    elif target == "edge":
        k_all, inside = n_edges(n_taxa), n_taxa - 3
    else:
        raise DomainError(f"target must be 'tree' or 'edge', got {target!r}")
    if mode == "inside":
        k_select = inside
    elif mode == "outside":
        k_select = k_all - inside
    else:
        raise DomainError(f"mode must be 'inside' or 'outside', got {mode!r}")
    return k_all, k_select, k_all - k_select


def trees_containing_split(edge: EdgePartition) -> int:
    """Number of resolved trees that display ``edge``."""
    a = edge.size
    b = edge.n_taxa - a
    return _double_factorial(2 * a - 3) * _double_factorial(2 * b - 3)


def _rooted_shapes(taxa):
    """All rooted binary trees over ``taxa`` as nested pairs, by stepwise insertion."""
    trees = [(taxa[0], taxa[1])]
    for t in taxa[2:]:
        nxt = []
        for tree in trees:
            nxt.extend(_insert(tree, t))
        trees = nxt
    return trees


def _insert(node, leaf):
    yield (node, leaf)
    if isinstance(node, tuple):
        left, right = node
        for sub in _insert(left, leaf):
            yield (sub, right)
        for sub in _insert(right, leaf):
            yield (left, sub)


MAX_ENUMERATE = 8


def enumerate_topologies(n_taxa: int, outgroup: Optional[int] = None) -> list[Topology]:
    """Every fully resolved unrooted topology over ``n_taxa`` taxa (N <= 8)."""
    if n_taxa > MAX_ENUMERATE:
        raise DomainError(f"refusing to enumerate {n_unrooted_trees(n_taxa)} trees for N = {n_taxa}")
    if n_taxa < 3:
        raise DomainError("need at least 3 taxa")
    outgroup = n_taxa if outgroup is None else outgroup
    others = [t for t in range(1, n_taxa + 1) if t != outgroup]
    out = []
    for rooted in _rooted_shapes(others):
        splits = frozenset(
            e
            for e in (EdgePartition.from_clade(c, n_taxa, outgroup) for c in _clades(rooted, []))
            if not e.is_trivial()
        )
        out.append(Topology(_canonical_text(splits, n_taxa, outgroup), splits, n_taxa, outgroup))
    return out
