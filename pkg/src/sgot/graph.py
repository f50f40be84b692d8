"""Scene-graph data model, validation, and the JSON file formats.

A scene graph file looks like::

    {
      "nodes": [
        {"id": "man", "kind": "object", "label": "man"},
        {"id": "riding", "kind": "relation", "label": "riding"},
        {"id": "red", "kind": "attribute", "label": "red", "embedding": [0.1, 0.2]}
      ],
      "edges": [["man", "riding"], ["red", "man"]]
    }

Kinds may be spelled out or abbreviated (``o``/``a``/``r``).
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence, Union


class GraphParseError(ValueError):
    """The document is not a well-formed scene graph file."""


class GraphValidationError(ValueError):
    """The document parsed but violates a scene-graph invariant."""

    def __init__(self, violations: Sequence[str], source: str = ""):
        self.violations = list(violations)
        self.source = source
        prefix = f"{source}: " if source else ""
        super().__init__(prefix + "; ".join(self.violations))


class NodeKind(enum.Enum):
    OBJECT = "object"
    ATTRIBUTE = "attribute"
    RELATION = "relation"

    @classmethod
    def parse(cls, text: str) -> "NodeKind":
        key = str(text).strip().lower()
        for kind in cls:
            if key in (kind.value, kind.value[0]):
                return kind
        raise GraphParseError(f"unknown node kind {text!r}")


OBJECT, ATTRIBUTE, RELATION = NodeKind.OBJECT, NodeKind.ATTRIBUTE, NodeKind.RELATION

# Directed edge kinds that may appear in a graph. Object->attribute is the
# reverse of the documented attribute->object link and is tolerated because
# aggregation ignores direction.
ALLOWED_EDGE_KINDS = frozenset(
    {
        (ATTRIBUTE, OBJECT),
        (OBJECT, ATTRIBUTE),
        (OBJECT, RELATION),
        (RELATION, OBJECT),
    }
)

# Kinds a node aggregates from during propagation.
DEFAULT_NEIGHBOR_KINDS = {
    OBJECT: frozenset({RELATION, ATTRIBUTE}),
    ATTRIBUTE: frozenset({OBJECT}),
    RELATION: frozenset({OBJECT}),
}


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    label: str
    embedding: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class SceneGraph:
    """Immutable heterogeneous scene graph.

    Construction does not validate; use :func:`validate_graph` or build
    through :func:`load_graph` / :meth:`SceneGraph.build`.
    """

    nodes: tuple[Node, ...]
    edges: tuple[tuple[str, str], ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)
    _adjacency: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((str(s), str(t)) for s, t in self.edges))
        index = {}
        for i, node in enumerate(self.nodes):
            index.setdefault(node.id, i)
        adjacency: dict[str, list[str]] = {node.id: [] for node in self.nodes}
        for s, t in self.edges:
            if s in adjacency and t in adjacency and s != t:
                if t not in adjacency[s]:
                    adjacency[s].append(t)
                if s not in adjacency[t]:
                    adjacency[t].append(s)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_adjacency", {k: tuple(v) for k, v in adjacency.items()})

    @classmethod
    def build(
        cls,
        nodes: Iterable[Union[Node, tuple]],
        edges: Iterable[tuple[str, str]] = (),
    ) -> "SceneGraph":
        """Build and validate a graph from ``Node`` objects or
        ``(id, kind, label[, embedding])`` tuples."""
        made = []
        for item in nodes:
            if isinstance(item, Node):
                made.append(item)
                continue
            node_id, kind, label, *rest = item
            emb = rest[0] if rest else None
            made.append(
                Node(
                    str(node_id),
                    kind if isinstance(kind, NodeKind) else NodeKind.parse(kind),
                    str(label),
                    None if emb is None else tuple(float(x) for x in emb),
                )
            )
        g = cls(tuple(made), tuple(edges))
        problems = validate_graph(g)
        if problems:
            raise GraphValidationError(problems)
        return g

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def index(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def node(self, node_id: str) -> Node:
        return self.nodes[self.index(node_id)]

    def kinds(self) -> list[NodeKind]:
        return [n.kind for n in self.nodes]


def validate_graph(g: SceneGraph) -> list[str]:
    """Return one message per invariant violation; empty when ``g`` is valid."""
    problems = []
    if not g.nodes:
        problems.append("empty graph: at least one node is required")
    kinds = {}
    for node in g.nodes:
        if node.id in kinds:
            problems.append(f"duplicate id: {node.id!r}")
            continue
        if not isinstance(node.kind, NodeKind):
            problems.append(f"node {node.id!r}: invalid kind {node.kind!r}")
        kinds[node.id] = node.kind
        if node.embedding is not None:
            vals = node.embedding
            if len(vals) == 0 or not all(_finite(v) for v in vals):
                problems.append(f"node {node.id!r}: embedding must be a non-empty finite vector")
    for s, t in g.edges:
        edge = f"edge {s!r}->{t!r}"
        missing = [x for x in (s, t) if x not in kinds]
        if missing:
            problems.append(f"dangling {edge}: unknown node {missing[0]!r}")
            continue
        if s == t:
            problems.append(f"self-loop {edge}")
            continue
        pair = (kinds[s], kinds[t])
        if pair not in ALLOWED_EDGE_KINDS:
            problems.append(f"forbidden {edge}: {pair[0].value} -> {pair[1].value}")
    return problems


def _finite(x) -> bool:
    try:
        x = float(x)
    except (TypeError, ValueError):
        return False
    return x == x and x not in (float("inf"), float("-inf"))


def typed_neighbors(g: SceneGraph, node_id: str, kinds: Optional[Iterable[NodeKind]] = None) -> list[str]:
    """Ids adjacent to ``node_id`` (either direction) whose kind is in ``kinds``.

    With ``kinds=None`` the default role for the node's own kind applies:
    relations and attributes see objects, objects see relations and attributes.
    """
    own = g.node(node_id).kind
    allowed = DEFAULT_NEIGHBOR_KINDS[own] if kinds is None else frozenset(kinds)
    return [k for k in g._adjacency[node_id] if g.node(k).kind in allowed]


def neighbor_indices(g: SceneGraph) -> list[list[int]]:
    """Default typed neighbor lists as row indices, one list per node."""
    return [[g.index(k) for k in typed_neighbors(g, n.id)] for n in g.nodes]


# -- serialization ----------------------------------------------------------


def graph_from_dict(doc, source: str = "") -> SceneGraph:
    where = f"{source}: " if source else ""
    if not isinstance(doc, dict):
        raise GraphParseError(f"{where}top level must be an object")
    raw_nodes = doc.get("nodes")
    raw_edges = doc.get("edges", [])
    if not isinstance(raw_nodes, list):
        raise GraphParseError(f"{where}'nodes' must be an array")
    if not isinstance(raw_edges, list):
        raise GraphParseError(f"{where}'edges' must be an array")
    nodes = []
    for i, item in enumerate(raw_nodes):
        if not isinstance(item, dict) or "id" not in item or "kind" not in item:
            raise GraphParseError(f"{where}nodes[{i}] needs 'id' and 'kind'")
        try:
            kind = NodeKind.parse(item["kind"])
        except GraphParseError as exc:
            raise GraphParseError(f"{where}nodes[{i}] ({item['id']!r}): {exc}") from None
        emb = item.get("embedding")
        if emb is not None:
            if not isinstance(emb, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in emb
            ):
                raise GraphParseError(f"{where}nodes[{i}] ({item['id']!r}): embedding must be a list of numbers")
            emb = tuple(float(v) for v in emb)
        label = item.get("label", item["id"])
        nodes.append(Node(str(item["id"]), kind, str(label), emb))
    edges = []
    for i, e in enumerate(raw_edges):
        if not isinstance(e, list) or len(e) != 2:
            raise GraphParseError(f"{where}edges[{i}] must be a [source, target] pair")
        edges.append((str(e[0]), str(e[1])))
    g = SceneGraph(tuple(nodes), tuple(edges))
    problems = validate_graph(g)
    if problems:
        raise GraphValidationError(problems, source)
    return g


def graph_to_dict(g: SceneGraph) -> dict:
    nodes = []
    for n in g.nodes:
        item = {"id": n.id, "kind": n.kind.value, "label": n.label}
        if n.embedding is not None:
            item["embedding"] = list(n.embedding)
        nodes.append(item)
    return {"nodes": nodes, "edges": [[s, t] for s, t in g.edges]}


def load_graph(source: Union[str, bytes, os.PathLike, IO]) -> SceneGraph:
    """Parse and validate a scene graph from a path, a byte/text stream,
    or raw bytes."""
    name = ""
    if isinstance(source, (str, os.PathLike)) and not isinstance(source, bytes):
        name = str(source)
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, bytes):
        data = source
    else:
        name = getattr(source, "name", "") or ""
        data = source.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise GraphParseError(f"{name}: not UTF-8 ({exc})") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{name}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return graph_from_dict(doc, name)


def dumps_graph(g: SceneGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=2, ensure_ascii=False) + "\n"


def dump_graph(g: SceneGraph, target: Union[str, os.PathLike, IO]) -> None:
    text = dumps_graph(g)
    if isinstance(target, (str, os.PathLike)):
        Path(target).write_text(text, encoding="utf-8")
    else:
        target.write(text)


# -- corpus manifest --------------------------------------------------------


@dataclass(frozen=True)
class DescribedPair:
    id: str
    image: SceneGraph
    sentence: SceneGraph


@dataclass(frozen=True)
class Bag:
    """One undescribed image: raw graph first, then K augmented views, each
    with its generated-sentence graph at the same position."""

    id: str
    images: tuple[SceneGraph, ...]
    sentences: tuple[SceneGraph, ...]

    @property
    def k(self) -> int:
        return len(self.images) - 1


@dataclass(frozen=True)
class CorpusManifest:
    described: tuple[DescribedPair, ...] = ()
    undescribed: tuple[Bag, ...] = ()


def load_manifest(path: Union[str, os.PathLike]) -> CorpusManifest:
    """Load a manifest and every graph it references.

    Paths inside the manifest are relative to the manifest's directory::

        {"described": [{"id": "p0", "image": "img.json", "sentence": "sen.json"}],
         "undescribed": [{"id": "b0", "images": ["raw.json", "aug1.json"],
                          "sentences": ["s0.json", "s1.json"]}]}

    Errors name the offending example id.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise GraphParseError(f"{path}: manifest must be an object")
    base = path.parent

    def read(example: str, rel) -> SceneGraph:
        if not isinstance(rel, str):
            raise GraphParseError(f"{path}: example {example!r}: graph path must be a string")
        full = base / rel
        try:
            return load_graph(full)
        except FileNotFoundError:
            raise GraphParseError(f"example {example!r}: missing graph file {full}") from None
        except GraphValidationError as exc:
            raise GraphValidationError(exc.violations, f"example {example!r} ({full})") from None
        except GraphParseError as exc:
            raise GraphParseError(f"example {example!r}: {exc}") from None

    described = []
    for i, item in enumerate(doc.get("described", [])):
        ex = str(item.get("id", f"described[{i}]"))
        described.append(DescribedPair(ex, read(ex, item.get("image")), read(ex, item.get("sentence"))))
    bags = []
    for i, item in enumerate(doc.get("undescribed", [])):
        ex = str(item.get("id", f"undescribed[{i}]"))
        images = item.get("images", [])
        sentences = item.get("sentences", [])
        if not isinstance(images, list) or not isinstance(sentences, list):
            raise GraphParseError(f"{path}: example {ex!r}: 'images' and 'sentences' must be arrays")
        if not images or len(images) != len(sentences):
            raise GraphValidationError(
                [f"bag needs K+1 images and K+1 sentences, got {len(images)} and {len(sentences)}"],
                f"example {ex!r}",
            )
        bags.append(
            Bag(ex, tuple(read(ex, p) for p in images), tuple(read(ex, p) for p in sentences))
        )
    return CorpusManifest(tuple(described), tuple(bags))
