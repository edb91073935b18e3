"""Corpus containers and loaders.

Parallel data pairs a knowledge graph with one reference text; an entry
whose graph has several reference texts appears once per text, and the
graph-to-text view regroups them. Unlabeled pools are plain line files:
one text per line, or one linearized graph per line.

Two parallel formats are supported: benchmark XML (entries carrying a
category, a modifiedtripleset of "s | p | o" triples, and one or more lex
strings) and a tab-separated fallback of
``linearized-graph TAB text [TAB category [TAB split]]``.
"""

from __future__ import annotations

import random
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from .graph_codec import (
    CodecError,
    KnowledgeGraph,
    Triple,
    linearize_graph,
    parse_graph,
)

SPLIT_SEEN = "seen"
SPLIT_UNSEEN_ENTITIES = "unseen_entities"
SPLIT_UNSEEN_CATEGORIES = "unseen_categories"


class CorpusError(ValueError):
    """Malformed corpus file or invalid corpus operation."""


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


@dataclass(frozen=True)
class ParallelExample:
    graph: KnowledgeGraph
    text: str
    category: str = ""
    split: str = ""


@dataclass(frozen=True)
class ParallelCorpus:
    examples: tuple[ParallelExample, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "examples", tuple(self.examples))

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def categories(self) -> set[str]:
        return {example.category for example in self.examples}

    def entities(self) -> set[str]:
        """Normalized subject and object surface forms."""
        out: set[str] = set()
        for example in self.examples:
            for triple in example.graph.triples:
                out.add(_normalize(triple.subject))
                out.add(_normalize(triple.object))
        return out

    def g2t_instances(self) -> list[tuple[KnowledgeGraph, list[str]]]:
        """One instance per distinct graph, with all its reference texts.

        Graphs are keyed by their linearization; first-occurrence order
        is preserved.
        """
        order: list[str] = []
        grouped: dict[str, tuple[KnowledgeGraph, list[str]]] = {}
        for example in self.examples:
            key = linearize_graph(example.graph)
            if key not in grouped:
                grouped[key] = (example.graph, [])
                order.append(key)
            grouped[key][1].append(example.text)
        return [grouped[key] for key in order]

    def t2g_instances(self) -> list[tuple[str, KnowledgeGraph]]:
        """One instance per example text."""
        return [(example.text, example.graph) for example in self.examples]


def _triple_from_benchmark(raw: str, where: str) -> Triple:
    parts = [part.strip() for part in raw.split("|")]
    if len(parts) != 3:
        raise CorpusError(f"{where}: triple needs 3 '|'-separated fields: {raw!r}")
    try:
        return Triple(parts[0], parts[1], parts[2])
    except CodecError as exc:
        raise CorpusError(f"{where}: {exc}") from exc


def _load_webnlg_xml(path: Path) -> ParallelCorpus:
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise CorpusError(f"{path}: not well-formed XML: {exc}") from exc
    examples: list[ParallelExample] = []
    for n, entry in enumerate(tree.getroot().iter("entry"), start=1):
        where = f"{path}: entry {n}"
        category = entry.get("category", "")
        tripleset = entry.find("modifiedtripleset")
        if tripleset is None:
            raise CorpusError(f"{where}: missing modifiedtripleset")
        triples = [
            _triple_from_benchmark(m.text or "", where)
            for m in tripleset.iter("mtriple")
        ]
        if not triples:
            raise CorpusError(f"{where}: empty modifiedtripleset")
        try:
            graph = KnowledgeGraph(tuple(triples))
        except CodecError as exc:
            raise CorpusError(f"{where}: {exc}") from exc
        texts = [
            " ".join(lex.text.split())
            for lex in entry.iter("lex")
            if lex.text and lex.text.strip()
        ]
        if not texts:
            raise CorpusError(f"{where}: entry has no lexicalization")
        for text in texts:
            examples.append(ParallelExample(graph=graph, text=text, category=category))
    if not examples:
        raise CorpusError(f"{path}: no entries found")
    return ParallelCorpus(tuple(examples))


def _load_tsv(path: Path) -> ParallelCorpus:
    examples: list[ParallelExample] = []
    with open(path, encoding="utf-8") as handle:
        for n, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if not 2 <= len(fields) <= 4:
                raise CorpusError(
                    f"{path}:{n}: expected 2..4 tab-separated fields, got {len(fields)}"
                )
            try:
                graph = parse_graph(fields[0])
            except CodecError as exc:
                raise CorpusError(f"{path}:{n}: bad graph field: {exc}") from exc
            text = fields[1].strip()
            if not text:
                raise CorpusError(f"{path}:{n}: empty text field")
            examples.append(
                ParallelExample(
                    graph=graph,
                    text=text,
                    category=fields[2] if len(fields) > 2 else "",
                    split=fields[3] if len(fields) > 3 else "",
                )
            )
    if not examples:
        raise CorpusError(f"{path}: no examples found")
    return ParallelCorpus(tuple(examples))


def load_parallel(path: str | Path, fmt: str = "webnlg_xml") -> ParallelCorpus:
    path = Path(path)
    if fmt == "webnlg_xml":
        return _load_webnlg_xml(path)
    if fmt == "tsv_lines":
        return _load_tsv(path)
    raise CorpusError(f"unknown parallel format {fmt!r}")


def save_parallel_tsv(path: str | Path, corpus: ParallelCorpus) -> None:
    lines = []
    for example in corpus.examples:
        for name, value in (("text", example.text), ("category", example.category),
                            ("split", example.split)):
            if "\t" in value or "\n" in value:
                raise CorpusError(f"{name} field contains tab or newline: {value!r}")
        lines.append(
            "\t".join(
                (linearize_graph(example.graph), example.text, example.category,
                 example.split)
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def assign_test_split_tags(
    train: ParallelCorpus, test: ParallelCorpus
) -> list[str]:
    """Classify each test example against the training corpus.

    A category never seen in training wins over entity novelty; otherwise
    one unseen subject or object entity marks the example, and the rest
    are fully seen. Entity comparison is casefolded with collapsed
    whitespace.
    """
    train_categories = train.categories()
    train_entities = train.entities()
    tags = []
    for example in test.examples:
        if example.category not in train_categories:
            tags.append(SPLIT_UNSEEN_CATEGORIES)
            continue
        entities = set()
        for triple in example.graph.triples:
            entities.add(_normalize(triple.subject))
            entities.add(_normalize(triple.object))
        if entities - train_entities:
            tags.append(SPLIT_UNSEEN_ENTITIES)
        else:
            tags.append(SPLIT_SEEN)
    return tags


def subset_supervised(
    corpus: ParallelCorpus, fraction: float, seed: int
) -> tuple[ParallelCorpus, ParallelCorpus]:
    """Deterministic split into (supervised, remainder).

    The supervised part holds round(n * fraction) examples, at least one
    when the fraction is positive; both parts keep original corpus order.
    """
    if not 0.0 <= fraction <= 1.0:
        raise CorpusError(f"fraction must be in [0, 1], got {fraction}")
    n = len(corpus.examples)
    k = round(n * fraction)
    if fraction > 0.0 and k == 0:
        k = 1
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    chosen = set(indices[:k])
    supervised = tuple(e for i, e in enumerate(corpus.examples) if i in chosen)
    remainder = tuple(e for i, e in enumerate(corpus.examples) if i not in chosen)
    return ParallelCorpus(supervised), ParallelCorpus(remainder)


# ----------------------------------------------------------------------
# unlabeled pools


@dataclass(frozen=True)
class UnlabeledCorpus:
    """Non-parallel pools drawn from during cycle training."""

    texts: tuple[str, ...] = field(default_factory=tuple)
    graphs: tuple[KnowledgeGraph, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "texts", tuple(self.texts))
        object.__setattr__(self, "graphs", tuple(self.graphs))


def load_text_pool(path: str | Path) -> list[str]:
    texts = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                texts.append(line)
    return texts


def save_text_pool(path: str | Path, texts: list[str]) -> None:
    for text in texts:
        if "\n" in text:
            raise CorpusError(f"pool text contains newline: {text!r}")
        if not text.strip():
            raise CorpusError("pool text is empty")
    Path(path).write_text(
        "".join(text.strip() + "\n" for text in texts), encoding="utf-8"
    )


def load_graph_pool(path: str | Path) -> list[KnowledgeGraph]:
    graphs = []
    with open(path, encoding="utf-8") as handle:
        for n, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                graphs.append(parse_graph(line))
            except CodecError as exc:
                raise CorpusError(f"{path}:{n}: {exc}") from exc
    return graphs


def save_graph_pool(path: str | Path, graphs: list[KnowledgeGraph]) -> None:
    Path(path).write_text(
        "".join(linearize_graph(g) + "\n" for g in graphs), encoding="utf-8"
    )


def dedup_texts(texts: list[str]) -> list[str]:
    """Drop later duplicates under casefolded, whitespace-collapsed comparison."""
    seen: set[str] = set()
    out = []
    for text in texts:
        key = _normalize(text)
        if key not in seen:
            seen.add(key)
            out.append(text)
    return out


def dedup_graphs(graphs: list[KnowledgeGraph]) -> list[KnowledgeGraph]:
    """Drop later duplicates; triple order matters, field normalization as for texts."""
    seen: set[tuple] = set()
    out = []
    for graph in graphs:
        key = tuple(
            (_normalize(t.subject), _normalize(t.predicate), _normalize(t.object))
            for t in graph.triples
        )
        if key not in seen:
            seen.add(key)
            out.append(graph)
    return out


# ----------------------------------------------------------------------
# iteration draws


def _permutation(n: int, seed: int, round_index: int) -> list[int]:
    indices = list(range(n))
    random.Random(seed * 1_000_003 + round_index).shuffle(indices)
    return indices


def draw_iteration(items: list, count: int, iteration: int, seed: int) -> list:
    """Deterministic sample of `count` distinct items for one iteration.

    Conceptually the pool is reshuffled into an endless stream (a fresh
    permutation per round, seeded by round index) and iteration i takes
    stream positions [i*count, (i+1)*count). A draw that crosses a
    reshuffle boundary skips items it already holds, pulling further
    into the new permutation instead, so every draw has distinct items.
    """
    if count <= 0:
        raise CorpusError(f"draw count must be positive, got {count}")
    if iteration < 0:
        raise CorpusError(f"iteration must be >= 0, got {iteration}")
    if count > len(items):
        raise CorpusError(
            f"cannot draw {count} distinct items from a pool of {len(items)}"
        )
    start = iteration * count
    round_index, position = divmod(start, len(items))
    taken: set[int] = set()
    drawn: list = []
    while len(drawn) < count:
        perm = _permutation(len(items), seed, round_index)
        while position < len(items) and len(drawn) < count:
            index = perm[position]
            position += 1
            if index in taken:
                continue
            taken.add(index)
            drawn.append(items[index])
        round_index += 1
        position = 0
    return drawn
