"""Tiny synthetic graph-text world for fast end-to-end runs.

The verbalization rule is deterministic and invertible ("s p o and s p o .")
so both directions are learnable by a small model in seconds, which makes
the world suitable for overfit checks and pipeline smoke runs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import ParallelCorpus, ParallelExample, UnlabeledCorpus
from .graph_codec import KnowledgeGraph, Triple, linearize_graph

ENTITIES = ("alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi")
PREDICATES = ("likes", "knows", "visits", "helps")


def verbalize(graph: KnowledgeGraph) -> str:
    clauses = [
        f"{t.subject} {t.predicate} {t.object}" for t in graph.triples
    ]
    return " and ".join(clauses) + " ."


def _random_graph(rng: random.Random, max_triples: int) -> KnowledgeGraph:
    n = rng.randint(1, max_triples)
    triples = []
    for _ in range(n):
        subject = rng.choice(ENTITIES)
        obj = rng.choice([e for e in ENTITIES if e != subject])
        triples.append(Triple(subject, rng.choice(PREDICATES), obj))
    return KnowledgeGraph(tuple(triples))


@dataclass(frozen=True)
class ToyWorld:
    train: ParallelCorpus
    held_out: ParallelCorpus
    pools: UnlabeledCorpus


def build_toy_world(
    n_train: int = 16,
    n_held_out: int = 8,
    n_pool: int = 64,
    seed: int = 13,
    max_triples: int = 2,
) -> ToyWorld:
    """Disjoint train/held-out parallel sets plus non-parallel pools.

    The pool texts and pool graphs come from different underlying graphs,
    so the unlabeled material is genuinely non-parallel.
    """
    rng = random.Random(seed)
    graphs: list[KnowledgeGraph] = []
    seen: set[str] = set()
    needed = n_train + n_held_out + n_pool
    while len(graphs) < needed:
        graph = _random_graph(rng, max_triples)
        key = linearize_graph(graph)
        if key not in seen:
            seen.add(key)
            graphs.append(graph)
    def parallel(block: list[KnowledgeGraph]) -> ParallelCorpus:
        return ParallelCorpus(
            tuple(
                ParallelExample(graph=g, text=verbalize(g), category="toy")
                for g in block
            )
        )
    train = parallel(graphs[:n_train])
    held_out = parallel(graphs[n_train : n_train + n_held_out])
    pool_graphs = graphs[n_train + n_held_out :]
    half = len(pool_graphs) // 2
    pools = UnlabeledCorpus(
        texts=tuple(verbalize(g) for g in pool_graphs[:half]),
        graphs=tuple(pool_graphs[half:]),
    )
    return ToyWorld(train=train, held_out=held_out, pools=pools)


def toy_vocab_corpus(world: ToyWorld) -> list[str]:
    """All strings a vocabulary must cover for this world."""
    strings = []
    for corpus in (world.train, world.held_out):
        for example in corpus:
            strings.append(example.text)
            strings.append(linearize_graph(example.graph))
    strings.extend(world.pools.texts)
    strings.extend(linearize_graph(g) for g in world.pools.graphs)
    return strings
