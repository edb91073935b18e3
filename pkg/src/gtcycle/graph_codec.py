"""Triples, graphs, and the linearized wire format shared by every component.

A knowledge graph travels through the system as a single line of text:

    <S> subject <P> predicate <O> object <S> ...

``<S>``, ``<P>``, ``<O>`` open the three fields of one triple; triples repeat
in list order.  The format round-trips exactly (``parse_graph(linearize_graph(g))
== g``) because the three markers are banned from field content.

Task prefixes ("generate text:" / "generate graph:") select the output
modality of the shared model.  They appear only at the start of model
inputs, never inside targets, so the model cannot satisfy both directions
with the identity map.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

SUBJECT_MARKER = "<S>"
PREDICATE_MARKER = "<P>"
OBJECT_MARKER = "<O>"
DELIMITERS = (SUBJECT_MARKER, PREDICATE_MARKER, OBJECT_MARKER)

MAX_TRIPLES = 6


class CodecError(ValueError):
    """A triple, graph, or task prefix violates the wire-format contract."""


class NoTriplesRecoverable(CodecError):
    """Not a single complete ``<S> .. <P> .. <O> ..`` block could be recovered."""


@dataclass(frozen=True)
class TaskToken:
    """Fixed input prefix telling the shared model which modality to produce."""

    variant: str
    surface: str


G2T_TOKEN = TaskToken("G2T", "generate text:")
T2G_TOKEN = TaskToken("T2G", "generate graph:")
TASK_TOKENS = (G2T_TOKEN, T2G_TOKEN)

# Strings that may never occur inside a triple field: the three field markers
# (they structure the line format) and the two task surfaces (no target string
# may ever contain a task surface).
RESERVED_SUBSTRINGS = DELIMITERS + tuple(t.surface for t in TASK_TOKENS)


def _validate_field(name: str, value: str) -> None:
    if not isinstance(value, str) or not value.strip():
        raise CodecError(f"triple {name} must be a non-empty string")
    if value != value.strip():
        raise CodecError(
            f"triple {name} must not carry leading/trailing whitespace: {value!r}"
        )
    if any(c in value for c in "\n\r\t"):
        raise CodecError(f"triple {name} must stay on one line: {value!r}")
    for reserved in RESERVED_SUBSTRINGS:
        if reserved in value:
            raise CodecError(f"triple {name} contains reserved token {reserved!r}")


@dataclass(frozen=True)
class Triple:
    """One subject-predicate-object fact.

    Fields are trimmed, single-line, non-empty strings free of the reserved
    markers; that is exactly the set of strings the line format can carry
    losslessly (interior runs of spaces included).
    """

    subject: str
    predicate: str
    object: str

    def __post_init__(self) -> None:
        _validate_field("subject", self.subject)
        _validate_field("predicate", self.predicate)
        _validate_field("object", self.object)


@dataclass(frozen=True)
class KnowledgeGraph:
    """An ordered list of 1..6 triples.

    Equality is order-sensitive and field-exact here; the order-insensitive,
    normalized view used for scoring lives in the metrics module.
    """

    triples: tuple[Triple, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "triples", tuple(self.triples))
        if not 1 <= len(self.triples) <= MAX_TRIPLES:
            raise CodecError(
                f"graph must hold 1..{MAX_TRIPLES} triples, got {len(self.triples)}"
            )
        for t in self.triples:
            if not isinstance(t, Triple):
                raise CodecError(f"graph items must be Triple, got {type(t).__name__}")

    def __len__(self) -> int:
        return len(self.triples)


def linearize_graph(graph: KnowledgeGraph) -> str:
    """Render a graph as one ``<S> s <P> p <O> o ...`` line.

    Field validity (no reserved markers, no newlines) is enforced when the
    Triple/KnowledgeGraph values are constructed, so the output is always a
    single line that parses back to the identical graph.
    """
    if not isinstance(graph, KnowledgeGraph):
        raise CodecError(f"expected KnowledgeGraph, got {type(graph).__name__}")
    parts = [
        f"{SUBJECT_MARKER} {t.subject} {PREDICATE_MARKER} {t.predicate} "
        f"{OBJECT_MARKER} {t.object}"
        for t in graph.triples
    ]
    return " ".join(parts)


_BLOCK_RE = re.compile(
    re.escape(SUBJECT_MARKER)
    + r"(.*?)"
    + re.escape(PREDICATE_MARKER)
    + r"(.*?)"
    + re.escape(OBJECT_MARKER)
    + r"(.*?)(?="
    + re.escape(SUBJECT_MARKER)
    + r"|$)",
    re.S,
)


def parse_graph(s: str) -> KnowledgeGraph:
    """Parse a linearized line back into a graph, recovering what it can.

    Model output is frequently malformed, especially early in cycle training,
    so parsing is permissive: complete blocks are collected left to right,
    fields are trimmed, a trailing incomplete block is dropped, blocks with an
    empty or otherwise invalid field are dropped, and anything past the sixth
    complete block is ignored.  Raises ``NoTriplesRecoverable`` only when not
    a single complete block survives.
    """
    triples: list[Triple] = []
    for raw_s, raw_p, raw_o in _BLOCK_RE.findall(s or ""):
        fields = (raw_s.strip(), raw_p.strip(), raw_o.strip())
        if not all(fields):
            continue
        try:
            triples.append(Triple(*fields))
        except CodecError:
            continue
        if len(triples) == MAX_TRIPLES:
            break
    if not triples:
        raise NoTriplesRecoverable(f"no complete triple in {s!r}")
    return KnowledgeGraph(tuple(triples))


def prefix_task(token: TaskToken, x: str) -> str:
    """Prepend a task surface to a model input.

    Refuses to stack prefixes: the surfaces mark the input space only, and a
    string that already starts with one is already an input, not a payload.
    """
    for t in TASK_TOKENS:
        if x.startswith(t.surface):
            raise CodecError(f"input already starts with task token {t.surface!r}")
    return f"{token.surface} {x}"
