"""Depth-first knowledge-base crawler that builds non-parallel pools.

Starting from origin entity ids, the crawler pops an explicit stack
(children are pushed in retrieval order, so the most recently retrieved
neighbor is explored first), fetches the entity's outgoing labeled
triples and a few free-text paragraphs, and yields one record per
entity. Visited ids persist to an append-only file so interrupted crawls
resume without refetching.

Transports hide the data source: HttpTransport speaks live SPARQL and a
wiki extracts API with rate limiting and retry backoff; FixtureTransport
replays JSON files from disk for fully offline, deterministic runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .corpus import UnlabeledCorpus, dedup_graphs, dedup_texts
from .graph_codec import MAX_TRIPLES, CodecError, KnowledgeGraph, Triple

_SPARQL_QUERY = """\
SELECT ?propLabel ?objLabel ?obj ?article WHERE {{
  wd:{qid} ?directClaim ?obj .
  ?prop wikibase:directClaim ?directClaim .
  OPTIONAL {{
    ?article schema:about wd:{qid} ;
             schema:isPartOf <https://en.wikipedia.org/> .
  }}
  SERVICE wikibase:label {{ bd:serviceParam wikibase:language "en". }}
}}
"""

_ENTITY_PREFIX = "http://www.wikidata.org/entity/"


class CrawlError(RuntimeError):
    """Transport failure or unusable crawl input."""


@dataclass(frozen=True)
class CrawlConfig:
    max_depth: int = 5
    max_paragraphs: int = 4
    rate_limit_per_sec: float = 2.0
    max_retries: int = 3
    sparql_endpoint: str = "https://query.wikidata.org/sparql"
    wiki_endpoint: str = "https://en.wikipedia.org/w/api.php"
    user_agent: str = "graph-text-crawler/0.1"

    def __post_init__(self) -> None:
        if self.max_depth < 0:
            raise CrawlError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.max_paragraphs < 1:
            raise CrawlError(
                f"max_paragraphs must be >= 1, got {self.max_paragraphs}"
            )
        if self.rate_limit_per_sec <= 0:
            raise CrawlError("rate_limit_per_sec must be positive")
        if self.max_retries < 0:
            raise CrawlError("max_retries must be >= 0")


@dataclass(frozen=True)
class EntityPage:
    """Everything a transport returns for one entity."""

    qid: str
    label: str
    article: str | None
    rows: tuple[dict, ...]


@dataclass(frozen=True)
class CrawlRecord:
    qid: str
    label: str
    depth: int
    triples: tuple[Triple, ...]
    paragraphs: tuple[str, ...]


def slugify(title: str) -> str:
    return title.strip().replace(" ", "_")


class FixtureTransport:
    """Replays a crawl from JSON files under a fixture root.

    Layout: sparql/{qid}.json holds
    {"label": ..., "article": ... or null,
     "rows": [{"predicate": ..., "object_label": ..., "object_qid": ... or null}]}
    and wiki/{slug}.json holds {"paragraphs": [...]}.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def fetch_entity(self, qid: str) -> EntityPage:
        path = self.root / "sparql" / f"{qid}.json"
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise CrawlError(f"no fixture for entity {qid}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CrawlError(f"{path}: invalid JSON: {exc}") from exc
        return EntityPage(
            qid=qid,
            label=data["label"],
            article=data.get("article"),
            rows=tuple(data.get("rows", ())),
        )

    def fetch_paragraphs(self, article: str) -> list[str]:
        path = self.root / "wiki" / f"{slugify(article)}.json"
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise CrawlError(f"no fixture for article {article!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CrawlError(f"{path}: invalid JSON: {exc}") from exc
        return list(data.get("paragraphs", ()))


class HttpTransport:
    """Live transport with a request-interval rate limit and retry backoff."""

    def __init__(self, config: CrawlConfig, sleep=time.sleep, clock=time.monotonic):
        import requests

        self.config = config
        self.session = requests.Session()
        self.session.headers["User-Agent"] = config.user_agent
        self._sleep = sleep
        self._clock = clock
        self._last_request = -float("inf")

    def _throttle(self) -> None:
        interval = 1.0 / self.config.rate_limit_per_sec
        wait = self._last_request + interval - self._clock()
        if wait > 0:
            self._sleep(wait)
        self._last_request = self._clock()

    def _get_json(self, url: str, params: dict) -> dict:
        import requests

        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(2.0 ** (attempt - 1))
            self._throttle()
            try:
                response = self.session.get(url, params=params, timeout=60)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code == 200:
                try:
                    return response.json()
                except ValueError as exc:
                    last_error = exc
                    continue
            if response.status_code in (429, 500, 502, 503, 504):
                last_error = CrawlError(f"HTTP {response.status_code} from {url}")
                continue
            raise CrawlError(f"HTTP {response.status_code} from {url}")
        raise CrawlError(f"request to {url} failed after retries: {last_error}")

    def fetch_entity(self, qid: str) -> EntityPage:
        data = self._get_json(
            self.config.sparql_endpoint,
            {"query": _SPARQL_QUERY.format(qid=qid), "format": "json"},
        )
        label = qid
        article = None
        rows = []
        for binding in data.get("results", {}).get("bindings", ()):
            prop = binding.get("propLabel", {}).get("value", "")
            obj_label = binding.get("objLabel", {}).get("value", "")
            obj = binding.get("obj", {})
            object_qid = None
            if obj.get("type") == "uri" and obj.get("value", "").startswith(
                _ENTITY_PREFIX
            ):
                object_qid = obj["value"][len(_ENTITY_PREFIX) :]
            if binding.get("article", {}).get("value") and article is None:
                article = binding["article"]["value"].rsplit("/", 1)[-1]
            if prop and obj_label:
                rows.append(
                    {
                        "predicate": prop,
                        "object_label": obj_label,
                        "object_qid": object_qid,
                    }
                )
        label_data = self._get_json(
            self.config.sparql_endpoint,
            {
                "query": (
                    f'SELECT ?l WHERE {{ wd:{qid} rdfs:label ?l . '
                    'FILTER(LANG(?l) = "en") }'
                ),
                "format": "json",
            },
        )
        bindings = label_data.get("results", {}).get("bindings", ())
        if bindings:
            label = bindings[0].get("l", {}).get("value", qid)
        return EntityPage(qid=qid, label=label, article=article, rows=tuple(rows))

    def fetch_paragraphs(self, article: str) -> list[str]:
        data = self._get_json(
            self.config.wiki_endpoint,
            {
                "action": "query",
                "prop": "extracts",
                "explaintext": 1,
                "format": "json",
                "redirects": 1,
                "titles": article.replace("_", " "),
            },
        )
        pages = data.get("query", {}).get("pages", {})
        for page in pages.values():
            extract = page.get("extract")
            if extract:
                return [
                    line.strip()
                    for line in extract.split("\n")
                    if line.strip() and not line.strip().startswith("=")
                ]
        return []


def _rows_to_triples(label: str, rows: Iterable[dict]) -> list[Triple]:
    """Labeled rows to triples, dropping rows that cannot form a valid one."""
    triples = []
    for row in rows:
        try:
            triples.append(
                Triple(label, str(row.get("predicate", "")), str(row.get("object_label", "")))
            )
        except CodecError:
            continue
    return triples


def _load_visited(path: Path) -> set[str]:
    if not path.exists():
        return set()
    return {
        line.strip()
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    }


def crawl(
    origins: list[str],
    transport,
    config: CrawlConfig,
    visited_path: str | Path | None = None,
) -> Iterator[CrawlRecord]:
    """Depth-first traversal from origin ids, one record per new entity.

    Origins enter at depth 0 and are processed in the order given; a
    child is pushed only while its depth would not exceed max_depth.
    The visited file, when given, is read on start and appended as
    entities complete, so the same id is never fetched twice across runs.
    """
    if not origins:
        raise CrawlError("no origin entities")
    visited: set[str] = set()
    handle = None
    if visited_path is not None:
        visited_path = Path(visited_path)
        visited = _load_visited(visited_path)
        handle = open(visited_path, "a", encoding="utf-8")
    try:
        stack: list[tuple[str, int]] = [(qid, 0) for qid in reversed(origins)]
        while stack:
            qid, depth = stack.pop()
            if qid in visited:
                continue
            page = transport.fetch_entity(qid)
            visited.add(qid)
            if handle is not None:
                handle.write(qid + "\n")
                handle.flush()
            triples = _rows_to_triples(page.label, page.rows)
            paragraphs: tuple[str, ...] = ()
            if page.article:
                fetched = transport.fetch_paragraphs(page.article)
                paragraphs = tuple(fetched[: config.max_paragraphs])
            if depth + 1 <= config.max_depth:
                for row in page.rows:
                    child = row.get("object_qid")
                    if child and child not in visited:
                        stack.append((child, depth + 1))
            yield CrawlRecord(
                qid=qid,
                label=page.label,
                depth=depth,
                triples=tuple(triples),
                paragraphs=paragraphs,
            )
    finally:
        if handle is not None:
            handle.close()


def build_pools(records: Iterable[CrawlRecord]) -> UnlabeledCorpus:
    """Non-parallel pools from crawl records.

    Each record's triples are chunked into graphs of at most the codec
    limit, in order; each paragraph becomes one text instance. Both pools
    are deduplicated under normalized comparison.
    """
    graphs: list[KnowledgeGraph] = []
    texts: list[str] = []
    for record in records:
        for start in range(0, len(record.triples), MAX_TRIPLES):
            chunk = record.triples[start : start + MAX_TRIPLES]
            if chunk:
                graphs.append(KnowledgeGraph(chunk))
        for paragraph in record.paragraphs:
            cleaned = " ".join(paragraph.split())
            if cleaned:
                texts.append(cleaned)
    return UnlabeledCorpus(
        texts=tuple(dedup_texts(texts)), graphs=tuple(dedup_graphs(graphs))
    )


def crawl_stats(records: list[CrawlRecord], pools: UnlabeledCorpus) -> dict:
    n_paragraphs = sum(len(r.paragraphs) for r in records)
    total_chars = sum(len(p) for r in records for p in r.paragraphs)
    return {
        "n_entities": len(records),
        "n_triples": sum(len(r.triples) for r in records),
        "n_paragraphs": n_paragraphs,
        "n_graph_instances": len(pools.graphs),
        "n_text_instances": len(pools.texts),
        "mean_paragraph_chars": (total_chars / n_paragraphs) if n_paragraphs else 0.0,
    }
