"""Document corpus, citation graph and query ingestion.

Canonical interchange is JSON lines, one record per line:

* documents: ``{"id": str, "title": str, "abstract": str, "date": "YYYY-MM-DD"}``
* edges:     ``{"citing": str, "cited": str, "context": str}``
* queries:   ``{"qid": str, "context": str, "title": str, "abstract": str,
  "date": "YYYY-MM-DD", "gold": str}``
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date as Date
from pathlib import Path

from .errors import NotFoundError, ParseError, ValidationError


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    abstract: str
    pub_date: Date


@dataclass(frozen=True)
class CitationEdge:
    citing_id: str
    cited_id: str
    context_text: str


@dataclass(frozen=True)
class Query:
    query_id: str
    context_text: str
    title: str
    abstract: str
    pub_date: Date
    gold_cited_id: str

    @property
    def source_doc_id(self) -> str:
        """Id of the citing paper this query was extracted from.

        Convention: query ids are ``<source_doc_id>#<n>`` for queries whose
        citing paper is itself a corpus document; ids without ``#`` are
        treated as their own source (typically absent from the corpus).
        """
        return self.query_id.rsplit("#", 1)[0] if "#" in self.query_id else self.query_id


@dataclass
class ValidationReport:
    """Ingestion tallies; ``edges_kept + dangling + self_loops`` covers all input edges."""

    n_documents: int = 0
    n_edges_input: int = 0
    n_edges_kept: int = 0
    n_dangling_dropped: int = 0
    n_self_loops_dropped: int = 0
    n_temporal_violations: int = 0
    n_empty_abstracts: int = 0

    def as_dict(self) -> dict:
        return {
            "documents": self.n_documents,
            "edges_input": self.n_edges_input,
            "edges_kept": self.n_edges_kept,
            "dangling_dropped": self.n_dangling_dropped,
            "self_loops_dropped": self.n_self_loops_dropped,
            "temporal_violations": self.n_temporal_violations,
            "empty_abstracts": self.n_empty_abstracts,
        }


@dataclass
class Corpus:
    """Validated documents plus citation edges; immutable after construction.

    The reverse index maps each cited document to the citing papers and the
    context snippets they cite it with, ordered by (citing_id, edge position)
    so repeated citations from the same paper keep their input order.
    """

    documents: dict[str, Document]
    edges: list[CitationEdge]
    _reverse: dict[str, list[tuple[str, str]]] = field(init=False, repr=False)

    def __post_init__(self):
        buckets: dict[str, list[tuple[str, int, str]]] = {}
        for pos, edge in enumerate(self.edges):
            buckets.setdefault(edge.cited_id, []).append(
                (edge.citing_id, pos, edge.context_text)
            )
        self._reverse = {
            cited: [(citing, ctx) for citing, _, ctx in sorted(entries, key=lambda e: (e[0], e[1]))]
            for cited, entries in buckets.items()
        }

    def __len__(self) -> int:
        return len(self.documents)

    def document(self, doc_id: str) -> Document:
        try:
            return self.documents[doc_id]
        except KeyError:
            raise NotFoundError(f"unknown document id {doc_id!r}") from None

    def inward_neighbors(self, doc_id: str) -> list[tuple[str, str]]:
        """All (citing_id, context) pairs citing ``doc_id``; [] when uncited."""
        if doc_id not in self.documents:
            raise NotFoundError(f"unknown document id {doc_id!r}")
        return list(self._reverse.get(doc_id, []))

    def doc_text(self, doc_id: str) -> str:
        doc = self.document(doc_id)
        return f"{doc.title} {doc.abstract}"


def inward_neighbors(corpus: Corpus, doc_id: str) -> list[tuple[str, str]]:
    return corpus.inward_neighbors(doc_id)


def _parse_date(raw, where: str) -> Date:
    if not isinstance(raw, str):
        raise ParseError(f"{where}: date must be a string, got {type(raw).__name__}")
    try:
        return Date.fromisoformat(raw)
    except ValueError:
        raise ParseError(f"{where}: invalid ISO-8601 date {raw!r}") from None


def _load_records(path: Path, required: dict[str, type]):
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise ParseError(f"{where}: expected a JSON object")
            for name, typ in required.items():
                if name not in record:
                    raise ParseError(f"{where}: missing field {name!r}")
                if not isinstance(record[name], typ):
                    raise ParseError(
                        f"{where}: field {name!r} must be {typ.__name__}"
                    )
            yield where, record


def ingest_corpus(documents_path: str | Path, edges_path: str | Path) -> tuple[Corpus, ValidationReport]:
    """Load and validate a corpus from JSONL files.

    Dangling edges (an endpoint missing from the documents file) and
    self-citations are dropped and counted. Edges whose citing paper predates
    the cited one are kept but counted as temporal violations: real corpora
    contain such noise and the inductive split handles it downstream.
    """
    report = ValidationReport()
    documents: dict[str, Document] = {}
    for where, rec in _load_records(
        Path(documents_path), {"id": str, "title": str, "abstract": str, "date": str}
    ):
        doc_id = rec["id"]
        if not doc_id:
            raise ParseError(f"{where}: empty document id")
        if doc_id in documents:
            raise ValidationError(f"{where}: duplicate document id {doc_id!r}")
        documents[doc_id] = Document(
            doc_id=doc_id,
            title=rec["title"],
            abstract=rec["abstract"],
            pub_date=_parse_date(rec["date"], where),
        )
        if not rec["abstract"].strip():
            report.n_empty_abstracts += 1
    report.n_documents = len(documents)

    edges: list[CitationEdge] = []
    for where, rec in _load_records(
        Path(edges_path), {"citing": str, "cited": str, "context": str}
    ):
        report.n_edges_input += 1
        citing, cited = rec["citing"], rec["cited"]
        if citing == cited:
            report.n_self_loops_dropped += 1
            continue
        if citing not in documents or cited not in documents:
            report.n_dangling_dropped += 1
            continue
        if documents[citing].pub_date < documents[cited].pub_date:
            report.n_temporal_violations += 1
        edges.append(CitationEdge(citing_id=citing, cited_id=cited, context_text=rec["context"]))
    report.n_edges_kept = len(edges)

    return Corpus(documents=documents, edges=edges), report


def load_queries(path: str | Path) -> list[Query]:
    queries: list[Query] = []
    seen: set[str] = set()
    for where, rec in _load_records(
        Path(path),
        {"qid": str, "context": str, "title": str, "abstract": str, "date": str, "gold": str},
    ):
        if not rec["qid"]:
            raise ParseError(f"{where}: empty query id")
        if rec["qid"] in seen:
            raise ValidationError(f"{where}: duplicate query id {rec['qid']!r}")
        if not rec["context"].strip():
            raise ValidationError(f"{where}: query context must be non-empty")
        if not rec["gold"]:
            raise ValidationError(f"{where}: gold cited id must be non-empty")
        seen.add(rec["qid"])
        queries.append(
            Query(
                query_id=rec["qid"],
                context_text=rec["context"],
                title=rec["title"],
                abstract=rec["abstract"],
                pub_date=_parse_date(rec["date"], where),
                gold_cited_id=rec["gold"],
            )
        )
    return queries


def write_documents(path: str | Path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents.values():
            fh.write(
                json.dumps(
                    {
                        "id": doc.doc_id,
                        "title": doc.title,
                        "abstract": doc.abstract,
                        "date": doc.pub_date.isoformat(),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def write_edges(path: str | Path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for edge in corpus.edges:
            fh.write(
                json.dumps(
                    {"citing": edge.citing_id, "cited": edge.cited_id, "context": edge.context_text},
                    ensure_ascii=False,
                )
                + "\n"
            )


def write_queries(path: str | Path, queries: list[Query]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(
                json.dumps(
                    {
                        "qid": q.query_id,
                        "context": q.context_text,
                        "title": q.title,
                        "abstract": q.abstract,
                        "date": q.pub_date.isoformat(),
                        "gold": q.gold_cited_id,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
