"""Item to knowledge-graph entity mapping and categorical feature extraction.

Features are the IRI objects reached in one hop from an item's entity through
a fixed set of predicates (by default ``dct:subject`` and ``rdf:type``).
They come either from an N-Triples dump or from a SPARQL endpoint.
"""

from __future__ import annotations

import bz2
import gzip
import hashlib
import json
import logging
import re
import time
from collections import defaultdict
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple, Union

from .exceptions import EmptyFeatureMapError, FormatError, ParseError, SparqlError
from .utils import atomic_write, id_key, parse_id

logger = logging.getLogger(__name__)

DCT_SUBJECT = "http://purl.org/dc/terms/subject"
RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"
DEFAULT_PREDICATES = frozenset({DCT_SUBJECT, RDF_TYPE})

FEATURE_MAP_HEADER = "#semauto-feature-map"
FEATURE_MAP_VERSION = 1

_ABSOLUTE_IRI = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*:[^\s<>\"{}|\\^`]+$")


def is_absolute_iri(value: str) -> bool:
    return bool(_ABSOLUTE_IRI.match(value))


class ItemFeatureMap(Mapping):
    """Read-only mapping ``item -> frozenset(feature IRIs)``.

    Items without features are not stored; for the recommender they are
    unknown to the graph.
    """

    def __init__(self, features: Optional[Mapping] = None):
        data = {}
        for item, feats in (features or {}).items():
            feats = frozenset(feats)
            if feats:
                data[item] = feats
        self._data: Dict = data
        self._vocabulary = frozenset().union(*data.values()) if data else frozenset()

    def __getitem__(self, item) -> FrozenSet[str]:
        return self._data[item]

    def __iter__(self):
        return iter(sorted(self._data, key=id_key))

    def __len__(self) -> int:
        return len(self._data)

    def __eq__(self, other) -> bool:
        if isinstance(other, ItemFeatureMap):
            return self._data == other._data
        if isinstance(other, Mapping):
            return self._data == {k: frozenset(v) for k, v in other.items()}
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._data.items()))

    def __repr__(self) -> str:
        return f"ItemFeatureMap(items={len(self)}, features={len(self._vocabulary)})"

    @property
    def vocabulary(self) -> FrozenSet[str]:
        return self._vocabulary

    def restrict(self, items: Iterable) -> "ItemFeatureMap":
        keep = set(items)
        return ItemFeatureMap({i: f for i, f in self._data.items() if i in keep})


# --------------------------------------------------------------------------
# Entity mapping
# --------------------------------------------------------------------------


@dataclass
class MappingStats:
    lines: int = 0
    accepted: int = 0
    rejected: int = 0
    shared_entities: int = 0


def parse_mapping(path: Union[str, Path], stats: Optional[MappingStats] = None) -> Dict:
    """Read ``item<TAB>title<TAB>IRI`` lines into ``item -> IRI``.

    Lines whose last field is not an absolute IRI are rejected and counted.
    Two items may share an entity; that is logged, not refused.
    """
    stats = stats if stats is not None else MappingStats()
    mapping: Dict = {}
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            stats.lines += 1
            parts = line.split("\t")
            iri = parts[-1].strip().strip("<>") if len(parts) >= 2 else ""
            if len(parts) < 2 or not is_absolute_iri(iri):
                stats.rejected += 1
                continue
            mapping[parse_id(parts[0])] = iri
    stats.accepted = len(mapping)
    by_entity: Dict[str, int] = defaultdict(int)
    for iri in mapping.values():
        by_entity[iri] += 1
    stats.shared_entities = sum(1 for c in by_entity.values() if c > 1)
    if stats.shared_entities:
        logger.warning("%s: %d entities are mapped by more than one item", path, stats.shared_entities)
    return mapping


# --------------------------------------------------------------------------
# N-Triples
# --------------------------------------------------------------------------

_IRI = r"<([^<>\"{}|^`\\\x00-\x20]*(?:\\[uU][0-9A-Fa-f]{4,8}[^<>\"{}|^`\\\x00-\x20]*)*)>"
_BNODE = r"(_:[A-Za-z0-9_\-.]+)"
_LITERAL = r"(\"(?:[^\"\\]|\\.)*\"(?:@[A-Za-z]+(?:-[A-Za-z0-9]+)*|\^\^" + _IRI.replace("(", "(?:", 1) + r")?)"
_TRIPLE = re.compile(
    r"^\s*(?:" + _IRI + "|" + _BNODE + r")\s*"
    + _IRI + r"\s*"
    r"(?:" + _IRI + "|" + _BNODE + "|" + _LITERAL + r")\s*\.\s*(?:#.*)?$"
)
_UESCAPE = re.compile(r"\\u([0-9A-Fa-f]{4})|\\U([0-9A-Fa-f]{8})")


def _unescape_iri(value: str) -> str:
    if "\\" not in value:
        return value
    return _UESCAPE.sub(lambda m: chr(int(m.group(1) or m.group(2), 16)), value)


@dataclass(frozen=True)
class Term:
    value: str
    kind: str  # "iri", "bnode" or "literal"


@dataclass
class TripleStats:
    lines: int = 0
    triples: int = 0
    skipped: int = 0
    matched: int = 0
    literal_objects: int = 0
    errors: List[str] = field(default_factory=list)


def parse_ntriples_line(line: str) -> Optional[Tuple[Term, str, Term]]:
    """Parse one N-Triples statement; ``None`` for blank or comment lines.

    Raises :class:`ParseError` on anything else that is not a triple.
    """
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    m = _TRIPLE.match(stripped)
    if m is None:
        raise ParseError(f"not an N-Triples statement: {stripped[:120]!r}")
    s_iri, s_bnode, pred, o_iri, o_bnode, o_lit = m.groups()
    subj = Term(_unescape_iri(s_iri), "iri") if s_iri is not None else Term(s_bnode, "bnode")
    if o_iri is not None:
        obj = Term(_unescape_iri(o_iri), "iri")
    elif o_bnode is not None:
        obj = Term(o_bnode, "bnode")
    else:
        obj = Term(o_lit, "literal")
    return subj, _unescape_iri(pred), obj


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    if path.endswith(".bz2"):
        return bz2.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, "r", encoding="utf-8", errors="replace")


def iter_ntriples(source, stats: Optional[TripleStats] = None) -> Iterator[Tuple[Term, str, Term]]:
    """Stream triples from a path (``.gz``/``.bz2`` allowed) or an iterable of lines.

    Unparseable lines are skipped and counted in ``stats``.
    """
    stats = stats if stats is not None else TripleStats()
    if isinstance(source, (str, Path)):
        with _open_text(source) as fh:
            yield from iter_ntriples(fh, stats)
        return
    for lineno, line in enumerate(source, start=1):
        stats.lines += 1
        try:
            triple = parse_ntriples_line(line)
        except ParseError as exc:
            stats.skipped += 1
            if len(stats.errors) < 100:
                stats.errors.append(f"line {lineno}: {exc}")
            continue
        if triple is not None:
            stats.triples += 1
            yield triple


def extract_features(
    triples,
    mapping: Mapping,
    predicates: Iterable[str] = DEFAULT_PREDICATES,
    type_namespace: Optional[str] = None,
    stats: Optional[TripleStats] = None,
) -> ItemFeatureMap:
    """Collect the one-hop categorical features of every mapped item.

    ``triples`` is anything :func:`iter_ntriples` accepts, or an iterable of
    already-parsed ``(subject, predicate, object)`` tuples. Literal and
    blank-node objects are ignored. With ``type_namespace`` set, ``rdf:type``
    objects outside that IRI prefix are dropped as well.
    """
    stats = stats if stats is not None else TripleStats()
    predicates = frozenset(predicates)
    items_by_entity: Dict[str, List] = defaultdict(list)
    for item, iri in mapping.items():
        items_by_entity[iri].append(item)

    found: Dict[str, set] = defaultdict(set)
    if isinstance(triples, (str, Path)) or _looks_like_lines(triples):
        triples = iter_ntriples(triples, stats)
    for subj, pred, obj in triples:
        if isinstance(subj, Term):
            if subj.kind != "iri":
                continue
            subj_value = subj.value
        else:
            subj_value = subj
        if pred not in predicates or subj_value not in items_by_entity:
            continue
        if isinstance(obj, Term):
            if obj.kind != "iri":
                stats.literal_objects += 1
                continue
            obj = obj.value
        if type_namespace and pred == RDF_TYPE and not obj.startswith(type_namespace):
            continue
        stats.matched += 1
        found[subj_value].add(obj)

    if not found:
        raise EmptyFeatureMapError(
            f"no triple matched predicates {sorted(predicates)} for {len(mapping)} mapped items"
        )
    features = {}
    for iri, objs in found.items():
        for item in items_by_entity[iri]:
            features[item] = frozenset(objs)
    fmap = ItemFeatureMap(features)
    logger.info(
        "extracted %d features for %d/%d mapped items (%d triples matched, %d lines skipped)",
        len(fmap.vocabulary), len(fmap), len(mapping), stats.matched, stats.skipped,
    )
    return fmap


def _looks_like_lines(obj) -> bool:
    if isinstance(obj, (list, tuple)):
        return bool(obj) and isinstance(obj[0], str)
    return hasattr(obj, "readline")


# --------------------------------------------------------------------------
# SPARQL endpoint
# --------------------------------------------------------------------------


def build_sparql_query(entities: Iterable[str], predicates: Iterable[str]) -> str:
    ents = " ".join(f"<{e}>" for e in sorted(entities))
    preds = " ".join(f"<{p}>" for p in sorted(predicates))
    return (
        "SELECT ?s ?p ?o WHERE {\n"
        f"  VALUES ?s {{ {ents} }}\n"
        f"  VALUES ?p {{ {preds} }}\n"
        "  ?s ?p ?o .\n"
        "  FILTER(isIRI(?o))\n"
        "}"
    )


def _parse_bindings(payload) -> List[Tuple[str, str, str]]:
    try:
        rows = payload["results"]["bindings"]
        out = []
        for row in rows:
            if row["o"].get("type") != "uri":
                continue
            out.append((row["s"]["value"], row["p"]["value"], row["o"]["value"]))
        return out
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed SPARQL JSON results: {exc}") from exc


class SparqlClient:
    """Minimal SPARQL Protocol client (GET, JSON results) with retry and disk cache."""

    def __init__(
        self,
        endpoint: str,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 1.0,
        cache_dir: Optional[Union[str, Path]] = None,
        session=None,
    ):
        import requests

        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.session = session or requests.Session()

    def _cache_path(self, query: str) -> Optional[Path]:
        if self.cache_dir is None:
            return None
        digest = hashlib.sha256(f"{self.endpoint}\n{query}".encode()).hexdigest()
        return self.cache_dir / f"{digest}.json"

    def select(self, query: str) -> dict:
        cached = self._cache_path(query)
        if cached is not None and cached.exists():
            with open(cached, "r", encoding="utf-8") as fh:
                return json.load(fh)
        last_exc: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.get(
                    self.endpoint,
                    params={"query": query},
                    headers={"Accept": "application/sparql-results+json"},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                payload = resp.json()
                _parse_bindings(payload)
            except Exception as exc:  # transport, HTTP status and JSON errors all retry
                last_exc = exc
                logger.warning("SPARQL attempt %d/%d failed: %s", attempt + 1, self.retries + 1, exc)
                continue
            if cached is not None:
                with atomic_write(cached) as fh:
                    json.dump(payload, fh)
            return payload
        raise SparqlError(f"SPARQL request to {self.endpoint} failed after {self.retries + 1} attempts: {last_exc}")


def fetch_features_sparql(
    endpoint: Union[str, SparqlClient],
    mapping: Mapping,
    predicates: Iterable[str] = DEFAULT_PREDICATES,
    batch_size: int = 50,
    max_workers: int = 4,
    type_namespace: Optional[str] = None,
    **client_kwargs,
) -> ItemFeatureMap:
    """Endpoint counterpart of :func:`extract_features`.

    Entities are queried in batches of ``batch_size``, at most
    ``max_workers`` requests in flight. If any batch fails for good a
    :class:`SparqlError` is raised whose ``partial`` attribute holds the
    feature map of the batches that succeeded; nothing is returned.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    client = endpoint if isinstance(endpoint, SparqlClient) else SparqlClient(endpoint, **client_kwargs)
    predicates = frozenset(predicates)
    entities = sorted(set(mapping.values()))
    batches = [entities[i:i + batch_size] for i in range(0, len(entities), batch_size)]

    def run(batch):
        return _parse_bindings(client.select(build_sparql_query(batch, predicates)))

    triples: List[Tuple[str, str, str]] = []
    failures: List[str] = []
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = [pool.submit(run, b) for b in batches]
        for fut in futures:
            try:
                triples.extend(fut.result())
            except Exception as exc:
                failures.append(str(exc))

    def build():
        try:
            return extract_features(iter(triples), mapping, predicates, type_namespace=type_namespace)
        except EmptyFeatureMapError:
            return ItemFeatureMap()

    if failures:
        raise SparqlError(f"{len(failures)}/{len(batches)} batches failed: {failures[0]}", partial=build())
    return extract_features(iter(triples), mapping, predicates, type_namespace=type_namespace)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def save_feature_map(fmap: Mapping, path: Union[str, Path]) -> None:
    """One line per item: ``item<TAB>feature feature ...`` under a versioned header."""
    fmap = fmap if isinstance(fmap, ItemFeatureMap) else ItemFeatureMap(fmap)
    with atomic_write(path) as fh:
        fh.write(f"{FEATURE_MAP_HEADER}\tv{FEATURE_MAP_VERSION}\titems={len(fmap)}\n")
        for item in fmap:
            fh.write(f"{item}\t{' '.join(sorted(fmap[item]))}\n")


def load_feature_map(path: Union[str, Path]) -> ItemFeatureMap:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split("\t")
        if not parts or parts[0] != FEATURE_MAP_HEADER:
            raise FormatError(f"{path}: missing feature-map header")
        if len(parts) < 3 or parts[1] != f"v{FEATURE_MAP_VERSION}" or not parts[2].startswith("items="):
            raise FormatError(f"{path}: unsupported feature-map header {header!r}")
        expected = int(parts[2][len("items="):])
        data = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            item, sep, feats = line.partition("\t")
            if not sep or not feats.strip():
                raise FormatError(f"{path}:{lineno}: malformed record")
            data[parse_id(item)] = frozenset(feats.split(" "))
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} items, found {len(data)} (truncated?)")
    return ItemFeatureMap(data)
