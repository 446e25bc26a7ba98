import bz2
import gzip
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import pytest

from semauto.exceptions import EmptyFeatureMapError, FormatError, SparqlError
from semauto.kg import (
    DCT_SUBJECT,
    RDF_TYPE,
    ItemFeatureMap,
    MappingStats,
    TripleStats,
    build_sparql_query,
    extract_features,
    fetch_features_sparql,
    iter_ntriples,
    load_feature_map,
    parse_mapping,
    parse_ntriples_line,
    save_feature_map,
)

DBR = "http://dbpedia.org/resource/"
CAT = DBR + "Category:"
DBO = "http://dbpedia.org/ontology/"
LABEL = "http://www.w3.org/2000/01/rdf-schema#label"

NT = f"""\
<{DBR}Toy_Story> <{DCT_SUBJECT}> <{CAT}American_films> .
<{DBR}Toy_Story> <{RDF_TYPE}> <{DBO}Film> .
<{DBR}Toy_Story> <{LABEL}> "Toy Story"@en .
<{DBR}Toy_Story> <{DCT_SUBJECT}> <{CAT}American_films> .
<{DBR}Jumanji> <{DCT_SUBJECT}> <{CAT}American_films> .
<{DBR}Jumanji> <{DCT_SUBJECT}> <{CAT}Films_about_games> .
<{DBR}Jumanji> <{RDF_TYPE}> <http://schema.org/Movie> .
<{DBR}Heat> <{LABEL}> "Heat" .
<{DBR}Other> <{DCT_SUBJECT}> <{CAT}Unrelated> .
this line is not a triple
_:b0 <{DCT_SUBJECT}> <{CAT}Blank> .
"""

MAPPING = {1: DBR + "Toy_Story", 2: DBR + "Jumanji", 3: DBR + "Heat"}

EXPECTED = {
    1: {CAT + "American_films", DBO + "Film"},
    2: {CAT + "American_films", CAT + "Films_about_games", "http://schema.org/Movie"},
}


# -- mapping ----------------------------------------------------------------


def test_parse_mapping(tmp_path):
    p = tmp_path / "map.tsv"
    p.write_text(
        f"1\tToy Story\t{DBR}Toy_Story\n"
        "2\tJumanji\tdbpedia/ToyStory\n"
        f"3\tHeat\t<{DBR}Heat>\n"
        f"4\tHeat again\t{DBR}Heat\n"
    )
    stats = MappingStats()
    m = parse_mapping(p, stats)
    assert m == {1: DBR + "Toy_Story", 3: DBR + "Heat", 4: DBR + "Heat"}
    assert stats.rejected == 1 and stats.shared_entities == 1


def test_parse_empty_mapping(tmp_path):
    p = tmp_path / "map.tsv"
    p.write_text("")
    assert parse_mapping(p) == {}


# -- N-Triples --------------------------------------------------------------


def test_ntriples_line_kinds():
    s, p, o = parse_ntriples_line(f'<{DBR}A> <{LABEL}> "A \\"quoted\\" title"@en-GB .')
    assert (s.kind, o.kind) == ("iri", "literal")
    s, p, o = parse_ntriples_line(f"_:x <{DCT_SUBJECT}> <{CAT}C> .")
    assert s.kind == "bnode" and o.value == CAT + "C"
    assert parse_ntriples_line("# comment") is None
    assert parse_ntriples_line("") is None


def test_ntriples_unicode_escape():
    _, _, o = parse_ntriples_line(f"<{DBR}A> <{DCT_SUBJECT}> <{CAT}Am\\u00E9lie> .")
    assert o.value == CAT + "Amélie"


def test_ntriples_typed_literal():
    triple = parse_ntriples_line(
        f'<{DBR}A> <{DBO}runtime> "5640.0"^^<http://www.w3.org/2001/XMLSchema#double> .'
    )
    assert triple[2].kind == "literal"


def test_iter_counts_bad_lines():
    stats = TripleStats()
    triples = list(iter_ntriples(NT.splitlines(), stats))
    assert stats.skipped == 1
    assert len(triples) == 10


@pytest.mark.parametrize("opener,suffix", [(open, ".nt"), (gzip.open, ".nt.gz"), (bz2.open, ".nt.bz2")])
def test_extract_from_files(tmp_path, opener, suffix):
    path = tmp_path / ("kg" + suffix)
    with opener(path, "wt", encoding="utf-8") as fh:
        fh.write(NT)
    fmap = extract_features(path, MAPPING)
    assert {i: set(fs) for i, fs in fmap.items()} == EXPECTED


def test_extract_literals_and_missing_items():
    stats = TripleStats()
    fmap = extract_features(NT.splitlines(), MAPPING, stats=stats)
    # Heat only has a literal label: not in the KG
    assert 3 not in fmap
    assert fmap[1] == frozenset(EXPECTED[1])
    assert fmap.vocabulary == frozenset().union(*EXPECTED.values())


def test_extract_is_order_independent():
    lines = NT.splitlines()
    forward = extract_features(lines, MAPPING)
    backward = extract_features(list(reversed(lines)), MAPPING)
    assert forward == backward


def test_extract_custom_predicates_and_namespace():
    only_subject = extract_features(NT.splitlines(), MAPPING, predicates=[DCT_SUBJECT])
    assert only_subject[1] == frozenset({CAT + "American_films"})
    dbo_only = extract_features(NT.splitlines(), MAPPING, type_namespace=DBO)
    assert "http://schema.org/Movie" not in dbo_only[2]
    assert DBO + "Film" in dbo_only[1]


def test_extract_nothing_matched():
    with pytest.raises(EmptyFeatureMapError):
        extract_features(NT.splitlines(), {9: DBR + "Nowhere"})


def test_shared_entity_gives_both_items_features():
    fmap = extract_features(NT.splitlines(), {1: DBR + "Jumanji", 2: DBR + "Jumanji"})
    assert fmap[1] == fmap[2] == frozenset(EXPECTED[2])


# -- persistence ------------------------------------------------------------


def test_feature_map_round_trip(tmp_path):
    fmap = ItemFeatureMap({1: {"a", "b"}, "x7": {"c"}, 3: {CAT + "Films_about_games"}})
    path = tmp_path / "f.tsv"
    save_feature_map(fmap, path)
    back = load_feature_map(path)
    assert back == fmap
    assert back.vocabulary == fmap.vocabulary


def test_load_empty_file_is_format_error(tmp_path):
    path = tmp_path / "f.tsv"
    path.write_text("")
    with pytest.raises(FormatError):
        load_feature_map(path)


def test_load_truncated_and_wrong_version(tmp_path):
    path = tmp_path / "f.tsv"
    save_feature_map({1: {"a"}, 2: {"b"}}, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(FormatError):
        load_feature_map(path)
    path.write_text(lines[0].replace("v1", "v9") + "\n" + "\n".join(lines[1:]) + "\n")
    with pytest.raises(FormatError):
        load_feature_map(path)


# -- SPARQL -----------------------------------------------------------------


def _triples_of(text):
    """Independent minimal reader for the fixture: IRI objects only."""
    pat = re.compile(r"^<([^>]+)> <([^>]+)> <([^>]+)> \.$")
    return [m.groups() for m in map(pat.match, text.splitlines()) if m]


class _Endpoint:
    def __init__(self, triples, fail_first=0, always_fail=False, malformed=False, fail_entities=()):
        self.triples = triples
        self.fail_entities = set(fail_entities)
        self.fail_first = fail_first
        self.always_fail = always_fail
        self.malformed = malformed
        self.requests = 0
        self.lock = threading.Lock()

    def answer(self, query):
        ents = set(re.findall(r"<([^>]+)>", re.search(r"VALUES \?s \{([^}]*)\}", query).group(1)))
        preds = set(re.findall(r"<([^>]+)>", re.search(r"VALUES \?p \{([^}]*)\}", query).group(1)))
        rows = [
            {"s": {"type": "uri", "value": s}, "p": {"type": "uri", "value": p}, "o": {"type": "uri", "value": o}}
            for s, p, o in self.triples
            if s in ents and p in preds
        ]
        return {"head": {"vars": ["s", "p", "o"]}, "results": {"bindings": rows}}


@pytest.fixture
def endpoint():
    servers = []

    def start(**kwargs):
        state = _Endpoint(_triples_of(NT), **kwargs)

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                with state.lock:
                    state.requests += 1
                    n = state.requests
                if state.always_fail or n <= state.fail_first:
                    self.send_response(503)
                    self.end_headers()
                    return
                query = parse_qs(urlparse(self.path).query)["query"][0]
                if any(f"<{e}>" in query for e in state.fail_entities):
                    self.send_response(500)
                    self.end_headers()
                    return
                body = b"{not json" if state.malformed else json.dumps(state.answer(query)).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/sparql-results+json")
                self.end_headers()
                self.wfile.write(body)

        server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_address[1]}/sparql", state

    yield start
    for s in servers:
        s.shutdown()


def test_query_shape():
    q = build_sparql_query([DBR + "B", DBR + "A"], [RDF_TYPE])
    assert f"VALUES ?s {{ <{DBR}A> <{DBR}B> }}" in q
    assert "FILTER(isIRI(?o))" in q


def test_sparql_matches_dump(endpoint):
    url, state = endpoint()
    via_endpoint = fetch_features_sparql(url, MAPPING, batch_size=1, max_workers=2, backoff=0.0)
    via_dump = extract_features(NT.splitlines(), MAPPING)
    assert via_endpoint == via_dump
    assert state.requests == 3


def test_sparql_two_bindings(endpoint):
    url, _ = endpoint()
    fmap = fetch_features_sparql(url, {1: DBR + "Toy_Story"}, backoff=0.0)
    assert len(fmap[1]) == 2


def test_sparql_retries_then_succeeds(endpoint):
    url, state = endpoint(fail_first=2)
    fmap = fetch_features_sparql(url, MAPPING, batch_size=10, retries=3, backoff=0.0)
    assert set(fmap) == {1, 2}
    assert state.requests == 3


def test_sparql_unreachable_raises_after_retries():
    with pytest.raises(SparqlError) as err:
        fetch_features_sparql("http://127.0.0.1:9/sparql", MAPPING, retries=1, backoff=0.0, timeout=1.0)
    assert len(err.value.partial) == 0


def test_sparql_failure_is_partial(endpoint):
    url, state = endpoint(always_fail=True)
    with pytest.raises(SparqlError) as err:
        fetch_features_sparql(url, MAPPING, batch_size=1, retries=2, backoff=0.0)
    assert state.requests == 3 * 3
    assert len(err.value.partial) == 0


def test_sparql_partial_carries_completed_batches(endpoint):
    url, _ = endpoint(fail_entities={DBR + "Toy_Story"})
    with pytest.raises(SparqlError) as err:
        fetch_features_sparql(url, MAPPING, batch_size=1, max_workers=1, retries=1, backoff=0.0)
    assert {i: set(fs) for i, fs in err.value.partial.items()} == {2: EXPECTED[2]}


def test_sparql_malformed_response(endpoint):
    url, _ = endpoint(malformed=True)
    with pytest.raises(SparqlError):
        fetch_features_sparql(url, MAPPING, retries=0, backoff=0.0)


def test_sparql_cache(endpoint, tmp_path):
    url, state = endpoint()
    first = fetch_features_sparql(url, MAPPING, cache_dir=tmp_path, backoff=0.0)
    n = state.requests
    second = fetch_features_sparql(url, MAPPING, cache_dir=tmp_path, backoff=0.0)
    assert first == second
    assert state.requests == n
