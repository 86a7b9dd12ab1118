"""Rule-based semantic graphs from dependency-annotated captions.

Captions arrive pre-annotated (lemma, coarse POS, dependency head/label per
token), either from a CoNLL-U file or from the synthetic corpus generator.
A small set of deterministic rules over the dependency tree extracts object
nouns, (adjective, noun) pairs and relational triples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

ROOT = -1
"""Sentinel head index marking the root token."""

POS_TAGS = ("NOUN", "ADJ", "VERB", "ADP", "DET", "OTHER")

SUBJECT_DEPS = frozenset({"nsubj"})
OBJECT_DEPS = frozenset({"obj", "dobj"})

CONLLU_COLUMNS = 10


class CaptionParseError(ValueError):
    """Malformed dependency tree. ``token_index`` names the offending token."""

    def __init__(self, message: str, token_index: int):
        super().__init__(f"{message} (token {token_index})")
        self.token_index = token_index


class ConlluFormatError(ValueError):
    """Bad CoNLL-U input. ``line_number`` is 1-based."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class AnnotatedToken:
    surface: str
    lemma: str
    pos: str
    head: int
    dep: str


@dataclass
class SemanticGraph:
    """Objects, attribute pairs and relational triples of one caption.

    ``rel_triples`` keeps extraction order (sorted by relation token index)
    so downstream encodings are reproducible.
    """

    objects: set[str] = field(default_factory=set)
    attr_pairs: set[tuple[str, str]] = field(default_factory=set)
    rel_triples: list[tuple[str, str, str]] = field(default_factory=list)

    def is_closed(self) -> bool:
        """True when every pair/triple references only known objects."""
        for _, noun in self.attr_pairs:
            if noun not in self.objects:
                return False
        for subj, _, obj in self.rel_triples:
            if subj not in self.objects or obj not in self.objects:
                return False
        return True

    def to_json(self) -> dict:
        return {
            "objects": sorted(self.objects),
            "attrs": sorted([list(p) for p in self.attr_pairs]),
            "rels": [list(t) for t in self.rel_triples],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SemanticGraph":
        return cls(
            objects=set(obj["objects"]),
            attr_pairs={tuple(p) for p in obj["attrs"]},
            rel_triples=[tuple(t) for t in obj["rels"]],
        )

    def same_content(self, other: "SemanticGraph") -> bool:
        """Equality ignoring triple order."""
        return (
            self.objects == other.objects
            and self.attr_pairs == other.attr_pairs
            and set(self.rel_triples) == set(other.rel_triples)
            and len(self.rel_triples) == len(other.rel_triples)
        )


def validate_tree(tokens: list[AnnotatedToken]) -> None:
    """Check the token list forms a single-rooted tree.

    Raises CaptionParseError naming the first offending token.
    """
    n = len(tokens)
    root = None
    for i, tok in enumerate(tokens):
        if tok.head == ROOT:
            if root is not None:
                raise CaptionParseError("multiple roots", i)
            root = i
            continue
        if not 0 <= tok.head < n:
            raise CaptionParseError(f"head index {tok.head} out of range", i)
        if tok.head == i:
            raise CaptionParseError("self-loop", i)
    if root is None:
        raise CaptionParseError("no root token", 0)
    for i in range(n):
        seen = set()
        j = i
        while j != root:
            if j in seen:
                raise CaptionParseError("cycle in dependency tree", i)
            seen.add(j)
            j = tokens[j].head
            if j == ROOT:
                break


def parse_caption(tokens: list[AnnotatedToken]) -> SemanticGraph:
    """Extract the semantic graph of one caption.

    Rules, applied to lowercased lemmas:
      * every NOUN token contributes an object;
      * an ADJ whose head is a NOUN contributes an (adjective, noun) pair;
      * a VERB with a nominal subject child and nominal object child
        contributes one triple per subject/object combination;
      * an ADP linking two nouns contributes a (governor, adposition,
        dependent) triple.  Both attachment conventions are recognized:
        the adposition heading the dependent noun, and the adposition
        hanging off the dependent noun as a case marker.

    Determiners and copulas never match a rule, which drops them from the
    graph without re-indexing the tree.
    """
    validate_tree(tokens)
    lemmas = [t.lemma.lower() for t in tokens]
    pos = [t.pos for t in tokens]

    graph = SemanticGraph()
    for i, p in enumerate(pos):
        if p == "NOUN":
            graph.objects.add(lemmas[i])

    for i, tok in enumerate(tokens):
        if pos[i] == "ADJ" and tok.head != ROOT and pos[tok.head] == "NOUN":
            graph.attr_pairs.add((lemmas[i], lemmas[tok.head]))

    children: list[list[int]] = [[] for _ in tokens]
    for i, tok in enumerate(tokens):
        if tok.head != ROOT:
            children[tok.head].append(i)

    triples: list[tuple[int, tuple[str, str, str]]] = []
    for i, tok in enumerate(tokens):
        if pos[i] == "VERB":
            subjects = [c for c in children[i] if pos[c] == "NOUN" and tokens[c].dep in SUBJECT_DEPS]
            objects = [c for c in children[i] if pos[c] == "NOUN" and tokens[c].dep in OBJECT_DEPS]
            for s in subjects:
                for o in objects:
                    triples.append((i, (lemmas[s], lemmas[i], lemmas[o])))
        elif pos[i] == "ADP":
            noun_children = [c for c in children[i] if pos[c] == "NOUN"]
            if noun_children and tok.head != ROOT and pos[tok.head] == "NOUN":
                for c in noun_children:
                    triples.append((i, (lemmas[tok.head], lemmas[i], lemmas[c])))
            elif not noun_children and tok.head != ROOT and pos[tok.head] == "NOUN":
                # case-marker convention: ADP under the dependent noun
                dep_noun = tok.head
                gov = tokens[dep_noun].head
                if gov != ROOT and pos[gov] == "NOUN":
                    triples.append((i, (lemmas[gov], lemmas[i], lemmas[dep_noun])))

    triples.sort(key=lambda item: item[0])
    graph.rel_triples = [t for _, t in triples]
    return graph


def _map_pos(upos: str) -> str:
    return upos if upos in POS_TAGS else "OTHER"


def load_conllu(path: str) -> list[tuple[str, list[AnnotatedToken]]]:
    """Read blank-line-separated sentences from a 10-column CoNLL-U file.

    Maps ID/FORM/LEMMA/UPOS/HEAD/DEPREL; the remaining columns are ignored.
    Sentence ids come from ``# sent_id = ...`` comments, falling back to the
    running sentence index. Multiword-token and empty-node lines (ranged or
    dotted ids) are skipped.
    """
    groups: list[tuple[str, list[AnnotatedToken]]] = []
    pending_id: str | None = None
    rows: list[tuple[int, AnnotatedToken]] = []

    def flush(line_number: int) -> None:
        nonlocal pending_id, rows
        if not rows:
            pending_id = None
            return
        rows.sort(key=lambda r: r[0])
        for expected, (idx, _) in enumerate(rows, start=1):
            if idx != expected:
                raise ConlluFormatError(f"non-contiguous token id {idx}", line_number)
        tokens = [tok for _, tok in rows]
        n = len(tokens)
        for idx, tok in enumerate(tokens):
            if tok.head != ROOT and not 0 <= tok.head < n:
                raise ConlluFormatError(f"head {tok.head + 1} out of range", line_number)
        sent_id = pending_id if pending_id is not None else str(len(groups))
        groups.append((sent_id, tokens))
        pending_id = None
        rows = []

    with open(path, encoding="utf-8") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush(lineno)
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("sent_id"):
                    _, _, value = body.partition("=")
                    pending_id = value.strip()
                continue
            cols = line.split("\t")
            if len(cols) != CONLLU_COLUMNS:
                raise ConlluFormatError(f"expected {CONLLU_COLUMNS} columns, got {len(cols)}", lineno)
            tok_id = cols[0]
            if "-" in tok_id or "." in tok_id:
                continue
            try:
                idx = int(tok_id)
            except ValueError:
                raise ConlluFormatError(f"bad token id {tok_id!r}", lineno) from None
            try:
                head = int(cols[6])
            except ValueError:
                raise ConlluFormatError(f"bad head {cols[6]!r}", lineno) from None
            token = AnnotatedToken(
                surface=cols[1],
                lemma=cols[2],
                pos=_map_pos(cols[3]),
                head=ROOT if head == 0 else head - 1,
                dep=cols[7],
            )
            rows.append((idx, token))
        flush(lineno + 1)
    return groups


def write_conllu(path: str, groups: list[tuple[str, list[AnnotatedToken]]]) -> None:
    """Serialize sentence groups in the layout ``load_conllu`` reads back."""
    with open(path, "w", encoding="utf-8") as fh:
        for sent_id, tokens in groups:
            fh.write(f"# sent_id = {sent_id}\n")
            for i, tok in enumerate(tokens, start=1):
                head = 0 if tok.head == ROOT else tok.head + 1
                cols = [str(i), tok.surface, tok.lemma, tok.pos, "_", "_", str(head), tok.dep, "_", "_"]
                fh.write("\t".join(cols) + "\n")
            fh.write("\n")
