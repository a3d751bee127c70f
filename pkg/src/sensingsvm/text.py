"""Text corpus preparation.

Raw labeled text goes through tokenization, stopword removal, vocabulary
construction (training split only) and vectorization into sparse count
vectors.  Tokens seen at test time that were never in the training
vocabulary are silently dropped; documents that end up empty are excluded
with a logged warning.
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .counts import CountVector
from .errors import ConfigError, DataError, UsageError

__all__ = [
    "tokenize",
    "strip_headers",
    "load_stoplist",
    "remove_stopwords",
    "Vocabulary",
    "build_vocabulary",
    "vectorize",
    "RawDoc",
    "TokenDoc",
    "Corpus",
    "build_corpus",
    "save_corpus",
    "load_corpus",
    "save_vocabulary",
    "load_vocabulary",
    "read_class_dirs",
    "read_tsv",
    "prepare_documents",
]

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z]+")
_HEADER_LINE_RE = re.compile(r"^[A-Za-z][A-Za-z0-9-]*:")


def tokenize(text: str) -> list[str]:
    """Lowercased ASCII-alphabetic tokens of length >= 2.

    Punctuation, digits and any non-alphabetic characters act as
    separators; single-letter fragments are discarded.
    """
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


def strip_headers(text: str, keep_subject: bool = True) -> str:
    """Drop a leading RFC-822 style header block, keeping the Subject text.

    Newsgroup postings carry metadata headers whose tokens leak label
    information; by default only the Subject line's content survives.
    Text without a recognizable header block is returned unchanged.
    """
    head, sep, body = text.partition("\n\n")
    if not sep:
        return text
    head_lines = head.splitlines()
    if not head_lines or not any(_HEADER_LINE_RE.match(ln) for ln in head_lines):
        return text
    kept = []
    if keep_subject:
        for ln in head_lines:
            if ln.lower().startswith("subject:"):
                subject = ln.split(":", 1)[1]
                subject = re.sub(r"^\s*(re:\s*)+", "", subject, flags=re.IGNORECASE)
                kept.append(subject)
    kept.append(body)
    return "\n".join(kept)


def load_stoplist(path=None) -> frozenset[str]:
    """Read a stopword list (one term per line).

    Without an explicit path, the bundled SMART stop list is used.
    """
    if path is None:
        ref = resources.files("sensingsvm").joinpath("data/smart_stopwords.txt")
        try:
            content = ref.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise ConfigError("bundled stopword list is missing") from exc
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"stoplist file not found: {p}")
        content = p.read_text(encoding="utf-8")
    return frozenset(ln.strip() for ln in content.splitlines() if ln.strip())


def remove_stopwords(tokens: list[str], stoplist) -> list[str]:
    """Order-preserving filter; an empty stoplist is the identity."""
    return [t for t in tokens if t not in stoplist]


@dataclass(frozen=True)
class Vocabulary:
    """Deterministic term-to-id map (ids follow sorted term order)."""

    terms: tuple[str, ...]
    index: dict = field(compare=False, repr=False)
    fingerprint: str

    @classmethod
    def from_terms(cls, terms) -> "Vocabulary":
        ordered = tuple(sorted(set(terms)))
        if not ordered:
            raise DataError("vocabulary is empty")
        fp = hashlib.sha256("\n".join(ordered).encode("utf-8")).hexdigest()
        return cls(terms=ordered, index={t: i for i, t in enumerate(ordered)}, fingerprint=fp)

    @property
    def size(self) -> int:
        return len(self.terms)


def build_vocabulary(token_docs, min_count: int = 1) -> Vocabulary:
    """Collect terms with total corpus count >= min_count from training docs."""
    if min_count < 1:
        raise UsageError("min_count must be >= 1")
    counts = Counter()
    for tokens in token_docs:
        counts.update(tokens)
    kept = [t for t, c in counts.items() if c >= min_count]
    if not kept:
        raise DataError("no terms survive the min_count threshold")
    return Vocabulary.from_terms(kept)


def vectorize(tokens, vocab: Vocabulary):
    """Count in-vocabulary tokens; returns None when nothing is in vocabulary.

    Out-of-vocabulary tokens are dropped silently, mirroring the treatment
    of unseen test-set words.
    """
    counts = Counter()
    for t in tokens:
        wid = vocab.index.get(t)
        if wid is not None:
            counts[wid] += 1
    if not counts:
        return None
    ids = sorted(counts)
    return CountVector(ids, [counts[i] for i in ids], vocab.size)


@dataclass(frozen=True)
class RawDoc:
    doc_id: str
    label: str
    text: str


@dataclass(frozen=True)
class TokenDoc:
    doc_id: str
    label: str
    tokens: tuple[str, ...]


def prepare_documents(raw_docs, stoplist, keep_headers: bool = False, keep_subject: bool = True) -> list[TokenDoc]:
    """Tokenize raw documents, optionally stripping header blocks first."""
    out = []
    for doc in raw_docs:
        text = doc.text if keep_headers else strip_headers(doc.text, keep_subject=keep_subject)
        out.append(TokenDoc(doc.doc_id, doc.label, tuple(remove_stopwords(tokenize(text), stoplist))))
    return out


def _check_token(value: str, what: str) -> str:
    if not value or any(ch.isspace() for ch in value):
        raise UsageError(f"{what} must be non-empty and contain no whitespace: {value!r}")
    return value


@dataclass
class Corpus:
    """Aligned document ids, count vectors and labels over one vocabulary."""

    doc_ids: list[str]
    vectors: list[CountVector]
    labels: list[str]
    vocab_size: int
    vocab_fingerprint: str
    split: str

    def __post_init__(self):
        if not (len(self.doc_ids) == len(self.vectors) == len(self.labels)):
            raise UsageError("doc_ids, vectors and labels must align")
        for v in self.vectors:
            if v.vocab_size != self.vocab_size:
                raise UsageError("all documents must share the corpus vocabulary size")
        for d in self.doc_ids:
            _check_token(d, "doc id")
        for lb in self.labels:
            _check_token(lb, "label")

    def __len__(self):
        return len(self.doc_ids)

    def class_set(self) -> list[str]:
        return sorted(set(self.labels))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.vocab_fingerprint.encode())
        for d, v, lb in zip(self.doc_ids, self.vectors, self.labels):
            h.update(d.encode())
            h.update(lb.encode())
            h.update(v.content_key())
        return h.hexdigest()


def build_corpus(token_docs, vocab: Vocabulary, split: str) -> Corpus:
    """Vectorize token documents, excluding any that end up empty."""
    ids, vectors, labels, dropped = [], [], [], []
    for doc in token_docs:
        cv = vectorize(doc.tokens, vocab)
        if cv is None:
            dropped.append(doc.doc_id)
            continue
        ids.append(doc.doc_id)
        vectors.append(cv)
        labels.append(doc.label)
    if dropped:
        log.warning("excluded %d empty document(s): %s", len(dropped), ", ".join(dropped[:10]))
    return Corpus(
        doc_ids=ids,
        vectors=vectors,
        labels=labels,
        vocab_size=vocab.size,
        vocab_fingerprint=vocab.fingerprint,
        split=split,
    )


def save_corpus(corpus: Corpus, path) -> None:
    """Line format: header, then `id label wid:cnt wid:cnt ...` per doc."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"corpus W {corpus.vocab_size} vocab {corpus.vocab_fingerprint} "
            f"M {len(corpus)} split {corpus.split}\n"
        )
        for d, v, lb in zip(corpus.doc_ids, corpus.vectors, corpus.labels):
            pairs = " ".join(f"{w}:{c}" for w, c in zip(v.word_ids.tolist(), v.counts.tolist()))
            fh.write(f"{d} {lb} {pairs}\n".rstrip() + "\n")


def load_corpus(path) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 9 or header[0] != "corpus":
            raise DataError(f"bad corpus header in {path}")
        w = int(header[2])
        fp = header[4]
        m = int(header[6])
        split = header[8]
        ids, vectors, labels = [], [], []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            labels.append(parts[1])
            wids, cnts = [], []
            for tok in parts[2:]:
                ws, cs = tok.split(":")
                wids.append(int(ws))
                cnts.append(int(cs))
            vectors.append(CountVector(wids, cnts, w))
    if len(ids) != m:
        raise DataError(f"corpus header promises {m} docs, found {len(ids)}")
    return Corpus(ids, vectors, labels, w, fp, split)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in vocab.terms:
            fh.write(t + "\n")


def load_vocabulary(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        terms = [ln.strip() for ln in fh if ln.strip()]
    if not terms:
        raise DataError(f"empty vocabulary file: {path}")
    if terms != sorted(set(terms)):
        raise DataError("vocabulary file must list unique terms in sorted order")
    return Vocabulary.from_terms(terms)


def read_class_dirs(root) -> list[RawDoc]:
    """One subdirectory per class, one file per document."""
    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"not a directory: {root}")
    docs = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        label = class_dir.name
        for f in sorted(p for p in class_dir.iterdir() if p.is_file()):
            text = f.read_text(encoding="utf-8", errors="replace")
            docs.append(RawDoc(doc_id=f"{label}/{f.name}", label=label, text=text))
    if not docs:
        raise DataError(f"no documents under {root}")
    return docs


def read_tsv(path) -> list[RawDoc]:
    """Tab-separated rows: id, label, text."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise DataError(f"{path}:{ln}: expected 3 tab-separated fields")
            docs.append(RawDoc(doc_id=parts[0], label=parts[1], text=parts[2]))
    if not docs:
        raise DataError(f"no documents in {path}")
    return docs
