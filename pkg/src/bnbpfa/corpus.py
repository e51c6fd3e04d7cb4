"""Bag-of-words corpus files.

The docword format is plain text: three header lines giving the number of
documents N, vocabulary size P and the number of entries that follow, then
one ``doc_id term_id count`` triplet per line with 1-based ids. The vocab
file has one term per line, in term-id order.
"""

import os

from .errors import DataError, ParseError
from .pfa_model import CountMatrix, _atomic_write_bytes


def _int_fields(line, lineno, n):
    parts = line.split()
    if len(parts) != n:
        raise ParseError(f"expected {n} integer field(s), got {line.strip()!r}", lineno)
    try:
        return [int(x) for x in parts]
    except ValueError:
        raise ParseError(f"non-integer field in {line.strip()!r}", lineno) from None


def read_docword(path, header=True):
    """Parse a docword file into a P x N CountMatrix (duplicates summed).

    Without a header, N and P are taken as the largest ids seen.
    """
    docs, terms, counts = [], [], []
    declared = None
    header_vals = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if header and len(header_vals) < 3:
                header_vals.extend(_int_fields(line, lineno, 1))
                continue
            d, t, c = _int_fields(line, lineno, 3)
            if d < 1 or t < 1:
                raise ParseError("ids are 1-based", lineno)
            if c < 0:
                raise ParseError("negative count", lineno)
            if header:
                N, P, _ = header_vals
                if d > N or t > P:
                    raise DataError(f"line {lineno}: id out of declared range (N={N}, P={P})")
            docs.append(d - 1)
            terms.append(t - 1)
            counts.append(c)
    if header:
        if len(header_vals) < 3:
            raise ParseError("missing header (N, P, NNZ)", len(header_vals) + 1)
        N, P, nnz = header_vals
        declared = nnz
        if N < 0 or P < 0:
            raise DataError("header sizes must be nonnegative")
    else:
        N = max(docs) + 1 if docs else 0
        P = max(terms) + 1 if terms else 0
    if declared is not None and declared != len(counts):
        raise DataError(f"header declares {declared} entries but file has {len(counts)}")
    return CountMatrix.from_triplets(P, N, terms, docs, counts)


def read_vocab(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def ingest_bow(docword_path, vocab_path=None, min_doc_freq=5, header=True):
    """Load a corpus and drop terms used in fewer than ``min_doc_freq`` documents.

    Returns (CountMatrix, vocab) with term ids renumbered contiguously.
    Without a vocab file, terms are named by their original 1-based id.
    """
    if min_doc_freq < 0:
        raise DataError("min_doc_freq must be nonnegative")
    X = read_docword(docword_path, header=header)
    if vocab_path is not None:
        vocab = read_vocab(vocab_path)
        if len(vocab) < X.P:
            raise DataError(f"vocab has {len(vocab)} terms but the corpus uses {X.P}")
        vocab = vocab[: X.P]
    else:
        vocab = [str(j + 1) for j in range(X.P)]
    keep = X.doc_frequency() >= min_doc_freq
    return X.select_terms(keep), [v for v, k in zip(vocab, keep) if k]


def export_bow(X, docword_path, vocab=None, vocab_path=None):
    """Write ``X`` (and optionally its vocabulary) in the docword format."""
    lines = [str(X.N), str(X.P), str(X.nnz)]
    lines += [f"{d + 1} {t + 1} {c}" for d, t, c in zip(X.cols, X.rows, X.counts)]
    _atomic_write_bytes(docword_path, ("\n".join(lines) + "\n").encode("utf-8"))
    if vocab_path is not None:
        if vocab is None or len(vocab) != X.P:
            raise DataError("vocab must list exactly P terms")
        _atomic_write_bytes(vocab_path, ("\n".join(vocab) + "\n").encode("utf-8"))


def corpus_paths_exist(*paths):
    missing = [p for p in paths if p is not None and not os.path.exists(p)]
    if missing:
        raise DataError(f"file not found: {missing[0]}")
