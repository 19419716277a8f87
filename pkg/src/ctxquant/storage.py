"""Bit-exact binary formats and the space-accounting calculator.

All integers are little-endian; floats are IEEE-754 binary32 LE.
Four formats share a (magic, version) header:

  CQEM  token embeddings       magic "CQEM"
  CQCS  packed document codes  magic "CQCS"
  CQBK  codebook set           magic "CQBK"
  CQNN  full quantizer model   magic "CQNN"

Per-document code payloads are byte-aligned so documents can be read
independently; padding bits inside the final byte of a document are
zero and are ignored on read.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadCode,
    BadParam,
    CorruptFile,
    LengthMismatch,
    MissingDoc,
    VersionMismatch,
)
from .types import (
    DocumentCodes,
    DocumentTokens,
    QuantizerMode,
    make_quantizer_spec,
    validate_codes,
)

FORMAT_VERSION = 1

_MODE_TO_U8 = {QuantizerMode.PRODUCT: 0, QuantizerMode.ADDITIVE: 1}
_U8_TO_MODE = {v: k for k, v in _MODE_TO_U8.items()}


# ---------------------------------------------------------------------------
# bit packing


def packed_size(count, M, bits):
    """Bytes needed for `count` codes of M entries at `bits` bits each."""
    return (count * M * bits + 7) // 8


def pack_codes(codes, spec):
    """Pack codes LSB-first, bits_per_entry bits per entry."""
    codes = validate_codes(np.atleast_2d(np.asarray(codes, dtype=np.int64)), spec)
    b = spec.bits_per_entry
    flat = codes.reshape(-1).astype(np.uint64)
    shifts = np.arange(b, dtype=np.uint64)
    bits = ((flat[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_codes(data, count, spec):
    """Exact inverse of pack_codes; padding bits are ignored."""
    b = spec.bits_per_entry
    expect = packed_size(count, spec.M, b)
    if len(data) != expect:
        raise LengthMismatch(f"expected {expect} bytes for {count} codes, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = bits[: count * spec.M * b].reshape(count * spec.M, b)
    weights = (1 << np.arange(b)).astype(np.int64)
    entries = bits.astype(np.int64) @ weights
    codes = entries.reshape(count, spec.M)
    if codes.size and codes.max() >= spec.K:
        raise BadCode(f"unpacked entry >= K={spec.K}")
    return codes


# ---------------------------------------------------------------------------
# low-level IO helpers


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptFile(f"truncated file while reading {what}")
    return buf


def _check_header(f, magic):
    got = f.read(4)
    if got != magic:
        raise CorruptFile(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported format version {version}")


def _write_spec(f, spec):
    f.write(struct.pack("<BHII", _MODE_TO_U8[spec.mode], spec.M, spec.K, spec.D))


def _read_spec(f):
    mode_u8, M, K, D = struct.unpack("<BHII", _read_exact(f, 11, "spec header"))
    if mode_u8 not in _U8_TO_MODE:
        raise CorruptFile(f"unknown mode byte {mode_u8}")
    return make_quantizer_spec(_U8_TO_MODE[mode_u8], M, K, D)


def _write_f32(f, arr):
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(f, shape, what):
    n = int(np.prod(shape))
    buf = _read_exact(f, 4 * n, what)
    return np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)


# ---------------------------------------------------------------------------
# CQEM: token embeddings grouped by document


def write_embeddings(path, docs, dim):
    """Write a CQEM file: per doc id, token ids, f32 embedding rows."""
    with open(path, "wb") as f:
        f.write(b"CQEM")
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<IQ", dim, len(docs)))
        for doc in docs:
            if doc.embeddings.shape[1] != dim:
                raise BadParam(f"doc {doc.doc_id} has dim {doc.embeddings.shape[1]}")
            f.write(struct.pack("<QI", doc.doc_id, doc.n_tokens))
            f.write(np.ascontiguousarray(doc.token_ids, dtype="<u2").tobytes())
            _write_f32(f, doc.embeddings)


def read_embeddings(path):
    """Read a CQEM file; returns (dim, list of DocumentTokens)."""
    with open(path, "rb") as f:
        _check_header(f, b"CQEM")
        dim, n_docs = struct.unpack("<IQ", _read_exact(f, 12, "CQEM header"))
        docs = []
        for _ in range(n_docs):
            doc_id, n = struct.unpack("<QI", _read_exact(f, 12, "doc header"))
            ids = np.frombuffer(_read_exact(f, 2 * n, "token ids"), dtype="<u2")
            emb = _read_f32(f, (n, dim), "embeddings")
            docs.append(DocumentTokens(doc_id=doc_id, token_ids=ids, embeddings=emb))
        if f.read(1):
            raise CorruptFile("trailing bytes after last document")
    return dim, docs


def embeddings_file_size(dim, token_counts):
    """Analytic CQEM size in bytes for documents with the given lengths."""
    payload = sum(12 + 2 * n + 4 * n * dim for n in token_counts)
    return 4 + 4 + 12 + payload


# ---------------------------------------------------------------------------
# CQCS: packed document codes


class CodeStore:
    """Random-access view over decoded CQCS contents."""

    def __init__(self, spec, docs):
        self.spec = spec
        self._docs = {d.doc_id: d for d in docs}
        self._order = [d.doc_id for d in docs]

    def get(self, doc_id):
        try:
            return self._docs[doc_id]
        except KeyError:
            raise MissingDoc(f"doc id {doc_id} not in store") from None

    def __contains__(self, doc_id):
        return doc_id in self._docs

    def __len__(self):
        return len(self._docs)

    def doc_ids(self):
        return list(self._order)

    def scan(self):
        return [self._docs[i] for i in self._order]


def write_store(path, spec, docs):
    """Write a CQCS file of bit-packed per-document codes."""
    with open(path, "wb") as f:
        f.write(b"CQCS")
        f.write(struct.pack("<I", FORMAT_VERSION))
        _write_spec(f, spec)
        f.write(struct.pack("<Q", len(docs)))
        for doc in docs:
            validate_codes(doc.codes, spec)
            f.write(struct.pack("<QI", doc.doc_id, doc.n_tokens))
            f.write(np.ascontiguousarray(doc.token_ids, dtype="<u2").tobytes())
            if doc.n_tokens:
                f.write(pack_codes(doc.codes, spec))


def read_store(path):
    """Read a CQCS file into a CodeStore."""
    with open(path, "rb") as f:
        _check_header(f, b"CQCS")
        spec = _read_spec(f)
        (n_docs,) = struct.unpack("<Q", _read_exact(f, 8, "doc count"))
        docs = []
        for _ in range(n_docs):
            doc_id, n = struct.unpack("<QI", _read_exact(f, 12, "doc header"))
            ids = np.frombuffer(_read_exact(f, 2 * n, "token ids"), dtype="<u2")
            nbytes = packed_size(n, spec.M, spec.bits_per_entry)
            codes = unpack_codes(_read_exact(f, nbytes, "codes"), n, spec)
            docs.append(DocumentCodes(doc_id=doc_id, token_ids=ids, codes=codes))
        if f.read(1):
            raise CorruptFile("trailing bytes after last document")
    return CodeStore(spec, docs)


def store_file_size(spec, token_counts):
    """Analytic CQCS size in bytes for documents with the given lengths."""
    payload = sum(
        12 + 2 * n + packed_size(n, spec.M, spec.bits_per_entry)
        for n in token_counts
    )
    return 4 + 4 + 11 + 8 + payload


# ---------------------------------------------------------------------------
# CQBK / CQNN: codebooks and full models


def write_codebooks(path, cb):
    with open(path, "wb") as f:
        f.write(b"CQBK")
        f.write(struct.pack("<I", FORMAT_VERSION))
        _write_spec(f, cb.spec)
        _write_f32(f, cb.books)


def read_codebooks(path):
    from .baseline import CodebookSet

    with open(path, "rb") as f:
        _check_header(f, b"CQBK")
        spec = _read_spec(f)
        books = _read_f32(f, (spec.M, spec.K, spec.h), "codebooks")
        if f.read(1):
            raise CorruptFile("trailing bytes after codebooks")
    return CodebookSet(spec=spec, books=books)


def write_model(path, params):
    """Write a CQNN file: spec header then tensors in fixed order."""
    with open(path, "wb") as f:
        f.write(b"CQNN")
        f.write(struct.pack("<I", FORMAT_VERSION))
        _write_spec(f, params.spec)
        f.write(struct.pack("<B", 1 if params.use_position else 0))
        for name in ("w0", "b0", "w1", "b1", "w2", "b2", "codebooks"):
            _write_f32(f, getattr(params, name))


def read_model(path):
    from .network import CQParams

    with open(path, "rb") as f:
        _check_header(f, b"CQNN")
        spec = _read_spec(f)
        (use_pos,) = struct.unpack("<B", _read_exact(f, 1, "position flag"))
        use_position = bool(use_pos)
        H = (spec.M * spec.K) // 2
        in_dim = (3 if use_position else 2) * spec.D
        tensors = {
            "w0": _read_f32(f, (H, in_dim), "w0"),
            "b0": _read_f32(f, (H,), "b0"),
            "w1": _read_f32(f, (spec.M, spec.K, H), "w1"),
            "b1": _read_f32(f, (spec.M, spec.K), "b1"),
            "w2": _read_f32(f, (spec.D, 2 * spec.D), "w2"),
            "b2": _read_f32(f, (spec.D,), "b2"),
            "codebooks": _read_f32(f, (spec.M, spec.K, spec.h), "codebooks"),
        }
        if f.read(1):
            raise CorruptFile("trailing bytes after model tensors")
    return CQParams(spec=spec, use_position=use_position, **tensors)


# ---------------------------------------------------------------------------
# space accounting


@dataclass(frozen=True)
class SpaceModel:
    """Corpus statistics feeding the byte-count formulas."""

    Z: float  # document count
    n: float  # mean tokens per document
    V: int  # vocabulary size
    D: int
    M: int
    K: int
    h: int
    bytes_per_float: int = 2
    token_id_bytes: int = 2

    def __post_init__(self):
        for name in ("Z", "n", "V", "D", "M", "K", "h"):
            if getattr(self, name) <= 0:
                raise BadParam(f"{name} must be positive")
        if self.bytes_per_float not in (2, 4):
            raise BadParam("bytes_per_float must be 2 or 4")


@dataclass(frozen=True)
class SpaceReport:
    codebook_bytes: float
    doc_indep_bytes: float
    codes_bytes: float
    colbert_baseline_bytes: float
    ratio_colbert_to_cq: float


def space_report(m):
    """Byte counts: codebooks, base table, packed codes, and the ratio
    of the uncompressed token-embedding baseline to the compressed form."""
    log2k = np.log2(m.K)
    codebook_bytes = m.M * m.K * m.h * 4
    doc_indep_bytes = m.V * m.D * 4
    codes_bytes = m.Z * m.n * (m.M * log2k / 8 + m.token_id_bytes)
    colbert = m.Z * m.D * m.n * m.bytes_per_float
    ratio = (m.bytes_per_float * m.D * 8) / (m.M * log2k + 8 * m.token_id_bytes)
    return SpaceReport(
        codebook_bytes=float(codebook_bytes),
        doc_indep_bytes=float(doc_indep_bytes),
        codes_bytes=float(codes_bytes),
        colbert_baseline_bytes=float(colbert),
        ratio_colbert_to_cq=float(ratio),
    )


def becr_ratio(M, K, token_id_bytes=2):
    """Space ratio of the 5x256-bit LSH signature scheme to packed codes."""
    if M < 1 or K < 2 or token_id_bytes < 0:
        raise BadParam("invalid becr_ratio parameters")
    return float(5 * 256 / (M * np.log2(K) + 8 * token_id_bytes))
