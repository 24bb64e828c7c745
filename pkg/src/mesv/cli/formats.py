"""Binary and text file formats: embeddings, features, trials, scores and models.

All binary formats are little-endian. Strings are UTF-8 with a u16 byte-length
prefix.
"""

import struct
from collections import OrderedDict

import numpy as np

from ..encoder import FeatureSequence
from ..errors import (CompatibilityError, FormatError, ParseError, ReferentialIntegrityError)
from ..records import EmbeddingRecord, ScoredTrial, TrialPair

EMB_MAGIC = b"EMB1"
FEA_MAGIC = b"FEA1"
MODEL_MAGIC = b"ENKT"
SCORE_DIGITS = 9


class _Reader:
    def __init__(self, data, what):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what} at byte {self.pos} (need {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<H")
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in {self.what} at byte {self.pos - n}") from exc

    def array(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size), dtype=dtype).astype(np.float64)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes in {self.what}")


def _string(s):
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"id longer than 65535 bytes: {s[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def _check_magic(reader, magic):
    got = reader.take(4) if len(reader.data) >= 4 else reader.data
    if got != magic:
        raise FormatError(f"bad magic {got!r} in {reader.what}, expected {magic!r}")


# embeddings -------------------------------------------------------------------

def write_embeddings(path, records, dim=None):
    if dim is None:
        dim = len(records[0].vector) if records else 0
    parts = [EMB_MAGIC, struct.pack("<II", len(records), dim)]
    for r in records:
        v = np.asarray(r.vector, dtype="<f4")
        if v.shape != (dim,):
            raise FormatError(f"record {r.utterance_id} has shape {v.shape}, file dim {dim}")
        parts += [_string(r.speaker_id), _string(r.utterance_id), v.tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_embeddings(path, expected_dim=None):
    rd = _Reader(_read_bytes(path), f"embedding file {path}")
    _check_magic(rd, EMB_MAGIC)
    count, dim = rd.unpack("<II")
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(f"embedding file dim {dim} does not match configured {expected_dim}")
    out = []
    for _ in range(count):
        spk = rd.string()
        utt = rd.string()
        out.append(EmbeddingRecord(spk, utt, rd.array("<f4", dim)))
    rd.done()
    return out


# features ---------------------------------------------------------------------

def write_features(path, sequences):
    """FEA1: u32 count, u32 feature dim; per sequence: speaker id, utterance id,
    u32 label, i32 genre, u32 frames, then dim x frames float32 (channel-major)."""
    dim = sequences[0].frames.shape[0] if sequences else 0
    parts = [FEA_MAGIC, struct.pack("<II", len(sequences), dim)]
    for s in sequences:
        f = np.asarray(s.frames, dtype="<f4")
        if f.ndim != 2 or f.shape[0] != dim:
            raise FormatError(f"sequence {s.utterance_id} has shape {f.shape}, file dim {dim}")
        genre = -1 if s.genre is None else int(s.genre)
        parts += [_string(s.speaker_id), _string(s.utterance_id),
                  struct.pack("<IiI", int(s.speaker_label), genre, f.shape[1]), f.tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_features(path, expected_dim=None):
    rd = _Reader(_read_bytes(path), f"feature file {path}")
    _check_magic(rd, FEA_MAGIC)
    count, dim = rd.unpack("<II")
    if expected_dim is not None and count and dim != expected_dim:
        raise FormatError(f"feature file dim {dim} does not match configured {expected_dim}")
    out = []
    for _ in range(count):
        spk = rd.string()
        utt = rd.string()
        label, genre, frames = rd.unpack("<IiI")
        data = rd.array("<f4", dim * frames).reshape(dim, frames)
        out.append(FeatureSequence(data, label, spk, utt, None if genre < 0 else genre))
    rd.done()
    return out


# trials and scores ------------------------------------------------------------

def format_trial(t):
    return f"{','.join(t.enroll_ids)}\t{t.test_id}\t{t.label}"


def write_trials(path, trials):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trials:
            fh.write(format_trial(t) + "\n")


def parse_trial_line(line, lineno):
    fields = line.split("\t")
    if len(fields) != 3:
        raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", line=lineno)
    enroll_field, test, label = fields
    enroll = enroll_field.split(",")
    if any(e == "" for e in enroll) or test == "":
        raise ParseError("empty id", line=lineno)
    if len(set(enroll)) != len(enroll):
        dup = sorted({e for e in enroll if enroll.count(e) > 1})
        raise ParseError(f"duplicate enrollment ids {dup}", line=lineno)
    if label not in ("0", "1"):
        raise ParseError(f"label must be 0 or 1, got {label!r}", line=lineno)
    return TrialPair(tuple(enroll), test, int(label))


def _lines(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    if text.endswith("\n"):
        text = text[:-1]
    return text.split("\n") if text else []


def read_trials(path):
    return [parse_trial_line(line.rstrip("\r"), i + 1) for i, line in enumerate(_lines(path))]


def format_score(x):
    return f"{x:.{SCORE_DIGITS}g}"


def write_scores(path, scored):
    """``lineIndex<TAB>score<TAB>label``; ``lineIndex`` is the 0-based trial line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, s in enumerate(scored):
            fh.write(f"{i}\t{format_score(s.score)}\t{s.trial.label}\n")


def read_scores(path):
    """Return ``(indices, scores, labels)`` arrays."""
    idx, scores, labels = [], [], []
    for i, line in enumerate(_lines(path)):
        fields = line.rstrip("\r").split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", line=i + 1)
        try:
            idx.append(int(fields[0]))
            scores.append(float(fields[1]))
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", line=i + 1) from exc
        if fields[2] not in ("0", "1"):
            raise ParseError(f"label must be 0 or 1, got {fields[2]!r}", line=i + 1)
        if not np.isfinite(scores[-1]):
            raise ParseError("non-finite score", line=i + 1)
        labels.append(int(fields[2]))
    return np.array(idx, dtype=np.int64), np.array(scores), np.array(labels, dtype=np.int64)


def check_references(trials, known, what="utterance id"):
    """Raise if any trial id is not in ``known``; offenders in order of appearance."""
    missing = OrderedDict()
    for t in trials:
        for u in t.enroll_ids + (t.test_id,):
            if u not in known:
                missing[u] = None
    if missing:
        raise ReferentialIntegrityError(list(missing), what)


def unique_index(records, what="utterance id"):
    """``{utterance_id: record}``, rejecting ids that occur more than once."""
    out = {}
    dups = OrderedDict()
    for r in records:
        if r.utterance_id in out:
            dups[r.utterance_id] = None
        out[r.utterance_id] = r
    if dups:
        raise ReferentialIntegrityError(list(dups), f"duplicated {what}")
    return out


# model container --------------------------------------------------------------

def write_model(path, tensors):
    """ENKT: u32 count; per tensor: name, u8 rank, rank x u32 dims, float64 payload."""
    parts = [MODEL_MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        a = np.asarray(value, dtype="<f8")
        if a.ndim > 255:
            raise FormatError(f"tensor {name} has rank {a.ndim}")
        parts += [_string(name), struct.pack("<B", a.ndim),
                  struct.pack(f"<{a.ndim}I", *a.shape), a.tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_model(path):
    rd = _Reader(_read_bytes(path), f"model file {path}")
    _check_magic(rd, MODEL_MAGIC)
    (count,) = rd.unpack("<I")
    out = OrderedDict()
    for _ in range(count):
        name = rd.string()
        (rank,) = rd.unpack("<B")
        shape = rd.unpack(f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        if name in out:
            raise FormatError(f"duplicate tensor {name!r} in {path}")
        out[name] = rd.array("<f8", size).reshape(shape)
    rd.done()
    return out


def check_shapes(tensors, expected, prefix):
    """Verify every expected ``prefix + name`` tensor exists with the same shape."""
    bad = []
    for name, shape in expected.items():
        got = tensors.get(prefix + name)
        if got is None:
            bad.append(f"{prefix}{name} missing")
        elif tuple(got.shape) != tuple(shape):
            bad.append(f"{prefix}{name} {tuple(got.shape)} != {tuple(shape)}")
    if bad:
        raise CompatibilityError("model does not match configuration: " + "; ".join(bad[:10]))
