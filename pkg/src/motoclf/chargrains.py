"""Character-level featurization: dictionaries, vocabularies, encoding.

A text is viewed at four granularities.  Characters are used as-is; the
radical, Wubi and Pinyin streams come from one-to-one lookup dictionaries
(first listed reading wins for polyphones).  Every stream is cut or padded to
its own fixed length, padding with whatever the dictionary maps '一' to.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

CHAR, RADICAL, WUBI, PINYIN = "char", "radical", "wubi", "pinyin"
GRANULARITIES = (CHAR, RADICAL, WUBI, PINYIN)
DICT_KINDS = (RADICAL, WUBI, PINYIN)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
PAD_CHAR = "一"


class DictionaryError(ValueError):
    """Malformed dictionary file line."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Dictionary:
    kind: str
    entries: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        if self.kind not in DICT_KINDS:
            raise ValueError(f"unknown dictionary kind {self.kind!r}")

    def __contains__(self, ch: str) -> bool:
        return ch in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class RawSample:
    label: str
    text: str


@dataclass
class Corpus:
    samples: list[RawSample]
    labels: list[str]
    skipped: int = 0


@dataclass(frozen=True)
class EncodedSample:
    char_ids: tuple[int, ...]
    radical_ids: tuple[int, ...]
    wubi_ids: tuple[int, ...]
    pinyin_ids: tuple[int, ...]
    class_id: int

    def ids(self, granularity: str) -> tuple[int, ...]:
        return getattr(self, f"{granularity}_ids")


class Vocab:
    """Token/id bijection with PAD=0 and UNK=1 reserved."""

    def __init__(self, granularity: str, tokens: Sequence[str] = ()):
        self.granularity = granularity
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r} in {granularity} vocab")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.granularity == other.granularity and self.itos == other.itos

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i, tok in enumerate(self.itos):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path, granularity: str) -> Vocab:
        vocab = cls(granularity)
        with open(path, encoding="utf-8") as f:
            rows = [line.rstrip("\n").split("\t") for line in f if line.strip("\n")]
        for lineno, row in enumerate(rows, 1):
            if len(row) != 2 or int(row[1]) != lineno - 1:
                raise ValueError(f"{path}:{lineno}: expected 'token<TAB>{lineno - 1}'")
        if [r[0] for r in rows[:2]] != [PAD, UNK]:
            raise ValueError(f"{path}: first two entries must be {PAD} and {UNK}")
        for tok, _ in rows[2:]:
            vocab.stoi[tok] = len(vocab.itos)
            vocab.itos.append(tok)
        return vocab


# -- dictionaries -------------------------------------------------------------


def load_dictionary(path, kind: str) -> Dictionary:
    """Read a ``char<TAB>tok[,tok...]`` file.  First occurrence of a key wins."""
    entries: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DictionaryError(path, lineno, f"expected 2 tab-separated fields, got {len(fields)}")
            key, value = fields
            if len(key) != 1:
                raise DictionaryError(path, lineno, f"key {key!r} is not a single character")
            tokens = tuple(t.strip() for t in value.split(","))
            if not tokens or any(not t for t in tokens):
                raise DictionaryError(path, lineno, "empty token")
            entries.setdefault(key, tokens)
    return Dictionary(kind, entries)


def save_dictionary(dictionary: Dictionary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ch, tokens in dictionary.entries.items():
            f.write(f"{ch}\t{','.join(tokens)}\n")


def transliterate(text: str, dictionary: Dictionary) -> list[str]:
    out: list[str] = []
    for ch in text:
        out.extend(dictionary.entries.get(ch, (UNK,)))
    return out


def streams(text: str, dicts: Mapping[str, Dictionary]) -> dict[str, list[str]]:
    """Token streams for every granularity that has a dictionary (plus chars)."""
    out = {CHAR: list(text)}
    for kind, d in dicts.items():
        out[kind] = transliterate(text, d)
    return out


# -- corpora ----------------------------------------------------------------


def load_corpus(path, labels: Sequence[str] | None = None, strict: bool = False) -> Corpus:
    """Read ``label<TAB>text`` lines in file order.

    Without ``labels`` the inventory is built from first appearance.  With
    ``labels`` and ``strict`` an unseen label is an error; without ``strict``
    it is appended to the inventory.
    """
    inventory = list(labels) if labels is not None else []
    known = set(inventory)
    samples: list[RawSample] = []
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            label, sep, text = line.partition("\t")
            if not sep:
                raise CorpusError(f"{path}:{lineno}: missing tab separator")
            text = text.strip()
            if not text:
                skipped += 1
                continue
            if label not in known:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: unknown label {label!r}")
                known.add(label)
                inventory.append(label)
            samples.append(RawSample(label, text))
    if skipped:
        log.warning("%s: skipped %d line(s) with empty text", path, skipped)
    return Corpus(samples, inventory, skipped)


def is_chinese(ch: str) -> bool:
    return "一" <= ch <= "鿿" or "㐀" <= ch <= "䶿"


def non_chinese_ratio(text: str) -> float:
    return sum(not is_chinese(c) for c in text) / len(text) if text else 0.0


# -- vocabularies and lengths ------------------------------------------------


def build_vocab(sequences: Iterable[Sequence[str]], granularity: str) -> Vocab:
    counts = Counter(tok for seq in sequences for tok in seq if tok not in (PAD, UNK))
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocab(granularity, ordered)


def target_length(lengths: Sequence[int]) -> int:
    if not lengths:
        raise ValueError("cannot take the average length of an empty corpus")
    total = sum(lengths)
    return max(1, -(-total // len(lengths)))


def target_lengths(corpus: Mapping[str, Sequence[Sequence[str]]]) -> dict[str, int]:
    """Per-granularity mean stream length, rounded up, at least 1."""
    return {g: target_length([len(s) for s in seqs]) for g, seqs in corpus.items()}


# -- encoding ---------------------------------------------------------------


@dataclass
class Featurizer:
    """Everything needed to turn raw text into fixed-length id streams."""

    dicts: dict[str, Dictionary]
    vocabs: dict[str, Vocab]
    targets: dict[str, int]
    labels: list[str] = field(default_factory=list)

    @property
    def granularities(self) -> tuple[str, ...]:
        return tuple(g for g in GRANULARITIES if g in self.vocabs)

    def pad_ids(self, granularity: str) -> list[int]:
        tokens = [PAD_CHAR] if granularity == CHAR else transliterate(PAD_CHAR, self.dicts[granularity])
        vocab = self.vocabs[granularity]
        ids = [vocab.stoi[t] for t in tokens if t in vocab.stoi and t != UNK]
        return ids or [PAD_ID]

    def encode_stream(self, tokens: Sequence[str], granularity: str) -> tuple[int, ...]:
        target = self.targets[granularity]
        ids = self.vocabs[granularity].encode(tokens[:target])
        if len(ids) < target:
            pad = self.pad_ids(granularity)
            ids.extend(pad[k % len(pad)] for k in range(target - len(ids)))
        return tuple(ids)

    def encode(self, sample: RawSample) -> EncodedSample:
        toks = streams(sample.text, self.dicts)
        ids = {g: self.encode_stream(toks[g], g) if g in self.vocabs else () for g in GRANULARITIES}
        return EncodedSample(
            ids[CHAR], ids[RADICAL], ids[WUBI], ids[PINYIN], self.labels.index(sample.label)
        )

    def save(self, directory) -> None:
        """Vocabularies, labels, target lengths and dictionaries as text files."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for g, vocab in self.vocabs.items():
            vocab.save(directory / f"vocab.{g}.tsv")
        for kind, d in self.dicts.items():
            save_dictionary(d, directory / f"dict.{kind}.tsv")
        with open(directory / "labels.tsv", "w", encoding="utf-8", newline="\n") as f:
            f.writelines(f"{label}\n" for label in self.labels)
        with open(directory / "lengths.tsv", "w", encoding="utf-8", newline="\n") as f:
            f.writelines(f"{g}\t{self.targets[g]}\n" for g in self.granularities)

    @classmethod
    def load(cls, directory) -> Featurizer:
        directory = Path(directory)
        targets = {}
        with open(directory / "lengths.tsv", encoding="utf-8") as f:
            for line in f:
                g, n = line.rstrip("\n").split("\t")
                targets[g] = int(n)
        vocabs = {g: Vocab.load(directory / f"vocab.{g}.tsv", g) for g in targets}
        dicts = {
            kind: load_dictionary(directory / f"dict.{kind}.tsv", kind)
            for kind in DICT_KINDS
            if kind in targets
        }
        with open(directory / "labels.tsv", encoding="utf-8") as f:
            labels = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(dicts, vocabs, targets, labels)

    @classmethod
    def fit(cls, corpus: Corpus, dicts: Mapping[str, Dictionary]) -> Featurizer:
        """Build vocabularies and target lengths from a training corpus."""
        if not corpus.samples:
            raise CorpusError("empty training corpus")
        per_sample = [streams(s.text, dicts) for s in corpus.samples]
        grains = [CHAR] + [g for g in DICT_KINDS if g in dicts]
        seqs = {g: [toks[g] for toks in per_sample] for g in grains}
        vocabs = {g: build_vocab(seqs[g], g) for g in grains}
        return cls(dict(dicts), vocabs, target_lengths(seqs), list(corpus.labels))


def encode(sample: RawSample, dicts, vocabs, targets, labels: Sequence[str]) -> EncodedSample:
    return Featurizer(dict(dicts), dict(vocabs), dict(targets), list(labels)).encode(sample)


def load_dictionaries(paths: Mapping[str, str | Path]) -> dict[str, Dictionary]:
    return {kind: load_dictionary(p, kind) for kind, p in paths.items()}
