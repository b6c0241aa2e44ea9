"""The bundled toy corpus and sample dictionaries.

Each toy class owns four signature characters.  A sample mixes two to four
signature characters of its class, at most one character from another class
and neutral filler, so the class is always the one with the most signature
characters in the text.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

CLASSES = {
    "体育": "球队赛跑",
    "财经": "钱股银市",
    "科技": "电脑网机",
    "娱乐": "歌影星舞",
}
FILLER = "的了在是有人大中盟花草莲语言日月"

TRAIN_FILE = "toy_train.tsv"
TEST_FILE = "toy_test.tsv"
DICT_FILES = {"radical": "radical.tsv", "wubi": "wubi.tsv", "pinyin": "pinyin.tsv"}
CONFIG_FILE = "toy.conf"


def data_path(name: str) -> Path:
    return Path(str(resources.files("motoclf") / "data" / name))


def dictionary_paths() -> dict[str, Path]:
    return {k: data_path(v) for k, v in DICT_FILES.items()}


def majority_class(text: str) -> str | None:
    """Class with strictly the most signature characters, else None."""
    counts = {label: sum(ch in sig for ch in text) for label, sig in CLASSES.items()}
    best = max(counts.values())
    winners = [label for label, c in counts.items() if c == best]
    return winners[0] if best > 0 and len(winners) == 1 else None


def synthetic_corpus(n: int = 200, seed: int = 20240601) -> list[tuple[str, str]]:
    """``n`` (label, text) pairs, classes in round-robin order."""
    rng = np.random.default_rng(seed)
    labels = list(CLASSES)
    rows = []
    for k in range(n):
        label = labels[k % len(labels)]
        own = rng.integers(2, 5)
        chars = list(rng.choice(list(CLASSES[label]), size=own))
        if rng.random() < 0.5:
            other = labels[(labels.index(label) + rng.integers(1, len(labels))) % len(labels)]
            chars.append(str(rng.choice(list(CLASSES[other]))))
        chars += list(rng.choice(list(FILLER), size=rng.integers(1, 4)))
        rng.shuffle(chars)
        text = "".join(chars)
        assert majority_class(text) == label
        rows.append((label, text))
    return rows


def write_corpus(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for label, text in rows:
            f.write(f"{label}\t{text}\n")


def regenerate(directory=None) -> None:
    directory = Path(directory) if directory else data_path("")
    write_corpus(directory / TRAIN_FILE, synthetic_corpus(200, seed=20240601))
    write_corpus(directory / TEST_FILE, synthetic_corpus(80, seed=20240602))


if __name__ == "__main__":
    regenerate()
