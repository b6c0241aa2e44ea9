import shutil
from pathlib import Path

import numpy as np
import pytest

from motoclf import chargrains as cg
from motoclf import toydata

_acceptance = []


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.user_properties and dict(report.user_properties).get("criterion")
    if name:
        _acceptance.append((name, report.outcome))


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("acceptance")
    if marker:
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_dicts():
    return cg.load_dictionaries(toydata.dictionary_paths())


@pytest.fixture(scope="session")
def toy_corpus():
    return cg.load_corpus(toydata.data_path(toydata.TRAIN_FILE))


@pytest.fixture(scope="session")
def toy_featurizer(toy_corpus, toy_dicts):
    return cg.Featurizer.fit(toy_corpus, toy_dicts)


@pytest.fixture
def toy_files(tmp_path) -> dict[str, Path]:
    """Copies of the bundled data and config in a scratch directory."""
    src = toydata.data_path("")
    for name in [toydata.TRAIN_FILE, toydata.TEST_FILE, toydata.CONFIG_FILE, *toydata.DICT_FILES.values()]:
        shutil.copy(src / name, tmp_path / name)
    return {
        "dir": tmp_path,
        "config": tmp_path / toydata.CONFIG_FILE,
        "train": tmp_path / toydata.TRAIN_FILE,
        "test": tmp_path / toydata.TEST_FILE,
        **{k: tmp_path / v for k, v in toydata.DICT_FILES.items()},
    }


@pytest.fixture(scope="session")
def toy_samples(toy_featurizer, toy_corpus):
    return [toy_featurizer.encode(s) for s in toy_corpus.samples]
