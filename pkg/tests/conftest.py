import pytest

from memotion.dataset import CanonicalLabels, MemeRecord, Scale, Sentiment, load_split, repair_text, save_records
from memotion.synthetic import make_toy_dataset


@pytest.fixture(scope="session")
def toy_raw(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_raw")
    return root, make_toy_dataset(root)


@pytest.fixture(scope="session")
def toy_store(toy_raw, tmp_path_factory):
    """Preprocessed record store (train/dev/test jsonl) with real image files."""
    root, csvs = toy_raw
    store = tmp_path_factory.mktemp("toy_store")
    for split, path in csvs.items():
        records = [repair_text(r) for r in load_split(path, root / "images", split)]
        save_records(records, store / f"{split}.jsonl")
    return store


@pytest.fixture(scope="session")
def toy_splits(toy_raw):
    root, csvs = toy_raw
    return {s: [repair_text(r) for r in load_split(p, root / "images", s)] for s, p in csvs.items()}


def make_labels(sentiment="positive", funny="not", sarcasm="not", offensive="not", motivational=False):
    return CanonicalLabels(
        Sentiment(sentiment), Scale(funny), Scale(sarcasm), Scale(offensive), motivational
    )


def make_record(id="r0", text="a caption", image_path="", labels=None, **kw):
    return MemeRecord(id=id, image_path=image_path, corrected_text=text, labels=labels, **kw)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
