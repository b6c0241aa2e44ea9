import numpy as np

from motoclf import report
from motoclf.trainkit import EpochRecord, Metrics


def metrics():
    return Metrics.from_labels([0, 0, 1, 1, 2], [0, 1, 1, 1, 2], 3)


def test_metrics_text_and_tsv():
    m = metrics()
    text = report.metrics_text(m, ["体育", "财经", "科技"])
    assert "samples   5" in text and "accuracy  0.8000" in text
    rows = report.metrics_tsv(m, ["a", "b", "c"]).splitlines()
    assert rows[0] == "class\tprecision\trecall\tsupport"
    assert rows[1] == "a\t1.000000\t0.500000\t2"


def test_write_metrics_with_figure(tmp_path):
    written = report.write_metrics(tmp_path / "r", metrics(), ["体育", "财经", "科技"], figures=True)
    assert [p.name for p in written] == ["metrics.txt", "metrics.tsv", "confusion.png"]
    assert written[2].read_bytes()[:4] == b"\x89PNG"


def test_figures_are_reproducible(tmp_path):
    recs = [EpochRecord(e, "train", 1.0 / e, metrics()) for e in range(1, 4)]
    a = report.plot_learning_curve(recs, tmp_path / "a.png").read_bytes()
    b = report.plot_learning_curve(recs, tmp_path / "b.png").read_bytes()
    assert a == b


def test_attention_rows_and_plot(tmp_path):
    alpha = np.full((3, 2), 1 / 3)
    rows = report.attention_rows("radical", alpha)
    assert len(rows) == 6
    assert rows[0] == "radical\t0\t0\t0.3333333333"
    assert report.plot_attention({"radical": alpha, "wubi": alpha}, tmp_path / "att.png").is_file()


def test_printable_labels():
    assert report._printable(["sports", "体育"]) == ["sports", "#1"]
