import json

from history import TrainingHistory
from metrics import ScdScores


def scores(sek):
    return ScdScores(oa=0.9, miou=0.5, sek=sek, f1=0.3)


def test_best_epoch_by_sek():
    history = TrainingHistory()
    history.add_epoch(1, {"total": 3.0}, scores(0.1))
    history.add_epoch(2, {"total": 2.0}, scores(0.3))
    history.add_epoch(3, {"total": 1.0}, scores(0.3))
    assert history.best()["epoch"] == 2
    assert history.losses() == [3.0, 2.0, 1.0]


def test_best_without_scores():
    history = TrainingHistory()
    history.add_epoch(1, {"total": 1.0})
    assert history.best() is None


def test_long_runs_keep_the_best_epoch():
    history = TrainingHistory()
    history.add_epoch(1, {"total": 5.0}, scores(0.9))
    for epoch in range(2, 60):
        history.add_epoch(epoch, {"total": 1.0}, scores(0.1))
    assert len(history) == 59
    restored = TrainingHistory.from_list(history.to_list())
    assert restored.best()["epoch"] == 1


def test_records_hold_plain_floats():
    record = TrainingHistory().add_epoch(1, {"total": 1.0}, scores(0.2))
    assert all(type(v) is float for v in record["scores"].values())


def test_json_round_trip():
    history = TrainingHistory()
    history.add_epoch(1, {"total": 1.5, "sem": 1.0}, scores(0.2), change_f1=0.6)
    restored = TrainingHistory.from_list(json.loads(json.dumps(history.to_list())))
    assert restored.records == history.records


def test_summary_lines():
    history = TrainingHistory()
    history.add_epoch(1, {"total": 1.5}, scores(0.25), change_f1=0.6)
    history.add_epoch(2, {"total": 1.25})
    lines = history.summarize().splitlines()
    assert len(lines) == 2
    assert "SeK 0.2500" in lines[0] and "change F1 0.6000" in lines[0]
    assert lines[1] == "epoch 2: loss 1.2500"
