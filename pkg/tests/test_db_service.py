import pytest

from services.db_service import DbService


@pytest.fixture
def db(tmp_path):
    return DbService(f"sqlite:///{tmp_path}/registry.db")


def test_run_lifecycle(db):
    run_id = db.start_run({"seed": 4, "mode": "imagined"}, "abc123", "runs/a")
    run = db.get_run(run_id)
    assert run["status"] == "running"
    assert (run["seed"], run["mode"], run["config_hash"]) == (4, "imagined", "abc123")
    assert run["finished_at"] is None

    db.finish_run(run_id, 12, 0.5)

    run = db.get_run(run_id)
    assert run["status"] == "finished"
    assert run["updates"] == 12
    assert run["final_success_rate"] == 0.5
    assert run["finished_at"] is not None
    assert run["config"] == {"seed": 4, "mode": "imagined"}


def test_failed_runs_are_filtered(db):
    ok = db.start_run({"seed": 0}, "h", "runs/ok")
    bad = db.start_run({"seed": 1}, "h", "runs/bad")
    db.finish_run(ok, 3, 1.0)
    db.finish_run(bad, 0, None, status="failed")
    assert [run["id"] for run in db.list_runs()] == [ok, bad]
    assert [run["id"] for run in db.list_runs(status="failed")] == [bad]


def test_unknown_run(db):
    assert db.get_run(999) is None
    db.finish_run(999, 1, 0.0)


class TestAblationCells:
    def test_record_and_read_back(self, db):
        db.record_cell("dream-length", "1", 0, "base", 0.25)
        db.record_cell("dream-length", "2", 0, "base", 0.5)
        db.record_cell("dream-length", "1", 0, "other", 0.75)
        assert db.completed_cells("dream-length", "base") == {("1", 0): 0.25, ("2", 0): 0.5}

    def test_recording_again_replaces_the_value(self, db):
        db.record_cell("real-fraction", "0.5", 1, "base", 0.1)
        db.record_cell("real-fraction", "0.5", 1, "base", 0.9)
        cells = db.get_cells("real-fraction")
        assert len(cells) == 1
        assert cells[0]["final_success_rate"] == 0.9

    def test_sweeps_are_separate(self, db):
        db.record_cell("wm-training", "frozen", 0, "base", 0.0)
        assert db.completed_cells("dream-length", "base") == {}
