import pytest

from db_manager import ResultsManager


@pytest.fixture
def manager(tmp_path):
    return ResultsManager(str(tmp_path / "nested" / "results.db"))


def test_save_and_list_run(manager):
    rows = [
        {"image_id": "img0", "nmi": 1.2, "qabf": 0.7, "ssim": None, "mse": None},
        {"image_id": "*", "param_name": "omega", "param_value": 0.54, "nmi": 1.1,
         "qabf": 0.6, "mask_accuracy": 0.97, "images": 3},
    ]
    assert manager.save_records("run-1", "sweep", rows) == 2

    listed = manager.list_run("run-1")
    assert [r["image_id"] for r in listed] == ["img0", "*"]
    assert listed[0]["ssim"] is None
    assert listed[1]["param_value"] == pytest.approx(0.54)
    assert listed[1]["mask_accuracy"] == pytest.approx(0.97)
    assert listed[1]["command"] == "sweep"
    assert "images" not in listed[1]


def test_list_all_filters_and_orders_newest_first(manager):
    manager.save_records("a", "eval", [{"image_id": "x", "nmi": 1.0, "qabf": 0.5}])
    manager.save_records("b", "compare", [{"image_id": "y", "mode": "coupled",
                                           "nmi": 1.0, "qabf": 0.5}])
    assert [r["run_id"] for r in manager.list_all()] == ["b", "a"]
    only_eval = manager.list_all(command="eval")
    assert len(only_eval) == 1 and only_eval[0]["image_id"] == "x"


def test_delete_run(manager):
    manager.save_records("gone", "eval", [{"image_id": "x"}, {"image_id": "y"}])
    assert manager.delete_run("gone") == 2
    assert manager.list_run("gone") == []
    assert manager.delete_run("gone") == 0


def test_records_persist_across_managers(tmp_path):
    path = str(tmp_path / "results.db")
    ResultsManager(path).save_records("r", "eval", [{"image_id": "x", "mse": 3.5}])
    assert ResultsManager(path).list_run("r")[0]["mse"] == pytest.approx(3.5)
