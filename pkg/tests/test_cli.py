import json

import pytest

from src.cli import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(autouse=True)
def serial_workers(monkeypatch):
    monkeypatch.setenv("POLYREP_THREADS", "1")


@pytest.fixture
def corpus_dir(tmp_path):
    out = tmp_path / "corpus"
    assert main(["generate", "--seed", "5", "--frames", "3", "--out", str(out)]) == EXIT_OK
    return out


def read_csv_lines(path):
    return path.read_text(encoding="utf-8").splitlines()


def test_generate_writes_corpus(corpus_dir):
    assert (corpus_dir / "corpus.json").is_file()
    assert (corpus_dir / "camera.json").is_file()
    assert len(list((corpus_dir / "frames").glob("*.json"))) == 3
    echo = json.loads((corpus_dir / "config-echo.json").read_text())
    assert echo["tool"] == "polyrep"
    assert echo["arguments"]["seed"] == 5


def test_generate_is_reproducible(corpus_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["generate", "--seed", "5", "--frames", "3", "--out", str(again)]) == EXIT_OK
    for path in (corpus_dir / "frames").glob("*.json"):
        assert path.read_bytes() == (again / "frames" / path.name).read_bytes()


def test_upper_bound_command(corpus_dir, tmp_path, capsys):
    out = tmp_path / "ub"
    code = main(["upper-bound", "--corpus", str(corpus_dir), "--points", "12,24", "--out", str(out)])
    assert code == EXIT_OK
    lines = read_csv_lines(out / "report.csv")
    assert lines[0] == "Representation,BoundingBox,RotatedBox,P12,P24"
    assert lines[1].startswith("Mean IoU,")
    assert capsys.readouterr().out.splitlines() == lines
    report = json.loads((out / "report.json").read_text())
    assert report["generatorSeed"] == 5


def test_convert_then_eval_is_perfect(corpus_dir, tmp_path, capsys):
    converted = tmp_path / "pred"
    assert main(["convert", "--corpus", str(corpus_dir), "--to", "box", "--out", str(converted)]) == EXIT_OK
    out = tmp_path / "eval"
    code = main(
        [
            "eval",
            "--truth",
            str(corpus_dir),
            "--pred",
            str(converted / "predictions.json"),
            "--no-nms",
            "--experiment",
            "box",
            "--overlays",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    assert "repVsRep: mAP 1.0000" in capsys.readouterr().out
    header, row = read_csv_lines(out / "report.csv")
    assert row.split(",")[0] == "box"
    assert row.split(",")[header.split(",").index("repVsRep.mAP")] == "1.0000"
    assert sorted(p.name for p in (out / "overlays").iterdir()) == [
        f"frame-{i:06d}.svg" for i in range(3)
    ]


def test_eval_both_modes(corpus_dir, tmp_path):
    converted = tmp_path / "pred"
    main(["convert", "--corpus", str(corpus_dir), "--to", "polygon", "--points", "24", "--out", str(converted)])
    out = tmp_path / "eval"
    code = main(
        ["eval", "--truth", str(corpus_dir), "--pred", str(converted / "predictions.json"), "--mode", "both", "--out", str(out)]
    )
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert set(report["reports"]) == {"repVsRep", "repVsInstance"}
    _, row = read_csv_lines(out / "report.csv")
    assert "" not in row.split(",")[3::3]


def test_missing_corpus_is_a_data_error(tmp_path):
    code = main(["upper-bound", "--corpus", str(tmp_path / "nowhere"), "--out", str(tmp_path / "out")])
    assert code == EXIT_DATA


def test_malformed_predictions_are_a_data_error(corpus_dir, tmp_path):
    pred = tmp_path / "predictions.json"
    pred.write_text("[1, 2")
    code = main(["eval", "--truth", str(corpus_dir), "--pred", str(pred), "--out", str(tmp_path / "out")])
    assert code == EXIT_DATA


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["eval", "--truth", "x"],
        ["eval", "--truth", "x", "--pred", "y", "--out", "z", "--iou", "1.5"],
        ["upper-bound", "--corpus", "x", "--out", "y", "--points", "2,24"],
        ["generate", "--frames", "0", "--out", "x"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_unwritable_output_is_a_usage_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["generate", "--frames", "1", "--out", str(blocker / "sub")]) == EXIT_USAGE


def test_loss_check_passes(capsys):
    assert main(["loss-check", "--seed", "42", "--trials", "2"]) == EXIT_OK
    assert "worst: head=" in capsys.readouterr().out


def test_loss_check_reports_failure():
    assert main(["loss-check", "--trials", "1", "--tolerance", "-1"]) == EXIT_INTERNAL


def test_occupancy_demo(tmp_path, capsys):
    out = tmp_path / "occ"
    assert main(["occupancy", "--demo", "--reps", "box", "P24", "mask", "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    assert printed == ["Representation,Occupancy", "BoundingBox,occupied", "P24,free", "mask,free"]
    assert read_csv_lines(out / "report.csv") == printed


def test_occupancy_with_predictions(tmp_path, capsys):
    region = tmp_path / "region.json"
    region.write_text(json.dumps({"region": [[10, 10], [30, 10], [30, 30], [10, 30]]}))
    pred = tmp_path / "predictions.json"
    pred.write_text(
        json.dumps(
            {
                "schemaVersion": 1,
                "detections": [
                    {
                        "frameId": "000000",
                        "id": 0,
                        "class": "vehicle",
                        "confidence": 0.9,
                        "rep": {"type": "box", "cx": 20, "cy": 20, "w": 4, "h": 4},
                    }
                ],
            }
        )
    )
    assert main(["occupancy", "--region", str(region), "--pred", str(pred)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[1] == "box,occupied"


def test_occupancy_predictions_need_region(tmp_path):
    assert main(["occupancy", "--pred", str(tmp_path / "p.json")]) == EXIT_USAGE
