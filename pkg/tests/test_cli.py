import json
from pathlib import Path

import pytest

from tabstruct.cli import main
from tabstruct.ingest import DetectionRecord, detections_to_json, iter_voc_dir
from tabstruct.structure import grid_from_json, synth_table

VOC = Path(__file__).parent / "fixtures" / "voc"
GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(autouse=True)
def no_env_config(monkeypatch):
    monkeypatch.delenv("TABSTRUCT_CONFIG", raising=False)


def test_stats_fixture(capsys):
    code, out, err = run(capsys, "stats", VOC)
    assert code == 0
    cats = json.loads(out)["categories"]
    assert [cats[k]["count"] for k in ("table", "table column", "table row", "table spanning cell")] == [2, 3, 3, 1]
    assert cats["table row"]["mean_size"] == 125
    assert "skipped 1" in err


def test_stats_jobs_match_serial(capsys):
    assert run(capsys, "stats", VOC)[1] == run(capsys, "stats", VOC, "--jobs", 3, "--batch-size", 1)[1]


def test_stats_empty_dir(capsys, tmp_path):
    code, out, err = run(capsys, "stats", tmp_path)
    assert code == 0
    assert json.loads(out)["n_images"] == 0
    assert "no .xml" in err


def test_stats_strict_rejects_unknown(capsys):
    code, _, err = run(capsys, "stats", VOC, "--strict")
    assert code == 2 and "object[" in err


def test_stats_missing_dir(capsys, tmp_path):
    assert run(capsys, "stats", tmp_path / "nope")[0] == 2


def test_stats_text(capsys):
    code, out, _ = run(capsys, "stats", VOC, "--text")
    assert code == 0 and out.splitlines()[0] == "images: 3"


def gt_as_predictions(tmp_path):
    recs = [
        DetectionRecord(img.image_id, o.category, o.bbox, 1.0)
        for img in iter_voc_dir(str(VOC), sort=True)
        for o in img.objects
    ]
    path = tmp_path / "preds.json"
    path.write_text(detections_to_json(recs))
    return path, recs


def test_eval_perfect(capsys, tmp_path):
    preds, _ = gt_as_predictions(tmp_path)
    code, out, _ = run(capsys, "eval", VOC, preds)
    assert code == 0
    report = json.loads(out)
    assert report["ap"] == pytest.approx(100.0)
    assert report["ap50"] == pytest.approx(100.0)


def test_eval_text_table(capsys, tmp_path):
    preds, _ = gt_as_predictions(tmp_path)
    code, out, _ = run(capsys, "eval", VOC, preds, "--text")
    assert code == 0
    assert out.splitlines()[0] == "      AP    AP50    AP75    AP_S    AP_M    AP_L"


def test_eval_unknown_image(capsys, tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps([{"image_id": "ghost", "category_id": 0, "bbox": [0, 0, 1, 1], "score": 0.5}]))
    code, _, err = run(capsys, "eval", VOC, path)
    assert code == 2 and "ghost" in err


def test_eval_malformed_predictions(capsys, tmp_path):
    path = tmp_path / "p.json"
    path.write_text('[{"image_id": "img_a", "category_id": 9, "bbox": [0,0,1,1], "score": 0.5}]')
    code, _, err = run(capsys, "eval", VOC, path)
    assert code == 2 and "record 0" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["anchors", "--width", "100"],
        ["anchors", "--width", "100", "--height", "100", "--mode", "weird"],
        ["synth", "--rows", "2", "--cols", "2", "--span", "1,2"],
        ["synth", "--rows", "2"],
        ["eval", str(VOC)],
    ],
)
def test_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 1


def test_anchor_error_is_usage(capsys):
    code, _, err = run(capsys, "anchors", "--width", 4, "--height", 4)
    assert code == 1 and err


def test_anchors_shapes(capsys):
    code, out, _ = run(capsys, "anchors", "--width", 64, "--height", 64, "--levels", "16:64", "--ratios", "0.5,1,2", "--role", "column", "--no-clip")
    assert code == 0
    lines = [json.loads(l) for l in out.splitlines()]
    assert len(lines) == 4 * 4 * 3
    shapes = {(l["x_max"] - l["x_min"], l["y_max"] - l["y_min"]) for l in lines}
    assert shapes == {(32.0, 64.0), (64.0, 64.0), (128.0, 64.0)}
    assert {l["role"] for l in lines} == {"column"}


def test_anchors_text_counts(capsys):
    code, out, _ = run(capsys, "anchors", "--width", 100, "--height", 50, "--levels", "8:32,16:64", "--text")
    assert code == 0
    rows = out.splitlines()[1:]
    assert [int(r.split()[-1]) for r in rows] == [13 * 7 * 3 * 2, 7 * 4 * 3 * 2]


def write_batch(tmp_path, **extra):
    batch = {
        "boxes": [
            {"category": 1, "width": 200, "height": 100, "residual": [1.0]},
            {"category": 1, "width": 150, "height": 150, "residual": [2.0]},
            {"category": 1, "width": 250, "height": 50},
            {"category": 2, "width": 60, "height": 40, "residual": [-1.0, 0.0]},
        ],
        **extra,
    }
    path = tmp_path / "batch.json"
    path.write_text(json.dumps(batch))
    return path


def test_loss_two_categories(capsys, tmp_path):
    code, out, _ = run(capsys, "loss", write_batch(tmp_path))
    assert code == 0
    rep = json.loads(out)
    assert rep["counts"] == [0, 3, 1, 0]
    assert rep["mean_sizes"] == [None, 300.0, 100.0, None]
    assert rep["hardness"][1:3] == pytest.approx([0.75, 0.25])
    assert rep["weights"] == pytest.approx([0, 0.3775406687981454, 0.6224593312018546, 0], abs=1e-15)
    assert len(rep["grad_residuals"]) == 4 and rep["grad_residuals"][2] == []


def test_loss_flags_override_file(capsys, tmp_path):
    rep = json.loads(run(capsys, "loss", write_batch(tmp_path, **{"lambda": 0.0}), "--lam", 1.0)[1])
    assert rep["lambda"] == 1.0
    assert rep["hardness"][1:3] == pytest.approx([0.75, 0.25])


def test_loss_classification(capsys, tmp_path):
    path = write_batch(tmp_path, logits=[[0, 0, 0, 0], [0, 0, 0, 0]], labels=[1, 2])
    rep = json.loads(run(capsys, "loss", path)[1])
    assert "loss_classification" in rep and len(rep["grad_logits"]) == 2


def test_loss_bad_batch(capsys, tmp_path):
    path = tmp_path / "b.json"
    path.write_text('{"boxes": []}')
    assert run(capsys, "loss", path)[0] == 2
    path.write_text("not json")
    assert run(capsys, "loss", path)[0] == 2


def test_synth_then_infer_golden(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--rows", 3, "--cols", 3, "--span", "0,0,2,1", "--seed", 1)
    assert code == 0
    assert len(json.loads(out)) == 8
    preds = tmp_path / "p.json"
    preds.write_text(out)
    code, html, _ = run(capsys, "infer", preds)
    assert code == 0
    assert html == (GOLDEN / "synth_3x3_rowspan_seed1.html").read_text()


def test_synth_record_count(capsys):
    code, out, _ = run(capsys, "synth", "--rows", 3, "--cols", 3)
    assert code == 0 and len(json.loads(out)) == 7


def test_infer_json_round_trip(capsys, tmp_path):
    recs, truth = synth_table(4, 3, [(1, 0, 1, 3)], seed=5)
    preds = tmp_path / "p.json"
    preds.write_text(detections_to_json(recs))
    code, out, _ = run(capsys, "infer", preds, "--format", "json")
    assert code == 0 and grid_from_json(out) == truth


def test_infer_csv(capsys, tmp_path):
    recs, _ = synth_table(2, 2, seed=5)
    preds = tmp_path / "p.json"
    preds.write_text(detections_to_json(recs))
    code, out, _ = run(capsys, "infer", preds, "--format", "csv")
    assert code == 0 and out.count("\r\n") == 2


def test_infer_no_structure(capsys, tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps([{"image_id": "a", "category_id": 2, "bbox": [0, 0, 10, 10], "score": 0.9}]))
    code, _, err = run(capsys, "infer", path)
    assert code == 2 and "no structure" in err


def test_infer_needs_image_id(capsys, tmp_path):
    a, _ = synth_table(1, 1, image_id="a")
    b, _ = synth_table(1, 1, image_id="b")
    path = tmp_path / "p.json"
    path.write_text(detections_to_json(a + b))
    assert run(capsys, "infer", path)[0] == 1
    assert run(capsys, "infer", path, "--image-id", "b")[0] == 0


def test_config_defaults_and_precedence(capsys, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rows": 2, "cols": 2}))
    code, out, _ = run(capsys, "synth", "--rows", 1, "--cols", 1, "--config", cfg)
    assert code == 0 and len(json.loads(out)) == 3
    monkeypatch.setenv("TABSTRUCT_CONFIG", str(cfg))
    code, out, _ = run(capsys, "synth", "--rows", 3, "--cols", 1)
    assert code == 0 and len(json.loads(out)) == 1 + 3 + 1
    code, out, _ = run(capsys, "synth")
    assert code == 0 and len(json.loads(out)) == 1 + 2 + 2


def test_config_file_beats_env(capsys, tmp_path, monkeypatch):
    env_cfg = tmp_path / "env.json"
    env_cfg.write_text(json.dumps({"format": "csv"}))
    file_cfg = tmp_path / "file.json"
    file_cfg.write_text(json.dumps({"format": "json"}))
    recs, _ = synth_table(1, 1)
    preds = tmp_path / "p.json"
    preds.write_text(detections_to_json(recs))
    monkeypatch.setenv("TABSTRUCT_CONFIG", str(env_cfg))
    assert run(capsys, "infer", preds)[1].endswith("\r\n")
    assert json.loads(run(capsys, "infer", preds, "--config", file_cfg)[1])["n_rows"] == 1


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rows": 2, "colz": 2}))
    code, _, err = run(capsys, "synth", "--cols", 1, "--config", cfg)
    assert code == 1 and "colz" in err


def test_config_unreadable(capsys, tmp_path):
    assert run(capsys, "synth", "--rows", 1, "--cols", 1, "--config", tmp_path / "missing.json")[0] == 1


def test_output_file(capsys, tmp_path):
    target = tmp_path / "out.json"
    code, out, _ = run(capsys, "synth", "--rows", 1, "--cols", 1, "-o", target, "--grid-output", tmp_path / "g.json")
    assert code == 0 and out == ""
    assert len(json.loads(target.read_text())) == 3
    assert grid_from_json((tmp_path / "g.json").read_text()).n_cols == 1


def test_repeated_runs_identical(capsys, tmp_path):
    preds, _ = gt_as_predictions(tmp_path)
    first = run(capsys, "eval", VOC, preds)[1]
    assert run(capsys, "eval", VOC, preds, "--jobs", 4)[1] == first
    a = run(capsys, "synth", "--rows", 4, "--cols", 4, "--jitter", 1.5, "--seed", 3)[1]
    assert run(capsys, "synth", "--rows", 4, "--cols", 4, "--jitter", 1.5, "--seed", 3)[1] == a
