from __future__ import annotations

import io
import json
import sys

import numpy as np
import pytest

from visloop.cli import main
from visloop.core import read_jsonl as _read_jsonl, write_jsonl
from visloop.vistools import canny, load_image


def read_jsonl(path):
    return list(_read_jsonl(path))


@pytest.fixture
def data(tmp_path):
    assert main(["synth", "generate", "--n", "4", "--seed", "1", "--out", str(tmp_path / "d")]) == 0
    return tmp_path


def test_synth_writes_manifest(data):
    rows = read_jsonl(data / "d" / "manifest.jsonl")
    assert len(rows) == 4 and all((data / "d" / r["image"]).exists() for r in rows)


def test_tools_apply(data):
    img = data / "d" / "synth-0000.png"
    out = data / "edges.png"
    main(["tools", "apply", "--tool", "canny", "--image", str(img), "--out", str(out)])
    assert np.array_equal(load_image(out), canny(load_image(img)))
    main(["tools", "apply", "--tool", "roi", "--image", str(img), "--bbox", "0,0,32,32", "--out", str(out)])
    assert load_image(out).shape[0] > 32
    with pytest.raises(SystemExit):
        main(["tools", "apply", "--tool", "roi", "--image", str(img), "--bbox", "1,2", "--out", str(out)])


def test_run_eval_reward(data, capsys):
    m, runs = str(data / "d" / "manifest.jsonl"), str(data / "runs")
    main(["run", "--manifest", m, "--mock", "oracle", "--out", runs, "--concurrency", "2"])
    main(["eval", "--manifest", m, "--runs", runs, "--out", str(data / "e.json"), "--csv", str(data / "e.csv"),
          "--by-source"])
    rep = json.loads((data / "e.json").read_text())
    assert rep["overall"]["iou"] == 100.0 and "synthetic" in rep["by_source"]
    assert (data / "e.csv").read_text().startswith("group,n,IoU")
    capsys.readouterr()
    main(["reward", "--manifest", m, "--runs", runs, "--weights", "1,0,0,0,0"])
    assert json.loads(capsys.readouterr().out)["summary"]["total"]["mean"] == 1.0


def test_reward_serve(monkeypatch, capsys):
    req = {"id": "q", "text": "", "gt_bbox": [0, 0, 2, 2], "gt_characters": ["color"]}
    monkeypatch.setattr(sys, "stdin", io.StringIO(json.dumps(req) + "\n"))
    main(["reward", "--serve"])
    assert json.loads(capsys.readouterr().out)["total"] == pytest.approx(-1.4)


def test_v2cot_pipeline(data, capsys):
    m = str(data / "d" / "manifest.jsonl")
    sid = read_jsonl(m)[0]["id"]
    write_jsonl(data / "scores.jsonl", [{"id": sid, "score_small_no_tool": 0.1, "score_large_no_tool": 0.2,
                                         "score_large_with_tool": 0.9}])
    main(["v2cot", "partition", "--scores", str(data / "scores.jsonl")])
    assert json.loads(capsys.readouterr().out)["tool_dependent"] == [sid]
    main(["v2cot", "prompt", "--manifest", m, "--id", sid, "--mode", "with_tools", "--tools", "CANNY"])
    assert "Tool Selection Reasoning" in capsys.readouterr().out

    raw = [
        {"id": sid, "mode": "with_tools", "expected_tools": ["CANNY"],
         "text": "<think>All objects look alike at first.</think><CANNY><think>The edges reveal one odd outline.</think>"},
        {"id": sid, "mode": "reflection", "expected_verdict": "correct",
         "text": "<verify>The mask hides the only odd object. VERDICT: correct</verify>"},
        {"id": "other", "mode": "no_tools", "text": "<think>the ground truth says so</think>"},
    ]
    write_jsonl(data / "raw.jsonl", raw)
    main(["v2cot", "clean", "--input", str(data / "raw.jsonl"), "--out", str(data / "clean.jsonl"),
          "--rejected", str(data / "rej.jsonl")])
    assert len(read_jsonl(data / "clean.jsonl")) == 2
    assert read_jsonl(data / "rej.jsonl")[0]["violations"] == ["LeakageRule"]
    main(["v2cot", "assemble", "--manifest", m, "--input", str(data / "clean.jsonl"), "--out", str(data / "sft.jsonl")])
    assert read_jsonl(data / "sft.jsonl")[0]["pattern"] == "Canny"
    capsys.readouterr()
    main(["v2cot", "report", "--sft", str(data / "sft.jsonl"), "--json"])
    assert json.loads(capsys.readouterr().out)["rows"]["P3"]["Canny"] == 1
