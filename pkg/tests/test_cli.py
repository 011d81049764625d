import json
import socket
import threading
import time

import pytest
import uvicorn

from gbqknn.cli import main
from gbqknn.service.app import ModelRegistry, create_app


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def data(tmp_path, capsys):
    train, test = tmp_path / "train.csv", tmp_path / "test.csv"
    assert run(capsys, "make-blobs", "--n-per-class", "60", "--separation", "4", "--seed", "1", "--output", str(train))[0] == 0
    assert run(capsys, "make-blobs", "--n-per-class", "10", "--separation", "4", "--seed", "2", "--output", str(test))[0] == 0
    return train, test


@pytest.fixture
def model_file(tmp_path, data, capsys):
    path = tmp_path / "model.gbq"
    code, out, _ = run(capsys, "build", "--input", str(data[0]), "--index", str(path), "--purity-threshold", "0.9")
    assert code == 0
    return path


def test_make_blobs_csv(tmp_path, capsys):
    code, out, _ = run(capsys, "make-blobs", "--n-per-class", "3", "--classes", "2", "--dim", "3")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "x0,x1,x2,label" and len(lines) == 7


def test_make_blobs_jsonl(capsys):
    code, out, _ = run(capsys, "make-blobs", "--n-per-class", "2", "--format", "json")
    lines = [json.loads(x) for x in out.strip().splitlines()]
    assert lines[0]["header"]["label_column"] == "label" and len(lines) == 5


def test_gen_balls(data, capsys):
    code, out, _ = run(capsys, "gen-balls", "--input", str(data[0]), "--purity-threshold", "0.9")
    body = json.loads(out)
    assert code == 0
    assert sum(b["member_count"] for b in body["balls"]) == 120
    assert body["header"]["splits"] == len(body["balls"]) - 1


def test_gen_balls_csv(data, capsys):
    code, out, _ = run(capsys, "gen-balls", "--input", str(data[0]), "--format", "csv")
    assert code == 0 and out.startswith("center,radius,label,purity,member_count")


def test_build_search_classify(model_file, data, capsys):
    code, out, _ = run(capsys, "search", "--input", str(data[1]), "--index", str(model_file), "--k", "3")
    rows = json.loads(out)
    assert code == 0 and {r["query"] for r in rows} == set(range(20))
    code, out, _ = run(capsys, "classify", "--input", str(data[1]), "--index", str(model_file))
    body = json.loads(out)
    assert code == 0 and len(body["predictions"]) == 20 and 0.0 <= body["accuracy"] <= 1.0


def test_bench_reproducible(tmp_path, capsys):
    args = ["bench", "--sizes", "32,64", "--seeds", "0,1", "--queries", "4", "--no-wall-times"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(args + ["--output", str(a)]) == 0
    assert main(args + ["--output", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(json.loads(a.read_text())["records"]) == 4


def test_bench_csv(capsys):
    code, out, _ = run(capsys, "bench", "--sizes", "16", "--queries", "2", "--format", "csv")
    assert code == 0 and len(out.strip().splitlines()) == 2


def test_config_file_and_env_seed(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_per_class": 2, "classes": 3}))
    code, out, _ = run(capsys, "make-blobs", "--config", str(cfg))
    assert code == 0 and len(out.strip().splitlines()) == 7

    monkeypatch.setenv("GBQKNN_SEED", "5")
    _, env_out, _ = run(capsys, "make-blobs", "--n-per-class", "2")
    _, flag_out, _ = run(capsys, "make-blobs", "--n-per-class", "2", "--seed", "5")
    assert env_out == flag_out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["build", "--input", "x.csv"],
        ["make-blobs", "--backend", "quantum"],
        ["bench", "--sizes", "a,b"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == 1


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["make-blobs", "--config", str(cfg)]) == 1


def test_bad_env_seed(monkeypatch, capsys):
    monkeypatch.setenv("GBQKNN_SEED", "abc")
    assert main(["make-blobs"]) == 1


def test_data_errors(tmp_path, capsys):
    assert main(["gen-balls", "--input", str(tmp_path / "missing.csv")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("x,label\nfoo,a\n")
    code, _, err = run(capsys, "gen-balls", "--input", str(bad))
    assert code == 2 and "line 2" in err
    assert main(["classify", "--input", str(bad), "--index", str(tmp_path / "none.gbq")]) == 2


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def server():
    port = _free_port()
    config = uvicorn.Config(create_app(ModelRegistry()), host="127.0.0.1", port=port, log_level="warning")
    srv = uvicorn.Server(config)
    thread = threading.Thread(target=srv.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not srv.started and time.time() < deadline:
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    srv.should_exit = True
    thread.join(timeout=5)


def test_server_forwarding(server, model_file, data, capsys):
    local = run(capsys, "classify", "--input", str(data[1]), "--index", str(model_file))
    remote = run(capsys, "classify", "--input", str(data[1]), "--index", str(model_file), "--server", server)
    assert local[0] == remote[0] == 0
    assert json.loads(local[1]) == json.loads(remote[1])

    local = run(capsys, "search", "--input", str(data[1]), "--index", str(model_file))
    remote = run(capsys, "search", "--input", str(data[1]), "--index", str(model_file), "--server", server)
    assert json.loads(local[1]) == json.loads(remote[1])
