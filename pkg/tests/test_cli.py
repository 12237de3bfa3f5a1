import json

import pytest
import yaml
from click.testing import CliRunner

from medrdf.cli import main

from conftest import SMALL_CONFIG


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(SMALL_CONFIG))
    return path


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def test_every_subcommand_takes_the_common_options():
    for name in ("train", "attack", "defend", "sweep-sigma", "sweep-n", "rm-report"):
        result = run(name, "--help")
        assert result.exit_code == 0
        for opt in ("--config", "--seed", "--out"):
            assert opt in result.output


def test_train_and_defend(config_file, tmp_path):
    out = tmp_path / "out"
    result = run("train", "--config", config_file, "--seed", 0, "--out", out)
    assert result.exit_code == 0, result.output
    assert (out / "model.ckpt").exists()
    assert "test_accuracy" in result.output
    result = run("defend", "--config", config_file, "--seed", 0, "--out", out, "--json")
    assert result.exit_code == 0
    body = json.loads(result.output)
    assert body["reports"]["defense"] == (out / "defense.csv").read_text()


def test_seed_range_is_u64(config_file, tmp_path):
    assert run("train", "--config", config_file, "--seed", -1, "--out", tmp_path).exit_code == 2
    assert run("train", "--config", config_file, "--seed", 2 ** 64, "--out", tmp_path).exit_code == 2


def test_error_exit_codes(tmp_path):
    bad_value = tmp_path / "v.yaml"
    bad_value.write_text("medrdf: [{n: 0}]\n")
    result = run("defend", "--config", bad_value, "--out", tmp_path)
    assert result.exit_code == 2 and "config" in result.output

    bad_yaml = tmp_path / "y.yaml"
    bad_yaml.write_text("seed: [1,\n")
    result = run("defend", "--config", bad_yaml, "--out", tmp_path)
    assert result.exit_code == 3 and "byte offset" in result.output

    missing_data = tmp_path / "d.yaml"
    missing_data.write_text(yaml.safe_dump({"dataset": {"source": "csv", "path": str(tmp_path / "none.csv")},
                                            "model": {"checkpoint": str(tmp_path / "none.ckpt")}}))
    assert run("defend", "--config", missing_data, "--out", tmp_path).exit_code == 2

    not_a_map = tmp_path / "l.yaml"
    not_a_map.write_text("- 1\n- 2\n")
    assert run("defend", "--config", not_a_map, "--out", tmp_path).exit_code == 2


def test_unreachable_server(config_file, tmp_path):
    result = run("--server", "http://127.0.0.1:9", "defend", "--config", config_file,
                 "--out", tmp_path)
    assert result.exit_code == 1 and "cannot reach" in result.output


def test_remote_server_round_trip(config_file, tmp_path):
    import socket
    import threading
    import time

    import uvicorn

    from medrdf.service import app

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        for _ in range(100):
            if server.started:
                break
            time.sleep(0.05)
        result = run("--server", f"http://127.0.0.1:{port}", "rm-report", "--config", config_file,
                     "--out", tmp_path)
        assert result.exit_code == 0, result.output
        assert (tmp_path / "rm_breakdown.csv").exists()
    finally:
        server.should_exit = True
        thread.join(timeout=10)
