"""Command-line flows, file formats, and one fully networked run."""

from __future__ import annotations

import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from sealedagg import aggregation, cli, files


@pytest.fixture()
def runner():
    return CliRunner()


def test_recipient_keygen_writes_loadable_pems(runner, tmp_path):
    result = runner.invoke(cli.main, ["recipient", "keygen", "--out-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    priv = files.load_private_key_pem(tmp_path / "recipient_private.pem")
    pub = files.load_public_key_pem(tmp_path / "recipient_public.pem")
    assert priv.public_key().public_numbers() == pub.public_numbers()


def test_recipient_deploy_writes_config_and_identity(runner, tmp_path):
    runner.invoke(cli.main, ["recipient", "keygen", "--out-dir", str(tmp_path)])
    result = runner.invoke(
        cli.main,
        [
            "recipient", "deploy",
            "--function", "histogram",
            "--hist-min", "0", "--hist-max", "50", "--hist-bins", "5",
            "--recipient-pub", str(tmp_path / "recipient_public.pem"),
            "--out-dir", str(tmp_path / "deploy"),
        ],
    )
    assert result.exit_code == 0, result.output
    spec, _, model_bytes = files.load_deploy_config(tmp_path / "deploy" / "enclave_config.json")
    assert spec == aggregation.Histogram(0.0, 50.0, 5)
    assert model_bytes is None
    identity = files.load_identity(tmp_path / "deploy" / "identity.json")
    assert identity.aggregation_spec_digest == aggregation.spec_digest(spec)


def test_deploy_svm_uses_packaged_model_by_default(runner, tmp_path):
    runner.invoke(cli.main, ["recipient", "keygen", "--out-dir", str(tmp_path)])
    result = runner.invoke(
        cli.main,
        [
            "recipient", "deploy", "--function", "svm",
            "--recipient-pub", str(tmp_path / "recipient_public.pem"),
            "--out-dir", str(tmp_path / "deploy"),
        ],
    )
    assert result.exit_code == 0, result.output
    spec, _, model_bytes = files.load_deploy_config(tmp_path / "deploy" / "enclave_config.json")
    assert isinstance(spec, aggregation.SvmClassify)
    assert model_bytes is not None


def test_user_keygen_round_trips(runner, tmp_path):
    out = tmp_path / "alice.json"
    result = runner.invoke(cli.main, ["user", "keygen", "--user-id", "alice", "--out", str(out)])
    assert result.exit_code == 0
    user_id, key = files.load_user_key(out)
    assert user_id == "alice"
    assert len(key.key_bytes) == 32


def test_user_keygen_rejects_bad_id(runner, tmp_path):
    result = runner.invoke(
        cli.main, ["user", "keygen", "--user-id", "", "--out", str(tmp_path / "k.json")]
    )
    assert result.exit_code != 0


def test_bench_run_tiny(runner, tmp_path):
    prefix = str(tmp_path / "report")
    result = runner.invoke(
        cli.main,
        [
            "bench", "run", "--users", "3", "--iterations", "2",
            "--functions", "sum,histogram", "--out-prefix", prefix,
        ],
    )
    assert result.exit_code == 0, result.output
    assert "overhead (enclave/plain):" in result.output
    assert Path(prefix + ".txt").read_text().startswith("function")
    assert Path(prefix + ".csv").read_text().splitlines()[0].startswith("function,")


def test_bench_run_rejects_unknown_function(runner):
    result = runner.invoke(cli.main, ["bench", "run", "--functions", "median"])
    assert result.exit_code == 1
    assert "unknown benchmark functions" in result.output


def test_taxi_run_writes_views(runner, tmp_path):
    out_dir = tmp_path / "views"
    result = runner.invoke(
        cli.main,
        [
            "taxi", "run", "--taxis", "8", "--companies", "2",
            "--zone-side", "500", "--rounds", "2", "--out-dir", str(out_dir),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "round 2: 8 records" in result.output
    assert (out_dir / "public_distribution.csv").exists()
    assert (out_dir / "public_distribution.pgm").read_text().startswith("P2\n2 2\n")
    assert (out_dir / "company-0_positions.csv").exists()
    assert (out_dir / "company-1_positions.csv").exists()
    assert not (out_dir / "global_positions.csv").exists()  # debug-only view


def test_taxi_scale_tiny(runner, tmp_path):
    out = tmp_path / "scaling.csv"
    result = runner.invoke(
        cli.main,
        ["taxi", "scale", "--sizes", "3,5,7", "--iterations", "1", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert "upload R^2 =" in result.output
    assert out.read_text().startswith("taxis,")


# ---------------------------------------------------------------------------
# networked flow: real servers, real HTTP, the CLI as the only client
# ---------------------------------------------------------------------------


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for_port(port: int, process: subprocess.Popen, timeout: float = 30.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if process.poll() is not None:
            out = process.stdout.read().decode() if process.stdout else ""
            raise RuntimeError(f"server exited early ({process.returncode}): {out}")
        try:
            with socket.create_connection(("127.0.0.1", port), timeout=0.2):
                return
        except OSError:
            time.sleep(0.05)
    raise RuntimeError(f"port {port} never came up")


def spawn(args: list[str]) -> subprocess.Popen:
    return subprocess.Popen(
        [sys.executable, "-m", "sealedagg.cli", *args],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
    )


@pytest.mark.slow
def test_networked_protocol_flow(runner, tmp_path):
    keys = tmp_path / "keys"
    deploy = tmp_path / "deploy"
    served = tmp_path / "served"
    served.mkdir()
    assert runner.invoke(cli.main, ["recipient", "keygen", "--out-dir", str(keys)]).exit_code == 0
    assert runner.invoke(
        cli.main,
        [
            "recipient", "deploy", "--function", "sum",
            "--recipient-pub", str(keys / "recipient_public.pem"),
            "--out-dir", str(deploy),
        ],
    ).exit_code == 0

    enclave_port, middleware_port = free_port(), free_port()
    enclave_url = f"http://127.0.0.1:{enclave_port}"
    middleware_url = f"http://127.0.0.1:{middleware_port}"
    store = served / "store.ndjson"
    trust = served / "trust.json"
    identity = served / "identity.json"

    enclave_proc = spawn(
        [
            "enclave", "serve", "--config", str(deploy / "enclave_config.json"),
            "--port", str(enclave_port),
            "--trust-out", str(trust), "--identity-out", str(identity),
        ]
    )
    middleware_proc = spawn(
        [
            "middleware", "serve", "--port", str(middleware_port),
            "--enclave-url", enclave_url, "--store", str(store),
        ]
    )
    try:
        wait_for_port(enclave_port, enclave_proc)
        wait_for_port(middleware_port, middleware_proc)

        alice = keys / "alice.json"
        assert runner.invoke(
            cli.main, ["user", "keygen", "--user-id", "alice", "--out", str(alice)]
        ).exit_code == 0

        auth = runner.invoke(
            cli.main,
            [
                "user", "authorize", "--key", str(alice),
                "--enclave-url", enclave_url,
                "--identity", str(identity), "--trust", str(trust),
            ],
        )
        assert auth.exit_code == 0, auth.output
        assert "authorized" in auth.output

        submit = runner.invoke(
            cli.main,
            [
                "user", "submit", "--key", str(alice),
                "--middleware-url", middleware_url,
                "--payload", "19", "--payload", "23",
            ],
        )
        assert submit.exit_code == 0, submit.output

        stats = runner.invoke(
            cli.main, ["middleware", "stats", "--middleware-url", middleware_url]
        )
        assert "records=2" in stats.output

        forward = runner.invoke(
            cli.main, ["middleware", "forward", "--middleware-url", middleware_url]
        )
        assert forward.exit_code == 0, forward.output
        assert "accepted=2" in forward.output

        collect = runner.invoke(
            cli.main,
            [
                "recipient", "collect", "--function", "sum",
                "--recipient-priv", str(keys / "recipient_private.pem"),
                "--enclave-url", enclave_url,
                "--identity", str(identity), "--trust", str(trust),
            ],
        )
        assert collect.exit_code == 0, collect.output
        assert "result: 42" in collect.output
        assert "records=2 users=1" in collect.output

        # a user whose published identity disagrees with the running
        # enclave must be refused and exit 2
        assert runner.invoke(
            cli.main,
            [
                "recipient", "deploy", "--function", "lsf",
                "--recipient-pub", str(keys / "recipient_public.pem"),
                "--out-dir", str(tmp_path / "other"),
            ],
        ).exit_code == 0
        bob = keys / "bob.json"
        runner.invoke(cli.main, ["user", "keygen", "--user-id", "bob", "--out", str(bob)])
        refused = runner.invoke(
            cli.main,
            [
                "user", "authorize", "--key", str(bob),
                "--enclave-url", enclave_url,
                "--identity", str(tmp_path / "other" / "identity.json"),
                "--trust", str(trust),
            ],
        )
        assert refused.exit_code == 2
        assert "refused: measurement-mismatch" in refused.output

        # graceful shutdown persists the store...
        middleware_proc.send_signal(signal.SIGTERM)
        middleware_proc.wait(timeout=15)
        assert len(store.read_text().splitlines()) == 2

        # ...and a restarted middleware picks it straight back up
        middleware_proc = spawn(
            ["middleware", "serve", "--port", str(middleware_port), "--store", str(store)]
        )
        wait_for_port(middleware_port, middleware_proc)
        stats = runner.invoke(
            cli.main, ["middleware", "stats", "--middleware-url", middleware_url]
        )
        assert "records=2" in stats.output
    finally:
        for proc in (enclave_proc, middleware_proc):
            if proc.poll() is None:
                proc.terminate()
                try:
                    proc.wait(timeout=10)
                except subprocess.TimeoutExpired:  # pragma: no cover
                    proc.kill()
