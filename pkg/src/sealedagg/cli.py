"""Command-line front end.

Thin client over the package APIs: every subcommand either manipulates
local artifact files (keys, identities, configs), talks to a running
service over HTTP, or hosts one of the services with uvicorn. No
protocol logic lives here.
"""

from __future__ import annotations

import secrets
import sys
from pathlib import Path

import click
import httpx
import uvicorn

from . import bench, crypto, files, taxi, wire
from .actors import RecipientActor, UserActor
from .clients import EnclaveClient, HttpTransport, MiddlewareClient
from .enclave import EnclaveCore, build_identity
from .errors import SealedAggError
from .middleware import MiddlewareCore
from .plain import PlainCore
from .service.apps import create_enclave_app, create_middleware_app, create_plain_app


def _http(url: str) -> HttpTransport:
    return HttpTransport(httpx.Client(base_url=url, timeout=30.0))


def _fail(message: str) -> "click.exceptions.Exit":
    click.echo(f"error: {message}", err=True)
    return click.exceptions.Exit(1)


@click.group()
def main() -> None:
    """Confidential multi-user aggregation tools."""


# ---------------------------------------------------------------------------
# Spec options shared by deploy-like commands
# ---------------------------------------------------------------------------


def _spec_options(fn):
    fn = click.option("--hist-min", type=float, default=0.0, show_default=True)(fn)
    fn = click.option("--hist-max", type=float, default=100.0, show_default=True)(fn)
    fn = click.option("--hist-bins", type=int, default=10, show_default=True)(fn)
    fn = click.option("--grid-side", type=int, default=1000, show_default=True)(fn)
    fn = click.option("--zone-side", type=int, default=100, show_default=True)(fn)
    fn = click.option(
        "--model",
        "model_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="SVM model file (required for --function svm).",
    )(fn)
    return fn


def _build_spec(function: str, model_path: str | None, **params):
    model_text: str | None = None
    if function == "svm":
        if model_path is None:
            model_text = bench.packaged_model_text()
        else:
            model_text = Path(model_path).read_text()
    config = {
        "function": function,
        "params": {
            "min": params["hist_min"],
            "max": params["hist_max"],
            "bins": params["hist_bins"],
            "grid_side": params["grid_side"],
            "zone_side": params["zone_side"],
        },
    }
    return files.spec_from_config(config, model_text), model_text


# ---------------------------------------------------------------------------
# recipient
# ---------------------------------------------------------------------------


@main.group()
def recipient() -> None:
    """Deploy enclaves, trigger aggregation, open sealed results."""


@recipient.command("keygen")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def recipient_keygen(out_dir: str) -> None:
    """Generate the recipient RSA key pair as PEM files."""
    pair = crypto.generate_rsa_keypair()
    priv, pub = files.save_recipient_keypair(out_dir, pair)
    click.echo(f"wrote {priv}")
    click.echo(f"wrote {pub}")


@recipient.command("deploy")
@click.option("--function", type=click.Choice(files.FUNCTION_CHOICES), required=True)
@click.option("--recipient-pub", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@_spec_options
def recipient_deploy(**kw) -> None:
    """Write the deployment config and published identity for an enclave."""
    function = kw.pop("function")
    recipient_pub = kw.pop("recipient_pub")
    out_dir = kw.pop("out_dir")
    model_path = kw.pop("model_path")
    try:
        spec, model_text = _build_spec(function, model_path, **kw)
        public_key = files.load_public_key_pem(recipient_pub)
    except SealedAggError as exc:
        raise _fail(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pem_text = Path(recipient_pub).read_text()
    files.save_deploy_config(out / "enclave_config.json", spec, pem_text, model_text)
    model_bytes = model_text.encode("utf-8") if model_text is not None else None
    identity = build_identity(spec, public_key, model_bytes)
    files.save_identity(out / "identity.json", identity)
    click.echo(f"wrote {out / 'enclave_config.json'}")
    click.echo(f"wrote {out / 'identity.json'}")


@recipient.command("collect")
@click.option("--function", type=click.Choice(files.FUNCTION_CHOICES), required=True)
@click.option("--recipient-priv", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--enclave-url", required=True)
@click.option("--identity", "identity_path", type=click.Path(exists=True), required=True)
@click.option("--trust", "trust_path", type=click.Path(exists=True), required=True)
@click.option("--no-verify", is_flag=True, help="Skip attestation before triggering.")
@_spec_options
def recipient_collect(**kw) -> None:
    """Attest, trigger, open and print the aggregate."""
    function = kw.pop("function")
    model_path = kw.pop("model_path")
    recipient_priv = kw.pop("recipient_priv")
    identity_path = kw.pop("identity_path")
    trust_path = kw.pop("trust_path")
    enclave_url = kw.pop("enclave_url")
    no_verify = kw.pop("no_verify")
    try:
        spec, _ = _build_spec(function, model_path, **kw)
        private_key = files.load_private_key_pem(recipient_priv)
        identity = files.load_identity(identity_path)
        anchor = files.load_trust_anchor(trust_path)
        pair = crypto.RsaKeyPair(private_key=private_key, public_key=private_key.public_key())
        actor = RecipientActor(pair, anchor, identity=identity)
        enclave = EnclaveClient(_http(enclave_url))
        collected = actor.collect(enclave, spec, verify=not no_verify)
    except SealedAggError as exc:
        raise _fail(str(exc))
    click.echo(f"result: {collected.result_text}")
    click.echo(
        f"records={collected.record_count} users={collected.included_user_count}"
    )


# ---------------------------------------------------------------------------
# user
# ---------------------------------------------------------------------------


@main.group()
def user() -> None:
    """Data-owner operations: keys, submission, authorization."""


@user.command("keygen")
@click.option("--user-id", required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def user_keygen(user_id: str, out_path: str) -> None:
    """Generate a fresh data key for one user."""
    try:
        crypto.validate_user_id(user_id)
    except SealedAggError as exc:
        raise _fail(str(exc))
    files.save_user_key(out_path, user_id, crypto.generate_data_key())
    click.echo(f"wrote {out_path}")


@user.command("submit")
@click.option("--key", "key_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--middleware-url", required=True)
@click.option("--payload", "payloads", multiple=True, required=True)
def user_submit(key_path: str, middleware_url: str, payloads: tuple[str, ...]) -> None:
    """Encrypt payload(s) under the user's key and deposit them."""
    try:
        user_id, key = files.load_user_key(key_path)
        middleware = MiddlewareClient(_http(middleware_url))
        for payload in payloads:
            record = crypto.encrypt_record(
                key, user_id, payload.encode("utf-8"), secrets.token_bytes(crypto.IV_BYTES)
            )
            ack = middleware.ingest(wire.record_to_msg(record))
            click.echo(f"stored; middleware now holds {ack.record_count} records")
    except SealedAggError as exc:
        raise _fail(str(exc))


@user.command("authorize")
@click.option("--key", "key_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--enclave-url", required=True)
@click.option("--identity", "identity_path", type=click.Path(exists=True), required=True)
@click.option("--trust", "trust_path", type=click.Path(exists=True), required=True)
def user_authorize(key_path: str, enclave_url: str, identity_path: str, trust_path: str) -> None:
    """Attest the enclave; release the data key only if it checks out."""
    try:
        user_id, key = files.load_user_key(key_path)
        identity = files.load_identity(identity_path)
        anchor = files.load_trust_anchor(trust_path)
        actor = UserActor(user_id, None, identity, anchor, data_key=key)
        outcome = actor.authorize(EnclaveClient(_http(enclave_url)))
    except SealedAggError as exc:
        raise _fail(str(exc))
    if outcome.authorized:
        click.echo("authorized: key released to the enclave")
    else:
        click.echo(f"refused: {outcome.reason}")
        sys.exit(2)


# ---------------------------------------------------------------------------
# services
# ---------------------------------------------------------------------------


@main.group()
def enclave() -> None:
    """Host the enclave service."""


@enclave.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8800, show_default=True)
@click.option("--trust-out", type=click.Path(dir_okay=False), default=None,
              help="Write the manufacturer trust anchor here.")
@click.option("--identity-out", type=click.Path(dir_okay=False), default=None,
              help="Write the published identity here.")
def enclave_serve(config_path: str, host: str, port: int,
                  trust_out: str | None, identity_out: str | None) -> None:
    """Provision an enclave from a deploy config and serve it."""
    try:
        spec, public_key, model_bytes = files.load_deploy_config(config_path)
    except SealedAggError as exc:
        raise _fail(str(exc))
    manufacturer = crypto.generate_signing_keypair()
    core = EnclaveCore(spec, public_key, manufacturer, model_bytes)
    if trust_out:
        files.save_trust_anchor(trust_out, manufacturer.public_key)
        click.echo(f"wrote {trust_out}")
    if identity_out:
        files.save_identity(identity_out, core.identity)
        click.echo(f"wrote {identity_out}")
    click.echo(f"enclave measurement: {core.measurement.digest.hex()}")
    uvicorn.run(create_enclave_app(core), host=host, port=port, log_level="warning")


@main.group()
def middleware() -> None:
    """Host or operate the ciphertext middleware."""


@middleware.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8801, show_default=True)
@click.option("--enclave-url", default=None, help="Forwarding target.")
@click.option("--store", "store_path", type=click.Path(dir_okay=False), default=None,
              help="Restore from and persist to this file.")
def middleware_serve(host: str, port: int, enclave_url: str | None,
                     store_path: str | None) -> None:
    """Serve the middleware; restores/persists the store when --store is given."""
    core = MiddlewareCore()
    if store_path and Path(store_path).exists():
        count = core.restore(store_path)
        click.echo(f"restored {count} records from {store_path}")
    enclave_client = EnclaveClient(_http(enclave_url)) if enclave_url else None
    app = create_middleware_app(core, enclave_client)

    if store_path:
        app.router.on_shutdown.append(lambda: core.persist(store_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")


@middleware.command("forward")
@click.option("--middleware-url", required=True)
def middleware_forward(middleware_url: str) -> None:
    """Ask the middleware to push its store to the enclave."""
    try:
        ack = MiddlewareClient(_http(middleware_url)).forward()
    except SealedAggError as exc:
        raise _fail(str(exc))
    click.echo(
        f"forwarded: accepted={ack.accepted} "
        f"skipped_no_key={ack.skipped_no_key} failed_decrypt={ack.failed_decrypt}"
    )


@middleware.command("stats")
@click.option("--middleware-url", required=True)
def middleware_stats(middleware_url: str) -> None:
    try:
        stats = MiddlewareClient(_http(middleware_url)).stats()
    except SealedAggError as exc:
        raise _fail(str(exc))
    click.echo(
        f"records={stats.record_count} users={stats.user_count} "
        f"ciphertext_bytes={stats.ciphertext_bytes}"
    )


@main.group()
def plain() -> None:
    """Host the no-crypto baseline service."""


@plain.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8802, show_default=True)
def plain_serve(config_path: str, host: str, port: int) -> None:
    """Serve the plaintext twin for the function in a deploy config."""
    try:
        spec, _, _ = files.load_deploy_config(config_path)
    except SealedAggError as exc:
        raise _fail(str(exc))
    uvicorn.run(create_plain_app(PlainCore(spec)), host=host, port=port, log_level="warning")


# ---------------------------------------------------------------------------
# bench / taxi
# ---------------------------------------------------------------------------


@main.group(name="bench")
def bench_group() -> None:
    """Benchmark the enclave pipeline against the plaintext twin."""


@bench_group.command("run")
@click.option("--users", type=int, default=5000, show_default=True)
@click.option("--iterations", type=int, default=100, show_default=True)
@click.option("--functions", default="sum,svm,histogram,lsf", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-prefix", default=None,
              help="Write <prefix>.txt and <prefix>.csv next to printing.")
def bench_run(users: int, iterations: int, functions: str, seed: int,
              out_prefix: str | None) -> None:
    """Run the benchmark and print the timing report."""
    try:
        config = bench.BenchConfig(
            n_users=users,
            iterations=iterations,
            functions=tuple(f.strip() for f in functions.split(",") if f.strip()),
            seed=seed,
        )
        report = bench.run_benchmark(config)
    except SealedAggError as exc:
        raise _fail(str(exc))
    click.echo(report.render_text(), nl=False)
    if out_prefix:
        Path(out_prefix + ".txt").write_text(report.render_text())
        Path(out_prefix + ".csv").write_text(report.render_csv())
        click.echo(f"wrote {out_prefix}.txt and {out_prefix}.csv")


@main.group(name="taxi")
def taxi_group() -> None:
    """City-scale zone-count use case."""


@taxi_group.command("run")
@click.option("--taxis", type=int, default=1000, show_default=True)
@click.option("--companies", type=int, default=5, show_default=True)
@click.option("--zone-side", type=int, default=100, show_default=True)
@click.option("--rounds", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--debug-global", is_flag=True,
              help="Also write the privacy-defeating global position view.")
def taxi_run(taxis: int, companies: int, zone_side: int, rounds: int, seed: int,
             out_dir: str, debug_global: bool) -> None:
    """Simulate rounds of the confidential taxi pipeline and render views."""
    try:
        config = taxi.CityConfig(
            n_taxis=taxis, n_companies=companies, zone_side=zone_side, seed=seed
        )
        harness = taxi.TaxiProtocolHarness(config)
        outcome = None
        for round_no in range(1, rounds + 1):
            outcome = harness.run_round()
            click.echo(
                f"round {round_no}: {outcome.record_count} records, "
                f"upload {outcome.upload_seconds:.3f}s, "
                f"compute {outcome.compute_seconds:.3f}s"
            )
    except SealedAggError as exc:
        raise _fail(str(exc))
    paths = taxi.render_public_view(outcome.distribution, out_dir)
    paths += taxi.render_company_views(harness.sim.positions(), out_dir)
    if debug_global:
        paths.append(taxi.render_global_view(harness.sim.positions(), out_dir))
    for path in paths:
        click.echo(f"wrote {path}")


@taxi_group.command("scale")
@click.option("--sizes", default="100,500,1000", show_default=True)
@click.option("--iterations", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def taxi_scale(sizes: str, iterations: int, seed: int, out_path: str | None) -> None:
    """Measure upload/compute times across fleet sizes."""
    try:
        size_list = tuple(int(s.strip()) for s in sizes.split(",") if s.strip())
        config = taxi.CityConfig(seed=seed)
        rows = taxi.run_scaling(config, size_list, iterations)
        trend = taxi.trend_from_rows(rows)
    except (SealedAggError, ValueError) as exc:
        raise _fail(str(exc))
    csv_text = taxi.render_scaling_csv(rows)
    click.echo(csv_text, nl=False)
    click.echo(
        f"upload R^2 = {trend.upload_r2:.4f}, "
        f"compute max/min = {trend.compute_max_min_ratio:.3f}"
    )
    if out_path:
        Path(out_path).write_text(csv_text)
        click.echo(f"wrote {out_path}")


if __name__ == "__main__":  # pragma: no cover
    main()
