"""Command-line client for the MedRDF service.

By default requests are served in-process; ``--server URL`` sends them to a
running ``uvicorn medrdf.service:app`` instead.  Exit codes: 0 success,
1 internal error, 2 validation/config error, 3 parse error, 4 capability error.
"""
from __future__ import annotations

import json
import sys
import warnings

import click
import httpx
import yaml

from .errors import ConfigError, MedRDFError, ParseError
from .harness.commands import COMMANDS

U64 = click.IntRange(0, (1 << 64) - 1)


def _read_config(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        offset = len(text[:mark.index].encode()) if mark is not None else None
        raise ParseError(f"malformed YAML: {getattr(exc, 'problem', exc)}", path, offset) from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return raw


def _client(server):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        # starlette nags about its httpx transport; irrelevant in-process
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app
    return TestClient(app, raise_server_exceptions=False)


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _call(server, path: str, payload: dict) -> dict:
    try:
        with _client(server) as client:
            resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        _fail(f"cannot reach {server}: {exc}", 1)
    try:
        body = resp.json()
    except ValueError:
        _fail(f"server returned HTTP {resp.status_code}", 1)
    if resp.status_code != 200:
        _fail(f"[{body.get('category', 'internal')}] {body.get('message', body)}",
              int(body.get("exit_code", 1)))
    return body


@click.group()
@click.option("--server", envvar="MEDRDF_SERVER", default=None,
              help="Base URL of a running service; omit to run in-process.")
@click.pass_context
def main(ctx, server):
    """Noise-and-denoise majority-vote defense experiments."""
    ctx.obj = {"server": server}


def _command(name: str):
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False), help="YAML experiment config.")
    @click.option("--seed", type=U64, default=None, help="Overrides the config's seed.")
    @click.option("--out", type=click.Path(file_okay=False), default=None,
                  help="Output directory; overrides the config's 'out'.")
    @click.option("--json", "as_json", is_flag=True, help="Print the full JSON response.")
    @click.pass_context
    def run(ctx, config_path, seed, out, as_json):
        try:
            raw = _read_config(config_path)
        except MedRDFError as exc:
            _fail(str(exc), exc.exit_code)
        body = _call(ctx.obj["server"], f"/{name}", {"config": raw, "seed": seed, "out": out})
        if as_json:
            click.echo(json.dumps(body, indent=2))
            return
        for text in body["reports"].values():
            click.echo(text, nl=False)
        for key, value in body["summary"].items():
            click.echo(f"{key}: {value}")
        click.echo(f"wrote {len(body['files'])} files to {body['out']}")

    run.__doc__ = f"Run the {name} stage."
    return main.command(name)(run)


for _name in COMMANDS:
    _command(_name)


if __name__ == "__main__":
    main()
