"""Command-line client for the training service.

Every subcommand talks to the HTTP API: either a remote server given via
``--server`` (or the PTCL_SERVER env var), or an in-process application
instance when no server is configured, so single-machine use needs no
daemon. ``ptcl serve`` starts the standalone server.
"""

from __future__ import annotations

import asyncio
import json
import os
import time
from typing import Optional

import click
import httpx

OUTPUT_ROOT_ENV = "PTCL_OUT_ROOT"
SERVER_ENV = "PTCL_SERVER"


class ApiClient:
    """Thin async HTTP client; in-process transport when no server is set."""

    def __init__(self, server: Optional[str]):
        self.server = server

    def _client(self) -> httpx.AsyncClient:
        if self.server:
            return httpx.AsyncClient(base_url=self.server, timeout=3600.0)
        from .service import create_app
        return httpx.AsyncClient(transport=httpx.ASGITransport(app=create_app()),
                                 base_url="http://ptcl.local", timeout=3600.0)

    async def _request(self, method: str, path: str, payload=None,
                       poll: bool = False) -> dict:
        async with self._client() as client:
            response = await client.request(method, path, json=payload)
            body = _check(response)
            if poll and "run_id" in body:
                body = await self._poll(client, body["run_id"])
            return body

    async def _poll(self, client: httpx.AsyncClient, run_id: str) -> dict:
        while True:
            response = await client.get(f"/runs/{run_id}")
            body = _check(response)
            if body["state"] in ("done", "failed"):
                return body
            await asyncio.sleep(0.2)

    def call(self, method: str, path: str, payload=None, poll: bool = False) -> dict:
        return asyncio.run(self._request(method, path, payload, poll=poll))


def _check(response: httpx.Response) -> dict:
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except Exception:  # noqa: BLE001
            detail = response.text
        raise click.ClickException(f"{response.status_code}: {detail}")
    return response.json()


def _out_path(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


@click.group()
@click.option("--server", envvar=SERVER_ENV, default=None,
              help="Base URL of a running service; default is in-process.")
@click.pass_context
def main(ctx, server):
    """Label-limited dynamic node classification toolkit."""
    ctx.obj = ApiClient(server)


@main.command()
@click.option("--synthetic", "synthetic", type=click.Choice(["drift-default"]),
              default=None, help="Generate a named synthetic dataset.")
@click.option("--synthetic-config", type=click.Path(exists=True),
              help="YAML/JSON file with drift generator settings.")
@click.option("--jodie", "jodie_path", type=click.Path(),
              help="Bipartite interaction CSV to convert.")
@click.option("--generic", "generic_path", type=click.Path(),
              help="Existing generic-format dataset directory.")
@click.option("--out", "out_dir", required=True, help="Output directory.")
@click.option("--name", default=None, help="Dataset name used in reports.")
@click.option("--split-mode", type=click.Choice(["chronological", "stratified"]),
              default="chronological")
@click.option("--split-seed", type=int, default=0)
@click.option("--no-dynamic-labels", is_flag=True,
              help="Write final labels only (disables dynamic-label methods).")
@click.pass_obj
def prepare(client: ApiClient, synthetic, synthetic_config, jodie_path,
            generic_path, out_dir, name, split_mode, split_seed,
            no_dynamic_labels):
    """Materialize a dataset plus split manifest in the generic format."""
    payload: dict = {
        "out_dir": _out_path(out_dir),
        "name": name,
        "split": {"mode": split_mode},
        "split_seed": split_seed,
        "include_dynamic": not no_dynamic_labels,
    }
    if synthetic_config:
        import yaml
        with open(synthetic_config) as fh:
            payload["synthetic"] = yaml.safe_load(fh) or {}
    elif synthetic:
        payload["synthetic"] = {}
    elif jodie_path:
        payload["jodie_path"] = jodie_path
    elif generic_path:
        payload["generic_path"] = generic_path
    else:
        raise click.UsageError(
            "one of --synthetic/--synthetic-config/--jodie/--generic is required")
    body = client.call("POST", "/datasets/prepare", payload)
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, help="Override output directory.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--method", default=None, help="Override the training method.")
@click.pass_obj
def train(client: ApiClient, config_path, out_dir, seed, method):
    """Run one training configuration end to end."""
    from .config import load_run_config

    config = load_run_config(config_path)
    if out_dir:
        config.output_dir = _out_path(out_dir)
    elif config.output_dir:
        config.output_dir = _out_path(config.output_dir)
    if seed is not None:
        config.method.seed = seed
    if method is not None:
        config.method.method = method
    body = client.call("POST", "/runs", {"config": config.model_dump()}, poll=True)
    click.echo(json.dumps(body, indent=2, sort_keys=True))
    if body["state"] != "done":
        raise click.ClickException(body.get("error") or "run failed")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", type=click.Path(), default=None,
              help="Generic dataset directory to re-score predictions against.")
@click.option("--plot", "plot_path", type=click.Path(), default=None,
              help="Write the validation convergence curve to this image path.")
@click.pass_obj
def evaluate(client: ApiClient, run_dir, dataset_path, plot_path):
    """Report test metrics for a completed run."""
    body = client.call("POST", "/evaluate",
                       {"run_dir": run_dir, "dataset_path": dataset_path,
                        "plot_path": _out_path(plot_path) if plot_path else None})
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--methods", default="ptcl,cft",
              help="Comma-separated methods to compare.")
@click.option("--seeds", default="0,1,2,3,4", help="Comma-separated seeds.")
@click.option("--naive-variant", is_flag=True,
              help="Also run the all-pseudo-label ablation.")
@click.option("--out", "out_dir", default=None)
@click.pass_obj
def compare(client: ApiClient, config_path, methods, seeds, naive_variant, out_dir):
    """Multi-seed side-by-side method comparison on one dataset."""
    from .config import load_run_config

    config = load_run_config(config_path)
    if out_dir:
        config.output_dir = _out_path(out_dir)
    payload = {
        "config": config.model_dump(),
        "methods": [m.strip() for m in methods.split(",") if m.strip()],
        "seeds": [int(s) for s in seeds.split(",") if s.strip()],
        "naive_variant": naive_variant,
    }
    body = client.call("POST", "/compare", payload, poll=True)
    if body["state"] != "done":
        raise click.ClickException(body.get("error") or "comparison failed")
    table = body["result"]
    click.echo(_format_table(table))


@main.command()
@click.option("--dump", "dump_path", type=click.Path(), default=None,
              help="Pseudo-label dump csv to analyze.")
@click.option("--dataset", "dataset_path", type=click.Path(), default=None,
              help="Generic dataset directory with dynamic labels.")
@click.option("--bins", type=int, default=10)
@click.option("--plot", "plot_path", type=click.Path(), default=None,
              help="Write a histogram image to this path.")
@click.pass_obj
def analyze(client: ApiClient, dump_path, dataset_path, bins, plot_path):
    """Label-consistency histogram over pseudo-labels or ground truth."""
    body = client.call("POST", "/analyze", {
        "dump_path": dump_path, "dataset_path": dataset_path,
        "bins": bins, "plot_path": _out_path(plot_path) if plot_path else None,
    })
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


def _format_table(table: dict) -> str:
    lines = [f"dataset: {table['dataset']}  seeds: {table['seeds']}"]
    header = f"{'method':>14s} {'metric':>7s} {'mean':>8s} {'std':>8s}  per-seed"
    lines.append(header)
    for row in table["rows"]:
        std = row.get("standard_deviation")
        std_s = f"{std:8.4f}" if std is not None else "       -"
        vals = " ".join(f"{v:.4f}" for v in row["per_seed_values"])
        mean = row.get("mean")
        mean_s = f"{mean:8.4f}" if mean is not None else "       -"
        lines.append(f"{row['method']:>14s} {row['metric_name']:>7s} {mean_s} {std_s}  {vals}")
        for failure in row.get("failures", []):
            lines.append(f"{'':>14s} seed {failure['seed']} failed: {failure['error']}")
    return "\n".join(lines)


if __name__ == "__main__":
    main()
