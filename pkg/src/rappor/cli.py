"""Command-line client for the aggregation service.

Every subcommand is a thin HTTP call.  By default the service app runs
in-process (no socket, no separate server), so the CLI works standalone;
point it at a deployed instance with --server or $RAPPOR_SERVER.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import httpx


def _make_client(server: str | None) -> httpx.Client:
    server = server or os.environ.get("RAPPOR_SERVER", "")
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    # No server configured: run the service app in-process over ASGI.
    from starlette.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _call(ctx: click.Context, method: str, path: str, payload: dict | None = None) -> dict:
    client: httpx.Client = ctx.obj["client"]
    response = client.request(method, path, json=payload)
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        click.echo(f"error: {detail}", err=True)
        sys.exit(1)
    return response.json() if response.content else {}


def _abs(path: str) -> str:
    return str(Path(path).resolve())


@click.group()
@click.option("--server", default=None, help="Service URL; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Privacy-preserving telemetry pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["client"] = _make_client(server)


@main.command("params")
@click.option("--f", "f_", type=float, default=0.5, show_default=True)
@click.option("--p", "p_", type=float, default=0.5, show_default=True)
@click.option("--q", "q_", type=float, default=0.75, show_default=True)
@click.option("--h", "h_", type=int, default=2, show_default=True)
@click.option("--k", "k_", type=int, default=32, show_default=True)
@click.option("--m", "m_", type=int, default=64, show_default=True)
@click.option("--target-eps", type=float, default=None, help="Search the grid for this budget instead.")
@click.option("--tolerance", type=float, default=0.1, show_default=True)
@click.option("--step", type=float, default=0.05, show_default=True, help="Grid step for the search.")
@click.option("--out", type=click.Path(), default=None, help="Write the parameter file here.")
@click.pass_context
def params_cmd(ctx, f_, p_, q_, h_, k_, m_, target_eps, tolerance, step, out):
    """Compute privacy budgets, or search parameters for a target budget."""
    if target_eps is not None:
        body = {
            "target_epsilon": target_eps,
            "h": h_,
            "f_step": step,
            "p_step": step,
            "q_step": step,
            "tolerance": tolerance,
            "limit": 10,
        }
        result = _call(ctx, "POST", "/params/search", body)
        matches = result["matches"]
        click.echo(f"{len(matches)} match(es) within {tolerance} of eps={target_eps}:")
        for match in matches:
            mp = match["params"]
            click.echo(
                f"  f={mp['f']:<6g} p={mp['p']:<6g} q={mp['q']:<6g} -> eps1={match['epsilon']:.4f}"
            )
        chosen = matches[0]["params"]
    else:
        body = {"k": k_, "h": h_, "m": m_, "f": f_, "p": p_, "q": q_}
        result = _call(ctx, "POST", "/params/profile", body)
        eps1 = result["epsilon_one"]
        eps_inf = result["epsilon_infinity"]
        click.echo(f"p* = {result['p_star']:.6f}")
        click.echo(f"q* = {result['q_star']:.6f}")
        click.echo(f"eps_1   = {'unbounded' if eps1 is None else f'{eps1:.4f}'}")
        click.echo(f"eps_inf = {'unbounded' if eps_inf is None else f'{eps_inf:.4f}'}")
        chosen = result["params"]
    if out:
        from .params import RapporParams, write_params

        write_params(
            RapporParams(
                k=chosen["k"], h=chosen["h"], m=chosen["m"],
                f=chosen["f"], p=chosen["p"], q=chosen["q"],
            ),
            out,
        )
        click.echo(f"wrote {out}")


@main.command("encode")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--mode", default="standard", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--no-audit", is_flag=True, help="Drop bloom/prr columns from reports.csv.")
@click.pass_context
def encode_cmd(ctx, dataset, params_path, mode, seed, out, no_audit):
    """Randomize a client,value dataset into reports.csv."""
    body = {
        "dataset_path": _abs(dataset),
        "params_path": _abs(params_path),
        "out_dir": _abs(out),
        "mode": mode,
        "seed": seed,
        "audit": not no_audit,
    }
    result = _call(ctx, "POST", "/jobs/encode", body)
    click.echo(f"encoded {result['reports']} reports -> {result['reports_path']}")


@main.command("aggregate")
@click.option("--reports", required=True, type=click.Path(exists=True))
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def aggregate_cmd(ctx, reports, params_path, out):
    """Fold reports.csv into a per-cohort counts matrix."""
    body = {
        "reports_path": _abs(reports),
        "params_path": _abs(params_path),
        "out_path": _abs(out),
    }
    result = _call(ctx, "POST", "/jobs/aggregate", body)
    click.echo(
        f"aggregated {result['reports']} reports over {result['cohorts']} cohorts -> {result['out_path']}"
    )


@main.command("map")
@click.option("--candidates", required=True, type=click.Path(exists=True))
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def map_cmd(ctx, candidates, params_path, out):
    """Hash a candidate list into its per-cohort bit positions."""
    body = {
        "candidates_path": _abs(candidates),
        "params_path": _abs(params_path),
        "out_path": _abs(out),
    }
    result = _call(ctx, "POST", "/jobs/map", body)
    click.echo(f"mapped {result['candidates']} candidates -> {result['out_path']}")


@main.command("decode")
@click.option("--counts", required=True, type=click.Path(exists=True))
@click.option("--map", "map_path", required=True, type=click.Path(exists=True))
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def decode_cmd(ctx, counts, map_path, params_path, alpha, out):
    """Estimate candidate frequencies from a counts matrix."""
    body = {
        "counts_path": _abs(counts),
        "map_path": _abs(map_path),
        "params_path": _abs(params_path),
        "alpha": alpha,
        "out_path": _abs(out),
    }
    result = _call(ctx, "POST", "/jobs/decode", body)
    click.echo(f"detected {result['detected']} candidates -> {result['out_path']}")


@main.command("synth")
@click.option("--candidates", type=int, default=150, show_default=True)
@click.option("--n", required=True, type=int)
@click.option("--exponent", type=float, default=1.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--uniques", type=click.Path(), default=None, help="Also write the candidate list.")
@click.pass_context
def synth_cmd(ctx, candidates, n, exponent, seed, out, uniques):
    """Generate a seeded Zipf-distributed dataset."""
    body = {
        "num_candidates": candidates,
        "n": n,
        "exponent": exponent,
        "seed": seed,
        "out_path": _abs(out),
        "uniques_path": _abs(uniques) if uniques else None,
    }
    result = _call(ctx, "POST", "/jobs/synth", body)
    click.echo(f"wrote {result['records']} records ({result['distinct']} distinct) -> {result['out_path']}")


@main.command("experiment")
@click.option("--grid-config", required=True, type=click.Path(exists=True))
@click.option("--seeds", default=None, help="Comma-separated seed list overriding the config.")
@click.option("--out", required=True, type=click.Path())
@click.option("--workers", type=int, default=None)
@click.option("--json", "as_json", is_flag=True, help="Print the summary as JSON.")
@click.pass_context
def experiment_cmd(ctx, grid_config, seeds, out, workers, as_json):
    """Run a (population x epsilon x seed) scenario grid."""
    body = {
        "config_path": _abs(grid_config),
        "out_dir": _abs(out),
        "seeds": [int(s) for s in seeds.split(",")] if seeds else None,
        "workers": workers,
    }
    result = _call(ctx, "POST", "/jobs/experiment", body)
    if as_json:
        click.echo(json.dumps(result, indent=2))
        return
    click.echo(f"{'population':>10}  {'epsilon':>8}  {'true':>5}  {'detected':>8}  {'accurate80':>10}")
    for row in result["summary"]:
        detected = row["rappor_strings"]
        accurate = row["accurate80"]
        click.echo(
            f"{row['population']:>10}  {row['epsilon']:>8g}  "
            f"{row['true_strings'] if row['true_strings'] is not None else '-':>5}  "
            f"{detected if detected is not None else '-':>8}  "
            f"{accurate if accurate is not None else '-':>10}"
        )
    for failure in result["failures"]:
        click.echo(f"FAILED {failure}", err=True)
    click.echo(f"summary: {result['summary_path']}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(host, port):
    """Run the aggregation service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
