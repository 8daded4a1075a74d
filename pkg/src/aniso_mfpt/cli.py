"""Command-line client. Sends the scenario to the service (in-process by default) and writes the returned files."""

from __future__ import annotations

import argparse
import asyncio
import base64
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import httpx

from . import __version__
from .commands import COMMANDS, EXIT_FAILURE, EXIT_INVALID

EXIT_CODES_HELP = """exit codes:
  0  all outputs written
  1  solver or runtime failure
  2  invalid scenario or unsupported command for it
  3  run refused by the event-cap guard
  4  outputs written, but some walkers hit the event cap (non-exit suspected)
"""


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(float(text)) if "e" in text.lower() else int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="aniso-mfpt",
        description="Mean first passage times of anisotropic velocity-jump processes.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"aniso-mfpt {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "analytic": "closed-form T(r) on disk or annulus",
        "solve": "finite-difference MFPT field (2-D) or radial profile",
        "simulate": "Monte Carlo exit-time moments, trajectories, survival",
        "env": "distance, direction and anisotropy fields",
        "compare": "analytic vs finite differences vs Monte Carlo",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name], epilog=EXIT_CODES_HELP,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--scenario", required=True, type=Path, help="scenario JSON file")
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--seed", type=_u64, help="override the Monte Carlo master seed")
        sp.add_argument("--baseline-isotropic", action="store_true",
                        help="also solve the isotropic problem and write the difference map")
        sp.add_argument("--raise-event-cap", type=_positive, metavar="N",
                        help="set the per-walker event cap and skip the non-exit guard")
        sp.add_argument("--workers", type=_positive, help="Monte Carlo worker threads (results do not depend on it)")
        sp.add_argument("--server", metavar="URL", help="use a running service instead of the in-process one")
    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return p


def _attachments(data: dict, base_dir: Path) -> dict[str, str]:
    kernel = data.get("kernel") if isinstance(data, dict) else None
    orient = kernel.get("orientation") if isinstance(kernel, dict) else None
    if not isinstance(orient, str) or ":" not in orient:
        return {}
    rel = orient.partition(":")[2]
    path = base_dir / rel
    if not path.is_file():
        return {}  # the service reports the missing file as a scenario violation
    return {rel: base64.b64encode(path.read_bytes()).decode()}


def _post(server: Optional[str], command: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(f"/{command}", json=payload)
    return asyncio.run(_post_in_process(command, payload))


async def _post_in_process(command: str, payload: dict) -> httpx.Response:
    from .service import app

    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url="http://in-process", timeout=None) as client:
        return await client.post(f"/{command}", json=payload)


def run(args: argparse.Namespace) -> int:
    try:
        data = json.loads(args.scenario.read_text())
    except OSError as exc:
        print(f"error: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except json.JSONDecodeError as exc:
        print(f"error: scenario is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_INVALID
    payload = {
        "scenario": data,
        "attachments": _attachments(data, args.scenario.parent),
        "seed": args.seed,
        "baseline_isotropic": args.baseline_isotropic,
        "raise_event_cap": args.raise_event_cap,
        "workers": args.workers,
    }
    try:
        resp = _post(args.server, args.command, payload)
    except httpx.HTTPError as exc:
        print(f"error: service request failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    body = resp.json()
    if resp.status_code != 200:
        detail = body.get("detail", resp.text)
        if isinstance(detail, list):  # request rejected by the service schema
            print("error: malformed request", file=sys.stderr)
            for e in detail:
                print(f"  - {'.'.join(str(p) for p in e.get('loc', []))}: {e.get('msg')}", file=sys.stderr)
        else:
            print(f"error: {detail}", file=sys.stderr)
        for v in body.get("violations", []):
            print(f"  - {v}", file=sys.stderr)
        return int(body.get("exit_code", EXIT_INVALID))

    from .service import OutputFile

    args.out.mkdir(parents=True, exist_ok=True)
    for f in body["files"]:
        (args.out / f["name"]).write_bytes(OutputFile(**f).data())
    for m in body["messages"]:
        print(m, file=sys.stderr)
    print(f"wrote {len(body['files'])} files to {args.out} (D={body['D']:g}, scenario {body['scenario_hash'][:16]})",
          file=sys.stderr)
    return int(body["exit_code"])


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("aniso_mfpt.service:app", host=args.host, port=args.port)
        return 0
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
