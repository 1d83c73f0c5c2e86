"""Command-line client for the tracking service.

Every subcommand builds a service request and sends it over HTTP.  By
default an in-process client drives the FastAPI app directly (no server
needed); pass ``--server URL`` to talk to a running ``eetrack serve``
instance instead.
"""

from __future__ import annotations

import argparse
import json
import sys


def _client(server: str | None):
    if server:
        import httpx
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service.app import app
    return TestClient(app)


def _call(args, method: str, path: str, payload: dict | None = None) -> dict:
    with _client(args.server) as client:
        response = client.request(method, path, json=payload)
    body = response.json()
    if response.status_code != 200:
        print(f"error {response.status_code}: {body.get('detail', body)}", file=sys.stderr)
        raise SystemExit(1)
    return body


def _print_result(result: dict) -> None:
    print(json.dumps(result, indent=2))


def cmd_gen_data(args) -> None:
    _print_result(_call(args, "POST", "/data/generate",
                        {"spec_path": args.spec, "out_dir": args.out}))


def cmd_train(args) -> None:
    payload = {"config_path": args.config, "data_dir": args.data,
               "out_dir": args.out, "overrides": _parse_overrides(args.set),
               "progress": args.progress}
    _print_result(_call(args, "POST", "/train", payload))


def cmd_track(args) -> None:
    payload = {"checkpoint": args.ckpt, "sequence_dir": args.seq,
               "out_file": args.out, "config_path": args.config,
               "overrides": _parse_overrides(args.set),
               "use_exit": not args.full_depth}
    _print_result(_call(args, "POST", "/track", payload))


def cmd_eval(args) -> None:
    payload = {"pred_file": args.pred, "gt_file": args.gt,
               "report_file": args.report, "plot": args.plot}
    _print_result(_call(args, "POST", "/evaluate", payload))


def cmd_bench(args) -> None:
    payload = {"checkpoint": args.ckpt, "sequence_dir": args.seq,
               "repeats": args.repeats, "out_file": args.out,
               "config_path": args.config, "overrides": _parse_overrides(args.set)}
    _print_result(_call(args, "POST", "/bench", payload))


def cmd_grid(args) -> None:
    _print_result(_call(args, "POST", "/grid",
                        {"spec_path": args.spec, "out_dir": args.out}))


def cmd_serve(args) -> None:
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=args.host, port=args.port)


def _parse_overrides(pairs: list[str] | None) -> dict[str, str]:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eetrack",
        description="train, run, and evaluate the early-exit tracker")
    parser.add_argument("--server", default=None,
                        help="URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render synthetic sequences from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a directory of sequences")
    p.add_argument("--config", default=None, help="run config file (key=value)")
    p.add_argument("--data", required=True, help="directory of sequence directories")
    p.add_argument("--out", required=True, help="output directory for checkpoint and CSV")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track one sequence with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True, help="output box file (frame,cx,cy,w,h)")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--full-depth", action="store_true", help="disable early exit")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="sequence dir or groundtruth.txt")
    p.add_argument("--report", required=True)
    p.add_argument("--plot", action="store_true", help="also write curve images")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency/FLOPs of early exit vs full depth")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default=None, help="per-frame CSV output")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grid", help="run an ablation grid from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8710)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
