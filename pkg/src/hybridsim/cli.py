"""Command-line client for the hybridsim service.

By default requests are served in-process; ``--server URL`` sends them to a
running instance instead (``uvicorn hybridsim.api:app``).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import yaml

from .api import default_out_dir

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAIL, details=None):
        super().__init__(message)
        self.kind, self.message, self.code, self.details = kind, message, code, details


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("UsageError", message, EXIT_USAGE)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError("UsageError", f"expected comma-separated numbers, got {text!r}", EXIT_USAGE) from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario YAML file")
    common.add_argument("--out", help="output directory (default: $HYBRIDSIM_OUT or ./out)")
    common.add_argument("--window", help="error-index window as start,end in seconds")
    common.add_argument("--threshold-a", type=float, help="gate threshold in pu")
    common.add_argument("--protocol", choices=["pos", "3seq"])
    common.add_argument("--dt", type=float, help="waveform-side time step in seconds")
    common.add_argument("--dt-macro", type=float, help="phasor-side time step in seconds")
    common.add_argument("--reference", choices=["none", "full-emt"])
    common.add_argument("--server", help="base URL of a running service")

    p = _Parser(prog="hybridsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="run one scenario")
    sa = sub.add_parser("sweep-alpha", parents=[common], help="sweep the boundary position")
    sa.add_argument("--values", help="comma-separated alpha values (default 0.1..0.9)")
    sa.add_argument("--workers", type=int, default=1)
    sf = sub.add_parser("sweep-fo", parents=[common], help="sweep forced-oscillation frequency")
    sf.add_argument("--kind", choices=["MFO", "SFO"], default="MFO")
    sf.add_argument("--freqs", help="comma-separated frequencies in Hz")
    sf.add_argument("--workers", type=int, default=1)
    sub.add_parser("compare-interfaces", parents=[common], help="positive-sequence vs three-sequence boundary")
    sub.add_parser("validate-config", parents=[common], help="check a scenario file")
    return p


def load_scenario(args) -> dict:
    path = Path(args.scenario)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise CliError("FileError", f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise CliError("ParseError", f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError("ParseError", f"{path}: expected a mapping at top level")
    if args.window:
        w = _floats(args.window)
        if len(w) != 2:
            raise CliError("UsageError", "--window needs exactly two values", EXIT_USAGE)
        data.setdefault("index", {}).update({"t_start": w[0], "t_end": w[1]})
    if args.threshold_a is not None:
        data.setdefault("index", {})["threshold_a"] = args.threshold_a
    if args.protocol:
        data.setdefault("boundary", {})["protocol"] = args.protocol
    if args.dt is not None:
        data["dt"] = args.dt
    if args.dt_macro is not None:
        data["dt_macro"] = args.dt_macro
    if args.reference:
        data["reference"] = args.reference.replace("-", "_")
    return data


class _Transport:
    def __init__(self, server: str | None):
        if server:
            import httpx

            self.client = httpx.Client(base_url=server, timeout=None)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .api import app

            self.client = TestClient(app, raise_server_exceptions=False)

    def post(self, path: str, body: dict) -> dict:
        try:
            resp = self.client.post(path, json=body)
        except Exception as exc:  # connection problems of a remote server
            raise CliError("ConnectionError", str(exc)) from exc
        try:
            payload = resp.json()
        except ValueError:
            raise CliError("ServerError", f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            err = payload.get("error", {}) if isinstance(payload, dict) else {}
            raise CliError(err.get("type", "ServerError"), err.get("message", str(payload)),
                           EXIT_FAIL, err.get("details"))
        return payload


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        scenario = load_scenario(args)
        client = _Transport(args.server)
        if args.verb == "validate-config":
            result = client.post("/v1/validate-config", {"scenario": scenario})
            _emit(result)
            return EXIT_OK if result["valid"] else EXIT_FAIL
        body = {"scenario": scenario, "out_dir": args.out or default_out_dir()}
        if args.verb == "run":
            result = client.post("/v1/run", body)
        elif args.verb == "sweep-alpha":
            if args.values:
                body["values"] = _floats(args.values)
            body["workers"] = args.workers
            result = client.post("/v1/sweep-alpha", body)
        elif args.verb == "sweep-fo":
            body["kind"] = args.kind
            if args.freqs:
                body["freqs"] = _floats(args.freqs)
            body["workers"] = args.workers
            result = client.post("/v1/sweep-fo", body)
        else:
            result = client.post("/v1/compare-interfaces", body)
        _emit(result)
        return EXIT_OK
    except CliError as exc:
        err = {"type": exc.kind, "message": exc.message}
        if exc.details is not None:
            err["details"] = exc.details
        _emit({"error": err})
        return exc.code


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
