"""Command-line entry point.

Exit codes: 0 success, 1 domain rejection (auth denied, broken chain, failed
case), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from .audit import compare_logs, import_log
from .canonical import decode_canonical, parse_hex
from .deploy import Deployment, build_gateway_server, build_node_server
from .device import Wallet, enrol_wallet
from .errors import BioQuorumError, ConfigError, MalformedEncoding
from .functional import INJECTIONS, format_table, run_functional
from .gateway import RevokeRequest
from .harness.config import LoadConfig, ScenarioConfig, load_config_file
from .harness.load import run_load
from .harness.report import render_report
from .harness.scenario import run_scenario
from .identity import Issuer, generate_identity
from .proof import DeviceAttestation
from .trust import import_ledger
from .wire import RemoteError, WireClient

EXIT_OK, EXIT_REJECTED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("bioquorum")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _gateway_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path} is not JSON: {exc}") from exc


def _write_private(path: str, text: str) -> None:
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_seed(path: str) -> bytes:
    doc = _read_json(path)
    try:
        return parse_hex(doc["seed"], 32)
    except (KeyError, TypeError, MalformedEncoding) as exc:
        raise ConfigError(f"{path} is not a key file") from exc


def _load_wallet(path: str) -> Wallet:
    try:
        return Wallet.from_document(_read_json(path))
    except (KeyError, TypeError, MalformedEncoding) as exc:
        raise ConfigError(f"{path} is not a wallet file") from exc


def _overrides(pairs: Sequence[str]) -> dict[str, Any]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must be key=value, got {pair!r}")
        try:
            out[key] = json.loads(value)
        except ValueError:
            out[key] = value
    return out


# -- identity and client commands -----------------------------------------------------

def cmd_keygen(args: argparse.Namespace) -> int:
    seed = parse_hex(args.seed, 32) if args.seed else os.urandom(32)
    did, keys = generate_identity(seed)
    _write_private(args.out, json.dumps({"did": str(did), "public_key": keys.public_key.hex(), "seed": seed.hex()},
                                        indent=2, sort_keys=True) + "\n")
    _out(str(did))
    return EXIT_OK


def cmd_enroll(args: argparse.Namespace) -> int:
    issuer = Issuer.from_seed(_load_seed(args.issuer_key))
    attributes = dict(a.split("=", 1) for a in args.attribute) if args.attribute else None
    wallet = enrol_wallet(issuer, _load_seed(args.subject_key), args.face_seed.encode(),
                          _now_ms(), attributes)
    client = WireClient(*args.gateway)
    resp = client.enroll(wallet.enroll_request(issuer.keys.public_key))
    _write_private(args.wallet, json.dumps(decode_canonical(wallet.to_bytes()), indent=2, sort_keys=True) + "\n")
    _out(json.dumps({"credential_id": wallet.credential.credential_id.hex(), "did": str(wallet.did),
                     "metadata_cid": resp["metadata_cid"]}, sort_keys=True))
    return EXIT_OK


def cmd_challenge(args: argparse.Namespace) -> int:
    wallet = _load_wallet(args.wallet)
    challenge, height = WireClient(*args.gateway).challenge(str(wallet.did))
    _out(json.dumps({"challenge": challenge.hex(), "ledger_height": height}, sort_keys=True))
    return EXIT_OK


def cmd_auth(args: argparse.Namespace) -> int:
    wallet = _load_wallet(args.wallet)
    client = WireClient(*args.gateway)
    challenge, height = client.challenge(str(wallet.did))
    probe = wallet.capture((args.probe_seed or os.urandom(8).hex()).encode())
    att = DeviceAttestation(rooted=args.rooted)
    req = wallet.authenticate(probe, challenge, height, att)
    decision = client.auth(req)
    outcome = decision["decision"]
    _out(json.dumps({"outcome": outcome["outcome"], "reason": outcome["reason"], "votes": outcome["votes"]},
                    sort_keys=True))
    if args.token_out and "token" in decision:
        _write_private(args.token_out, decision["token"] + "\n")
    return EXIT_OK if outcome["outcome"] == "accept" else EXIT_REJECTED


def cmd_revoke(args: argparse.Namespace) -> int:
    issuer = Issuer.from_seed(_load_seed(args.issuer_key))
    cred = _load_wallet(args.wallet).credential
    req = RevokeRequest.create(issuer, cred.credential_id, cred.metadata_cid, args.reason, _now_ms())
    resp = WireClient(*args.gateway).revoke(req)
    _out(json.dumps(resp, sort_keys=True))
    return EXIT_OK


# -- offline verification ----------------------------------------------------------------

def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def cmd_ledger_verify(args: argparse.Namespace) -> int:
    blocks, status = import_ledger(_read_bytes(args.file))
    if status.ok:
        _out(f"ok: {len(blocks)} blocks")
        return EXIT_OK
    _out(f"broken at block {status.first_bad_index}")
    return EXIT_REJECTED


def cmd_audit_verify(args: argparse.Namespace) -> int:
    entries, status = import_log(_read_bytes(args.file))
    if status.ok:
        _out(f"ok: {len(entries)} entries")
        return EXIT_OK
    _out(f"broken at seq {status.first_bad_seq}")
    return EXIT_REJECTED


def cmd_audit_compare(args: argparse.Namespace) -> int:
    logs = []
    for path in args.files:
        entries, status = import_log(_read_bytes(path))
        if not status.ok:
            _out(f"{path}: broken at seq {status.first_bad_seq}")
            return EXIT_REJECTED
        logs.append(entries)
    report = compare_logs(logs)
    _out(report.to_csv() if args.format == "csv" else report.to_json())
    return EXIT_REJECTED if report.diverged else EXIT_OK


# -- services -----------------------------------------------------------------------------

def _serve(server) -> int:
    host, port = server.address
    print(f"listening {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_gateway_run(args: argparse.Namespace) -> int:
    dep = Deployment.load(args.config)
    if args.inject == "legacy-expiry":
        dep.doc["legacy_expiry"] = True
    return _serve(build_gateway_server(dep))


def cmd_node_run(args: argparse.Namespace) -> int:
    return _serve(build_node_server(Deployment.load(args.config), args.node_id))


# -- harness --------------------------------------------------------------------------------

def _emit(report, args: argparse.Namespace) -> None:
    text = render_report(report, args.format)
    if args.out:
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot write {args.out}: {exc}") from exc
    else:
        _out(text)


def cmd_sim_run(args: argparse.Namespace) -> int:
    doc = {**load_config_file(args.config), **_overrides(args.set)}
    report = run_scenario(ScenarioConfig.from_document(doc))
    _emit(report, args)
    for name, ok in sorted(report.invariants.items()):
        if not ok:
            log.error("invariant failed: %s", name)
    return EXIT_OK if report.ok else EXIT_REJECTED


def cmd_load_run(args: argparse.Namespace) -> int:
    doc = {**load_config_file(args.config), **_overrides(args.set)}
    report = run_load(LoadConfig.from_document(doc))
    _emit(report, args)
    sys.stderr.write(f"requests={report.request_count} p50={report.p50_ms} p95={report.p95_ms} "
                     f"p99={report.p99_ms} max={report.max_ms} ms\n")
    return EXIT_OK


def cmd_functional(args: argparse.Namespace) -> int:
    results = run_functional(args.inject or ())
    _out(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_REJECTED


def _now_ms() -> int:
    return int(time.time() * 1000)


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bioquorum", description="Decentralised biometric identity: services, tools and harness.")
    p.add_argument("-v", "--verbose", action="store_true", help="log debug output to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("keygen", help="create a key file holding an Ed25519 seed and its DID")
    s.add_argument("--out", required=True, help="key file to write (mode 0600)")
    s.add_argument("--seed", help="32-byte seed as hex (default: random)")
    s.set_defaults(func=cmd_keygen)

    gw_help = "gateway address HOST:PORT"
    s = sub.add_parser("enroll", help="issue a credential, seal the template on the device, register metadata")
    s.add_argument("--issuer-key", required=True)
    s.add_argument("--subject-key", required=True)
    s.add_argument("--face-seed", required=True, help="seed of the synthetic face to enrol")
    s.add_argument("--wallet", required=True, help="wallet file to write")
    s.add_argument("--attribute", action="append", metavar="KEY=VALUE", help="credential attribute (repeatable)")
    s.add_argument("--gateway", required=True, type=_gateway_addr, help=gw_help)
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("challenge", help="request a single-use challenge")
    s.add_argument("--wallet", required=True)
    s.add_argument("--gateway", required=True, type=_gateway_addr, help=gw_help)
    s.set_defaults(func=cmd_challenge)

    s = sub.add_parser("auth", help="authenticate with a fresh capture; exit 1 when denied")
    s.add_argument("--wallet", required=True)
    s.add_argument("--gateway", required=True, type=_gateway_addr, help=gw_help)
    s.add_argument("--probe-seed", help="seed of the synthetic capture (default: random)")
    s.add_argument("--rooted", action="store_true", help="report a rooted device")
    s.add_argument("--token-out", help="write the session token here on success")
    s.set_defaults(func=cmd_auth)

    s = sub.add_parser("revoke", help="revoke a wallet's credential as its issuer")
    s.add_argument("--issuer-key", required=True)
    s.add_argument("--wallet", required=True)
    s.add_argument("--reason", default="revoked by issuer")
    s.add_argument("--gateway", required=True, type=_gateway_addr, help=gw_help)
    s.set_defaults(func=cmd_revoke)

    s = sub.add_parser("ledger", help="revocation ledger tools")
    lsub = s.add_subparsers(dest="ledger_command", required=True, parser_class=_Parser)
    v = lsub.add_parser("verify", help="verify a ledger file's hash chain")
    v.add_argument("file")
    v.set_defaults(func=cmd_ledger_verify)

    s = sub.add_parser("audit", help="audit log tools")
    asub = s.add_subparsers(dest="audit_command", required=True, parser_class=_Parser)
    v = asub.add_parser("verify", help="verify one exported audit log")
    v.add_argument("file")
    v.set_defaults(func=cmd_audit_verify)
    v = asub.add_parser("compare", help="compare exported logs from several nodes; exit 1 if they diverge")
    v.add_argument("files", nargs="+")
    v.add_argument("--format", choices=("json", "csv"), default="json")
    v.set_defaults(func=cmd_audit_compare)

    s = sub.add_parser("gateway", help="gateway service")
    gsub = s.add_subparsers(dest="gateway_command", required=True, parser_class=_Parser)
    v = gsub.add_parser("run", help="serve the gateway described by a deployment config")
    v.add_argument("--config", required=True, help="deployment config (see bioquorum.deploy for keys)")
    v.add_argument("--inject", choices=("legacy-expiry",), help="reproduce a known defect")
    v.set_defaults(func=cmd_gateway_run)

    s = sub.add_parser("node", help="verifier node service")
    nsub = s.add_subparsers(dest="node_command", required=True, parser_class=_Parser)
    v = nsub.add_parser("run", help="serve one verifier node from a deployment config")
    v.add_argument("--config", required=True)
    v.add_argument("--node-id", required=True)
    v.set_defaults(func=cmd_node_run)

    for name, func, helptext in (("sim", cmd_sim_run, "run a seeded scenario on the virtual clock"),
                                 ("load", cmd_load_run, "run a closed-loop load test (sim or real mode)")):
        s = sub.add_parser(name, help=helptext)
        hsub = s.add_subparsers(dest=f"{name}_command", required=True, parser_class=_Parser)
        v = hsub.add_parser("run", help=helptext)
        v.add_argument("--config", required=True, help="JSON config file")
        v.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a top-level config key (value parsed as JSON when possible)")
        v.add_argument("--out", help="report path (default: stdout)")
        v.add_argument("--format", choices=("json", "csv"), default="json")
        v.set_defaults(func=func)

    s = sub.add_parser("functional", help="run the 12-case functional suite")
    s.add_argument("--inject", action="append", choices=INJECTIONS, help="enable a defect (repeatable)")
    s.set_defaults(func=cmd_functional)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except RemoteError as exc:
        sys.stderr.write(f"rejected: {exc}\n")
        return EXIT_REJECTED
    except BioQuorumError as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return EXIT_REJECTED


if __name__ == "__main__":
    sys.exit(main())
