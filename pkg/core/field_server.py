# core/field_server.py
"""
Loopback guidance server speaking the external-field protocol on stdio (or a
local TCP port). ``--mode oracle`` answers with the annealed-attractor oracle
over a grasp file, ``--mode zero`` with zero twists.

    python -m core.field_server --grasps grasps.json --seed 7
"""
from __future__ import annotations

import argparse
import logging
import socket
import sys
from typing import BinaryIO, Callable, Optional

from core.errors import BinExhausted, PickPlaceError, ProtocolError
from core.fileio import read_grasps
from core.guidance import (
    NoiseSchedule,
    OracleField,
    check_hello,
    decode_line,
    decode_message,
    encode_message,
    hello_message,
    parse_query,
)
from core.se3 import Twist

log = logging.getLogger(__name__)


def _responder(args) -> Callable:
    if args.mode == "zero":
        return lambda query: Twist.zero()
    schedule = NoiseSchedule(args.steps, args.dt, args.sigma_angular, args.sigma_linear)
    field = OracleField(read_grasps(args.grasps), schedule, seed=args.seed)
    return field.twist


def serve(reader: BinaryIO, writer: BinaryIO, answer: Callable) -> int:
    """Handle one connection until 'bye' or EOF. Returns the number of queries served."""

    def send(msg: dict) -> None:
        writer.write((encode_message(msg) + "\n").encode("utf-8"))
        writer.flush()

    served = 0
    greeted = False
    for raw in reader:
        try:
            line = decode_line(raw).strip()
            if not line:
                continue
            msg = decode_message(line)
            kind = msg["type"]
            if kind == "hello":
                check_hello(msg)
                send(hello_message())
                greeted = True
            elif kind == "bye":
                break
            elif kind == "query":
                if not greeted:
                    raise ProtocolError("query before hello")
                qid = msg.get("id")
                try:
                    xi = answer(parse_query(msg))
                except BinExhausted as e:
                    send({"type": "error", "id": qid, "code": "bin-exhausted", "bin": e.bin_name, "message": str(e)})
                    continue
                send({"type": "twist", "id": qid, "twist": xi.vector.tolist()})
                served += 1
            else:
                raise ProtocolError(f"unknown message type {kind!r}")
        except PickPlaceError as e:
            log.warning("%s", e)
            send({"type": "error", "id": None, "message": str(e)})
            if not greeted:
                break
    return served


def main(argv: Optional[list[str]] = None) -> int:
    p = argparse.ArgumentParser(description="Loopback guidance-field server")
    p.add_argument("--mode", choices=("oracle", "zero"), default="oracle")
    p.add_argument("--grasps", help="grasp file (JSON) for oracle mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--sigma-angular", type=float, default=NoiseSchedule.sigma_angular)
    p.add_argument("--sigma-linear", type=float, default=NoiseSchedule.sigma_linear)
    p.add_argument("--port", type=int, default=None, help="serve one TCP connection on localhost instead of stdio")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    if args.mode == "oracle" and not args.grasps:
        p.error("--grasps is required in oracle mode")

    answer = _responder(args)
    if args.port is None:
        serve(sys.stdin.buffer, sys.stdout.buffer, answer)
        return 0
    with socket.create_server(("127.0.0.1", args.port)) as srv:
        conn, _ = srv.accept()
        with conn, conn.makefile("rb") as r, conn.makefile("wb") as w:
            serve(r, w, answer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
