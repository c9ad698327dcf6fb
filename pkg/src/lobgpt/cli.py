"""Command-line entry point: ``lobgpt <subcommand> ...``.

Settings are layered: built-in defaults, then a JSON config file
(``--config``; keys either flat or under the subcommand name), then
``LOBGPT_<KEY>`` environment variables, then command-line flags.
``--print-config`` shows the resolved settings and exits.

Exit codes: 0 success, 1 user error (bad input, path or configuration),
2 internal error. Errors are reported as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

log = logging.getLogger("lobgpt")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


# ---- settings ------------------------------------------------------------

DEFAULTS: dict[str, dict] = {
    "synth": {"n": 100_000, "seed": 0, "output": "feed.bin", "symbol": "SYNTH", "start_price": 17000,
              "round_lot_mass": 0.3},
    "parse": {"input": None, "session_filter": False, "output": None},
    "preprocess": {"input": None, "output": "pre.bin", "session_filter": True},
    "tokenize": {"input": None, "output": "tokens.bin", "n_tickers": None},
    "train": {"corpus": None, "output": "run", "toy": False, "d_model": 64, "n_layers": 2, "n_heads": 4,
              "context": 1536, "steps": 200, "micro_batch": 2, "accum": 1, "lr": 3e-3, "warmup": 20,
              "seq_tokens": None, "seed": 0, "checkpoint_every": 0, "resume": False},
    "simulate": {"checkpoint": None, "history": None, "output": "sim", "trials": 1, "seed": 0,
                 "budget_messages": 1000, "start_time": "10:00:00", "context_messages": None,
                 "temperature": 1.02, "top_p": 0.98, "no_sink": False, "max_discards": 100,
                 "wall_clock": None, "workers": None, "n_tickers": None, "resume": False},
    "evaluate": {"traces": [], "empirical": None, "output": "report", "delta": 1.0, "max_lag": 100,
                 "horizon": 500, "samples": 1000, "seed": 0, "bins": 500, "no_common_length": False},
}

TOY = {"d_model": 64, "n_layers": 2, "n_heads": 4}


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UserError(f"cannot read {raw!r} as a boolean")
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_settings(cmd: str, args: argparse.Namespace, environ=os.environ) -> dict:
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UserError(f"config file not found: {path}", str(path))
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UserError(f"config file {path} is not valid JSON: {exc}", str(path)) from exc
        layer = doc.get(cmd, doc) if isinstance(doc, dict) else None
        if not isinstance(layer, dict):
            raise UserError(f"config file {path} must hold an object", str(path))
        for k, v in layer.items():
            if k in cfg:
                cfg[k] = v
            elif k not in DEFAULTS:
                raise UserError(f"unknown setting {k!r} in {path}", str(path))
    for k in cfg:
        env = environ.get(f"LOBGPT_{k.upper()}")
        if env is not None:
            cfg[k] = _coerce(env, DEFAULTS[cmd][k])
    for k, v in vars(args).items():
        if k in cfg and v is not None:
            cfg[k] = v
    return cfg


# ---- helpers -------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read(path) -> bytes:
    p = Path(path) if path is not None else None
    if p is None:
        raise UserError("missing input path")
    if not p.is_file():
        raise UserError(f"input file not found: {p}", str(p))
    return p.read_bytes()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, cmd: str, cfg: dict, config_file, inputs, outputs, artifacts=None,
                   started: str | None = None) -> None:
    """Record this run in ``out_dir/manifest.json`` (one entry per subcommand)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {"runs": {}}
    doc["runs"][cmd] = {
        "subcommand": cmd,
        "version": __version__,
        "config_file": None if config_file is None else str(config_file),
        "config": cfg,
        "seed": cfg.get("seed"),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(Path(p).name): _sha256(Path(p)) for p in outputs if Path(p).is_file()},
        "artifacts": artifacts or {},
        "started_utc": started,
        "finished_utc": _now(),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _parse_time(v) -> int | None:
    """``HH:MM[:SS]`` (time of day), an integer of nanoseconds, or ``none``."""
    from .feed import NS_PER_SECOND

    if v is None or (isinstance(v, str) and v.lower() == "none"):
        return None
    if isinstance(v, int):
        return v
    s = str(v)
    if ":" in s:
        parts = [int(p) for p in s.split(":")]
        if len(parts) == 2:
            parts.append(0)
        if len(parts) != 3:
            raise UserError(f"bad time of day {s!r}")
        h, m, sec = parts
        return ((h * 60 + m) * 60 + sec) * NS_PER_SECOND
    try:
        return int(s)
    except ValueError as exc:
        raise UserError(f"bad time {s!r}") from exc


# ---- subcommands ---------------------------------------------------------


def cmd_synth(cfg: dict, args) -> dict:
    from .feed import FeedConfig, write_feed
    from .synth import synth_feed

    m = cfg["round_lot_mass"]
    rest = 1.0 - m
    fc = FeedConfig(seed=cfg["seed"], start_price=cfg["start_price"], size_weights=(m, rest * 0.45 / 0.7, rest * 0.25 / 0.7))
    msgs = synth_feed(fc, cfg["n"])
    out = Path(cfg["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(write_feed(msgs, {fc.symbol_id: cfg["symbol"]}))
    return {"messages": len(msgs), "output": str(out), "_outputs": [out], "_inputs": []}


def cmd_parse(cfg: dict, args) -> dict:
    from .feed import decode_feed, filter_session, write_feed

    data = _read(cfg["input"])
    feed = decode_feed(data)
    msgs = filter_session(feed.messages) if cfg["session_filter"] else feed.messages
    counts: dict[str, int] = {}
    for msg in msgs:
        counts[msg.msg_type.name] = counts.get(msg.msg_type.name, 0) + 1
    res = {"messages": len(msgs), "by_type": dict(sorted(counts.items())), "symbols": feed.symbols,
           "skipped": dict(sorted(feed.skipped.items())), "unresolved": feed.unresolved,
           "_inputs": [cfg["input"]], "_outputs": []}
    if cfg["output"]:
        out = Path(cfg["output"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(write_feed(msgs, feed.symbols or None))
        res["_outputs"] = [out]
    return res


def cmd_preprocess(cfg: dict, args) -> dict:
    from .feed import filter_session, parse_feed
    from .preprocess import Stationarizer, premessages_to_bytes, premessages_to_csv

    msgs = parse_feed(_read(cfg["input"]))
    if cfg["session_filter"]:
        msgs = filter_session(msgs)
    st = Stationarizer()
    pres = [st.push(m) for m in msgs]
    out = Path(cfg["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".csv":
        out.write_text(premessages_to_csv(pres))
    else:
        out.write_bytes(premessages_to_bytes(pres))
    return {"messages": len(pres), "clamped": st.clamped, "_inputs": [cfg["input"]], "_outputs": [out]}


def cmd_tokenize(cfg: dict, args) -> dict:
    from .preprocess import premessages_from_bytes, premessages_from_csv
    from .vocab import Vocabulary, encode_many, write_tokens

    path = Path(cfg["input"]) if cfg["input"] else None
    data = _read(path)
    pres = premessages_from_csv(data.decode()) if path.suffix == ".csv" else premessages_from_bytes(data)
    n_tickers = cfg["n_tickers"] or (1 + max((p.symbol_id for p in pres), default=0))
    v = Vocabulary(int(n_tickers))
    toks = encode_many(pres, v)
    out = Path(cfg["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(write_tokens(toks, v))
    return {"messages": len(pres), "tokens": int(toks.size), "vocab_size": v.size, "vocab_digest": v.digest,
            "_inputs": [path], "_outputs": [out], "_artifacts": {"vocab": v.digest}}


def cmd_train(cfg: dict, args) -> dict:
    from .model import ModelConfig, TrainConfig, train, write_loss_csv
    from .vocab import read_tokens

    if cfg["toy"]:
        cfg.update(TOY)
    corpus_path = cfg["corpus"]
    # configuration errors surface before any data is read or computed
    mc_kwargs = dict(d_model=cfg["d_model"], n_layers=cfg["n_layers"], n_heads=cfg["n_heads"],
                     max_context_tokens=cfg["context"])
    ModelConfig(**mc_kwargs)
    tokens, v = read_tokens(_read(corpus_path))
    mc = ModelConfig(vocab_size=v.size, **mc_kwargs)
    tc = TrainConfig(steps=cfg["steps"], micro_batch=cfg["micro_batch"], accum=cfg["accum"], lr=cfg["lr"],
                     warmup=cfg["warmup"], seq_tokens=cfg["seq_tokens"], seed=cfg["seed"],
                     checkpoint_every=cfg["checkpoint_every"])
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    ck = out / "checkpoint.lobc"
    resume = ck if cfg["resume"] and ck.exists() else None
    if cfg["resume"] and resume is None:
        raise UserError(f"nothing to resume: {ck} does not exist", str(ck))
    res = train(tokens, mc, tc, resume=resume, checkpoint_path=ck, vocab_digest=v.digest,
                on_step=lambda s, l: log.info("step %d loss %.4f", s + 1, l))
    write_loss_csv(out / "loss.csv", res.losses)
    return {"steps": res.step, "final_loss": res.losses[-1] if res.losses else None, "checkpoint": str(ck),
            "_inputs": [corpus_path], "_outputs": [ck, out / "loss.csv"],
            "_artifacts": {"vocab": v.digest, "model_config": mc.digest(), "checkpoint": _sha256(ck)}}


def _run_trial(job: dict) -> dict:
    """Worker body for one simulation trial (runs in its own process)."""
    import torch

    from .feed import parse_feed
    from .model import load_checkpoint
    from .sim import LivelockError, SimConfig, init_sim, run

    torch.set_num_threads(1)
    model = load_checkpoint(job["checkpoint"])["model"]
    history = parse_feed(Path(job["history"]).read_bytes())
    sc = SimConfig(**job["sim"])
    out = Path(job["dir"])
    out.mkdir(parents=True, exist_ok=True)
    state = init_sim(history, model, sc)
    try:
        trace = run(state, trace_path=out / "trace.jsonl", resume=job["resume"])
    except LivelockError as exc:
        return {"trial_id": sc.trial_id, "status": "livelock", "error": str(exc),
                **json.loads((out / "summary.json").read_text())}
    return trace.summary()


def cmd_simulate(cfg: dict, args) -> dict:
    from .model import read_checkpoint_header
    from .sim import SimConfig
    from .vocab import BASE_VOCAB_SIZE, Vocabulary

    ck = Path(cfg["checkpoint"] or "")
    hist = Path(cfg["history"] or "")
    for p in (ck, hist):
        if not p.is_file():
            raise UserError(f"input file not found: {p}", str(p))
    try:
        header = read_checkpoint_header(ck)
    except ValueError as exc:
        raise UserError(str(exc), str(ck)) from exc
    n_model = header["config"]["vocab_size"] - BASE_VOCAB_SIZE
    n_tickers = cfg["n_tickers"] or n_model
    tokenizer = Vocabulary(int(n_tickers))
    if header.get("vocab_digest") != tokenizer.digest or tokenizer.size != header["config"]["vocab_size"]:
        raise UserError(
            f"vocabulary mismatch: checkpoint {header.get('vocab_digest')} vs tokenizer {tokenizer.digest}", str(ck)
        )
    if cfg["trials"] < 1:
        raise UserError("trials must be >= 1")
    base = dict(context_messages=cfg["context_messages"], max_messages=cfg["budget_messages"],
                wall_clock_s=cfg["wall_clock"], start_time_ns=_parse_time(cfg["start_time"]),
                temperature=cfg["temperature"], top_p=cfg["top_p"], seed=cfg["seed"],
                pin_sink=not cfg["no_sink"], max_consecutive_discards=cfg["max_discards"])
    SimConfig(**base)  # validate before spawning workers
    out = Path(cfg["output"])
    jobs = [{"checkpoint": str(ck), "history": str(hist), "sim": {**base, "trial_id": k},
             "dir": str(out / f"trial_{k:03d}"), "resume": bool(cfg["resume"])} for k in range(cfg["trials"])]
    workers = cfg["workers"] or min(len(jobs), os.cpu_count() or 1)
    if workers == 1:
        summaries = [_run_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            summaries = list(ex.map(_run_trial, jobs))
    out.mkdir(parents=True, exist_ok=True)
    (out / "summaries.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    for j in jobs:
        write_manifest(Path(j["dir"]), "simulate", {**cfg, "trial_id": j["sim"]["trial_id"]}, args.config,
                       [ck, hist], [Path(j["dir"]) / "trace.jsonl", Path(j["dir"]) / "summary.json"],
                       {"vocab": tokenizer.digest, "checkpoint": _sha256(ck)})
    return {"trials": summaries, "_inputs": [ck, hist], "_outputs": [out / "summaries.json"],
            "_artifacts": {"vocab": tokenizer.digest, "checkpoint": _sha256(ck)}}


def _trace_path(p: str) -> Path:
    path = Path(p)
    if path.is_dir():
        path = path / "trace.jsonl"
    if not path.is_file():
        raise UserError(f"trace not found: {path}", str(path))
    return path


def cmd_evaluate(cfg: dict, args) -> dict:
    from .feed import parse_feed
    from .sim import load_trace
    from .stylized import FlowTable, evaluate, write_report

    traces = list(cfg["traces"] or [])
    if not traces and not cfg["empirical"]:
        raise UserError("nothing to evaluate: give traces and/or --empirical")
    flows = {}
    inputs = []
    for i, t in enumerate(traces):
        path = _trace_path(t)
        inputs.append(path)
        name = f"generated_{i:03d}"
        flows[name] = FlowTable.from_trace(load_trace(path).records, name)
    ref = None
    if cfg["empirical"]:
        inputs.append(Path(cfg["empirical"]))
        flows["empirical"] = FlowTable.from_messages(parse_feed(_read(cfg["empirical"])), source="empirical")
        ref = "empirical"
    report, csvs = evaluate(flows, reference=ref, delta_s=cfg["delta"], max_lag=cfg["max_lag"],
                            horizon=cfg["horizon"], n_samples=cfg["samples"], seed=cfg["seed"], bins=cfg["bins"],
                            common_length=not cfg["no_common_length"])
    out = Path(cfg["output"])
    names = write_report(report, csvs, out)
    return {"files": names, "sources": sorted(flows), "_inputs": inputs, "_outputs": [out / n for n in names]}


COMMANDS = {
    "synth": cmd_synth,
    "parse": cmd_parse,
    "preprocess": cmd_preprocess,
    "tokenize": cmd_tokenize,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


# ---- argument parsing ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lobgpt", description="Generative order-flow pipeline.")
    p.add_argument("--version", action="version", version=f"lobgpt {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings file")
    common.add_argument("--print-config", action="store_true", help="show resolved settings and exit")
    common.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def flag(sp, *names, **kw):
        kw.setdefault("default", None)
        sp.add_argument(*names, **kw)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic feed")
    flag(s, "--n", type=int, help="number of messages")
    flag(s, "--seed", type=int)
    flag(s, "-o", "--output", help="feed file to write")
    flag(s, "--symbol")
    flag(s, "--start-price", type=int, dest="start_price", help="initial price in ticks")
    flag(s, "--round-lot-mass", type=float, dest="round_lot_mass")

    s = sub.add_parser("parse", parents=[common], help="parse a feed and summarize it")
    flag(s, "input")
    flag(s, "--session-filter", action="store_const", const=True, dest="session_filter")
    flag(s, "-o", "--output", help="optional re-encoded feed")

    s = sub.add_parser("preprocess", parents=[common], help="stationarize a feed")
    flag(s, "input")
    flag(s, "-o", "--output", help=".bin (binary) or .csv")
    flag(s, "--no-session-filter", action="store_const", const=False, dest="session_filter")

    s = sub.add_parser("tokenize", parents=[common], help="tokenize preprocessed messages")
    flag(s, "input")
    flag(s, "-o", "--output")
    flag(s, "--n-tickers", type=int, dest="n_tickers")

    s = sub.add_parser("train", parents=[common], help="train the world agent")
    flag(s, "corpus")
    flag(s, "-o", "--output", help="run directory")
    flag(s, "--toy", action="store_const", const=True, help="64-dim, 2-layer, 4-head preset")
    flag(s, "--d-model", type=int, dest="d_model")
    flag(s, "--n-layers", type=int, dest="n_layers")
    flag(s, "--n-heads", type=int, dest="n_heads")
    flag(s, "--context", type=int, help="max context tokens L (sink included)")
    flag(s, "--steps", type=int)
    flag(s, "--micro-batch", type=int, dest="micro_batch")
    flag(s, "--accum", type=int)
    flag(s, "--lr", type=float)
    flag(s, "--warmup", type=int)
    flag(s, "--seq-tokens", type=int, dest="seq_tokens")
    flag(s, "--seed", type=int)
    flag(s, "--checkpoint-every", type=int, dest="checkpoint_every")
    flag(s, "--resume", action="store_const", const=True)

    s = sub.add_parser("simulate", parents=[common], help="run simulation trials")
    flag(s, "--checkpoint")
    flag(s, "--history", help="feed whose messages seed the book and prompt")
    flag(s, "-o", "--output")
    flag(s, "--trials", type=int)
    flag(s, "--seed", type=int)
    flag(s, "--budget-messages", type=int, dest="budget_messages")
    flag(s, "--start-time", dest="start_time", help="HH:MM[:SS], nanoseconds, or none")
    flag(s, "--context-messages", type=int, dest="context_messages")
    flag(s, "--temperature", type=float)
    flag(s, "--top-p", type=float, dest="top_p")
    flag(s, "--no-sink", action="store_const", const=True, dest="no_sink")
    flag(s, "--max-discards", type=int, dest="max_discards")
    flag(s, "--wall-clock", type=float, dest="wall_clock")
    flag(s, "--workers", type=int)
    flag(s, "--n-tickers", type=int, dest="n_tickers")
    flag(s, "--resume", action="store_const", const=True)

    s = sub.add_parser("evaluate", parents=[common], help="stylized-facts report")
    s.add_argument("traces", nargs="*", default=None, help="trace files or trial directories")
    flag(s, "--empirical", help="feed to compare against")
    flag(s, "-o", "--output")
    flag(s, "--delta", type=float, help="return interval in seconds")
    flag(s, "--max-lag", type=int, dest="max_lag")
    flag(s, "--horizon", type=int)
    flag(s, "--samples", type=int)
    flag(s, "--seed", type=int)
    flag(s, "--bins", type=int)
    flag(s, "--no-common-length", action="store_const", const=True, dest="no_common_length")
    return p


def _error(code: int, exc: BaseException, path: str | None = None) -> int:
    doc = {"error": type(exc).__name__, "code": code, "message": str(exc).replace("\n", " ")}
    if path:
        doc["path"] = path
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    from .feed import FeedParseError
    from .model import ConfigError, TrainingError
    from .sim import SimError

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and args.traces == []:
        args.traces = None
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve_settings(args.command, args)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        started = _now()
        t0 = time.monotonic()
        res = COMMANDS[args.command](cfg, args)
        inputs = [Path(p) for p in res.pop("_inputs", []) if p]
        outputs = [Path(p) for p in res.pop("_outputs", [])]
        artifacts = res.pop("_artifacts", {})
        if outputs:
            out_dir = outputs[0].parent
            write_manifest(out_dir, args.command, cfg, args.config, inputs, outputs, artifacts, started)
        res["wall_clock_s"] = round(time.monotonic() - t0, 3)
        print(json.dumps(res, sort_keys=True, default=str))
        return EXIT_OK
    except UserError as exc:
        return _error(EXIT_USER, exc, exc.path)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _error(EXIT_USER, exc, getattr(exc, "filename", None))
    except (ConfigError, FeedParseError, SimError, TrainingError, ValueError) as exc:
        return _error(EXIT_USER, exc)
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.debug("internal error", exc_info=True)
        return _error(EXIT_INTERNAL, exc)


if __name__ == "__main__":
    sys.exit(main())
