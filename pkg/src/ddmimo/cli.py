"""Command line entry point: ``ddmimo <verb> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from pydantic import ValidationError

from . import pipeline as P
from .config import ExperimentConfig
from .federated import t_fedave, t_fedgs
from .idetnet import param_count as id_param_count
from .ddnet import param_count as ro_param_count
from .numerics import ContractError, Rng
from .storage import (
    JsonlLog, load_dataset, load_ddnet, read_json, save_dataset, save_ddnet, save_routes, write_json,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    d = base.model_dump(mode="json")
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key.path=value, got {item!r}")
        key, value = item.split("=", 1)
        node = d
        *parents, leaf = key.split(".")
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise UsageError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        node[leaf] = _parse_value(value)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "out", None):
        d["out_dir"] = args.out
    try:
        return ExperimentConfig.model_validate(d)
    except ValidationError as exc:
        raise UsageError(f"invalid configuration:\n{exc}") from exc


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ContractError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _data_dir(args, cfg) -> Path:
    return Path(args.data) if args.data else Path(cfg.out_dir)


# -- verbs ---------------------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig, args) -> None:
    out = _out(cfg)
    rng = Rng(cfg.seed)
    clients = P.generate_clients(cfg, rng)
    cdir = out / "clients"
    cdir.mkdir(exist_ok=True)
    entries = []
    for ds in clients:
        p = ds.provenance
        save_dataset(cdir / f"client_{p.client_id:03d}.ddmd", ds, {"seed": cfg.seed})
        entries.append({"client_id": p.client_id, "count": len(ds), "rho_subinterval": list(p.rho_subinterval),
                        "snr_subinterval": list(p.snr_subinterval), "n_r_range": list(p.n_r_range)})
    pooled = P.pool_clients(clients, rng)
    save_dataset(out / "pooled.ddmd", pooled, {"seed": cfg.seed})
    write_json(out / "config.json", json.loads(cfg.to_json()))
    write_json(out / "data_manifest.json", {"seed": cfg.seed, "n_t": cfg.system.n_t, "clients": entries,
                                            "pooled_count": len(pooled),
                                            "global": json.loads(cfg.system.model_dump_json())})
    print(f"wrote {len(clients)} client datasets and {len(pooled)} pooled samples to {out}")


def _load_clients(ddir: Path):
    files = sorted((ddir / "clients").glob("client_*.ddmd"))
    if not files:
        raise FileNotFoundError(f"no client datasets under {ddir / 'clients'}; run gen-data first")
    return [load_dataset(f) for f in files]


def cmd_train_cl(cfg: ExperimentConfig, args) -> None:
    ddir = _data_dir(args, cfg)
    pooled = load_dataset(ddir / "pooled.ddmd")
    out = _out(cfg)
    log = JsonlLog(out / "train_log.jsonl")
    res = P.run_cl(cfg, pooled, log)
    save_ddnet(out / "model", res.model, cfg.ro_config(), {"mode": "cl", "config": json.loads(cfg.to_json())})
    save_routes(out / "routes.ddmr", res.routes)
    print(f"trained DDNet (cl); route set {res.routes.class_counts()}; bundle at {out / 'model'}")


def _train_fed(cfg: ExperimentConfig, args, mode: str) -> None:
    if mode == "fedgs" and args.delta is not None:
        cfg = cfg.with_updates(fed={"delta": args.delta})
    datasets = _load_clients(_data_dir(args, cfg))
    out = _out(cfg)
    log = JsonlLog(out / "train_log.jsonl")
    res = P.run_federated(cfg, datasets, mode, log)
    save_ddnet(out / "model", res.model, cfg.ro_config(), {"mode": mode, "config": json.loads(cfg.to_json())})
    save_routes(out / "routes.ddmr", res.routes)
    fed = cfg.fed_config()
    q_id, q_ro = id_param_count(cfg.id_config()), ro_param_count(cfg.ro_config())
    ledger = res.ledger.snapshot()
    ledger["q_id"], ledger["q_ro"] = q_id, q_ro
    if mode == "fedave":
        ledger["closed_form"] = {"t_fedave": t_fedave(fed, q_id, q_ro)}
    else:
        ledger["closed_form"] = {"t_fedgs": t_fedgs(fed, q_id, q_ro),
                                 "t_fedgs_index_per_client": t_fedgs(fed, q_id, q_ro, index_per_client=True)}
    write_json(out / "ledger.json", ledger)
    print(f"trained DDNet ({mode}); total bits {ledger['total']}")


def cmd_train_fedave(cfg, args) -> None:
    _train_fed(cfg, args, "fedave")


def cmd_train_fedgs(cfg, args) -> None:
    _train_fed(cfg, args, "fedgs")


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    mdir = Path(args.model) if args.model else Path(cfg.out_dir) / "model"
    model, ro_cfg, _ = load_ddnet(mdir)
    if model.id_cfg != cfg.id_config() or model.oa_cfg != cfg.oa_config() or ro_cfg != cfg.ro_config():
        raise ContractError("checkpoint does not match the configuration (n_t, layer counts or widths differ)")
    axis = args.axis or cfg.eval.axis
    out = _out(cfg)
    conds = P.eval_conditions(cfg, axis)
    reports = P.evaluate(model, conds, axis, ro_cfg, cfg.eval.include_ml, cfg.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["detector", "axis", "condition", "errors", "bits", "ber"])
    for r in reports:
        w.writerows(r.csv_rows())
    (out / f"ber_{axis}.csv").write_text(buf.getvalue())
    write_json(out / f"ber_{axis}.json", [r.to_dict() for r in reports])
    print(buf.getvalue(), end="")


def build_report(run_dir: Path) -> tuple[str, dict]:
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    csvs = sorted(run_dir.glob("ber_*.csv"))
    ledger_path = run_dir / "ledger.json"
    log_path = run_dir / "train_log.jsonl"
    if not csvs and not ledger_path.exists() and not log_path.exists():
        raise FileNotFoundError(f"nothing to report in {run_dir} (no ber_*.csv, ledger.json or train_log.jsonl)")
    summary: dict = {"ber": {}, "routing": {}}
    lines = [f"run: {run_dir.name}"]
    for path in csvs:
        with path.open() as fh:
            for row in csv.DictReader(fh):
                key = f"{row['axis']}={row['condition']}"
                summary["ber"].setdefault(row["detector"], {})[key] = float(row["ber"])
        js = path.with_suffix(".json")
        if js.exists():
            for rep in read_json(js):
                if rep["detector"] == "DDNet":
                    summary["routing"][rep["axis"]] = rep["extra"]
    for det in sorted(summary["ber"]):
        pts = ", ".join(f"{k}: {v:.4g}" for k, v in summary["ber"][det].items())
        lines.append(f"BER {det}: {pts}")
    for axis, extra in sorted(summary["routing"].items()):
        frac = ", ".join(f"{k}: {v:.3f}" for k, v in extra.get("oampnet_fraction", {}).items())
        lines.append(f"DDNet OAMPNet fraction ({axis}): {frac}")
    if ledger_path.exists():
        led = read_json(ledger_path)
        summary["ledger"] = led
        lines.append(f"bits: broadcast {led['broadcast']}, upload {led['upload']}, index {led['index']}, "
                     f"total {led['total']}")
    if log_path.exists():
        recs = [json.loads(x) for x in log_path.read_text().splitlines() if x.strip()]
        summary["log_records"] = len(recs)
        lines.append(f"training log records: {len(recs)}")
    return "\n".join(lines) + "\n", summary


def cmd_report(cfg: ExperimentConfig, args) -> None:
    run_dir = Path(args.run) if args.run else Path(cfg.out_dir)
    text, summary = build_report(run_dir)
    (run_dir / "summary.txt").write_text(text)
    write_json(run_dir / "summary.json", summary)
    print(text, end="")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-cl": cmd_train_cl,
    "train-fedave": cmd_train_fedave,
    "train-fedgs": cmd_train_fedgs,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddmimo", description="Data-driven MIMO detection experiments.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in COMMANDS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="experiment config JSON (defaults used when omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. train.id_epochs=5 (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (config out_dir)")
        if verb.startswith("train"):
            p.add_argument("--data", help="directory written by gen-data (default: --out)")
        if verb == "train-fedgs":
            p.add_argument("--delta", type=float, help="sparsity in (0, 1]")
        if verb == "eval":
            p.add_argument("--model", help="DDNet bundle directory (default: <out>/model)")
            p.add_argument("--axis", choices=["snr", "n_r", "rho", "mixed"])
        if verb == "report":
            p.add_argument("--run", help="run directory (default: <out>)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        print(f"usage error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.verb](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractError, OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
