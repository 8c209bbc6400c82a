"""``dannte`` command line: generate, train, evaluate, compare, embed.

Exit codes: 0 success, 1 usage or invalid configuration, 2 data error,
3 numeric failure. Every output file is written to a temporary name and
renamed into place, so a failed run leaves no partial files.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from .comparison import run_comparison
from .data import generate_synthetic, load_series, window, write_series
from .errors import ContractError, DataError, DomainError, NonFiniteError, ShapeError
from .metrics import KL_DIRECTION, METRIC_NAMES, embedding_kl, mape, mse, pca_project
from .training import MODES, TrainConfig, config_dict, history_csv, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="domain loss multiplier")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--out", default=".", help="output directory (created if missing)")


def _data_args(p: argparse.ArgumentParser, *, checkpoint: bool = False) -> None:
    p.add_argument("--source", help="source series file")
    p.add_argument("--target", help="target series file")
    if checkpoint:
        p.add_argument("--checkpoint", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dannte", description="Domain-adversarial LSTM regression on time series.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("generate", help="write synthetic source.csv and target.csv")
    _common(p)
    p = sub.add_parser("train", help="train one model; writes model.ckpt and history.csv")
    _common(p)
    _data_args(p)
    p = sub.add_parser("evaluate", help="metrics of a checkpoint on source/target files")
    _common(p)
    _data_args(p, checkpoint=True)
    p = sub.add_parser("compare", help="k-fold comparison of all five models")
    _common(p)
    _data_args(p)
    p = sub.add_parser("embed", help="dump embeddings with a 2-D projection")
    _common(p)
    _data_args(p, checkpoint=True)
    return parser


# --------------------------------------------------------------------------
# helpers


def resolve(args) -> tuple[TrainConfig, "cfgmod.ShiftConfig"]:
    """Config file first, then flags on top."""
    train_o, data_o = cfgmod.load_config(args.config) if args.config else ({}, {})
    for name in ("lam", "mode", "epochs", "batch_size", "window", "folds", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            train_o[name] = value
    if args.seed is not None:
        data_o["seed"] = args.seed
    return cfgmod.build(train_o, data_o)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise DataError(f"{out}: output directory is not writable")
    return out


def _write(path: Path, text: str | bytes) -> None:
    data = text.encode("utf-8") if isinstance(text, str) else text
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _need(args, name: str) -> str:
    value = getattr(args, name)
    if not value:
        raise UsageError(f"dannte {args.command}: --{name} is required")
    return value


def _windows(path, domain, cfg: TrainConfig):
    return window(load_series(path, domain), cfg.window, cfg.stride)


def _channel_summary(name: str, ts) -> list[str]:
    lines = [f"{name}: {len(ts)} rows, {ts.n_features} channels"]
    for k in range(ts.n_features):
        col = ts.features[:, k]
        lines.append(f"  f{k}  mean {col.mean():+.4f}  std {col.std():.4f}  "
                     f"min {col.min():+.4f}  max {col.max():+.4f}")
    lines.append(f"  y   mean {ts.target.mean():+.4f}  std {ts.target.std():.4f}")
    return lines


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    _, shift = resolve(args)
    out = _outdir(args)
    src, tgt = generate_synthetic(shift)
    for name, ts in (("source.csv", src), ("target.csv", tgt)):
        fd, tmp = tempfile.mkstemp(prefix=name + ".", suffix=".tmp", dir=out)
        os.close(fd)
        try:
            write_series(tmp, ts)
            os.replace(tmp, out / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    print("\n".join(_channel_summary("source", src) + _channel_summary("target", tgt)))
    print(f"wrote {out / 'source.csv'} ({len(src)} rows) and {out / 'target.csv'} ({len(tgt)} rows)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, _ = resolve(args)
    out = _outdir(args)
    source = _windows(_need(args, "source"), "source", cfg)
    target = None
    if cfg.mode != "baseline":
        target = _windows(_need(args, "target"), "target", cfg)
    result = train(cfg, source, target)
    ckpt.save(out / "model.ckpt", result.model, result.stats, config_dict(cfg))
    _write(out / "history.csv", history_csv(result.history))
    last = result.history[-1]
    print(f"mode {cfg.mode}, {cfg.epochs} epochs: L_y {last.l_y:.6g}  L_d {last.l_d:.6g}  "
          f"L_tot {last.l_tot:.6g}  domain acc {last.domain_acc:.3f}")
    print(f"wrote {out / 'model.ckpt'} and {out / 'history.csv'}")
    return EXIT_OK


def _loaded_window(args, stored: dict) -> TrainConfig:
    cfg, _ = resolve(args)
    # windows must match the checkpoint unless overridden on the command line
    if args.window is None and "window" in stored:
        cfg = replace(cfg, window=int(stored["window"]), stride=int(stored.get("stride", 1)))
    return cfg


def cmd_evaluate(args) -> int:
    pred = ckpt.load_predictor(args.checkpoint)
    cfg = _loaded_window(args, ckpt.read_header(args.checkpoint)["config"])
    out = _outdir(args)
    source = _windows(_need(args, "source"), "source", cfg)
    target = _windows(_need(args, "target"), "target", cfg)
    st = pred.stats
    ys = pred.predict_standardized(source.sequences)
    yt = pred.predict_standardized(target.sequences)
    t_y = target.targets
    values = {
        "mse_source": mse(ys, st.transform_y(source.targets)),
        "mse_target": mse(yt, st.transform_y(t_y)),
        "mape_target": mape(st.inverse_y(yt), t_y),
        "kl_divergence": embedding_kl(pred.embed(source.sequences), pred.embed(target.sequences)),
    }
    text = "metric,value\n" + "".join(f"{k},{values[k]!r}\n" for k in METRIC_NAMES)
    text += f"kl_direction,{KL_DIRECTION}\n"
    _write(out / "metrics.csv", text)
    print(text, end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, shift = resolve(args)
    out = _outdir(args)
    if args.source or args.target:
        source = _windows(_need(args, "source"), "source", cfg)
        target = _windows(_need(args, "target"), "target", cfg)
    else:
        src, tgt = generate_synthetic(shift)
        source, target = window(src, cfg.window, cfg.stride), window(tgt, cfg.window, cfg.stride)
    table = run_comparison(cfg, source, target, log=lambda m: print(m, file=sys.stderr))
    _write(out / "comparison.csv", table.to_csv())
    _write(out / "comparison.txt", table.to_text())
    print(table.to_text(), end="")
    return EXIT_OK


def cmd_embed(args) -> int:
    pred = ckpt.load_predictor(args.checkpoint)
    cfg = _loaded_window(args, ckpt.read_header(args.checkpoint)["config"])
    out = _outdir(args)
    parts = [("source", _windows(_need(args, "source"), "source", cfg))]
    if args.target:
        parts.append(("target", _windows(args.target, "target", cfg)))
    emb = np.concatenate([pred.embed(ws.sequences) for _, ws in parts])
    proj = pca_project(emb, 2).coords
    H = emb.shape[1]
    lines = ["domain,origin_index," + ",".join(f"e{k}" for k in range(H)) + ",p0,p1"]
    row = 0
    for name, ws in parts:
        for idx in ws.origin_index:
            vals = ",".join(repr(float(v)) for v in emb[row]) + "," + ",".join(repr(float(v)) for v in proj[row])
            lines.append(f"{name},{int(idx)},{vals}")
            row += 1
    _write(out / "embeddings.csv", "\n".join(lines) + "\n")
    print(f"wrote {row} embeddings to {out / 'embeddings.csv'}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "compare": cmd_compare, "embed": cmd_embed}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ContractError as exc:
        print(f"dannte: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, DomainError, FloatingPointError) as exc:
        print(f"dannte: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as exc:
        print(f"dannte: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
