"""Command-line entry point: ``crossdehaze <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` with ``key=value`` lines whose keys
are the subcommand's long options with underscores. Command-line flags win
over file values. The fully resolved configuration is echoed at start in the
same ``key=value`` form, so the echo can be fed back in as a config file.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 domain error, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import imgdata, trainer, xalign
from .hazesim import synth_dataset
from .nnet.checkpoint import CheckpointError, load_checkpoint
from .nnet.gradcheck import desk_gradcheck
from .nnet.model import DehazeUNet, NetConfig
from .rng import Rng

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DOMAIN, EXIT_NUMERICAL = 0, 2, 3, 4, 5
GRADCHECK_TOL = {64: 1e-4, 32: 1e-2}

log = logging.getLogger("crossdehaze")


class UsageError(Exception):
    pass


def parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_int_tuple(text):
    if isinstance(text, tuple):
        return text
    return tuple(int(v) for v in str(text).split(","))


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return ""
    return str(v)


_TYPES = {"int": int, "float": float, "str": str, "bool": parse_bool, "tuple": parse_int_tuple}


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment line."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e.strerror or e}") from e
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


class OptionSet:
    """Options of one subcommand: name -> (converter, default, help)."""

    def __init__(self):
        self.options = {}

    def add(self, name, conv, default, help="", choices=None):
        self.options[name] = (conv, default, help, choices)

    def install(self, parser):
        for name, (conv, _default, help, choices) in self.options.items():
            flag = "--" + name.replace("_", "-")
            # defaults are applied after merging with the config file
            parser.add_argument(flag, dest=name, type=conv, default=None, help=help, choices=choices)

    def resolve(self, args):
        values = {k: d for k, (_c, d, _h, _ch) in self.options.items()}
        if args.config:
            for key, text in read_config_file(args.config).items():
                if key not in self.options:
                    raise UsageError(f"unknown config key {key!r} for {args.command}")
                conv, _d, _h, choices = self.options[key]
                try:
                    val = conv(text) if text != "" else None
                except ValueError as e:
                    raise UsageError(f"config key {key}: {e}") from e
                if choices and val not in choices:
                    raise UsageError(f"config key {key}: {val!r} not in {list(choices)}")
                values[key] = val
        for key in self.options:
            v = getattr(args, key)
            if v is not None:
                values[key] = v
        return values


def _common(spec):
    spec.add("seed", int, 0, "root seed for every random stream")
    spec.add("threads", int, None, "worker cap (falls back to CROSSDEHAZE_THREADS, then 1)")


def _train_options(spec, skip=()):
    hints = {"mix_ratio": tuple(trainer.MIX_RATIOS), "internal_reduction": ("mean", "sum")}
    for f in fields(trainer.TrainConfig):
        if f.name in skip or f.name in spec.options:
            continue
        spec.add(f.name, _TYPES[f.type], f.default, f"training option ({f.type})", hints.get(f.name))


def build_specs():
    specs = {}

    s = OptionSet()
    _common(s)
    s.add("out", str, None, "output dataset directory")
    s.add("n", int, 10, "number of pairs")
    s.add("size", int, 24, "square image side")
    s.add("width", int, None, "image width (overrides --size)")
    s.add("height", int, None, "image height (overrides --size)")
    s.add("mode", str, "constant_t", "haze mode", ("constant_t", "depth"))
    s.add("complexity", int, 6, "shapes per scene")
    s.add("format", str, "imgf", "image file format", ("imgf", "ppm"))
    specs["synth"] = (s, "generate a synthetic hazy/clean dataset")

    s = OptionSet()
    _common(s)
    s.add("data", str, None, "dataset directory")
    s.add("target", str, None, "second dataset to compare hazy statistics against")
    s.add("bins", int, xalign.HIST_BINS, "histogram bins")
    s.add("out", str, None, "directory for the stats CSV")
    specs["stats"] = (s, "per-channel means and histograms of a dataset")

    s = OptionSet()
    _common(s)
    s.add("source", str, None, "dataset to recolor")
    s.add("target", str, None, "dataset whose statistics are matched")
    s.add("out", str, None, "output directory")
    s.add("format", str, "imgf", "image file format", ("imgf", "ppm"))
    specs["align"] = (s, "gamma-align a source dataset to a target dataset")

    s = OptionSet()
    _common(s)
    s.add("target", str, None, "target training dataset")
    s.add("auxiliary", str, None, "auxiliary (already aligned) dataset for mix_ratio 3:1 or 1:1")
    s.add("out", str, None, "run directory")
    _train_options(s)
    specs["train"] = (s, "train a dehazing network")

    s = OptionSet()
    _common(s)
    s.add("test", str, None, "test dataset")
    s.add("checkpoint", str, None, "checkpoint file; omitted means the identity-initialised network")
    s.add("batch_size", int, 16, "inference batch size")
    s.add("out", str, None, "directory for eval.csv")
    specs["eval"] = (s, "score a model on a test dataset")

    s = OptionSet()
    _common(s)
    s.add("out", str, None, "output directory")
    s.add("target", str, None, "target training dataset (synthesized when omitted)")
    s.add("auxiliary", str, None, "auxiliary dataset, aligned before use (synthesized when omitted)")
    s.add("test", str, None, "test dataset (synthesized when omitted)")
    s.add("n_train", int, 200, "synthesized target pairs")
    s.add("n_test", int, 50, "synthesized test pairs")
    s.add("n_aux", int, 200, "synthesized auxiliary pairs")
    s.add("size", int, 24, "synthesized image side")
    s.add("all_arms", parse_bool, False, "also run the 3:1 arms")
    _train_options(s, skip=("use_internal", "mix_ratio"))
    specs["ablate"] = (s, "train and score the ablation arms")

    s = OptionSet()
    _common(s)
    s.add("seed", int, 1, "network and probe seed")
    s.add("bits", int, 64, "float width", (32, 64))
    s.add("size", int, 8, "input side")
    s.add("n_params", int, 200, "sampled parameter coordinates")
    specs["gradcheck"] = (s, "finite-difference check of the network gradients")
    return specs


def build_parser(specs=None):
    specs = specs or build_specs()
    p = argparse.ArgumentParser(prog="crossdehaze", description="Dehazing with cross-dataset alignment.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (spec, help) in specs.items():
        sp = sub.add_parser(name, help=help, description=help)
        sp.add_argument("--config", help="key=value file; flags override its values")
        spec.install(sp)
    return p


def _need(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _dataset_path(path, key):
    if not imgdata.is_dataset_dir(path):
        raise FileNotFoundError(f"--{key}: {path} is not a dataset directory (no manifest.csv)")
    return Path(path)


def _out_dir(path):
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise FileExistsError(f"--out {out} exists and is not a directory")
    return out


def _threads(cfg):
    if cfg.get("threads") is not None:
        n = cfg["threads"]
    else:
        env = os.environ.get("CROSSDEHAZE_THREADS", "")
        try:
            n = int(env) if env else 1
        except ValueError as e:
            raise UsageError(f"CROSSDEHAZE_THREADS must be an integer, got {env!r}") from e
    if n < 1:
        raise UsageError("threads must be at least 1")
    return n


def echo_config(command, cfg, out=None):
    lines = [f"{k}={format_value(v)}" for k, v in sorted(cfg.items())]
    print(f"# crossdehaze {command}")
    for line in lines:
        print(line)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{command}_config.txt").write_text("\n".join(lines) + "\n")


def _train_config(cfg, **override):
    kw = {f.name: cfg[f.name] for f in fields(trainer.TrainConfig) if f.name in cfg}
    kw.update(override)
    try:
        return trainer.TrainConfig(**kw)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _print_means(label, means):
    print(f"{label} " + " ".join(f"{c}={m:.6f}" for c, m in zip(imgdata.CHANNELS, means)))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg):
    _need(cfg, "out")
    out = _out_dir(cfg["out"])
    w = cfg["width"] or cfg["size"]
    h = cfg["height"] or cfg["size"]
    if cfg["n"] < 1 or w < 8 or h < 8:
        raise UsageError("synth needs n >= 1 and images of at least 8x8")
    echo_config("synth", cfg)
    ds = synth_dataset(Rng(cfg["seed"], ("synth",)), cfg["n"], w, h, cfg["mode"], cfg["complexity"], _threads(cfg))
    manifest = imgdata.save_dataset(ds, out, cfg["format"])
    print(f"manifest {manifest}")
    return EXIT_OK


def cmd_stats(cfg):
    _need(cfg, "data")
    data = _dataset_path(cfg["data"], "data")
    other = _dataset_path(cfg["target"], "target") if cfg["target"] else None
    out = _out_dir(cfg["out"]) if cfg["out"] else None
    echo_config("stats", cfg)
    ds = imgdata.load_dataset(data)
    hazy = xalign.dataset_channel_means(ds.hazy, cfg["bins"])
    clean = xalign.dataset_channel_means(ds.clean, cfg["bins"])
    print(f"pairs {len(ds)}")
    _print_means("hazy mean", hazy.means)
    _print_means("clean mean", clean.means)
    if other is not None:
        tgt = xalign.dataset_channel_means(imgdata.load_dataset(other).hazy, cfg["bins"])
        _print_means("target hazy mean", tgt.means)
        _print_means("hazy mean gap", xalign.mean_gaps(hazy, tgt))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        path = xalign.channel_histogram_csv(hazy, tgt if other is not None else clean, out / "stats.csv")
        print(f"histogram {path}")
    return EXIT_OK


def cmd_align(cfg):
    _need(cfg, "source", "target", "out")
    src_dir = _dataset_path(cfg["source"], "source")
    tgt_dir = _dataset_path(cfg["target"], "target")
    out = _out_dir(cfg["out"])
    echo_config("align", cfg)
    source = imgdata.load_dataset(src_dir)
    target = imgdata.load_dataset(tgt_dir)
    tgt_stats = xalign.dataset_channel_means(target.hazy)
    src_stats = xalign.dataset_channel_means(source.hazy)
    aligned, gamma = xalign.align_dataset(source, tgt_stats)
    post_stats = xalign.dataset_channel_means(aligned.hazy)
    print(f"gamma {gamma}")
    _print_means("pre mean gap", xalign.mean_gaps(src_stats, tgt_stats))
    _print_means("post mean gap", xalign.mean_gaps(post_stats, tgt_stats))
    manifest = imgdata.save_dataset(aligned, out / "aligned", cfg["format"])
    xalign.channel_histogram_csv(src_stats, tgt_stats, out / "stats_before.csv")
    xalign.channel_histogram_csv(post_stats, tgt_stats, out / "stats_after.csv")
    (out / "gamma.txt").write_text(f"{gamma.r:.6f},{gamma.g:.6f},{gamma.b:.6f}\n")
    print(f"manifest {manifest}")
    return EXIT_OK


def cmd_train(cfg):
    _need(cfg, "target", "out")
    tgt_dir = _dataset_path(cfg["target"], "target")
    aux_dir = _dataset_path(cfg["auxiliary"], "auxiliary") if cfg["auxiliary"] else None
    out = _out_dir(cfg["out"])
    tc = _train_config(cfg)
    if tc.mix_ratio != "off" and aux_dir is None:
        raise UsageError(f"mix_ratio {tc.mix_ratio} needs --auxiliary")
    echo_config("train", cfg, out)
    target = imgdata.load_dataset(tgt_dir)
    aux = imgdata.load_dataset(aux_dir) if aux_dir else None
    res = trainer.train(tc, target, aux, out)
    means = res.epoch_means()
    print(f"epochs {len(means)}, first-epoch l_ext {means[0]:.6f}, final-epoch l_ext {means[-1]:.6f}")
    print(f"checkpoint {res.checkpoint}")
    print(f"log {out / 'train_log.csv'}")
    return EXIT_OK


def cmd_eval(cfg):
    _need(cfg, "test")
    test_dir = _dataset_path(cfg["test"], "test")
    if cfg["checkpoint"] and not Path(cfg["checkpoint"]).is_file():
        raise FileNotFoundError(f"--checkpoint {cfg['checkpoint']} not found")
    out = _out_dir(cfg["out"]) if cfg["out"] else None
    echo_config("eval", cfg)
    test = imgdata.load_dataset(test_dir)
    net = load_checkpoint(cfg["checkpoint"])[0] if cfg["checkpoint"] else DehazeUNet(NetConfig(seed=cfg["seed"]))
    res = trainer.evaluate(net, test, cfg["batch_size"], _threads(cfg))
    base = trainer.hazy_baseline(test)
    print(f"pairs {len(test)}")
    print(f"psnr mean {trainer.metrics.format_psnr(res.mean_psnr)} dB")
    print(f"ssim mean {res.mean_ssim:.6f}")
    if res.n_infinite:
        print(f"note {res.n_infinite} identical pair(s) excluded from mean psnr")
    print(f"hazy baseline psnr {trainer.metrics.format_psnr(base.mean_psnr)} dB, ssim {base.mean_ssim:.6f}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        print(f"csv {res.write_csv(out / 'eval.csv')}")
    return EXIT_OK


def cmd_ablate(cfg):
    _need(cfg, "out")
    paths = {k: _dataset_path(cfg[k], k) if cfg[k] else None for k in ("target", "auxiliary", "test")}
    out = _out_dir(cfg["out"])
    base = _train_config(cfg)
    echo_config("ablate", cfg, out)
    if all(paths.values()):
        target, aux, test = (imgdata.load_dataset(paths[k]) for k in ("target", "auxiliary", "test"))
    elif any(paths.values()):
        raise UsageError("give all of --target, --auxiliary, --test or none of them")
    else:
        target, test, aux = trainer.make_desk_datasets(
            cfg["seed"], cfg["n_train"], cfg["n_test"], cfg["n_aux"], cfg["size"]
        )
    arms = trainer.ALL_ARMS if cfg["all_arms"] else trainer.DEFAULT_ARMS
    rows = trainer.ablate(base, target, aux, test, arms)
    path = trainer.write_ablation_csv(rows, out / "ablation.csv")
    print(",".join(trainer.ABLATION_COLUMNS))
    for r in rows:
        print(",".join(r.cells()))
    print(trainer.ablation_ordering_report(rows))
    print(f"csv {path}")
    return EXIT_OK


def cmd_gradcheck(cfg):
    tol = GRADCHECK_TOL[cfg["bits"]]
    echo_config("gradcheck", cfg)
    rep = desk_gradcheck(cfg["seed"], cfg["bits"], cfg["size"], cfg["n_params"])
    print(
        f"checked {rep.n_params} parameter coordinates and {rep.n_inputs} input pixels; "
        f"max rel err {rep.max_rel_err:.3e} (params {rep.max_param_err:.3e}, inputs {rep.max_input_err:.3e})"
    )
    print(f"worst {rep.worst}")
    ok = rep.passed(tol)
    print(f"{'PASS' if ok else 'FAIL'} tolerance {tol:g}")
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {
    "synth": cmd_synth,
    "stats": cmd_stats,
    "align": cmd_align,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    specs = build_specs()
    parser = build_parser(specs)
    args = parser.parse_args(argv)  # exits 2 on bad flags
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr, force=True
    )
    try:
        cfg = specs[args.command][0].resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"crossdehaze {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except xalign.SingularStatisticsError as e:
        print(f"crossdehaze {args.command}: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except trainer.NumericalError as e:
        print(f"crossdehaze {args.command}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, imgdata.ImageFormatError, CheckpointError) as e:
        print(f"crossdehaze {args.command}: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"crossdehaze {args.command}: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
