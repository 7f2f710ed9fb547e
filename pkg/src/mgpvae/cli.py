"""Command-line entry point: ``mgpvae <subcommand> [flags]``.

Every subcommand reads an optional JSON run config (``--config``), applies
flag overrides, writes its artifacts under ``--out`` and drops a
``manifest.json`` next to them. ``--out`` names a directory, or a file whose
suffix matches the command's main artifact (``prior.csv``, ``data.mgpd``,
...), in which case the manifest is written beside it as
``<stem>.manifest.json``.

Failures print one line ``code=<Kind> msg=<text>`` on stderr and exit with
2 (config), 3 (data) or 4 (numeric).
"""
import argparse
import csv
import json
import logging
import os
import subprocess
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, datasets, geodesic, gp_prior, metrics, predictor, vae
from .datasets import ToyVideoSpec
from .errors import ConfigError, DataError, EmptyDataset, MGPError
from .geodesic import GeodesicConfig
from .predictor import PredictorConfig
from .vae import ModelConfig

log = logging.getLogger("mgpvae")


# ---------------------------------------------------------------------------
# run config


def _strict(cls, section, data, **extra):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    known = {f.name for f in fields(cls)} - set(extra)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    try:
        return cls(**data, **extra)
    except TypeError as exc:
        raise ConfigError(f"bad value in {section!r}: {exc}") from None


@dataclass
class RunConfig:
    """One JSON document with ``model``, ``geodesic``, ``predictor`` and ``data`` sections.

    Every key is optional; missing keys take the dataclass defaults. The
    ``geodesic`` section drives both the ``geodesic`` command and the
    predictor's geodesic loss.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    geodesic: GeodesicConfig = field(default_factory=lambda: GeodesicConfig(backtrack=True))
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    data: ToyVideoSpec = field(default_factory=ToyVideoSpec)

    def __post_init__(self):
        self.predictor.geodesic = self.geodesic

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = sorted(set(d) - {"model", "geodesic", "predictor", "data"})
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        geo_doc = d.get("geodesic", {})
        if not isinstance(geo_doc, dict):
            raise ConfigError("section 'geodesic' must be a JSON object")
        geo = _strict(GeodesicConfig, "geodesic", {"backtrack": True, **geo_doc})
        return cls(
            model=_strict(ModelConfig, "model", d.get("model", {})),
            geodesic=geo,
            predictor=_strict(PredictorConfig, "predictor", d.get("predictor", {}), geodesic=geo),
            data=_strict(ToyVideoSpec, "data", d.get("data", {})),
        )

    def to_dict(self):
        pred = self.predictor.to_dict()
        pred.pop("geodesic")
        return {
            "model": self.model.to_dict(),
            "geodesic": asdict(self.geodesic),
            "predictor": pred,
            "data": asdict(self.data),
        }


def load_run_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return RunConfig.from_dict(doc)


def apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.model.seed = cfg.predictor.seed = cfg.data.seed = args.seed
    if args.epochs is not None:
        if args.command == "predict-train":
            cfg.predictor.epochs = args.epochs
        else:
            cfg.model.epochs = args.epochs
    if getattr(args, "k", None) is not None:
        cfg.predictor.k = args.k
    # re-validate after the edits
    return RunConfig.from_dict(cfg.to_dict())


# ---------------------------------------------------------------------------
# output helpers


def version_string():
    """``git describe``-style version, falling back to the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except OSError:
        pass
    return __version__


def output_paths(out, default_name):
    """Resolve ``--out`` to ``(artifact_path, manifest_path)``."""
    out = Path(out)
    if out.suffix == Path(default_name).suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        return out, out.with_name(out.stem + ".manifest.json")
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name, out / "manifest.json"


def write_manifest(path, command, cfg, artifacts, results=None):
    doc = {
        "command": command,
        "version": version_string(),
        "seed": {"model": cfg.model.seed, "predictor": cfg.predictor.seed, "data": cfg.data.seed},
        "config": cfg.to_dict(),
        "artifacts": sorted(str(Path(a).name) for a in artifacts),
        "results": results or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x))


def load_dataset(args, cfg):
    if args.data:
        return datasets.load(args.data)
    batch = datasets.generate(cfg.data)
    if len(batch) == 0:
        raise EmptyDataset("config requests zero sequences")
    return batch


def load_model(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    return vae.Checkpoint.load(args.checkpoint).model


def _pair(args, n):
    a, b = args.pair
    if not (0 <= a < n and 0 <= b < n):
        raise DataError(f"--pair {a} {b} outside 0..{n - 1}")
    return a, b


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, cfg):
    path, manifest = output_paths(args.out, "data.mgpd")
    batch = datasets.generate(cfg.data)
    datasets.save(path, batch)
    write_manifest(manifest, args.command, cfg, [path], {"num_sequences": len(batch)})


def cmd_train(args, cfg):
    path, manifest = output_paths(args.out, "model.mgpc")
    batch = load_dataset(args, cfg)
    ck = vae.train(batch, cfg.model)
    ck.save(path)
    hist = path.parent / "history.csv"
    rows = [[h["epoch"], _fmt(h["loss"]), _fmt(h["recon"])] + [_fmt(k) for k in h["kl"]] for h in ck.history]
    write_csv(hist, ["epoch", "loss", "recon"] + [f"kl{i}" for i in range(cfg.model.d)], rows)
    final = ck.history[-1] if ck.history else {}
    write_manifest(manifest, args.command, cfg, [path, hist], {"final": final})


def cmd_sample_prior(args, cfg):
    path, manifest = output_paths(args.out, "prior.csv")
    bank = gp_prior.build_prior_bank(cfg.model.specs())
    rng = np.random.default_rng(cfg.model.seed)
    rows = []
    lag1 = []
    for c, prior in enumerate(bank):
        z = gp_prior.sample_path(prior, rng.standard_normal((args.paths, prior.n)))
        for p in range(args.paths):
            rows += [[p, c, t + 1, _fmt(z[p, t])] for t in range(prior.n)]
        inc = np.diff(z, axis=1)
        lag1.append(float(np.mean(inc[:, 1:] * inc[:, :-1]) / np.mean(inc * inc)) if prior.n > 2 else None)
    write_csv(path, ["path_id", "channel", "t", "value"], rows)
    write_manifest(manifest, args.command, cfg, [path], {"increment_lag1_autocorr": lag1})


def cmd_export_latents(args, cfg):
    path, manifest = output_paths(args.out, "latents.csv")
    model = load_model(args)
    batch = load_dataset(args, cfg)
    count = len(batch) if args.limit is None else min(args.limit, len(batch))
    post = model.encode(batch.pixels[:count])
    std = np.sqrt(np.sum(post.chol**2, axis=-1))
    rows = []
    for s in range(count):
        for c in range(model.config.d):
            rows += [[s, c, t + 1, _fmt(post.mu[s, c, t]), _fmt(std[s, c, t])] for t in range(model.config.n_frames)]
    write_csv(path, ["seq_id", "channel", "t", "mean", "std"], rows)
    write_manifest(manifest, args.command, cfg, [path], {"sequences": count})


def cmd_swap(args, cfg):
    path, manifest = output_paths(args.out, "swap.mgpd")
    model = load_model(args)
    batch = load_dataset(args, cfg)
    a, b = _pair(args, len(batch))
    xa, xb = batch.pixels[a], batch.pixels[b]
    sa, sb = vae.swap_channels(model, xa, xb, args.channel)
    z = model.posterior_means(np.stack([xa, xb]))
    ra, rb = model.decode_np(z)
    out = datasets.VideoBatch(
        np.stack([xa, xb, ra, rb, sa, sb]),
        [{"role": r} for r in ("input_a", "input_b", "recon_a", "recon_b", "swapped_a", "swapped_b")],
        {"pair": [a, b], "channel": args.channel},
    )
    datasets.save(path, out)
    results = {"pair": [a, b], "channel": args.channel}
    if model.config.frame_shape[0] == 1 and batch.meta.get("generator", {}).get("family") == datasets.BOUNCING_GLYPHS:
        results.update(metrics.swap_effects(ra[None], rb[None], sa[None], datasets.GLYPH_BITMAPS))
    write_manifest(manifest, args.command, cfg, [path], results)


def cmd_geodesic(args, cfg):
    path, manifest = output_paths(args.out, "geodesic.csv")
    model = load_model(args)
    batch = load_dataset(args, cfg)
    a, b = _pair(args, len(batch))
    t = args.frame
    if not 0 <= t < model.config.n_frames:
        raise DataError(f"--frame {t} outside 0..{model.config.n_frames - 1}")
    z = model.posterior_means(batch.pixels[[a, b]])
    decoder = predictor.frame_decoder(model, 1)
    init = geodesic.init_path(z[0, :, t], z[1, :, t], cfg.geodesic.num_interior, decoder, cfg.geodesic.delta_t)
    start = init.points.copy()
    path_ = geodesic.refine(init, decoder, cfg.geodesic)
    rows = []
    for stage, pts in (("linear", start), ("refined", path_.points)):
        for i, p in enumerate(pts):
            rows.append([stage, i] + [_fmt(v) for v in p])
    write_csv(path, ["stage", "point"] + [f"z{c}" for c in range(model.config.d)], rows)
    energy = path.parent / (path.stem + "_energy.csv")
    write_csv(energy, ["sweep", "energy"], [[i, _fmt(e)] for i, e in enumerate(path_.energy_trace)])
    results = {"energy_initial": path_.energy_trace[0], "energy_final": path_.energy_trace[-1],
               "step_failures": path_.step_failures}
    write_manifest(manifest, args.command, cfg, [path, energy], results)


def cmd_predict_train(args, cfg):
    path, manifest = output_paths(args.out, "predictor.mgpc")
    model = load_model(args)
    batch = load_dataset(args, cfg)
    ck = predictor.train_predictor(model, batch, cfg.predictor)
    ck.save(path)
    hist = ck.history
    results = {"initial_loss": hist[0]["loss"], "final_loss": hist[-1]["loss"], "history": hist}
    write_manifest(manifest, args.command, cfg, [path], results)


def cmd_predict_eval(args, cfg):
    path, manifest = output_paths(args.out, "eval.json")
    model = load_model(args)
    if not args.predictor:
        raise ConfigError("--predictor is required")
    pred = predictor.PredictorCheckpoint.load(args.predictor).predictor
    batch = load_dataset(args, cfg)
    scores = predictor.evaluate(model, pred, batch, args.k)
    with open(path, "w") as fh:
        json.dump(scores, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(manifest, args.command, cfg, [path], scores)
    print(f"mse={scores['mse']:.1f} bce={scores['bce']:.1f}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample-prior": cmd_sample_prior,
    "export-latents": cmd_export_latents,
    "swap": cmd_swap,
    "geodesic": cmd_geodesic,
    "predict-train": cmd_predict_train,
    "predict-eval": cmd_predict_eval,
}


# ---------------------------------------------------------------------------
# argument parsing


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--out", required=True, help="output directory or artifact file")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--data", help="MGPD dataset (default: generate from the config)")
    common.add_argument("--checkpoint", help="trained VAE checkpoint")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mgpvae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "sample-prior":
            p.add_argument("--paths", type=int, default=6)
        if name == "export-latents":
            p.add_argument("--limit", type=int, help="encode only the first LIMIT sequences")
        if name in ("swap", "geodesic"):
            p.add_argument("--pair", type=int, nargs=2, default=(0, 1), metavar=("A", "B"))
        if name == "swap":
            p.add_argument("--channel", type=int, default=1)
        if name == "geodesic":
            p.add_argument("--frame", type=int, default=0, help="frame index whose latents are joined")
        if name in ("predict-train", "predict-eval"):
            p.add_argument("--k", type=int)
        if name == "predict-eval":
            p.add_argument("--predictor", help="trained predictor checkpoint")
    return parser


def _thread_limit():
    value = os.environ.get("MGP_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"MGP_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("MGP_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if getattr(args, "paths", 1) < 1:
            raise ConfigError("--paths must be >= 1")
        cfg = apply_overrides(load_run_config(args.config), args)
        with _thread_limit():
            COMMANDS[args.command](args, cfg)
    except MGPError as exc:
        print(f"code={exc.kind} msg={_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"code=FileNotFound msg={_one_line(exc)}", file=sys.stderr)
        return DataError.exit_code
    except (KeyError, json.JSONDecodeError) as exc:
        print(f"code=CorruptFile msg={_one_line(exc)}", file=sys.stderr)
        return DataError.exit_code
    return 0


def _one_line(exc):
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
