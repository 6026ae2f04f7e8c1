"""Command-line experiment runner.

Manifests are INI files::

    [experiment]
    name = demo
    output_dir = runs/demo
    seeds = 0, 1, 2

    [data]
    source = synthetic          ; or csv
    separation_v = 0.8          ; any SyntheticSpec field
    ; path = data.csv           ; csv only, with val_fraction / test_fraction / split_seed

    [train]                     ; optional defaults shared by every config
    learning_rate = 0.01

    [config joint]
    strategy = joint

    [config ogm_ge]
    strategy = ogm_ge
    alpha = 0.3

Every run writes ``<config>_seed<k>.json`` (RunRecord), ``<config>_seed<k>_trace.csv``
and ``<config>_seed<k>.npz`` (weights), and appends a row to ``results.csv``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Splits, SyntheticSpec, generate_synthetic, load_csv, split_loaded, write_csv
from .evaluation import ProbeConfig, RunRecord, linear_probe, summarize_ratio_trace, write_trace_csv
from .model import ModelParams
from .numkit import ContractError, make_streams
from .trainer import TrainConfig, TrainingAborted, build_model, train

log = logging.getLogger("modbalance")

RESULTS_HEADER = ["config", "strategy", "seed", "alpha", "test_acc", "test_map", "test_loss", "val_acc",
                  "probe_a", "probe_v", "rho_a_mean", "rho_a_final"]
COMPARE_METRICS = ("test_acc", "probe_a", "probe_v")


class ManifestError(ValueError):
    pass


@dataclass
class DataSource:
    kind: str = "synthetic"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    path: Optional[str] = None
    n_classes: Optional[int] = None
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    split_seed: int = 0

    def load(self) -> Splits:
        if self.kind == "synthetic":
            return generate_synthetic(self.synthetic)
        batch = load_csv(self.path, self.n_classes)
        n_classes = self.n_classes or int(batch.labels.max()) + 1
        return split_loaded(batch, n_classes, self.val_fraction, self.test_fraction, self.split_seed)


@dataclass
class Manifest:
    name: str
    output_dir: Path
    seeds: list[int]
    data: DataSource
    configs: dict[str, TrainConfig]


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(default, text: str):
    text = text.strip()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(int(t) for t in text.replace(",", " ").split())
    if default is None:
        # only the optional GE toggle is None by default
        return None if text.lower() in ("", "none", "auto") else _parse_bool(text)
    return text


def _typed_fields(cls, raw: dict, where: str) -> dict:
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
    out = {}
    for key, text in raw.items():
        if key not in defaults:
            raise ManifestError(f"[{where}] unknown key {key!r}")
        try:
            out[key] = _convert(defaults[key], text)
        except ValueError as exc:
            raise ManifestError(f"[{where}] {key}: {exc}") from None
    return out


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise ManifestError(f"bad seeds list {text!r}") from None
    if not seeds:
        raise ManifestError("seeds list is empty")
    if len(set(seeds)) != len(seeds) or min(seeds) < 0:
        raise ManifestError("seeds must be unique and non-negative")
    return seeds


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ManifestError(f"override {pair!r} is not key=value")
        out[key.strip()] = value
    return out


def load_manifest(path, overrides: Optional[dict] = None, seeds: Optional[str] = None,
                  output_dir: Optional[str] = None) -> Manifest:
    """Parse and validate a manifest; ``overrides`` apply to every config."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        if not parser.read(path, encoding="utf-8"):
            raise ManifestError(f"cannot read manifest {path}")
    except configparser.Error as exc:
        raise ManifestError(str(exc)) from None
    if "experiment" not in parser:
        raise ManifestError("missing [experiment] section")
    exp = parser["experiment"]
    name = exp.get("name", Path(path).stem)
    out = Path(output_dir or exp.get("output_dir", f"runs/{name}"))
    seed_list = parse_seeds(seeds if seeds is not None else exp.get("seeds", ""))

    raw_data = dict(parser["data"]) if "data" in parser else {}
    kind = raw_data.pop("source", "synthetic").strip()
    if kind == "synthetic":
        data = DataSource(synthetic=SyntheticSpec(**_typed_fields(SyntheticSpec, raw_data, "data")))
    elif kind == "csv":
        if "path" not in raw_data:
            raise ManifestError("[data] csv source needs a path")
        try:
            data = DataSource(
                kind="csv", path=str(Path(path).parent / raw_data.pop("path").strip()),
                n_classes=int(raw_data.pop("n_classes")) if "n_classes" in raw_data else None,
                val_fraction=float(raw_data.pop("val_fraction", 0.1)),
                test_fraction=float(raw_data.pop("test_fraction", 0.2)),
                split_seed=int(raw_data.pop("split_seed", 0)))
        except ValueError as exc:
            raise ManifestError(f"[data] {exc}") from None
        if raw_data:
            raise ManifestError(f"[data] unknown keys {sorted(raw_data)}")
    else:
        raise ManifestError(f"[data] unknown source {kind!r}")

    base = dict(parser["train"]) if "train" in parser else {}
    configs: dict[str, TrainConfig] = {}
    for section in parser.sections():
        if section in ("experiment", "data", "train"):
            continue
        if not section.startswith("config "):
            raise ManifestError(f"unknown section [{section}]")
        cname = section[len("config "):].strip()
        if not cname or not cname.replace("_", "").replace("-", "").isalnum():
            raise ManifestError(f"bad config section name [{section}]")
        if cname in configs:
            raise ManifestError(f"duplicate config {cname!r}")
        raw = {**base, **dict(parser[section]), **(overrides or {})}
        if "seed" in raw:
            raise ManifestError(f"[{section}] seeds come from [experiment]")
        cfg = TrainConfig(**_typed_fields(TrainConfig, raw, section))
        try:
            cfg.validate()
        except ContractError as exc:
            raise ManifestError(f"[{section}] {exc}") from None
        configs[cname] = cfg
    if not configs:
        raise ManifestError("manifest defines no [config NAME] sections")
    try:
        if data.kind == "synthetic":
            data.synthetic.validate()
    except ContractError as exc:
        raise ManifestError(f"[data] {exc}") from None
    return Manifest(name, out, seed_list, data, configs)


def save_params(path, params: ModelParams) -> None:
    np.savez(path, **params.tensors())


def load_params(path, cfg: TrainConfig, d_a: int, d_v: int, n_classes: int) -> ModelParams:
    params = build_model(cfg, d_a, d_v, n_classes, make_streams(cfg.seed)["init"])
    with np.load(path) as stored:
        for name, arr in params.tensors().items():
            if stored[name].shape != arr.shape:
                raise ContractError(f"{path}: tensor {name} has shape {stored[name].shape}, expected {arr.shape}")
            arr[...] = stored[name]
    return params


def result_row(cname: str, record: RunRecord) -> list:
    f = record.final
    mean, _, final = summarize_ratio_trace(record.trace["rho_a"]) if record.trace["rho_a"] else ("", "", "")
    return [cname, record.config["strategy"], record.seed, record.config["alpha"],
            f["test_acc"], f["test_map"], f["test_loss"], f["val_acc"],
            f.get("probe_a", ""), f.get("probe_v", ""), mean, final]


class Runner:
    """Executes (config, seed) runs for one manifest and owns ``results.csv``."""

    def __init__(self, manifest: Manifest, figures: bool = False):
        self.m = manifest
        self.figures = figures
        self.out = manifest.output_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.splits = manifest.data.load()
        self.results = self.out / "results.csv"
        with open(self.results, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(RESULTS_HEADER)

    def run_one(self, cname: str, cfg: TrainConfig, seed: int) -> RunRecord:
        stem = self.out / f"{cname}_seed{seed}"
        marker = stem.with_suffix(".FAILED")
        marker.unlink(missing_ok=True)
        try:
            record, params = train(self.splits, replace(cfg, seed=seed))
        except TrainingAborted as exc:
            marker.write_text(f"{cname} seed {seed}: {exc}\n", encoding="utf-8")
            raise
        record.save(stem.with_suffix(".json"))
        write_trace_csv(f"{stem}_trace.csv", record)
        save_params(stem.with_suffix(".npz"), params)
        with open(self.results, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(result_row(cname, record))
        if self.figures and record.trace["rho_a"]:
            from .plots import plot_ratio_trace
            plot_ratio_trace(record, f"{stem}_rho.png", title=f"{cname} seed {seed}")
        log.info("%s seed %d: test_acc %.4f", cname, seed, record.final["test_acc"])
        return record

    def run_all(self, configs: Optional[dict] = None) -> dict[str, list[RunRecord]]:
        configs = self.m.configs if configs is None else configs
        return {cname: [self.run_one(cname, cfg, s) for s in self.m.seeds] for cname, cfg in configs.items()}


def comparison_rows(records: dict[str, list[RunRecord]]) -> list[list]:
    """Per config: strategy, seed count, then mean and population std of each metric."""
    rows = []
    for cname, recs in records.items():
        row = [cname, recs[0].config["strategy"], len(recs)]
        for key in COMPARE_METRICS:
            vals = np.array([r.final.get(key, np.nan) for r in recs], dtype=np.float64)
            row += [float(vals.mean()), float(vals.std())]
        rows.append(row)
    return rows


def comparison_header() -> list[str]:
    head = ["config", "strategy", "n_seeds"]
    for key in COMPARE_METRICS:
        head += [f"{key}_mean", f"{key}_std"]
    return head


def write_table(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def echo_table(header: list, rows: list) -> None:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def select_alpha(table: list[tuple[float, float]]) -> float:
    """argmax of validation accuracy over ``(alpha, val_acc)`` pairs; ties go to the smaller alpha."""
    if not table:
        raise ContractError("empty alpha table")
    best = max(v for _, v in table)
    return min(a for a, v in table if v == best)


def sweep_alpha(runner: Runner, cname: str, alphas) -> tuple[float, list[list]]:
    alphas = sorted(set(float(a) for a in alphas))
    if not alphas or min(alphas) < 0:
        raise ManifestError("alphas must be a nonempty list of values >= 0")
    base = runner.m.configs[cname]
    rows = []
    for a in alphas:
        recs = [runner.run_one(f"{cname}_alpha{a:g}", replace(base, alpha=a), s) for s in runner.m.seeds]
        rows.append([a, float(np.mean([r.final["val_acc"] for r in recs])),
                     float(np.mean([r.final["test_acc"] for r in recs]))])
    chosen = select_alpha([(r[0], r[1]) for r in rows])
    for r in rows:
        r.append(int(r[0] == chosen))
    return chosen, rows


ALPHA_HEADER = ["alpha", "val_acc_mean", "test_acc_mean", "chosen"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modbalance", description="Modulated multimodal training experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def manifest_cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("manifest")
        sp.add_argument("--seeds", help="comma-separated seeds, replaces [experiment] seeds")
        sp.add_argument("--output-dir")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                        help="override a training field in every config")
        sp.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")
        return sp

    manifest_cmd("run", "train every config for every seed")
    manifest_cmd("compare", "train every config and tabulate mean and std per config")
    sa = manifest_cmd("sweep-alpha", "pick alpha by mean validation accuracy")
    sa.add_argument("--alphas", default="0.1,0.3,0.5,0.8,1.0")
    sa.add_argument("--config", help="config to sweep (default: the only one, or the first ogm_ge)")

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("out")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", default=[], help="SyntheticSpec field")

    pr = sub.add_parser("probe", help="linear-probe the encoders of a saved run")
    pr.add_argument("manifest")
    pr.add_argument("record", help="RunRecord JSON; weights are read from the sibling .npz")
    pr.add_argument("--modality", choices=("a", "v", "both"), default="both")
    pr.add_argument("--raw", action="store_true", help="probe the raw inputs instead of the encoder")
    return p


def _pick_sweep_config(m: Manifest, name: Optional[str]) -> str:
    if name:
        if name not in m.configs:
            raise ManifestError(f"no config named {name!r}")
        return name
    if len(m.configs) == 1:
        return next(iter(m.configs))
    for cname, cfg in m.configs.items():
        if cfg.strategy == "ogm_ge":
            return cname
    raise ManifestError("several configs and none is ogm_ge; pass --config")


def _cmd_manifest(args) -> int:
    m = load_manifest(args.manifest, parse_overrides(args.set), args.seeds, args.output_dir)
    runner = Runner(m, figures=args.figures)
    if args.verb == "run":
        runner.run_all()
        return 0
    if args.verb == "compare":
        if len(m.configs) < 2:
            raise ManifestError("compare needs at least 2 configs")
        records = runner.run_all()
        rows = comparison_rows(records)
        write_table(m.output_dir / "comparison.csv", comparison_header(), rows)
        echo_table(comparison_header(), rows)
        if args.figures:
            from .plots import plot_comparison
            plot_comparison(comparison_header(), rows, m.output_dir / "comparison.png")
        return 0
    cname = _pick_sweep_config(m, args.config)
    try:
        alphas = [float(a) for a in args.alphas.replace(",", " ").split()]
    except ValueError:
        raise ManifestError(f"bad alpha list {args.alphas!r}") from None
    chosen, rows = sweep_alpha(runner, cname, alphas)
    write_table(m.output_dir / "alpha_sweep.csv", ALPHA_HEADER, rows)
    echo_table(ALPHA_HEADER, rows)
    test_acc = next(r[2] for r in rows if r[0] == chosen)
    print(f"chosen alpha {chosen:g} test_acc {test_acc:.4f}")
    return 0


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(**_typed_fields(SyntheticSpec, parse_overrides(args.set), "gen-data"))
    try:
        splits = generate_synthetic(spec)
    except ContractError as exc:
        raise ManifestError(str(exc)) from None
    from .data import MultimodalBatch
    parts = (splits.train, splits.val, splits.test)
    full = MultimodalBatch(np.vstack([b.x_a for b in parts]), np.vstack([b.x_v for b in parts]),
                           np.concatenate([b.labels for b in parts]))
    write_csv(args.out, full)
    print(f"wrote {len(full)} rows to {args.out}")
    return 0


def _cmd_probe(args) -> int:
    m = load_manifest(args.manifest)
    record = RunRecord.load(args.record)
    cfg = TrainConfig.from_dict(record.config)
    splits = m.data.load()
    params = None
    if not args.raw:
        params = load_params(Path(args.record).with_suffix(".npz"), cfg, splits.train.d_a, splits.train.d_v,
                             splits.n_classes)
    rng = make_streams(cfg.seed)["probe"]
    print("modality,probe_acc")
    for u in (("a", "v") if args.modality == "both" else (args.modality,)):
        enc = None if params is None else params.encoder(u)
        print(f"{u},{linear_probe(enc, splits, u, rng, ProbeConfig())!r}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.verb == "gen-data":
            return _cmd_gen_data(args)
        if args.verb == "probe":
            return _cmd_probe(args)
        return _cmd_manifest(args)
    except ManifestError as exc:
        print(f"invalid manifest: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
