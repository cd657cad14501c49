"""Command-line entry point: synth, calibrate, train-sft, train-mrrhf, eval, run, experiment.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O error,
4 numerical failure during training.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError, FormatError, NumericalError, PlanError, ValidationError
from .evalharness import (
    CALIBRATION_NAME,
    MANIFEST_NAME,
    DatasetManifest,
    EvalReport,
    SpaceCache,
    calibration_from_pairs,
    check_mix,
    default_space,
    load_predefined_table,
    load_sample,
    load_samples,
    parse_strategy,
    read_report,
    run_strategy,
    synth_dataset,
    write_report,
)
from .experiments import EVEN_MIX, DeskPreset, mrrhf_samples, sft_examples, mode_ablation, ranking_experiment
from .features import extract_features
from .imaging import read_image, write_image
from .policy import ActionVocab, PolicyModel, greedy_decode
from .reward import Calibration, unified_score
from .tools import default_registry, execute_plan, load_registry
from .train import MODES, TrainConfig, final_reward, mean_diversity, train_mrrhf, train_sft, write_metrics

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_SEED = 42
MODE_FLAGS = {"hybrid": "hybrid", "offline": "offline_only", "online": "online_only", "no-entropy": "no_entropy"}
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


def default_config() -> dict:
    """The config document; every key here may be overridden with ``--set section.key=value``."""
    desk = DeskPreset()
    sft = {k: v for k, v in asdict(desk.sft_config(0)).items() if k != "seed"}
    mrrhf = {k: v for k, v in asdict(desk.mrrhf_config(0)).items() if k != "seed"}
    return {
        "synth": {"n": 64, "mix": dict(EVEN_MIX), "size": 24, "max_len": 3},
        "sft": sft,
        "mrrhf": mrrhf,
        "eval": {"known_tasks": False},
        "registry": None,
    }


@dataclass
class CliConfig:
    subcommand: str
    config_path: Optional[str] = None
    seed: int = DEFAULT_SEED
    output_dir: Optional[str] = None
    overrides: list = field(default_factory=list)
    doc: dict = field(default_factory=default_config)


def _merge(base: dict, update: dict, where: str = "") -> None:
    for k, v in update.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict) and k != "mix":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where + k!r} must be an object")
            _merge(base[k], v, f"{where}{k}.")
        else:
            base[k] = v


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, item: str) -> None:
    key, sep, value = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not key=value")
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(value)


def build_config(args: argparse.Namespace) -> CliConfig:
    doc = default_config()
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {args.config} is not valid JSON: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config document must be a JSON object")
        _merge(doc, loaded)
    for item in args.set or []:
        apply_override(doc, item)
    return CliConfig(args.command, args.config, args.seed, getattr(args, "out", None), list(args.set or []),
                     copy.deepcopy(doc))


def parse_mix(text: str) -> dict:
    mix = {}
    for part in text.split(","):
        if not part.strip():
            continue
        k, sep, v = part.partition("=")
        if not sep:
            raise ConfigError(f"mix entry {part!r} is not name=weight")
        try:
            mix[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"mix: weight for {k.strip()!r} is not a number: {v!r}") from None
    return check_mix(mix)


def train_config(section: dict, seed: int, where: str) -> TrainConfig:
    unknown = set(section) - set(TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys in {where}: {sorted(unknown)}")
    try:
        return TrainConfig(**section, seed=seed)
    except (TypeError, ValidationError) as e:
        raise ConfigError(f"{where}: {e}") from None


def resolve_threads(value: Optional[int]) -> int:
    if value is None:
        env = os.environ.get("JARVIS_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"JARVIS_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError("--threads must be >= 1")
    return value


def _registry(cfg: CliConfig):
    path = cfg.doc.get("registry")
    return load_registry(path) if path else default_registry()


def _require(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _claim_output(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _load_data(data_dir: str, calibration: Optional[str] = None):
    root = _require(data_dir, "dataset directory")
    manifest_path = _require(str(root / MANIFEST_NAME), "manifest")
    manifest = DatasetManifest.read(manifest_path)
    cal = Calibration.load(_require(calibration or str(root / CALIBRATION_NAME), "calibration"))
    return manifest, cal


def _load_policy(path: Optional[str], what: str) -> PolicyModel:
    return PolicyModel.load(_require(path, f"{what} checkpoint"))


# -- subcommands --------------------------------------------------------------------


def cmd_synth(args, cfg: CliConfig) -> int:
    s = cfg.doc["synth"]
    n = args.n if args.n is not None else s["n"]
    mix = parse_mix(args.mix) if args.mix else check_mix(s["mix"])
    out = Path(args.out)
    _claim_output(out / MANIFEST_NAME, args.force)
    manifest, _ = synth_dataset(int(n), mix, cfg.seed, out, _registry(cfg), size=int(s["size"]),
                                max_len=int(s["max_len"]), threads=args.threads)
    print(f"wrote {len(manifest)} records to {out / MANIFEST_NAME}")
    return EXIT_OK


def cmd_calibrate(args, cfg: CliConfig) -> int:
    manifest = DatasetManifest.read(_require(str(Path(args.data) / MANIFEST_NAME), "manifest"))
    out = Path(args.out)
    _claim_output(out, args.force)
    samples = load_samples(manifest, args.threads)
    cal = calibration_from_pairs([x.degraded for x in samples], [x.hint for x in samples], _registry(cfg),
                                 int(cfg.doc["synth"]["max_len"]))
    cal.save(out)
    for sid, mu, sigma in zip(cal.scorer_ids, cal.mu, cal.sigma):
        print(f"{sid:24s} mu={mu:.6f} sigma={sigma:.6f}")
    print(f"wrote {out}")
    return EXIT_OK


def _train_overrides(args, section: dict) -> dict:
    section = dict(section)
    for flag, key in (("lr", "learning_rate"), ("epochs", "epochs"), ("batch", "sft_batch")):
        v = getattr(args, flag, None)
        if v is not None:
            section[key] = v
    return section


def cmd_train_sft(args, cfg: CliConfig) -> int:
    manifest, _ = _load_data(args.data)
    tcfg = train_config(_train_overrides(args, cfg.doc["sft"]), cfg.seed, "sft")
    out = Path(args.out)
    _claim_output(out / "sft.json", args.force)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_samples(manifest, args.threads)
    reg = _registry(cfg)
    init = PolicyModel(ActionVocab.from_registry(reg), max_len=int(cfg.doc["synth"]["max_len"]))
    history: list = []

    def checkpoint(epoch, model):
        model.save(out / f"sft_epoch{epoch:03d}.json")

    model = train_sft(sft_examples(samples), tcfg, init, history=history, on_epoch=checkpoint)
    model.save(out / "sft.json")
    with open(out / "sft_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "loss"))
        for i, loss in enumerate(history):
            w.writerow((i, repr(loss)))
    final = history[-1] if history else float("nan")
    print(f"trained SFT policy for {tcfg.epochs} epochs on {len(samples)} samples; final loss {final:.6f}")
    print(f"wrote {out / 'sft.json'}")
    return EXIT_OK


def cmd_train_mrrhf(args, cfg: CliConfig) -> int:
    pi = _load_policy(args.sft, "SFT")
    manifest, cal = _load_data(args.data, args.calibration)
    section = _train_overrides(args, cfg.doc["mrrhf"])
    tcfg = train_config(section, cfg.seed, "mrrhf")
    mode = MODE_FLAGS[args.mode]
    out = Path(args.out)
    _claim_output(out / "mrrhf.json", args.force)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_samples(manifest, args.threads)

    def checkpoint(epoch, model):
        model.save(out / f"mrrhf_epoch{epoch:03d}.json")

    rho, metrics = train_mrrhf(pi, mrrhf_samples(samples, _registry(cfg), cal), tcfg, mode, on_epoch=checkpoint)
    rho.save(out / "mrrhf.json")
    write_metrics(metrics, out / "mrrhf_metrics.csv")
    print(f"mode {args.mode}: {len(metrics)} iterations, final reward {final_reward(metrics, len(samples)):.6f}, "
          f"mean diversity {mean_diversity(metrics):.3f}")
    print(f"wrote {out / 'mrrhf.json'}")
    return EXIT_OK


def _summary_table(summary) -> str:
    lines = [f"{'strategy':32s} {'n':>6s} {'mean_score':>12s} {'mean_rank_%':>12s}"]
    for s in summary:
        lines.append(f"{s.strategy:32s} {s.n:6d} {s.mean_score:12.4f} {100 * s.mean_percentile:11.2f}%")
    return "\n".join(lines)


def cmd_eval(args, cfg: CliConfig) -> int:
    strategies = [parse_strategy(s) for s in args.strategies.split(",") if s.strip()]
    if not strategies:
        raise ConfigError("--strategies is empty")
    models = {}
    if args.sft:
        models["sft"] = _load_policy(args.sft, "SFT")
    if args.mrrhf:
        models["mrrhf"] = _load_policy(args.mrrhf, "MRRHF")
    manifest, cal = _load_data(args.data, args.calibration)
    predefined = load_predefined_table(args.predefined)
    out = Path(args.out)
    _claim_output(out, args.force)
    reg = _registry(cfg)
    space = default_space(reg, int(cfg.doc["synth"]["max_len"]))
    samples = load_samples(manifest, args.threads)
    cache = SpaceCache(space, reg, cal)
    report = EvalReport([])
    known = bool(args.known_tasks or cfg.doc["eval"]["known_tasks"])
    for st in strategies:
        report.extend(run_strategy(st, samples, models, reg, cal, cfg.seed, space=space, predefined=predefined,
                                   known_tasks=known, cache=cache, threads=args.threads))
    write_report(report, out)
    summary = report.summary()
    print(_summary_table(summary))
    _, parsed = read_report(out)
    ok = len(parsed) == len(summary) and all(
        a.strategy == b.strategy and a.n == b.n and abs(a.mean_score - b.mean_score) <= 1e-9
        and abs(a.mean_percentile - b.mean_percentile) <= 1e-9 for a, b in zip(parsed, summary))
    print(f"self-check: {'pass' if ok else 'FAIL'} (summary means match CSV rows)")
    print(f"wrote {out}")
    return EXIT_OK if ok else EXIT_IO


def cmd_run(args, cfg: CliConfig) -> int:
    model = _load_policy(args.checkpoint, "policy")
    reg = _registry(cfg)
    hint = None
    if args.sample:
        manifest, cal = _load_data(args.data, args.calibration)
        rec = next((r for r in manifest.records if r.sample_id == args.sample), None)
        if rec is None:
            raise ConfigError(f"sample {args.sample!r} not in manifest")
        loaded = load_sample(manifest, rec)
        img, hint, features = loaded.degraded, loaded.hint, loaded.features
    else:
        img = read_image(_require(args.input, "--input image"))
        cal = Calibration.load(_require(args.calibration, "--calibration"))
        features = extract_features(img)
    out = Path(args.out)
    _claim_output(out, args.force)
    plan = greedy_decode(model, features)
    restored, _ = execute_plan(img, plan, reg, hint)
    write_image(restored, out)
    before, after = unified_score(img, cal), unified_score(restored, cal)
    print(f"plan: {plan.to_text()}")
    print(f"{'scorer':24s} {'z_before':>10s} {'z_after':>10s}")
    for sid, zb, za in zip(cal.scorer_ids, before.z, after.z):
        print(f"{sid:24s} {zb:10.4f} {za:10.4f}")
    print(f"{'S':24s} {before.total:10.4f} {after.total:10.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_experiment(args, cfg: CliConfig) -> int:
    work = Path(args.work)
    if work.exists() and any(work.iterdir()) and not args.force:
        raise FileExistsError(f"{work} is not empty; pass --force to reuse it")
    if args.which == "ranking":
        res = ranking_experiment(work, n_train=args.n, n_test=args.n, seed=cfg.seed, threads=args.threads)
        print(_summary_table(res.report.summary()))
        print(f"ordering oracle <= mrrhf < sft < random: {'holds' if res.ordered() else 'violated'}")
    else:
        res = mode_ablation(work, seeds=range(args.seeds), n_train=args.n, threads=args.threads)
        print(res.format())
        wins = res.reward_order_wins()
        ent = res.entropy_diversity_wins()
        print(f"hybrid > offline > online on {wins}/{args.seeds} seeds; "
              f"entropy raises diversity on {ent}/{args.seeds} seeds")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config document")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed (default 42)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default $JARVIS_THREADS or 1)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--epochs", type=int, help="training epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="restoreplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic degraded dataset with oracle plans")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--mix", help="scenario weights, e.g. fog=0.5,night=0.5")

    p = sub.add_parser("calibrate", help="fit scorer calibration on a dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="calibration JSON to write")

    p = sub.add_parser("train-sft", help="supervised training on oracle plans")
    _common(p)
    _train_flags(p)
    p.add_argument("--batch", type=int, help="minibatch size")

    p = sub.add_parser("train-mrrhf", help="ranking-based alignment from an SFT checkpoint")
    _common(p)
    _train_flags(p)
    p.add_argument("--sft", required=True, help="SFT checkpoint")
    p.add_argument("--mode", choices=list(MODE_FLAGS), default="hybrid")
    p.add_argument("--calibration", help="calibration JSON (default: the dataset's)")

    p = sub.add_parser("eval", help="rank strategies' plans among all plans")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--strategies", default="oracle,random,policy-sft")
    p.add_argument("--sft")
    p.add_argument("--mrrhf")
    p.add_argument("--calibration")
    p.add_argument("--predefined", help="scenario -> plan JSON table")
    p.add_argument("--known-tasks", action="store_true", help="random baselines draw from the true task set")

    p = sub.add_parser("run", help="plan and restore a single image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="restored image (JIR, or PPM/PGM by suffix)")
    p.add_argument("--input", help="input image")
    p.add_argument("--calibration", help="calibration JSON")
    p.add_argument("--data", help="dataset directory (with --sample)")
    p.add_argument("--sample", help="sample id from the dataset; supplies the degradation hint")

    p = sub.add_parser("experiment", help="desk-scale ranking or mode-ablation experiment")
    _common(p)
    p.add_argument("which", choices=["ranking", "ablation"])
    p.add_argument("--work", required=True, help="work directory")
    p.add_argument("--n", type=int, default=None, help="samples per split")
    p.add_argument("--seeds", type=int, default=8, help="ablation seeds")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
    "train-sft": cmd_train_sft,
    "train-mrrhf": cmd_train_mrrhf,
    "eval": cmd_eval,
    "run": cmd_run,
    "experiment": cmd_experiment,
}


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.threads = resolve_threads(args.threads)
        cfg = build_config(args)
        if args.command == "experiment" and args.n is None:
            args.n = 256 if args.which == "ranking" else 48
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ValidationError, PlanError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError, json.JSONDecodeError, KeyError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
