"""Command-line driver: ``speakerinv <command> [options]``.

Configuration is an INI file with the sections below. Values resolve in the
order defaults < ``--config`` file < ``SPEAKERINV_<SECTION>_<KEY>`` environment
variables < command-line flags. Every command writes the fully resolved
configuration to ``<run dir>/run.lock``; passing that file back through
``--config`` reproduces the run bit for bit.

Run layout::

    runs/<name>/
        corpus/                    generated corpus (unless [corpus] path is set)
        checkpoint.smi
        history.csv
        inverted/<attack>_<init>/<speaker>.{wav,npy,json}
        dvectors/<init>/<speaker>.{npy,json}
        reports/
        run.lock

Exit codes: 0 success, 1 runtime or numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, diffnet, evaluation, init_zoo, inversion, trainer
from .corpus import CorpusConfigError, CorpusError, derive_seed, generate_corpus, load_manifest
from .diffnet import Architecture, CheckpointError
from .evaluation import Baselines, DVectorBank, EvalError, EvalRow
from .init_zoo import InitConfigError
from .inversion import MIConfig, MIConfigError, NumericalFailure, SlidingConfig
from .trainer import TrainConfig, TrainConfigError
from .wav import WavFormatError

log = logging.getLogger("speakerinv")

ENV_PREFIX = "SPEAKERINV_"

DEFAULTS = {
    "run": {
        "name": "default",
        "out_dir": "runs",
        "workers": "0",
    },
    "corpus": {
        "path": "",
        "seed": "7",
        "n_speakers": "20",
        "utterances": "20",
        "seconds": "3.0",
        "sample_rate": "16000",
        "chunk_len": "3200",
        "test_fraction": "0.25",
    },
    "model": {
        "n_filters": "32",
        "sinc_len": "129",
        "pool1": "4",
        "conv_channels": "32",
        "conv_len": "5",
        "pool2": "4",
        "hidden": "256",
        "dvector_dim": "128",
        "leak": "0.2",
    },
    "train": {
        "epochs": "30",
        "batch_size": "32",
        "learning_rate": "0.01",
        "momentum": "0.9",
        "seed": "0",
        "batches_per_epoch": "30",
        "clip_norm": "5.0",
        "eval_chunks": "400",
        "final_lr_fraction": "0.1",
    },
    "attack": {
        "kinds": "standard,sliding",
        "inits": "laplace,gumbel,white,zeros,ones",
        "seed": "1",
        "alpha": "300",
        "beta": "10",
        "gamma": "0.001",
        "lr": "5.0",
        "lr_overrides": "",
        "stride": "500",
        "window": "3200",
        "output_length": "3200",
        "lr_grid": "0.5,5,50",
        "external": "",
    },
    "eval": {
        "split": "train",
        "pca_k": "2",
        "probe_epochs": "500",
        "probe_lr": "0.1",
    },
}

AUDIO_ATTACKS = ("standard", "sliding")
# init whose d-vector inversions feed the PCA scatter when available
SCATTER_INIT = "zeros"


class ConfigError(ValueError):
    pass


CONFIG_ERRORS = (
    ConfigError, CorpusConfigError, TrainConfigError, InitConfigError, MIConfigError, EvalError,
    configparser.Error,
)
RUNTIME_ERRORS = (
    NumericalFailure, FloatingPointError, CorpusError, CheckpointError, WavFormatError, OSError,
    diffnet.InvalidInput,
)


# -- configuration ----------------------------------------------------------------------

def _parser_with_defaults() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    return cp


def load_config(path=None, env=None, overrides=None) -> configparser.ConfigParser:
    cp = _parser_with_defaults()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        extra = configparser.ConfigParser(interpolation=None)
        extra.read(p, encoding="utf-8")
        for section in extra.sections():
            if section == "seeds":
                continue
            if section not in DEFAULTS:
                raise ConfigError(f"{p}: unknown section [{section}]")
            for key, value in extra[section].items():
                _set(cp, section, key, value, origin=str(p))
    env = os.environ if env is None else env
    for var, value in sorted(env.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section in DEFAULTS and key in DEFAULTS[section]:
            _set(cp, section, key, value, origin=var)
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            _set(cp, section, key, str(value), origin="command line")
    return cp


def _set(cp, section, key, value, origin):
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise ConfigError(f"{origin}: unknown setting {section}.{key}")
    cp[section][key] = str(value).strip()


def _get(cp, section, key, kind=str):
    raw = cp[section][key]
    try:
        if kind is bool:
            return cp.getboolean(section, key)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def _list(cp, section, key, kind=str):
    raw = cp[section][key]
    out = [v.strip() for v in raw.split(",") if v.strip()]
    try:
        return [kind(v) for v in out]
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from exc


def dump_config(cp, seeds: dict | None = None) -> str:
    buf = io.StringIO()
    out = configparser.ConfigParser(interpolation=None)
    for section in DEFAULTS:
        out[section] = {k: cp[section][k] for k in DEFAULTS[section]}
    if seeds:
        out["seeds"] = {k: str(v) for k, v in seeds.items()}
    out.write(buf)
    return buf.getvalue()


class Run:
    """Resolved configuration plus the paths of one run directory."""

    def __init__(self, cp: configparser.ConfigParser):
        self.cp = cp
        self.name = _get(cp, "run", "name")
        if not self.name or "/" in self.name or self.name in (".", ".."):
            raise ConfigError(f"run.name must be a plain directory name, got {self.name!r}")
        self.dir = Path(_get(cp, "run", "out_dir")) / self.name
        workers = _get(cp, "run", "workers", int)
        if workers < 0:
            raise ConfigError("run.workers must be >= 0")
        self.workers = workers or (os.cpu_count() or 1)

    # paths
    @property
    def corpus_dir(self) -> Path:
        p = _get(self.cp, "corpus", "path")
        return Path(p) if p else self.dir / "corpus"

    @property
    def checkpoint(self) -> Path:
        return self.dir / "checkpoint.smi"

    @property
    def reports(self) -> Path:
        return self.dir / "reports"

    # typed sections
    def train_config(self) -> TrainConfig:
        cp = self.cp
        return TrainConfig(
            epochs=_get(cp, "train", "epochs", int),
            batch_size=_get(cp, "train", "batch_size", int),
            learning_rate=_get(cp, "train", "learning_rate", float),
            momentum=_get(cp, "train", "momentum", float),
            seed=_get(cp, "train", "seed", int),
            batches_per_epoch=_get(cp, "train", "batches_per_epoch", int),
            clip_norm=_get(cp, "train", "clip_norm", float),
            eval_chunks=_get(cp, "train", "eval_chunks", int),
            final_lr_fraction=_get(cp, "train", "final_lr_fraction", float),
        )

    def architecture(self, num_classes: int) -> Architecture:
        cp = self.cp
        kw = {k: _get(cp, "model", k, float if k == "leak" else int) for k in DEFAULTS["model"]}
        try:
            return Architecture(
                input_window_len=_get(cp, "corpus", "chunk_len", int),
                sample_rate=_get(cp, "corpus", "sample_rate", int),
                num_classes=num_classes,
                **kw,
            )
        except ValueError as exc:
            raise ConfigError(f"[model]: {exc}") from exc

    def mi_config(self, lr=None) -> MIConfig:
        cp = self.cp
        return MIConfig(
            alpha=_get(cp, "attack", "alpha", int),
            beta=_get(cp, "attack", "beta", int),
            gamma=_get(cp, "attack", "gamma", float),
            lr=_get(cp, "attack", "lr", float) if lr is None else lr,
        )

    def lr_for(self, init_name: str) -> float:
        table = {}
        for item in _list(self.cp, "attack", "lr_overrides"):
            name, sep, value = item.partition(":")
            if not sep:
                raise ConfigError(f"attack.lr_overrides: expected init:lr, got {item!r}")
            try:
                table[name.strip()] = float(value)
            except ValueError as exc:
                raise ConfigError(f"attack.lr_overrides: bad learning rate in {item!r}") from exc
        return table.get(init_name, _get(self.cp, "attack", "lr", float))

    def attack_config(self, attack: str, lr: float, window: int):
        inner = self.mi_config(lr)
        if attack != "sliding":
            return inner
        w = _get(self.cp, "attack", "window", int)
        if w != window:
            raise ConfigError(f"attack.window {w} must equal the model input length {window}")
        return SlidingConfig.for_output(
            _get(self.cp, "attack", "output_length", int),
            stride=_get(self.cp, "attack", "stride", int),
            window=w,
            inner=inner,
        )

    def kinds(self) -> list:
        kinds = _list(self.cp, "attack", "kinds")
        for k in kinds:
            if k not in inversion.ATTACKS:
                raise ConfigError(f"attack.kinds: unknown attack {k!r}; valid: {', '.join(inversion.ATTACKS)}")
        if not kinds:
            raise ConfigError("attack.kinds is empty")
        return kinds

    def output_dir(self, attack: str, init_name: str) -> Path:
        if attack == "dvector":
            return self.dir / "dvectors" / init_name
        return self.dir / "inverted" / f"{attack}_{init_name}"

    def inits(self) -> list:
        seed = _get(self.cp, "attack", "seed", int)
        source = _get(self.cp, "attack", "external") or None
        specs = [init_zoo.parse_init(n, seed, source) for n in _list(self.cp, "attack", "inits")]
        if not specs:
            raise ConfigError("attack.inits is empty")
        return specs

    def seeds(self) -> dict:
        cp = self.cp
        tseed = _get(cp, "train", "seed", int)
        return {
            "corpus": _get(cp, "corpus", "seed", int),
            "train": tseed,
            "train_init": derive_seed(tseed, 1),
            "train_sampler": derive_seed(tseed, 2),
            "attack": _get(cp, "attack", "seed", int),
        }

    def write_lock(self) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / "run.lock"
        path.write_text(dump_config(self.cp, self.seeds()), encoding="utf-8")
        return path

    # loaded artefacts
    def manifest(self):
        if not (self.corpus_dir / "manifest.json").exists() and not self.corpus_dir.is_dir():
            raise CorpusError(f"no corpus at {self.corpus_dir}; run gen-corpus first")
        return load_manifest(self.corpus_dir)

    def model(self):
        if not self.checkpoint.exists():
            raise CheckpointError(f"no checkpoint at {self.checkpoint}; run train first")
        return diffnet.load_checkpoint(self.checkpoint)


# -- commands ----------------------------------------------------------------------------------

def cmd_gen_corpus(run: Run, args) -> int:
    cp = run.cp
    if _get(cp, "corpus", "path"):
        raise ConfigError("gen-corpus writes into the run directory; unset corpus.path to generate")
    m = generate_corpus(
        run.corpus_dir,
        seed=_get(cp, "corpus", "seed", int),
        n_speakers=_get(cp, "corpus", "n_speakers", int),
        utterances_per_speaker=_get(cp, "corpus", "utterances", int),
        utterance_seconds=_get(cp, "corpus", "seconds", float),
        sample_rate=_get(cp, "corpus", "sample_rate", int),
        chunk_len=_get(cp, "corpus", "chunk_len", int),
        test_fraction=_get(cp, "corpus", "test_fraction", float),
    )
    run.write_lock()
    print(f"corpus: {m.n_speakers} speakers -> {run.corpus_dir}")
    return 0


def cmd_train(run: Run, args) -> int:
    cfg = run.train_config()
    manifest = run.manifest()
    arch = run.architecture(manifest.n_speakers)
    result = trainer.train(arch, manifest, cfg)
    diffnet.save_checkpoint(run.checkpoint, result.model, extra={"speakers": manifest.speaker_ids})
    trainer.write_history(run.dir / "history.csv", result.history)
    run.write_lock()
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs: loss {last.loss:.4f} train {last.train_acc:.3f} test {last.test_acc:.3f}")
    return 0


def _speaker_ids(model, manifest):
    if model.num_classes != manifest.n_speakers:
        raise ConfigError(f"checkpoint has {model.num_classes} classes, corpus {manifest.n_speakers} speakers")
    return manifest.speaker_ids


def _attack_meta(run, attack, spec, cfg, target, speaker, result, model):
    inner = cfg.inner if isinstance(cfg, SlidingConfig) else cfg
    meta = {
        "attack": attack,
        "init": spec.describe(),
        "target_class": target,
        "speaker": speaker,
        "seed": inversion.class_seed(spec.seed, target),
        "lr": inner.lr,
        "alpha": inner.alpha,
        "beta": inner.beta,
        "gamma": inner.gamma,
        "best_cost": result.best_cost,
        "iterations": result.iterations_run,
        "stop_reason": result.stop_reason.value,
        "predicted_class": inversion.predicted_class(model, result.best_input),
    }
    if isinstance(cfg, SlidingConfig):
        meta.update(stride=cfg.stride, window=cfg.window, working_length=cfg.length, output_length=cfg.output_length)
    return meta


def _run_attack(run, model, manifest, attack, spec, lr):
    speakers = _speaker_ids(model, manifest)
    cfg = run.attack_config(attack, lr, model.input_window_len) if attack != "dvector" else run.mi_config(lr)
    results = inversion.invert_all_speakers(model, attack, spec, cfg, workers=run.workers)
    metas = {t: _attack_meta(run, attack, spec, cfg, t, speakers[t], r, model) for t, r in results.items()}
    return results, metas


def _invert(run: Run, kinds) -> int:
    specs = run.inits()
    for spec in specs:
        run.lr_for(spec.name)
    model, manifest = run.model(), run.manifest()
    speakers = _speaker_ids(model, manifest)
    if "dvector" in kinds and any(isinstance(s.kind, init_zoo.External) for s in specs):
        raise ConfigError("external inits are audio and cannot start a d-vector inversion")
    failures = 0
    for attack in kinds:
        for spec in specs:
            results, metas = _run_attack(run, model, manifest, attack, spec, run.lr_for(spec.name))
            out = run.output_dir(attack, spec.name)
            for t in sorted(results):
                if attack == "dvector":
                    inversion.export_dvector(out, speakers[t], results[t].best_input, metas[t])
                else:
                    inversion.export_audio(out, speakers[t], results[t].best_input, manifest.sample_rate, metas[t])
                failures += results[t].stop_reason is inversion.StopReason.FAILED
            frac, count = evaluation.mi_accuracy(model, results)
            print(f"{attack:8s} {spec.name:12s} mi_accuracy {frac:.3f} ({count}/{len(results)})")
    run.write_lock()
    return 1 if failures else 0


def cmd_invert(run: Run, args) -> int:
    kinds = [k for k in run.kinds() if k in AUDIO_ATTACKS]
    if not kinds:
        raise ConfigError("attack.kinds names no audio attack; use invert-dvector for d-vectors")
    return _invert(run, kinds)


def cmd_invert_dvector(run: Run, args) -> int:
    return _invert(run, ["dvector"])


def _load_samples(directory: Path, speakers) -> dict:
    out = {}
    for t, sp in enumerate(speakers):
        p = directory / f"{sp}.npy"
        if not p.exists():
            raise CorpusError(f"missing inverted sample {p}")
        out[t] = np.load(p)
    return out


def _baselines(model, manifest, bank, split):
    tr, te = evaluation.averaged_sample_baseline(model, manifest)
    within = evaluation.within_speaker_baseline(model, manifest, split, bank)
    return Baselines(tr, te, within)


def cmd_evaluate(run: Run, args) -> int:
    model, manifest = run.model(), run.manifest()
    speakers = _speaker_ids(model, manifest)
    split = _get(run.cp, "eval", "split")
    k = _get(run.cp, "eval", "pca_k", int)
    bank = DVectorBank(model, manifest)
    probe_x, probe_lab = bank.split("test")
    genders = evaluation.gender_codes(manifest.genders())
    probe = evaluation.fit_probe(probe_x, genders[probe_lab], _get(run.cp, "eval", "probe_epochs", int),
                                 _get(run.cp, "eval", "probe_lr", float))

    rows, probe_acc, loaded = [], [], {}
    for attack in run.kinds():
        for spec in run.inits():
            samples = _load_samples(run.output_dir(attack, spec.name), speakers)
            loaded[attack, spec.name] = samples
            rows.append(evaluation.evaluate_inversions(model, manifest, samples, attack, spec.name,
                                                       run.lr_for(spec.name), split, bank))
            inv = np.stack([evaluation.as_dvector(model, samples[t]) for t in range(len(speakers))])
            probe_acc.append(float(np.mean(probe.predict(inv) == genders)))
    dvec = [k for k in loaded if k[0] == "dvector"]
    pick = ("dvector", SCATTER_INIT) if ("dvector", SCATTER_INIT) in loaded else (dvec or list(loaded))[0]
    scatter_source = loaded[pick]
    baselines = _baselines(model, manifest, bank, split)
    pca, scatter = evaluation.pca_scatter(model, manifest, scatter_source, bank, k=max(k, 1))
    paths = evaluation.render_report(
        rows, baselines, run.reports, configs=_config_dict(run.cp), scatter=scatter,
        notes={"gender_probe_accuracy": dict(zip([f"{r.attack}_{r.init}" for r in rows], probe_acc)),
               "pca_explained_variance": pca.explained_variance,
               "pca_scatter_inversions": f"{pick[0]}_{pick[1]}"},
    )
    evaluation.write_rows_csv(paths["csv"], rows, baselines, extra_columns={"gender_probe_acc": probe_acc})
    run.write_lock()
    _print_table(rows)
    return 0


def cmd_report(run: Run, args) -> int:
    path = run.reports / "results.csv"
    if not path.exists():
        raise CorpusError(f"no results at {path}; run evaluate first")
    rows, footer = evaluation.read_rows_csv(path)
    text = _format_table(rows, footer)
    (run.reports / "table.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _row_key(r: EvalRow):
    mean = r.mean_euclidean if not math.isnan(r.mean_euclidean) else math.inf
    return (-r.mi_accuracy, mean)


def sweep_best(rows) -> list:
    """1 for the best learning rate of each (attack, init); ties keep the earliest grid entry."""
    best = {}
    for i, r in enumerate(rows):
        key = (r.attack, r.init)
        if key not in best or _row_key(r) < _row_key(rows[best[key]]):
            best[key] = i
    chosen = set(best.values())
    return [int(i in chosen) for i in range(len(rows))]


def cmd_sweep(run: Run, args) -> int:
    model, manifest = run.model(), run.manifest()
    grid = _list(run.cp, "attack", "lr_grid", float)
    if not grid or any(not v > 0 for v in grid):
        raise ConfigError("attack.lr_grid must list positive learning rates")
    split = _get(run.cp, "eval", "split")
    bank = DVectorBank(model, manifest)
    rows = []
    for attack in run.kinds():
        for spec in run.inits():
            for lr in grid:
                results, _ = _run_attack(run, model, manifest, attack, spec, lr)
                rows.append(evaluation.evaluate_inversions(model, manifest, results, attack, spec.name, lr, split, bank))
                log.info("sweep %s %s lr=%g acc=%.3f", attack, spec.name, lr, rows[-1].mi_accuracy)
    best = sweep_best(rows)
    evaluation.write_rows_csv(run.reports / "sweep.csv", rows, _baselines(model, manifest, bank, split),
                              extra_columns={"best": best})
    run.write_lock()
    _print_table([r for r, b in zip(rows, best) if b])
    return 0


def _config_dict(cp):
    return {s: dict(cp[s]) for s in DEFAULTS}


def _format_table(rows, footer=None) -> str:
    out = io.StringIO()
    w = csv.writer(out, delimiter="\t", lineterminator="\n")
    w.writerow(["init", "attack", "lr", "mi_acc", "correct", "mean_dist", "std_dist"])
    for r in rows:
        w.writerow([r.init, r.attack, f"{r.learning_rate:g}", f"{r.mi_accuracy:.3f}", r.n_correct_speakers,
                    f"{r.mean_euclidean:.4f}", f"{r.std_euclidean:.4f}"])
    for k, v in (footer or {}).items():
        out.write(f"# {k}={v:.6f}\n")
    return out.getvalue()


def _print_table(rows):
    print(_format_table(rows), end="")


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "invert": cmd_invert,
    "invert-dvector": cmd_invert_dvector,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "sweep": cmd_sweep,
}

# flag dest -> (section, key)
FLAG_MAP = {
    "run_name": ("run", "name"),
    "out_dir": ("run", "out_dir"),
    "workers": ("run", "workers"),
    "corpus": ("corpus", "path"),
    "seed": ("corpus", "seed"),
    "speakers": ("corpus", "n_speakers"),
    "utterances": ("corpus", "utterances"),
    "seconds": ("corpus", "seconds"),
    "epochs": ("train", "epochs"),
    "train_lr": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "train_seed": ("train", "seed"),
    "attack": ("attack", "kinds"),
    "init": ("attack", "inits"),
    "attack_seed": ("attack", "seed"),
    "lr": ("attack", "lr"),
    "alpha": ("attack", "alpha"),
    "beta": ("attack", "beta"),
    "gamma": ("attack", "gamma"),
    "stride": ("attack", "stride"),
    "window": ("attack", "window"),
    "output_length": ("attack", "output_length"),
    "grid": ("attack", "lr_grid"),
    "external": ("attack", "external"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run")
    g.add_argument("--config", help="INI config file (a run.lock works too)")
    g.add_argument("--run-name", help="run directory name under --out-dir")
    g.add_argument("--out-dir", help="parent directory of runs")
    g.add_argument("--workers", type=int, help="worker threads for per-speaker attacks (0 = all cores)")
    g.add_argument("--corpus", help="use an existing corpus tree instead of <run>/corpus")
    g.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any setting")
    g.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="speakerinv", description="Model-inversion attacks on a speaker model.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-corpus", parents=[common], help="synthesize the speaker corpus")
    s.add_argument("--seed", type=int)
    s.add_argument("--speakers", type=int)
    s.add_argument("--utterances", type=int)
    s.add_argument("--seconds", type=float)

    s = sub.add_parser("train", parents=[common], help="train the target model")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", dest="train_lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--seed", dest="train_seed", type=int)

    attack_args = argparse.ArgumentParser(add_help=False)
    a = attack_args.add_argument_group("attack")
    a.add_argument("--init", help="comma-separated init names")
    a.add_argument("--attack-seed", type=int)
    a.add_argument("--lr", type=float, help="learning rate for every init")
    a.add_argument("--alpha", type=int, help="max iterations")
    a.add_argument("--beta", type=int, help="patience")
    a.add_argument("--gamma", type=float, help="cost threshold")
    a.add_argument("--external", help="corpus tree for external inits")

    sliding_args = argparse.ArgumentParser(add_help=False)
    b = sliding_args.add_argument_group("sliding")
    b.add_argument("--attack", help="comma-separated attacks: standard, sliding, dvector")
    b.add_argument("--stride", type=int)
    b.add_argument("--window", type=int)
    b.add_argument("--output-length", type=int)

    sub.add_parser("invert", parents=[common, attack_args, sliding_args], help="invert every speaker")
    sub.add_parser("invert-dvector", parents=[common, attack_args], help="invert d-vectors through the head")
    sub.add_parser("evaluate", parents=[common, sliding_args, attack_args], help="metrics, baselines, PCA, probe")
    sub.add_parser("report", parents=[common], help="print the results table")
    s = sub.add_parser("sweep", parents=[common, attack_args, sliding_args], help="learning-rate sweep")
    s.add_argument("--grid", help="comma-separated learning rates")
    return p


def _overrides(args) -> dict:
    out = {}
    for dest, target in FLAG_MAP.items():
        if getattr(args, dest, None) is not None:
            out[target] = getattr(args, dest)
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[(section, name)] = value
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = load_config(args.config, overrides=_overrides(args))
        if args.print_config:
            sys.stdout.write(dump_config(cp))
            return 0
        run = Run(cp)
        return COMMANDS[args.command](run, args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
