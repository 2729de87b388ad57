"""Command-line interface.

Subcommands: ``prepare``, ``train``, ``generate``, ``gkt``, ``federate``,
``eval`` and ``replay``. Every command writes its artifacts plus a
``manifest.json`` into ``--out``; ``replay`` re-runs a manifest into a fresh
directory and compares artifact digests.

Settings are resolved in this order, later wins: built-in defaults, the INI
file given with ``--config`` (section ``[train]`` for optimizer settings,
section ``[<command>]`` for the rest), command-line flags.

Exit codes: 0 success, 1 replay mismatch, 2 configuration error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import clm, corpus, gkt, synth, trainer
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .clm import ModelParams, ModelSpec
from .federation import protocol, wire
from .federation.network import SimulatedNetwork
from .manifest import RunManifest, hash_inputs, hash_outputs

log = logging.getLogger("genkt")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

PRESETS = {"small": "64x2", "medium": "128x2", "256x2": "256x2", "512x2": "512x2"}


class ConfigError(ValueError):
    pass


def default_words_path() -> Path:
    return Path(str(resources.files("genkt") / "data" / "private_words.txt"))


# --------------------------------------------------------------------------- options


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable
    default: Any
    help: str = ""
    section: str | None = None  # None: the command's own section


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _path(v):
    return None if v in (None, "") else str(Path(v).resolve())


TRAIN_OPTS = [
    Opt("bptt_window", int, 64, "truncated-BPTT window length", "train"),
    Opt("batch_streams", int, 32, "parallel training streams", "train"),
    Opt("lr", float, 1.0, "learning rate applied to the Adadelta step", "train"),
    Opt("momentum", float, 0.9, "Nesterov momentum", "train"),
    Opt("adadelta_rho", float, 0.95, "", "train"),
    Opt("adadelta_eps", float, 1e-6, "", "train"),
    Opt("max_updates", int, 1000, "update budget", "train"),
    Opt("eval_every", int, 100, "updates between evaluations", "train"),
    Opt("patience", int, 0, "evaluations without improvement before stopping (0 = off)", "train"),
    Opt("clip_norm", float, 5.0, "global gradient-norm clip", "train"),
    Opt("train_seed", int, 0, "seed recorded in the training config", "train"),
]

COMMAND_OPTS = {
    "prepare": [
        Opt("input", _path, None, "raw text file"),
        Opt("synthetic_chars", int, 0, "generate a synthetic newswire corpus of this size instead"),
        Opt("synthetic_seed", int, 0, ""),
        Opt("fractions", str, "0.98,0.01,0.01", "train,valid,test character fractions"),
        Opt("words", _path, None, "private word list file (one word per line)"),
        Opt("shards", int, 10, "number of private shards"),
        Opt("seed", int, 0, "shard shuffle seed"),
    ],
    "train": [
        Opt("corpus", _path, None, "training corpus file"),
        Opt("targets", str, "hard", "'hard' or 'soft:<label file>'"),
        Opt("spec", str, "64x2", "NxM or a preset name"),
        Opt("valid", _path, None, "validation corpus file"),
        Opt("init", _path, None, "checkpoint to resume from"),
        Opt("seed", int, 0, "initialisation seed"),
    ],
    "generate": [
        Opt("checkpoint", _path, None, ""),
        Opt("chars", int, 10000, "characters to generate"),
        Opt("streams", int, 32, "parallel sampling streams"),
        Opt("seed", int, 0, ""),
        Opt("temperature", float, 1.0, ""),
        Opt("with_labels", _bool, False, "also write the sampling distributions"),
    ],
    "gkt": [
        Opt("teacher", _path, None, "teacher checkpoint"),
        Opt("student", _path, None, "student checkpoint (required for mode sd)"),
        Opt("student_spec", str, "64x2", "spec for a fresh student in mode td"),
        Opt("mode", str, "td", "td (teacher-driven) or sd (student-driven)"),
        Opt("lot_chars", int, 20000, ""),
        Opt("cycles", int, 1, ""),
        Opt("budget_chars", int, 20000, "teacher-driven generated-set size"),
        Opt("passes", int, 1, "student-driven passes over each lot"),
        Opt("temperature", float, 1.0, ""),
        Opt("hard_labels", _bool, False, "train on sampled ids instead of soft labels"),
        Opt("seed", int, 0, ""),
        Opt("valid", _path, None, "validation corpus for snapshot selection"),
        Opt("eval_full", _path, None, ""),
        Opt("eval_private", _path, None, ""),
        Opt("eval_public", _path, None, ""),
        Opt("oov_words", str, "", "comma-separated probe words"),
    ],
    "federate": [
        Opt("data", _path, None, "directory written by 'prepare'"),
        Opt("spec", str, "64x2", "server and device model spec"),
        Opt("server", _path, None, "pretrained server checkpoint (skips bootstrap)"),
        Opt("n_devices", int, 10, ""),
        Opt("device_init", str, "transfer", "full, transfer or private"),
        Opt("mode", str, "sdgkt", "sdgkt or tdgkt"),
        Opt("rounds", int, 10, ""),
        Opt("lot_chars", int, 50000, ""),
        Opt("passes", int, 1, ""),
        Opt("temperature", float, 1.0, ""),
        Opt("seed", int, 0, ""),
        Opt("bootstrap_updates", int, 1000, ""),
        Opt("finetune_updates", int, 100, "device fine-tuning updates"),
        Opt("finetune_streams", int, 8, "device fine-tuning batch streams"),
        Opt("finetune_lr", float, 0.005, "device fine-tuning learning rate"),
        Opt("server_lr", float, 0.1, "server learning rate during rounds (--lr is for bootstrap)"),
        Opt("wire_precision", str, "f64", "f64 (in-process objects) or f32 (wire frames)"),
        Opt("unresponsive", str, "", "comma-separated device ids that never answer"),
        Opt("jsonl", _bool, False, "write a JSON-lines mirror of every message"),
    ],
    "eval": [
        Opt("checkpoint", _path, None, ""),
        Opt("data", _path, None, "directory written by 'prepare'"),
        Opt("split", str, "test", "valid or test (with --data)"),
        Opt("full", _path, None, ""),
        Opt("private", _path, None, ""),
        Opt("public", _path, None, ""),
        Opt("fast", _bool, False, "parallel chunked evaluation instead of one stream"),
    ],
}

NEEDS_TRAIN = {"train", "gkt", "federate"}


def _all_opts(cmd: str) -> list[Opt]:
    return COMMAND_OPTS[cmd] + (TRAIN_OPTS if cmd in NEEDS_TRAIN else [])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genkt", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in COMMAND_OPTS:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="INI settings file")
        sp.add_argument("--out", required=True, help="output directory")
        for o in _all_opts(cmd):
            flag = "--" + o.name.replace("_", "-")
            sp.add_argument(flag, dest=o.name, default=None, help=f"{o.help} (default {o.default})")
    rp = sub.add_parser("replay", help="re-run a manifest and compare artifacts")
    rp.add_argument("manifest")
    rp.add_argument("--out", required=True, help="fresh output directory")
    return p


def resolve(cmd: str, flags: dict, config_path: str | None) -> dict:
    """Merge defaults, the INI file and flags into one typed settings dict."""
    ini = configparser.ConfigParser()
    if config_path:
        if not Path(config_path).is_file():
            raise ConfigError(f"config file {config_path} not found")
        try:
            ini.read(config_path)
        except configparser.Error as exc:
            raise ConfigError(f"{config_path}: {exc}") from None
    known = {o.name for o in _all_opts(cmd)}
    for section in ini.sections():
        if section in (cmd, "train") and (section != "train" or cmd in NEEDS_TRAIN):
            unknown = set(ini[section]) - known
            if unknown:
                raise ConfigError(f"{config_path} [{section}]: unknown keys {sorted(unknown)}")
    out = {}
    for o in _all_opts(cmd):
        section = o.section or cmd
        value = o.default
        if ini.has_option(section, o.name):
            value = ini.get(section, o.name)
        if flags.get(o.name) is not None:
            value = flags[o.name]
        try:
            out[o.name] = None if value is None else o.type(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {o.name}: {value!r} ({exc})") from None
    return out


def train_config(s: dict, **override) -> trainer.TrainConfig:
    try:
        return trainer.TrainConfig(
            bptt_window=s["bptt_window"],
            batch_streams=s["batch_streams"],
            lr=s["lr"],
            momentum=s["momentum"],
            adadelta_rho=s["adadelta_rho"],
            adadelta_eps=s["adadelta_eps"],
            max_updates=s["max_updates"],
            eval_every=s["eval_every"],
            patience=s["patience"],
            clip_norm=s["clip_norm"],
            seed=s["train_seed"],
        ).replace(**override)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_spec(text: str) -> ModelSpec:
    try:
        return ModelSpec.parse(PRESETS.get(text, text))
    except ValueError:
        raise ConfigError(f"bad model spec {text!r}; use NxM or one of {sorted(PRESETS)}") from None


def _require(s: dict, *names):
    for n in names:
        if s.get(n) in (None, ""):
            raise ConfigError(f"--{n.replace('_', '-')} is required")


# --------------------------------------------------------------------------- commands


def read_word_list(path) -> frozenset[str]:
    words = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        w = line.strip()
        if not w or w.startswith("#"):
            continue
        if not w.isascii() or not w.isalpha() or not w.isupper():
            raise corpus.CorpusError(f"{path}:{lineno}: {w!r} is not an uppercase A-Z word")
        words.append(w)
    if not words:
        raise corpus.CorpusError(f"{path}: word list is empty")
    return frozenset(words)


def cmd_prepare(s: dict, out: Path) -> tuple[list, dict]:
    if not s["input"] and not s["synthetic_chars"]:
        raise ConfigError("give --input or --synthetic-chars")
    try:
        fractions = tuple(float(x) for x in s["fractions"].split(","))
    except ValueError:
        raise ConfigError(f"bad --fractions {s['fractions']!r}") from None
    words_path = s["words"] or str(default_words_path())
    words = read_word_list(words_path)
    if s["input"]:
        raw = Path(s["input"]).read_bytes()
        try:
            ids = corpus.preprocess(raw)
        except corpus.CorpusError as exc:
            raise corpus.CorpusError(f"{s['input']}: {exc}") from None
    else:
        ids = corpus.preprocess(synth.newswire_text(s["synthetic_chars"], seed=s["synthetic_seed"]))
    split = corpus.split_corpus(ids, fractions)
    files = {}
    for name in ("train", "valid", "test"):
        part = getattr(split, name)
        pp = corpus.partition_private(part, words)
        files[f"{name}.txt"] = part
        files[f"{name}_public.txt"] = pp.public_sentences
        files[f"{name}_private.txt"] = pp.private_sentences
        if name == "train":
            train_private = pp.private_sentences
    shard_dir = out / "shards"
    shard_dir.mkdir(parents=True, exist_ok=True)
    for k, sh in enumerate(corpus.shard(train_private, s["shards"], s["seed"])):
        files[f"shards/shard_{k:03d}.txt"] = sh
    written = []
    for rel, arr in files.items():
        corpus.write_corpus(out / rel, arr)
        written.append(out / rel)
    (out / "words.txt").write_text("\n".join(sorted(words)) + "\n")
    meta = {
        "fractions": fractions,
        "words": words,
        "shards": s["shards"],
        "shard_seed": s["seed"],
        "vocab_hash": corpus.VOCAB.hash,
        **{f"{rel}.chars": int(arr.size) for rel, arr in files.items()},
    }
    corpus.write_metadata(out / "metadata.txt", meta)
    written += [out / "words.txt", out / "metadata.txt"]
    return written, {"inputs": [s["input"], words_path] if s["input"] else [words_path]}


def _soft_training_data(text: np.ndarray, label_path: str):
    """Rebuild ``(inputs, labels)`` blocks from a generated text file and its
    label file (one label message per sampled stream)."""
    msgs = sorted(wire.read_file(label_path), key=lambda m: m.lot)
    lengths = {int(np.asarray(m.labels).shape[0]) for m in msgs}
    if not msgs or len(lengths) != 1:
        raise corpus.CorpusError(f"{label_path}: expected equal-length label streams")
    (L,) = lengths
    if text.size != L * len(msgs):
        raise corpus.CorpusError(
            f"text has {text.size} symbols but {label_path} labels {L * len(msgs)} positions"
        )
    ids = text.reshape(len(msgs), L)
    labels = np.stack([np.asarray(m.labels, dtype=np.float64) for m in msgs])
    return clm.training_pair(ids), labels


def _write_log(path: Path, rows: list[dict]) -> None:
    trainer.write_log_csv(path, rows)


def cmd_train(s: dict, out: Path) -> tuple[list, dict]:
    _require(s, "corpus")
    text = corpus.read_corpus(s["corpus"])
    inputs_used = [s["corpus"]]
    targets = s["targets"]
    cfg = train_config(s)
    if targets == "hard":
        X, Y = trainer.hard_targets(text)
    elif targets.startswith("soft:"):
        label_path = str(Path(targets[5:]).resolve())
        X, Y = _soft_training_data(text, label_path)
        inputs_used.append(label_path)
    else:
        raise ConfigError(f"--targets must be 'hard' or 'soft:<file>', got {targets!r}")
    valid = corpus.read_corpus(s["valid"]) if s["valid"] else None
    if s["valid"]:
        inputs_used.append(s["valid"])
    spec = parse_spec(s["spec"])
    if s["init"]:
        ck = load_checkpoint(s["init"], expect_spec=spec)
        params, opt, frames0, updates0, seeds = ck.params, ck.opt, ck.frames, ck.updates, ck.seeds
        inputs_used.append(s["init"])
    else:
        params, opt, frames0, updates0 = ModelParams.initialize(spec, s["seed"]), None, 0, 0
        seeds = [s["seed"]]
    res = trainer.train(params, X, Y, cfg, valid=valid, opt=opt, frames0=frames0, updates0=updates0)
    ck = Checkpoint(res.params, res.opt, seeds + [cfg.seed], res.frames, res.updates,
                    {"targets": "hard" if targets == "hard" else "soft"})
    save_checkpoint(out / "model.ckpt", ck)
    _write_log(out / "train_log.csv", res.log)
    if res.stats.get("clipped"):
        log.info("gradient clipped in %d updates", res.stats["clipped"])
    return [out / "model.ckpt", out / "train_log.csv"], {"inputs": inputs_used}


def cmd_generate(s: dict, out: Path) -> tuple[list, dict]:
    _require(s, "checkpoint")
    if s["chars"] < s["streams"]:
        raise ConfigError("--chars must be at least --streams")
    ck = load_checkpoint(s["checkpoint"])
    per = s["chars"] // s["streams"]
    ids, labels = clm.sample_streams(ck.params, s["streams"], per, s["seed"], s["temperature"])
    corpus.write_corpus(out / "generated.txt", ids.reshape(-1))
    written = [out / "generated.txt"]
    if s["with_labels"]:
        msgs = [wire.SoftLabelLotMsg(0, k, 0, labels[k]) for k in range(s["streams"])]
        wire.write_file(out / "labels.gktw", msgs)
        written.append(out / "labels.gktw")
    return written, {"inputs": [s["checkpoint"]]}


def _evaluator(s: dict) -> gkt.Evaluator:
    sets = {}
    for name in ("full", "private", "public"):
        if s.get(f"eval_{name}"):
            sets[name] = corpus.read_corpus(s[f"eval_{name}"])
    words = tuple(w for w in s.get("oov_words", "").split(",") if w)
    return gkt.Evaluator(sets, oov_words=words, n_streams=16)


def cmd_gkt(s: dict, out: Path) -> tuple[list, dict]:
    _require(s, "teacher")
    modes = {"td": gkt.TEACHER_DRIVEN, "sd": gkt.STUDENT_DRIVEN}
    if s["mode"] not in modes:
        raise ConfigError(f"--mode must be td or sd, got {s['mode']!r}")
    mode = modes[s["mode"]]
    teacher = load_checkpoint(s["teacher"]).params
    inputs_used = [s["teacher"]]
    student_opt = None
    if s["student"]:
        sck = load_checkpoint(s["student"])
        student, student_opt = sck.params, sck.opt
        inputs_used.append(s["student"])
        if mode == gkt.STUDENT_DRIVEN and sck.updates == 0:
            raise ConfigError("student-driven transfer needs a pretrained student checkpoint")
    elif mode == gkt.STUDENT_DRIVEN:
        raise ConfigError("student-driven transfer needs a pretrained student (--student)")
    else:
        student = ModelParams.initialize(parse_spec(s["student_spec"]), s["seed"])
    try:
        cfg = gkt.GktConfig(
            mode=mode,
            lot_chars=s["lot_chars"],
            cycles=s["cycles"],
            budget_chars=s["budget_chars"],
            temperature=s["temperature"],
            train=train_config(s),
            seed=s["seed"],
            passes=s["passes"],
            hard_labels=s["hard_labels"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ev = _evaluator(s)
    inputs_used += [s[k] for k in ("valid", "eval_full", "eval_private", "eval_public") if s[k]]
    if mode == gkt.TEACHER_DRIVEN:
        valid = corpus.read_corpus(s["valid"]) if s["valid"] else None
        params, report = gkt.run_tdgkt(teacher, student, cfg, ev, valid=valid, opt=student_opt)
    else:
        params, report = gkt.run_sdgkt(teacher, student, cfg, ev, opt=student_opt)
    last = report.records[-1]
    save_checkpoint(out / "student.ckpt", Checkpoint(params, None, [s["seed"]], last.frames, last.updates,
                                                     {"mode": s["mode"]}))
    report.to_csv(out / "report.csv")
    return [out / "student.ckpt", out / "report.csv"], {"inputs": inputs_used}


REGIMES = {"full": protocol.T_FULL, "transfer": protocol.T_TRANSFER, "private": protocol.T_PRIVATE}


def _load_shards(data: Path, n: int, seed: int) -> list[np.ndarray]:
    shard_files = sorted((data / "shards").glob("shard_*.txt"))
    if len(shard_files) == n:
        return [corpus.read_corpus(p) for p in shard_files]
    log.info("re-sharding %s into %d shards", data / "train_private.txt", n)
    return corpus.shard(corpus.read_corpus(data / "train_private.txt"), n, seed)


def _bpc_or_nan(params, seq) -> float:
    return clm.bpc_streams(params, seq) if seq.size >= 2 else float("nan")


def cmd_federate(s: dict, out: Path) -> tuple[list, dict]:
    _require(s, "data")
    data = Path(s["data"])
    if s["device_init"] not in REGIMES:
        raise ConfigError(f"--device-init must be one of {sorted(REGIMES)}")
    spec = parse_spec(s["spec"])
    base = train_config(s)
    try:
        unresponsive = frozenset(int(x) for x in s["unresponsive"].split(",") if x.strip())
        fcfg = protocol.FederationConfig(
            n_devices=s["n_devices"],
            device_init=REGIMES[s["device_init"]],
            rounds=s["rounds"],
            lot_chars=s["lot_chars"],
            mode=s["mode"],
            seed=s["seed"],
            server_train=base.replace(lr=s["server_lr"]),
            temperature=s["temperature"],
            passes=s["passes"],
            wire_precision=s["wire_precision"],
            unresponsive=unresponsive,
        )
        fcfg.gkt_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    read = lambda name: corpus.read_corpus(data / name)  # noqa: E731
    public = read("train_public.txt")
    valid_pub, valid_priv = read("valid_public.txt"), read("valid_private.txt")
    test_pub, test_priv = read("test_public.txt"), read("test_private.txt")
    inputs_used = [str(data / n) for n in ("train_public.txt", "valid_public.txt", "valid_private.txt",
                                           "test_public.txt", "test_private.txt")]
    if s["server"]:
        sck = load_checkpoint(s["server"], expect_spec=spec)
        server, server_opt = sck.params, sck.opt
        inputs_used.append(s["server"])
    else:
        server, server_opt = protocol.bootstrap(
            public, spec, base.replace(max_updates=s["bootstrap_updates"]), seed=s["seed"], valid=valid_pub
        )
    shards = _load_shards(data, s["n_devices"], s["seed"])
    inputs_used += [str(p) for p in sorted((data / "shards").glob("shard_*.txt"))]
    devices = protocol.init_devices(server, s["n_devices"], fcfg.device_init, s["seed"])
    ft_cfg = base.replace(max_updates=s["finetune_updates"], batch_streams=s["finetune_streams"],
                          lr=s["finetune_lr"])
    tuned = protocol.fine_tune_devices(
        devices, shards, ft_cfg, fcfg.device_init, public, valid=valid_priv, opt=server_opt,
    )
    if not tuned:
        raise corpus.CorpusError("no device has usable private data")
    written = []
    (out / "devices").mkdir(parents=True, exist_ok=True)
    for i, p in tuned.items():
        path = out / "devices" / f"device_{i:03d}.ckpt"
        save_checkpoint(path, Checkpoint(p, None, [s["seed"], i], 0, 1, {"regime": s["device_init"]}))
        written.append(path)
    save_checkpoint(out / "init_server.ckpt", Checkpoint(server, server_opt, [s["seed"]], 0, 1, {}))
    written.append(out / "init_server.ckpt")

    with (out / "devices.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device", "bpc_private_test", "bpc_public_test"])
        for i, p in tuned.items():
            w.writerow([i, _bpc_or_nan(p, test_priv), _bpc_or_nan(p, test_pub)])
        if test_priv.size >= 2:
            a, e = protocol.ensemble_eval(list(tuned.values()), test_priv)
            w.writerow(["A", a, ""])
            w.writerow(["E", e, ""])
    written.append(out / "devices.csv")

    net = SimulatedNetwork(s["n_devices"], s["wire_precision"],
                           jsonl_path=out / "transcript.jsonl" if s["jsonl"] else None)
    fed = protocol.Federation(server, tuned, fcfg, net, server_opt=server_opt)
    ev = gkt.Evaluator({"private": valid_priv, "public": valid_pub})
    result = fed.run(ev)
    net.close()
    if s["jsonl"]:
        written.append(out / "transcript.jsonl")
    save_checkpoint(out / "server.ckpt", Checkpoint(result.server, None, [s["seed"]],
                                                    result.report.records[-1].frames,
                                                    result.report.records[-1].updates, {}))
    result.report.to_csv(out / "report.csv")
    with (out / "server.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "bpc_private_test", "bpc_public_test"])
        for stage, p in (("initial", server), ("final", result.server)):
            w.writerow([stage, _bpc_or_nan(p, test_priv), _bpc_or_nan(p, test_pub)])
    (out / "transcript.sha256").write_text(result.transcript_hash + "\n")
    written += [out / "server.ckpt", out / "report.csv", out / "server.csv", out / "transcript.sha256"]
    violations = net.violations()
    if violations:
        raise RuntimeError(f"{len(violations)} routing violations in the transcript")
    extra = {
        "transcript_hash": result.transcript_hash,
        "routing_violations": 0,
        "responders": result.responders,
        "messages": len(net.audit),
    }
    return written, {"inputs": inputs_used, "extra": extra}


def cmd_eval(s: dict, out: Path) -> tuple[list, dict]:
    _require(s, "checkpoint")
    params = load_checkpoint(s["checkpoint"]).params
    paths = {}
    if s["data"]:
        if s["split"] not in ("valid", "test"):
            raise ConfigError("--split must be valid or test")
        d = Path(s["data"])
        paths = {"full": d / f"{s['split']}.txt", "private": d / f"{s['split']}_private.txt",
                 "public": d / f"{s['split']}_public.txt"}
    for name in ("full", "private", "public"):
        if s[name]:
            paths[name] = Path(s[name])
    if not paths:
        raise ConfigError("give --data or at least one of --full/--private/--public")
    row = {}
    for name in ("full", "private", "public"):
        seq = corpus.read_corpus(paths[name]) if name in paths else None
        if seq is None or seq.size < 2:
            if seq is not None:
                log.warning("%s is empty; reporting nan", paths[name])
            row[name] = float("nan")
        else:
            row[name] = clm.bpc_streams(params, seq) if s["fast"] else clm.bpc(params, seq)
    with (out / "eval.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bpc_full", "bpc_private", "bpc_public"])
        w.writerow([repr(row["full"]), repr(row["private"]), repr(row["public"])])
    for name, v in row.items():
        print(f"{name:8s} {v:.4f}")
    return [out / "eval.csv"], {"inputs": [s["checkpoint"]] + [str(p) for p in paths.values()]}


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "generate": cmd_generate,
    "gkt": cmd_gkt,
    "federate": cmd_federate,
    "eval": cmd_eval,
}

SEED_KEYS = ("seed", "train_seed", "synthetic_seed")


def execute(cmd: str, settings: dict, out: str | Path) -> RunManifest:
    """Run one command with resolved settings and write its manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written, info = COMMANDS[cmd](settings, out)
    m = RunManifest(
        command=cmd,
        config=settings,
        seeds={k: settings[k] for k in SEED_KEYS if k in settings},
        inputs=hash_inputs(info.get("inputs", [])),
        outputs=hash_outputs(out, written),
        extra=info.get("extra", {}),
    )
    m.write(out)
    return m


def replay(manifest_path: str | Path, out: str | Path) -> tuple[bool, list[str]]:
    """Re-run a manifest into ``out``; returns ``(identical, differing artifacts)``."""
    m = RunManifest.read(manifest_path)
    changed = [p for p, h in m.inputs.items() if not Path(p).is_file() or hash_inputs([p])[p] != h]
    if changed:
        raise corpus.CorpusError(f"inputs changed since the recorded run: {changed}")
    new = execute(m.command, m.config, out)
    diff = sorted(set(m.outputs) ^ set(new.outputs))
    diff += [k for k in sorted(set(m.outputs) & set(new.outputs)) if m.outputs[k] != new.outputs[k]]
    return not diff, diff


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            same, diff = replay(args.manifest, args.out)
            if not same:
                print(f"replay differs in: {', '.join(diff)}", file=sys.stderr)
                return EXIT_MISMATCH
            print("replay reproduced all artifacts")
            return EXIT_OK
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out", "verbose")}
        settings = resolve(args.command, flags, args.config)
        m = execute(args.command, settings, args.out)
        for rel, digest in m.outputs.items():
            print(f"{digest[:12]}  {rel}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (corpus.CorpusError, CheckpointError, wire.WireError, FileNotFoundError,
            IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (trainer.NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
