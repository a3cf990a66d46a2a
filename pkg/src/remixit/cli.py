"""Command-line entry point: ``remixit gen-data|train|eval|analyze``.

Exit codes: 0 ok, 2 config, 3 missing artifact, 4 divergence, 5 bad corpus,
6 analysis failure. ``REMIXIT_THREADS`` caps BLAS worker threads.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import analysis
from .config import _ROLE_SEED, derive_seed, load_config, load_roles, load_source, train_config_from
from .data import Corpus, write_corpus
from .exceptions import AnalysisError, CheckpointError, ConfigError, CorpusError, DivergenceError
from .model import MaskNetParams, init_params, load_checkpoint, save_checkpoint
from .selftrain import TeacherProtocol, evaluate, pretrain_teacher, run_remixit, write_log, zero_shot_adapt

log = logging.getLogger("remixit")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED, EXIT_CORPUS, EXIT_ANALYSIS = 0, 2, 3, 4, 5, 6


class MissingArtifactError(FileNotFoundError):
    """A required input artifact (teacher checkpoint, data file) is absent."""


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _save(result_params, path: Path, state=None, **meta) -> None:
    extra_tensors = state.as_tensors() if state is not None else None
    if state is not None:
        meta["adam"] = state.meta()
    save_checkpoint(result_params, path, extra_tensors, meta or None)


def _load_model(path) -> MaskNetParams:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _pretrain(cfg: dict, out: Path, seed: int, base: Path | None):
    tp = cfg["teacher_pretrain"]
    t_seed = derive_seed(seed, _ROLE_SEED["teacher"])
    roles = load_roles(tp["data"], t_seed, base, roles=("train", "noise"))
    config = train_config_from({"seed": t_seed}, tp.get("train", {}), tp.get("model", {}), protocol={})
    log.info("pretraining %s teacher for %d epochs", config.regime, config.epochs)
    result = pretrain_teacher(config, roles)
    write_log(result.records, out / "teacher_log.csv")
    _save(result.params, out / "teacher_init.ckpt", result.optimizer)
    return result.params


def _protocols(cfg: dict) -> list[dict]:
    proto = cfg.get("protocol", {})
    return list(proto) if isinstance(proto, list) else [proto]


def _run_dirs(out: Path, protocols: list[dict]) -> list[Path]:
    if len(protocols) == 1:
        return [out]
    kinds = [p.get("kind", TeacherProtocol().kind) for p in protocols]
    return [out / (k if kinds.count(k) == 1 else f"{k}_{i}") for i, k in enumerate(kinds)]


def _analysis_corpus(job: dict, roles: dict[str, Corpus]) -> Corpus:
    key = "source" if job.get("corpus", "test") == "train" else "test"
    if key not in roles:
        raise AnalysisError(f"analysis on the {job.get('corpus', 'test')} corpus needs paired data")
    return roles[key]


def run_analysis(job: dict, teacher, student, corpus: Corpus, path: Path, seed: int = 0) -> Path:
    """Run one analysis job and write its CSV to ``path``."""
    mode = job["mode"]
    if mode == "bracket":
        analysis.bracket_analysis(teacher, student, corpus, job.get("edges", analysis.DEFAULT_EDGES)).to_csv(path)
    elif mode == "sweep":
        sweep = analysis.mean_student_sweep(
            teacher, student, corpus, job.get("b_values", analysis.DEFAULT_B_VALUES), seed=seed,
            max_teacher_snr_db=job.get("max_teacher_snr_db", 5.0), unit_norm=job.get("unit_norm", True))
        sweep.to_csv(path)
    else:
        rows = analysis.decomposition_trace(teacher, student, corpus, unit_norm=job.get("unit_norm", True))
        analysis.write_decomposition_csv(rows, path)
    return path


def run_experiment(cfg: dict, out_dir, teacher_path=None, seed: int | None = None, base=None) -> dict:
    """Train as configured and write checkpoints, logs and metrics under ``out_dir``.

    Returns the summary that is also written to ``summary.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.get("seed", 0) if seed is None else seed
    cfg = {**cfg, "seed": seed}
    base = Path(base) if base is not None else None
    regime = cfg.get("train", {}).get("regime", "supervised")
    summary: dict = {"name": cfg.get("name", ""), "seed": seed, "regime": regime, "runs": {}}

    teacher = None
    if regime in ("remixit", "adapt"):
        teacher_path = teacher_path or cfg.get("paths", {}).get("teacher")
        if teacher_path:
            teacher = _load_model(teacher_path)
        elif "teacher_pretrain" in cfg:
            teacher = _pretrain(cfg, out, seed, base)
        else:
            raise MissingArtifactError(f"regime {regime!r} needs a teacher checkpoint (--teacher)")

    roles = load_roles(cfg.get("data", {}), seed, base)
    test = roles.get("test")
    if test is not None and test.kind != "paired":
        raise CorpusError("the test corpus must be paired")
    if teacher is not None and test is not None:
        summary["teacher"] = evaluate(teacher, test)

    if teacher is None:
        config = train_config_from(cfg)
        arch = config.arch if regime == "mixit" else replace(config.arch, n_sources=2)
        if config.epochs == 0:
            _save(init_params(arch, config.seed), out / "initial.ckpt")
            return _finish(summary, out)
        result = pretrain_teacher(replace(config, arch=arch), roles, test)
        _save(result.params, out / "final.ckpt", result.optimizer)
        write_log(result.records, out / "train_log.csv")
        if test is not None:
            summary["runs"]["main"] = evaluate(result.params, test)
        return _finish(summary, out)

    mixtures = roles.get("mixtures", roles.get("paired"))
    if mixtures is None:
        raise CorpusError(f"regime {regime!r} needs training mixtures")
    protocols = _protocols(cfg)
    for proto, run_dir in zip(protocols, _run_dirs(out, protocols)):
        run_dir.mkdir(parents=True, exist_ok=True)
        config = train_config_from(cfg, protocol=proto)
        label = run_dir.name if run_dir != out else "main"
        if config.epochs == 0:
            initial = teacher.copy() if regime == "adapt" else init_params(replace(config.arch, n_sources=2), config.seed)
            _save(initial, run_dir / "initial.ckpt")
            continue
        log.info("%s run (%s protocol), %d epochs", regime, config.protocol.kind, config.epochs)
        if regime == "adapt":
            result = zero_shot_adapt(teacher, mixtures, config, eval_corpus=test, checkpoint_dir=run_dir)
        else:
            result = run_remixit(teacher, mixtures, config, eval_corpus=test, checkpoint_dir=run_dir)
        _save(result.params, run_dir / "final.ckpt", result.optimizer, teacher_gen=result.teacher_gen)
        _save(result.teacher, run_dir / "teacher_final.ckpt")
        write_log(result.records, run_dir / "train_log.csv")
        run_summary = {"teacher_gen": result.teacher_gen, "history": result.history}
        if test is not None:
            run_summary["student"] = evaluate(result.params, test)
        summary["runs"][label] = run_summary
        for job in cfg.get("analysis", []):
            run_analysis(job, teacher, result.params, _analysis_corpus(job, roles),
                         run_dir / f"analysis_{job['mode']}.csv", seed)
    return _finish(summary, out)


def _finish(summary: dict, out: Path) -> dict:
    _write_json(out / "summary.json", summary)
    return summary


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.get("seed", 0) if args.seed is None else args.seed
    out = Path(args.out)
    written = 0
    sections = [("", cfg.get("data", {}), seed)]
    if "teacher_pretrain" in cfg:
        sections.append(("teacher_", cfg["teacher_pretrain"]["data"], derive_seed(seed, _ROLE_SEED["teacher"])))
    for prefix, data, s in sections:
        for role, src in data.items():
            if "synth" not in src:
                continue
            corpus = load_source(src, derive_seed(s, _ROLE_SEED[role]))
            write_corpus(corpus, out / f"{prefix}{role}")
            written += 1
    print(f"wrote {written} corpora under {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent if Path(args.config).is_file() else None
    out = args.out or cfg.get("paths", {}).get("out") or "runs/" + cfg.get("name", "run")
    summary = run_experiment(cfg, out, teacher_path=args.teacher, seed=args.seed, base=base)
    print(json.dumps(summary.get("runs", {}), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    params = _load_model(args.ckpt)
    corpus = load_source({"manifest": args.test_manifest}, 0)
    metrics = evaluate(params, corpus)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_analyze(args) -> int:
    teacher = _load_model(args.teacher)
    student = _load_model(args.student)
    corpus = load_source({"manifest": args.manifest}, 0)
    job = {"mode": args.mode, "unit_norm": not args.raw}
    if args.b_values:
        job["b_values"] = _int_list(args.b_values)
    if args.edges:
        job["edges"] = _float_list(args.edges)
    if args.mode == "sweep":
        job["max_teacher_snr_db"] = None if math.isinf(args.max_teacher_snr) else args.max_teacher_snr
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run_analysis(job, teacher, student, corpus, out, args.seed)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="remixit", description="Self-training speech enhancement toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic corpora (WAV + manifest.json)")
    p.add_argument("--config", required=True, help="JSON config file or preset name")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train as configured; writes checkpoints and train_log.csv")
    p.add_argument("--config", "--preset", dest="config", required=True, help="JSON config file or preset name")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--teacher", help="teacher checkpoint for remixit/adapt regimes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print SI-SDR metrics JSON for a checkpoint on a paired corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", help="also write the JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="teacher/student diagnostics as CSV")
    p.add_argument("--mode", choices=("bracket", "sweep", "decomp"), required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--manifest", required=True, help="paired corpus manifest")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--b-values", help="comma-separated B values for the sweep, e.g. 1,64")
    p.add_argument("--edges", help="comma-separated bracket edges in dB")
    p.add_argument("--max-teacher-snr", type=float, default=5.0,
                   help="sweep probe filter in dB; pass -inf to keep every item")
    p.add_argument("--raw", action="store_true", help="decomposition/sweep on raw rather than unit-norm signals")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)
    return parser


def _threads() -> int | None:
    value = os.environ.get("REMIXIT_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"REMIXIT_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"REMIXIT_THREADS must be a positive integer, got {value!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifactError, CheckpointError) as exc:
        print(f"missing or unreadable artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except AnalysisError as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except CorpusError as exc:
        print(f"bad corpus: {exc}", file=sys.stderr)
        return EXIT_CORPUS
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
