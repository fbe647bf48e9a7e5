"""Command-line front end.

Exit codes: 0 success, 1 bad usage or invalid input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import adversarial, toyasr
from .audio import AudioBuffer, read_wav, resample, write_wav
from .errors import ValidationError
from .harness import (
    Manifest,
    ModelAdapter,
    RunConfig,
    TranscriptCache,
    Utterance,
    evaluate_run,
    format_summary,
    load_manifest,
    materialize_scenario,
    save_manifest,
    summarize_results,
    transcribe,
    write_corpus,
    write_summary,
)
from .perturb import (
    NoiseBank,
    PerturbationSpec,
    load_rir_bank,
    load_severity_table,
    parse_kind,
    severity_params,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; 2 is reserved for
    # runtime failures here, so usage problems exit 1 instead
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="srb", description="ASR robustness evaluation pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("perturb", help="render one perturbation cell of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True)
    p.add_argument("--severity", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--severity-table", help="JSON/TOML severity override file")
    p.add_argument("--noise-dir", help="noise bank for env_noise, music, crosstalk")
    p.add_argument("--rir-dir", help="impulse-response bank for rir, real_rir")
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("transcribe", help="run an adapter over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-id", required=True)
    p.add_argument("--adapter", required=True, help="adapter command line")
    p.add_argument("--out", required=True, help="hypothesis JSONL path")
    p.add_argument("--cache", help="transcript cache JSONL path")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=_cmd_transcribe)

    p = sub.add_parser("attack", help="run a white-box attack with the bundled model")
    p.add_argument("--mode", choices=("pgd", "universal"), required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=50, help="pgd iterations")
    p.add_argument("--apply-manifest", help="held-out set the universal vector is applied to")
    p.add_argument("--t-cer", type=float, default=0.3)
    p.add_argument("--t-sr", type=float, default=0.5)
    p.add_argument("--e-max", type=int, default=20)
    p.add_argument("--i-max", type=int, default=15)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("evaluate", help="full run from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="summarize a results table")
    p.add_argument("--results", required=True)
    p.add_argument("--group-by", choices=("kind", "category"), default="kind")
    p.add_argument("--out", help="write the summary as CSV here too")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("train-toy", help="train the toy recognizer and write its corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-utts", type=int, default=20)
    p.add_argument("--alphabet", default="abcd")
    p.set_defaults(func=_cmd_train_toy)

    return parser


def _cmd_perturb(args) -> int:
    manifest = load_manifest(args.manifest)
    kind = parse_kind(args.kind)
    table = load_severity_table(args.severity_table) if args.severity_table else None
    params = severity_params(kind, args.severity, table) if table else None
    spec = PerturbationSpec(kind, args.severity, params=params, seed=args.seed)
    noise_bank = NoiseBank.from_dir(args.noise_dir) if args.noise_dir else None
    rir_bank = load_rir_bank(args.rir_dir) if args.rir_dir else None
    result = materialize_scenario(manifest, spec, args.out, noise_bank, rir_bank)
    print(result.manifest.path)
    if result.failures:
        print(
            f"warning: {len(result.failures)} utterances failed, see failures.jsonl",
            file=sys.stderr,
        )
    return 0


def _cmd_transcribe(args) -> int:
    manifest = load_manifest(args.manifest)
    adapter = ModelAdapter.from_config(
        {"id": args.model_id, "command": args.adapter, "timeout_s": args.timeout}
    )
    cache = TranscriptCache(args.cache) if args.cache else None
    try:
        result = transcribe(adapter, manifest, cache)
    finally:
        if cache:
            cache.close()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for utt in manifest:
            fh.write(json.dumps({"id": utt.id, "text": result.texts[utt.id]}) + "\n")
    stats = {"requests_sent": result.requests_sent, "cache_hits": result.cache_hits}
    with open(out.with_suffix(".stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    print(out)
    return 0


def _load_attack_set(manifest: Manifest, model: toyasr.ToyCtcModel) -> list:
    utts = []
    for utt in manifest:
        audio = read_wav(utt.audio_path)
        if audio.sample_rate != model.sample_rate:
            audio = resample(audio, model.sample_rate)
        utts.append(
            toyasr.ToyUtterance(
                id=utt.id,
                text=utt.text,
                audio=audio,
                gender=utt.gender or "m",
                language=utt.language or "und",
                dataset=utt.dataset or "toy",
            )
        )
    return utts


def _attack_severity(snr_db: float) -> int:
    grid = adversarial.ATTACK_SNR_GRID_DB
    return min(range(len(grid)), key=lambda i: abs(grid[i] - snr_db)) + 1


def _write_attacked(
    utts, out_dir: Path, source: Manifest, severity: int
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = {utt.id: utt for utt in source}
    rows = []
    for utt, perturbed in utts:
        wav_path = out_dir / f"{utt.id}.wav"
        write_wav(wav_path, perturbed)
        origin = by_id[utt.id]
        rows.append(
            Utterance(
                id=origin.id,
                # relative to the manifest beside it, so the tree relocates
                audio_path=f"{origin.id}.wav",
                text=origin.text,
                speaker_id=origin.speaker_id,
                gender=origin.gender,
                language=origin.language,
                dataset=origin.dataset,
            )
        )
    return save_manifest(out_dir / "manifest.jsonl", rows)


def _cmd_attack(args) -> int:
    model = toyasr.load_model(args.checkpoint)
    oracle = toyasr.CtcOracle(model)
    manifest = load_manifest(args.manifest)
    utts = _load_attack_set(manifest, model)
    severity = _attack_severity(args.snr)
    out_root = Path(args.out)
    if args.mode == "pgd":
        cfg = adversarial.PgdConfig(snr_db=args.snr, steps=args.steps)
        pairs = []
        for utt in utts:
            delta = adversarial.pgd_attack(oracle, utt.audio, utt.text, cfg)
            pairs.append(
                (utt, AudioBuffer(utt.audio.samples + delta, utt.audio.sample_rate))
            )
        path = _write_attacked(pairs, out_root / "pgd" / str(severity), manifest, severity)
        print(path)
        return 0
    cfg = adversarial.UniversalConfig(
        snr_db=args.snr, e_max=args.e_max, i_max=args.i_max, t_sr=args.t_sr, t_cer=args.t_cer
    )
    perturbation = adversarial.universal_attack(oracle, utts, cfg)
    out_root.mkdir(parents=True, exist_ok=True)
    vector_path = out_root / "universal_v.wav"
    adversarial.save_universal(vector_path, perturbation, model.sample_rate)
    print(vector_path)
    print(
        f"epochs={perturbation.epochs} dev_success_rate={perturbation.success_rate:.3f}",
        file=sys.stderr,
    )
    if args.apply_manifest:
        target_manifest = load_manifest(args.apply_manifest)
        target = _load_attack_set(target_manifest, model)
        applied = adversarial.apply_universal(target, perturbation.v, args.snr)
        path = _write_attacked(
            applied, out_root / "universal" / str(severity), target_manifest, severity
        )
        print(path)
    return 0


def _cmd_evaluate(args) -> int:
    config = RunConfig.load(args.config)
    result = evaluate_run(config)
    print(result.results_csv)
    print(result.fairness_csv)
    print(
        f"requests_sent={result.requests_sent} cache_hits={result.cache_hits}",
        file=sys.stderr,
    )
    return 0


def _cmd_report(args) -> int:
    summary = summarize_results(args.results, group_by=args.group_by)
    print(format_summary(summary))
    if args.out:
        write_summary(args.out, summary)
    return 0


def _cmd_train_toy(args) -> int:
    model, utts = toyasr.train_toy(
        seed=args.seed, n_utts=args.n_utts, alphabet=args.alphabet
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    toyasr.save_model(out_dir / "checkpoint.json", model)
    manifest = write_corpus(utts, out_dir / "corpus")
    print(out_dir / "checkpoint.json")
    print(manifest.path)
    return 0


def cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"srb: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"srb: error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"srb: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
