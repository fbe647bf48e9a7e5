"""Manifest handling, scenario materialization, adapter transcription,
and run evaluation down to the result tables.

Everything here is deliberately deterministic: per-utterance seeds are
hash-derived, output rows are sorted, floats are fixed-format, so two
runs with the same seed produce byte-identical CSVs.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import queue
import shlex
import subprocess
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .audio import AudioBuffer, ImpulseResponse, read_wav, resample, wav_file_bytes, write_wav
from .errors import AdapterError, ConfigError, ManifestError, ValidationError
from .metrics import (
    WORD,
    DifficultyTable,
    EvalRecord,
    corpus_error_rate,
    lwerr,
    nwerd,
    save_records,
    score_pair,
    werd,
)
from .perturb import (
    NoiseBank,
    PerturbationKind,
    PerturbationSpec,
    apply_perturbation,
    derive_seed,
    load_rir_bank,
    load_severity_table,
    parse_kind,
    severity_params,
)

HARNESS_SAMPLE_RATE = 16000

CLEAN_SCENARIO = "clean"

ADVERSARIAL_KINDS = ("pgd", "universal")

# results.csv / fairness.csv column orders are part of the output contract
RESULTS_COLUMNS = (
    "model",
    "dataset",
    "scenario_kind",
    "severity",
    "n_utts",
    "wer",
    "werd",
    "difficulty",
    "nwerd",
)
FAIRNESS_COLUMNS = (
    "model",
    "dataset",
    "scenario_kind",
    "severity",
    "wer_m",
    "wer_f",
    "lwerr",
)

# scenario kind -> row name of the shipped difficulty table
_DIFFICULTY_ROW_OF = {
    "gaussian_noise": "gnoise",
    "env_noise": "env noise",
    "speed_up": "speedup",
    "slow_down": "slowdown",
    "tempo_up": "tempo up",
    "tempo_down": "tempo down",
    "pitch_up": "pitch up",
    "pitch_down": "pitch down",
    "real_rir": "real rir",
    "universal": "universal adv",
}

# reporting categories in presentation order
CATEGORIES = (
    ("white noise", ("gaussian_noise",)),
    ("environmental noise", ("env_noise", "music", "crosstalk")),
    ("spatial", ("rir", "real_rir", "echo")),
    (
        "special effects",
        (
            "bass",
            "treble",
            "phaser",
            "tempo_up",
            "tempo_down",
            "speed_up",
            "slow_down",
            "pitch_up",
            "pitch_down",
            "chorus",
            "tremolo",
        ),
    ),
    ("audio processing", ("resample", "gain", "lowpass", "highpass")),
    ("adversarial", ADVERSARIAL_KINDS),
)

_CATEGORY_OF = {kind: name for name, kinds in CATEGORIES for kind in kinds}


def category_of(scenario_kind: str) -> Optional[str]:
    return _CATEGORY_OF.get(scenario_kind)


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class Utterance:
    """One manifest row; audio_path is absolute after loading."""

    id: str
    audio_path: str
    text: str
    speaker_id: Optional[str] = None
    gender: Optional[str] = None
    language: Optional[str] = None
    dataset: Optional[str] = None

    def __post_init__(self):
        if self.gender not in (None, "m", "f"):
            raise ManifestError(
                f"utterance {self.id!r}: gender must be 'm', 'f', or null, got {self.gender!r}"
            )


@dataclass(frozen=True)
class Manifest:
    utterances: tuple[Utterance, ...]
    path: Optional[Path] = None

    def __iter__(self):
        return iter(self.utterances)

    def __len__(self):
        return len(self.utterances)


_MANIFEST_FIELDS = frozenset(
    ("id", "audio_path", "text", "speaker_id", "gender", "language", "dataset")
)


def load_manifest(path) -> Manifest:
    """Read a JSONL manifest; relative audio paths resolve against it."""
    path = Path(path)
    base = path.parent
    default_dataset = path.stem if path.stem != "manifest" else path.parent.name
    utterances = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise ManifestError(f"{path}:{lineno}: row must be an object")
            missing = {"id", "audio_path", "text"} - row.keys()
            if missing:
                raise ManifestError(
                    f"{path}:{lineno}: missing required fields {sorted(missing)}"
                )
            unknown = row.keys() - _MANIFEST_FIELDS
            if unknown:
                raise ManifestError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
            if row["id"] in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance id {row['id']!r}")
            seen.add(row["id"])
            audio_path = Path(row["audio_path"])
            if not audio_path.is_absolute():
                audio_path = base / audio_path
            try:
                utterances.append(
                    Utterance(
                        id=str(row["id"]),
                        audio_path=str(audio_path),
                        text=str(row["text"]),
                        speaker_id=row.get("speaker_id"),
                        gender=row.get("gender"),
                        language=row.get("language"),
                        dataset=row.get("dataset") or default_dataset,
                    )
                )
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return Manifest(tuple(utterances), path=path)


def save_manifest(path, utterances: Iterable[Utterance]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utterances:
            row = {k: v for k, v in dataclasses.asdict(utt).items() if v is not None}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def write_corpus(utts: Sequence, out_dir, dataset: str = "toy") -> Manifest:
    """Write in-memory utterances (id/text/audio/gender) as WAVs plus a manifest.

    Audio paths are stored relative to the manifest so the corpus
    directory stays relocatable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for utt in utts:
        write_wav(out_dir / f"{utt.id}.wav", utt.audio)
        rows.append(
            Utterance(
                id=utt.id,
                audio_path=f"{utt.id}.wav",
                text=utt.text,
                gender=getattr(utt, "gender", None),
                language=getattr(utt, "language", None),
                dataset=dataset,
            )
        )
    manifest_path = save_manifest(out_dir / "manifest.jsonl", rows)
    return load_manifest(manifest_path)


# ---------------------------------------------------------------------------
# scenario materialization


@dataclass(frozen=True)
class MaterializeResult:
    manifest: Manifest
    written: int
    skipped: int
    failures: tuple[dict, ...]


def materialize_scenario(
    manifest: Manifest,
    spec: PerturbationSpec,
    out_dir,
    noise_bank: Optional[NoiseBank] = None,
    rir_bank: Optional[Sequence[ImpulseResponse]] = None,
) -> MaterializeResult:
    """Render one perturbation cell of a manifest to disk.

    Output lands in out_dir/<kind>/<severity>/ with a derived manifest.
    Each utterance gets a seed hashed from (run seed, id, kind, severity),
    so results do not depend on processing order.  Files whose bytes
    already match are left untouched, which keeps reruns cheap and
    timestamps stable.  Per-utterance failures are recorded and skipped
    rather than aborting the whole scenario.
    """
    out_dir = Path(out_dir) / spec.kind.value / str(spec.severity)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = []
    written = 0
    skipped = 0
    for utt in manifest:
        wav_path = out_dir / f"{utt.id}.wav"
        try:
            audio = read_wav(utt.audio_path)
            if audio.sample_rate != HARNESS_SAMPLE_RATE:
                audio = resample(audio, HARNESS_SAMPLE_RATE)
            utt_spec = dataclasses.replace(
                spec, seed=derive_seed(spec.seed, utt.id, spec.kind, spec.severity)
            )
            perturbed = apply_perturbation(utt_spec, audio, noise_bank, rir_bank)
            data = wav_file_bytes(perturbed)
        except Exception as exc:
            failures.append({"id": utt.id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        digest = hashlib.sha256(data).hexdigest()
        if wav_path.exists() and hashlib.sha256(wav_path.read_bytes()).hexdigest() == digest:
            skipped += 1
        else:
            wav_path.write_bytes(data)
            written += 1
        # stored relative to the derived manifest so the tree relocates
        rows.append(dataclasses.replace(utt, audio_path=f"{utt.id}.wav"))
    if failures:
        with open(out_dir / "failures.jsonl", "w", encoding="utf-8") as fh:
            for failure in failures:
                fh.write(json.dumps(failure, sort_keys=True) + "\n")
    manifest_path = save_manifest(out_dir / "manifest.jsonl", rows)
    return MaterializeResult(
        manifest=load_manifest(manifest_path),
        written=written,
        skipped=skipped,
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# adapter transcription


@dataclass(frozen=True)
class ModelAdapter:
    """An external recognizer reached over the line-JSON pipe protocol."""

    model_id: str
    command: tuple[str, ...]
    timeout_s: float = 60.0

    @classmethod
    def from_config(cls, row: Mapping) -> "ModelAdapter":
        command = row.get("command")
        if isinstance(command, str):
            command = tuple(shlex.split(command))
        elif isinstance(command, (list, tuple)):
            command = tuple(str(part) for part in command)
        else:
            raise ConfigError(f"model {row.get('id')!r}: command must be a string or list")
        if not command:
            raise ConfigError(f"model {row.get('id')!r}: empty command")
        if "id" not in row:
            raise ConfigError("model entry missing 'id'")
        return cls(
            model_id=str(row["id"]),
            command=command,
            timeout_s=float(row.get("timeout_s", 60.0)),
        )


class TranscriptCache:
    """Append-only JSONL cache keyed by (model_id, audio content hash).

    Entries are flushed as they arrive, so a crashed adapter run leaves
    everything transcribed so far reusable.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._entries: dict[tuple[str, str], str] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    self._entries[(row["model_id"], row["sha256"])] = row["text"]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def get(self, model_id: str, digest: str) -> Optional[str]:
        return self._entries.get((model_id, digest))

    def put(self, model_id: str, digest: str, text: str) -> None:
        self._entries[(model_id, digest)] = text
        self._fh.write(
            json.dumps(
                {"model_id": model_id, "sha256": digest, "text": text}, sort_keys=True
            )
            + "\n"
        )
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class TranscribeResult:
    texts: dict[str, str]
    requests_sent: int
    cache_hits: int


def _audio_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def transcribe(
    adapter: ModelAdapter,
    manifest: Manifest,
    cache: Optional[TranscriptCache] = None,
) -> TranscribeResult:
    """Transcribe a manifest, consulting the cache by audio content hash.

    Only cache misses are sent to the adapter subprocess.  Requests are
    line-JSON objects {"id", "audio"}; responses {"id", "text"} may come
    back in any order.  A response gap longer than the adapter timeout,
    an early exit, or a malformed line raises AdapterError; responses
    received up to that point are already cached.
    """
    digests = {utt.id: _audio_digest(utt.audio_path) for utt in manifest}
    texts: dict[str, str] = {}
    misses = []
    for utt in manifest:
        cached = cache.get(adapter.model_id, digests[utt.id]) if cache else None
        if cached is not None:
            texts[utt.id] = cached
        else:
            misses.append(utt)
    cache_hits = len(texts)
    if not misses:
        return TranscribeResult(texts=texts, requests_sent=0, cache_hits=cache_hits)

    proc = subprocess.Popen(
        list(adapter.command),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=None,
        text=True,
    )

    def feed():
        try:
            for utt in misses:
                proc.stdin.write(
                    json.dumps({"id": utt.id, "audio": utt.audio_path}) + "\n"
                )
                proc.stdin.flush()
            proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass  # reader side reports the failure via missing responses

    lines: queue.Queue = queue.Queue()

    def drain():
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    threading.Thread(target=feed, daemon=True).start()
    threading.Thread(target=drain, daemon=True).start()

    pending = {utt.id: utt for utt in misses}
    try:
        while pending:
            try:
                line = lines.get(timeout=adapter.timeout_s)
            except queue.Empty:
                raise AdapterError(
                    f"adapter {adapter.model_id!r} sent no response for "
                    f"{adapter.timeout_s:g}s with {len(pending)} utterances pending"
                ) from None
            if line is None:
                raise AdapterError(
                    f"adapter {adapter.model_id!r} exited with "
                    f"{len(pending)} utterances unanswered "
                    f"(first: {sorted(pending)[:3]})"
                )
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                utt_id, text = row["id"], row["text"]
            except (json.JSONDecodeError, TypeError, KeyError):
                raise AdapterError(
                    f"adapter {adapter.model_id!r} sent a malformed response line: {line!r}"
                ) from None
            if utt_id not in pending:
                raise AdapterError(
                    f"adapter {adapter.model_id!r} answered unknown or duplicate id {utt_id!r}"
                )
            del pending[utt_id]
            texts[utt_id] = str(text)
            if cache:
                cache.put(adapter.model_id, digests[utt_id], str(text))
    finally:
        if pending:
            proc.kill()
        proc.wait(timeout=10)

    return TranscribeResult(
        texts=texts, requests_sent=len(misses), cache_hits=cache_hits
    )


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class ScenarioEntry:
    """Either a cell to materialize (kind + severity) or a pre-rendered
    manifest evaluated under a scenario label."""

    kind: Optional[PerturbationKind]
    severity: Optional[int]
    name: str
    manifest: Optional[Path] = None


@dataclass(frozen=True)
class RunConfig:
    manifests: tuple[Path, ...]
    models: tuple[ModelAdapter, ...]
    scenarios: tuple[ScenarioEntry, ...]
    out_dir: Path
    run_seed: int = 0
    severity_table: Optional[Path] = None
    difficulty_table: Optional[Path] = None
    noise_dir: Optional[Path] = None
    music_dir: Optional[Path] = None
    speech_dir: Optional[Path] = None
    rir_dir: Optional[Path] = None

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Parse a TOML or JSON run configuration.

        Relative paths in the file resolve against its directory.
        """
        path = Path(path)
        try:
            if path.suffix.lower() == ".toml":
                try:
                    import tomllib as toml_parser
                except ModuleNotFoundError:
                    import tomli as toml_parser

                raw = toml_parser.loads(path.read_text("utf-8"))
            else:
                raw = json.loads(path.read_text("utf-8"))
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise ConfigError(f"{path}: cannot parse config ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        base = path.parent

        def respath(value) -> Path:
            p = Path(value)
            return p if p.is_absolute() else base / p

        manifests = []
        for entry in raw.get("manifests", ()):
            if isinstance(entry, str):
                manifests.append(respath(entry))
            elif isinstance(entry, dict) and "path" in entry:
                manifests.append(respath(entry["path"]))
            else:
                raise ConfigError(f"{path}: manifest entries need a 'path'")
        if not manifests:
            raise ConfigError(f"{path}: at least one manifest is required")

        models = [ModelAdapter.from_config(row) for row in raw.get("models", ())]
        if not models:
            raise ConfigError(f"{path}: at least one model is required")

        scenarios = []
        for row in raw.get("scenarios", ()):
            if not isinstance(row, dict):
                raise ConfigError(f"{path}: scenario entries must be objects")
            kind = None
            if "kind" in row:
                token = str(row["kind"])
                if token in ADVERSARIAL_KINDS:
                    kind = None
                    name = row.get("name", token)
                else:
                    kind = parse_kind(token)
                    name = row.get("name", kind.value)
            elif "name" in row:
                name = str(row["name"])
            else:
                raise ConfigError(f"{path}: scenario entries need a 'kind' or 'name'")
            severity = row.get("severity")
            if severity is not None:
                severity = int(severity)
            manifest = respath(row["manifest"]) if "manifest" in row else None
            if manifest is None and kind is None:
                raise ConfigError(
                    f"{path}: scenario {name!r} needs a manifest to evaluate "
                    "(only registry kinds can be materialized here)"
                )
            if manifest is None and severity is None:
                raise ConfigError(f"{path}: scenario {name!r} needs a severity")
            scenarios.append(
                ScenarioEntry(kind=kind, severity=severity, name=str(name), manifest=manifest)
            )
        if "out_dir" not in raw:
            raise ConfigError(f"{path}: out_dir is required")

        def optpath(key) -> Optional[Path]:
            return respath(raw[key]) if key in raw else None

        banks = raw.get("banks", {})

        def bankpath(key) -> Optional[Path]:
            return respath(banks[key]) if key in banks else None

        return cls(
            manifests=tuple(manifests),
            models=tuple(models),
            scenarios=tuple(scenarios),
            out_dir=respath(raw["out_dir"]),
            run_seed=int(raw.get("run_seed", 0)),
            severity_table=optpath("severity_table"),
            difficulty_table=optpath("difficulty_table"),
            noise_dir=bankpath("noise_dir"),
            music_dir=bankpath("music_dir"),
            speech_dir=bankpath("speech_dir"),
            rir_dir=bankpath("rir_dir"),
        )


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class RunResult:
    results_csv: Path
    fairness_csv: Path
    records_path: Path
    requests_sent: int
    cache_hits: int


def _severity_sort_key(severity: Optional[int]) -> int:
    return -1 if severity is None else severity


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Mapping[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in columns) + "\n")


def build_results_rows(
    records: Sequence[EvalRecord], difficulty: DifficultyTable
) -> list[dict]:
    """Aggregate per-utterance records into sorted per-cell result rows.

    Every (model, dataset) needs a clean cell to difference against;
    adversarial cells report the raw difference only, and a missing
    difficulty entry drops the normalized column with a warning.
    """
    cells: dict[tuple, list[EvalRecord]] = {}
    for record in records:
        key = (record.model_id, record.dataset, record.scenario_kind, record.severity)
        cells.setdefault(key, []).append(record)
    clean_cells: dict[tuple, list[EvalRecord]] = {}
    for (model, dataset, kind, severity), cell in cells.items():
        if kind == CLEAN_SCENARIO:
            clean_cells[(model, dataset)] = cell
    rows = []
    for key in sorted(
        cells, key=lambda k: (k[0], str(k[1]), k[2], _severity_sort_key(k[3]))
    ):
        model, dataset, kind, severity = key
        cell = cells[key]
        wer = corpus_error_rate(cell)
        row = {
            "model": model,
            "dataset": dataset,
            "scenario_kind": kind,
            "severity": "" if severity is None else str(severity),
            "n_utts": str(len({r.utterance_id for r in cell})),
            "wer": _fmt(wer),
            "werd": "",
            "difficulty": "",
            "nwerd": "",
        }
        if kind != CLEAN_SCENARIO:
            if (model, dataset) not in clean_cells:
                raise ValidationError(
                    f"no clean baseline for model {model!r} on dataset {dataset!r}; "
                    "every evaluated dataset needs a clean pass"
                )
            werd_value = werd(cell, clean_cells[(model, dataset)])
            row["werd"] = _fmt(werd_value)
            if kind not in ADVERSARIAL_KINDS:
                row_name = _DIFFICULTY_ROW_OF.get(kind, kind)
                score = difficulty.lookup(row_name, severity)
                if score is None:
                    warnings.warn(
                        f"no difficulty entry for scenario {kind!r} severity "
                        f"{severity}; normalized column omitted",
                        stacklevel=2,
                    )
                else:
                    row["difficulty"] = _fmt(score)
                    row["nwerd"] = _fmt(nwerd(werd_value, score))
        rows.append(row)
    return rows


def build_fairness_rows(records: Sequence[EvalRecord]) -> list[dict]:
    """Per-cell male/female error rates and the log ratio, sorted."""
    cells: dict[tuple, list[EvalRecord]] = {}
    for record in records:
        key = (record.model_id, record.dataset, record.scenario_kind, record.severity)
        cells.setdefault(key, []).append(record)
    rows = []
    for key in sorted(
        cells, key=lambda k: (k[0], str(k[1]), k[2], _severity_sort_key(k[3]))
    ):
        model, dataset, kind, severity = key
        cell = cells[key]
        female = [r for r in cell if r.gender == "f"]
        male = [r for r in cell if r.gender == "m"]
        ratio = lwerr(female, male)
        rows.append(
            {
                "model": model,
                "dataset": dataset,
                "scenario_kind": kind,
                "severity": "" if severity is None else str(severity),
                "wer_m": _fmt(corpus_error_rate(male)) if male else "",
                "wer_f": _fmt(corpus_error_rate(female)) if female else "",
                "lwerr": _fmt(ratio),
            }
        )
    return rows


def evaluate_run(config: RunConfig) -> RunResult:
    """Run the whole evaluation: materialize, transcribe, score, tabulate.

    The clean pass over every source manifest is always included.  Registry
    scenarios are materialized under out_dir/audio (reusing byte-identical
    files), pre-rendered scenario manifests are evaluated as-is.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    severity_table = (
        load_severity_table(config.severity_table) if config.severity_table else None
    )
    difficulty = (
        DifficultyTable.load(config.difficulty_table)
        if config.difficulty_table
        else DifficultyTable.builtin()
    )
    noise_banks: dict[PerturbationKind, Optional[NoiseBank]] = {
        PerturbationKind.ENV_NOISE: NoiseBank.from_dir(config.noise_dir)
        if config.noise_dir
        else None,
        PerturbationKind.MUSIC: NoiseBank.from_dir(config.music_dir)
        if config.music_dir
        else None,
        PerturbationKind.CROSSTALK: NoiseBank.from_dir(config.speech_dir)
        if config.speech_dir
        else None,
    }
    rir_bank = load_rir_bank(config.rir_dir) if config.rir_dir else None

    source_manifests = [load_manifest(p) for p in config.manifests]
    passes: list[tuple[str, Optional[int], Manifest]] = [
        (CLEAN_SCENARIO, None, m) for m in source_manifests
    ]
    for entry in config.scenarios:
        if entry.manifest is not None:
            passes.append((entry.name, entry.severity, load_manifest(entry.manifest)))
            continue
        params = (
            severity_params(entry.kind, entry.severity, severity_table)
            if severity_table
            else None
        )
        for manifest in source_manifests:
            spec = PerturbationSpec(
                entry.kind, entry.severity, params=params, seed=config.run_seed
            )
            result = materialize_scenario(
                manifest,
                spec,
                out_dir / "audio",
                noise_bank=noise_banks.get(entry.kind),
                rir_bank=rir_bank,
            )
            passes.append((entry.name, entry.severity, result.manifest))

    records: list[EvalRecord] = []
    requests_sent = 0
    cache_hits = 0
    with TranscriptCache(out_dir / "transcripts.jsonl") as cache:
        for adapter in config.models:
            for kind_label, severity, manifest in passes:
                result = transcribe(adapter, manifest, cache)
                requests_sent += result.requests_sent
                cache_hits += result.cache_hits
                for utt in manifest:
                    ed, ref_len = score_pair(utt.text, result.texts[utt.id], WORD)
                    records.append(
                        EvalRecord(
                            utterance_id=utt.id,
                            model_id=adapter.model_id,
                            scenario_kind=kind_label,
                            severity=severity,
                            edit_distance=ed,
                            ref_len=ref_len,
                            gender=utt.gender,
                            language=utt.language,
                            dataset=utt.dataset,
                        )
                    )

    records_path = out_dir / "records.jsonl"
    save_records(records_path, records)
    results_csv = out_dir / "results.csv"
    fairness_csv = out_dir / "fairness.csv"
    _write_csv(results_csv, RESULTS_COLUMNS, build_results_rows(records, difficulty))
    _write_csv(fairness_csv, FAIRNESS_COLUMNS, build_fairness_rows(records))
    with open(out_dir / "run_stats.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"requests_sent": requests_sent, "cache_hits": cache_hits},
            fh,
            indent=2,
            sort_keys=True,
        )
    return RunResult(
        results_csv=results_csv,
        fairness_csv=fairness_csv,
        records_path=records_path,
        requests_sent=requests_sent,
        cache_hits=cache_hits,
    )


# ---------------------------------------------------------------------------
# reporting


def _read_csv(path) -> list[dict]:
    import csv

    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def summarize_results(results_csv, group_by: str = "kind") -> list[dict]:
    """Collapse result rows into per-group means.

    group_by 'kind' averages the severity cells of each scenario kind;
    'category' further pools kinds into their presentation families.
    Clean rows are excluded; empty cells do not enter the means.
    """
    if group_by not in ("kind", "category"):
        raise ValidationError(f"group_by must be 'kind' or 'category', got {group_by!r}")
    rows = _read_csv(results_csv)
    groups: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for row in rows:
        kind = row["scenario_kind"]
        if kind == CLEAN_SCENARIO:
            continue
        if group_by == "category":
            group = category_of(kind) or "other"
        else:
            group = kind
        key = (row["model"], row["dataset"], group)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    if group_by == "category":
        rank = {name: i for i, (name, _) in enumerate(CATEGORIES)}
        order.sort(key=lambda k: (k[0], k[1], rank.get(k[2], len(rank)), k[2]))
    else:
        order.sort()

    def mean_of(cell_rows: list[dict], column: str) -> str:
        values = [float(r[column]) for r in cell_rows if r[column] != ""]
        return f"{sum(values) / len(values):.6f}" if values else ""

    summary = []
    for model, dataset, group in order:
        cell_rows = groups[(model, dataset, group)]
        summary.append(
            {
                "model": model,
                "dataset": dataset,
                "group": group,
                "n_cells": str(len(cell_rows)),
                "wer": mean_of(cell_rows, "wer"),
                "werd": mean_of(cell_rows, "werd"),
                "nwerd": mean_of(cell_rows, "nwerd"),
            }
        )
    return summary


SUMMARY_COLUMNS = ("model", "dataset", "group", "n_cells", "wer", "werd", "nwerd")


def write_summary(path, summary: Sequence[Mapping[str, str]]) -> Path:
    path = Path(path)
    _write_csv(path, SUMMARY_COLUMNS, summary)
    return path


def format_summary(summary: Sequence[Mapping[str, str]]) -> str:
    """Aligned text table of a summary, for terminal display."""
    widths = {c: len(c) for c in SUMMARY_COLUMNS}
    for row in summary:
        for c in SUMMARY_COLUMNS:
            widths[c] = max(widths[c], len(str(row[c])))
    lines = ["  ".join(c.ljust(widths[c]) for c in SUMMARY_COLUMNS)]
    for row in summary:
        lines.append("  ".join(str(row[c]).ljust(widths[c]) for c in SUMMARY_COLUMNS))
    return "\n".join(lines)
