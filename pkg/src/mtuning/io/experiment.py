"""Experiment manifests and the end-to-end pipeline.

A run goes open-word sampling, grouping, per-group tuning, combinatorial
inference, metrics.  Every stage wraps its failures with the stage name so a
diagnostic says where the pipeline stopped; the exception class is kept so
callers can still map it to an exit code.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..core import ConfigError, DataError, MTuningError, Rng
from ..ctt import STRATEGIES, UNKNOWN, CTTModel, GroupSpec, PredictionRecord, build_groups, tune_groups
from ..encoder import FrozenEncoder, PromptContext, TokenTable
from ..lexicon import Vocabulary, load_lexicon, sample_open_words
from ..metrics import DEFAULT_TAUS, MetricsReport, evaluate, histogram_csv
from ..synth import SynthSpec, generate, named_spec
from ..tuner import Dataset, TuneConfig
from . import formats


@dataclass(frozen=True)
class EncoderSpec:
    """Everything needed to rebuild the default frozen encoder bit-for-bit."""

    seed: int = 0
    hidden_dim: int | None = None
    input_gain: float = 1.0
    weight_noise: float = 0.1
    bias_std: float = 0.01

    def build(self, token_dim: int, output_dim: int) -> FrozenEncoder:
        return FrozenEncoder.from_seed(token_dim, output_dim, self.seed, self.hidden_dim,
                                       self.input_gain, self.weight_noise, self.bias_std)


@dataclass(frozen=True)
class ExperimentManifest:
    """One experiment: data source, vocabulary, tuning, grouping and evaluation settings.

    Exactly one of ``synth`` and ``data_dir`` names the data.  ``n_c=None``
    means one group holding every class.  ``seed`` drives open-word
    sampling; tuning, grouping and the encoder carry their own seeds.
    """

    name: str = "experiment"
    synth: SynthSpec | None = None
    data_dir: str | None = None
    tokens_path: str | None = None
    lexicon_path: str | None = None
    tune: TuneConfig = field(default_factory=TuneConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    n_c: int | None = None
    strategy: str = "id_order"
    group_seed: int = 0
    taus: tuple[float, ...] = DEFAULT_TAUS
    bins: int = 20
    exclude_test_names: bool = True
    resample_open_at_test: bool = False
    output_dir: str = "runs/experiment"
    seed: int = 0

    def __post_init__(self):
        if (self.synth is None) == (self.data_dir is None):
            raise ConfigError("manifest needs exactly one of 'synth' and 'data_dir'")
        if self.n_c is not None and self.n_c < 1:
            raise ConfigError("n_c must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        taus = tuple(float(t) for t in self.taus)
        if not taus or any(not 0.0 <= t <= 1.0 for t in taus):
            raise ConfigError("taus must be a non-empty list of values in [0, 1]")
        object.__setattr__(self, "taus", taus)
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.data_dir is not None and self.lexicon_path is None:
            raise ConfigError("file-backed manifests need a lexicon_path")

    def replace(self, **changes) -> "ExperimentManifest":
        return dataclasses.replace(self, **changes)

    def with_tune(self, **changes) -> "ExperimentManifest":
        return self.replace(tune=self.tune.replace(**changes))

    def to_dict(self, include_output=True) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["synth"] = None if self.synth is None else self.synth.to_dict()
        d["tune"] = dataclasses.asdict(self.tune)
        d["encoder"] = dataclasses.asdict(self.encoder)
        d["taus"] = list(self.taus)
        if not include_output:
            del d["output_dir"]
        return d

    def to_json(self, include_output=True) -> str:
        return json.dumps(self.to_dict(include_output), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentManifest":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown manifest keys {sorted(extra)}")
        d = dict(d)
        try:
            if d.get("synth") is not None:
                d["synth"] = SynthSpec.from_dict(d["synth"])
            if "tune" in d:
                d["tune"] = _tune_from_dict(d["tune"])
            if "encoder" in d:
                d["encoder"] = EncoderSpec(**d["encoder"])
            if "taus" in d:
                d["taus"] = tuple(d["taus"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"malformed manifest: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentManifest":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("manifest must be a JSON object")
        return cls.from_dict(d)

    def canonical_bytes(self) -> bytes:
        """Manifest bytes that enter the fingerprint; the output location is left out."""
        return self.to_json(include_output=False).encode("utf-8")


def _tune_from_dict(d: dict) -> TuneConfig:
    names = {f.name for f in dataclasses.fields(TuneConfig)}
    extra = set(d) - names
    if extra:
        raise ConfigError(f"unknown tune config keys {sorted(extra)}")
    return TuneConfig(**d)


def named_manifest(name: str, output_dir: str | None = None, **changes) -> ExperimentManifest:
    """The frozen manifests behind the two named benchmarks.

    ``small-osr`` runs M-Tuning with one group; ``large-osr`` runs CTT with
    groups of 20 classes.
    """
    if name == "small-osr":
        m = ExperimentManifest(name=name, synth=named_spec(name), n_c=None)
    elif name == "large-osr":
        m = ExperimentManifest(name=name, synth=named_spec(name), n_c=20)
    else:
        raise ConfigError(f"unknown named manifest {name!r}; choose small-osr or large-osr")
    m = m.replace(output_dir=output_dir or f"runs/{name}")
    return m.replace(**changes) if changes else m


NAMED_MANIFESTS = ("small-osr", "large-osr")


@contextlib.contextmanager
def stage(name: str):
    """Prefix failures inside the block with ``[name]``, keeping their class."""
    try:
        yield
    except MTuningError as exc:
        if str(exc).startswith("["):
            raise
        raise type(exc)(f"[{name}] {exc}") from exc
    except OSError as exc:
        raise DataError(f"[{name}] {exc}") from exc


@dataclass
class LoadedData:
    dataset: Dataset
    tokens: TokenTable
    lexicon: list[str]
    unknown_names: list[str]
    files: dict[str, bytes]
    truth_groups: np.ndarray | None = None


def load_data(manifest: ExperimentManifest) -> LoadedData:
    """Materialise the manifest's data exactly as it would read back from disk."""
    if manifest.synth is not None:
        synth = generate(manifest.synth)
        ds = synth.dataset
        ds = Dataset(formats.roundtrip_float32(ds.embeddings), ds.class_names, ds.labels, ds.splits)
        tokens = formats.roundtrip_float32(synth.token_table)
        lexicon = synth.lexicon if manifest.lexicon_path is None else load_lexicon(manifest.lexicon_path)
        unknown = synth.unknown_names
    else:
        root = Path(manifest.data_dir)
        ds = formats.read_dataset(root)
        tokens = formats.read_token_file(manifest.tokens_path or root / formats.TOKENS_FILE)
        lexicon = load_lexicon(manifest.lexicon_path)
        unknown_file = root / "unknown_classes.txt"
        unknown = formats.read_words(unknown_file) if unknown_file.exists() else []
    return LoadedData(ds, tokens, lexicon, unknown, formats.dataset_files(ds, tokens))


def dataset_fingerprint(files: dict[str, bytes]) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode("utf-8") + b"\0")
        h.update(len(files[name]).to_bytes(8, "little"))
        h.update(files[name])
    return h.hexdigest()


def run_fingerprint(data_fp: str, manifest: ExperimentManifest) -> str:
    h = hashlib.sha256()
    h.update(data_fp.encode("ascii"))
    h.update(manifest.canonical_bytes())
    h.update(__version__.encode("ascii"))
    return h.hexdigest()


def build_vocabulary(loaded: LoadedData, manifest: ExperimentManifest, n_open: int,
                     tag="open-words") -> Vocabulary:
    banned = loaded.unknown_names if manifest.exclude_test_names else ()
    words = sample_open_words(loaded.lexicon, loaded.dataset.class_names, banned, n_open,
                              Rng(manifest.seed).stream(tag))
    return Vocabulary(tuple(loaded.dataset.class_names), tuple(words))


@dataclass
class ExperimentResult:
    manifest: ExperimentManifest
    report: MetricsReport
    model: CTTModel
    records: list[PredictionRecord]
    output_dir: Path | None = None


def run_experiment(manifest: ExperimentManifest, write=True, tune_order=None) -> ExperimentResult:
    """Run every stage and, if ``write``, persist all artifacts to ``output_dir``."""
    with stage("load"):
        loaded = load_data(manifest)
        ds, tokens = loaded.dataset, loaded.tokens
        enc = manifest.encoder.build(tokens.dim, ds.embeddings.dim)
        checksum_before = enc.checksum()
    with stage("lexicon"):
        vocab = build_vocabulary(loaded, manifest, manifest.tune.n_open)
        missing = [w for w in vocab.words() if w not in tokens]
        if missing:
            raise DataError(f"{len(missing)} vocabulary words have no token, e.g. {missing[0]!r}")
    with stage("grouping"):
        n_c = ds.n_classes if manifest.n_c is None else manifest.n_c
        groups = build_groups(ds.class_names, n_c, manifest.strategy, manifest.group_seed, enc, tokens)
    with stage("tuning"):
        model = tune_groups(ds, manifest.tune, groups, vocab, enc, tokens, order=tune_order)
        if enc.checksum() != checksum_before:
            raise MTuningError("encoder parameters changed during tuning")
    with stage("inference"):
        if manifest.resample_open_at_test:
            model.vocab = build_vocabulary(loaded, manifest, manifest.tune.n_open, "open-words-test")
        records = []
        for split in ("test-known", "test-unknown"):
            ids, X, _ = ds.arrays(split)
            records.extend(model.infer(ids, X, tau_max=manifest.taus[0]))
    with stage("metrics"):
        report = evaluate(records, ds.labels, ds.n_classes, manifest.taus, manifest.bins,
                          n_open=model.vocab.n_open)
        report.dataset_fingerprint = dataset_fingerprint(loaded.files)
        report.fingerprint = run_fingerprint(report.dataset_fingerprint, manifest)
        report.extra = run_summary(model, records, ds, checksum_before)
    result = ExperimentResult(manifest, report, model, records)
    if write:
        with stage("persist"):
            result.output_dir = write_artifacts(result, loaded)
    return result


def run_summary(model: CTTModel, records, ds: Dataset, encoder_checksum: str) -> dict:
    """Run facts that go into the report next to the metrics."""
    owner = model.groups.group_of()
    known = [r for r in records if ds.labels[r.sample_id] is not None]
    hits = [r.i_opt == owner[ds.labels[r.sample_id]] for r in known]
    return {
        "encoder_checksum": encoder_checksum,
        "engine_version": __version__,
        "final_loss_by_group": [t[-1] if t else None for t in model.traces],
        "i_opt_true_group_rate": float(np.mean(hits)) if hits else None,
        "n_classes": model.groups.n_classes,
        "n_groups": model.groups.n_groups,
        "n_open": model.vocab.n_open,
    }


# Artifacts ---------------------------------------------------------------

MANIFEST_FILE = "manifest.json"
TUNE_CONFIG_FILE = "tune_config.txt"
GROUPS_FILE = "groups.txt"
OPEN_WORDS_FILE = "open_words.txt"
CONTEXTS_FILE = "contexts.json"
ENCODER_FILE = "encoder.json"
PREDICTIONS_FILE = "predictions.tsv"
REPORT_FILE = "report.json"
HISTOGRAM_FILE = "histogram.csv"


def contexts_to_json(contexts: list[PromptContext]) -> str:
    doc = {"contexts": [{"class_position": c.class_position, "group_index": c.group_index,
                         "vectors": c.vectors.tolist()} for c in contexts]}
    return json.dumps(doc, sort_keys=True) + "\n"


def contexts_from_json(text: str) -> list[PromptContext]:
    try:
        doc = json.loads(text)
        return [PromptContext(np.array(c["vectors"], dtype=np.float64), c["class_position"],
                              int(c["group_index"])) for c in doc["contexts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed contexts file: {exc}") from exc


def encoder_to_json(spec: EncoderSpec, enc: FrozenEncoder) -> str:
    doc = dataclasses.asdict(spec) | {"token_dim": enc.token_dim, "output_dim": enc.output_dim,
                                      "checksum": enc.checksum()}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def encoder_from_json(text: str) -> tuple[EncoderSpec, FrozenEncoder]:
    try:
        doc = json.loads(text)
        token_dim, output_dim, checksum = doc.pop("token_dim"), doc.pop("output_dim"), doc.pop("checksum")
        spec = EncoderSpec(**doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed encoder file: {exc}") from exc
    enc = spec.build(token_dim, output_dim)
    if enc.checksum() != checksum:
        raise DataError("rebuilt encoder does not match the recorded checksum")
    return spec, enc


PREDICTION_COLUMNS = ("sample_id", "i_opt", "p_max", "s_open", "msp_score", "argmax_label",
                      "label", "tau_max")


def predictions_to_tsv(records) -> str:
    lines = ["\t".join(PREDICTION_COLUMNS)]
    for r in records:
        lines.append("\t".join([
            r.sample_id, str(r.i_opt), ",".join(repr(p) for p in r.p_max), repr(r.s_open),
            repr(r.msp_score), str(r.argmax_label),
            "UNKNOWN" if r.label == UNKNOWN else str(r.label), repr(r.tau_max),
        ]))
    return "\n".join(lines) + "\n"


def predictions_from_tsv(text: str) -> list[PredictionRecord]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != PREDICTION_COLUMNS:
        raise DataError("predictions file has an unexpected header")
    out = []
    for n, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        f = line.split("\t")
        if len(f) != len(PREDICTION_COLUMNS):
            raise DataError(f"predictions line {n}: expected {len(PREDICTION_COLUMNS)} fields")
        try:
            out.append(PredictionRecord(
                sample_id=f[0], i_opt=int(f[1]), p_max=tuple(float(x) for x in f[2].split(",")),
                s_open=float(f[3]), msp_score=float(f[4]), argmax_label=int(f[5]),
                label=UNKNOWN if f[6] == "UNKNOWN" else int(f[6]), tau_max=float(f[7]),
            ))
        except ValueError as exc:
            raise DataError(f"predictions line {n}: {exc}") from exc
    return out


def write_model(directory, model: CTTModel, tune: TuneConfig, encoder_spec: EncoderSpec):
    d = Path(directory)
    formats.atomic_write_text(d / TUNE_CONFIG_FILE, tune.to_text())
    formats.atomic_write_text(d / GROUPS_FILE, model.groups.to_text())
    formats.write_words(d / OPEN_WORDS_FILE, model.vocab.open, header=f"n_open={model.vocab.n_open}")
    formats.atomic_write_text(d / CONTEXTS_FILE, contexts_to_json(model.contexts))
    formats.atomic_write_text(d / ENCODER_FILE, encoder_to_json(encoder_spec, model.encoder))


def read_model(directory, class_names, tokens: TokenTable) -> CTTModel:
    d = Path(directory)
    tune = TuneConfig.from_text(formats.read_text(d / TUNE_CONFIG_FILE))
    groups = GroupSpec.from_text(formats.read_text(d / GROUPS_FILE))
    open_words = formats.read_words(d / OPEN_WORDS_FILE)
    contexts = contexts_from_json(formats.read_text(d / CONTEXTS_FILE))
    _, enc = encoder_from_json(formats.read_text(d / ENCODER_FILE))
    if len(contexts) != groups.n_groups:
        raise DataError(f"{len(contexts)} contexts for {groups.n_groups} groups")
    if groups.n_classes != len(class_names):
        raise DataError("group spec does not cover the dataset's classes")
    return CTTModel(groups, contexts, Vocabulary(tuple(class_names), tuple(open_words)), enc,
                    tokens, tune.temperature)


def write_report(directory, report: MetricsReport):
    d = Path(directory)
    formats.atomic_write_text(d / REPORT_FILE, report.to_json())
    formats.atomic_write_text(d / HISTOGRAM_FILE, histogram_csv(report.histogram))


def read_report(path) -> MetricsReport:
    return MetricsReport.from_json(formats.read_text(path))


def write_artifacts(result: ExperimentResult, loaded: LoadedData) -> Path:
    out = Path(result.manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.atomic_write_text(out / MANIFEST_FILE, result.manifest.to_json())
    write_model(out, result.model, result.manifest.tune, result.manifest.encoder)
    formats.atomic_write_text(out / PREDICTIONS_FILE, predictions_to_tsv(result.records))
    write_report(out, result.report)
    return out
