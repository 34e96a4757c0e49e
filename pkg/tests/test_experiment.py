import json

import numpy as np
import pytest

from mtuning.core import ConfigError, DataError, NumericError
from mtuning.ctt import GroupSpec
from mtuning.io import experiment as ex
from mtuning.io import formats
from mtuning.metrics import compare_reports
from mtuning.synth import SynthSpec, named_spec
from mtuning.tuner import TuneConfig

QUICK = SynthSpec(n_known_classes=4, n_unknown_classes=3, train_per_class=20, test_per_class=10,
                  embed_dim=16, token_dim=16, lexicon_size=40, seed=1)


def quick_manifest(tmp_path, **kw):
    m = ex.ExperimentManifest(name="quick", synth=QUICK, tune=TuneConfig(epochs=2, n_open=5),
                              n_c=2, output_dir=str(tmp_path / "out"))
    return m.replace(**kw)


def test_manifest_roundtrip_lossless(tmp_path):
    m = quick_manifest(tmp_path, taus=(0.5, 0.9), strategy="semantic",
                       tune=TuneConfig(learning_rate=0.1 + 0.2, shots_per_class=16))
    back = ex.ExperimentManifest.from_json(m.to_json())
    assert back == m and back.to_json() == m.to_json()
    for name in ex.NAMED_MANIFESTS:
        n = ex.named_manifest(name)
        assert ex.ExperimentManifest.from_json(n.to_json()) == n


def test_manifest_validation(tmp_path):
    with pytest.raises(ConfigError):
        ex.ExperimentManifest()
    with pytest.raises(ConfigError):
        ex.ExperimentManifest(synth=QUICK, data_dir="x")
    with pytest.raises(ConfigError):
        quick_manifest(tmp_path, n_c=0)
    with pytest.raises(ConfigError):
        quick_manifest(tmp_path, taus=(1.5,))
    with pytest.raises(ConfigError):
        ex.ExperimentManifest.from_json('{"synth": null, "bogus": 1}')
    with pytest.raises(ConfigError):
        ex.ExperimentManifest.from_json("[1]")
    with pytest.raises(ConfigError):
        ex.ExperimentManifest.from_json("{not json")
    with pytest.raises(ConfigError):
        ex.named_manifest("tiny")


def test_run_writes_every_artifact(tmp_path):
    res = ex.run_experiment(quick_manifest(tmp_path))
    out = res.output_dir
    for name in (ex.MANIFEST_FILE, ex.TUNE_CONFIG_FILE, ex.GROUPS_FILE, ex.OPEN_WORDS_FILE,
                 ex.CONTEXTS_FILE, ex.ENCODER_FILE, ex.PREDICTIONS_FILE, ex.REPORT_FILE,
                 ex.HISTOGRAM_FILE):
        assert (out / name).exists(), name
    assert ex.ExperimentManifest.from_json((out / ex.MANIFEST_FILE).read_text()) == res.manifest
    assert TuneConfig.from_text((out / ex.TUNE_CONFIG_FILE).read_text()) == res.manifest.tune
    assert GroupSpec.from_text((out / ex.GROUPS_FILE).read_text()) == res.model.groups
    assert ex.predictions_from_tsv((out / ex.PREDICTIONS_FILE).read_text()) == res.records
    assert ex.read_report(out / ex.REPORT_FILE) == res.report
    ctxs = ex.contexts_from_json((out / ex.CONTEXTS_FILE).read_text())
    for a, b in zip(ctxs, res.model.contexts):
        assert np.array_equal(a.vectors, b.vectors)
    assert res.report.extra["n_groups"] == 2 and res.report.extra["n_open"] == 5
    # open words never include unknown class names
    assert not set(res.model.vocab.open) & {f"unknown_{i:04d}" for i in range(3)}


def test_reloaded_model_reproduces_predictions(tmp_path):
    res = ex.run_experiment(quick_manifest(tmp_path))
    loaded = ex.load_data(res.manifest)
    model = ex.read_model(res.output_dir, loaded.dataset.class_names, loaded.tokens)
    recs = []
    for split in ("test-known", "test-unknown"):
        ids, X, _ = loaded.dataset.arrays(split)
        recs += model.infer(ids, X, res.manifest.taus[0])
    assert recs == res.records


def test_degenerate_open_score_without_open_words(tmp_path):
    res = ex.run_experiment(quick_manifest(tmp_path).with_tune(n_open=0), write=False)
    r = res.report
    assert r.auroc_open_score is None and r.auroc_open_score_degenerate
    assert 0.0 <= r.auroc_msp <= 1.0
    assert all(rec.s_open == 0.0 for rec in res.records)


def test_same_manifest_same_bytes(tmp_path):
    a = ex.run_experiment(quick_manifest(tmp_path, output_dir=str(tmp_path / "a")))
    b = ex.run_experiment(quick_manifest(tmp_path, output_dir=str(tmp_path / "b")))
    for name in (ex.REPORT_FILE, ex.PREDICTIONS_FILE, ex.CONTEXTS_FILE, ex.HISTOGRAM_FILE):
        assert (a.output_dir / name).read_bytes() == (b.output_dir / name).read_bytes()


def test_fingerprints(tmp_path):
    a = ex.run_experiment(quick_manifest(tmp_path), write=False).report
    b = ex.run_experiment(quick_manifest(tmp_path).with_tune(n_open=0), write=False).report
    moved = ex.run_experiment(quick_manifest(tmp_path, output_dir="elsewhere"), write=False).report
    assert a.dataset_fingerprint == b.dataset_fingerprint
    assert a.fingerprint != b.fingerprint
    assert a.fingerprint == moved.fingerprint
    delta = compare_reports(b, a)
    assert "auroc_open_score" in delta["delta"] and delta["delta"]["best_auroc"] is not None
    other = ex.run_experiment(quick_manifest(tmp_path, synth=QUICK.replace(seed=2)), write=False).report
    with pytest.raises(DataError):
        compare_reports(a, other)


def test_stage_tagged_errors(tmp_path):
    with pytest.raises(DataError, match=r"^\[lexicon\]"):
        ex.run_experiment(quick_manifest(tmp_path).with_tune(n_open=10_000), write=False)
    with pytest.raises(DataError, match=r"^\[load\]"):
        ex.run_experiment(ex.ExperimentManifest(data_dir=str(tmp_path / "nope"),
                                                lexicon_path=str(tmp_path / "lex.txt")), write=False)


def test_numeric_failure_is_stage_tagged(tmp_path, monkeypatch):
    import mtuning.io.experiment as mod

    def boom(*a, **k):
        raise NumericError("non-finite loss")

    monkeypatch.setattr(mod, "tune_groups", boom)
    with pytest.raises(NumericError, match=r"^\[tuning\]"):
        ex.run_experiment(quick_manifest(tmp_path), write=False)


def test_file_backed_manifest_matches_synth(tmp_path):
    synth = quick_manifest(tmp_path)
    loaded = ex.load_data(synth)
    data_dir = tmp_path / "data"
    formats.write_dataset(data_dir, loaded.dataset, loaded.tokens, loaded.lexicon)
    formats.write_words(data_dir / "unknown_classes.txt", loaded.unknown_names)
    files = synth.replace(synth=None, data_dir=str(data_dir),
                          lexicon_path=str(data_dir / formats.LEXICON_FILE))
    a = ex.run_experiment(synth, write=False)
    b = ex.run_experiment(files, write=False)
    assert a.records == b.records
    assert a.report.dataset_fingerprint == b.report.dataset_fingerprint


def test_resampled_open_words_at_test(tmp_path):
    base = ex.run_experiment(quick_manifest(tmp_path), write=False)
    res = ex.run_experiment(quick_manifest(tmp_path, resample_open_at_test=True), write=False)
    assert res.model.vocab.open != base.model.vocab.open
    assert res.model.vocab.n_open == base.model.vocab.n_open


def test_report_json_is_sorted(tmp_path):
    res = ex.run_experiment(quick_manifest(tmp_path))
    doc = json.loads((res.output_dir / ex.REPORT_FILE).read_text())
    assert list(doc) == sorted(doc)
