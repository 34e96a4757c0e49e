"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Every subcommand that draws random numbers requires ``--seed``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from ..core import ConfigError, DataError, MTuningError, NumericError, Rng
from ..ctt import STRATEGIES, build_groups, tune_groups
from ..lexicon import Vocabulary, load_lexicon, sample_open_words
from ..metrics import DEFAULT_TAUS, compare_reports, evaluate, histogram_csv
from ..synth import NAMED_SPECS, SynthSpec, generate, named_spec
from ..tuner import SPLITS, TuneConfig
from . import experiment as ex
from . import formats

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OTHER = 0, 2, 3, 4, 1


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_gen_synth(args):
    if args.spec:
        spec = SynthSpec.from_dict(json.loads(formats.read_text(args.spec)))
    else:
        spec = named_spec(args.benchmark)
    spec = spec.replace(seed=args.seed)
    data = generate(spec)
    out = Path(args.out)
    formats.write_dataset(out, data.dataset, data.token_table, data.lexicon)
    formats.write_words(out / "unknown_classes.txt", data.unknown_names,
                        header="evaluation harness only: names of the unknown classes")
    formats.atomic_write_text(out / "synth_spec.json", _json(spec.to_dict()))
    print(f"wrote {len(data.dataset.embeddings)} samples to {out}", file=sys.stderr)


def cmd_sample_open_words(args):
    lexicon = load_lexicon(args.lexicon)
    closed = formats.read_words(args.classes)
    exclude = [w for path in args.exclude for w in formats.read_words(path)]
    words = sample_open_words(lexicon, closed, exclude, args.n_open, Rng(args.seed).stream("open-words"))
    formats.write_words(args.out, words, header=f"n_open={len(words)} seed={args.seed}")
    print(f"wrote {len(words)} open words to {args.out}", file=sys.stderr)


def _tune_config(args) -> TuneConfig:
    cfg = TuneConfig.from_text(formats.read_text(args.config)) if args.config else TuneConfig()
    changes = {"seed": args.seed}
    for name in ("epochs", "learning_rate", "temperature", "batch_size", "shots_per_class"):
        value = getattr(args, name)
        if value is not None:
            changes[name] = value
    return cfg.replace(**changes)


def cmd_tune(args):
    data = Path(args.data)
    ds = formats.read_dataset(data)
    tokens = formats.read_token_file(args.tokens or data / formats.TOKENS_FILE)
    open_words = formats.read_words(args.open_words) if args.open_words else []
    cfg = _tune_config(args).replace(n_open=len(open_words))
    vocab = Vocabulary(tuple(ds.class_names), tuple(open_words))
    spec = ex.EncoderSpec(seed=args.encoder_seed)
    enc = spec.build(tokens.dim, ds.embeddings.dim)
    n_c = ds.n_classes if args.n_c is None else args.n_c
    groups = build_groups(ds.class_names, n_c, args.strategy, args.group_seed, enc, tokens)
    model = tune_groups(ds, cfg, groups, vocab, enc, tokens)
    ex.write_model(args.out, model, cfg, spec)
    effective = {"data": str(data), "encoder": dataclasses.asdict(spec), "group_seed": args.group_seed,
                 "n_c": n_c, "open_words": args.open_words, "strategy": args.strategy,
                 "tune": dataclasses.asdict(cfg)}
    formats.atomic_write_text(Path(args.out) / "effective_config.json", _json(effective))
    print(f"tuned {groups.n_groups} group(s); model in {args.out}", file=sys.stderr)


def cmd_infer(args):
    data = Path(args.data)
    ds = formats.read_dataset(data)
    tokens = formats.read_token_file(args.tokens or data / formats.TOKENS_FILE)
    model = ex.read_model(args.model, ds.class_names, tokens)
    records = []
    for split in args.splits.split(","):
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        ids, X, _ = ds.arrays(split)
        records.extend(model.infer(ids, X, args.tau))
    formats.atomic_write_text(args.out, ex.predictions_to_tsv(records))
    print(f"wrote {len(records)} predictions to {args.out}", file=sys.stderr)


def cmd_report(args):
    data = Path(args.data)
    ds = formats.read_dataset(data)
    tokens = formats.read_token_file(data / formats.TOKENS_FILE)
    records = ex.predictions_from_tsv(formats.read_text(args.predictions))
    n_open = len(formats.read_words(Path(args.model) / ex.OPEN_WORDS_FILE))
    taus = tuple(float(t) for t in args.taus.split(",")) if args.taus else DEFAULT_TAUS
    report = evaluate(records, ds.labels, ds.n_classes, taus, args.bins, n_open=n_open)
    report.dataset_fingerprint = ex.dataset_fingerprint(formats.dataset_files(ds, tokens))
    h = hashlib.sha256(report.dataset_fingerprint.encode("ascii"))
    for name in (ex.TUNE_CONFIG_FILE, ex.GROUPS_FILE, ex.OPEN_WORDS_FILE, ex.ENCODER_FILE):
        h.update((Path(args.model) / name).read_bytes())
    report.fingerprint = h.hexdigest()
    formats.atomic_write_text(args.out, report.to_json())
    if args.csv:
        formats.atomic_write_text(args.csv, histogram_csv(report.histogram))
    print(report.to_json(), end="")


def cmd_compare(args):
    a = ex.read_report(args.a)
    b = ex.read_report(args.b)
    text = _json(compare_reports(a, b))
    if args.out:
        formats.atomic_write_text(args.out, text)
    print(text, end="")


def cmd_run(args):
    if args.manifest:
        manifest = ex.ExperimentManifest.from_json(formats.read_text(args.manifest))
    else:
        manifest = ex.named_manifest(args.named)
    manifest = manifest.replace(seed=args.seed)
    if args.out:
        manifest = manifest.replace(output_dir=args.out)
    result = ex.run_experiment(manifest)
    print(result.report.to_json(), end="")
    print(f"artifacts in {result.output_dir}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtuning", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-synth", help="write a synthetic benchmark to a data directory")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--benchmark", choices=sorted(NAMED_SPECS))
    g.add_argument("--spec", help="JSON file with SynthSpec fields")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_synth)

    s = sub.add_parser("sample-open-words", help="sample open words from a lexicon")
    s.add_argument("--lexicon", required=True)
    s.add_argument("--classes", required=True, help="closed class names, one per line")
    s.add_argument("--exclude", action="append", default=[],
                   help="extra names to filter out (harness mode); may repeat")
    s.add_argument("--n-open", type=int, default=20)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample_open_words)

    s = sub.add_parser("tune", help="tune group prompts on a data directory")
    s.add_argument("--data", required=True)
    s.add_argument("--tokens", help="token table file (default: DATA/tokens.ospe)")
    s.add_argument("--open-words", help="open-word list; omit for N_O = 0")
    s.add_argument("--config", help="tune config in key = value form")
    s.add_argument("--n-c", type=int, help="max classes per group (default: all in one group)")
    s.add_argument("--strategy", choices=STRATEGIES, default="id_order")
    s.add_argument("--group-seed", type=int, default=0)
    s.add_argument("--encoder-seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--temperature", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--shots-per-class", type=int)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("infer", help="combinatorial inference with a tuned model")
    s.add_argument("--data", required=True)
    s.add_argument("--tokens")
    s.add_argument("--model", required=True)
    s.add_argument("--tau", type=float, default=DEFAULT_TAUS[0])
    s.add_argument("--splits", default="test-known,test-unknown")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("report", help="metrics report from predictions")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--taus", help="comma-separated thresholds")
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--out", required=True)
    s.add_argument("--csv", help="also write the histogram as CSV")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("compare", help="signed metric deltas between two reports")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("run", help="run a full experiment manifest")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--manifest")
    g.add_argument("--named", choices=ex.NAMED_MANIFESTS)
    s.add_argument("--seed", type=int, required=True, help="global seed (open-word sampling)")
    s.add_argument("--out", help="override the manifest's output directory")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (json.JSONDecodeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MTuningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
