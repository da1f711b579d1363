"""Command-line pipeline: potentials, PCA, splits, training, inference, evaluation.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file
whose keys are flag names (dashes or underscores). Flags given on the
command line override the file. Failures print one line::

    error: CATEGORY: detail

and exit with status 1 (2 for usage and configuration errors).
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .arpa import ArpaError, load_arpa
from .dataset import (
    DataError,
    load_dataset,
    make_split,
    read_annotations,
    read_features,
    read_split,
    select,
    write_annotations,
    write_features,
    write_split,
)
from .evaluation import cross_validate, evaluate_baseline, mode_label, parse_clamp, run_protocol
from .graph import AXIS, GraphSpec, clamped_kbest, concept_kind, kbest
from .knowledge import (
    DEFAULT_PRONOUNS,
    KINDS,
    ContainerError,
    KnowledgeError,
    build_potentials,
    read_container,
    read_templates,
    read_vocabularies,
    vocabulary_hashes,
    write_container,
    write_vocabulary,
)
from .learn import (
    QPError,
    StructuredSVM,
    augment_features_with_oracle,
    classifier_from_json,
    classifier_to_json,
    model_from_json,
    model_to_json,
    train_multiclass_baseline,
)
from .pca import PCAError, PCAProjection, pca_fit

log = logging.getLogger("motive")

DEFAULT_GRID = "0.01,0.1,1,10,100"


class CLIError(Exception):
    def __init__(self, category, detail, status=1):
        super().__init__(detail)
        self.category = category
        self.detail = detail
        self.status = status


# -- helpers ---------------------------------------------------------------


def _floats(text):
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers, got %r" % text) from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _require(args, *names):
    for name in names:
        path = getattr(args, name)
        if path is None:
            raise CLIError("CONFIG", "--%s is required" % name.replace("_", "-"), 2)
        if not os.path.exists(path):
            raise CLIError("PATH_MISSING", "--%s: %s does not exist" % (name.replace("_", "-"), path))


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise CLIError("FORMAT", "%s: %s" % (path, exc)) from None


def _load_spec(args, n_features):
    vocabs = read_vocabularies(args.vocab_dir)
    with open(args.tensors, "rb") as fh:
        tensors = read_container(fh, vocabs)
    return GraphSpec.from_potentials(tensors, n_features, vocabs=vocabs), vocabs


def _project(examples, pca):
    """Apply an embedded projection when features are still raw."""
    if pca is None or not examples or len(examples[0].features) != len(pca.mean):
        return examples
    X = pca.apply(np.array([ex.features for ex in examples]))
    for ex, x in zip(examples, X):
        ex.features, ex.reduced = x, True
    return examples


def _examples(args, vocabs, part=None, pca=None):
    examples = load_dataset(args.annotations, args.features, vocabs)
    if part is not None:
        if args.split is None:
            raise CLIError("CONFIG", "--split is required", 2)
        split = read_split(args.split)
        examples = select(examples, split.train if part == "train" else split.test)
    if not examples:
        raise CLIError("DATA_EMPTY", "no %s examples" % (part or "input"))
    return _project(examples, pca)


def _load_pca(path):
    if path is None:
        return None
    return PCAProjection.from_json(_read_json(path))


def _check_model_hashes(meta, vocabs):
    stored = meta.get("vocab_hashes")
    if stored and stored != vocabulary_hashes(vocabs):
        raise CLIError("FORMAT", "model was trained against different vocabularies")


# -- subcommands -----------------------------------------------------------


def cmd_build_potentials(args):
    _require(args, "arpa", "vocab_dir")
    vocabs = read_vocabularies(args.vocab_dir)
    templates = read_templates(args.templates)
    with open(args.arpa, encoding="utf-8") as fh:
        model = load_arpa(fh, oov_floor=args.oov_floor)
    pronouns = [p.strip().lower() for p in args.pronouns.split(",") if p.strip()]
    tensors = build_potentials(model, vocabs, templates, pronouns=pronouns,
                               boundary=args.boundary, workers=args.workers)
    with open(args.out, "wb") as fh:
        write_container(tensors, fh)
    print("%-28s %-14s %12s %10s %8s" % ("relation", "dims", "raw mean", "raw std", "queries"))
    for t in tensors:
        mean, std = t.normalization
        print("%-28s %-14s %12.5f %10.5f %8d" % (t.name, "x".join(map(str, t.dims)), mean, std, t.queries))
    print("wrote %d tensors to %s" % (len(tensors), args.out))


def cmd_pca_fit(args):
    _require(args, "features")
    ids, X = read_features(args.features)
    if args.split:
        _require(args, "split")
        keep = set(read_split(args.split).train)
        rows = [i for i, image_id in enumerate(ids) if image_id in keep]
        X = X[rows]
    if len(X) == 0:
        raise CLIError("DATA_EMPTY", "no feature rows to fit")
    p = pca_fit(X, args.dim)
    if p.padded:
        log.warning("only %d of %d components are supported by the data; the rest are zero",
                    p.n_valid, args.dim)
    _write_json(args.out, p.to_json())
    print("fitted %d components on %d x %d features; wrote %s" % (p.n_valid, X.shape[0], X.shape[1], args.out))


def cmd_pca_apply(args):
    _require(args, "pca", "features")
    p = _load_pca(args.pca)
    ids, X = read_features(args.features)
    if X.shape[1] != len(p.mean):
        raise CLIError("DATA", "features have %d columns, projection expects %d" % (X.shape[1], len(p.mean)))
    write_features(args.out, ids, p.apply(X))
    print("projected %d rows to %d dims; wrote %s" % (len(ids), len(p.components), args.out))


def cmd_split(args):
    if args.annotations:
        _require(args, "annotations")
        ids = [str(r["image_id"]) for r in read_annotations(args.annotations)]
    elif args.features:
        _require(args, "features")
        ids = read_features(args.features)[0]
    else:
        raise CLIError("CONFIG", "give --annotations or --features", 2)
    if not ids:
        raise CLIError("DATA_EMPTY", "no image ids")
    split = make_split(ids, args.seed)
    write_split(split, args.out)
    print("split %d ids: %d train, %d test (seed %d); wrote %s"
          % (len(ids), len(split.train), len(split.test), args.seed, args.out))


def _svm(spec, args, C):
    return StructuredSVM(spec, C=C, eps=args.eps, K=args.K, max_passes=args.max_passes)


def cmd_train(args):
    _require(args, "tensors", "vocab_dir", "annotations", "features")
    vocabs = read_vocabularies(args.vocab_dir)
    pca = _load_pca(args.pca)
    train = _examples(args, vocabs, "train" if args.split else None, pca)
    spec, _ = _load_spec(args, len(train[0].features))
    if args.no_trinary:
        spec = spec.without_trinaries()
    grid = [args.C] if args.C else args.C_grid
    table = {}
    if len(grid) > 1:
        def fit(examples, C):
            return _svm(spec, args, C).fit(examples).model_

        def score(model, examples):
            return run_protocol(spec, model, examples).normalized_median_rank

        best, table = cross_validate(train, grid, fit, score, folds=args.folds, seed=args.seed, logger=log.info)
        for C in grid:
            log.info("C=%g mean normalized median rank %.3f", C, float(np.mean(table[C])))
    else:
        best = grid[0]
    svm = _svm(spec, args, best).fit(train)
    model = svm.model_
    model.pca = pca
    model.meta["cv"] = {repr(C): v for C, v in table.items()}
    model.meta["seed"] = args.seed
    normalization = [None if n is None else tuple(n) for n in spec.normalization]
    _write_json(args.out, model_to_json(model, vocabulary_hashes(vocabs), normalization))
    print("trained on %d examples with C=%g (%d passes, %s); wrote %s"
          % (len(train), best, len(svm.objective_), "converged" if svm.converged_ else "pass cap reached", args.out))


def _baseline_matrix(examples, oracle, dims):
    if oracle:
        return np.array([augment_features_with_oracle(ex.features, ex.truth, oracle, dims) for ex in examples])
    return np.array([ex.features for ex in examples])


def cmd_train_baseline(args):
    _require(args, "vocab_dir", "annotations", "features")
    vocabs = read_vocabularies(args.vocab_dir)
    pca = _load_pca(args.pca)
    train = _examples(args, vocabs, "train" if args.split else None, pca)
    dims = tuple(len(vocabs[k]) for k in KINDS)
    oracle = parse_clamp(args.oracle) if args.oracle else []
    labels = np.array([ex.truth.m for ex in train])

    def fit(examples, C):
        X = _baseline_matrix(examples, oracle, dims)
        clf = train_multiclass_baseline(X, np.array([ex.truth.m for ex in examples]), dims[0],
                                        mode=args.mode, C=C, seed=args.seed)
        clf.oracle = tuple(oracle)
        return clf

    def score(clf, examples):
        return evaluate_baseline(clf, examples, dims).normalized_median_rank

    grid = [args.C] if args.C else args.C_grid
    table = {}
    if len(grid) > 1:
        best, table = cross_validate(train, grid, fit, score, folds=args.folds, seed=args.seed, logger=log.info)
    else:
        best = grid[0]
    if len(np.unique(labels)) < 2:
        raise CLIError("DATA", "training set has a single motivation class")
    clf = fit(train, best)
    clf.pca = pca
    clf.meta["cv"] = {repr(C): v for C, v in table.items()}
    clf.meta["vocab_hashes"] = vocabulary_hashes(vocabs)
    _write_json(args.out, classifier_to_json(clf))
    print("trained %s baseline on %d examples with C=%g; wrote %s" % (clf.mode, len(train), best, args.out))


def _load_model(args, vocabs):
    data = _read_json(args.model)
    if data.get("version", "").startswith("why-baseline"):
        raise CLIError("CONFIG", "%s is a baseline classifier; use --baseline" % args.model, 2)
    model = model_from_json(data)
    _check_model_hashes(model.meta, vocabs)
    return model


def cmd_infer(args):
    _require(args, "tensors", "vocab_dir", "model", "features")
    vocabs = read_vocabularies(args.vocab_dir)
    model = _load_model(args, vocabs)
    ids, X = read_features(args.features)
    if model.pca is not None and X.shape[1] == len(model.pca.mean):
        X = model.pca.apply(X)
    spec, _ = _load_spec(args, model.n_features)
    spec = spec.with_active(model.meta.get("active", spec.active))
    wanted = args.ids or ids
    row = {i: r for r, i in enumerate(ids)}
    missing = [i for i in wanted if i not in row]
    if missing:
        raise CLIError("DATA", "no feature row for image %s" % missing[0])
    if not wanted:
        raise CLIError("DATA_EMPTY", "no images to score")
    K = min(args.K, spec.n_configs)
    for image_id in wanted:
        x = X[row[image_id]]
        print("image %s" % image_id)
        for r, sc in enumerate(kbest(spec, model, x, K), start=1):
            words = [vocabs[k].strings[i] for k, i in zip(KINDS, sc.config)]
            print("  %2d  %12.6f  %s" % (r, sc.score, " | ".join(words)))


def cmd_eval(args):
    _require(args, "vocab_dir", "annotations", "features")
    if bool(args.model) == bool(args.baseline):
        raise CLIError("CONFIG", "give exactly one of --model and --baseline", 2)
    vocabs = read_vocabularies(args.vocab_dir)
    dims = tuple(len(vocabs[k]) for k in KINDS)
    part = "test" if args.split else None
    if args.baseline:
        _require(args, "baseline")
        clf = classifier_from_json(_read_json(args.baseline))
        if clf.meta.get("vocab_hashes") and clf.meta["vocab_hashes"] != vocabulary_hashes(vocabs):
            raise CLIError("FORMAT", "baseline was trained against different vocabularies")
        test = _examples(args, vocabs, part, clf.pca)
        report = evaluate_baseline(clf, test, dims)
    else:
        _require(args, "model", "tensors")
        model = _load_model(args, vocabs)
        test = _examples(args, vocabs, part, model.pca)
        spec, _ = _load_spec(args, model.n_features)
        trained_trinary = all(model.meta.get("active", [True] * 13)[10:])
        if args.mode == "no-trinary" and trained_trinary:
            raise CLIError("CONFIG", "no-trinary evaluation needs a model trained with --no-trinary", 2)
        if args.mode != "no-trinary" and not trained_trinary:
            spec = spec.without_trinaries()
        report = run_protocol(spec, model, test, args.mode)
    prefix = args.out
    report.write(prefix)
    sys.stdout.write(report.to_text())
    print("wrote %s.json, %s.txt, %s.csv" % (prefix, prefix, prefix))


def cmd_synth(args):
    from .synthetic import make_world

    w = make_world(args.seed, n_features=args.n_features)
    rng = np.random.default_rng(args.seed)
    examples = w.sample(args.n, rng)
    os.makedirs(args.out_dir, exist_ok=True)
    vocab_dir = os.path.join(args.out_dir, "vocab")
    os.makedirs(vocab_dir, exist_ok=True)
    for k in KINDS:
        write_vocabulary(w.vocabs[k], os.path.join(vocab_dir, k + ".txt"))
    write_annotations(os.path.join(args.out_dir, "annotations.jsonl"), examples, w.vocabs)
    write_features(os.path.join(args.out_dir, "features.bin"), [ex.image_id for ex in examples],
                   np.array([ex.features for ex in examples]))
    with open(os.path.join(args.out_dir, "tensors.bin"), "wb") as fh:
        write_container(w.potentials(), fh)
    print("wrote %d synthetic examples, vocabularies and tensors to %s" % (args.n, args.out_dir))


# -- parser ----------------------------------------------------------------


def _add_data(p, split=True):
    p.add_argument("--vocab-dir", help="directory with motivation/action/object/scene .txt files")
    p.add_argument("--annotations", help="JSON-lines annotation file")
    p.add_argument("--features", help="feature matrix (WHYFEA1)")
    if split:
        p.add_argument("--split", help="split JSON; train commands use its train ids, eval its test ids")


def _add_svm(p):
    p.add_argument("--C", type=_positive_float, default=None, help="fixed C; skips cross-validation")
    p.add_argument("--C-grid", type=_floats, default=_floats(DEFAULT_GRID), metavar="LIST",
                   help="comma-separated C values for cross-validation")
    p.add_argument("--folds", type=_positive_int, default=5, help="cross-validation folds")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; command-line flags override it")
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    parser = argparse.ArgumentParser(prog="motive", description=__doc__.split("\n")[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("build-potentials", parents=[common], formatter_class=fmt,
                       help="query an ARPA model and write the 13 potential tensors")
    p.add_argument("--arpa", help="ARPA language model")
    p.add_argument("--vocab-dir", help="directory with motivation/action/object/scene .txt files")
    p.add_argument("--templates", default=None, help="template file (default: built-in templates)")
    p.add_argument("--out", default="tensors.bin", help="output container")
    p.add_argument("--oov-floor", type=float, default=-7.0, help="log10 score of words the model lacks")
    p.add_argument("--boundary", action="store_true", help="score queries with sentence boundaries")
    p.add_argument("--pronouns", default=",".join(DEFAULT_PRONOUNS), help="expansions of PRONOUN")
    p.add_argument("--workers", type=_positive_int, default=1, help="query threads")
    p.set_defaults(func=cmd_build_potentials)

    p = sub.add_parser("pca-fit", parents=[common], formatter_class=fmt, help="fit a PCA projection")
    p.add_argument("--features", help="raw feature matrix")
    p.add_argument("--split", help="fit on this split's training ids only")
    p.add_argument("--dim", type=_positive_int, default=100, help="number of components")
    p.add_argument("--out", default="pca.json", help="output projection")
    p.set_defaults(func=cmd_pca_fit)

    p = sub.add_parser("pca-apply", parents=[common], formatter_class=fmt, help="project a feature matrix")
    p.add_argument("--pca", help="projection from pca-fit")
    p.add_argument("--features", help="raw feature matrix")
    p.add_argument("--out", default="features.pca.bin", help="output feature matrix")
    p.set_defaults(func=cmd_pca_apply)

    p = sub.add_parser("split", parents=[common], formatter_class=fmt, help="write an equal train/test split")
    p.add_argument("--annotations", help="take image ids from this annotation file")
    p.add_argument("--features", help="or from this feature matrix")
    p.add_argument("--out", default="split.json", help="output split")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train the joint model")
    p.add_argument("--tensors", help="potential container from build-potentials")
    _add_data(p)
    p.add_argument("--pca", help="project raw features with this PCA and embed it in the model")
    _add_svm(p)
    p.add_argument("--K", type=_positive_int, default=10, help="competitors examined per image and pass")
    p.add_argument("--eps", type=_positive_float, default=1e-3, help="constraint violation threshold")
    p.add_argument("--max-passes", type=_positive_int, default=50, help="cutting-plane pass cap")
    p.add_argument("--no-trinary", action="store_true", help="train without the three-way factors")
    p.add_argument("--out", default="model.json", help="output model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-baseline", parents=[common], formatter_class=fmt,
                       help="train a vision-only motivation classifier")
    _add_data(p)
    p.add_argument("--pca", help="project raw features with this PCA and embed it")
    _add_svm(p)
    p.add_argument("--mode", choices=["one-vs-rest", "crammer-singer"], default="one-vs-rest",
                   help="multiclass strategy")
    p.add_argument("--oracle", default=None, metavar="SET",
                   help="append ground-truth one-hot codes for these concepts, e.g. a+o+s")
    p.add_argument("--out", default="baseline.json", help="output classifier")
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("infer", parents=[common], formatter_class=fmt,
                       help="print the top-K configurations for images")
    p.add_argument("--tensors", help="potential container")
    p.add_argument("--vocab-dir", help="vocabulary directory")
    p.add_argument("--model", help="trained model")
    p.add_argument("--features", help="feature matrix")
    p.add_argument("--K", type=_positive_int, default=5, help="configurations per image")
    p.add_argument("ids", nargs="*", help="image ids (default: every row)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt, help="rank motivations on the test set")
    p.add_argument("--tensors", help="potential container")
    _add_data(p)
    p.add_argument("--model", help="joint model")
    p.add_argument("--baseline", help="baseline classifier instead of a joint model")
    p.add_argument("--mode", default="automatic",
                   help="automatic, clamp:<subset of a,o,s> such as clamp:a+o+s, or no-trinary")
    p.add_argument("--out", default="report", help="report prefix for .json, .txt and .csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], formatter_class=fmt,
                       help="write a synthetic mini-dataset with tensors")
    p.add_argument("--out-dir", default="synth", help="output directory")
    p.add_argument("--n", type=_positive_int, default=200, help="number of images")
    p.add_argument("--n-features", type=_positive_int, default=20, help="feature dimension")
    p.set_defaults(func=cmd_synth)
    return parser


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise CLIError("PATH_MISSING", "--config: %s" % exc) from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise CLIError("CONFIG", "%s line %d: expected key = value" % (path, lineno), 2)
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    sub = parser._subparsers._group_actions[0].choices.get(known.command)
    if sub is None:
        return
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    defaults = {}
    for key, value in read_config(known.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise CLIError("CONFIG", "%s: unknown key %r for %s" % (known.config, key, known.command), 2)
        if action.nargs == 0:
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = action.type(value) if action.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CLIError("CONFIG", "%s: %s: %s" % (known.config, key, exc), 2) from None
            if action.choices and defaults[key] not in action.choices:
                raise CLIError("CONFIG", "%s: %s must be one of %s" % (known.config, key, ", ".join(action.choices)), 2)
    sub.set_defaults(**defaults)


_CATEGORIES = [
    (QPError, "SOLVER"),
    (ArpaError, "ARPA_FORMAT"),
    (ContainerError, "FORMAT"),
    (KnowledgeError, "KNOWLEDGE"),
    (PCAError, "PCA"),
    (DataError, "DATA"),
    (FileNotFoundError, "PATH_MISSING"),
    (OSError, "IO"),
    (ValueError, "INVALID"),
]


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose + 1, 2),
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        args.func(args)
    except CLIError as exc:
        print("error: %s: %s" % (exc.category, exc.detail), file=sys.stderr)
        return exc.status
    except Exception as exc:  # one parsable line for every failure
        for kind, category in _CATEGORIES:
            if isinstance(exc, kind):
                detail = str(exc).replace("\n", " ") or kind.__name__
                print("error: %s: %s" % (category, detail), file=sys.stderr)
                return 1
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
