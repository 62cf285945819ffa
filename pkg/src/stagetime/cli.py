"""Command-line interface.

Every command that writes files also writes ``config.json`` with its resolved
settings next to the outputs. Settings come from ``--config FILE`` (a JSON
object keyed by option name, dashes or underscores) and are overridden by
flags given on the command line.

Exit codes: 0 success, 2 validation failure, 3 data error.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import em
from .applications import (
    EmptyClassError,
    PredictionMode,
    classify_dataset,
    evaluate_mae,
    representative_index,
    sample_median,
)
from .experiments import (
    PredictionConfig,
    SyntheticConfig,
    prediction_csv,
    run_prediction_experiment,
    run_synthetic_experiment,
    synthetic_csv,
    train_test_split,
)
from .generator import UnreachableEndError, sample_dataset, sample_model
from .inference import ZeroLikelihoodError, posteriors, prefix_class_posteriors
from .io import DataError, csv_text, parse_dataset, write_dataset
from .model import ActionVocab, ModelError, ModelParams, StageRange, validate_model
from .timedist import FAMILIES, TIME_WEIGHTS

EXIT_VALIDATION = 2
EXIT_DATA = 3
MODE_CHOICES = ("mixture", "argmax", "empirical", "median")


class ValidationFailure(click.ClickException):
    exit_code = EXIT_VALIDATION


class DataFailure(click.ClickException):
    exit_code = EXIT_DATA


def _stages(ctx, param, value):
    if value is None or isinstance(value, StageRange):
        return value
    try:
        return StageRange.parse(str(value))
    except (ValueError, ModelError) as exc:
        raise click.BadParameter(str(exc)) from None


def _bool(ctx, param, value):
    if isinstance(value, bool) or value is None:
        return value
    text = str(value).lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise click.BadParameter("expected true or false")


def _load_config(ctx, param, value):
    """Fill option defaults from a JSON file; explicit flags still win."""
    if value is None:
        return None
    try:
        data = json.loads(Path(value).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read config: {exc}") from None
    if not isinstance(data, dict):
        raise click.BadParameter("config must be a JSON object")
    ctx.default_map = {**(ctx.default_map or {}), **{k.replace("-", "_"): v for k, v in data.items()}}
    return value


def config_option(f):
    return click.option(
        "--config", type=click.Path(exists=True, dir_okay=False), callback=_load_config,
        is_eager=True, expose_value=False, help="JSON file with option defaults.",
    )(f)


def out_option(f):
    return click.option("--out", "out", type=click.Path(file_okay=False), default=".", show_default=True,
                        help="Output directory.")(f)


def fit_options(f):
    options = [
        click.option("--family", type=click.Choice(FAMILIES), default="exponential", show_default=True),
        click.option("--classes", type=int, default=1, show_default=True, help="Number of classes K."),
        click.option("--stages", default="1:1", callback=_stages, show_default=True, help="MIN:MAX stages."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--epsilon", type=float, default=0.1, show_default=True),
        click.option("--alpha0", type=float, default=1e-3, show_default=True),
        click.option("--time-in-em", default="true", callback=_bool, show_default=True,
                     help="Fit time laws inside EM (true) or once afterwards (false)."),
        click.option("--init-mode", type=click.Choice(em.INIT_MODES), default="uniform_eps", show_default=True),
        click.option("--time-weight", type=click.Choice(TIME_WEIGHTS), default="survival", show_default=True),
        click.option("--max-iters", type=int, default=200, show_default=True),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


def guarded(f):
    """Map library errors to the documented exit codes."""
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (DataError, ZeroLikelihoodError, UnreachableEndError, EmptyClassError) as exc:
            raise DataFailure(str(exc)) from None
        except ModelError as exc:
            raise ValidationFailure(str(exc)) from None
        except em.InitializationError as exc:
            raise DataFailure(str(exc)) from None
    return wrapper


def _json_ready(value):
    if isinstance(value, StageRange):
        return f"{value.r_minus}:{value.r_plus}"
    if isinstance(value, tuple):
        return list(value)
    return value


def write_config(out: Path, command: str, settings: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"command": command, **{k: _json_ready(v) for k, v in sorted(settings.items())}}
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def load_model(path) -> ModelParams:
    try:
        params = ModelParams.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ValidationFailure(f"cannot load model: {exc}") from None
    issues = validate_model(params)
    if issues:
        raise ValidationFailure("invalid model: " + "; ".join(issues))
    return params


def load_data(path, vocab: ActionVocab | None = None):
    return parse_dataset(path, vocab=vocab)


def _fit_config(opts: dict) -> em.FitConfig:
    try:
        return em.FitConfig(
            n_classes=opts["classes"], stages=opts["stages"], family=opts["family"],
            seed=opts["seed"], epsilon=opts["epsilon"], alpha0=opts["alpha0"],
            time_in_em=opts["time_in_em"], init_mode=opts["init_mode"],
            time_weight=opts["time_weight"], max_iters=opts["max_iters"],
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.version_option(package_name="artifact", message="%(version)s")
def main(verbose):
    """Fit and apply a time-aware generative model of event sequences."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@config_option
@fit_options
@out_option
@guarded
def fit(data, out, **opts):
    """Fit a model to a JSON Lines dataset; writes model.json and trace.csv."""
    out = Path(out)
    cfg = _fit_config(opts)
    ds = load_data(data)
    params, trace = em.fit(ds.sequences, cfg, ds.vocab, labels=ds.labels)
    write_config(out, "fit", {"data": str(data), **opts})
    params.save(out / "model.json")
    _write(out, "trace.csv", trace.to_csv())
    click.echo(f"{trace.n_iters} iterations, mean log-likelihood {trace.mean_loglik[-1]:.6f}")


@main.command("sample-model")
@config_option
@click.option("--actions", type=int, default=10, show_default=True, help="Number of non-END actions.")
@click.option("--family", type=click.Choice(FAMILIES), default="exponential", show_default=True)
@click.option("--classes", type=int, default=2, show_default=True)
@click.option("--stages", default="3:4", callback=_stages, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@out_option
@guarded
def sample_model_cmd(actions, family, classes, stages, seed, out):
    """Draw a random model from the default hyper-priors."""
    if actions < 1 or classes < 1:
        raise click.UsageError("--actions and --classes must be positive")
    out = Path(out)
    vocab = ActionVocab.from_labels([f"a{i}" for i in range(actions)])
    params = sample_model(vocab, stages, classes, family, rng=np.random.default_rng(seed))
    write_config(out, "sample-model", dict(actions=actions, family=family, classes=classes,
                                            stages=stages, seed=seed))
    params.save(out / "model.json")


@main.command("sample-data")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@config_option
@click.option("--n", "n", type=int, default=1000, show_default=True, help="Number of sequences.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--complete", is_flag=True, help="Require the final stage to be r_plus.")
@click.option("--max-len", type=int, default=500, show_default=True)
@click.option("--truth/--no-truth", default=True, show_default=True, help="Write class_hint and stage_truth.")
@out_option
@guarded
def sample_data_cmd(model, n, seed, complete, max_len, truth, out):
    """Sample a dataset (data.jsonl) from a model."""
    out = Path(out)
    params = load_model(model)
    seqs, stages, classes = sample_dataset(params, n, np.random.default_rng(seed), max_len, complete)
    write_config(out, "sample-data", dict(model=str(model), n=n, seed=seed, complete=complete,
                                           max_len=max_len, truth=truth))
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "data.jsonl", params.vocab, seqs,
                  classes if truth else None, stages if truth else None)


@main.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@config_option
@click.option("--mode", type=click.Choice(("mixture", "argmax")), default="mixture", show_default=True)
@click.option("--n-samples", type=int, default=501, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--start-t", type=click.IntRange(1, 2), default=1, show_default=True)
@out_option
@guarded
def predict(model, data, mode, n_samples, seed, start_t, out):
    """Predict every next interval of every sequence (predictions.csv)."""
    out = Path(out)
    params = load_model(model)
    ds = load_data(data, params.vocab)
    pm = PredictionMode(mode, n_samples)
    rng = np.random.default_rng(seed)
    end = params.vocab.end_id
    rows = []
    for seq in ds.sequences:
        q_all = prefix_class_posteriors(params, seq.actions[:-1], seq.times[:-1])
        for i in range(max(start_t, 1), len(seq)):
            a, b = int(seq.actions[i - 1]), int(seq.actions[i])
            if b == end:
                continue
            q = q_all[i - 1]
            if not np.all(np.isfinite(q)):
                raise ZeroLikelihoodError(f"prefix of sequence {seq.id} has zero likelihood")
            dists = [params.time_dist(a, b, c) for c in range(params.n_classes)]
            pred = sample_median(dists, q, rng, pm.n_samples, argmax=pm.tag == "argmax")
            rows.append((seq.id, i, params.vocab.names[a], params.vocab.names[b], float(seq.times[i]), pred))
    write_config(out, "predict", dict(model=str(model), data=str(data), mode=mode,
                                       n_samples=n_samples, seed=seed, start_t=start_t))
    _write(out, "predictions.csv", csv_text(("id", "t", "from", "to", "tau", "prediction"), rows))


@main.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@config_option
@out_option
@guarded
def classify(model, data, out):
    """Most probable class of every sequence with its posterior (classes.csv)."""
    out = Path(out)
    params = load_model(model)
    ds = load_data(data, params.vocab)
    labels, post = classify_dataset(params, ds.sequences)
    header = ["id", "class"] + [f"p{c}" for c in range(params.n_classes)]
    rows = [[s.id, int(c), *map(float, p)] for s, c, p in zip(ds.sequences, labels, post)]
    write_config(out, "classify", dict(model=str(model), data=str(data)))
    _write(out, "classes.csv", csv_text(header, rows))


@main.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@config_option
@click.option("--class", "cls", type=int, required=True, help="Class index.")
@out_option
@guarded
def representative(model, data, cls, out):
    """Representative sequence of a class (representative.jsonl and annotations.csv)."""
    out = Path(out)
    params = load_model(model)
    if not 0 <= cls < params.n_classes:
        raise click.UsageError(f"--class must lie in 0..{params.n_classes - 1}")
    ds = load_data(data, params.vocab)
    idx, score = representative_index(params, ds.sequences, cls)
    seq = ds.sequences[idx]
    tables = posteriors(params, seq)
    marg = tables.stage_marginal[cls]
    rows = [
        (i + 1, params.vocab.names[a], float(t), int(np.argmax(marg[i])) + 1, float(marg[i].max()))
        for i, (a, t) in enumerate(zip(seq.actions, seq.times))
    ]
    write_config(out, "representative", dict(model=str(model), data=str(data), cls=cls))
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "representative.jsonl", params.vocab, [seq])
    _write(out, "annotations.csv",
           csv_text(("position", "action", "tau", "stage", "stage_prob"), rows))
    click.echo(f"{seq.id} normalized log-likelihood {score:.6f}")


@main.command("eval-mae")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@config_option
@click.option("--model", "model", type=click.Path(exists=True, dir_okay=False),
              help="Fitted model; fit on the training split when omitted.")
@click.option("--mode", type=click.Choice(MODE_CHOICES), default="mixture", show_default=True)
@click.option("--train-frac", type=float, default=0.9, show_default=True)
@click.option("--n-samples", type=int, default=501, show_default=True)
@click.option("--start-t", type=click.IntRange(1, 2), default=1, show_default=True)
@fit_options
@out_option
@guarded
def eval_mae(data, model, mode, train_frac, n_samples, start_t, out, **opts):
    """Split DATA, predict the test intervals and write mae.csv / mae_top15.csv."""
    out = Path(out)
    params = load_model(model) if model else None
    ds = load_data(data, params.vocab if params else None)
    try:
        tr, te = train_test_split(len(ds), train_frac, opts["seed"])
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    train = [ds.sequences[i] for i in tr]
    test = [ds.sequences[i] for i in te]
    if mode in ("mixture", "argmax") and params is None:
        labels = ds.labels[tr] if ds.labels is not None else None
        params, _ = em.fit(train, _fit_config(opts), ds.vocab, labels=labels)
        out.mkdir(parents=True, exist_ok=True)
        params.save(out / "model.json")
    report = evaluate_mae(
        params if mode in ("mixture", "argmax") else None, test, mode, train=train,
        family=opts["family"], n_samples=n_samples, seed=opts["seed"], start_t=start_t,
        n_actions=ds.vocab.size, end_id=ds.vocab.end_id,
    )
    if not report.labels:
        report.labels = ds.vocab.names
    write_config(out, "eval-mae", dict(data=str(data), model=model, mode=mode, train_frac=train_frac,
                                        n_samples=n_samples, start_t=start_t, **opts))
    _write(out, "mae.csv", report.to_csv())
    _write(out, "mae_top15.csv", report.to_csv(top=15))
    click.echo(f"MAE {report.overall:.6f} over {int(report.counts.sum())} transitions")


@main.command()
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
def validate(model):
    """Check a model file; exit code 2 lists the violated invariants."""
    load_model(model)
    click.echo("ok")


@main.command()
@config_option
@click.option("--families", default=",".join(FAMILIES), show_default=True, help="Comma-separated families.")
@click.option("--seeds", type=int, default=5, show_default=True, help="Seeds 0..R-1.")
@click.option("--n-grid", default=",".join(map(str, SyntheticConfig().n_grid)), show_default=True)
@click.option("--n-test", type=int, default=4000, show_default=True)
@click.option("--actions", type=int, default=10, show_default=True)
@click.option("--classes", type=int, default=2, show_default=True)
@click.option("--stages", default="3:4", callback=_stages, show_default=True)
@click.option("--epsilon", type=float, default=0.1, show_default=True)
@click.option("--alpha0", type=float, default=1e-3, show_default=True)
@click.option("--time-weight", type=click.Choice(TIME_WEIGHTS), default="survival", show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@out_option
@guarded
def synthetic(families, seeds, n_grid, n_test, actions, classes, stages, epsilon, alpha0,
              time_weight, jobs, out):
    """Synthetic recovery experiment (synthetic.csv)."""
    out = Path(out)
    fams = tuple(f.strip() for f in families.split(",") if f.strip())
    bad = [f for f in fams if f not in FAMILIES]
    if bad:
        raise click.UsageError(f"unknown families: {', '.join(bad)}")
    try:
        grid = tuple(int(x) for x in n_grid.split(","))
    except ValueError:
        raise click.UsageError("--n-grid must be comma-separated integers") from None
    cfg = SyntheticConfig(
        families=fams, seeds=tuple(range(seeds)), n_grid=grid, n_test=n_test, n_actions=actions,
        n_classes=classes, stages=stages, epsilon=epsilon, alpha0=alpha0,
        time_weight=time_weight, n_jobs=jobs,
    )
    rows = run_synthetic_experiment(cfg)
    settings = cfg.to_dict()
    settings.pop("n_jobs")
    write_config(out, "synthetic", settings)
    _write(out, "synthetic.csv", synthetic_csv(rows))


@main.command("prediction-experiment")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@config_option
@click.option("--classes", type=int, default=5, show_default=True)
@click.option("--stages", default="3:4", callback=_stages, show_default=True)
@click.option("--train-frac", type=float, default=0.9, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--init-mode", type=click.Choice(em.INIT_MODES), default="frequency_seeded", show_default=True)
@click.option("--epsilon", type=float, default=0.1, show_default=True)
@click.option("--alpha0", type=float, default=1e-3, show_default=True)
@click.option("--n-samples", type=int, default=501, show_default=True)
@click.option("--start-t", type=click.IntRange(1, 2), default=1, show_default=True)
@click.option("--time-weight", type=click.Choice(TIME_WEIGHTS), default="survival", show_default=True)
@out_option
@guarded
def prediction_experiment(data, classes, stages, train_frac, seed, init_mode, epsilon, alpha0,
                          n_samples, start_t, time_weight, out):
    """MAE comparison table of baselines and model variants (table.csv)."""
    out = Path(out)
    cfg = PredictionConfig(
        n_classes=classes, stages=stages, train_frac=train_frac, seed=seed, init_mode=init_mode,
        epsilon=epsilon, alpha0=alpha0, n_samples=n_samples, start_t=start_t, time_weight=time_weight,
    )
    ds = load_data(data)
    table = run_prediction_experiment(ds, cfg)
    write_config(out, "prediction-experiment", {"data": str(data), **cfg.to_dict()})
    _write(out, "table.csv", prediction_csv(table))


if __name__ == "__main__":  # pragma: no cover
    main()
