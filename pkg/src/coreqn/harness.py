"""Experiment harness: config handling, datasets, the method grid, summaries.

The grid runs every (method, coreset_size, trial) cell with its own derived
seed, evaluates each approximation against a per-trial reference posterior,
and appends one flushed CSV row per cell. Failed cells become error rows and
the run keeps going.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.special

from .coreset import QuasiNewtonConfig, run_quasi_newton
from .errors import ConfigError
from .metrics import (
    MetricsRow,
    fit_gaussian,
    gaussian_kl,
    ksd_imq,
    mmd_imq,
    relative_moment_errors,
)
from .models import (
    BayesianLinearRegressionModel,
    GaussianLocationModel,
    LogisticRegressionModel,
    empirical_prior_from_responses,
    make_rbf_basis,
    rbf_featurize,
)
from .oracle import full_weights
from .sampling import HmcConfig, laplace_approximation, sample_coreset_posterior
from .weights import derive_seed, uniform_coreset

METHOD_IDS = {"QNC": 0, "UNIF": 1, "LAP": 2, "FULL": 3}
METHOD_ORDER = ("QNC", "UNIF", "LAP", "FULL")
REFERENCE_TAG = 1000
EVAL_TAG = 2
FULL_REFERENCE_DRAWS = 2000

RESULT_COLUMNS = (
    "method",
    "coreset_size",
    "trial",
    "reverse_kl",
    "forward_kl",
    "rel_mean_err",
    "rel_cov_err",
    "mmd",
    "ksd",
    "build_time_s",
    "sample_time_per_draw_s",
    "seed",
    "status",
)
TIMING_COLUMNS = ("build_time_s", "sample_time_per_draw_s")
METRIC_COLUMNS = (
    "reverse_kl",
    "forward_kl",
    "rel_mean_err",
    "rel_cov_err",
    "mmd",
    "ksd",
    "build_time_s",
    "sample_time_per_draw_s",
)


# ---------------------------------------------------------------------------
# synthetic datasets


def generate_synthetic_gaussian(n_data, dim, data_mean_var, noise_var, seed):
    """Location-family dataset: one latent mean per coordinate drawn from
    N(0, data_mean_var), then rows x_n ~ N(mean, noise_var I).

    Returns (data, mean) so callers can check recovery against the truth.
    """
    if n_data < 1 or dim < 1:
        raise ValueError("n_data and dim must be positive")
    if data_mean_var < 0 or noise_var < 0:
        raise ValueError("variances must be nonnegative")
    rng = np.random.default_rng(seed)
    mean = rng.normal(0.0, np.sqrt(data_mean_var), size=dim)
    data = mean + rng.normal(0.0, np.sqrt(noise_var), size=(n_data, dim))
    return data, mean


def generate_synthetic_logistic(n_data, dim, seed):
    """Standard-normal features, a standard-normal true coefficient vector,
    and labels in {-1, +1} drawn from the implied Bernoulli probabilities.

    Returns (features, labels, true_theta).
    """
    if n_data < 1 or dim < 1:
        raise ValueError("n_data and dim must be positive")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n_data, dim))
    theta = rng.standard_normal(dim)
    probs = scipy.special.expit(features @ theta)
    labels = np.where(rng.random(n_data) < probs, 1.0, -1.0)
    return features, labels, theta


def generate_synthetic_rbf(n_data, seed, n_per_scale=50, noise_scale=0.1):
    """Radial-basis regression dataset on the plane.

    Coordinates are uniform on [0, 10]^2, responses sin(x1) cos(x2) plus
    N(0, noise_scale^2) noise, and the returned features are the RBF basis
    evaluations at the coordinates. Returns (features, responses).
    """
    if n_data < 2:
        raise ValueError("n_data must be at least 2")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 10.0, size=(n_data, 2))
    responses = np.sin(coords[:, 0]) * np.cos(coords[:, 1])
    responses = responses + noise_scale * rng.standard_normal(n_data)
    basis = make_rbf_basis(coords, n_per_scale=n_per_scale, seed=seed)
    return rbf_featurize(coords, basis), responses


# ---------------------------------------------------------------------------
# CSV datasets


def load_csv_dataset(path, schema):
    """Read a comma-separated dataset with a header row.

    schema "regression": all columns numeric, last column is the response.
    schema "classification": last column holds labels in {-1, 1}; {0, 1}
    labels are remapped with a warning. Rows containing non-finite values
    are dropped with a warning listing their line numbers. Parse failures
    report the file line number and column name.
    """
    if schema not in ("regression", "classification"):
        raise ValueError("schema must be 'regression' or 'classification'")
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ValueError(f"{path}: need at least one feature column and one target column")
        rows, dropped = [], []
        for line_no, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise ValueError(
                    f"{path}: row {line_no}: expected {len(header)} columns, found {len(cells)}"
                )
            parsed = np.empty(len(cells))
            for j, cell in enumerate(cells):
                try:
                    parsed[j] = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {line_no}, column '{header[j]}': "
                        f"could not parse {cell!r} as a number"
                    ) from None
            if np.all(np.isfinite(parsed)):
                rows.append(parsed)
            else:
                dropped.append(line_no)
    if dropped:
        warnings.warn(
            f"{path}: dropped {len(dropped)} rows with non-finite values "
            f"(lines {', '.join(map(str, dropped))})",
            stacklevel=2,
        )
    if not rows:
        raise ValueError(f"{path}: no usable data rows")
    table = np.vstack(rows)
    features, target = table[:, :-1], table[:, -1]
    if schema == "classification":
        labels = set(np.unique(target))
        if labels <= {0.0, 1.0}:
            warnings.warn(f"{path}: labels in {{0, 1}} remapped to {{-1, 1}}", stacklevel=2)
            target = np.where(target > 0.5, 1.0, -1.0)
        elif not labels <= {-1.0, 1.0}:
            raise ValueError(f"{path}: classification labels must lie in {{-1, 1}} or {{0, 1}}")
    return features, target


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MetricOptions:
    mmd: bool = True
    ksd: bool = False
    kernel_scale: float = 1.0
    kernel_power: float = -0.5


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see ``parse_config`` for the JSON
    field set and defaults."""

    model: str
    data: dict
    methods: tuple
    coreset_sizes: tuple
    trials: int
    eval_samples: int
    optimizer: dict
    hmc: HmcConfig
    metric_options: MetricOptions
    seed: int
    output_dir: str
    threads: int


CONFIG_DEFAULTS = {
    "methods": list(METHOD_ORDER),
    "coreset_sizes": [100],
    "trials": 1,
    "eval_samples": 1000,
    "optimizer": {},
    "hmc": {},
    "metrics": {},
    "seed": 0,
    "output_dir": "results",
    "threads": 1,
}

OPTIMIZER_KEYS = (
    "mc_samples",
    "max_steps",
    "tune_steps",
    "step_size",
    "regularization",
    "stop_patience",
    "stop_factor",
    "max_condition",
)
HMC_KEYS = ("warmup_steps", "leapfrog_steps", "target_accept", "initial_step_size")
METRIC_KEYS = ("mmd", "ksd", "kernel_scale", "kernel_power")

_DATA_KEYS = {
    ("gaussian", "synthetic"): ("n_data", "dim", "data_mean_var", "noise_var", "seed",
                                "prior_mean", "prior_var"),
    ("linreg", "synthetic"): ("n_data", "seed", "n_per_scale", "noise_scale"),
    ("logistic", "synthetic"): ("n_data", "dim", "seed", "prior_scale"),
    ("linreg", "csv"): ("path",),
    ("logistic", "csv"): ("path", "prior_scale"),
}


def _expect_int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, "expected an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be at least {minimum}")
    return int(value)


def _expect_number(value, path, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, "expected a number")
    if positive and value <= 0:
        raise ConfigError(path, "must be positive")
    return float(value)


def _expect_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object")
    return value


def _reject_unknown(mapping, allowed, path):
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")


def _parse_data_section(model, raw):
    data = dict(_expect_mapping(raw, "data"))
    source = data.pop("source", "synthetic")
    if source not in ("synthetic", "csv"):
        raise ConfigError("data.source", "expected 'synthetic' or 'csv'")
    allowed = _DATA_KEYS.get((model, source))
    if allowed is None:
        raise ConfigError("data.source", f"'{source}' is not supported for model '{model}'")
    _reject_unknown(data, allowed, "data")
    out = {"source": source}
    if source == "csv":
        path = data.get("path")
        if not isinstance(path, str) or not path:
            raise ConfigError("data.path", "expected a file path")
        out["path"] = path
        if model == "logistic":
            out["prior_scale"] = _expect_number(
                data.get("prior_scale", 1.0), "data.prior_scale", positive=True
            )
        return out
    out["n_data"] = _expect_int(data.get("n_data", 1000), "data.n_data", minimum=2)
    out["seed"] = _expect_int(data.get("seed", 0), "data.seed", minimum=0)
    if model == "gaussian":
        out["dim"] = _expect_int(data.get("dim", 10), "data.dim", minimum=1)
        out["data_mean_var"] = _expect_number(
            data.get("data_mean_var", 100.0), "data.data_mean_var", positive=True
        )
        out["noise_var"] = _expect_number(
            data.get("noise_var", 100.0), "data.noise_var", positive=True
        )
        out["prior_mean"] = _expect_number(data.get("prior_mean", 0.0), "data.prior_mean")
        out["prior_var"] = _expect_number(
            data.get("prior_var", 1.0), "data.prior_var", positive=True
        )
    elif model == "logistic":
        out["dim"] = _expect_int(data.get("dim", 5), "data.dim", minimum=1)
        out["prior_scale"] = _expect_number(
            data.get("prior_scale", 1.0), "data.prior_scale", positive=True
        )
    else:
        out["n_per_scale"] = _expect_int(
            data.get("n_per_scale", 50), "data.n_per_scale", minimum=1
        )
        out["noise_scale"] = _expect_number(
            data.get("noise_scale", 0.1), "data.noise_scale", positive=True
        )
    return out


def parse_config(raw) -> ExperimentConfig:
    """Validate a decoded JSON document into an ExperimentConfig.

    Raises ConfigError naming the offending field path; unknown fields are
    rejected rather than ignored.
    """
    raw = _expect_mapping(raw, "config")
    _reject_unknown(raw, set(CONFIG_DEFAULTS) | {"model", "data"}, "")
    merged = {**CONFIG_DEFAULTS, **raw}
    model = merged.get("model")
    if model not in ("gaussian", "linreg", "logistic"):
        raise ConfigError("model", "expected 'gaussian', 'linreg', or 'logistic'")
    if "data" not in merged:
        raise ConfigError("data", "required field is missing")
    data = _parse_data_section(model, merged["data"])

    methods = merged["methods"]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", "expected a nonempty list")
    for i, name in enumerate(methods):
        if name not in METHOD_IDS:
            raise ConfigError(f"methods[{i}]", "expected one of QNC, UNIF, LAP, FULL")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods", "duplicate method names")

    sizes = merged["coreset_sizes"]
    if not isinstance(sizes, list) or not sizes:
        raise ConfigError("coreset_sizes", "expected a nonempty list")
    sizes = tuple(
        _expect_int(m, f"coreset_sizes[{i}]", minimum=1) for i, m in enumerate(sizes)
    )

    optimizer = dict(_expect_mapping(merged["optimizer"], "optimizer"))
    _reject_unknown(optimizer, OPTIMIZER_KEYS, "optimizer")
    try:
        QuasiNewtonConfig(coreset_size=max(sizes), **optimizer)
    except (TypeError, ValueError) as exc:
        raise ConfigError("optimizer", str(exc)) from None

    hmc_raw = dict(_expect_mapping(merged["hmc"], "hmc"))
    _reject_unknown(hmc_raw, HMC_KEYS, "hmc")
    try:
        hmc = HmcConfig(**hmc_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError("hmc", str(exc)) from None

    metric_raw = dict(_expect_mapping(merged["metrics"], "metrics"))
    _reject_unknown(metric_raw, METRIC_KEYS, "metrics")
    for key in ("mmd", "ksd"):
        if key in metric_raw and not isinstance(metric_raw[key], bool):
            raise ConfigError(f"metrics.{key}", "expected true or false")
    options = MetricOptions(
        mmd=metric_raw.get("mmd", True),
        ksd=metric_raw.get("ksd", False),
        kernel_scale=_expect_number(
            metric_raw.get("kernel_scale", 1.0), "metrics.kernel_scale", positive=True
        ),
        kernel_power=_expect_number(
            metric_raw.get("kernel_power", -0.5), "metrics.kernel_power"
        ),
    )
    if not -1.0 < options.kernel_power < 0.0:
        raise ConfigError("metrics.kernel_power", "must lie in (-1, 0)")

    output_dir = merged["output_dir"]
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "expected a directory path")

    return ExperimentConfig(
        model=model,
        data=data,
        methods=tuple(methods),
        coreset_sizes=sizes,
        trials=_expect_int(merged["trials"], "trials", minimum=1),
        eval_samples=_expect_int(merged["eval_samples"], "eval_samples", minimum=2),
        optimizer=optimizer,
        hmc=hmc,
        metric_options=options,
        seed=_expect_int(merged["seed"], "seed", minimum=0),
        output_dir=output_dir,
        threads=_expect_int(merged["threads"], "threads", minimum=1),
    )


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON ({exc})") from None
    return parse_config(raw)


def build_model(config: ExperimentConfig):
    """Materialize the Bayesian model described by the config's data section."""
    data = config.data
    if config.model == "gaussian":
        rows, _ = generate_synthetic_gaussian(
            data["n_data"], data["dim"], data["data_mean_var"], data["noise_var"],
            data["seed"],
        )
        return GaussianLocationModel(
            rows,
            prior_mean=data["prior_mean"],
            prior_var=data["prior_var"],
            noise_var=data["noise_var"],
        )
    if config.model == "logistic":
        if data["source"] == "csv":
            features, labels = load_csv_dataset(data["path"], "classification")
        else:
            features, labels, _ = generate_synthetic_logistic(
                data["n_data"], data["dim"], data["seed"]
            )
        return LogisticRegressionModel(features, labels, prior_scale=data["prior_scale"])
    if data["source"] == "csv":
        features, responses = load_csv_dataset(data["path"], "regression")
    else:
        features, responses = generate_synthetic_rbf(
            data["n_data"], data["seed"],
            n_per_scale=data["n_per_scale"], noise_scale=data["noise_scale"],
        )
    prior_mean, prior_var, noise_var = empirical_prior_from_responses(responses)
    return BayesianLinearRegressionModel(
        features, responses,
        prior_mean=prior_mean, prior_var=prior_var, noise_var=noise_var,
    )


# ---------------------------------------------------------------------------
# grid execution


@dataclass(frozen=True)
class TrialReference:
    """Ground-truth posterior for one trial: a Gaussian plus, for sampled
    models, the reference draws it was fitted to."""

    distribution: object
    draws: object = None

    def reference_draws(self, n_draws, seed):
        if self.draws is not None:
            return self.draws
        return self.distribution.sample(n_draws, np.random.default_rng(seed))


def build_references(model, config: ExperimentConfig):
    """One reference per trial.

    Conjugate models share the closed-form full posterior; sampled models get
    an independent full-data HMC run per trial, fitted by a Gaussian.
    """
    if hasattr(model, "conjugate_posterior"):
        exact = model.conjugate_posterior(full_weights(model.n_data))
        return {t: TrialReference(exact) for t in range(config.trials)}
    references = {}
    for trial in range(config.trials):
        seed = derive_seed(config.seed, REFERENCE_TAG, trial)
        batch = sample_coreset_posterior(
            model, full_weights(model.n_data), FULL_REFERENCE_DRAWS, seed, hmc=config.hmc
        )
        references[trial] = TrialReference(fit_gaussian(batch.draws), batch.draws)
    return references


def _compare_distributions(approx, reference, options, approx_draws, ref_draws, score_fn,
                           eval_samples):
    errors = relative_moment_errors(approx, reference)
    return MetricsRow(
        reverse_kl=gaussian_kl(approx, reference),
        forward_kl=gaussian_kl(reference, approx),
        rel_mean_err=errors.rel_mean_err,
        rel_cov_err=errors.rel_cov_err,
        mmd=mmd_imq(approx_draws, ref_draws, options.kernel_scale) if options.mmd else None,
        ksd=ksd_imq(approx_draws, score_fn, options.kernel_scale, options.kernel_power)
        if options.ksd
        else None,
        eval_samples=eval_samples,
    )


def run_cell(model, reference, config: ExperimentConfig, method, size, trial):
    """Build one approximation, evaluate it, and return (row_fields, trace).

    row_fields is the dict written to results.csv; trace is the optimizer
    trace dict for QNC cells and None otherwise. Exceptions propagate; the
    caller turns them into error rows.
    """
    cell_seed = derive_seed(config.seed, METHOD_IDS[method], size, trial)
    eval_seed = derive_seed(cell_seed, EVAL_TAG)
    options = config.metric_options
    conjugate = hasattr(model, "conjugate_posterior")
    ref_seed = derive_seed(config.seed, REFERENCE_TAG, trial)
    trace_dict = None

    start = time.perf_counter()
    if method == "QNC":
        qn_config = QuasiNewtonConfig(coreset_size=size, seed=cell_seed, **config.optimizer)
        coreset_weights, trace = run_quasi_newton(model, qn_config, hmc=config.hmc)
        trace_dict = trace.to_dict()
    elif method == "UNIF":
        coreset_weights = uniform_coreset(model.n_data, size, cell_seed)
    elif method == "LAP":
        approx_dist = laplace_approximation(model, full_weights(model.n_data))
    build_time = 0.0 if method == "FULL" else time.perf_counter() - start

    sample_start = time.perf_counter()
    if method in ("QNC", "UNIF"):
        batch = sample_coreset_posterior(
            model, coreset_weights, config.eval_samples, eval_seed, hmc=config.hmc
        )
        approx_draws = batch.draws
        approx_dist = (
            model.conjugate_posterior(coreset_weights)
            if conjugate
            else fit_gaussian(approx_draws)
        )
    elif method == "LAP":
        approx_draws = approx_dist.sample(config.eval_samples, np.random.default_rng(eval_seed))
    elif conjugate:
        # FULL on a conjugate model: the noise floor of the evaluation
        # protocol itself, two independent sample batches from the exact
        # posterior compared fit against fit.
        rng = np.random.default_rng(eval_seed)
        exact = reference.distribution
        approx_draws = exact.sample(config.eval_samples, rng)
        approx_dist = fit_gaussian(approx_draws)
        reference = TrialReference(fit_gaussian(exact.sample(config.eval_samples, rng)))
    else:
        batch = sample_coreset_posterior(
            model, full_weights(model.n_data), config.eval_samples, eval_seed, hmc=config.hmc
        )
        approx_draws = batch.draws
        approx_dist = fit_gaussian(approx_draws)
    sample_time = (time.perf_counter() - sample_start) / config.eval_samples

    ref_draws = None
    if options.mmd:
        ref_draws = reference.reference_draws(config.eval_samples, ref_seed)
    score_fn = None
    if options.ksd:
        full_w = full_weights(model.n_data)
        score_fn = lambda thetas: model.posterior_score(thetas, full_w)  # noqa: E731
    metrics_row = _compare_distributions(
        approx_dist, reference.distribution, options, approx_draws, ref_draws, score_fn,
        config.eval_samples,
    )
    row = {
        "method": method,
        "coreset_size": size,
        "trial": trial,
        "reverse_kl": metrics_row.reverse_kl,
        "forward_kl": metrics_row.forward_kl,
        "rel_mean_err": metrics_row.rel_mean_err,
        "rel_cov_err": metrics_row.rel_cov_err,
        "mmd": metrics_row.mmd,
        "ksd": metrics_row.ksd,
        "build_time_s": build_time,
        "sample_time_per_draw_s": sample_time,
        "seed": cell_seed,
        "status": "ok",
    }
    return row, trace_dict


def error_row(method, size, trial, master_seed, exc) -> dict:
    row = {
        "method": method,
        "coreset_size": size,
        "trial": trial,
        "seed": derive_seed(master_seed, METHOD_IDS[method], size, trial),
        "status": f"error:{type(exc).__name__}",
    }
    for column in METRIC_COLUMNS:
        row[column] = float("nan")
    return row


def grid_cells(config: ExperimentConfig):
    """Canonical cell order: config's method order, then sizes ascending,
    then trials ascending."""
    for method in config.methods:
        for size in sorted(config.coreset_sizes):
            for trial in range(config.trials):
                yield method, size, trial


_WORKER_STATE = {}


def _init_worker(model, references, config):
    _WORKER_STATE["model"] = model
    _WORKER_STATE["references"] = references
    _WORKER_STATE["config"] = config


def _run_cell_in_worker(cell):
    method, size, trial = cell
    model = _WORKER_STATE["model"]
    config = _WORKER_STATE["config"]
    reference = _WORKER_STATE["references"][trial]
    try:
        return run_cell(model, reference, config, method, size, trial)
    except Exception as exc:  # error-row contract: record and continue
        return error_row(method, size, trial, config.seed, exc), None


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ResultWriter:
    """Single owner of results.csv and the trace files; one flushed line per
    completed row so an interrupted run leaves a valid prefix."""

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.results_path = self.output_dir / "results.csv"
        self._handle = open(self.results_path, "w", encoding="utf-8")
        self._handle.write(",".join(RESULT_COLUMNS) + "\n")
        self._handle.flush()

    def write_row(self, row, trace):
        line = ",".join(_format_cell(row[column]) for column in RESULT_COLUMNS)
        self._handle.write(line + "\n")
        self._handle.flush()
        if trace is not None:
            trace_path = self.output_dir / (
                f"trace_{row['method']}_{row['coreset_size']}_{row['trial']}.json"
            )
            payload = {
                "method": row["method"],
                "coreset_size": row["coreset_size"],
                "trial": row["trial"],
                "seed": row["seed"],
                **trace,
            }
            with open(trace_path, "w", encoding="utf-8") as handle:
                json.dump(payload, handle, indent=1)

    def close(self):
        self._handle.close()


@dataclass(frozen=True)
class ExperimentOutcome:
    rows: tuple
    n_failed: int
    results_path: Path
    summary_path: Path


def run_experiment(config: ExperimentConfig) -> ExperimentOutcome:
    """Run the full grid, writing results.csv, summary.csv, and QNC traces
    under the config's output directory."""
    model = build_model(config)
    for i, size in enumerate(config.coreset_sizes):
        if size > model.n_data:
            raise ConfigError(
                f"coreset_sizes[{i}]", f"{size} exceeds the dataset size {model.n_data}"
            )
    references = build_references(model, config)
    cells = list(grid_cells(config))
    writer = ResultWriter(config.output_dir)
    rows = []
    try:
        if config.threads > 1:
            with ProcessPoolExecutor(
                max_workers=config.threads,
                initializer=_init_worker,
                initargs=(model, references, config),
            ) as pool:
                for row, trace in pool.map(_run_cell_in_worker, cells):
                    writer.write_row(row, trace)
                    rows.append(row)
        else:
            _init_worker(model, references, config)
            for cell in cells:
                row, trace = _run_cell_in_worker(cell)
                writer.write_row(row, trace)
                rows.append(row)
    finally:
        writer.close()
        _WORKER_STATE.clear()
    summary_path = Path(config.output_dir) / "summary.csv"
    write_summary(summarize_rows(rows), summary_path)
    n_failed = sum(1 for row in rows if row["status"] != "ok")
    return ExperimentOutcome(tuple(rows), n_failed, writer.results_path, summary_path)


# ---------------------------------------------------------------------------
# summaries


def summarize_rows(rows):
    """Median and quartiles per (method, coreset_size, metric) over the ok
    rows, linear-interpolated percentiles, one output row per metric."""
    groups, order = {}, []
    for row in rows:
        if row["status"] != "ok":
            continue
        key = (row["method"], row["coreset_size"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    order.sort(key=lambda key: (_method_rank(key[0]), key[1]))
    summary = []
    for key in order:
        method, size = key
        for metric in METRIC_COLUMNS:
            values = [
                float(row[metric])
                for row in groups[key]
                if row[metric] is not None and row[metric] == row[metric]
            ]
            values = [v for v in values if np.isfinite(v)]
            if not values:
                continue
            p25, median, p75 = np.percentile(values, [25.0, 50.0, 75.0])
            summary.append(
                {
                    "method": method,
                    "coreset_size": size,
                    "metric": metric,
                    "median": float(median),
                    "p25": float(p25),
                    "p75": float(p75),
                    "n": len(values),
                }
            )
    return summary


def _method_rank(method):
    return METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER)


SUMMARY_COLUMNS = ("method", "coreset_size", "metric", "median", "p25", "p75", "n")


def write_summary(summary, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in summary:
            handle.write(",".join(_format_cell(row[c]) for c in SUMMARY_COLUMNS) + "\n")


def load_results_csv(path):
    """Read a results.csv back into row dicts (numbers parsed, '' -> None)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or set(reader.fieldnames) != set(RESULT_COLUMNS):
            raise ValueError(f"{path}: expected columns {', '.join(RESULT_COLUMNS)}")
        for raw in reader:
            row = {"method": raw["method"], "status": raw["status"]}
            row["coreset_size"] = int(raw["coreset_size"])
            row["trial"] = int(raw["trial"])
            row["seed"] = int(raw["seed"])
            for column in METRIC_COLUMNS:
                text = raw[column]
                row[column] = None if text == "" else float(text)
            rows.append(row)
    return rows
