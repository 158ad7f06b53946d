"""Operator command line: dataset generation, training, explanation, atlas
analysis and serving.

Exit codes: 0 ok, 2 usage/config error, 3 runtime infeasibility.  Logs go to
stderr; artifacts go to the requested paths.  Every command writes or prints
enough to be reproduced: manifests carry a hash of the exact configuration.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys

import click
import numpy as np

from . import atlas as atlas_mod
from . import data as data_mod
from . import models as models_mod
from .errors import ConfigurationError, ExplanationInfeasibleError
from .explainer import ExplainParams, explain, serialize_explanation

EXIT_USAGE = 2
EXIT_INFEASIBLE = 3

CLASSIFIER_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "channels": {"type": "integer", "minimum": 1},
        "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "augment": {"type": "boolean"},
    },
    "additionalProperties": False,
}

AAE_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "adv_lr": {"type": "number", "exclusiveMinimum": 0},
        "noise_sigma": {"type": "number", "minimum": 0},
        "latent_dim": {"type": "integer", "minimum": 1},
        "base_channels": {"type": "integer", "minimum": 1},
        "stage_epochs": {
            "type": "array",
            "minItems": 3,
            "maxItems": 3,
            "items": {"type": "integer", "minimum": 1},
        },
    },
    "additionalProperties": False,
}


def _fail(message, code=EXIT_USAGE):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _config_hash(config):
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _load_config(path, schema):
    """Parse and schema-validate a JSON config; exit 2 with a field path on error."""
    import jsonschema

    if path is None:
        return {}
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        _fail(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        _fail(f"config {path} is not valid JSON: {exc}")
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        field = "/".join(str(p) for p in err.absolute_path) or "(root)"
        _fail(f"config {path}: field '{field}': {err.message}")
    return config


def _load_models_dir(models_dir):
    bb_path = os.path.join(models_dir, "blackbox.ckpt")
    aae_path = os.path.join(models_dir, "aae.ckpt")
    for p in (bb_path, aae_path):
        if not os.path.exists(p):
            _fail(f"missing checkpoint {p}")
    return models_mod.load_blackbox(bb_path), models_mod.load_aae(aae_path)


def _load_data_dir(data_dir):
    if not os.path.isdir(data_dir):
        _fail(f"missing data directory {data_dir}")
    try:
        return data_mod.load_dataset(data_dir)
    except Exception as exc:
        _fail(f"cannot load dataset from {data_dir}: {exc}")


@click.group()
def main():
    """Latent explanation workbench."""


@main.group()
def dataset():
    """Dataset commands."""


@dataset.command("gen")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--per-class", required=True, type=int)
@click.option("--extent", default=28, type=click.Choice(["28", "56"]), show_default=True)
@click.option("--seed", required=True, type=int)
def dataset_gen(out_dir, per_class, extent, seed):
    """Generate the synthetic lesion dataset as PNGs + labels.csv + manifest."""
    if per_class < 1:
        _fail("--per-class must be >= 1")
    config = {"per_class": per_class, "extent": int(extent), "seed": seed}
    try:
        ds = data_mod.generate_synthetic(per_class, int(extent), seed)
        data_mod.save_dataset(ds, out_dir)
    except OSError as exc:
        _fail(f"cannot write dataset: {exc}")
    manifest = {"command": "dataset gen", "config": config,
                "config_hash": _config_hash(config), "n_items": len(ds.items)}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    click.echo(f"wrote {len(ds.items)} images to {out_dir} "
               f"(config hash {manifest['config_hash']})", err=True)


@main.group()
def train():
    """Training commands."""


@train.command("classifier")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_file", required=True, type=click.Path())
@click.option("--config", "config_file", default=None, type=click.Path())
def train_classifier_cmd(data_dir, out_file, config_file):
    """Train the black-box classifier; writes checkpoint + report JSONL."""
    config = _load_config(config_file, CLASSIFIER_CONFIG_SCHEMA)
    seed = config.pop("seed", 0)
    ds = _load_data_dir(data_dir)
    try:
        model, report = models_mod.train_classifier(ds, config, seed=seed)
    except ConfigurationError as exc:
        _fail(str(exc))
    models_mod.save_blackbox(model, out_file)
    report_path = out_file + ".report.jsonl"
    with open(report_path, "w") as fh:
        fh.write(report.to_jsonl())
    full = {**models_mod.DEFAULT_CLASSIFIER_CONFIG, **config, "seed": seed}
    click.echo(f"final balanced accuracy: {report.final['balanced_accuracy']:.4f} "
               f"(config hash {_config_hash(full)})", err=True)


@train.command("aae")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_file", required=True, type=click.Path())
@click.option("--config", "config_file", default=None, type=click.Path())
def train_aae_cmd(data_dir, out_file, config_file):
    """Train the progressive-growing AAE; writes checkpoint + report JSONL."""
    config = _load_config(config_file, AAE_CONFIG_SCHEMA)
    seed = config.pop("seed", 0)
    stage_epochs = tuple(config.pop("stage_epochs", (12, 12, 16)))
    ds = _load_data_dir(data_dir)
    schedule = models_mod.GrowthSchedule.desk_default(epochs=stage_epochs)
    try:
        aae, report = models_mod.train_pgaae(ds, schedule, config, seed=seed)
    except ConfigurationError as exc:
        _fail(str(exc))
    models_mod.save_aae(aae, out_file)
    report_path = out_file + ".report.jsonl"
    with open(report_path, "w") as fh:
        fh.write(report.to_jsonl())
    rmse = report.final["per_class_rmse"]
    summary = " ".join(f"{k}={v:.3f}" for k, v in sorted(rmse.items()))
    full = {**models_mod.DEFAULT_AAE_CONFIG, **config,
            "stage_epochs": list(stage_epochs), "seed": seed}
    click.echo(f"per-class RMSE: {summary} (config hash {_config_hash(full)})",
               err=True)


@main.command("explain")
@click.option("--instance", "instance_id", required=True)
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--models", "models_dir", required=True, type=click.Path())
@click.option("--out", "out_file", required=True, type=click.Path())
@click.option("--seed", default=0, type=int, show_default=True)
def explain_cmd(instance_id, data_dir, models_dir, out_file, seed):
    """Explain one dataset instance; writes explanation/1 JSON."""
    ds = _load_data_dir(data_dir)
    blackbox, aae = _load_models_dir(models_dir)
    try:
        item = ds.by_id(instance_id)
    except KeyError:
        _fail(f"unknown instance {instance_id}")
    params = ExplainParams(seed=seed)
    try:
        explanation = explain(item.image, blackbox, aae, params,
                              class_names=ds.class_names)
    except ExplanationInfeasibleError as exc:
        _fail(f"[{exc.stage}] {exc}", code=EXIT_INFEASIBLE)
    payload = serialize_explanation(explanation, ds.class_names)
    with open(out_file, "wb") as fh:
        fh.write(payload)
    click.echo(f"wrote explanation for {instance_id} "
               f"(fidelity {explanation.fidelity:.3f})", err=True)


@main.command("atlas")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--models", "models_dir", required=True, type=click.Path())
@click.option("--pair", default=None, help="two class names, e.g. MEL,BKL")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--trees", default=500, type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
def atlas_cmd(data_dir, models_dir, pair, out_dir, trees, seed):
    """Project the dataset's latents to 2D; writes CSV + SVG (+ report JSON)."""
    ds = _load_data_dir(data_dir)
    _, aae = _load_models_dir(models_dir)
    emb = atlas_mod.embed_dataset(aae, ds)
    atlas2d = atlas_mod.project_embedding(emb)
    csv_path, svg_path = atlas_mod.export_scatter(atlas2d, out_dir)
    written = [csv_path, svg_path]
    if pair is not None:
        names = [p.strip() for p in pair.split(",")]
        if len(names) != 2 or any(n not in ds.class_names for n in names):
            _fail(f"--pair must be two known class names, got '{pair}'")
        try:
            report = atlas_mod.pairwise_separation(emb, names[0], names[1],
                                                   n_trees=trees, seed=seed)
        except ValueError as exc:
            _fail(str(exc), code=EXIT_INFEASIBLE)
        report_path = os.path.join(out_dir, f"separation_{names[0]}_{names[1]}.json")
        with open(report_path, "w") as fh:
            fh.write(report.to_json())
        written.append(report_path)
        click.echo(f"separation accuracy {report.accuracy:.4f} "
                   f"({names[0]} vs {names[1]})", err=True)
    click.echo("wrote " + ", ".join(written), err=True)


@main.command("serve")
@click.option("--models", "models_dir", default=None, type=click.Path())
@click.option("--port", default=None, type=int)
def serve_cmd(models_dir, port):
    """Run the REST backend."""
    import uvicorn

    from .service import create_app

    app = create_app(model_dir=models_dir)
    uvicorn.run(app, host="0.0.0.0",
                port=port or int(os.environ.get("PORT", "8000")))


if __name__ == "__main__":
    main()
