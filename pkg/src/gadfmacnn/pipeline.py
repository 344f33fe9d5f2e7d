"""Pipeline stages. Each stage reads its upstream artifacts from the run
directory, checks they are current, and writes its own artifacts plus a stamp.

Run directory layout::

    config.yaml                      snapshot of the last command's config
    data/{train,val,test}.gaf        encoded images
    data/manifest.json
    gan/class_<k>.ckpt, class_<k>_metrics.csv, stamp.json
    augment/synthetic.gaf, fidelity.json, stamp.json
    classifier/<variant>/checkpoint.ckpt, train_log.csv, stamp.json
    reports/<variant>/evaluation.json, report.json, *.csv, *.png
    logs/<command>.log

``variant`` is ``augmented`` or ``real_only``.
"""
from __future__ import annotations

import json
import logging
import shutil
from collections import Counter, defaultdict
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import yaml

from . import dataio
from .augment import fidelity_report, generate_samples, load_gan, train_wgan_gp
from .augment.train import GanTrainConfig
from .config import PipelineConfig, dump_config
from .container import file_sha256
from .errors import ConfigError, InsufficientData, StaleUpstream
from .evalviz import EvaluationReport, evaluate_model, extract_embeddings, render_report, tsne_project
from .gafenc import encode_windows, load_images, serialize_images
from .macnn import MACNN, MacnnConfig, TrainConfig, load_classifier, save_classifier, train_classifier

log = logging.getLogger("gadfmacnn")
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text())


@contextmanager
def command_log(cfg: PipelineConfig, name: str):
    run = cfg.run_dir
    (run / "logs").mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run / "config.yaml")
    handler = logging.FileHandler(run / "logs" / f"{name}.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("gadfmacnn")
    root.addHandler(handler)
    old = root.level
    root.setLevel(logging.INFO)
    try:
        log.info("%s: run_dir=%s config_hash=%s", name, run, cfg.content_hash())
        yield
        log.info("%s: done", name)
    except Exception as exc:
        log.error("%s failed: %s", name, exc)
        raise
    finally:
        root.removeHandler(handler)
        root.setLevel(old)
        handler.close()


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise StaleUpstream(f"missing {what}: {path} (run the upstream command first)")
    return path


def _check_stamp(stamp: dict, key: str, current: str, what: str) -> None:
    if stamp.get(key) != current:
        raise StaleUpstream(f"{what} changed since this artifact was built; rerun the upstream command")


def _variant(augment: bool) -> str:
    return "augmented" if augment else "real_only"


# --- synth -----------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig) -> Path:
    """Write a synthetic XJTU-SY-layout dataset to ``dataset.root``."""
    s = cfg.synth
    root = cfg.path(cfg.dataset.root)
    base = dataio.SyntheticSpec(shaft_hz=s.shaft_hz, snr_db=s.snr_db, resonance_hz=s.resonance_hz,
                                decay=s.decay, sample_rate=s.sample_rate)
    if root.exists():
        shutil.rmtree(root)
    dataio.write_synthetic_dataset(root, s.classes, s.runs_per_class, s.minutes_per_run, base,
                                   seed=s.seed, record_len=s.record_len)
    return root


# --- encode ----------------------------------------------------------------

def _load_label_map(path: Path) -> tuple[dict[str, str], list[str] | None]:
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"dataset.label_map: cannot read {path}: {exc}") from exc
    if isinstance(data, dict) and "runs" in data:
        return dict(data["runs"]), data.get("classes")
    if isinstance(data, dict):
        return dict(data), None
    raise ConfigError(f"dataset.label_map: {path} must map run directories to class names")


def _subsample_per_class(windows, n: int, seed: int):
    by = defaultdict(list)
    for i, w in enumerate(windows):
        by[w.label].append(i)
    keep = set()
    for label, idx in by.items():
        if len(idx) > n:
            rng = np.random.default_rng([seed, label, 2])
            idx = rng.choice(idx, size=n, replace=False).tolist()
        keep.update(idx)
    return [w for i, w in enumerate(windows) if i in keep]


def cmd_encode(cfg: PipelineConfig) -> dict:
    ds = cfg.dataset
    root = cfg.path(ds.root)
    if not root.is_dir():
        raise ConfigError(f"dataset.root: {root} does not exist or is not a directory")
    label_map = class_names = None
    if ds.label_map is not None:
        lm_path = cfg.path(ds.label_map)
        if not lm_path.is_file():
            raise ConfigError(f"dataset.label_map: {lm_path} does not exist")
        label_map, class_names = _load_label_map(lm_path)
    elif (root / "labels.json").is_file():
        label_map, class_names = _load_label_map(root / "labels.json")
    files, names = dataio.discover_files(root, label_map, class_names, ds.healthy_first_n, ds.fault_last_n)
    if not files:
        raise ConfigError(f"dataset.root: no labeled minute files under {root}")
    windows = dataio.window_dataset(files, ds.channel, ds.window_len, ds.stride, ds.sample_rate,
                                    ds.max_windows_per_class, ds.seed)
    for w in windows:
        rel = Path(w.record_ref.source_path).resolve().relative_to(root.resolve()).as_posix()
        w.record_ref = dataio.RecordRef(rel, w.record_ref.channel, w.record_ref.offset)
    spec = dataio.SplitSpec(ds.split.train, ds.split.val, ds.split.test, seed=ds.seed)
    parts = dict(zip(SPLITS, dataio.stratified_split(windows, spec)))
    if ds.train_windows_per_class is not None:
        parts["train"] = _subsample_per_class(parts["train"], ds.train_windows_per_class, ds.seed)

    out = cfg.run_dir / "data"
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": MANIFEST_VERSION,
        "classes": names,
        "dataset": cfg.dataset.model_dump(mode="json"),
        "encode": cfg.encode.model_dump(mode="json"),
        "seeds": {"split": ds.seed},
        "counts": {},
        "containers": {},
        "windows": [],
    }
    for split in SPLITS:
        ims = encode_windows(parts[split], cfg.encode.image_size, cfg.encode.M)
        path = out / f"{split}.gaf"
        serialize_images(ims, path, extra={"split": split, "classes": names})
        cnt = Counter(w.label_name for w in parts[split])
        manifest["counts"][split] = {n: cnt.get(n, 0) for n in names}
        manifest["containers"][split] = {"path": path.name, "sha256": file_sha256(path)}
        manifest["windows"] += [{"split": split, "index": i, "label": w.label, "label_name": w.label_name,
                                 "source": w.record_ref.source_path, "channel": w.record_ref.channel,
                                 "offset": w.record_ref.offset} for i, w in enumerate(parts[split])]
        log.info("encoded %s: %d images %s", split, len(ims), manifest["counts"][split])
    _write_json(out / "manifest.json", manifest)
    return manifest


def _manifest(cfg: PipelineConfig) -> tuple[dict, str]:
    path = _require(cfg.run_dir / "data" / "manifest.json", "dataset manifest")
    manifest = _read_json(path)
    for split, rec in manifest["containers"].items():
        img = _require(path.parent / rec["path"], f"{split} image container")
        if file_sha256(img) != rec["sha256"]:
            raise StaleUpstream(f"{img} does not match the manifest; rerun encode")
    return manifest, file_sha256(path)


def _split_images(cfg: PipelineConfig, split: str):
    return load_images(cfg.run_dir / "data" / f"{split}.gaf")


# --- GAN -------------------------------------------------------------------

def gan_config(cfg: PipelineConfig) -> GanTrainConfig:
    g = cfg.gan
    return GanTrainConfig(z_dim=g.z_dim, lambda_gp=g.lambda_gp, critic_steps_per_gen=g.critic_steps_per_gen,
                          batch_size=g.batch_size, learning_rate=g.learning_rate, adam_betas=g.adam_betas,
                          total_gen_steps=g.total_gen_steps, image_size=cfg.encode.image_size,
                          seed=g.seed, width=g.width, checkpoint_every=g.checkpoint_every,
                          warmup_gen_steps=g.warmup_gen_steps, warmup_critic_steps=g.warmup_critic_steps)


def cmd_train_gan(cfg: PipelineConfig) -> dict:
    manifest, m_hash = _manifest(cfg)
    gcfg = gan_config(cfg)
    out = cfg.run_dir / "gan"
    stamp_path = out / "stamp.json"
    gan_hash = cfg.content_hash(["gan", "encode"])
    # resume only checkpoints built from the same data and settings
    if stamp_path.exists():
        old = _read_json(stamp_path)
        if old.get("manifest_sha256") != m_hash or old.get("gan_config_hash") != gan_hash:
            shutil.rmtree(out)
    elif out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(stamp_path, {"manifest_sha256": m_hash, "gan_config_hash": gan_hash, "complete": False})
    train = _split_images(cfg, "train")
    names = manifest["classes"]
    by_class = defaultdict(list)
    for im in train:
        by_class[im.label].append(im)
    small = {names[k]: len(v) for k, v in by_class.items() if len(v) < gcfg.batch_size}
    if small:
        raise InsufficientData(f"gan.batch_size={gcfg.batch_size} exceeds training images per class {small}")
    cks = train_wgan_gp(dict(by_class), gcfg, out_dir=out, label_names=dict(enumerate(names)))
    stamp = {"manifest_sha256": m_hash, "gan_config_hash": gan_hash, "complete": True,
             "checkpoints": {str(k): {"path": f"class_{k}.ckpt", "sha256": file_sha256(out / f"class_{k}.ckpt")}
                             for k in sorted(cks)}}
    _write_json(stamp_path, stamp)
    return stamp


# --- augment ---------------------------------------------------------------

def cmd_augment(cfg: PipelineConfig) -> dict:
    manifest, m_hash = _manifest(cfg)
    gan_dir = cfg.run_dir / "gan"
    stamp = _read_json(_require(gan_dir / "stamp.json", "GAN checkpoints"))
    _check_stamp(stamp, "manifest_sha256", m_hash, "dataset manifest")
    if not stamp.get("complete"):
        raise StaleUpstream("GAN training did not finish; rerun train-gan")
    ck_hashes = {}
    synthetic = []
    for k, rec in sorted(stamp["checkpoints"].items(), key=lambda kv: int(kv[0])):
        path = _require(gan_dir / rec["path"], f"GAN checkpoint for class {k}")
        if file_sha256(path) != rec["sha256"]:
            raise StaleUpstream(f"{path} changed since train-gan; rerun train-gan")
        ck_hashes[k] = rec["sha256"]
        ck = load_gan(path)
        synthetic += generate_samples(ck, cfg.gan.samples_per_class, cfg.gan.sample_seed,
                                      antisymmetrize=cfg.gan.antisymmetrize)
    out = cfg.run_dir / "augment"
    path = out / "synthetic.gaf"
    serialize_images(synthetic, path, extra={"classes": manifest["classes"]})
    report = fidelity_report(_split_images(cfg, "train"), synthetic)
    for c in report["classes"].values():
        c.pop("nearest_real_all")
    _write_json(out / "fidelity.json", report)
    result = {"manifest_sha256": m_hash, "gan_checkpoints": ck_hashes,
              "synthetic_sha256": file_sha256(path), "count": len(synthetic)}
    _write_json(out / "stamp.json", result)
    log.info("generated %d synthetic images", len(synthetic))
    return result


# --- classifier ------------------------------------------------------------

def model_config(cfg: PipelineConfig, num_classes: int) -> MacnnConfig:
    m = cfg.model
    if m.num_classes is not None and m.num_classes != num_classes:
        raise ConfigError(f"model.num_classes={m.num_classes} but the dataset has {num_classes} classes")
    if m.dims != "2d_image":
        raise ConfigError("model.dims: the pipeline feeds GADF images; use 2d_image")
    return MacnnConfig(input_size=cfg.encode.image_size, in_channels=1, wide_kernel=m.wide_kernel,
                       wide_stride=m.wide_stride, wide_filters=m.wide_filters, branch_kernels=m.branch_kernels,
                       stage_filters=m.stage_filters, se_reduction=m.se_reduction, eca_gamma=m.eca_gamma,
                       eca_b=m.eca_b, num_classes=num_classes, dims=m.dims)


def train_config(cfg: PipelineConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(learning_rate=t.learning_rate, adam_betas=t.adam_betas, batch_size=t.batch_size,
                       epochs=t.epochs, seed=t.seed)


def cmd_train_classifier(cfg: PipelineConfig, augment: bool = True) -> dict:
    manifest, m_hash = _manifest(cfg)
    names = manifest["classes"]
    train = _split_images(cfg, "train")
    val = _split_images(cfg, "val")
    syn_hash = None
    if augment:
        aug_dir = cfg.run_dir / "augment"
        stamp = _read_json(_require(aug_dir / "stamp.json", "synthetic images"))
        _check_stamp(stamp, "manifest_sha256", m_hash, "dataset manifest")
        syn_path = _require(aug_dir / "synthetic.gaf", "synthetic images")
        syn_hash = file_sha256(syn_path)
        _check_stamp(stamp, "synthetic_sha256", syn_hash, "synthetic image container")
        train = train + load_images(syn_path)
    variant = _variant(augment)
    out = cfg.run_dir / "classifier" / variant
    if out.exists():
        shutil.rmtree(out)
    mcfg = model_config(cfg, len(names))
    ck = train_classifier(train, val, mcfg, train_config(cfg), class_names=names,
                          log_path=out / "train_log.csv")
    ck_path = out / "checkpoint.ckpt"
    save_classifier(ck, ck_path)
    stamp = {"manifest_sha256": m_hash, "synthetic_sha256": syn_hash, "augmented": augment,
             "n_train": len(train), "checkpoint_sha256": file_sha256(ck_path),
             "best_val_accuracy": ck.best_val_accuracy, "best_epoch": ck.best_epoch}
    _write_json(out / "stamp.json", stamp)
    return stamp


def _classifier(cfg: PipelineConfig, augment: bool, m_hash: str):
    out = cfg.run_dir / "classifier" / _variant(augment)
    stamp = _read_json(_require(out / "stamp.json", f"{_variant(augment)} classifier"))
    _check_stamp(stamp, "manifest_sha256", m_hash, "dataset manifest")
    ck_path = _require(out / "checkpoint.ckpt", "classifier checkpoint")
    _check_stamp(stamp, "checkpoint_sha256", file_sha256(ck_path), "classifier checkpoint")
    return load_classifier(ck_path), stamp


def run_meta(cfg: PipelineConfig, m_hash: str, stamp: dict) -> dict:
    return {
        "config_hash": cfg.content_hash(),
        "manifest_sha256": m_hash,
        "checkpoint_sha256": stamp["checkpoint_sha256"],
        "synthetic_sha256": stamp["synthetic_sha256"],
        "augmented": stamp["augmented"],
        "variant": _variant(stamp["augmented"]),
        "seeds": {"split": cfg.dataset.seed, "gan": cfg.gan.seed, "gan_sample": cfg.gan.sample_seed,
                  "train": cfg.train.seed, "tsne": cfg.evaluate.tsne_seed},
    }


def cmd_evaluate(cfg: PipelineConfig, augment: bool = True) -> EvaluationReport:
    _, m_hash = _manifest(cfg)
    ck, stamp = _classifier(cfg, augment, m_hash)
    report = evaluate_model(ck, _split_images(cfg, "test"), run_meta(cfg, m_hash, stamp))
    _write_json(cfg.run_dir / "reports" / _variant(augment) / "evaluation.json", report.to_dict())
    log.info("test accuracy %.4f", report.accuracy)
    return report


def cmd_report(cfg: PipelineConfig, augment: bool = True) -> dict:
    _, m_hash = _manifest(cfg)
    ck, stamp = _classifier(cfg, augment, m_hash)
    out = cfg.run_dir / "reports" / _variant(augment)
    ev_path = _require(out / "evaluation.json", "evaluation (run evaluate first)")
    report = EvaluationReport.from_dict(_read_json(ev_path))
    if report.run_meta.get("checkpoint_sha256") != stamp["checkpoint_sha256"]:
        raise StaleUpstream("evaluation predates the classifier checkpoint; rerun evaluate")
    test = _split_images(cfg, "test")
    labels = np.array([im.label for im in test])
    ev = cfg.evaluate
    # t-SNE needs more than 3 * perplexity points
    perplexity = min(ev.tsne_perplexity, (len(test) - 1) / 3.0)
    projections = []
    if perplexity >= 2:
        untrained = MACNN(ck.config, seed=ck.train_config.seed)
        for stage, model in (("initial", untrained), ("final", ck)):
            feats = extract_embeddings(model, test)
            projections.append(tsne_project(feats, labels, perplexity, ev.tsne_seed, stage, ev.tsne_iter))
    paths = render_report(report, projections, out, ck.history)
    return {k: str(v) for k, v in paths.items()}
