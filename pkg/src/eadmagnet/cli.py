"""Command-line lifecycle: train -> calibrate -> attack -> evaluate -> report.

All logs go to stderr; data goes only to files. Exit codes: 0 success,
2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import defense as dfs
from . import harness
from .attacks import AttackAborted, AttackConfig, cw_attack, ead_attack, fgsm_attack
from .data import (DataFormatError, Dataset, SyntheticSpec, load_cifar10_bin,
                   load_mnist_idx, synthetic_blobs, synthetic_digits)
from .modelio import ModelFormatError, load_model, save_adversarial_cache, save_model
from .nets import (Autoencoder, Classifier, LayerSpec, build_autoencoder,
                   build_classifier, build_network)
from .train import TrainConfig, TrainingDiverged, train_autoencoder, train_classifier

log = logging.getLogger("eadmagnet")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True,
                   choices=["mnist", "cifar10", "synthetic", "digits"])
    p.add_argument("--images", help="IDX image file (mnist)")
    p.add_argument("--labels", help="IDX label file (mnist)")
    p.add_argument("--test-images", help="IDX image file for the test split")
    p.add_argument("--test-labels", help="IDX label file for the test split")
    p.add_argument("--data", help="binary batch file (cifar10)")
    p.add_argument("--test-data", help="binary test batch (cifar10)")
    p.add_argument("--count", type=int, default=600, help="generated example count")
    p.add_argument("--test-count", type=int, default=200)
    p.add_argument("--classes", type=int, default=3, help="synthetic class count")
    p.add_argument("--dim", type=int, default=16, help="synthetic dimension")
    p.add_argument("--noise", type=float, default=0.08, help="synthetic noise sigma")


def _load_datasets(args) -> tuple[Dataset, Dataset]:
    """Returns (train, test)."""
    if args.dataset == "mnist":
        if not args.images or not args.labels:
            raise UsageError("--dataset mnist needs --images and --labels")
        train = load_mnist_idx(args.images, args.labels)
        if args.test_images and args.test_labels:
            test = load_mnist_idx(args.test_images, args.test_labels)
        else:
            train, test = train.split_validation(0.2)
        return train, test
    if args.dataset == "cifar10":
        if not args.data:
            raise UsageError("--dataset cifar10 needs --data")
        train = load_cifar10_bin(args.data)
        if args.test_data:
            test = load_cifar10_bin(args.test_data)
        else:
            train, test = train.split_validation(0.2)
        return train, test
    if args.dataset == "digits":
        return synthetic_digits(n_train=args.count, n_test=args.test_count,
                                seed=args.seed)
    spec = SyntheticSpec(classes=args.classes, dim=args.dim, noise_sigma=args.noise,
                         count=args.count + args.test_count, seed=args.seed)
    full = synthetic_blobs(spec)
    return (full.take(args.count),
            Dataset(full.images[args.count:], full.labels[args.count:],
                    full.image_shape, full.k, full.name))


def _default_classifier(ds: Dataset, seed: int) -> Classifier:
    if len(ds.image_shape) == 3 and ds.image_shape[0] >= 8:
        return build_classifier(ds.image_shape, ds.k, seed=seed)
    specs = [LayerSpec("dense", units=32), LayerSpec("relu"),
             LayerSpec("dense", units=ds.k)]
    shape = (int(np.prod(ds.image_shape)),)
    return Classifier(net=build_network(specs, shape, seed=seed), k=ds.k)


def _default_autoencoder(ds: Dataset, arch: str, filters: int, loss: str,
                         seed: int) -> Autoencoder:
    if len(ds.image_shape) == 3 and ds.image_shape[0] >= 8:
        if arch == "auto":
            arch = "cifar" if ds.image_shape[2] == 3 else "mnist_reformer"
        return build_autoencoder(ds.image_shape, arch=arch, filters=filters,
                                 loss_kind=loss, seed=seed)
    p = int(np.prod(ds.image_shape))
    specs = [LayerSpec("dense", units=max(p // 2, 2)), LayerSpec("sigmoid"),
             LayerSpec("dense", units=p), LayerSpec("sigmoid")]
    return Autoencoder(net=build_network(specs, (p,), seed=seed), loss_kind=loss)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad numeric list {text!r}") from exc


def _train_flags(p, epochs: int, lr: float):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--train-lr", type=float, default=lr)
    p.add_argument("--momentum", type=float, default=0.9)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eadmagnet",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-classifier", help="train and save a classifier")
    _add_dataset_flags(p)
    _train_flags(p, epochs=10, lr=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-ae", help="train and save an autoencoder")
    _add_dataset_flags(p)
    _train_flags(p, epochs=20, lr=0.5)
    p.add_argument("--arch", default="auto",
                   choices=["auto", "mnist_reformer", "mnist_detector2", "cifar"])
    p.add_argument("--filters", type=int, default=3)
    p.add_argument("--ae-loss", default="mse", choices=["mse", "mae"])
    p.add_argument("--ae-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", help="calibrate detector thresholds; write pipeline config")
    _add_dataset_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--reformer", required=True, help="reformer AE weights (detector I)")
    p.add_argument("--detector2", help="separate AE weights for detector II")
    p.add_argument("--temps", default="", help="comma list of JSD temperatures")
    p.add_argument("--temp-mode", default="logits", choices=["logits", "probs"])
    p.add_argument("--fp-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attack", help="craft adversarial examples; write a cache file")
    _add_dataset_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--attack", required=True, choices=["ead", "cw", "fgsm"])
    p.add_argument("--beta", type=float, default=1e-2)
    p.add_argument("--rule", default="en", choices=["en", "l1"])
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, default=0.3, help="fgsm step")
    p.add_argument("--binary-steps", type=int, default=9)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a crafted cache against a pipeline")
    _add_dataset_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--pipeline", required=True)
    p.add_argument("--adv", required=True, help="EADADV1 cache file")
    p.add_argument("--attack", default="ead", choices=["ead", "cw", "fgsm"])
    p.add_argument("--beta", type=float, default=1e-2)
    p.add_argument("--rule", default="en", choices=["en", "l1"])
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="full train/calibrate/attack/evaluate grid")
    _add_dataset_flags(p)
    p.add_argument("--model", help="reuse classifier weights instead of training")
    p.add_argument("--reformer", help="reuse reformer AE weights")
    p.add_argument("--detector2", help="reuse detector-II AE weights")
    p.add_argument("--attack", default="ead", help="comma list: ead,cw,fgsm")
    p.add_argument("--beta", default="0.01", help="comma list of betas")
    p.add_argument("--rule", default="en", help="comma list: en,l1")
    p.add_argument("--kappa", "--kappas", dest="kappas", default="0,5,10,15,20",
                   help="comma list of confidences")
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--binary-steps", type=int, default=9)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--fp-rate", type=float, default=1e-3)
    p.add_argument("--temps", default="", help="JSD temperatures, e.g. 10,40")
    p.add_argument("--temp-mode", default="logits", choices=["logits", "probs"])
    p.add_argument("--filters", type=int, default=3)
    p.add_argument("--ae-loss", default="mse", choices=["mse", "mae"])
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache-dir", help="adversarial cache directory")
    p.add_argument("--timing", action="store_true",
                   help="record wall time in the seconds column (breaks byte reproducibility)")
    p.add_argument("--no-reform", action="store_true", help="bypass the reformer")
    p.add_argument("--paper-scale", action="store_true",
                   help="paper-scale defaults: 1000 examples, 9 steps, 1000 iters, kappa 0..40")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="summarize a sweep CSV")
    p.add_argument("--in", dest="infile", required=True)
    return ap


def _cmd_train_classifier(args) -> int:
    train, test = _load_datasets(args)
    model = _default_classifier(train, args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.train_lr,
                      momentum=args.momentum, seed=args.seed, log_every=1)
    report = train_classifier(model, train.images, train.labels, cfg,
                              val=(test.images, test.labels))
    save_model(args.out, model.net)
    log.info("saved classifier to %s (train acc %.4f, val acc %.4f)", args.out,
             report.final_train_accuracy, report.validation_accuracy)
    return EXIT_OK


def _cmd_train_ae(args) -> int:
    train, test = _load_datasets(args)
    model = _default_autoencoder(train, args.arch, args.filters, args.ae_loss,
                                 args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.train_lr,
                      momentum=args.momentum, seed=args.seed,
                      noise_sigma=args.ae_noise, log_every=1)
    report = train_autoencoder(model, train.images, cfg, val=test.images)
    save_model(args.out, model.net)
    log.info("saved autoencoder to %s (val loss %.5f)", args.out,
             report.validation_loss)
    return EXIT_OK


def _build_detectors(args, reformer, detector2):
    dets = [dfs.Detector(kind="recon-l1", ae=reformer)]
    dets.append(dfs.Detector(kind="recon-l2", ae=detector2 or reformer))
    for t in _parse_floats(args.temps):
        dets.append(dfs.Detector(kind="jsd", temperature=t, temp_mode=args.temp_mode))
    return dets


def _cmd_calibrate(args) -> int:
    train, _ = _load_datasets(args)
    model = Classifier(net=load_model(args.model), k=train.k)
    reformer = Autoencoder(net=load_model(args.reformer))
    detector2 = Autoencoder(net=load_model(args.detector2)) if args.detector2 else None
    _, val = train.split_validation(0.1)
    dets = _build_detectors(args, reformer, detector2)
    dets = dfs.calibrate_thresholds(dets, model, reformer, val.images, args.fp_rate)
    ae_paths = [args.reformer, args.detector2 or args.reformer] + \
               [None] * (len(dets) - 2)
    dfs.save_pipeline_config(args.out, dets, args.reformer, args.fp_rate,
                             temp_mode=args.temp_mode, ae_paths=ae_paths)
    for det in dets:
        log.info("calibrated %s threshold=%.6g", det.label(), det.threshold)
    return EXIT_OK


def _cmd_attack(args) -> int:
    if args.attack == "cw" and args.beta > 0:
        raise UsageError("--attack cw conflicts with --beta > 0 (cw is the beta=0 case)")
    _, test = _load_datasets(args)
    model = Classifier(net=load_model(args.model), k=test.k)
    xs, ys, _ = harness.select_clean_examples(model, test.images, test.labels,
                                              args.n, args.seed)
    cfg = AttackConfig(beta=0.0 if args.attack == "cw" else args.beta,
                       kappa=args.kappa, iterations=args.iters, lr=args.lr,
                       binary_steps=args.binary_steps, rule="l2" if args.attack == "cw" else args.rule)
    entries = []
    for i in range(len(xs)):
        try:
            if args.attack == "fgsm":
                res = fgsm_attack(model, xs[i], int(ys[i]), args.epsilon)
            elif args.attack == "cw":
                res = cw_attack(model, xs[i], int(ys[i]), cfg)
            else:
                res = ead_attack(model, xs[i], int(ys[i]), cfg)
            entries.append((i, res.success, res.x if res.success else None))
        except AttackAborted as exc:
            log.warning("example %d aborted: %s", i, exc)
            entries.append((i, False, None))
    save_adversarial_cache(args.out, entries, pixel_count=xs.shape[1])
    n_ok = sum(1 for e in entries if e[1])
    log.info("crafted %d/%d examples -> %s", n_ok, len(entries), args.out)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .modelio import load_adversarial_cache

    _, test = _load_datasets(args)
    model = Classifier(net=load_model(args.model), k=test.k)
    pipeline = dfs.build_pipeline_from_file(args.pipeline, model)
    xs, ys, _ = harness.select_clean_examples(model, test.images, test.labels,
                                              args.n, args.seed)
    entries = load_adversarial_cache(args.adv)
    if len(entries) != len(xs):
        raise DataFormatError(
            f"cache holds {len(entries)} entries but selection has {len(xs)}")
    adv = [e[2] for e in entries]
    scores = harness.evaluate_defense(pipeline, adv, ys)
    m1, m2, mi = harness._distortion_means(adv, xs)
    row = harness.ReportRow(dataset=args.dataset, attack=args.attack, rule=args.rule,
                            beta=args.beta, kappa=args.kappa, n=scores["n"],
                            asr_pct=scores["asr_pct"],
                            defense_acc_pct=scores["defense_acc_pct"],
                            detected_pct=scores["detected_pct"],
                            reformed_correct_pct=scores["reformed_correct_pct"],
                            mean_l1=m1, mean_l2=m2, mean_linf=mi, seconds=0.0)
    harness.write_report_csv(args.out, harness.EvaluationReport(rows=[row]))
    log.info("asr=%.1f%% -> %s", row.asr_pct, args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    attacks = []
    kinds = [k.strip() for k in args.attack.split(",") if k.strip()]
    for kind in kinds:
        if kind not in ("ead", "cw", "fgsm"):
            raise UsageError(f"unknown attack {kind!r}")
        if kind == "ead":
            for beta in _parse_floats(args.beta):
                for rule in [r.strip() for r in args.rule.split(",") if r.strip()]:
                    if rule not in ("en", "l1"):
                        raise UsageError(f"unknown rule {rule!r}")
                    attacks.append(harness.AttackSpec(kind="ead", beta=beta, rule=rule))
        elif kind == "cw":
            attacks.append(harness.AttackSpec(kind="cw", beta=0.0, rule="l2"))
        else:
            attacks.append(harness.AttackSpec(kind="fgsm", beta=0.0, rule="en",
                                              epsilon=args.epsilon))
    train, test = _load_datasets(args)
    train_main, val = train.split_validation(0.1)

    if args.model:
        model = Classifier(net=load_model(args.model), k=train.k)
    else:
        model = _default_classifier(train, args.seed)
        tc = TrainConfig(epochs=args.epochs, lr=0.05, seed=args.seed)
        train_classifier(model, train_main.images, train_main.labels, tc)
    if args.reformer:
        reformer = Autoencoder(net=load_model(args.reformer))
    else:
        reformer = _default_autoencoder(train, "auto", args.filters, args.ae_loss,
                                        args.seed + 1)
        train_autoencoder(reformer, train_main.images,
                          TrainConfig(epochs=args.epochs, lr=0.5, seed=args.seed + 1))
    if args.detector2:
        detector2 = Autoencoder(net=load_model(args.detector2))
    else:
        detector2 = None

    dets = _build_detectors(args, reformer, detector2)
    pipeline = dfs.DefensePipeline(classifier=model, detectors=dets,
                                   reformer=reformer,
                                   reform_enabled=not args.no_reform)
    pipeline.calibrate(val.images, args.fp_rate)

    kappas = tuple(_parse_floats(args.kappas))
    n, iters, steps = args.n, args.iters, args.binary_steps
    if args.paper_scale:
        kappas = tuple(float(k) for k in range(0, 45, 5))
        n, iters, steps = 1000, 1000, 9
    cfg = harness.EvalConfig(kappas=kappas, attacks=tuple(attacks), n_examples=n,
                             seed=args.seed, iterations=iters, binary_steps=steps,
                             lr=args.lr, cache_dir=args.cache_dir, jobs=args.jobs,
                             timing=args.timing, dataset_name=args.dataset)
    report = harness.sweep_confidence(model, pipeline, test.images, test.labels, cfg)
    harness.write_report_csv(args.out, report)
    log.info("wrote %d rows -> %s", len(report.rows), args.out)
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = harness.read_report_csv(args.infile)
    if not rows:
        raise DataFormatError(f"no rows in {args.infile}")
    cols = ("attack", "rule", "beta", "kappa", "asr_pct", "defense_acc_pct",
            "detected_pct", "mean_l1", "mean_l2")
    widths = {c: max(len(c), max(len(r.get(c, "")) for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(r.get(c, "").ljust(widths[c]) for c in cols))
    best = max(rows, key=lambda r: float(r["asr_pct"] or 0))
    print(f"\nbest ASR: {best['asr_pct']}% ({best['attack']} rule={best['rule']} "
          f"beta={best['beta']} kappa={best['kappa']})")
    return EXIT_OK


_COMMANDS = {
    "train-classifier": _cmd_train_classifier,
    "train-ae": _cmd_train_ae,
    "calibrate": _cmd_calibrate,
    "attack": _cmd_attack,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    resolved = {k: v for k, v in vars(args).items() if k != "command"}
    log.info("command=%s config=%s", args.command, resolved)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, AttackAborted, FloatingPointError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
