"""Desk-scale toolkit: elastic-net and C&W adversarial attacks against small
image classifiers, evaluated obliviously against an autoencoder defense."""

from .attacks import (AttackAborted, AttackConfig, AttackResult, Distortion,
                      attack_loss_targeted, attack_loss_untargeted, cw_attack,
                      distortion_metrics, ead_attack, fgsm_attack, ista_step,
                      shrink_threshold)
from .autodiff import Grads, Tape, Tensor, backward_grad, numeric_gradient, softmax
from .data import (Dataset, DataFormatError, SyntheticSpec, load_cifar10_bin,
                   load_mnist_idx, save_mnist_idx, synthetic_blobs, synthetic_digits)
from .defense import (DefensePipeline, DefenseVerdict, Detector,
                      build_pipeline_from_file, calibrate_thresholds,
                      defend_classify, detector_score, jsd_divergence,
                      load_pipeline_config, save_pipeline_config)
from .harness import (AttackSpec, EvalConfig, EvaluationReport, ReportRow,
                      craft_cell, evaluate_defense, read_report_csv,
                      select_clean_examples, sweep_confidence, write_report_csv)
from .modelio import (ModelFormatError, load_adversarial_cache, load_model,
                      save_adversarial_cache, save_model)
from .nets import (Autoencoder, Classifier, FiniteDiffReport, LayerSpec, Network,
                   build_autoencoder, build_classifier, build_network,
                   cifar_ae_specs, classifier_specs, finite_diff_check,
                   mnist_detector2_specs, mnist_reformer_specs)
from .train import (TrainConfig, TrainReport, TrainingDiverged,
                    train_autoencoder, train_classifier)

__version__ = "0.1.0"
