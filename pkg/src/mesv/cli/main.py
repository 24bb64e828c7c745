"""``mesv`` command line: gen-data, pretrain, finetune, score, eval, det.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

import argparse
import datetime
import os
import sys
from collections import OrderedDict
from dataclasses import replace

import numpy as np

from ..backend.attention import AttentionConfig, init_attention
from ..backend.nplda import NpldaModel, nplda_init_from_plda
from ..backend.plda import PldaModel, plda_fit_em
from ..backend.preprocess import Preprocessor, preprocess
from ..backend.scoring import (AttentionBackend, CosineMeanBackend, NpldaBackend, PldaBackend,
                               score_trials)
from ..encoder import EncoderConfig, encode, init_encoder
from ..errors import (CompatibilityError, ConfigError, ContractError, DataError, EmptyModelError,
                      NumericError)
from ..numkernel.tensor import Tensor
from ..objectives.metrics import DcfConfig, dcf_beta, det_curve, eer, min_dcf
from ..pipeline.sampling import build_eval_trials
from ..pipeline.train import (FinetuneConfig, NpldaTrainConfig, PretrainConfig, embed_corpus,
                              finetune_joint, pretrain_encoder, train_nplda)
from ..records import EmbeddingRecord, speaker_labels, stack_vectors
from ..synthdata import FeatureCorpusSpec, gen_feature_corpus
from . import formats
from .config import RunConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
BACKEND_KINDS = ("cosine", "attention", "plda", "nplda")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# configuration helpers --------------------------------------------------------

def encoder_config(cfg, n_classes):
    c = cfg["tdnn_channels"]
    return EncoderConfig(feat_dim=cfg["feat_dim"], layers=(((-2, -1, 0, 1, 2), c), ((-3, 0, 3), c)),
                         pooling=cfg["pooling"], asp_hidden=cfg["asp_hidden"], use_se=cfg["use_se"],
                         se_ratio=cfg["se_ratio"], embedding_dim=cfg["embedding_dim"],
                         n_classes=n_classes)


def attention_config(cfg):
    return AttentionConfig(dim=cfg["embedding_dim"], sdsa_heads=cfg["sdsa_heads"],
                           ffsa_heads=cfg["ffsa_heads"], ffsa_hidden=cfg["ffsa_hidden"])


def pretrain_config(cfg):
    return PretrainConfig(
        epochs=cfg["pretrain_epochs"], batch_size=cfg["pretrain_batch"], loss=cfg["pretrain_loss"],
        am_scale=cfg["am_scale"], am_margin=cfg["am_margin"], optimizer=cfg["pretrain_optimizer"],
        lr=cfg["pretrain_lr"], momentum=cfg["pretrain_momentum"], beta1=cfg["pretrain_beta1"],
        beta2=cfg["pretrain_beta2"], weight_decay=cfg["pretrain_weight_decay"],
        schedule=cfg["pretrain_schedule"], restart_period=cfg["restart_period"],
        restart_factor=cfg["restart_factor"], mixup=cfg["feature_mixup"],
        mixup_psi=cfg["feature_mixup_psi"], seed=cfg["seed"])


def finetune_config(cfg, freeze):
    return FinetuneConfig(
        epochs=cfg["finetune_epochs"], batches_per_epoch=cfg["batches_per_epoch"],
        S=cfg["batch_speakers"], U=cfg["batch_utterances"], optimizer=cfg["finetune_optimizer"],
        lr=cfg["finetune_lr"], momentum=cfg["finetune_momentum"],
        weight_decay=cfg["finetune_weight_decay"], schedule=cfg["finetune_schedule"],
        decay=cfg["finetune_decay"], lam=cfg["loss_lambda"], focal_alpha=cfg["focal_alpha"],
        focal_gamma=cfg["focal_gamma"], mixup_rate=cfg["embedding_mixup_rate"],
        mixup_psi=cfg["embedding_mixup_psi"], freeze_encoder=freeze,
        backend_init=cfg["backend_init"], seed=cfg["seed"])


def dcf_config(cfg):
    return DcfConfig(c_miss=cfg["c_miss"], c_fa=cfg["c_fa"], p_target=cfg["p_target"])


# logging ----------------------------------------------------------------------

class RunLog:
    """Line-oriented run log; only the first line carries a timestamp."""

    def __init__(self, path, command, cfg):
        self.fh = open(path, "w", encoding="utf-8", newline="\n")
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        self.fh.write(f"# mesv {command} started {stamp}\n")
        self.fh.write(cfg.dump())
        self.fh.flush()

    def line(self, text):
        self.fh.write(text + "\n")
        self.fh.flush()

    def row(self, row):
        self.line(" ".join(f"{k}={formats.format_score(v) if isinstance(v, float) else v}"
                           for k, v in row.items()))

    def close(self):
        self.fh.close()


# model container ----------------------------------------------------------------

def _meta(cfg, kind):
    digest = np.frombuffer(cfg.architecture_hash(), dtype=np.uint8).astype(np.float64)
    return OrderedDict([("meta.config_hash", digest), (f"meta.backend.{kind}", np.ones(()))])


def save_model(path, cfg, kind, encoder=None, backend=None):
    tensors = _meta(cfg, kind)
    for name, p in (encoder or {}).items():
        tensors[f"encoder.{name}"] = p.data
    for name, value in (backend or {}).items():
        tensors[f"{kind}.{name}"] = value.data if isinstance(value, Tensor) else value
    formats.write_model(path, tensors)


class LoadedModel:
    def __init__(self, kind, enc_cfg, encoder, backend):
        self.kind = kind
        self.enc_cfg = enc_cfg
        self.encoder = encoder
        self.backend = backend


def _section(tensors, prefix):
    return OrderedDict((k[len(prefix):], v) for k, v in tensors.items() if k.startswith(prefix))


def load_model(path, cfg):
    tensors = formats.read_model(path)
    if not tensors:
        return LoadedModel(None, None, {}, {})
    digest = tensors.get("meta.config_hash")
    want = np.frombuffer(cfg.architecture_hash(), dtype=np.uint8).astype(np.float64)
    if digest is None or digest.shape != want.shape or not np.array_equal(digest, want):
        raise CompatibilityError(f"{path} was written under a different architecture config")
    kinds = [k[len("meta.backend."):] for k in tensors if k.startswith("meta.backend.")]
    if len(kinds) != 1:
        raise CompatibilityError(f"{path} declares {len(kinds)} back-end kinds")
    kind = kinds[0]
    enc_raw = _section(tensors, "encoder.")
    enc_cfg, encoder = None, {}
    if enc_raw:
        if "head.bias" not in enc_raw:
            raise CompatibilityError("encoder section lacks its classifier head")
        enc_cfg = encoder_config(cfg, enc_raw["head.bias"].shape[0])
        expected = {k: v.shape for k, v in init_encoder(enc_cfg, np.random.default_rng(0)).items()}
        formats.check_shapes(tensors, expected, "encoder.")
        encoder = OrderedDict((k, Tensor(enc_raw[k], requires_grad=True, name=k)) for k in expected)
    back_raw = _section(tensors, f"{kind}.") if kind != "none" else {}
    if kind == "attention" and back_raw:
        expected = {k: v.shape for k, v in init_attention(attention_config(cfg),
                                                          np.random.default_rng(0)).items()}
        formats.check_shapes(tensors, expected, "attention.")
        back_raw = OrderedDict((k, Tensor(back_raw[k], requires_grad=(k != "center"), name=k))
                               for k in expected)
    return LoadedModel(kind, enc_cfg, encoder, back_raw)


def _plda_tensors(model):
    out = OrderedDict([("mu", model.mu), ("F", model.F), ("Sigma", model.Sigma)])
    pre = model.preproc
    out["pre.mean"] = pre.mean
    if pre.lda is not None:
        out["pre.lda"] = pre.lda
    out["pre.length_norm"] = np.array(float(pre.length_norm))
    return out


def _plda_from(raw):
    need = ("mu", "F", "Sigma", "pre.mean", "pre.length_norm")
    missing = [k for k in need if k not in raw]
    if missing:
        raise CompatibilityError(f"PLDA section lacks {missing}")
    pre = Preprocessor(mean=raw["pre.mean"], lda=raw.get("pre.lda"),
                       length_norm=bool(raw["pre.length_norm"]))
    return PldaModel(mu=raw["mu"], F=raw["F"], Sigma=raw["Sigma"], preproc=pre)


def _nplda_from(raw):
    names = ("affine1.weight", "affine1.bias", "affine2.weight", "affine2.bias", "P", "Q")
    missing = [k for k in names + ("length_norm",) if k not in raw]
    if missing:
        raise CompatibilityError(f"NPLDA section lacks {missing}")
    params = OrderedDict((k, Tensor(raw[k], requires_grad=True, name=f"nplda.{k}")) for k in names)
    return NpldaModel(params, length_norm=bool(raw["length_norm"]))


def make_backend(model, cfg):
    if model.kind is None:
        raise EmptyModelError("model container holds no tensors")
    if model.kind in ("cosine", "none"):
        return CosineMeanBackend()
    if not model.backend:
        raise EmptyModelError(f"model has no {model.kind} back-end parameters")
    if model.kind == "attention":
        return AttentionBackend(model.backend, attention_config(cfg))
    if model.kind == "plda":
        return PldaBackend(_plda_from(model.backend))
    if model.kind == "nplda":
        return NpldaBackend(_nplda_from(model.backend))
    raise CompatibilityError(f"unknown back-end kind {model.kind!r}")


# commands ---------------------------------------------------------------------

def _out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def cmd_gen_data(args, cfg):
    spec = FeatureCorpusSpec(n_speakers=cfg["train_speakers"],
                             utts_per_speaker=cfg["utts_per_speaker"], feat_dim=cfg["feat_dim"],
                             speaker_scale=cfg["speaker_scale"], noise_scale=cfg["noise_scale"],
                             n_genres=cfg["n_genres"], genre_scale=cfg["genre_scale"],
                             min_frames=cfg["min_frames"], max_frames=cfg["max_frames"],
                             seed=cfg["seed"])
    train = gen_feature_corpus(spec)
    held = gen_feature_corpus(replace(spec, n_speakers=cfg["eval_speakers"],
                                      first_speaker=cfg["train_speakers"]))
    formats.write_features(_out_path(args, "train.fea"), train)
    formats.write_features(_out_path(args, "eval.fea"), held)
    ids = OrderedDict()
    for s in held:
        ids.setdefault(s.speaker_id, []).append(s.utterance_id)
    trials = build_eval_trials(ids, cfg.enroll_counts(), np.random.default_rng([cfg["seed"], 7]))
    formats.write_trials(_out_path(args, "trials.txt"), trials)
    return EXIT_OK


def _relabel(corpus):
    """Dense speaker labels by first appearance, independent of stored labels."""
    labels, _ = speaker_labels(corpus)
    return [replace(s, speaker_label=int(y)) for s, y in zip(corpus, labels)]


def cmd_pretrain(args, cfg):
    corpus = _relabel(formats.read_features(args.train, cfg["feat_dim"]))
    n_classes = len({s.speaker_id for s in corpus})
    enc_cfg = encoder_config(cfg, n_classes)
    log = RunLog(_out_path(args, "pretrain.log"), "pretrain", cfg)
    every = cfg["checkpoint_every"]

    def on_epoch(row, params):
        log.row(row)
        if every and (row["epoch"] + 1) % every == 0:
            save_model(_out_path(args, f"encoder_epoch{row['epoch'] + 1:03d}.enkt"), cfg, "none",
                       params)

    try:
        res = pretrain_encoder(corpus, enc_cfg, pretrain_config(cfg), on_epoch=on_epoch)
    finally:
        log.close()
    save_model(_out_path(args, "encoder.enkt"), cfg, "none", res.params)
    return EXIT_OK


def cmd_finetune(args, cfg):
    kind = args.backend or cfg["backend"]
    if kind not in BACKEND_KINDS:
        raise ConfigError(f"backend must be one of {BACKEND_KINDS}, got {kind!r}")
    model = load_model(args.encoder, cfg)
    if not model.encoder:
        raise EmptyModelError(f"{args.encoder} holds no encoder")
    corpus = _relabel(formats.read_features(args.train, cfg["feat_dim"]))
    freeze = args.freeze_encoder or cfg["freeze_encoder"]
    log = RunLog(_out_path(args, "finetune.log"), "finetune", cfg)
    log.line(f"backend={kind} freeze_encoder={str(freeze).lower()}")
    every = cfg["checkpoint_every"]
    encoder = model.encoder
    try:
        if kind == "attention":
            def on_epoch(row, params):
                log.row(row)
                if every and (row["epoch"] + 1) % every == 0:
                    enc = {k: v for k, v in params.items() if k in encoder}
                    back = {k: v for k, v in params.items() if k not in encoder}
                    save_model(_out_path(args, f"model_epoch{row['epoch'] + 1:03d}.enkt"), cfg,
                               kind, enc if enc else encoder, back)

            res = finetune_joint(encoder, model.enc_cfg, corpus, finetune_config(cfg, freeze),
                                 attention_config(cfg), on_epoch=on_epoch)
            encoder, backend = res.params, res.backend
        elif kind == "cosine":
            backend = {}
        else:
            records = embed_corpus(corpus, model.enc_cfg, encoder)
            lda = cfg["lda_dim"] or None
            pre_recs, pre = preprocess(records, center=True, lda_dim=lda,
                                       length_norm=cfg["length_norm"])
            labels, _ = speaker_labels(pre_recs)
            rank = min(cfg["plda_rank"], pre.out_dim) if cfg["plda_rank"] else max(1, pre.out_dim // 2)
            plda = plda_fit_em(stack_vectors(pre_recs), labels, rank, iters=cfg["plda_iters"],
                               preproc=pre)
            log.line("plda_loglik=" + ",".join(formats.format_score(v) for v in plda.loglik))
            if kind == "plda":
                backend = _plda_tensors(plda)
            else:
                nmodel = nplda_init_from_plda(plda)
                ncfg = NpldaTrainConfig(epochs=cfg["nplda_epochs"], S=cfg["batch_speakers"],
                                        U=cfg["batch_utterances"], loss=cfg["nplda_loss"],
                                        lr=cfg["nplda_lr"], seed=cfg["seed"])
                res = train_nplda(nmodel, records, ncfg)
                for row in res.history:
                    log.row(row)
                backend = OrderedDict((k, v.data) for k, v in nmodel.params.items())
                backend["length_norm"] = np.array(float(nmodel.length_norm))
    finally:
        log.close()
    save_model(_out_path(args, "model.enkt"), cfg, kind, encoder, backend)
    return EXIT_OK


def _embeddings_for(args, cfg, model, needed):
    if args.embeddings:
        records = formats.read_embeddings(args.embeddings, cfg["embedding_dim"])
        index = formats.unique_index(records)
        return {u: index[u].vector for u in needed}
    if not model.encoder:
        raise EmptyModelError("scoring features needs a model with an encoder")
    seqs = formats.unique_index(formats.read_features(args.features, cfg["feat_dim"]))
    return {u: encode(seqs[u].frames, model.enc_cfg, model.encoder).data for u in needed}


def cmd_score(args, cfg):
    if bool(args.features) == bool(args.embeddings):
        raise UsageError("score needs exactly one of --features or --embeddings")
    model = load_model(args.model, cfg)
    backend = make_backend(model, cfg)
    trials = formats.read_trials(args.trials)
    if args.embeddings:
        known = formats.unique_index(formats.read_embeddings(args.embeddings, cfg["embedding_dim"]))
    else:
        known = formats.unique_index(formats.read_features(args.features, cfg["feat_dim"]))
    formats.check_references(trials, known)
    needed = sorted({u for t in trials for u in t.enroll_ids + (t.test_id,)})
    vectors = _embeddings_for(args, cfg, model, needed)
    scored = score_trials(backend, trials, vectors)
    formats.write_scores(_out_path(args, "scores.txt"), scored)
    return EXIT_OK


def _fmt_rate(x):
    return f"{100.0 * x:.4f}"


def _metrics(scores, labels, beta):
    if not (np.any(labels == 1) and np.any(labels == 0)):
        return "n/a", "n/a"
    return _fmt_rate(eer(scores, labels)), f"{min_dcf(scores, labels, beta):.4f}"


def build_report(scores, labels, counts, cfg):
    beta = dcf_beta(dcf_config(cfg))
    tag = f"minDCF({cfg['p_target']:g})"
    e, d = _metrics(scores, labels, beta)
    lines = ["# mesv evaluation report",
             f"trials\t{len(scores)}",
             f"targets\t{int(np.sum(labels == 1))}",
             f"nontargets\t{int(np.sum(labels == 0))}",
             f"EER(%)\t{e}",
             f"{tag}\t{d}"]
    if counts is not None:
        lines += ["# enrollment-count breakdown", f"K\ttrials\tEER(%)\t{tag}"]
        for k in (1, 2, 3, 4, 5):
            mask = counts == k if k < 5 else counts >= 5
            name = str(k) if k < 5 else ">=5"
            if not np.any(mask):
                lines.append(f"{name}\t0\tn/a\tn/a")
                continue
            e, d = _metrics(scores[mask], labels[mask], beta)
            lines.append(f"{name}\t{int(mask.sum())}\t{e}\t{d}")
    return "\n".join(lines) + "\n"


def _aligned_scores(args):
    idx, scores, labels = formats.read_scores(args.scores)
    if len(idx) == 0:
        raise ContractError(f"{args.scores} holds no scores")
    counts = None
    if args.trials:
        trials = formats.read_trials(args.trials)
        if len(set(idx.tolist())) != len(idx) or idx.min() < 0 or idx.max() >= len(trials):
            raise formats.ReferentialIntegrityError(
                [str(i) for i in idx if not 0 <= i < len(trials)] or ["duplicate line index"],
                "trial line index")
        if any(trials[i].label != y for i, y in zip(idx, labels)):
            raise ContractError("score labels disagree with the trial file")
        counts = np.array([trials[i].num_enroll for i in idx])
    return scores, labels, counts


def cmd_eval(args, cfg):
    scores, labels, counts = _aligned_scores(args)
    report = build_report(scores, labels, counts, cfg)
    with open(_out_path(args, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_det(args, cfg):
    _, scores, labels = formats.read_scores(args.scores)
    p_fa, p_miss = det_curve(scores, labels)
    with open(_out_path(args, "det.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("p_fa,p_miss\n")
        for a, b in zip(p_fa, p_miss):
            fh.write(f"{formats.format_score(a)},{formats.format_score(b)}\n")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "score": cmd_score, "eval": cmd_eval, "det": cmd_det}


def build_parser():
    parser = _Parser(prog="mesv", description="Multi-enrollment speaker verification toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        return p

    add("gen-data", "write synthetic train/eval feature corpora and an eval trial list")
    p = add("pretrain", "stage 1: speaker-classification training of the encoder")
    p.add_argument("--train", required=True, help="training features (FEA1)")
    p = add("finetune", "stage 2: train a back-end, optionally jointly with the encoder")
    p.add_argument("--train", required=True, help="training features (FEA1)")
    p.add_argument("--encoder", required=True, help="pretrained encoder (ENKT)")
    p.add_argument("--backend", choices=BACKEND_KINDS, help="override the config back-end")
    p.add_argument("--freeze-encoder", action="store_true", help="train the back-end only")
    p = add("score", "score a trial list")
    p.add_argument("--model", required=True, help="model container (ENKT)")
    p.add_argument("--trials", required=True, help="trial list")
    p.add_argument("--features", help="features to encode with the model's encoder (FEA1)")
    p.add_argument("--embeddings", help="precomputed embeddings (EMB1)")
    p = add("eval", "EER / minDCF report with the enrollment-count breakdown")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", help="trial list, enables the per-K breakdown")
    p = add("det", "DET operating points as CSV")
    p.add_argument("--scores", required=True)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.set("seed", args.seed)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"mesv: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"mesv: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ContractError, OSError) as exc:
        print(f"mesv: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry():
    sys.exit(main())
