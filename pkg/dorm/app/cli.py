import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import ContextManager, Sequence, TextIO

from colorama import Fore, Style

from .core.checkpoint import CheckpointManifest, load_checkpoint, write_container
from .core.config import get_settings, read_run_config, resolve_table_path
from .core.exceptions import DatasetError, DormError, UsageError
from .core.model import attention_weights, correct_sentences
from .core.numeric import set_deterministic
from .core.textcodec import NOPY, CharVocab, PhonemeVocab, build_char_vocab
from .data.corruption import make_pretrain_corpus, make_toy_corpus
from .data.dataset import read_dataset
from .data.models import CorruptionPolicy
from .evaluation.evaluator import EvalReport, evaluate_examples, phonetic_recall
from .observability import init_observability
from .pinyin.table import PinyinTable, load_pinyin_table
from .training.trainer import build_run_configs, run_training

logger = logging.getLogger(__name__)


class DormArgumentParser(argparse.ArgumentParser):
    """Routes argparse usage errors through UsageError so they share the exit-code mapping."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _seed(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else get_settings().DORM_SEED
    set_deterministic(seed, get_settings().DORM_DETERMINISTIC)
    return seed


def _load_table(path: str | None) -> PinyinTable:
    resolved = resolve_table_path(path)
    if not resolved.exists():
        raise UsageError(
            f"Pinyin table not found: {resolved} (pass --table or set DORM_TABLE_PATH)"
        )
    return load_pinyin_table(resolved)


def _vocab_for_checkpoint(vocab: str | None, checkpoint: str) -> CharVocab:
    path = Path(vocab) if vocab else Path(checkpoint).parent / "vocab.txt"
    if not path.exists():
        raise UsageError(f"Vocabulary not found: {path} (pass --vocab)")
    return CharVocab.load(path)


def _read_text(path: str | None) -> str:
    """Whole text of PATH, or of stdin for None and '-'."""
    try:
        if path is None or path == "-":
            return sys.stdin.read()
        with open(path, encoding="utf-8") as read:
            return read.read()
    except UnicodeDecodeError as e:
        raise DatasetError(
            f"{path or 'stdin'}: not UTF-8 text (byte {e.start}: {e.reason})"
        ) from e
    except OSError as e:
        raise DatasetError(f"Cannot read {path}: {e.strerror}") from e


def _open_output(path: str | None) -> ContextManager[TextIO]:
    if path is None or path == "-":
        return contextlib.nullcontext(sys.stdout)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8")


def _print_report(report: EvalReport, out: TextIO | None = None) -> None:
    out = out or sys.stderr
    color = out.isatty()
    heading = f"{Fore.CYAN}{Style.BRIGHT}" if color else ""
    reset = Style.RESET_ALL if color else ""
    out.write(f"{heading}Sentence-level evaluation ({report.sentences} sentences){reset}\n")
    for level in ("detection", "correction"):
        p, r, f = (getattr(report, f"{level}_{m}") for m in ("precision", "recall", "f1"))
        value = f"{Fore.GREEN}{f:.4f}{reset}" if color else f"{f:.4f}"
        out.write(f"  {level:<10}  P {p:.4f}  R {r:.4f}  F1 {value}\n")
    out.write(
        f"  overcorrections {report.overcorrections}  undercorrections {report.undercorrections}\n"
    )


def cmd_pinyinize(args: argparse.Namespace) -> None:
    table = _load_table(args.table)
    if args.text is not None and args.input is not None:
        raise UsageError("pinyinize: give either TEXT or --input, not both")
    if args.text is not None:
        text = args.text
    else:
        text = _read_text(args.input)
    color = sys.stdout.isatty()
    dim = Style.DIM if color else ""
    reset = Style.RESET_ALL if color else ""
    for ch in text:
        if ch in "\r\n":
            continue
        syllable = table.char_to_syllable(ch)
        if syllable is None:
            print(f"{ch}\t{dim}{NOPY}\t{NOPY}\t-{reset}")
        else:
            initial = f"{Fore.YELLOW}{syllable.initial}{reset}" if color else syllable.initial
            final = f"{Fore.GREEN}{syllable.final}{reset}" if color else syllable.final
            print(f"{ch}\t{initial}\t{final}\t{syllable.tone}")


def cmd_make_data(args: argparse.Namespace) -> None:
    seed = _seed(args)
    corpus = make_toy_corpus(
        args.out,
        vocab_size=args.vocab_size,
        n_examples=args.examples,
        min_len=args.min_len,
        max_len=args.max_len,
        seed=seed,
    )
    print(f"{corpus.dataset_path}\n{corpus.table_path}\n{corpus.manifest_path}")


def cmd_pretrain_data(args: argparse.Namespace) -> None:
    seed = _seed(args)
    table = _load_table(args.table)
    vocab = CharVocab.load(args.vocab) if args.vocab else build_char_vocab(args.inputs)
    policy = CorruptionPolicy(seed=seed)
    stats = make_pretrain_corpus(args.inputs, args.out, policy, table, vocab, args.max_fragment)
    print(stats.model_dump_json())


def cmd_train(args: argparse.Namespace) -> None:
    values = read_run_config(args.config) if args.config else {}
    values.setdefault("seed", get_settings().DORM_SEED)
    overrides = {
        "mode": args.mode,
        "seed": args.seed,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "max_steps": args.max_steps,
        "init_checkpoint": args.init_checkpoint,
        "resume": True if args.resume else None,
        "deterministic": True if get_settings().DORM_DETERMINISTIC else None,
    }
    cfg, model_overrides = build_run_configs(values, overrides)
    table = _load_table(args.table)
    vocab = CharVocab.load(args.vocab) if args.vocab else None
    result = run_training(
        args.train, args.dev, cfg, args.out, table, vocab=vocab, model_overrides=model_overrides
    )
    print(result.model_dump_json())


def cmd_eval(args: argparse.Namespace) -> None:
    _seed(args)
    examples = read_dataset(args.data)
    table = _load_table(args.table)
    if args.checkpoint:
        vocab = _vocab_for_checkpoint(args.vocab, args.checkpoint)
        pv = PhonemeVocab()
        model = load_checkpoint(args.checkpoint, vocab, pv).model
        predictions = correct_sentences(
            [ex.source for ex in examples], model, vocab, pv, table, args.batch_size
        )
    else:
        predictions = _read_text(args.predictions).splitlines()

    report = evaluate_examples(examples, predictions, postproc13=args.postproc13)
    recall = phonetic_recall(examples, predictions, table, postproc13=args.postproc13)
    if args.out:
        with _open_output(args.out) as write:
            write.write(report.as_text())
            write.write(
                f"phonetic_restored: {recall.restored}\n"
                f"phonetic_total: {recall.total}\n"
                f"phonetic_recall: {recall.recall}\n"
            )
    _print_report(report)
    print(report.as_json_line())


def cmd_correct(args: argparse.Namespace) -> None:
    _seed(args)
    table = _load_table(args.table)
    vocab = _vocab_for_checkpoint(args.vocab, args.checkpoint)
    pv = PhonemeVocab()
    model = load_checkpoint(args.checkpoint, vocab, pv).model
    sentences = _read_text(args.input).splitlines()
    corrected = correct_sentences(sentences, model, vocab, pv, table, args.batch_size)
    with _open_output(args.output) as write:
        for line in corrected:
            write.write(line + "\n")


def cmd_dump_attn(args: argparse.Namespace) -> None:
    _seed(args)
    table = _load_table(args.table)
    vocab = _vocab_for_checkpoint(args.vocab, args.checkpoint)
    pv = PhonemeVocab()
    model = load_checkpoint(args.checkpoint, vocab, pv).model
    weights = attention_weights(args.sentence, model, vocab, pv, table)
    manifest = CheckpointManifest(
        kind="attention",
        config=model.config,
        char_vocab_sha256=vocab.sha256(),
        phoneme_vocab_sha256=pv.sha256(),
        metadata={"sentence": args.sentence, "n": len(args.sentence)},
    )
    write_container(args.out, {name: w.numpy() for name, w in weights.items()}, manifest)
    logger.info(f"Wrote {len(weights)} attention maps to {args.out}")


def build_parser() -> DormArgumentParser:
    parser = DormArgumentParser(
        prog="dorm", description="Phonetics-aware Chinese spelling correction"
    )
    parser.add_argument("--log-level", default=None, help="Overrides DORM_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_command(name: str, summary: str, handler, table: bool = True) -> DormArgumentParser:
        sub = commands.add_parser(name, help=summary)
        sub.set_defaults(handler=handler)
        sub.add_argument("--seed", type=int, default=None, help="Defaults to DORM_SEED")
        if table:
            sub.add_argument("--table", default=None, help="Pinyin table file")
        return sub

    sub = add_command("pinyinize", "List initial, final and tone per character", cmd_pinyinize)
    sub.add_argument("text", nargs="?", default=None)
    sub.add_argument("--input", default=None, help="Read text from a file ('-' for stdin)")

    sub = add_command("make-data", "Write the seeded toy corpus", cmd_make_data, table=False)
    sub.add_argument("--out", required=True)
    sub.add_argument("--vocab-size", type=int, default=100)
    sub.add_argument("--examples", type=int, default=64)
    sub.add_argument("--min-len", type=int, default=8)
    sub.add_argument("--max-len", type=int, default=16)

    sub = add_command(
        "pretrain-data", "Cut and corrupt raw text for pretraining", cmd_pretrain_data
    )
    sub.add_argument("inputs", nargs="+")
    sub.add_argument("--out", required=True)
    sub.add_argument(
        "--vocab", default=None, help="Random-branch vocabulary (default: built from inputs)"
    )
    sub.add_argument("--max-fragment", type=int, default=256)

    sub = add_command("train", "Train or pretrain a model", cmd_train)
    sub.add_argument("--train", required=True)
    sub.add_argument("--dev", default=None)
    sub.add_argument("--config", default=None, help="Flat key=value run configuration")
    sub.add_argument("--vocab", default=None)
    sub.add_argument("--out", required=True)
    sub.add_argument("--mode", choices=("pretrain", "finetune"), default=None)
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--batch-size", type=int, default=None)
    sub.add_argument("--lr", type=float, default=None)
    sub.add_argument("--max-steps", type=int, default=None)
    sub.add_argument("--init-checkpoint", default=None)
    sub.add_argument("--resume", action="store_true", help="Continue from OUT/last.npz")

    sub = add_command("eval", "Score predictions against gold corrections", cmd_eval)
    sub.add_argument("--data", required=True, help="Gold dataset (source TAB target)")
    source = sub.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", default=None)
    source.add_argument("--predictions", default=None, help="One corrected line per example")
    sub.add_argument("--vocab", default=None)
    sub.add_argument("--postproc13", action="store_true", help="Ignore predictions at 的/得/地")
    sub.add_argument("--batch-size", type=int, default=32)
    sub.add_argument("--out", default=None, help="Write the key: value report here")

    sub = add_command("correct", "Correct sentences line by line", cmd_correct)
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--vocab", default=None)
    sub.add_argument("--input", default=None, help="Defaults to stdin")
    sub.add_argument("--output", default=None, help="Defaults to stdout")
    sub.add_argument("--batch-size", type=int, default=32)

    sub = add_command("dump-attn", "Write per-layer, per-head attention weights", cmd_dump_attn)
    sub.add_argument("sentence")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--vocab", default=None)
    sub.add_argument("--out", required=True)

    return parser


def main(argv: Sequence[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    init_observability(args.log_level)
    args.handler(args)


def run(argv: Sequence[str] | None = None) -> int:
    """Console entry point: maps module errors to exit codes (1 usage, 2 data, 3 numeric)."""
    try:
        main(argv)
    except DormError as e:
        init_observability()
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        print("\nShutting down gracefully...", file=sys.stderr)
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(run())
