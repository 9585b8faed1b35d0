import argparse
import logging
import os
import sys

from config import (
    DEFAULT_KS, DEFAULT_MAX_LEN, DEFAULT_MIN_COUNT, DEFAULT_SEED, EVAL_BATCH_SIZE,
    FILE_ENCODING, LOG_FILE, LOG_LEVEL, OUTPUT_DIR, REPORT_FORMATS, REPORT_THEME,
    ConfigError, get_config_summary, load_config_file, parse_bool, parse_float,
    parse_int, parse_ks, resolve_setting,
)
from modules import __version__
from modules.dumps import build_score_dump, evaluate_dump, read_score_dump, write_score_dump
from modules.evaluation import MetricError, RankingConfig, evaluate
from modules.exporters import render_report, write_checkpoint, write_interactions, write_json, write_report, write_split
from modules.extractors import (
    DELIMITERS, ExtractionError, ingest, load_checkpoint, load_manifest, load_split, read_report,
)
from modules.manifest import RunManifest
from modules.models import (
    CLI_ALIASES, CheckpointScorer, ScorerSpec, TrainConfig, gradient_check, train,
)
from modules.networks import ScorerError
from modules.numerics import NumericError
from modules.processors import CorpusError, build_sessions, compare_with_published, k_core_filter, split_leave_one_out, stats
from modules.synth import SynthConfig, generate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

GRADCHECK_TOLERANCE = 1e-4


class CliParser(argparse.ArgumentParser):
    """ArgumentParser que encerra com o código de erro de uso (1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"❌ Erro de uso: {message}\n")
        raise SystemExit(EXIT_USAGE)


def setup_logging(level: str = LOG_LEVEL, log_file: str = LOG_FILE):
    """Configura o sistema de logging"""
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file, encoding=FILE_ENCODING))
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
    return logging.getLogger(__name__)


def _ranking_config(args, file_values) -> RankingConfig:
    try:
        return RankingConfig(
            ks=tuple(resolve_setting("ks", args.ks, file_values, DEFAULT_KS, parse_ks)),
            mask_last=resolve_setting("mask_last", args.mask_last, file_values, False, parse_bool),
            exclude_gt_equals_last=resolve_setting(
                "exclude_gt_equals_last", args.exclude_gt_equals_last, file_values, False, parse_bool
            ),
            mask_history=resolve_setting("mask_history", args.mask_history, file_values, False, parse_bool),
        )
    except MetricError as e:
        raise ConfigError(str(e))


def _manifest_path(path: str) -> str:
    return f"{os.path.splitext(path)[0]}.manifest.json"


def _dataset_id(directory: str) -> str:
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        return ""
    return load_manifest(path, FILE_ENCODING).dataset_id


def cmd_prep(args, file_values) -> int:
    """ingest -> k_core_filter -> build_sessions -> split_leave_one_out -> stats; grava o diretório do conjunto."""
    min_count = resolve_setting("min_count", args.min_count, file_values, DEFAULT_MIN_COUNT, parse_int)
    max_len = resolve_setting("max_len", args.max_len, file_values, DEFAULT_MAX_LEN, parse_int)
    single_pass = resolve_setting("single_pass", args.single_pass, file_values, False, parse_bool)
    fmt = resolve_setting("input_format", args.format, file_values, "tsv")
    if fmt not in DELIMITERS:
        raise ConfigError(f"Formato de entrada inválido: {fmt!r}. Opções: {list(DELIMITERS)}")
    delimiter = resolve_setting("delimiter", args.delimiter, file_values, None)
    has_header = resolve_setting("has_header", args.has_header, file_values, False, parse_bool)
    dataset_id = args.dataset_id or file_values.get("dataset_id", "") or os.path.splitext(os.path.basename(args.input))[0]
    out_dir = args.out or os.path.join(OUTPUT_DIR, dataset_id)

    log = ingest(
        args.input, fmt=fmt, has_header=has_header, delimiter=delimiter,
        user_col=args.user_col, item_col=args.item_col, time_col=args.time_col,
        encoding=FILE_ENCODING,
    )
    if log.empty:
        raise CorpusError(f"Nenhuma interação encontrada em {args.input}")

    filtered = k_core_filter(log, min_count=min_count, single_pass=single_pass)
    if filtered.empty:
        raise CorpusError(f"Nenhuma interação restante após o filtro {min_count}-core")
    store, catalog = build_sessions(filtered)
    if not store.sessions:
        raise CorpusError("Nenhuma sessão com pelo menos 3 interações")
    split = split_leave_one_out(store, max_len=max_len, n_items=catalog.n_items)
    dataset_stats = stats(filtered, catalog)
    compare_with_published(dataset_stats, dataset_id)

    manifest = RunManifest(
        command="prep",
        dataset_id=dataset_id,
        preprocessing={
            "format": fmt, "delimiter": delimiter, "has_header": has_header,
            "columns": [args.user_col, args.item_col, args.time_col],
            "min_count": min_count, "single_pass": single_pass, "max_len": max_len,
        },
        inputs={"log": args.input},
        outputs={"directory": out_dir},
    )
    write_split(split, catalog, dataset_stats, manifest, out_dir, encoding=FILE_ENCODING)
    print(f"✅ Conjunto preparado em {out_dir}: {dataset_stats.display()}")
    return EXIT_OK


def cmd_train(args, file_values) -> int:
    split, _ = load_split(args.dataset, encoding=FILE_ENCODING)
    try:
        spec = ScorerSpec(
            kind=args.model,
            embed_dim=resolve_setting("embed_dim", args.embed_dim, file_values, 64, parse_int),
            hidden_dim=resolve_setting("hidden_dim", args.hidden_dim, file_values, 64, parse_int),
            n_heads=resolve_setting("n_heads", args.n_heads, file_values, 1, parse_int),
            dropout=resolve_setting("dropout", args.dropout, file_values, 0.2, parse_float),
            markov_alpha=resolve_setting("markov_alpha", args.markov_alpha, file_values, 0.01, parse_float),
            max_len=split.max_len,
        )
        config = TrainConfig(
            lr=resolve_setting("lr", args.lr, file_values, 1e-3, parse_float),
            batch_size=resolve_setting("batch_size", args.batch_size, file_values, 256, parse_int),
            max_epochs=resolve_setting("max_epochs", args.max_epochs, file_values, 200, parse_int),
            patience=resolve_setting("patience", args.patience, file_values, 10, parse_int),
            seed=resolve_setting("seed", args.seed, file_values, DEFAULT_SEED, parse_int),
            eval_k_for_stopping=resolve_setting("eval_k", args.eval_k, file_values, 10, parse_int),
        )
    except ScorerError as e:
        raise ConfigError(str(e))

    out = args.out or os.path.join(OUTPUT_DIR, f"{spec.kind}_seed{config.seed}.json")
    checkpoint = train(spec, split, config)
    write_checkpoint(checkpoint, out, encoding=FILE_ENCODING)
    manifest = RunManifest(
        command="train",
        dataset_id=_dataset_id(args.dataset),
        model_spec=spec.to_dict(),
        train_config=config.to_dict(),
        seed=config.seed,
        inputs={"dataset": args.dataset},
        outputs={"checkpoint": out},
    )
    write_json(manifest.to_dict(), _manifest_path(out), encoding=FILE_ENCODING)
    print(
        f"✅ Checkpoint {spec.kind} gravado em {out} "
        f"(épocas={checkpoint.epochs_run}, melhor hit@{config.eval_k_for_stopping}={checkpoint.best_valid_hit:.4f})"
    )
    return EXIT_OK


def cmd_eval(args, file_values) -> int:
    split, _ = load_split(args.dataset, encoding=FILE_ENCODING)
    cases = split.test_cases if args.split == "test" else split.valid_cases
    ranking = _ranking_config(args, file_values)
    batch_size = resolve_setting("batch_size", args.batch_size, file_values, EVAL_BATCH_SIZE, parse_int)

    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint, encoding=FILE_ENCODING)
        if checkpoint.catalog_size != split.n_items:
            raise MetricError(f"Catálogo do checkpoint ({checkpoint.catalog_size}) difere do conjunto ({split.n_items})")
        label = args.label or checkpoint.spec.kind
        report = evaluate(
            CheckpointScorer(checkpoint), cases, ranking,
            batch_size=batch_size, label=label, seed=checkpoint.seed,
        )
        source = {"checkpoint": args.checkpoint}
        seed = checkpoint.seed
    else:
        dump = read_score_dump(args.dump, encoding=FILE_ENCODING)
        label = args.label or os.path.splitext(os.path.basename(args.dump))[0]
        report = evaluate_dump(
            dump, ranking, cases=cases, catalog_size=split.n_items, label=label, batch_size=batch_size,
        )
        source = {"dump": args.dump}
        seed = None

    out = args.out or os.path.join(OUTPUT_DIR, f"report_{label}.json")
    write_report([report], out, "json", encoding=FILE_ENCODING)
    manifest = RunManifest(
        command="eval",
        dataset_id=_dataset_id(args.dataset),
        ranking_config={
            "ks": list(ranking.ks), "mask_last": ranking.mask_last,
            "exclude_gt_equals_last": ranking.exclude_gt_equals_last,
            "mask_history": ranking.mask_history, "split": args.split,
        },
        seed=seed,
        inputs={"dataset": args.dataset, **source},
        outputs={"report": out},
    )
    write_json(manifest.to_dict(), _manifest_path(out), encoding=FILE_ENCODING)
    print(render_report([report], "markdown"))
    return EXIT_OK


def cmd_dump(args, file_values) -> int:
    split, _ = load_split(args.dataset, encoding=FILE_ENCODING)
    cases = split.test_cases if args.split == "test" else split.valid_cases
    checkpoint = load_checkpoint(args.checkpoint, encoding=FILE_ENCODING)
    if checkpoint.catalog_size != split.n_items:
        raise MetricError(f"Catálogo do checkpoint ({checkpoint.catalog_size}) difere do conjunto ({split.n_items})")
    batch_size = resolve_setting("batch_size", args.batch_size, file_values, EVAL_BATCH_SIZE, parse_int)
    dump = build_score_dump(
        CheckpointScorer(checkpoint), cases, checkpoint.catalog_size,
        mode=args.mode, m=args.m, batch_size=batch_size,
    )
    out = args.out or os.path.join(OUTPUT_DIR, f"dump_{checkpoint.spec.kind}_{args.mode}.tsv")
    write_score_dump(dump, out, encoding=FILE_ENCODING)
    print(f"✅ Dump {args.mode} gravado em {out} ({dump.n_rows} casos)")
    return EXIT_OK


def cmd_report(args, file_values) -> int:
    reports = [read_report(path, encoding=FILE_ENCODING) for path in args.reports]
    fmt = resolve_setting("report_format", args.format, file_values, "markdown")
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"Formato de relatório inválido: {fmt!r}. Opções: {list(REPORT_FORMATS)}")
    if args.out:
        theme = resolve_setting("theme", args.theme, file_values, REPORT_THEME)
        write_report(reports, args.out, fmt, theme=theme, encoding=FILE_ENCODING)
        print(f"✅ Relatório gravado em {args.out}")
    elif fmt == "xlsx":
        raise ConfigError("O formato xlsx exige --out")
    else:
        sys.stdout.write(render_report(reports, fmt))
    return EXIT_OK


def cmd_simulate(args, file_values) -> int:
    config = SynthConfig(
        n_users=resolve_setting("users", args.users, file_values, 1000, parse_int),
        n_items=resolve_setting("items", args.items, file_values, 200, parse_int),
        session_len_min=resolve_setting("len_min", args.len_min, file_values, 5, parse_int),
        session_len_max=resolve_setting("len_max", args.len_max, file_values, 20, parse_int),
        p_repeat=resolve_setting("p_repeat", args.p_repeat, file_values, 0.0, parse_float),
        zipf_s=resolve_setting("zipf_s", args.zipf_s, file_values, 1.0, parse_float),
        seed=resolve_setting("seed", args.seed, file_values, DEFAULT_SEED, parse_int),
    )
    out = args.out or os.path.join(OUTPUT_DIR, f"synth_p{config.p_repeat}_seed{config.seed}.tsv")
    write_interactions(generate(config), out, encoding=FILE_ENCODING)
    manifest = RunManifest(command="simulate", preprocessing=config.to_dict(), seed=config.seed, outputs={"log": out})
    write_json(manifest.to_dict(), _manifest_path(out), encoding=FILE_ENCODING)
    print(f"✅ Log sintético gravado em {out}")
    return EXIT_OK


def cmd_gradcheck(args, file_values) -> int:
    seed = resolve_setting("seed", args.seed, file_values, DEFAULT_SEED, parse_int)
    report = gradient_check(args.model, seed=seed, n_items=args.items, prefix_len=args.prefix_len)
    print(
        f"max_relative_error={report.max_relative_error:.3e} "
        f"worst_parameter={report.worst_parameter} eps={report.eps}"
    )
    if report.max_relative_error > GRADCHECK_TOLERANCE:
        logging.error(f"Verificação de gradiente falhou: {report.max_relative_error:.3e} > {GRADCHECK_TOLERANCE}")
        return EXIT_NUMERIC
    print("✅ Gradiente confere")
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="bancada", description="Bancada de avaliação de viés de recência (HRLI@K)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="Arquivo key=value com parâmetros (flags têm precedência)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    prep = sub.add_parser("prep", help="Pré-processa um log bruto em splits leave-one-out")
    prep.add_argument("input", help="Arquivo de interações (user, item, timestamp)")
    prep.add_argument("--out", help="Diretório de saída do conjunto")
    prep.add_argument("--format", choices=["tsv", "csv"], default=None)
    prep.add_argument("--delimiter", default=None, help="Delimitador explícito (ex.: '::')")
    prep.add_argument("--has-header", action="store_true", default=None)
    prep.add_argument("--user-col", type=int, default=0)
    prep.add_argument("--item-col", type=int, default=1)
    prep.add_argument("--time-col", type=int, default=2)
    prep.add_argument("--min-count", type=int, default=None)
    prep.add_argument("--max-len", type=int, default=None)
    prep.add_argument("--single-pass", action="store_true", default=None, help="k-core em uma única rodada")
    prep.add_argument("--dataset-id", default=None, help="Nome do conjunto (beauty, clothing, sports, ml-1m...)")
    prep.set_defaults(handler=cmd_prep)

    tr = sub.add_parser("train", help="Treina um modelo sobre um conjunto preparado")
    tr.add_argument("dataset", help="Diretório gerado pelo prep")
    tr.add_argument("--model", choices=sorted(CLI_ALIASES), required=True)
    tr.add_argument("--out", help="Caminho do checkpoint")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--max-epochs", type=int, default=None)
    tr.add_argument("--patience", type=int, default=None)
    tr.add_argument("--eval-k", type=int, default=None, help="K do Hit de validação na parada antecipada")
    tr.add_argument("--embed-dim", type=int, default=None)
    tr.add_argument("--hidden-dim", type=int, default=None)
    tr.add_argument("--n-heads", type=int, default=None)
    tr.add_argument("--dropout", type=float, default=None)
    tr.add_argument("--markov-alpha", type=float, default=None)
    tr.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="Avalia um checkpoint ou um dump de escores")
    ev.add_argument("dataset", help="Diretório gerado pelo prep")
    source = ev.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint")
    source.add_argument("--dump")
    ev.add_argument("--split", choices=["test", "valid"], default="test")
    ev.add_argument("--ks", default=None, help="Cortes K separados por vírgula (ex.: 5,10)")
    ev.add_argument("--mask-last", action="store_true", default=None)
    ev.add_argument("--exclude-gt-equals-last", action="store_true", default=None)
    ev.add_argument("--mask-history", action="store_true", default=None)
    ev.add_argument("--batch-size", type=int, default=None)
    ev.add_argument("--label", default=None)
    ev.add_argument("--out", help="Relatório JSON")
    ev.set_defaults(handler=cmd_eval)

    dp = sub.add_parser("dump", help="Grava os escores de um checkpoint no formato de troca")
    dp.add_argument("dataset")
    dp.add_argument("--checkpoint", required=True)
    dp.add_argument("--mode", choices=["scores", "topm"], default="scores")
    dp.add_argument("--m", type=int, default=50)
    dp.add_argument("--split", choices=["test", "valid"], default="test")
    dp.add_argument("--batch-size", type=int, default=None)
    dp.add_argument("--out")
    dp.set_defaults(handler=cmd_dump)

    rp = sub.add_parser("report", help="Renderiza relatórios na tabela de resultados")
    rp.add_argument("reports", nargs="+", help="Relatórios JSON gerados pelo eval")
    rp.add_argument("--format", choices=list(REPORT_FORMATS), default=None)
    rp.add_argument("--theme", default=None, help="Tema do xlsx (style_config.THEMES)")
    rp.add_argument("--out")
    rp.set_defaults(handler=cmd_report)

    sm = sub.add_parser("simulate", help="Gera um log sintético com repetição controlada")
    sm.add_argument("--users", type=int, default=None)
    sm.add_argument("--items", type=int, default=None)
    sm.add_argument("--len-min", type=int, default=None)
    sm.add_argument("--len-max", type=int, default=None)
    sm.add_argument("--p-repeat", type=float, default=None)
    sm.add_argument("--zipf-s", type=float, default=None)
    sm.add_argument("--seed", type=int, default=None)
    sm.add_argument("--out")
    sm.set_defaults(handler=cmd_simulate)

    gc = sub.add_parser("gradcheck", help="Confere gradientes por diferenças finitas")
    gc.add_argument("--model", choices=["gru", "attn"], required=True)
    gc.add_argument("--seed", type=int, default=None)
    gc.add_argument("--items", type=int, default=6)
    gc.add_argument("--prefix-len", type=int, default=4)
    gc.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    """Função principal da aplicação"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = setup_logging()

    try:
        logger.info(f"Iniciando comando {args.command}")
        logger.info(f"Configurações carregadas: {get_config_summary()}")
        file_values = load_config_file(args.config)
        return args.handler(args, file_values)

    except KeyboardInterrupt:
        logger.info("Aplicação interrompida pelo usuário")
        print("\n⚠️ Aplicação interrompida pelo usuário")
        return EXIT_USAGE
    except ConfigError as e:
        logger.error(f"Erro de configuração: {e}")
        print(f"❌ Erro de configuração: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        logger.error(f"Falha numérica: {e}")
        print(f"❌ Falha numérica: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ExtractionError, CorpusError, ScorerError, MetricError, OSError) as e:
        logger.error(f"Erro nos dados: {e}")
        print(f"❌ Erro nos dados: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:
        logger.error(f"Erro inesperado: {e}", exc_info=True)
        print(f"❌ Erro inesperado: {e}", file=sys.stderr)
        print(f"Consulte o arquivo {LOG_FILE} para mais detalhes", file=sys.stderr)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
