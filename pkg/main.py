import argparse
import logging
import sys
import time
from typing import Sequence

from dpps_restore.config import EXPERIMENT_NAMES, RunConfig, load_config, validate_config
from dpps_restore.errors import ConfigError, DppsError
from dpps_restore.services import restoration_service

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2


LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


def _configure_cli_logging(level: int = logging.INFO) -> logging.Logger:
    """Root logging on stderr, one line per record tagged with the logger name."""
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    return logging.getLogger("DppsRestore.cli")


logger = _configure_cli_logging()


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpps-restore",
        description="Restauração de problemas inversos lineares por amostragem posterior proximal em difusão.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Arquivo YAML de configuração (padrões embutidos quando omitido).")
    common.add_argument("--seed", type=int, help="Seed de 64 bits; sobrescreve a seed do arquivo.")
    common.add_argument("--out", help="Diretório de saída; sobrescreve output_dir.")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("restore", parents=[common], help="Executa uma restauração e grava estimativa, trace e resumo.")
    experiment = commands.add_parser("experiment", parents=[common], help="Executa um experimento de diagnóstico.")
    experiment.add_argument("name", help=f"Um de: {', '.join(EXPERIMENT_NAMES)}.")
    commands.add_parser("validate-config", parents=[common], help="Valida o arquivo de configuração e sai.")
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else validate_config(RunConfig())
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _report_error(message: str) -> None:
    print(f"erro: {message}", file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    """
    Entrypoint da CLI. Retorna 0 em sucesso, 1 em erro de configuração e 2 em erro de execução.
    """
    args = _build_parser().parse_args(argv)
    started_at = time.perf_counter()
    exit_code = EXIT_RUNTIME_ERROR

    try:
        if args.command == "experiment" and args.name not in EXPERIMENT_NAMES:
            _report_error(f"experimento '{args.name}' desconhecido. Opções válidas: {', '.join(EXPERIMENT_NAMES)}.")
            exit_code = EXIT_CONFIG_ERROR
            return exit_code

        try:
            cfg = _load(args)
        except ConfigError as exc:
            logger.error("Configuração inválida (campo=%s): %s", exc.field, exc)
            _report_error(str(exc))
            exit_code = EXIT_CONFIG_ERROR
            return exit_code

        if args.command == "validate-config":
            logger.info("Configuração válida.")
            exit_code = EXIT_OK
            return exit_code

        try:
            if args.command == "restore":
                restoration_service.restore(cfg, args.out)
            else:
                report = restoration_service.run_experiment(args.name, cfg, args.out)
                logger.info("Resumo do experimento '%s': %s", report.name, report.summary)
        except ConfigError as exc:
            logger.error("Configuração inválida (campo=%s): %s", exc.field, exc)
            _report_error(str(exc))
            exit_code = EXIT_CONFIG_ERROR
            return exit_code
        except DppsError as exc:
            logger.error("Falha na execução: %s", exc, exc_info=True)
            _report_error(str(exc))
            exit_code = EXIT_RUNTIME_ERROR
            return exit_code
        except OSError as exc:
            logger.error("Falha de E/S: %s", exc, exc_info=True)
            _report_error(str(exc))
            exit_code = EXIT_RUNTIME_ERROR
            return exit_code

        exit_code = EXIT_OK
        return exit_code
    finally:
        duration_ms = (time.perf_counter() - started_at) * 1000
        logger.info("FIM COMANDO (command=%s, status=%s, duration_ms=%.2f)", args.command, exit_code, duration_ms)


if __name__ == "__main__":
    sys.exit(main())
