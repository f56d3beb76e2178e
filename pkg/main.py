import argparse
import json
import logging
import sys
from typing import List, Optional

from config import settings
from commands import datasets, experiments
from errors import ConfigError, DefectLabError

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """Los errores de uso se reportan como errores de configuración (exit 2)"""

    def error(self, message: str):
        raise ConfigError(message)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="defectlab",
        description="🐞 Laboratorio de predicción de defectos sobre los conjuntos PROMISE (CM1, KC2, PC1)",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    experiments.register(subparsers)
    datasets.register(subparsers)
    return parser


def report_error(kind: str, exit_code: int, detail: str) -> int:
    """Una sola línea JSON en stderr por error"""
    sys.stderr.write(json.dumps({"error": kind, "exit_code": exit_code, "detail": detail}, ensure_ascii=False) + "\n")
    return exit_code


def main(argv: Optional[List[str]] = None) -> int:
    # Configurar logging
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except DefectLabError as e:
        logger.error(f"{e.kind}: {e}")
        return report_error(e.kind, e.exit_code, str(e))
    except Exception as e:
        logger.error(f"Error no controlado: {e}")
        return report_error("InternalError", 4, str(e))


if __name__ == "__main__":
    sys.exit(main())
