import argparse
import logging
from pathlib import Path

from commands.experiments import add_experiment_options, build_config
from services.experiment_service import experiment_service

logger = logging.getLogger(__name__)


def dataset_info(args: argparse.Namespace) -> int:
    summary = experiment_service.dataset_info(
        args.path, strict_promise=not args.lenient, record_lock=args.record_lock,
        drop_missing=args.drop_missing, lock_path=args.lock,
    )
    print(summary, end="")
    return 0


def audit_leakage(args: argparse.Namespace) -> int:
    """Auditoría de duplicados entre entrenamiento y prueba, sin ajustar modelos"""
    config = build_config(args)
    table = experiment_service.audit_leakage(config)
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        (path / "leakage.csv").write_text(table, encoding="utf-8")
        logger.info(f"Auditoría escrita en {path / 'leakage.csv'}")
    print(table, end="")
    return 0


def register(subparsers: argparse._SubParsersAction):
    info_parser = subparsers.add_parser("dataset-info", help="Resumen de un archivo de datos")
    info_parser.add_argument("path", help="Archivo .arff o .csv")
    info_parser.add_argument("--lenient", action="store_true",
                             help="Validar solo la cantidad de atributos numéricos")
    info_parser.add_argument("--record-lock", action="store_true", help="Registrar el sha256 en datasets.lock")
    info_parser.add_argument("--lock", default=None, help="Ruta alternativa de datasets.lock")
    info_parser.add_argument("--drop-missing", action="store_true")
    info_parser.set_defaults(handler=dataset_info)

    audit_parser = subparsers.add_parser("audit-leakage", help="Auditar duplicados por pliegue")
    add_experiment_options(audit_parser)
    audit_parser.add_argument("--out", help="Directorio donde escribir leakage.csv")
    audit_parser.set_defaults(handler=audit_leakage)
