import argparse
import asyncio
import logging
from pathlib import Path
from typing import Any, Dict

from pydantic import ValidationError

from config import settings
from errors import ConfigFileError
from schemas import ExperimentConfig
from services.ensemble_service import PIPELINE_NAMES
from services.experiment_service import BASELINES, experiment_service

logger = logging.getLogger(__name__)

DEFAULT_DATASETS = ("CM1", "KC2", "PC1")


def seed_value(text: str) -> int:
    """Semilla entera sin signo de 64 bits"""
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"semilla inválida: {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("la semilla debe estar en [0, 2^64)")
    return value


def add_experiment_options(parser: argparse.ArgumentParser):
    """Opciones compartidas por `run` y `audit-leakage`"""
    parser.add_argument("--config", help="Archivo YAML con la configuración del experimento")
    parser.add_argument("--dataset", help="Archivo .arff o .csv (sin --config)")
    parser.add_argument("--protocol", choices=["paper-faithful", "leakage-free"],
                        help="Orden entre balanceo y partición")
    parser.add_argument("--seed", type=seed_value, help="Semilla maestra (u64)")
    parser.add_argument("--balance", choices=["none", "bootstrap"], help="Balanceo de clases")
    parser.add_argument("--allow-checksum-mismatch", action="store_true",
                        help="Continuar aunque el sha256 no coincida con el esperado")
    parser.add_argument("--drop-missing", action="store_true", help="Descartar filas con '?'")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Configuración efectiva: archivo (si hay) + banderas de la línea de comandos"""
    if args.config:
        content: Dict[str, Any] = experiment_service.load_config(args.config).model_dump()
    elif args.dataset:
        stem = Path(args.dataset).stem.lower()
        models = list(BASELINES) + ["gnb"]
        if f"{stem}_default" in PIPELINE_NAMES:
            models.append(f"{stem}_default")
        content = {"dataset": {"path": args.dataset}, "models": models, "seed": settings.DEFAULT_SEED,
                   "output_dir": settings.OUTPUT_DIR}
    else:
        raise ConfigFileError("se necesita --config o --dataset")

    if args.dataset and args.config:
        content["dataset"] = dict(content["dataset"], path=args.dataset)
    if args.protocol:
        content["protocol"] = args.protocol.replace("-", "_")
    if args.seed is not None:
        content["seed"] = args.seed
    if args.balance:
        content["balance"] = args.balance
    if args.allow_checksum_mismatch:
        content["allow_checksum_mismatch"] = True
    if args.drop_missing:
        content["drop_missing"] = True
    for flag in ("standardize", "meta_insample", "save_models"):
        if getattr(args, flag, False):
            content[flag] = True
    if getattr(args, "model", None):
        content["models"] = args.model
    if getattr(args, "out", None):
        content["output_dir"] = args.out

    try:
        return ExperimentConfig.model_validate(content)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigFileError(f"campo {'.'.join(str(part) for part in first['loc'])}: {first['msg']}")


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    result = asyncio.run(experiment_service.run_experiment(config))
    experiment_service.write_outputs(result, config.output_dir)
    for row in result.comparison.rows:
        if row.class_view == "defective":
            print(f"{row.model_id:<20} accuracy {row.accuracy * 100:6.2f}%  auc {row.auc if row.auc is not None else 'n/a'}")
    return 0


def reproduce_tables(args: argparse.Namespace) -> int:
    written = asyncio.run(experiment_service.reproduce_tables(
        args.datasets, seed=args.seed, data_dir=args.data_dir, out_dir=args.out,
        targets_path=args.targets, standardize=args.standardize, meta_insample=args.meta_insample,
        repetitions=args.repetitions, folds=args.folds,
    ))
    for path in written:
        print(path)
    return 0


def register(subparsers: argparse._SubParsersAction):
    run_parser = subparsers.add_parser("run", help="Ejecutar un experimento")
    add_experiment_options(run_parser)
    run_parser.add_argument("--model", action="append",
                            help="Modelo a evaluar (repetible); reemplaza la lista de la configuración")
    run_parser.add_argument("--out", help="Directorio de salida")
    run_parser.add_argument("--standardize", action="store_true", help="Estandarizar atributos en KNN")
    run_parser.add_argument("--meta-insample", action="store_true",
                            help="Puntajes de etapa 1 dentro de muestra en los apilamientos")
    run_parser.add_argument("--save-models", action="store_true", help="Guardar los modelos ajustados")
    run_parser.set_defaults(handler=run)

    tables_parser = subparsers.add_parser("reproduce-tables", help="Reproducir las tablas comparativas")
    tables_parser.add_argument("--datasets", nargs="+", default=list(DEFAULT_DATASETS),
                               help="Conjuntos a evaluar (CM1 KC2 PC1)")
    tables_parser.add_argument("--data-dir", default=settings.DATA_DIR, help="Directorio con los archivos PROMISE")
    tables_parser.add_argument("--seed", type=seed_value, default=settings.DEFAULT_SEED)
    tables_parser.add_argument("--out", default=settings.OUTPUT_DIR)
    tables_parser.add_argument("--targets", default=settings.TARGETS_FILE, help="Valores publicados (YAML)")
    tables_parser.add_argument("--standardize", action="store_true")
    tables_parser.add_argument("--meta-insample", action="store_true")
    tables_parser.add_argument("--repetitions", type=int, default=None,
                               help="Repeticiones por protocolo (por defecto observations_param = 7)")
    tables_parser.add_argument("--folds", type=int, default=None, help="Pliegues de la validación cruzada (por defecto 10)")
    tables_parser.set_defaults(handler=reproduce_tables)
