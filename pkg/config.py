from pydantic_settings import BaseSettings

class Settings(BaseSettings):
    # Rutas de datos (fixtures PROMISE y manifiesto de checksums)
    DATA_DIR: str = "data"
    DATASETS_LOCK: str = "data/datasets.lock"
    TARGETS_FILE: str = "data/published_targets.yaml"

    # Salidas de experimentos
    OUTPUT_DIR: str = "results"
    REPORT_DECIMALS: int = 2

    # Ejecución
    MAX_WORKERS: int = 4
    DEFAULT_SEED: int = 42

    # Configuración de logs
    LOG_LEVEL: str = "INFO"

    class Config:
        env_file = ".env"
        extra = "allow"  # Permitir campos extra para compatibilidad

settings = Settings()
