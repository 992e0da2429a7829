from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Application
    APP_NAME: str = "QFractal"
    ENVIRONMENT: str = "development"
    LOG_LEVEL: str = "INFO"

    # Output
    OUTPUT_DIR: str = "./runs"
    CSV_FLOAT_FORMAT: str = "%.17g"  # 17 significant digits round-trips a float64
    WRITE_CARPET_BINARY: bool = False

    # Parallelism
    THREADS: int = 1

    # Grid kernel: rows per chunk = GRID_CHUNK_ELEMENTS // terms
    GRID_CHUNK_ELEMENTS: int = 1 << 22

    class Config:
        env_file = ".env"
        case_sensitive = True


settings = Settings()
