"""Application settings and configuration."""

from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables."""

    # Application Configuration
    log_level: str = Field(default="INFO", description="Logging level")
    logging_config: str = Field(
        default="config/logging.yaml",
        description="Path to the YAML logging configuration",
    )
    output_dir: str = Field(default="./data/runs", description="Experiment output directory")

    # Fog repository
    fog_dir: str = Field(default="./data/fog", description="Fog repository root directory")
    fog_url: Optional[str] = Field(
        default=None, description="Base URL of an HTTP fog repository (real mode)"
    )
    fog_timeout_s: float = Field(default=5.0, description="HTTP fog request timeout in seconds")
    fog_server_host: str = Field(default="localhost", description="Fog server host")
    fog_server_port: int = Field(default=8080, description="Fog server port")

    model_config = SettingsConfigDict(
        env_prefix="EDGE_MINER_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# Global settings instance
settings = Settings()
