import os
import logging
from typing import Any, Dict, Mapping, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from app.models import InputError, MatchConfig

load_dotenv()

ENV_PREFIX = "POSELINK_"

_logger = logging.getLogger("settings")


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """
    MatchConfig fields set through POSELINK_<FIELD> variables (or a .env file).

    Values stay strings; pydantic coerces them when the config is built.
    """
    environ = os.environ if environ is None else environ
    overrides = {}
    for name in MatchConfig.model_fields:
        value = environ.get(ENV_PREFIX + name.upper())
        if value is not None and value.strip() != "":
            overrides[name] = value.strip()
    return overrides


def resolve_config(
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> MatchConfig:
    """Defaults, then environment, then explicit overrides (CLI flags)"""
    values = env_overrides(environ)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = MatchConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"])
        raise InputError(f"invalid setting {field}: {error['msg']}")
    if _logger:
        _logger.debug("resolve_config sources=%s", ",".join(sorted(values)) or "defaults")
    return cfg


def log_level(environ: Optional[Mapping[str, str]] = None) -> str:
    environ = os.environ if environ is None else environ
    return environ.get(ENV_PREFIX + "LOG_LEVEL", "INFO").upper()
