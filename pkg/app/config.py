from __future__ import annotations

import os
from pathlib import Path

# Load .env file
from dotenv import load_dotenv
env_path = Path(__file__).parent.parent / ".env"
load_dotenv(env_path)


def _env(key: str, default: str) -> str:
    return os.getenv(key, default)


def _env_flag(key: str, default: str) -> bool:
    return _env(key, default).lower() in ("1", "true", "yes")


# =============================================================================
# Paths
# =============================================================================
CORPUS_DIR = _env("STEMDIFF_CORPUS_DIR", "./data/corpus")
RUNS_DIR = _env("STEMDIFF_RUNS_DIR", "./runs")


# =============================================================================
# Signal defaults
# =============================================================================
SAMPLE_RATE = int(_env("STEMDIFF_SAMPLE_RATE", "22050"))
CHUNK_SECONDS = float(_env("STEMDIFF_CHUNK_SECONDS", "5.0"))
# "desk" = 64 mels x 256 frames, "riffusion512" = 512 x 512
STFT_PRESET = _env("STEMDIFF_STFT_PRESET", "desk")


# =============================================================================
# Compute
# =============================================================================
# single-threaded + deterministic torch kernels; tests rely on this for
# bit-identical loss sequences and samples
DETERMINISTIC = _env_flag("STEMDIFF_DETERMINISTIC", "false")
TORCH_THREADS = int(_env("STEMDIFF_TORCH_THREADS", "0"))  # 0 = torch default


# =============================================================================
# Instruction LLM (optional, any chat-completion style endpoint)
# =============================================================================
# Leave INSTRUCT_LLM_URL empty to use templates only.
INSTRUCT_LLM_URL = _env("INSTRUCT_LLM_URL", "")
INSTRUCT_LLM_KEY = _env("INSTRUCT_LLM_KEY", "")
INSTRUCT_LLM_MODEL = _env("INSTRUCT_LLM_MODEL", "gpt-3.5-turbo")
INSTRUCT_LLM_TEMPERATURE = float(_env("INSTRUCT_LLM_TEMPERATURE", "0.7"))
INSTRUCT_LLM_TIMEOUT = float(_env("INSTRUCT_LLM_TIMEOUT", "30"))
INSTRUCT_LLM_RETRIES = int(_env("INSTRUCT_LLM_RETRIES", "3"))
INSTRUCT_LLM_MAX_WORKERS = int(_env("INSTRUCT_LLM_MAX_WORKERS", "4"))
INSTRUCT_LLM_CACHE_DIR = _env("INSTRUCT_LLM_CACHE_DIR", "./data/llm_cache")


# =============================================================================
# Tests
# =============================================================================
# long training oracles only run when this is set
RUN_SLOW_TESTS = _env_flag("STEMDIFF_SLOW", "false")
