"""
Optional LLM instruction writer.

Talks to any chat-completion style endpoint (OpenAI-compatible JSON). The
templates remain the default path; this client only runs when
INSTRUCT_LLM_URL is set or a config is passed explicitly.
"""
from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import requests
from pydantic import BaseModel, ConfigDict, Field

from app import config
from app.errors import InstructionError, RetryExhaustedError
from app.instruct.templates import EditInstruction, template_instruction

SYSTEM_PROMPT = (
    "You write one-sentence music editing instructions. The user gives a caption "
    "of a song and the name of an instrument stem that is missing from it. Reply "
    "with a single short sentence that starts with 'Add' or 'Insert' and asks for "
    "that stem, in a style that fits the caption. Reply with the sentence only."
)


class LlmClientConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    url: str = ""
    api_key: str = ""
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.7
    timeout: float = Field(30.0, gt=0)
    retries: int = Field(3, ge=1)
    backoff: float = Field(1.0, ge=0)
    max_workers: int = Field(4, ge=1)
    cache_dir: Optional[str] = None

    @classmethod
    def from_env(cls) -> "LlmClientConfig":
        return cls(
            url=config.INSTRUCT_LLM_URL,
            api_key=config.INSTRUCT_LLM_KEY,
            model=config.INSTRUCT_LLM_MODEL,
            temperature=config.INSTRUCT_LLM_TEMPERATURE,
            timeout=config.INSTRUCT_LLM_TIMEOUT,
            retries=config.INSTRUCT_LLM_RETRIES,
            max_workers=config.INSTRUCT_LLM_MAX_WORKERS,
            cache_dir=config.INSTRUCT_LLM_CACHE_DIR or None,
        )


class _Retryable(Exception):
    pass


def build_messages(caption: str, target_stem: str) -> List[Dict[str, str]]:
    return [
        {"role": "system", "content": SYSTEM_PROMPT},
        {"role": "user", "content": f"Caption: {caption}\nMissing stem: {target_stem}"},
    ]


def prompt_key(messages: List[Dict[str, str]], model: str) -> str:
    blob = json.dumps({"model": model, "messages": messages}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _cache_path(cfg: LlmClientConfig, key: str) -> Optional[Path]:
    return Path(cfg.cache_dir) / f"{key}.json" if cfg.cache_dir else None


def _post_once(cfg: LlmClientConfig, messages: List[Dict[str, str]]) -> str:
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"
    payload = {"model": cfg.model, "messages": messages, "temperature": cfg.temperature, "max_tokens": 40}
    try:
        resp = requests.post(cfg.url, headers=headers, json=payload, timeout=cfg.timeout)
    except (requests.Timeout, requests.ConnectionError) as exc:
        raise _Retryable(f"{type(exc).__name__}: {exc}") from exc
    if resp.status_code >= 500:
        raise _Retryable(f"HTTP {resp.status_code}")
    if resp.status_code >= 400:
        raise InstructionError(
            f"LLM endpoint rejected the request with HTTP {resp.status_code}; "
            "check INSTRUCT_LLM_URL, INSTRUCT_LLM_KEY and INSTRUCT_LLM_MODEL"
        )
    try:
        data = resp.json()
        return str(data["choices"][0]["message"]["content"])
    except (ValueError, KeyError, IndexError, TypeError):
        # malformed body; the caller falls back to a template
        return ""


def _chat(cfg: LlmClientConfig, messages: List[Dict[str, str]]) -> str:
    last_error = ""
    for attempt in range(cfg.retries):
        try:
            return _post_once(cfg, messages)
        except _Retryable as exc:
            last_error = str(exc)
            print(f"[LLM] attempt {attempt + 1}/{cfg.retries} failed: {last_error}")
            if attempt + 1 < cfg.retries and cfg.backoff:
                time.sleep(cfg.backoff * 2 ** attempt)
    raise RetryExhaustedError(cfg.retries, last_error)


def _clean(reply: str) -> str:
    lines = [ln.strip() for ln in reply.strip().splitlines() if ln.strip()]
    return lines[0].strip().strip("\"'").strip() if lines else ""


def llm_instruction(caption: str, target_stem: str, client_config: Optional[LlmClientConfig] = None,
                    tags: Sequence[str] = (), seed: int = 0) -> EditInstruction:
    """
    Ask the endpoint for an instruction. Replies that fail validation are
    replaced by the template instruction with source="fallback".
    """
    cfg = client_config or LlmClientConfig.from_env()
    if not cfg.url:
        raise InstructionError("INSTRUCT_LLM_URL is not set; use template instructions or configure an endpoint")

    messages = build_messages(caption, target_stem)
    cache = _cache_path(cfg, prompt_key(messages, cfg.model))
    cached = cache is not None and cache.exists()
    if cached:
        reply = json.loads(cache.read_text(encoding="utf-8"))["reply"]
    else:
        reply = _chat(cfg, messages)

    try:
        instruction = EditInstruction(_clean(reply), target_stem, tuple(tags), "llm")
    except InstructionError as exc:
        print(f"[LLM] reply rejected ({exc}); using template")
        return template_instruction(target_stem, tags, seed, source="fallback")

    # only accepted replies are cached; a rejected one is asked again next time
    if cache is not None and not cached:
        cache.parent.mkdir(parents=True, exist_ok=True)
        cache.write_text(json.dumps({"reply": reply}), encoding="utf-8")
    return instruction


def llm_instructions(captions: Sequence[str], target_stem: str,
                     client_config: Optional[LlmClientConfig] = None,
                     tags: Sequence[Sequence[str]] | None = None) -> List[EditInstruction]:
    """Bounded concurrent version of llm_instruction; output order follows input."""
    cfg = client_config or LlmClientConfig.from_env()
    tags = tags if tags is not None else [()] * len(captions)
    with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
        futures = [
            pool.submit(llm_instruction, caption, target_stem, cfg, tag, i)
            for i, (caption, tag) in enumerate(zip(captions, tags))
        ]
        return [f.result() for f in futures]
