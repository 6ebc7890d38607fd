"""Minimal OpenAI-compatible chat-completions client.

Sends a messages array, consumes the single first choice, and raises
:class:`TransportError` for anything that prevents getting a text reply.
Retry policy lives with the callers (task generation, judging), not here.
"""

from __future__ import annotations

import json
import os

import requests


class TransportError(RuntimeError):
    """The endpoint could not be reached or returned an unusable response."""


class ChatCompletionsClient:
    """Client for ``POST {endpoint_url}/v1/chat/completions``."""

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        api_key_env: str = "LIFT_GENERATOR_API_KEY",
        timeout: float = 120.0,
    ):
        self.endpoint_url = endpoint_url.rstrip("/")
        self.model_name = model_name
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(
        self,
        messages: list[dict],
        temperature: float = 0.7,
        max_tokens: int = 1024,
    ) -> str:
        headers = {}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model_name,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        try:
            resp = requests.post(
                f"{self.endpoint_url}/v1/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat request failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"chat endpoint returned HTTP {resp.status_code}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat response body: {exc}") from exc
        if not isinstance(content, str):
            raise TransportError("chat response content is not a string")
        return content


class EchoChatClient:
    """Offline generator substitute: extractive QAs straight from the prompt.

    Reads the target sentence and the requested pair count out of the user
    message and answers with that sentence verbatim, so full runs work with
    no network and deterministic content. Useful for smoke runs and the
    mock-stack evaluation path.
    """

    _SENTENCE_MARKER = "The last part of the paragraph:\n"
    _COUNT_MARKER = "Generate "

    def complete(
        self,
        messages: list[dict],
        temperature: float = 0.7,
        max_tokens: int = 1024,
    ) -> str:
        del temperature, max_tokens
        user = next((m["content"] for m in messages if m.get("role") == "user"), "")
        try:
            after = user.split(self._SENTENCE_MARKER, 1)[1]
            sentence = after.split("\n\n" + self._COUNT_MARKER, 1)[0].strip()
            count = int(after.rsplit(self._COUNT_MARKER, 1)[1].split()[0])
        except (IndexError, ValueError) as exc:
            raise TransportError(f"echo generator could not read the prompt: {exc}") from exc
        pairs = [
            {
                "question": f"What does this part of the text state (form {i + 1})?",
                "answer": sentence,
            }
            for i in range(count)
        ]
        return json.dumps({"qa_list": pairs}, ensure_ascii=False)
