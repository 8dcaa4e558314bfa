"""Shared HTTP plumbing: a retrying request helper used by every backend client.

Retries happen only on transport errors, 429, and 5xx responses, with
exponential backoff (base * 2^attempt).  Anything else surfaces immediately.
"""

from __future__ import annotations

import time

import httpx

from .errors import BackendError

RETRY_STATUS = {429} | set(range(500, 600))


def request_with_retry(
    client: httpx.Client,
    method: str,
    url: str,
    *,
    max_attempts: int = 3,
    backoff_base: float = 0.25,
    sleep=time.sleep,
    **kwargs,
) -> httpx.Response:
    last_error: str | None = None
    for attempt in range(max_attempts):
        try:
            resp = client.request(method, url, **kwargs)
        except httpx.HTTPError as exc:
            last_error = f"transport error: {exc}"
        else:
            if resp.status_code < 400:
                return resp
            if resp.status_code not in RETRY_STATUS:
                raise BackendError(
                    f"{method} {url} failed with status {resp.status_code}: {resp.text[:200]}"
                )
            last_error = f"status {resp.status_code}"
        if attempt < max_attempts - 1:
            sleep(backoff_base * (2**attempt))
    raise BackendError(f"{method} {url} failed after {max_attempts} attempts ({last_error})")
